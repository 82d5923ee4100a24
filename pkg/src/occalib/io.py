"""Plain-text readers and writers for every artifact the pipeline exchanges.

Reals are written with ``%.17g`` so a write/read round trip is bit-exact.
Readers raise :class:`FormatError` carrying the file and 1-based line number.
"""

from __future__ import annotations

import math
from dataclasses import fields
from pathlib import Path

import numpy as np

from .edge2d import DIRECTIONS, DirectedEdgeSet2D, Direction
from .edge3d import DirectedEdgeSet3D
from .geom import PinholeCamera, RigidTransform
from .match import REASONS, AssociationRecord
from .optim import CalibrationResult, TraceRecord
from .scene import DepthImage, OrganizedScan, SceneSpec

STATUSES = ("converged", "insufficient_features", "diverged")


class FormatError(ValueError):
    """Malformed input file; ``line`` is 1-based, 0 when not line-specific."""

    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        self.message = message
        super().__init__(f"{self.path}:{line}: {message}")


def fmt(x) -> str:
    return "%.17g" % x


def _write(path, lines) -> None:
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _lines(path):
    """Non-blank, non-comment lines as ``(line_number, text)``."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise
    except UnicodeDecodeError as e:
        raise FormatError(path, 0, f"not UTF-8 text ({e.reason})") from None
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if s and not s.startswith("#"):
            yield i, s


def _reals(path, lineno, parts, n=None):
    if n is not None and len(parts) != n:
        raise FormatError(path, lineno, f"expected {n} fields, got {len(parts)}")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise FormatError(path, lineno, f"non-numeric field in {','.join(parts)!r}") from None
    if not all(math.isfinite(v) for v in vals):
        raise FormatError(path, lineno, "non-finite value")
    return vals


def _int(path, lineno, s):
    try:
        return int(s)
    except ValueError:
        raise FormatError(path, lineno, f"expected an integer, got {s!r}") from None


def _direction(path, lineno, s):
    try:
        return Direction.from_code(s)
    except ValueError as e:
        raise FormatError(path, lineno, str(e)) from None


def _key_values(path):
    for lineno, s in _lines(path):
        key, sep, value = s.partition("=")
        if not sep:
            raise FormatError(path, lineno, f"expected key=value, got {s!r}")
        yield lineno, key.strip(), value.strip()


# extrinsic and camera

def transform_lines(T: RigidTransform) -> list:
    m = np.hstack([T.rotation, T.translation[:, None]])
    return [" ".join(fmt(v) for v in row) for row in m]


def write_extrinsic(path, T: RigidTransform) -> None:
    _write(path, transform_lines(T))


def _parse_transform(path, tokens):
    lineno = tokens[0][0]
    vals = [_reals(path, i, [t])[0] for i, t in tokens]
    if len(vals) != 12:
        raise FormatError(path, lineno, f"expected 12 reals for a 3x4 transform, got {len(vals)}")
    m = np.array(vals).reshape(3, 4)
    T = RigidTransform(m[:, :3], m[:, 3])
    if not T.is_valid(1e-9):
        raise FormatError(path, lineno, "rotation block is not orthonormal with determinant 1")
    return T


def read_extrinsic(path) -> RigidTransform:
    tokens = [(i, t) for i, s in _lines(path) for t in s.split()]
    if not tokens:
        raise FormatError(path, 0, "empty extrinsic file")
    return _parse_transform(path, tokens)


CAMERA_KEYS = ("fx", "fy", "cx", "cy", "width", "height")


def write_camera(path, cam: PinholeCamera) -> None:
    _write(path, [f"{k}={fmt(getattr(cam, k)) if k[0] in 'fc' else getattr(cam, k)}" for k in CAMERA_KEYS])


def read_camera(path) -> PinholeCamera:
    vals, last = {}, 0
    for lineno, key, value in _key_values(path):
        last = lineno
        if key not in CAMERA_KEYS:
            raise FormatError(path, lineno, f"unknown camera key {key!r}")
        if key in vals:
            raise FormatError(path, lineno, f"duplicate camera key {key!r}")
        vals[key] = _int(path, lineno, value) if key in ("width", "height") else _reals(path, lineno, [value])[0]
    missing = [k for k in CAMERA_KEYS if k not in vals]
    if missing:
        raise FormatError(path, 0, f"missing camera keys: {', '.join(missing)}")
    try:
        return PinholeCamera(**vals)
    except ValueError as e:
        raise FormatError(path, last, str(e)) from None


# scan and depth

def write_scan(path, scan: OrganizedScan) -> None:
    lines = [f"{scan.rings},{scan.cols}"]
    for r, c in zip(*np.nonzero(scan.valid)):
        x, y, z = scan.points[r, c]
        lines.append(f"{r},{c},{fmt(x)},{fmt(y)},{fmt(z)}")
    _write(path, lines)


def read_scan(path) -> OrganizedScan:
    it = iter(_lines(path))
    try:
        lineno, header = next(it)
    except StopIteration:
        raise FormatError(path, 0, "empty scan file") from None
    parts = header.split(",")
    if len(parts) != 2:
        raise FormatError(path, lineno, "header must be 'rings,cols'")
    rings, cols = (_int(path, lineno, p) for p in parts)
    if rings < 1 or cols < 1:
        raise FormatError(path, lineno, "rings and cols must be positive")
    points = np.full((rings, cols, 3), np.nan)
    valid = np.zeros((rings, cols), dtype=bool)
    for lineno, s in it:
        parts = s.split(",")
        if len(parts) != 5:
            raise FormatError(path, lineno, f"expected 'ring,col,x,y,z', got {len(parts)} fields")
        r, c = _int(path, lineno, parts[0]), _int(path, lineno, parts[1])
        if not (0 <= r < rings and 0 <= c < cols):
            raise FormatError(path, lineno, f"cell ({r},{c}) outside {rings}x{cols} grid")
        if valid[r, c]:
            raise FormatError(path, lineno, f"duplicate cell ({r},{c})")
        p = _reals(path, lineno, parts[2:])
        if not any(p):
            raise FormatError(path, lineno, "return at the sensor origin")
        points[r, c] = p
        valid[r, c] = True
    return OrganizedScan(points, valid)


def write_depth(path, depth: DepthImage) -> None:
    d = np.where(depth.valid, depth.depth, -1.0)
    _write(path, [f"{depth.width},{depth.height}"] + [",".join(fmt(v) for v in row) for row in d])


def read_depth(path) -> DepthImage:
    rows = list(_lines(path))
    if not rows:
        raise FormatError(path, 0, "empty depth file")
    lineno, header = rows[0]
    parts = header.split(",")
    if len(parts) != 2:
        raise FormatError(path, lineno, "header must be 'width,height'")
    width, height = (_int(path, lineno, p) for p in parts)
    if len(rows) - 1 != height:
        raise FormatError(path, rows[-1][0], f"expected {height} depth rows, got {len(rows) - 1}")
    out = np.empty((height, width))
    for v, (lineno, s) in enumerate(rows[1:]):
        out[v] = _reals(path, lineno, s.split(","), width)
        bad = (out[v] <= 0) & (out[v] != -1)
        if bad.any():
            raise FormatError(path, lineno, "depths must be positive or -1")
    out[out == -1] = np.nan
    return DepthImage(out)


# edges

def write_edges2d(path, edges: DirectedEdgeSet2D) -> None:
    _write(path, [f"{u},{v},{d.code}" for d in DIRECTIONS for u, v in edges[d]])


def read_edges2d(path, cam: PinholeCamera | None = None) -> DirectedEdgeSet2D:
    pts = {d: [] for d in DIRECTIONS}
    seen = set()
    for lineno, s in _lines(path):
        parts = s.split(",")
        if len(parts) != 3:
            raise FormatError(path, lineno, f"expected 'u,v,D', got {len(parts)} fields")
        u, v = _int(path, lineno, parts[0]), _int(path, lineno, parts[1])
        d = _direction(path, lineno, parts[2])
        if cam is not None and not (0 <= u < cam.width and 0 <= v < cam.height):
            raise FormatError(path, lineno, f"pixel ({u},{v}) outside the {cam.width}x{cam.height} image")
        if (u, v, d) in seen:
            raise FormatError(path, lineno, f"duplicate feature ({u},{v},{d.code})")
        seen.add((u, v, d))
        pts[d].append((u, v))
    return DirectedEdgeSet2D({d: np.array(p, dtype=np.int64).reshape(-1, 2) for d, p in pts.items()})


def write_edges3d(path, features: DirectedEdgeSet3D) -> None:
    _write(path, [f"{fmt(x)},{fmt(y)},{fmt(z)},{d.code}" for d in DIRECTIONS for x, y, z in features[d]])


def read_edges3d(path) -> DirectedEdgeSet3D:
    pts = {d: [] for d in DIRECTIONS}
    for lineno, s in _lines(path):
        parts = s.split(",")
        if len(parts) != 4:
            raise FormatError(path, lineno, f"expected 'x,y,z,D', got {len(parts)} fields")
        pts[_direction(path, lineno, parts[3])].append(_reals(path, lineno, parts[:3]))
    return DirectedEdgeSet3D({d: np.array(p, dtype=np.float64).reshape(-1, 3) for d, p in pts.items()})


# association, trace and result

MATCH_HEADER = "x,y,z,D,u_proj,v_proj,c_u,c_v,n_u,n_v,residual_px,accepted,reason"


def write_match_dump(path, record: AssociationRecord) -> None:
    lines = [MATCH_HEADER]
    res = record.residuals
    for i in range(len(record.points)):
        vals = [*record.points[i], *record.uv[i], *record.centers[i], *record.normals[i], res[i]]
        x, y, z, u, v, cu, cv, nu, nv, r = (fmt(a) for a in vals)
        code = Direction(record.directions[i]).code
        ok = int(record.accepted[i])
        lines.append(f"{x},{y},{z},{code},{u},{v},{cu},{cv},{nu},{nv},{r},{ok},{REASONS[record.reasons[i]]}")
    _write(path, lines)


TRACE_HEADER = "iter,d_c_px,pairs,mean_abs_residual_px"


def write_trace(path, trace) -> None:
    _write(path, [TRACE_HEADER] + [
        f"{t.iteration},{fmt(t.d_c)},{t.pairs},{fmt(t.mean_abs_residual)}" for t in trace
    ])


def read_trace(path) -> list:
    out = []
    for lineno, s in _lines(path):
        if s == TRACE_HEADER:
            continue
        parts = s.split(",")
        if len(parts) != 4:
            raise FormatError(path, lineno, f"expected '{TRACE_HEADER}', got {len(parts)} fields")
        try:
            mean = float(parts[3])
        except ValueError:
            raise FormatError(path, lineno, f"non-numeric residual {parts[3]!r}") from None
        out.append(TraceRecord(_int(path, lineno, parts[0]), _reals(path, lineno, [parts[1]])[0],
                               _int(path, lineno, parts[2]), mean))
    return out


def write_result(path, result: CalibrationResult) -> None:
    _write(path, transform_lines(result.final_transform) + [f"status={result.status}"])


def read_result(path):
    """Final extrinsic and status string."""
    tokens, status = [], None
    for lineno, s in _lines(path):
        if s.startswith("status="):
            status = s.partition("=")[2].strip()
            if status not in STATUSES:
                raise FormatError(path, lineno, f"unknown status {status!r}")
        else:
            tokens.extend((lineno, t) for t in s.split())
    if status is None:
        raise FormatError(path, 0, "missing status line")
    if not tokens:
        raise FormatError(path, 0, "missing extrinsic")
    return _parse_transform(path, tokens), status


# scene description

def write_scene_spec(path, spec: SceneSpec) -> None:
    lines = [f"ground_z={fmt(spec.ground_z)}", f"seed={spec.seed}"]
    if spec.preset:
        lines.append(f"preset={spec.preset}")
    for b in spec.boxes:
        lines.append("box=" + ",".join(fmt(v) for v in b))
    for c in spec.cylinders:
        lines.append("cylinder=" + ",".join(fmt(v) for v in c))
    _write(path, lines)


def read_scene_spec(path) -> SceneSpec:
    """``ground_z``, ``seed``, ``preset`` plus repeated ``box=cx,cy,cz,ex,ey,ez`` and ``cylinder=cx,cy,cz,r,h``."""
    spec, seen = SceneSpec(), set()
    for lineno, key, value in _key_values(path):
        if key in ("ground_z", "seed", "preset"):
            if key in seen:
                raise FormatError(path, lineno, f"duplicate key {key!r}")
            seen.add(key)
        if key == "ground_z":
            spec.ground_z = _reals(path, lineno, [value])[0]
        elif key == "seed":
            spec.seed = _int(path, lineno, value)
        elif key == "preset":
            spec.preset = value or None
        elif key == "box":
            v = _reals(path, lineno, value.split(","), 6)
            if min(v[3:]) <= 0:
                raise FormatError(path, lineno, "box extents must be positive")
            spec.boxes.append(tuple(v))
        elif key == "cylinder":
            v = _reals(path, lineno, value.split(","), 5)
            if v[3] <= 0 or v[4] <= 0:
                raise FormatError(path, lineno, "cylinder radius and height must be positive")
            spec.cylinders.append(tuple(v))
        else:
            raise FormatError(path, lineno, f"unknown scene key {key!r}")
    return spec


# flat key=value configuration

def _coerce(path, lineno, key, value, kind):
    if kind is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise FormatError(path, lineno, f"{key}: expected a boolean, got {value!r}")
    if kind is int:
        return _int(path, lineno, value)
    if kind is float:
        return _reals(path, lineno, [value])[0]
    return value


def read_config(path, defaults) -> dict:
    """Overrides of the dataclass instance ``defaults``; unknown keys and repeats are errors."""
    kinds = {f.name: type(getattr(defaults, f.name)) for f in fields(defaults)}
    out = {}
    for lineno, key, value in _key_values(path):
        if key not in kinds:
            raise FormatError(path, lineno, f"unknown key {key!r}")
        if key in out:
            raise FormatError(path, lineno, f"duplicate key {key!r}")
        out[key] = _coerce(path, lineno, key, value, kinds[key])
    return out


def read_sweep_config(path, base):
    """Global ``key=value`` defaults for every scenario, plus repeated ``scenario=`` lines.

    A scenario line is ``scenario=name,lidar,missing,sigma_r,sigma_a``. Keys
    are the fields of ``base`` (a Scenario). Returns ``(defaults, rows)``
    where rows is a list of ``(line_number, name, lidar, missing, sigma_r, sigma_a)``.
    """
    kinds = {f.name: type(getattr(base, f.name)) for f in fields(base)}
    settable = set(kinds) - {"name", "lidar", "missing", "sigma_r", "sigma_a"}
    defaults, rows = {}, []
    for lineno, key, value in _key_values(path):
        if key == "scenario":
            parts = [p.strip() for p in value.split(",")]
            if len(parts) != 5:
                raise FormatError(path, lineno, "scenario must be 'name,lidar,missing,sigma_r,sigma_a'")
            rows.append((lineno, parts[0], parts[1], *_reals(path, lineno, parts[2:])))
        elif key in settable:
            if key in defaults:
                raise FormatError(path, lineno, f"duplicate key {key!r}")
            defaults[key] = _coerce(path, lineno, key, value, kinds[key])
        else:
            raise FormatError(path, lineno, f"unknown key {key!r}")
    return defaults, rows
