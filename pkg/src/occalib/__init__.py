"""Target-less camera-LiDAR extrinsic calibration from directed occlusion edges."""

__version__ = "0.1.0"
