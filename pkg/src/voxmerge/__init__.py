"""Supervoxel agglomeration with hand-designed and learned 3D features."""

__version__ = "0.1.0"
