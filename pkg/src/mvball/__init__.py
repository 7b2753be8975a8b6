"""Multi-camera 3D ball localization toolkit.

Per-camera prefiltering and detection, voting-based multi-view
triangulation, sparse bundle adjustment, reproject-and-refine recovery,
detect/track scheduling, a synthetic scene simulator, and detection /
3D evaluation metrics.
"""

__version__ = "0.1.0"
