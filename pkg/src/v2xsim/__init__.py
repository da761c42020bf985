"""Deterministic V2X collaborative perception and closed-loop driving simulator."""

from .grids import FlowField, Grid, Mask, ShapeError, affine_warp, apply_mask, channel_max, gaussian_filter

__version__ = "0.1.0"

__all__ = [
    "FlowField", "Grid", "Mask", "ShapeError",
    "affine_warp", "apply_mask", "channel_max", "gaussian_filter",
    "__version__",
]
