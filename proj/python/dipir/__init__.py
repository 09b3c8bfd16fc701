"""Differentiable object insertion: lighting and tone recovery by gradient descent."""

from ._dipir import (
    GuidanceUnavailable,
    InvalidArgument,
    LoadError,
    NumericalFailure,
    ObjectNotVisible,
    __version__,
    cli,
    envmap_bake,
    fuse,
    fusion_progress,
    gradcheck,
    optimize,
    read_pfm,
    read_png,
    render,
    rmse,
    si_rmse,
    ssim,
    strength_schedule,
    toy_scene,
    write_pfm,
    write_png,
)

__all__ = [
    "GuidanceUnavailable",
    "InvalidArgument",
    "LoadError",
    "NumericalFailure",
    "ObjectNotVisible",
    "__version__",
    "cli",
    "envmap_bake",
    "fuse",
    "fusion_progress",
    "gradcheck",
    "optimize",
    "read_pfm",
    "read_png",
    "render",
    "rmse",
    "si_rmse",
    "ssim",
    "strength_schedule",
    "toy_scene",
    "write_pfm",
    "write_png",
]
