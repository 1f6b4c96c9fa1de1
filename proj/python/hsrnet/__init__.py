"""Crowd density estimation toolkit.

Density maps are float32 (h, w) arrays, images float32 (3, h, w) in [0, 1],
and annotations float64 (n, 2) arrays of (x, y) head positions.
"""

from ._core import (
    Model,
    apply_roi,
    evaluate,
    game,
    knn_mean_distance,
    mae_mse,
    make_density,
    make_density_fixed,
    make_pyramid,
    read_dmap,
    synth_dataset,
    train,
    write_dmap,
)

__all__ = [
    "Model",
    "apply_roi",
    "evaluate",
    "game",
    "knn_mean_distance",
    "mae_mse",
    "make_density",
    "make_density_fixed",
    "make_pyramid",
    "read_dmap",
    "synth_dataset",
    "train",
    "write_dmap",
]
