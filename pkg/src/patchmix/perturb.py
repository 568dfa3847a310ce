"""Geometric perturbations for robustness sweeps: jitter, axis rotation,
uniform scaling, and uniform point dropping."""

from __future__ import annotations

import math

import numpy as np

from .core import COORD_DTYPE, PointCloud
from .errors import ParameterError

TRANSFORMS = ("jitter", "rotation", "scale", "drop")


def jitter(cloud: PointCloud, sigma: float, rng: np.random.Generator) -> PointCloud:
    """Add isotropic Gaussian noise of standard deviation sigma per coordinate."""
    if not (np.isfinite(sigma) and sigma >= 0):
        raise ParameterError(f"sigma must be non-negative, got {sigma}")
    noise = rng.normal(0.0, sigma, size=cloud.points.shape)
    return cloud.with_points((cloud.points.astype(np.float64) + noise).astype(COORD_DTYPE))


def rotation_matrix(axis: str, angle_deg: float) -> np.ndarray:
    if axis not in ("x", "y", "z"):
        raise ParameterError(f"axis must be x, y or z, got {axis!r}")
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def rotate(cloud: PointCloud, axis: str, angle_deg: float) -> PointCloud:
    """Rotate about one coordinate axis by a fixed angle (degrees)."""
    r = rotation_matrix(axis, angle_deg)
    return cloud.with_points((cloud.points.astype(np.float64) @ r.T).astype(COORD_DTYPE))


def random_rotation(cloud: PointCloud, axis: str, rng: np.random.Generator,
                    max_angle_deg: float = 30.0) -> PointCloud:
    """Rotate about one axis by an angle uniform in [-max_angle, +max_angle]."""
    if not (np.isfinite(max_angle_deg) and max_angle_deg >= 0):
        raise ParameterError(f"max angle must be non-negative, got {max_angle_deg}")
    angle = float(rng.uniform(-max_angle_deg, max_angle_deg))
    return rotate(cloud, axis, angle)


def scale(cloud: PointCloud, factor: float) -> PointCloud:
    """Scale all coordinates uniformly by a positive factor."""
    if not (np.isfinite(factor) and factor > 0):
        raise ParameterError(f"scale factor must be positive, got {factor}")
    return cloud.with_points((cloud.points.astype(np.float64) * factor).astype(COORD_DTYPE))


def drop_points(cloud: PointCloud, ratio: float, rng: np.random.Generator) -> PointCloud:
    """Remove a uniform random fraction of points, keeping ceil((1-ratio)*N).

    Survivors keep their original relative order.
    """
    if not (np.isfinite(ratio) and 0.0 <= ratio < 1.0):
        raise ParameterError(f"drop ratio must lie in [0, 1), got {ratio}")
    n = cloud.n_points
    keep = math.ceil((1.0 - ratio) * n)
    idx = np.sort(rng.choice(n, size=keep, replace=False))
    return cloud.with_points(cloud.points[idx])
