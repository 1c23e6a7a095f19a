#!/usr/bin/env python3
"""
Test phantoms
Shepp-Logan and geometric-shape images on [-1, 1]^2 with ground-truth label
maps, and the Gaussian noise model for simulated data.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from admm import LabelMap, extract_labels
from operators import DataVolume

logger = logging.getLogger(__name__)

NOISE_GENERATOR = "PCG64"

# Columns: semi-axis along x, semi-axis along y, center x, center y, rotation in degrees
SHEPP_LOGAN_ELLIPSES = np.array([
    [0.69, 0.92, 0.0, 0.0, 0.0],
    [0.6624, 0.874, 0.0, -0.0184, 0.0],
    [0.11, 0.31, 0.22, 0.0, -18.0],
    [0.16, 0.41, -0.22, 0.0, 18.0],
    [0.21, 0.25, 0.0, 0.35, 0.0],
    [0.046, 0.046, 0.0, 0.1, 0.0],
    [0.046, 0.046, 0.0, -0.1, 0.0],
    [0.046, 0.023, -0.08, -0.605, 0.0],
    [0.023, 0.023, 0.0, -0.605, 0.0],
    [0.023, 0.046, 0.06, -0.605, 0.0],
])

SHEPP_LOGAN_GREYS = {
    "original": [1.0, -0.98, -0.02, -0.02, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01],
    "modified": [1.0, -0.8, -0.2, -0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1],
}

DISK_CENTER = (-0.4, 0.4)
DISK_RADIUS = 0.3
DISK_VALUE = 1.0
RECTANGLE_CENTER = (0.35, 0.35)
RECTANGLE_HALF_SIZE = (0.25, 0.15)
RECTANGLE_VALUE = 0.6
POLYGON_CENTER = (0.0, -0.45)
POLYGON_RADIUS = 0.3
POLYGON_CORNERS = 5
POLYGON_ROTATION = np.deg2rad(10.0)
POLYGON_VALUE = 0.3


@dataclass
class Phantom:
    name: str
    image: np.ndarray
    ground_truth: LabelMap

    @property
    def levels(self) -> List[float]:
        """Distinct gray values of the image."""
        return np.unique(self.image).tolist()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "shape": list(self.image.shape),
            "segments": self.ground_truth.count,
            "levels": self.levels,
        }


def pixel_centers(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Coordinates of the pixel centers of an n x n grid on [-1, 1]^2, y pointing up."""
    step = 2.0 / n
    coords = -1.0 + (np.arange(n) + 0.5) * step
    x, y = np.meshgrid(coords, coords[::-1])
    return x, y


def shepp_logan(n: int, modified: bool = True) -> Phantom:
    """
    Render the ten-ellipse Shepp-Logan phantom.

    Args:
        n: side length in pixels (at least 32)
        modified: use the high-contrast gray values

    Returns:
        Phantom whose ground truth is the set of connected constant regions
    """
    if n < 32:
        raise ValueError(f"Shepp-Logan phantom needs n >= 32, got {n}")
    variant = "modified" if modified else "original"
    x, y = pixel_centers(n)
    image = np.zeros((n, n))
    for (a, b, x0, y0, angle), grey in zip(SHEPP_LOGAN_ELLIPSES, SHEPP_LOGAN_GREYS[variant]):
        theta = np.deg2rad(angle)
        c, s = np.cos(theta), np.sin(theta)
        dx, dy = x - x0, y - y0
        inside = ((dx * c + dy * s) / a) ** 2 + ((dy * c - dx * s) / b) ** 2 <= 1
        image[inside] += grey
    # accumulated sums of the table entries must compare equal
    image = np.round(image, 12) + 0.0
    labels = extract_labels(image, 0.0)
    logger.info(f"Rendered {variant} Shepp-Logan phantom {n}x{n} with {labels.count} segments")
    return Phantom(f"shepp-logan-{variant}", image, labels)


def _polygon_vertices() -> np.ndarray:
    angles = POLYGON_ROTATION + 2 * np.pi * np.arange(POLYGON_CORNERS) / POLYGON_CORNERS
    cx, cy = POLYGON_CENTER
    return np.stack([cx + POLYGON_RADIUS * np.cos(angles), cy + POLYGON_RADIUS * np.sin(angles)], axis=1)


def _inside_convex_polygon(x: np.ndarray, y: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Vertices in counterclockwise order; points on an edge count as inside."""
    inside = np.ones(x.shape, dtype=bool)
    for (x1, y1), (x2, y2) in zip(vertices, np.roll(vertices, -1, axis=0)):
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        inside &= cross >= 0
    return inside


def shape_areas() -> Dict[str, float]:
    """Analytic areas of the geometric shapes in [-1, 1]^2 units."""
    hw, hh = RECTANGLE_HALF_SIZE
    return {
        "disk": np.pi * DISK_RADIUS ** 2,
        "rectangle": 4 * hw * hh,
        "polygon": 0.5 * POLYGON_CORNERS * POLYGON_RADIUS ** 2 * np.sin(2 * np.pi / POLYGON_CORNERS),
    }


def geometric_shapes(n: int) -> Phantom:
    """
    Disk, axis-aligned rectangle and rotated pentagon on a zero background.

    Labels: 0 background, 1 disk, 2 rectangle, 3 pentagon.
    """
    if n < 16:
        raise ValueError(f"Geometric shapes phantom needs n >= 16, got {n}")
    x, y = pixel_centers(n)
    masks = [
        (x - DISK_CENTER[0]) ** 2 + (y - DISK_CENTER[1]) ** 2 <= DISK_RADIUS ** 2,
        (np.abs(x - RECTANGLE_CENTER[0]) <= RECTANGLE_HALF_SIZE[0]) & (np.abs(y - RECTANGLE_CENTER[1]) <= RECTANGLE_HALF_SIZE[1]),
        _inside_convex_polygon(x, y, _polygon_vertices()),
    ]
    image = np.zeros((n, n))
    labels = np.zeros((n, n), dtype=np.int64)
    for label, (mask, value) in enumerate(zip(masks, (DISK_VALUE, RECTANGLE_VALUE, POLYGON_VALUE)), start=1):
        image[mask] = value
        labels[mask] = label
    logger.info(f"Rendered geometric shapes phantom {n}x{n}")
    return Phantom("geometric-shapes", image, LabelMap(labels, 4))


def noise_sigma(values: np.ndarray, level: float) -> float:
    """sigma = level * max |f| of the clean data."""
    return float(level) * float(np.max(np.abs(values))) if np.size(values) else 0.0


def add_noise(f: Union[DataVolume, np.ndarray], level: float, seed: int = 0) -> Union[DataVolume, np.ndarray]:
    """
    Add i.i.d. zero-mean Gaussian noise with sigma = level * max |f|.

    Args:
        f: clean data (DataVolume or array)
        level: nonnegative noise level; 0 returns an identical copy
        seed: seed of the PCG64 generator

    Returns:
        Noisy data of the same type as f
    """
    if level < 0:
        raise ValueError(f"Noise level must be nonnegative, got {level}")
    values = f.values if isinstance(f, DataVolume) else np.asarray(f, dtype=np.float64)
    noisy = values.copy()
    if level > 0:
        sigma = noise_sigma(values, level)
        rng = np.random.default_rng(seed)
        noisy = noisy + rng.normal(0.0, sigma, size=values.shape)
        logger.info(f"Added Gaussian noise: level={level}, sigma={sigma:.6g}, seed={seed}")
    if isinstance(f, DataVolume):
        return DataVolume(f.kind, noisy, f.geometry)
    return noisy
