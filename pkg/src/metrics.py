#!/usr/bin/env python3
"""
Evaluation metrics
Rand index between two partitions and PSNR against a ground-truth image.
"""

import logging
from typing import Sequence

import numpy as np
from sklearn.metrics.cluster import contingency_matrix

logger = logging.getLogger(__name__)


def _pairs(counts: np.ndarray) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    return float(np.sum(counts * (counts - 1) / 2))


def rand_index(labels_a, labels_b) -> float:
    """
    Fraction of element pairs on which two partitions agree.

    Args:
        labels_a: label per element (any shape, flattened)
        labels_b: label per element, same number of elements

    Returns:
        Rand index in [0, 1]; 1 for identical partitions up to relabeling
    """
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.size != b.size:
        raise ValueError(f"Partitions have different sizes: {a.size} vs {b.size}")
    n = a.size
    if n < 2:
        raise ValueError(f"Rand index needs at least 2 elements, got {n}")

    table = contingency_matrix(a, b, sparse=True)
    together_both = _pairs(table.data)
    together_a = _pairs(np.asarray(table.sum(axis=1)).ravel())
    together_b = _pairs(np.asarray(table.sum(axis=0)).ravel())
    total = n * (n - 1) / 2
    agreeing = total + 2 * together_both - together_a - together_b
    return float(agreeing / total)


def psnr(u: np.ndarray, g: np.ndarray) -> float:
    """
    Peak signal-to-noise ratio of u with respect to the ground truth g, in dB.

    Uses the total sample count and the maximum absolute value of g; returns
    +inf when u equals g. An all-zero g has no peak and is rejected.
    """
    u = np.asarray(u, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if u.shape != g.shape:
        raise ValueError(f"Image shapes differ: {u.shape} vs {g.shape}")
    peak = float(np.max(np.abs(g))) if g.size else 0.0
    if peak == 0:
        raise ValueError("PSNR is undefined for an all-zero reference image")
    error = float(np.sum((g - u) ** 2))
    if error == 0:
        return float("inf")
    return float(10 * np.log10(g.size * peak ** 2 / error))


def threshold_to_levels(image: np.ndarray, levels: Sequence[float]) -> np.ndarray:
    """Replace every pixel by the nearest of the given gray levels."""
    levels = np.unique(np.asarray(levels, dtype=np.float64))
    if levels.size == 0:
        raise ValueError("At least one gray level is required")
    image = np.asarray(image, dtype=np.float64)
    nearest = np.argmin(np.abs(image[..., np.newaxis] - levels), axis=-1)
    return levels[nearest]
