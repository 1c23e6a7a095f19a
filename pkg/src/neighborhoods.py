#!/usr/bin/env python3
"""
Neighborhood systems for the discrete jump penalty
Finite-difference displacement vectors with weights that make the induced
boundary length approximate the Euclidean length.
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

Displacement = Tuple[int, int]

SQRT2 = math.sqrt(2.0)
SQRT5 = math.sqrt(5.0)

DISPLACEMENTS: Dict[int, List[Displacement]] = {
    0: [(1, 0), (0, 1)],
    1: [(1, 0), (0, 1), (1, 1), (1, -1)],
    2: [(1, 0), (0, 1), (1, 1), (1, -1), (1, 2), (2, 1), (1, -2), (2, -1)],
}

WEIGHTS: Dict[int, List[float]] = {
    0: [1.0, 1.0],
    1: [SQRT2 - 1] * 2 + [1 - SQRT2 / 2] * 2,
    2: [SQRT5 - 2] * 2 + [SQRT5 - 1.5 * SQRT2] * 2 + [(1 + SQRT2 - SQRT5) / 2] * 4,
}

# Displacements must get their Euclidean length in the induced norm
NORM_TOLERANCE = 1e-9

# Synthetic edge image used to count jump crossings
COUNT_GRID = 512
COUNT_MARGIN = 16


class UnsupportedNeighborhoodError(ValueError):
    """Raised when no weights satisfy the jump-length conditions."""


def _slope(p: Displacement) -> Fraction:
    x, y = p
    if x == 0:
        return Fraction(10**9)
    return Fraction(y, x)


@dataclass(frozen=True)
class NeighborhoodSystem:
    """Displacements p_s and weights w_s defining the jump penalty."""
    displacements: Tuple[Displacement, ...]
    weights: Tuple[float, ...]
    level: Optional[int] = None

    def __post_init__(self):
        if len(self.displacements) < 2:
            raise ValueError(f"A neighborhood system needs at least two displacements, got {len(self.displacements)}")
        if len(self.displacements) != len(self.weights):
            raise ValueError(f"{len(self.displacements)} displacements but {len(self.weights)} weights")
        if any(p == (0, 0) for p in self.displacements):
            raise ValueError("Zero displacement in neighborhood system")
        slopes = [_slope(p) for p in self.displacements]
        if len(set(slopes)) != len(slopes):
            raise ValueError(f"Displacements must have pairwise distinct slopes: {self.displacements}")
        if any(not w > 0 for w in self.weights):
            raise ValueError(f"Weights must be positive: {self.weights}")
        for p in self.displacements:
            length = induced_norm(self, p)
            if abs(length - math.hypot(*p)) > NORM_TOLERANCE * max(1.0, math.hypot(*p)):
                raise UnsupportedNeighborhoodError(
                    f"Weights give displacement {p} length {length:.12g}, expected {math.hypot(*p):.12g}")

    @property
    def size(self) -> int:
        return len(self.displacements)

    def norm(self, p: Sequence[float]) -> float:
        return induced_norm(self, p)

    def to_dict(self) -> Dict:
        return {
            "level": self.level,
            "displacements": [list(p) for p in self.displacements],
            "weights": list(self.weights),
        }


def build_system(level: int) -> NeighborhoodSystem:
    """
    Return one of the standard systems.

    Args:
        level: 0 (axes), 1 (axes and diagonals) or 2 (with knight moves)

    Returns:
        NeighborhoodSystem with closed-form weights
    """
    if level not in DISPLACEMENTS:
        raise ValueError(f"Unknown neighborhood level {level}; expected one of {sorted(DISPLACEMENTS)}")
    return NeighborhoodSystem(
        displacements=tuple(DISPLACEMENTS[level]),
        weights=tuple(WEIGHTS[level]),
        level=level,
    )


def _edge_image(direction: Displacement, size: int) -> np.ndarray:
    """Binary half-plane image whose boundary runs along direction."""
    x, y = direction
    rows, cols = np.mgrid[0:size, 0:size]
    c = size // 2
    # image rows grow downwards, so a geometric y step is a negative row step
    return (x * (c - rows) - y * (cols - c)) > 0


def _count_crossings(image: np.ndarray, p: Displacement, margin: int) -> int:
    """Count pixel pairs (q, q + p) with differing values, q inside the margin."""
    x, y = p
    size = image.shape[0]
    lo, hi = margin, size - margin
    rows = np.arange(lo, hi)
    cols = np.arange(lo, hi)
    here = image[np.ix_(rows, cols)]
    there = image[np.ix_(rows - y, cols + x)]
    return int(np.count_nonzero(here != there))


def crossing_matrix(displacements: Sequence[Displacement],
                    grid: int = COUNT_GRID, margin: int = COUNT_MARGIN) -> np.ndarray:
    """
    Count jump crossings of each displacement for edges along each displacement.

    Row t holds, for an edge oriented along p_t, the number of crossings of
    every p_s per unit extent of the edge along its dominant axis, times the
    dominant component of p_t.

    Args:
        displacements: integer vectors p_1..p_S
        grid: side length of the synthetic image
        margin: border width discarded when counting

    Returns:
        Integer matrix of shape (S, S)
    """
    size = len(displacements)
    counts = np.zeros((size, size))
    window = grid - 2 * margin
    for t, (x, y) in enumerate(displacements):
        # slopes outside [-1, 1]: look at the image rotated by pi/2
        rotated = abs(y) > abs(x)
        edge = (-y, x) if rotated else (x, y)
        image = _edge_image(edge, grid)
        dominant = abs(edge[0])
        for s, (px, py) in enumerate(displacements):
            probe = (-py, px) if rotated else (px, py)
            crossings = _count_crossings(image, probe, margin)
            counts[t, s] = crossings * dominant / window
    rounded = np.rint(counts)
    if np.max(np.abs(counts - rounded)) > 0.25:
        logger.warning(f"Crossing counts deviate from integers by {np.max(np.abs(counts - rounded)):.3f}")
    return rounded


def derive_weights(displacements: Sequence[Displacement]) -> List[float]:
    """
    Derive weights so that straight edges along every p_t get Euclidean length.

    Args:
        displacements: integer vectors with pairwise distinct slopes

    Returns:
        Weights w_1..w_S
    """
    displacements = [tuple(int(c) for c in p) for p in displacements]
    slopes = [_slope(p) for p in displacements]
    if len(set(slopes)) != len(slopes):
        raise ValueError(f"Displacements must have pairwise distinct slopes: {displacements}")
    matrix = crossing_matrix(displacements)
    rhs = np.array([math.hypot(x, y) for x, y in displacements])
    if np.linalg.matrix_rank(matrix) < len(displacements):
        raise UnsupportedNeighborhoodError(f"Weight conditions are singular for displacements {displacements}")
    weights = np.linalg.solve(matrix, rhs)
    logger.debug(f"Derived weights {weights.tolist()} for {displacements}")
    return weights.tolist()


def induced_norm(system: NeighborhoodSystem, p: Sequence[float]) -> float:
    """Weighted sum of absolute inner products of p with the displacements."""
    p = np.asarray(p, dtype=np.float64)
    vectors = np.asarray(system.displacements, dtype=np.float64)
    return float(np.sum(np.asarray(system.weights) * np.abs(vectors @ p)))


def isotropy_ratio(system: NeighborhoodSystem, angular_samples: int = 3600) -> float:
    """
    Ratio between the longest and shortest unit vector in the induced norm.

    Args:
        system: neighborhood system
        angular_samples: number of uniformly spaced angles in [0, pi)

    Returns:
        E >= 1; E = 1 means perfect isotropy
    """
    if angular_samples < 360:
        raise ValueError(f"angular_samples must be at least 360, got {angular_samples}")
    angles = np.arange(angular_samples) * (np.pi / angular_samples)
    units = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    vectors = np.asarray(system.displacements, dtype=np.float64)
    lengths = np.abs(units @ vectors.T) @ np.asarray(system.weights)
    return float(lengths.max() / lengths.min())
