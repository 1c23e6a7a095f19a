#!/usr/bin/env python3
"""
Univariate Potts solver
Exact minimization of gamma * (number of jumps) + squared distance to the data
by dynamic programming over the rightmost jump location.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Sequence[float], Sequence[Sequence[float]]]


def as_signal(data: ArrayLike) -> np.ndarray:
    """
    Validate 1D data and return it as an (n, C) float array.

    Args:
        data: n scalars or n C-vectors

    Returns:
        Array of shape (n, C)
    """
    samples = np.asarray(data, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, np.newaxis]
    if samples.ndim != 2 or samples.shape[0] < 1 or samples.shape[1] < 1:
        raise ValueError(f"Signal must have shape (n,) or (n, C) with n, C >= 1, got {samples.shape}")
    if not np.all(np.isfinite(samples)):
        bad = np.flatnonzero(~np.all(np.isfinite(samples), axis=1))
        raise ValueError(f"Signal contains non-finite samples at indices {bad[:10].tolist()}")
    return samples


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not np.isfinite(gamma) or gamma <= 0:
        raise ValueError(f"Jump penalty gamma must be positive and finite, got {gamma}")
    return gamma


class MomentTable:
    """Prefix sums of samples and squared sample norms."""

    def __init__(self, samples: np.ndarray):
        n, channels = samples.shape
        self.first = np.zeros((n + 1, channels))
        self.second = np.zeros(n + 1)
        np.cumsum(samples, axis=0, out=self.first[1:])
        np.cumsum(np.sum(samples * samples, axis=1), out=self.second[1:])

    def __len__(self) -> int:
        return self.second.shape[0] - 1

    def mean(self, start: int, stop: int) -> np.ndarray:
        """Mean of samples[start:stop]."""
        return (self.first[stop] - self.first[start]) / (stop - start)

    def deviation(self, start: int, stop: int) -> float:
        """Squared deviation of samples[start:stop] from their mean."""
        total = self.first[stop] - self.first[start]
        value = self.second[stop] - self.second[start] - float(total @ total) / (stop - start)
        return max(value, 0.0)

    def deviations_ending_at(self, stop: int) -> np.ndarray:
        """Squared deviations of samples[start:stop] for every start in [0, stop)."""
        totals = self.first[stop] - self.first[:stop]
        lengths = stop - np.arange(stop)
        values = self.second[stop] - self.second[:stop] - np.sum(totals * totals, axis=1) / lengths
        return np.maximum(values, 0.0)


@dataclass(frozen=True)
class PottsSolution1D:
    """Piecewise-constant minimizer of the univariate Potts functional."""
    jump_positions: np.ndarray
    segment_values: np.ndarray
    energy: float
    length: int

    @property
    def n_jumps(self) -> int:
        return int(self.jump_positions.size)

    def segments(self):
        """Yield (start, stop) index pairs of the segments."""
        bounds = [0, *self.jump_positions.tolist(), self.length]
        return list(zip(bounds[:-1], bounds[1:]))

    def reconstruct(self) -> np.ndarray:
        """Expand the solution to an (n, C) array."""
        out = np.empty((self.length, self.segment_values.shape[1]))
        for (start, stop), value in zip(self.segments(), self.segment_values):
            out[start:stop] = value
        return out


def solve_potts_1d(data: ArrayLike, gamma: float, prune: bool = True) -> PottsSolution1D:
    """
    Solve the univariate Potts problem exactly.

    Args:
        data: n scalars or n C-vectors
        gamma: positive jump penalty
        prune: skip left boundaries whose interval deviation alone exceeds the
            best candidate found so far

    Returns:
        PottsSolution1D with jump positions, segment means and energy
    """
    samples = as_signal(data)
    gamma = _check_gamma(gamma)
    n = samples.shape[0]
    moments = MomentTable(samples)

    # best[r] is the optimal energy for samples[:r]; best[0] = -gamma
    best = np.empty(n + 1)
    best[0] = -gamma
    jumps = np.zeros(n + 1, dtype=np.int64)

    for stop in range(1, n + 1):
        if prune:
            value, arg = np.inf, stop - 1
            for start in range(stop - 1, -1, -1):
                deviation = moments.deviation(start, stop)
                if deviation > value:
                    break
                candidate = best[start] + gamma + deviation
                if candidate <= value:
                    value, arg = candidate, start
        else:
            candidates = best[:stop] + gamma + moments.deviations_ending_at(stop)
            arg = int(np.argmin(candidates))
            value = candidates[arg]
        best[stop] = value
        jumps[stop] = arg

    positions = []
    stop = n
    while stop > 0:
        start = int(jumps[stop])
        if start > 0:
            positions.append(start)
        stop = start
    positions = np.array(positions[::-1], dtype=np.int64)

    bounds = [0, *positions.tolist(), n]
    values = np.array([moments.mean(a, b) for a, b in zip(bounds[:-1], bounds[1:])])
    solution = PottsSolution1D(positions, values, 0.0, n)
    energy = potts_energy_1d(solution.reconstruct(), samples, gamma)
    return PottsSolution1D(positions, values, energy, n)


def count_jumps(signal: np.ndarray, tolerance: float = 0.0) -> int:
    """Number of neighbouring sample pairs that differ by more than tolerance."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim == 1:
        signal = signal[:, np.newaxis]
    if signal.shape[0] < 2:
        return 0
    diffs = np.max(np.abs(np.diff(signal, axis=0)), axis=1)
    return int(np.count_nonzero(diffs > tolerance))


def potts_energy_1d(signal: ArrayLike, data: ArrayLike, gamma: float) -> float:
    """
    Evaluate gamma * ||grad g||_0 + ||g - f||^2.

    Args:
        signal: candidate g of length n (a PottsSolution1D is expanded first)
        data: data f of length n
        gamma: jump penalty

    Returns:
        Potts functional value
    """
    if isinstance(signal, PottsSolution1D):
        signal = signal.reconstruct()
    g = as_signal(signal)
    f = as_signal(data)
    if g.shape != f.shape:
        raise ValueError(f"Signal shape {g.shape} does not match data shape {f.shape}")
    return float(gamma) * count_jumps(g) + float(np.sum((g - f) ** 2))


def exhaustive_potts_energy(data: ArrayLike, gamma: float) -> float:
    """Minimum Potts energy over all 2^(n-1) jump sets (small n only)."""
    samples = as_signal(data)
    gamma = _check_gamma(gamma)
    n = samples.shape[0]
    if n > 20:
        raise ValueError(f"Exhaustive search is limited to n <= 20, got n={n}")
    best = np.inf
    for mask in itertools.product((False, True), repeat=n - 1):
        bounds = [0, *[i + 1 for i, cut in enumerate(mask) if cut], n]
        energy = gamma * (len(bounds) - 2)
        for start, stop in zip(bounds[:-1], bounds[1:]):
            segment = samples[start:stop]
            energy += float(np.sum((segment - segment.mean(axis=0)) ** 2))
        best = min(best, energy)
    return best


def solve_potts_chains(values: np.ndarray, lengths: np.ndarray, gamma: float) -> np.ndarray:
    """
    Solve many univariate Potts problems at once.

    The chains are stored row-wise in a padded array; entries beyond each
    chain's length are ignored and returned as zero.

    Args:
        values: array of shape (K, L, C)
        lengths: chain lengths, shape (K,), each in [1, L]
        gamma: jump penalty shared by all chains

    Returns:
        Array of shape (K, L, C) holding the piecewise-constant minimizers
    """
    gamma = _check_gamma(gamma)
    n_chains, max_length, channels = values.shape
    first = np.zeros((n_chains, max_length + 1, channels))
    second = np.zeros((n_chains, max_length + 1))
    np.cumsum(values, axis=1, out=first[:, 1:])
    np.cumsum(np.sum(values * values, axis=2), axis=1, out=second[:, 1:])

    best = np.empty((n_chains, max_length + 1))
    best[:, 0] = -gamma
    jumps = np.zeros((n_chains, max_length + 1), dtype=np.int64)
    rows = np.arange(n_chains)

    for stop in range(1, max_length + 1):
        totals = first[:, stop, np.newaxis, :] - first[:, :stop, :]
        seg_lengths = stop - np.arange(stop)
        deviation = second[:, stop, np.newaxis] - second[:, :stop] - np.sum(totals * totals, axis=2) / seg_lengths
        candidates = best[:, :stop] + gamma + np.maximum(deviation, 0.0)
        arg = np.argmin(candidates, axis=1)
        jumps[:, stop] = arg
        best[:, stop] = candidates[rows, arg]

    out = np.zeros_like(values)
    for k in range(n_chains):
        stop = int(lengths[k])
        while stop > 0:
            start = int(jumps[k, stop])
            out[k, start:stop] = (first[k, stop] - first[k, start]) / (stop - start)
            stop = start
    return out
