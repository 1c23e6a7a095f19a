#!/usr/bin/env python3
"""
Tests for the evaluation metrics
"""

import itertools
import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from metrics import psnr, rand_index, threshold_to_levels


def _brute_force_rand_index(a, b):
    pairs = list(itertools.combinations(range(len(a)), 2))
    agree = sum((a[i] == a[j]) == (b[i] == b[j]) for i, j in pairs)
    return agree / len(pairs)


def test_rand_index_examples():
    assert rand_index([0, 0, 1, 1], [5, 5, 7, 7]) == pytest.approx(1.0)
    assert rand_index([0, 0], [0, 1]) == pytest.approx(0.0)
    assert rand_index([0, 0, 1, 1], [0, 0, 1, 2]) == pytest.approx(5 / 6)
    assert rand_index([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(1 / 3)


def test_rand_index_accepts_images():
    a = np.zeros((4, 4), dtype=int)
    a[:, 2:] = 1
    assert rand_index(a, 3 - a) == pytest.approx(1.0)


def test_rand_index_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(30):
        n = int(rng.integers(2, 51))
        a = rng.integers(0, 4, size=n)
        b = rng.integers(0, 3, size=n)
        assert rand_index(a, b) == pytest.approx(_brute_force_rand_index(a, b), abs=1e-12)


def test_rand_index_symmetry_and_relabeling():
    rng = np.random.default_rng(1)
    a = rng.integers(0, 5, size=200)
    b = rng.integers(0, 5, size=200)
    permutation = rng.permutation(5)
    assert rand_index(a, b) == pytest.approx(rand_index(b, a))
    assert rand_index(a, b) == pytest.approx(rand_index(permutation[a], b))


def test_rand_index_rejects_bad_input():
    with pytest.raises(ValueError):
        rand_index([0, 1, 2], [0, 1])
    with pytest.raises(ValueError):
        rand_index([0], [0])


def test_psnr_values():
    g = np.ones(4)
    assert psnr(g - 0.5, g) == pytest.approx(10 * math.log10(4))
    assert psnr(g, g) == math.inf
    rng = np.random.default_rng(2)
    g = rng.normal(size=(8, 8))
    u = g + 0.1 * rng.normal(size=(8, 8))
    assert psnr(3 * u, 3 * g) == pytest.approx(psnr(u, g))


def test_psnr_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros(3), np.zeros(4))


def test_psnr_rejects_all_zero_reference():
    with pytest.raises(ValueError):
        psnr(np.ones((4, 4)), np.zeros((4, 4)))
    with pytest.raises(ValueError):
        psnr(np.zeros(3), np.zeros(3))


def test_threshold_to_levels():
    image = np.array([[0.05, 0.4], [0.7, 1.3]])
    assert threshold_to_levels(image, [0.0, 0.5, 1.0]).tolist() == [[0.0, 0.5], [0.5, 1.0]]
    with pytest.raises(ValueError):
        threshold_to_levels(image, [])
