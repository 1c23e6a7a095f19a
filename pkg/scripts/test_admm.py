#!/usr/bin/env python3
"""
Tests for the Potts ADMM splitting
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

import admm
from admm import (
    AdmmState, ChainBatch, CouplingSchedule, DivergenceError, PottsAdmm, PottsConfig,
    admm_step, chains_for_displacement, combine_quadratics, extract_labels, potts_energy_2d, run,
)
from neighborhoods import DISPLACEMENTS, build_system
from operators import Convolution, ConvolutionKernel, Identity, MatrixOperator
from potts1d import solve_potts_1d
from tikhonov import CgConfig


def _two_plateaus(height=12, width=12):
    image = np.zeros((height, width))
    image[:, width // 2:] = 1.0
    return image


def test_row_chains():
    chains = chains_for_displacement(4, 4, (1, 0))
    assert [c.tolist() for c in chains] == [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9, 10, 11], [12, 13, 14, 15]]


def test_diagonal_chains():
    chains = chains_for_displacement(3, 3, (1, 1))
    assert sorted(len(c) for c in chains) == [1, 1, 2, 2, 3]


def test_knight_chains_cover_every_pixel_once():
    chains = chains_for_displacement(5, 5, (2, 1))
    pixels = np.concatenate(chains)
    assert pixels.size == 25
    assert np.unique(pixels).size == 25


@pytest.mark.parametrize("size", [(1, 1), (3, 7), (16, 16), (9, 13)])
def test_chains_partition_the_grid_for_every_displacement(size):
    height, width = size
    for p in DISPLACEMENTS[2]:
        chains = chains_for_displacement(width, height, p)
        pixels = np.concatenate(chains)
        assert np.sort(pixels).tolist() == list(range(width * height))
        for chain in chains:
            rows, cols = np.divmod(chain, width)
            assert np.all(np.diff(cols) == p[0]) and np.all(np.diff(rows) == p[1])


def test_zero_displacement_is_rejected():
    with pytest.raises(ValueError):
        chains_for_displacement(3, 3, (0, 0))


def test_combine_quadratics():
    rng = np.random.default_rng(0)
    anchors = [rng.normal(size=(3, 3)) for _ in range(3)]
    weights = [1.0, 2.0, 0.5]
    total, mean = combine_quadratics(weights, anchors)
    assert total == pytest.approx(3.5)
    x = rng.normal(size=(3, 3))
    y = rng.normal(size=(3, 3))
    lhs = lambda v: sum(a * np.sum((v - b) ** 2) for a, b in zip(weights, anchors))
    rhs = lambda v: total * np.sum((v - mean) ** 2)
    assert lhs(x) - rhs(x) == pytest.approx(lhs(y) - rhs(y))


def test_chain_batch_solves_rows():
    rng = np.random.default_rng(1)
    image = _two_plateaus(4, 6) + 0.01 * rng.normal(size=(4, 6))
    solved = ChainBatch(6, 4, (1, 0)).solve(image, 0.1)
    for row in range(4):
        expected = solve_potts_1d(image[row], 0.1).reconstruct()[:, 0]
        assert np.allclose(solved[row], expected)


def test_first_step_from_zero_state_gives_zero_u():
    operator = Identity((8, 8))
    config = PottsConfig(gamma=0.1, neighborhood=build_system(1))
    state = AdmmState.zeros((8, 8), 4)
    new_state = admm_step(state, operator, _two_plateaus(8, 8), config)
    assert all(not u.any() for u in new_state.u)
    assert new_state.k == 2
    assert len(new_state.history) == 1


def test_anisotropic_step_matches_hand_computation():
    rng = np.random.default_rng(2)
    f = _two_plateaus(6, 6) + 0.05 * rng.normal(size=(6, 6))
    operator = Identity((6, 6))
    config = PottsConfig(gamma=0.2, neighborhood=build_system(0), check_bound=False)
    schedule = CouplingSchedule(normalization="none", mu0=0.5)
    state = AdmmState(
        u=[rng.normal(size=(6, 6)) for _ in range(2)],
        v=rng.normal(size=(6, 6)),
        lambdas=[rng.normal(size=(6, 6)) for _ in range(2)],
        rhos={(0, 1): np.zeros((6, 6))},
        k=3,
    )
    mu = schedule.mu(3)
    new_state = admm_step(state, operator, f, config, schedule, cg_config=CgConfig(tolerance=1e-12))

    w1 = state.v + state.lambdas[0] / mu
    u1 = np.array([solve_potts_1d(row, 2 * 0.2 / mu).reconstruct()[:, 0] for row in w1])
    w2 = state.v + state.lambdas[1] / mu
    u2 = np.array([solve_potts_1d(col, 2 * 0.2 / mu).reconstruct()[:, 0] for col in w2.T]).T
    z = 0.5 * (u1 - state.lambdas[0] / mu + u2 - state.lambdas[1] / mu)
    v = (f + mu * z) / (1 + mu)

    assert np.allclose(new_state.u[0], u1)
    assert np.allclose(new_state.u[1], u2)
    assert np.allclose(new_state.v, v, atol=1e-8)
    assert np.allclose(new_state.lambdas[0], state.lambdas[0] + mu * (v - u1), atol=1e-7)


def test_zero_data_gives_zero_image_and_one_segment():
    result = run(Identity((8, 8)), np.zeros((8, 8)), PottsConfig(gamma=1.0))
    assert not result.image.any()
    assert result.labels.count == 1
    assert result.converged


def test_identity_reconstruction_reproduces_plateaus():
    f = _two_plateaus()
    config = PottsConfig(gamma=0.01, neighborhood=build_system(1), max_iterations=250)
    result = run(Identity(f.shape), f, config, CouplingSchedule(normalization="none", mu0=1e-2))
    assert result.converged
    assert np.max(np.abs(result.image - f)) < 1e-2
    assert result.labels.count == 2
    assert all(r.bound_ratios and max(r.bound_ratios) <= admm.BOUND_FACTOR for r in result.diagnostics)


def test_multiplier_norms_shrink():
    f = _two_plateaus()
    result = run(Identity(f.shape), f, PottsConfig(gamma=0.01), CouplingSchedule(normalization="none", mu0=1e-2))
    first, last = result.diagnostics[0], result.diagnostics[-1]
    assert max(last.multiplier_norms) < max(first.multiplier_norms)
    assert last.max_residual < first.max_residual


def test_runs_are_deterministic():
    rng = np.random.default_rng(3)
    f = _two_plateaus() + 0.05 * rng.normal(size=(12, 12))
    config = PottsConfig(gamma=0.05, max_iterations=40)
    a = run(Identity(f.shape), f, config, CouplingSchedule(normalization="none", mu0=1e-2))
    b = run(Identity(f.shape), f, config, CouplingSchedule(normalization="none", mu0=1e-2))
    assert np.array_equal(a.labels.labels, b.labels.labels)
    assert np.array_equal(a.image, b.image)


def test_coupled_mode_stays_bounded():
    rng = np.random.default_rng(4)
    f = _two_plateaus() + 0.05 * rng.normal(size=(12, 12))
    schedule = CouplingSchedule(normalization="none", mu0=1e-2, nu_mode="mu_over_S")
    result = run(Identity(f.shape), f, PottsConfig(gamma=0.05), schedule)
    assert result.converged
    assert np.all(np.isfinite(result.image))
    assert np.max(np.abs(result.image)) < 2.0


def test_frequency_solver_matches_cg_run():
    kernel = ConvolutionKernel.gaussian(1.0)
    operator = Convolution(kernel, (16, 16))
    data = operator.apply(_two_plateaus(16, 16))
    config = PottsConfig(gamma=0.01, max_iterations=5)
    schedule = CouplingSchedule(normalization="none", mu0=1e-2)
    fast = run(operator, data, config, schedule, solver="frequency")
    slow = run(operator, data, config, schedule, solver="cg", cg_config=CgConfig(tolerance=1e-12, max_iterations=2000))
    assert np.allclose(fast.image, slow.image, atol=1e-6)


def test_custom_prox_is_used():
    calls = []

    def prox(anchor, weight, warm_start):
        calls.append(weight)
        return np.zeros_like(anchor)

    config = PottsConfig(gamma=1.0, max_iterations=3)
    run(Identity((4, 4)), np.ones((4, 4)), config, CouplingSchedule(normalization="none", mu0=1.0), prox=prox)
    assert calls[0] == pytest.approx(4 * 1.0)
    assert len(calls) >= 2


def test_solver_must_fit_operator():
    with pytest.raises(ValueError):
        run(Identity((4, 4)), np.ones((4, 4)), PottsConfig(gamma=1.0), solver="frequency")
    with pytest.raises(ValueError):
        PottsAdmm(Identity((4, 4)), np.ones((4, 4)), PottsConfig(gamma=1.0), solver="lsqr")


def test_bound_violation_raises_divergence(monkeypatch):
    monkeypatch.setattr(ChainBatch, "solve", lambda self, image, gamma: image + 1e6)
    with pytest.raises(DivergenceError) as info:
        run(Identity((4, 4)), np.ones((4, 4)), PottsConfig(gamma=1.0),
            CouplingSchedule(normalization="none", mu0=1.0))
    assert isinstance(info.value.diagnostics, list)


def test_deviation_up_to_twice_the_stated_bound_is_accepted(monkeypatch):
    # shift every u_s so that the deviation is 1.5 times gamma w_s L / mu
    monkeypatch.setattr(ChainBatch, "solve", lambda self, image, jump: image + np.sqrt(0.75 * jump))
    config = PottsConfig(gamma=1.0, neighborhood=build_system(0), max_iterations=4)
    result = run(Identity((4, 4)), np.ones((4, 4)), config, CouplingSchedule(normalization="none", mu0=1.0))
    ratios = [ratio for record in result.diagnostics for ratio in record.bound_ratios]
    assert ratios == pytest.approx([1.5] * len(ratios))
    assert result.iterations >= 2

    monkeypatch.setattr(ChainBatch, "solve", lambda self, image, jump: image + np.sqrt(1.25 * jump))
    with pytest.raises(DivergenceError):
        run(Identity((4, 4)), np.ones((4, 4)), config, CouplingSchedule(normalization="none", mu0=1.0))


def test_striped_identity_run_completes():
    f = np.zeros((16, 16))
    f[:, (np.arange(16) // 4) % 2 == 1] = 1.0
    config = PottsConfig(gamma=0.225, neighborhood=build_system(0), max_iterations=10)
    result = run(Identity(f.shape), f, config, CouplingSchedule(normalization="none", mu0=1.0))
    assert result.iterations >= 2
    assert all(max(r.bound_ratios) <= admm.BOUND_FACTOR for r in result.diagnostics)


def test_data_normalization_makes_runs_scale_invariant():
    rng = np.random.default_rng(6)
    matrix = rng.normal(size=(24, 16))
    truth = _two_plateaus(4, 4)
    f = matrix @ truth.ravel()
    config = PottsConfig(gamma=0.05, max_iterations=15)
    schedule = CouplingSchedule(mu0=1e-3)
    cg = CgConfig(tolerance=1e-12, max_iterations=200)
    base = run(MatrixOperator(matrix, (4, 4)), f, config, schedule, cg_config=cg)
    scaled = run(MatrixOperator(4 * matrix, (4, 4)), 4 * f, PottsConfig(gamma=16 * 0.05, max_iterations=15),
                 schedule, cg_config=cg)
    assert np.allclose(base.image, scaled.image, atol=1e-10)
    assert [r.mu for r in scaled.diagnostics] == pytest.approx([16 * r.mu for r in base.diagnostics])

    relative = PottsConfig(gamma=1e-3, relative_gamma=True, max_iterations=15)
    a = run(MatrixOperator(matrix, (4, 4)), f, relative, schedule, cg_config=cg)
    b = run(MatrixOperator(4 * matrix, (4, 4)), 4 * f, relative, schedule, cg_config=cg)
    assert np.allclose(a.image, b.image, atol=1e-10)


def test_relative_gamma_needs_nonzero_data():
    with pytest.raises(ValueError):
        PottsAdmm(Identity((4, 4)), np.zeros((4, 4)), PottsConfig(gamma=1.0, relative_gamma=True))
    solver = PottsAdmm(Identity((4, 4)), np.full((4, 4), 0.5), PottsConfig(gamma=2.0, relative_gamma=True))
    assert solver.gamma == pytest.approx(2.0 * 16 * 0.25)
    assert solver.coupling_scale == pytest.approx(16 * 0.25)


def test_run_uses_configured_label_tolerance():
    f = _two_plateaus(6, 6)
    f[:, :3] += 0.001 * np.arange(6)[:, None]
    schedule = CouplingSchedule(normalization="none", mu0=1e-2)
    coarse = run(Identity(f.shape), f, PottsConfig(gamma=1e-6, label_tolerance=1e-2, max_iterations=3), schedule)
    fine = run(Identity(f.shape), f, PottsConfig(gamma=1e-6, label_tolerance=0.0, max_iterations=3), schedule)
    assert coarse.labels.count == extract_labels(coarse.image, 1e-2 * np.ptp(coarse.image)).count
    assert fine.labels.count == extract_labels(fine.image, 0.0).count
    assert fine.labels.count >= coarse.labels.count


def test_config_validation():
    with pytest.raises(ValueError):
        PottsConfig(gamma=0.0)
    with pytest.raises(ValueError):
        PottsConfig(gamma=1.0, label_tolerance=-1.0)
    with pytest.raises(ValueError):
        CouplingSchedule(normalization="operator")
    with pytest.raises(ValueError):
        CouplingSchedule(tau=2.0)
    with pytest.raises(ValueError):
        CouplingSchedule(normalization="none", mu0=-1.0)
    with pytest.raises(ValueError):
        CouplingSchedule(nu_mode="half")


def test_schedule_values():
    schedule = CouplingSchedule()
    assert schedule.mu(1) == pytest.approx(1e-7)
    assert schedule.mu(2) == pytest.approx(1e-7 * 2 ** 2.01)
    assert schedule.nu(5, 4) == 0.0
    assert CouplingSchedule(nu_mode="mu_over_S").nu(2, 4) == pytest.approx(schedule.mu(2) / 4)


def test_extract_labels_examples():
    assert extract_labels(np.full((5, 7), 3.0)).count == 1
    labels = extract_labels(_two_plateaus(4, 6))
    assert labels.count == 2
    assert labels.labels[0, 0] == 0 and labels.labels[0, -1] == 1
    checkerboard = np.indices((4, 5)).sum(axis=0) % 2
    assert extract_labels(checkerboard, 0.5).count == 20


def test_extract_labels_raster_order_and_tolerance():
    image = np.array([[0.0, 0.0, 5.0], [2.0, 2.0, 5.0], [0.0, 0.0, 5.0]])
    labels = extract_labels(image, 0.0)
    assert labels.labels.tolist() == [[0, 0, 1], [2, 2, 1], [3, 3, 1]]
    assert extract_labels(image, 2.0).labels.tolist() == [[0, 0, 1], [0, 0, 1], [0, 0, 1]]


def test_extract_labels_color():
    image = np.zeros((3, 4, 3))
    image[:, 2:, 1] = 1.0
    assert extract_labels(image).count == 2


def test_potts_energy_2d_counts_weighted_jumps():
    f = _two_plateaus(4, 4)
    system = build_system(0)
    energy = potts_energy_2d(f, Identity((4, 4)), f, 0.5, system)
    assert energy == pytest.approx(0.5 * 4)
    with_tolerance = potts_energy_2d(f, Identity((4, 4)), f, 0.5, system, tolerance=2.0)
    assert with_tolerance == pytest.approx(0.0)


def test_subproblem_failure_carries_iteration(monkeypatch):
    def fail(*args, **kwargs):
        raise FloatingPointError("boom")

    monkeypatch.setattr(admm, "solve_potts_chains", fail)
    with pytest.raises(RuntimeError, match="iteration 1"):
        run(Identity((4, 4)), np.ones((4, 4)), PottsConfig(gamma=1.0))
