#!/usr/bin/env python3
"""
Potts ADMM reconstruction
Splits the Potts problem into one variable u_s per neighborhood direction and
a data variable v. Each u_s step is a set of univariate Potts problems along
the chains of p_s, the v step is a Tikhonov problem, and the multipliers
follow by gradient ascent.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse
import scipy.sparse.csgraph

from neighborhoods import NeighborhoodSystem, build_system
from operators import Convolution, DataVolume, ForwardOperator, RadonTransform
from potts1d import solve_potts_chains
from tikhonov import CgConfig, TikhonovProblem, solve_cg, solve_deconv_frequency, solve_radon_filtered

logger = logging.getLogger(__name__)

Prox = Callable[[np.ndarray, float, Optional[np.ndarray]], np.ndarray]

SOLVERS = ("cg", "frequency", "radon-filter")
NU_MODES = ("zero", "mu_over_S")
NORMALIZATIONS = ("data", "none")

# The per-iteration estimate holds with this factor; ratios in (1, 2] are only logged
BOUND_FACTOR = 2.0


class DivergenceError(RuntimeError):
    """Raised when an iterate violates the per-iteration convergence bound."""

    def __init__(self, message: str, diagnostics: List["IterationRecord"]):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class CouplingSchedule:
    """
    mu_k = mu0 * k**tau, nu_k = 0 or mu_k / S.

    With normalization 'data' both are multiplied by ||f||^2, so that mu0 is
    independent of the scale of the operator and the data.
    """
    mu0: float = 1e-7
    tau: float = 2.01
    nu_mode: str = "zero"
    normalization: str = "data"

    def __post_init__(self):
        if not self.mu0 > 0:
            raise ValueError(f"mu0 must be positive, got {self.mu0}")
        if not self.tau > 2:
            raise ValueError(f"tau must exceed 2 so that sum(mu_k^-1/2) converges, got {self.tau}")
        if self.nu_mode not in NU_MODES:
            raise ValueError(f"Unknown nu_mode '{self.nu_mode}'; expected one of {NU_MODES}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"Unknown normalization '{self.normalization}'; expected one of {NORMALIZATIONS}")

    def mu(self, k: int) -> float:
        return self.mu0 * float(k) ** self.tau

    def nu(self, k: int, size: int) -> float:
        return 0.0 if self.nu_mode == "zero" else self.mu(k) / size

    def scale(self, data: np.ndarray) -> float:
        """Factor applied to mu_k and nu_k for the given data."""
        if self.normalization == "none":
            return 1.0
        energy = float(np.sum(np.asarray(data, dtype=np.float64) ** 2))
        return energy if energy > 0 else 1.0


@dataclass(frozen=True)
class PottsConfig:
    gamma: float
    neighborhood: NeighborhoodSystem = field(default_factory=lambda: build_system(1))
    stop_tolerance: float = 1e-3
    max_iterations: int = 250
    # relative to the value range of the result; see extract_labels
    label_tolerance: float = 1e-2
    check_bound: bool = True
    # gamma is then taken relative to ||f||^2
    relative_gamma: bool = False

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.stop_tolerance > 0:
            raise ValueError(f"stop_tolerance must be positive, got {self.stop_tolerance}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be positive, got {self.max_iterations}")
        if self.label_tolerance < 0:
            raise ValueError(f"label_tolerance must be nonnegative, got {self.label_tolerance}")


@dataclass
class LabelMap:
    labels: np.ndarray
    count: int

    def to_partition(self) -> np.ndarray:
        return self.labels.ravel()


@dataclass
class IterationRecord:
    iteration: int
    mu: float
    nu: float
    stop_criterion: float
    max_residual: float
    multiplier_norms: List[float]
    bound_ratios: List[float]
    objective: float
    tikhonov_iterations: int = 0

    def to_dict(self) -> Dict:
        return {
            "iteration": self.iteration,
            "mu": self.mu,
            "nu": self.nu,
            "stop_criterion": self.stop_criterion,
            "max_residual": self.max_residual,
            "multiplier_norms": self.multiplier_norms,
            "bound_ratios": self.bound_ratios,
            "objective": self.objective,
            "tikhonov_iterations": self.tikhonov_iterations,
        }


@dataclass
class AdmmState:
    u: List[np.ndarray]
    v: np.ndarray
    lambdas: List[np.ndarray]
    rhos: Dict[Tuple[int, int], np.ndarray]
    k: int = 1
    history: List[IterationRecord] = field(default_factory=list)

    @classmethod
    def zeros(cls, image_shape: Tuple[int, ...], size: int) -> "AdmmState":
        return cls(
            u=[np.zeros(image_shape) for _ in range(size)],
            v=np.zeros(image_shape),
            lambdas=[np.zeros(image_shape) for _ in range(size)],
            rhos={(r, t): np.zeros(image_shape) for r in range(size) for t in range(r + 1, size)},
        )


@dataclass
class AdmmResult:
    image: np.ndarray
    labels: LabelMap
    diagnostics: List[IterationRecord]
    converged: bool
    iterations: int
    wall_time: float
    state: AdmmState


def combine_quadratics(weights: Sequence[float], anchors: Sequence[np.ndarray]) -> Tuple[float, np.ndarray]:
    """
    Rewrite sum_i a_i ||x - b_i||^2 as (sum a_i) ||x - b||^2 + const.

    Args:
        weights: positive a_i
        anchors: arrays b_i of equal shape

    Returns:
        (sum of weights, weighted mean b)
    """
    total = float(sum(weights))
    if not total > 0:
        raise ValueError(f"Weights must have a positive sum, got {total}")
    mean = sum(a * b for a, b in zip(weights, anchors)) / total
    return total, mean


def chains_for_displacement(width: int, height: int, p: Tuple[int, int]) -> List[np.ndarray]:
    """
    Partition the pixels into maximal chains along p.

    p = (x, y) steps x columns to the right and y rows down in array order.
    Chains start at pixels whose predecessor q - p is out of bounds and are
    listed in raster order of their start pixel.

    Returns:
        List of flat (row-major) pixel index arrays
    """
    px, py = int(p[0]), int(p[1])
    if px == 0 and py == 0:
        raise ValueError("Displacement must be nonzero")
    rows, cols = np.divmod(np.arange(width * height), width)
    pred_rows, pred_cols = rows - py, cols - px
    starts = ~((pred_rows >= 0) & (pred_rows < height) & (pred_cols >= 0) & (pred_cols < width))
    chains = []
    for index in np.flatnonzero(starts):
        i, j = divmod(int(index), width)
        steps = []
        for pos, step, size in ((i, py, height), (j, px, width)):
            if step > 0:
                steps.append((size - 1 - pos) // step)
            elif step < 0:
                steps.append(pos // (-step))
        n = min(steps) + 1
        k = np.arange(n)
        chains.append((i + k * py) * width + (j + k * px))
    return chains


class ChainBatch:
    """Chains of one displacement packed into a padded index matrix."""

    def __init__(self, width: int, height: int, p: Tuple[int, int]):
        chains = chains_for_displacement(width, height, p)
        self.lengths = np.array([c.size for c in chains], dtype=np.int64)
        self.index = np.zeros((len(chains), int(self.lengths.max())), dtype=np.int64)
        self.mask = np.zeros(self.index.shape, dtype=bool)
        for k, chain in enumerate(chains):
            self.index[k, :chain.size] = chain
            self.mask[k, :chain.size] = True
        self.pairs = int(np.sum(self.lengths - 1))

    def solve(self, image: np.ndarray, gamma: float) -> np.ndarray:
        """Piecewise-constant Potts minimizer of image along every chain."""
        flat = image.reshape(-1, image.shape[2] if image.ndim == 3 else 1)
        values = flat[self.index]
        values[~self.mask] = 0.0
        solved = solve_potts_chains(values, self.lengths, gamma)
        out = np.empty_like(flat)
        out[self.index[self.mask]] = solved[self.mask]
        return out.reshape(image.shape)

    def count_jumps(self, image: np.ndarray, tolerance: float = 0.0) -> int:
        flat = image.reshape(-1, image.shape[2] if image.ndim == 3 else 1)
        values = flat[self.index]
        diffs = np.max(np.abs(np.diff(values, axis=1)), axis=2)
        valid = self.mask[:, 1:]
        return int(np.count_nonzero((diffs > tolerance) & valid))


def potts_energy_2d(v: np.ndarray, operator: ForwardOperator, data, gamma: float,
                    system: NeighborhoodSystem, tolerance: float = 0.0,
                    batches: Optional[List[ChainBatch]] = None) -> float:
    """gamma * sum_s w_s ||grad_{p_s} v||_0 + ||A v - f||^2, jumps counted above tolerance."""
    values = data.values if isinstance(data, DataVolume) else np.asarray(data)
    height, width = v.shape[:2]
    if batches is None:
        batches = [ChainBatch(width, height, p) for p in system.displacements]
    jumps = sum(w * b.count_jumps(v, tolerance) for w, b in zip(system.weights, batches))
    residual = operator.apply(v) - values
    return float(gamma * jumps + np.sum(residual ** 2))


def extract_labels(v: np.ndarray, merge_tolerance: Optional[float] = None) -> LabelMap:
    """
    Connected components of pixels joined across 4-neighbour edges whose
    channelwise difference is at most merge_tolerance.

    Args:
        v: image of shape (height, width) or (height, width, C)
        merge_tolerance: absolute tolerance; defaults to 1e-6 times the value range

    Returns:
        LabelMap with labels numbered in raster order of discovery
    """
    image = np.asarray(v, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, np.newaxis]
    height, width, _ = image.shape
    if merge_tolerance is None:
        merge_tolerance = 1e-6 * float(image.max() - image.min())
    index = np.arange(height * width).reshape(height, width)
    edges_a, edges_b = [], []
    for a, b, da, db in ((index[:, :-1], index[:, 1:], image[:, :-1], image[:, 1:]),
                         (index[:-1, :], index[1:, :], image[:-1, :], image[1:, :])):
        joined = np.max(np.abs(da - db), axis=2) <= merge_tolerance
        edges_a.append(a[joined])
        edges_b.append(b[joined])
    rows = np.concatenate(edges_a)
    cols = np.concatenate(edges_b)
    graph = scipy.sparse.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(height * width,) * 2)
    count, labels = scipy.sparse.csgraph.connected_components(graph, directed=False)
    _, first = np.unique(labels, return_index=True)
    order = np.empty(count, dtype=np.int64)
    order[np.argsort(first)] = np.arange(count)
    return LabelMap(order[labels].reshape(height, width), int(count))


def _relative_deviation(a: np.ndarray, b: np.ndarray) -> float:
    denominator = np.linalg.norm(a) + np.linalg.norm(b)
    if denominator == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / denominator)


class PottsAdmm:
    """Runs the ADMM splitting for one operator and data set."""

    def __init__(self, operator: ForwardOperator, data, config: PottsConfig,
                 schedule: CouplingSchedule = CouplingSchedule(), solver: str = "cg",
                 cg_config: CgConfig = CgConfig(), prox: Optional[Prox] = None):
        if solver not in SOLVERS:
            raise ValueError(f"Unknown solver '{solver}'; expected one of {SOLVERS}")
        if prox is None and solver == "frequency" and not isinstance(operator, Convolution):
            raise ValueError("The frequency solver requires a convolution operator")
        if prox is None and solver == "radon-filter" and not isinstance(operator, RadonTransform):
            raise ValueError("The radon-filter solver requires a Radon operator")
        self.operator = operator
        self.data = data.values if isinstance(data, DataVolume) else np.asarray(data, dtype=np.float64)
        self.config = config
        self.schedule = schedule
        self.solver = solver
        self.cg_config = cg_config
        self.image_shape = tuple(operator.image_shape)
        height, width = self.image_shape[:2]
        self.pixel_count = height * width
        self.batches = [ChainBatch(width, height, p) for p in config.neighborhood.displacements]
        self.prox = prox if prox is not None else self._l2_prox
        self.coupling_scale = schedule.scale(self.data)
        data_energy = float(np.sum(self.data ** 2))
        self.gamma = config.gamma * data_energy if config.relative_gamma else config.gamma
        if not self.gamma > 0:
            raise ValueError("relative_gamma needs data with nonzero energy")
        self._last_tikhonov_iterations = 0

    def _l2_prox(self, anchor: np.ndarray, weight: float, warm_start: Optional[np.ndarray]) -> np.ndarray:
        """argmin_v ||A v - f||^2 + (weight / 2) ||v - anchor||^2"""
        self._last_tikhonov_iterations = 0
        if self.solver == "frequency":
            return solve_deconv_frequency(self.operator.kernel, self.data, anchor, weight)
        if self.solver == "radon-filter":
            return solve_radon_filtered(self.data, anchor, weight / 2.0, self.operator.geometry)
        problem = TikhonovProblem(self.operator, self.data, anchor, weight, warm_start)
        result = solve_cg(problem, self.cg_config)
        self._last_tikhonov_iterations = result.iterations
        return result.image

    def initial_state(self) -> AdmmState:
        return AdmmState.zeros(self.image_shape, self.config.neighborhood.size)

    def step(self, state: AdmmState) -> AdmmState:
        """One sweep over u_1..u_S, the v step and the multiplier updates."""
        system = self.config.neighborhood
        size = system.size
        k = state.k
        mu = self.coupling_scale * self.schedule.mu(k)
        nu = self.coupling_scale * self.schedule.nu(k, size)
        gamma = self.gamma
        coupling = mu + nu * (size - 1)

        new_u: List[np.ndarray] = []
        ratios: List[float] = []
        for s in range(size):
            numerator = mu * state.v + state.lambdas[s]
            for r in range(s):
                numerator = numerator + nu * new_u[r] + state.rhos[(r, s)]
            for t in range(s + 1, size):
                numerator = numerator + nu * state.u[t] - state.rhos[(s, t)]
            target = numerator / coupling
            jump = 2.0 * gamma * system.weights[s] / coupling
            try:
                u_s = self.batches[s].solve(target, jump)
            except Exception as e:
                raise RuntimeError(f"Potts subproblem for direction {system.displacements[s]} failed at iteration {k}: {e}") from e
            new_u.append(u_s)

            # ratio against gamma w_s L / mu; the estimate itself allows twice that
            bound = gamma * system.weights[s] * self.pixel_count / mu
            deviation = float(np.sum((u_s - target) ** 2))
            ratio = deviation / bound
            ratios.append(ratio)
            if nu == 0 and self.config.check_bound and ratio > 1.0:
                if ratio > BOUND_FACTOR * (1 + 1e-9):
                    raise DivergenceError(
                        f"Iteration {k}: ||u_{s + 1} - (v + lambda/mu)||^2 = {deviation:.6e} exceeds bound "
                        f"{BOUND_FACTOR * bound:.6e}",
                        state.history,
                    )
                logger.debug(f"Iteration {k}: direction {s + 1} deviation ratio {ratio:.3f} above 1")

        _, anchor = combine_quadratics([1.0] * size, [u - lam / mu for u, lam in zip(new_u, state.lambdas)])
        try:
            v = self.prox(anchor, mu * size, state.v)
        except Exception as e:
            raise RuntimeError(f"Data step failed at iteration {k}: {e}") from e

        lambdas = [lam + mu * (v - u) for lam, u in zip(state.lambdas, new_u)]
        rhos = dict(state.rhos)
        if nu > 0:
            for (r, t), rho in state.rhos.items():
                rhos[(r, t)] = rho + nu * (new_u[r] - new_u[t])

        next_mu = self.coupling_scale * self.schedule.mu(k + 1)
        v_norm = float(np.linalg.norm(v))
        record = IterationRecord(
            iteration=k,
            mu=mu,
            nu=nu,
            stop_criterion=_relative_deviation(new_u[0], new_u[1]),
            max_residual=max(float(np.linalg.norm(u - v)) for u in new_u) / (v_norm if v_norm > 0 else 1.0),
            multiplier_norms=[float(np.linalg.norm(lam)) / next_mu for lam in lambdas],
            bound_ratios=ratios,
            objective=self._surrogate(new_u, v),
            tikhonov_iterations=self._last_tikhonov_iterations,
        )
        logger.debug(f"Iteration {k}: mu={mu:.3e} stop={record.stop_criterion:.3e} residual={record.max_residual:.3e}")
        return AdmmState(new_u, v, lambdas, rhos, k + 1, state.history + [record])

    def _surrogate(self, u: List[np.ndarray], v: np.ndarray) -> float:
        system = self.config.neighborhood
        jumps = sum(w * b.count_jumps(u_s) for w, b, u_s in zip(system.weights, self.batches, u))
        residual = self.operator.apply(v) - self.data
        return float(self.gamma * jumps + np.sum(residual ** 2))

    def run(self, state: Optional[AdmmState] = None,
            callback: Optional[Callable[[IterationRecord], None]] = None) -> AdmmResult:
        """
        Iterate until the relative deviation of u_1 and u_2 drops below the
        stop tolerance or max_iterations is reached.

        Returns:
            AdmmResult with v, its label map and the per-iteration diagnostics
        """
        started = time.perf_counter()
        state = state if state is not None else self.initial_state()
        logger.info(f"Starting Potts ADMM: gamma={self.gamma:.6g}, mu scale={self.coupling_scale:.6g}, "
                    f"S={self.config.neighborhood.size}, "
                    f"solver={self.solver}, nu_mode={self.schedule.nu_mode}")
        converged = False
        for _ in range(self.config.max_iterations):
            state = self.step(state)
            record = state.history[-1]
            if callback is not None:
                callback(record)
            # iteration 1 works on the zero initial state, so u_1 = u_2 = 0 there
            if record.iteration > 1 and record.stop_criterion < self.config.stop_tolerance:
                converged = True
                break
        if not converged:
            logger.warning(f"ADMM reached max_iterations={self.config.max_iterations} without meeting the stop tolerance "
                           f"(last {state.history[-1].stop_criterion:.3e})")
        value_range = float(state.v.max() - state.v.min())
        labels = extract_labels(state.v, self.config.label_tolerance * value_range)
        wall_time = time.perf_counter() - started
        logger.info(f"ADMM finished after {len(state.history)} iterations in {wall_time:.1f}s with {labels.count} segments")
        return AdmmResult(state.v, labels, state.history, converged, len(state.history), wall_time, state)


def admm_step(state: AdmmState, operator: ForwardOperator, data, config: PottsConfig,
              schedule: CouplingSchedule = CouplingSchedule(), solver: str = "cg",
              cg_config: CgConfig = CgConfig()) -> AdmmState:
    return PottsAdmm(operator, data, config, schedule, solver, cg_config).step(state)


def run(operator: ForwardOperator, data, config: PottsConfig,
        schedule: CouplingSchedule = CouplingSchedule(), prox: Optional[Prox] = None,
        solver: str = "cg", cg_config: CgConfig = CgConfig(),
        callback: Optional[Callable[[IterationRecord], None]] = None) -> AdmmResult:
    return PottsAdmm(operator, data, config, schedule, solver, cg_config, prox).run(callback=callback)
