#!/usr/bin/env python3
"""
Tikhonov subproblem solvers
Minimize ||A v - f||^2 + (w / 2) ||v - z||^2 by conjugate gradients on the
normal equation, exactly in the frequency domain for periodic convolutions,
or by a filtered backprojection formula for densely sampled Radon data.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.fft

from operators import (
    ConvolutionKernel, DataVolume, ForwardOperator, GeometryMismatchError,
    RadonGeometry, radon_operator,
)

logger = logging.getLogger(__name__)

# Below this many angles the filtered solver is far from the true minimizer
DENSE_ANGLE_THRESHOLD = 90


def _values(f) -> np.ndarray:
    return f.values if isinstance(f, DataVolume) else np.asarray(f, dtype=np.float64)


@dataclass
class TikhonovProblem:
    """min_v ||A v - f||^2 + (weight / 2) ||v - anchor||^2"""
    operator: ForwardOperator
    data: np.ndarray
    anchor: np.ndarray
    weight: float
    warm_start: Optional[np.ndarray] = None

    def __post_init__(self):
        self.data = _values(self.data)
        self.anchor = np.asarray(self.anchor, dtype=np.float64)
        if not self.weight > 0:
            raise ValueError(f"Tikhonov weight must be positive, got {self.weight}")
        if self.anchor.shape != self.operator.image_shape:
            raise GeometryMismatchError(f"Anchor of shape {self.anchor.shape} does not match operator domain {self.operator.image_shape}")
        if self.warm_start is not None and np.shape(self.warm_start) != self.anchor.shape:
            raise GeometryMismatchError(f"Warm start of shape {np.shape(self.warm_start)} does not match anchor {self.anchor.shape}")

    def objective(self, v: np.ndarray) -> float:
        residual = self.operator.apply(v) - self.data
        return float(np.sum(residual ** 2) + 0.5 * self.weight * np.sum((v - self.anchor) ** 2))

    def normal_operator(self, v: np.ndarray) -> np.ndarray:
        return self.operator.adjoint(self.operator.apply(v)) + 0.5 * self.weight * v

    def normal_rhs(self) -> np.ndarray:
        return self.operator.adjoint(self.data) + 0.5 * self.weight * self.anchor

    def relative_residual(self, v: np.ndarray) -> float:
        rhs = self.normal_rhs()
        scale = np.linalg.norm(rhs)
        residual = np.linalg.norm(rhs - self.normal_operator(v))
        return float(residual / scale) if scale > 0 else float(residual)


@dataclass(frozen=True)
class CgConfig:
    max_iterations: int = 500
    tolerance: float = 1e-6
    warm_start: bool = True

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError(f"CG tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValueError(f"CG max_iterations must be positive, got {self.max_iterations}")


@dataclass
class CgResult:
    image: np.ndarray
    iterations: int
    relative_residual: float
    converged: bool


def solve_cg(problem: TikhonovProblem, config: CgConfig = CgConfig()) -> CgResult:
    """
    Conjugate gradients on (A*A + (w/2) I) v = A* f + (w/2) z.

    Args:
        problem: Tikhonov problem
        config: iteration limits and tolerance

    Returns:
        CgResult; on non-convergence the best iterate with converged=False
    """
    rhs = problem.normal_rhs()
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0:
        return CgResult(np.zeros_like(rhs), 0, 0.0, True)

    if config.warm_start and problem.warm_start is not None:
        x = np.array(problem.warm_start, dtype=np.float64)
    else:
        x = problem.anchor.copy()

    r = rhs - problem.normal_operator(x)
    p = r.copy()
    rr = float(np.vdot(r, r))
    best_x, best_res = x.copy(), math.sqrt(rr) / rhs_norm
    iterations = 0

    while best_res > config.tolerance and iterations < config.max_iterations:
        ap = problem.normal_operator(p)
        pap = float(np.vdot(p, ap))
        if pap <= 0:
            break
        alpha = rr / pap
        x += alpha * p
        r -= alpha * ap
        rr_new = float(np.vdot(r, r))
        iterations += 1
        res = math.sqrt(rr_new) / rhs_norm
        if res < best_res:
            best_x, best_res = x.copy(), res
        p = r + (rr_new / rr) * p
        rr = rr_new

    converged = best_res <= config.tolerance
    if not converged:
        logger.warning(f"CG stopped after {iterations} iterations with relative residual {best_res:.3e} (tolerance {config.tolerance:.1e})")
    return CgResult(best_x, iterations, best_res, converged)


def solve_deconv_frequency(kernel: ConvolutionKernel, f, z: np.ndarray, weight: float) -> np.ndarray:
    """
    Exact minimizer for a periodic convolution, one scalar solve per frequency.

    Args:
        kernel: blur kernel
        f: blurred data (image-shaped)
        z: anchor image
        weight: w > 0

    Returns:
        Minimizer v, same shape as z
    """
    if not weight > 0:
        raise ValueError(f"Tikhonov weight must be positive, got {weight}")
    f = _values(f)
    z = np.asarray(z, dtype=np.float64)
    if f.shape != z.shape:
        raise GeometryMismatchError(f"Data of shape {f.shape} does not match anchor {z.shape}")
    transfer = kernel.transfer_function(z.shape[:2])
    if z.ndim == 3:
        transfer = transfer[:, :, np.newaxis]
    half = 0.5 * weight
    numerator = np.conj(transfer) * scipy.fft.fft2(f, axes=(0, 1)) + half * scipy.fft.fft2(z, axes=(0, 1))
    spectrum = numerator / (np.abs(transfer) ** 2 + half)
    return np.real(scipy.fft.ifft2(spectrum, axes=(0, 1)))


def tikhonov_filter(frequencies: np.ndarray, alpha: float) -> np.ndarray:
    """h_alpha(r) = |r| / (4 pi + alpha |r|)"""
    r = np.abs(frequencies)
    return r / (4 * np.pi + alpha * r)


def hamming_window(frequencies: np.ndarray, cutoff: float) -> np.ndarray:
    """Hamming window reaching zero at cutoff times the Nyquist frequency."""
    r = np.abs(frequencies)
    limit = cutoff * r.max()
    window = 0.54 + 0.46 * np.cos(np.pi * r / limit)
    window[r > limit] = 0.0
    return window


def backprojection_scale(geometry: RadonGeometry) -> float:
    """
    Factor turning the discrete transpose into the continuous backprojection.

    The transpose of the ray-driven projector sums over the angles in [0, pi)
    with unit pixel weight; integrating over the full circle with spacing
    pi / n_angles doubles every angle, hence 2 pi / n_angles per unit detector
    spacing.
    """
    return 2 * np.pi * geometry.detector_spacing / len(geometry.angles)


def filter_sinogram(sinogram: np.ndarray, geometry: RadonGeometry, alpha: float,
                    window: str = "ram-lak", cutoff: float = 1.0) -> np.ndarray:
    """
    Apply h_alpha along the detector axis of every projection.

    Args:
        sinogram: array of shape (n_angles, n_detectors)
        geometry: acquisition geometry
        alpha: continuous-model regularization weight (0 gives the ramp filter)
        window: 'ram-lak' or 'hamming'
        cutoff: Hamming cutoff as a fraction of the Nyquist frequency

    Returns:
        Filtered sinogram of the same shape
    """
    if alpha < 0:
        raise ValueError(f"Filter alpha must be nonnegative, got {alpha}")
    n_det = sinogram.shape[1]
    padded = 1 << int(math.ceil(math.log2(max(2 * n_det, 2))))
    spacing = geometry.detector_spacing
    freqs = 2 * np.pi * scipy.fft.fftfreq(padded, d=spacing)
    response = tikhonov_filter(freqs, alpha)
    if window == "hamming":
        response = response * hamming_window(freqs, cutoff)
    elif window != "ram-lak":
        raise ValueError(f"Unknown filter window '{window}'")
    spectrum = scipy.fft.fft(sinogram, n=padded, axis=1)
    return np.real(scipy.fft.ifft(spectrum * response[np.newaxis, :], axis=1))[:, :n_det]


def solve_radon_filtered(f, z: np.ndarray, alpha: float, geometry: RadonGeometry) -> np.ndarray:
    """
    Minimize ||R v - f||^2 + alpha ||v - z||^2 by v = z + R* H_alpha (f - R z).

    Only accurate for densely sampled angles. alpha is the discrete weight
    (alpha = w / 2 for the w-convention of the other solvers); it is mapped to
    the continuous model through the quadrature constants of the projector.

    Args:
        f: sinogram (array or DataVolume)
        z: anchor image
        alpha: positive regularization weight
        geometry: Radon geometry of f

    Returns:
        Approximate minimizer v
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    f = _values(f)
    z = np.asarray(z, dtype=np.float64)
    if f.shape != geometry.shape:
        raise GeometryMismatchError(f"Sinogram of shape {f.shape} does not match geometry {geometry.shape}")
    if len(geometry.angles) < DENSE_ANGLE_THRESHOLD:
        logger.warning(f"Filtered Tikhonov solver used with only {len(geometry.angles)} angles; expect large errors")
    radon = radon_operator(geometry, z.shape)
    scale = backprojection_scale(geometry)
    filtered = filter_sinogram(f - radon.apply(z), geometry, alpha * scale)
    return z + scale * radon.adjoint(filtered)


def filtered_backprojection(f, geometry: RadonGeometry, image_shape,
                            window: str = "ram-lak", cutoff: float = 1.0) -> np.ndarray:
    """Classical FBP: ramp-filtered (optionally Hamming-windowed) backprojection."""
    f = _values(f)
    if f.shape != geometry.shape:
        raise GeometryMismatchError(f"Sinogram of shape {f.shape} does not match geometry {geometry.shape}")
    radon = radon_operator(geometry, tuple(image_shape))
    filtered = filter_sinogram(f, geometry, 0.0, window=window, cutoff=cutoff)
    return backprojection_scale(geometry) * radon.adjoint(filtered)
