#!/usr/bin/env python3
"""
Forward operators and their adjoints
Discrete Radon transform, spherical mean Radon transform, periodic convolution,
identity and explicit matrices, all acting on images over [-1, 1]^2.

Conventions:
    Images are arrays of shape (height, width) or (height, width, channels).
    Pixel (i, j) has its center at x = -1 + (j + 0.5) * 2 / width,
    y = 1 - (i + 0.5) * 2 / height. Radon line integrals are measured in pixel widths
    (dx units, detector spacing one pixel width), sampled at the finer of the
    two pixel sides.
    Circle integrals integrate over the unit-circle parameter zeta, so a
    constant 1 on a full circle integrates to 2 * pi.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, Optional, Tuple

import numpy as np
import scipy.fft
import scipy.sparse

logger = logging.getLogger(__name__)


class GeometryMismatchError(ValueError):
    """Raised when data, images and geometries do not fit together."""


def as_image(u: np.ndarray) -> np.ndarray:
    """Validate an image array (finite, 2D or 3D) and return it as float64."""
    image = np.asarray(u, dtype=np.float64)
    if image.ndim not in (2, 3) or min(image.shape) < 1:
        raise ValueError(f"Image must have shape (height, width) or (height, width, C), got {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ValueError("Image contains non-finite values")
    return image


def image_channels(u: np.ndarray) -> int:
    return 1 if u.ndim == 2 else u.shape[2]


def pixel_size(shape: Tuple[int, ...]) -> Tuple[float, float]:
    """Physical (dx, dy) of a pixel for an image covering [-1, 1]^2."""
    return 2.0 / shape[1], 2.0 / shape[0]


# ---------------------------------------------------------------------------
# Geometries and data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadonGeometry:
    """Parallel-beam geometry: angles in [0, pi) and detector offsets in pixels."""
    angles: Tuple[float, ...]
    offsets: Tuple[float, ...]

    def __post_init__(self):
        angles = np.asarray(self.angles)
        offsets = np.asarray(self.offsets)
        if angles.size < 1 or offsets.size < 1:
            raise ValueError("Radon geometry needs at least one angle and one detector")
        if np.any(angles < 0) or np.any(angles >= np.pi) or np.any(np.diff(angles) <= 0):
            raise ValueError("Radon angles must be strictly increasing in [0, pi)")
        if not np.allclose(offsets, -offsets[::-1], atol=1e-9):
            raise ValueError("Detector offsets must be symmetric about 0")
        if offsets.size > 1 and not np.allclose(np.diff(offsets), offsets[1] - offsets[0], atol=1e-9):
            raise ValueError("Detector offsets must be uniformly spaced")

    @classmethod
    def uniform(cls, n_angles: int, image_size: int, n_detectors: Optional[int] = None) -> "RadonGeometry":
        """Equispaced angles and unit-pixel detectors spanning the image diagonal."""
        if n_angles < 1:
            raise ValueError(f"n_angles must be positive, got {n_angles}")
        if n_detectors is None:
            n_detectors = 2 * int(math.ceil(image_size * math.sqrt(2.0) / 2.0)) + 1
        angles = tuple(float(a) for a in np.arange(n_angles) * (np.pi / n_angles))
        offsets = tuple(float(s) for s in np.arange(n_detectors) - (n_detectors - 1) / 2.0)
        return cls(angles, offsets)

    @property
    def shape(self) -> Tuple[int, int]:
        return len(self.angles), len(self.offsets)

    @property
    def detector_spacing(self) -> float:
        return float(self.offsets[1] - self.offsets[0]) if len(self.offsets) > 1 else 1.0

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": "radon", "angles": list(self.angles), "offsets": list(self.offsets)}


@dataclass(frozen=True)
class SphericalGeometry:
    """Circles of radius t around centers (cos phi, sin phi) on the unit circle."""
    center_angles: Tuple[float, ...]
    radii: Tuple[float, ...]

    def __post_init__(self):
        phis = np.asarray(self.center_angles)
        radii = np.asarray(self.radii)
        if phis.size < 1 or radii.size < 1:
            raise ValueError("Spherical geometry needs at least one center and one radius")
        if np.any(phis < 0) or np.any(phis >= 2 * np.pi):
            raise ValueError("Center angles must lie in [0, 2 pi)")
        if np.any(radii <= 0) or np.any(radii > 2.0 + 1e-12):
            raise ValueError("Radii must lie in (0, 2]")

    @classmethod
    def uniform(cls, n_angles: int, n_radii: int) -> "SphericalGeometry":
        phis = tuple(float(p) for p in np.arange(n_angles) * (2 * np.pi / n_angles))
        radii = tuple(float(t) for t in 2.0 * np.arange(1, n_radii + 1) / n_radii)
        return cls(phis, radii)

    @property
    def shape(self) -> Tuple[int, int]:
        return len(self.center_angles), len(self.radii)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": "spherical", "center_angles": list(self.center_angles), "radii": list(self.radii)}


@dataclass(frozen=True)
class ConvolutionKernel:
    """Normalized nonnegative blur kernel with odd-sized, centered taps."""
    kind: str
    parameter: float
    taps: np.ndarray = field(compare=False, repr=False)

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 2:
            raise ValueError(f"Kernel taps must be 2D, got shape {taps.shape}")
        if np.any(taps < 0) or abs(taps.sum() - 1.0) > 1e-12:
            raise ValueError("Kernel taps must be nonnegative and sum to 1")

    @classmethod
    def gaussian(cls, sigma: float) -> "ConvolutionKernel":
        if sigma <= 0:
            raise ValueError(f"Gaussian sigma must be positive, got {sigma}")
        radius = int(math.ceil(3 * sigma))
        ax = np.arange(-radius, radius + 1)
        profile = np.exp(-0.5 * (ax / sigma) ** 2)
        taps = np.outer(profile, profile)
        return cls("gaussian", float(sigma), taps / taps.sum())

    @classmethod
    def motion(cls, length: int) -> "ConvolutionKernel":
        """Horizontal moving average over length pixels."""
        length = int(length)
        if length < 1:
            raise ValueError(f"Motion blur length must be positive, got {length}")
        # pad even lengths on the right so the taps stay centered
        width = length if length % 2 else length + 1
        taps = np.zeros((1, width))
        taps[0, :length] = 1.0 / length
        return cls("motion", float(length), taps)

    @classmethod
    def delta(cls) -> "ConvolutionKernel":
        return cls("delta", 0.0, np.ones((1, 1)))

    def transfer_function(self, shape: Tuple[int, int]) -> np.ndarray:
        """Periodic transfer function on an image grid of the given shape."""
        height, width = shape
        kh, kw = self.taps.shape
        if kh > height or kw > width:
            raise GeometryMismatchError(f"Kernel of size {self.taps.shape} is larger than image {shape}")
        padded = np.zeros((height, width))
        padded[:kh, :kw] = self.taps
        padded = np.roll(padded, shift=(-(kh // 2), -(kw // 2)), axis=(0, 1))
        return scipy.fft.fft2(padded)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "parameter": self.parameter, "taps_shape": list(self.taps.shape)}


@dataclass
class DataVolume:
    """Element of the data space together with its acquisition geometry."""
    kind: str
    values: np.ndarray
    geometry: Any = None

    def __post_init__(self):
        if self.kind not in ("radon", "spherical", "image"):
            raise ValueError(f"Unknown data kind '{self.kind}'")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.kind in ("radon", "spherical"):
            if self.geometry is None or self.values.shape != self.geometry.shape:
                expected = None if self.geometry is None else self.geometry.shape
                raise GeometryMismatchError(f"{self.kind} data of shape {self.values.shape} does not match geometry {expected}")

    def copy(self) -> "DataVolume":
        return DataVolume(self.kind, self.values.copy(), self.geometry)


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------

class ForwardOperator(ABC):
    """Linear operator A with its adjoint A*."""
    data_kind = "image"

    def __init__(self, image_shape: Tuple[int, ...]):
        self.image_shape = tuple(image_shape)

    @abstractmethod
    def apply(self, u: np.ndarray) -> np.ndarray:
        """Return A u as a data-space array."""

    @abstractmethod
    def adjoint(self, f: np.ndarray) -> np.ndarray:
        """Return A* f as an image-space array."""

    @property
    def geometry(self):
        return None

    def _check_image(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if u.shape != self.image_shape:
            raise GeometryMismatchError(f"Image of shape {u.shape} does not match operator domain {self.image_shape}")
        return u

    def forward(self, u: np.ndarray) -> DataVolume:
        return DataVolume(self.data_kind, self.apply(u), self.geometry)

    def describe(self) -> Dict[str, Any]:
        return {"operator": type(self).__name__, "image_shape": list(self.image_shape)}


class Identity(ForwardOperator):

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self._check_image(u).copy()

    def adjoint(self, f: np.ndarray) -> np.ndarray:
        return self._check_image(f).copy()


class MatrixOperator(ForwardOperator):
    """Explicit matrix acting on flattened images."""

    def __init__(self, matrix: np.ndarray, image_shape: Tuple[int, ...]):
        super().__init__(image_shape)
        self.matrix = np.asarray(matrix, dtype=np.float64)
        if self.matrix.shape[1] != int(np.prod(image_shape)):
            raise GeometryMismatchError(f"Matrix with {self.matrix.shape[1]} columns cannot act on images of shape {image_shape}")

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ self._check_image(u).ravel()

    def adjoint(self, f: np.ndarray) -> np.ndarray:
        return (self.matrix.T @ np.asarray(f, dtype=np.float64).ravel()).reshape(self.image_shape)


def _bilinear_entries(xs: np.ndarray, ys: np.ndarray, weights: np.ndarray, rows: np.ndarray,
                      shape: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Sparse-matrix entries sampling an image bilinearly at physical points.

    Args:
        xs, ys: physical sample coordinates (flat)
        weights: quadrature weight of each sample
        rows: matrix row receiving each sample
        shape: image shape (height, width)

    Returns:
        (rows, cols, values) of in-bounds contributions
    """
    height, width = shape
    dx, dy = 2.0 / width, 2.0 / height
    cols_f = (xs + 1.0) / dx - 0.5
    rows_f = (1.0 - ys) / dy - 0.5
    j0 = np.floor(cols_f).astype(np.int64)
    i0 = np.floor(rows_f).astype(np.int64)
    fj = cols_f - j0
    fi = rows_f - i0
    out_rows, out_cols, out_vals = [], [], []
    for di, dj, w in ((0, 0, (1 - fi) * (1 - fj)), (0, 1, (1 - fi) * fj),
                      (1, 0, fi * (1 - fj)), (1, 1, fi * fj)):
        ii = i0 + di
        jj = j0 + dj
        valid = (ii >= 0) & (ii < height) & (jj >= 0) & (jj < width) & (w > 0)
        out_rows.append(rows[valid])
        out_cols.append(ii[valid] * width + jj[valid])
        out_vals.append((w * weights)[valid])
    return np.concatenate(out_rows), np.concatenate(out_cols), np.concatenate(out_vals)


class SparseProjector(ForwardOperator):
    """Operator stored as a sparse matrix; the adjoint is its transpose."""

    def __init__(self, image_shape: Tuple[int, int], data_shape: Tuple[int, int], matrix: scipy.sparse.csr_matrix):
        super().__init__(image_shape)
        self.data_shape = data_shape
        self.matrix = matrix
        self.matrix_t = matrix.T.tocsr()

    def apply(self, u: np.ndarray) -> np.ndarray:
        u = self._check_image(u)
        return (self.matrix @ u.ravel()).reshape(self.data_shape)

    def adjoint(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=np.float64)
        if f.shape != self.data_shape:
            raise GeometryMismatchError(f"Data of shape {f.shape} does not match operator range {self.data_shape}")
        return (self.matrix_t @ f.ravel()).reshape(self.image_shape)


class RadonTransform(SparseProjector):
    """Ray-driven parallel-beam projector with bilinear interpolation."""
    data_kind = "radon"

    def __init__(self, geometry: RadonGeometry, image_shape: Tuple[int, int]):
        if len(image_shape) != 2:
            raise GeometryMismatchError(f"Radon transform acts on single-channel images, got shape {image_shape}")
        self._geometry = geometry
        height, width = image_shape
        dx, dy = pixel_size(image_shape)
        n_angles, n_det = geometry.shape
        # the finer pixel side sets the sample spacing; each sample then
        # counts step / dx pixel widths of ray length
        step = min(dx, dy)
        n_steps = 2 * int(math.ceil(math.sqrt(2.0) / step)) + 1
        steps = (np.arange(n_steps) - (n_steps - 1) / 2.0) * step
        sample_weight = step / dx
        offsets = np.asarray(geometry.offsets) * dx
        rows_all, cols_all, vals_all = [], [], []
        for a, theta in enumerate(geometry.angles):
            c, s = math.cos(theta), math.sin(theta)
            # point = s * (cos, sin) + t * (-sin, cos)
            xs = offsets[:, None] * c - steps[None, :] * s
            ys = offsets[:, None] * s + steps[None, :] * c
            rows = np.repeat(a * n_det + np.arange(n_det), n_steps)
            r, cidx, v = _bilinear_entries(xs.ravel(), ys.ravel(), np.full(xs.size, sample_weight), rows, image_shape)
            rows_all.append(r)
            cols_all.append(cidx)
            vals_all.append(v)
        matrix = scipy.sparse.coo_matrix(
            (np.concatenate(vals_all), (np.concatenate(rows_all), np.concatenate(cols_all))),
            shape=(n_angles * n_det, height * width),
        ).tocsr()
        logger.debug(f"Radon projector {n_angles}x{n_det} on {image_shape}: {matrix.nnz} nonzeros")
        super().__init__(image_shape, geometry.shape, matrix)

    @property
    def geometry(self) -> RadonGeometry:
        return self._geometry

    def describe(self) -> Dict[str, Any]:
        return {**super().describe(), "geometry": self._geometry.to_dict()}


class SphericalMeanTransform(SparseProjector):
    """Circle integrals around centers on the unit circle."""
    data_kind = "spherical"

    def __init__(self, geometry: SphericalGeometry, image_shape: Tuple[int, int]):
        if len(image_shape) != 2:
            raise GeometryMismatchError(f"Spherical transform acts on single-channel images, got shape {image_shape}")
        self._geometry = geometry
        height, width = image_shape
        dx, _ = pixel_size(image_shape)
        n_centers, n_radii = geometry.shape
        rows_all, cols_all, vals_all = [], [], []
        for a, phi in enumerate(geometry.center_angles):
            cx, cy = math.cos(phi), math.sin(phi)
            for r, t in enumerate(geometry.radii):
                n_samples = max(8, int(math.ceil(2 * math.pi * t / dx)))
                zeta = (np.arange(n_samples) + 0.5) * (2 * math.pi / n_samples)
                xs = cx + t * np.cos(zeta)
                ys = cy + t * np.sin(zeta)
                weights = np.full(n_samples, 2 * math.pi / n_samples)
                rows = np.full(n_samples, a * n_radii + r)
                ri, ci, v = _bilinear_entries(xs, ys, weights, rows, image_shape)
                rows_all.append(ri)
                cols_all.append(ci)
                vals_all.append(v)
        matrix = scipy.sparse.coo_matrix(
            (np.concatenate(vals_all), (np.concatenate(rows_all), np.concatenate(cols_all))),
            shape=(n_centers * n_radii, height * width),
        ).tocsr()
        logger.debug(f"Spherical projector {n_centers}x{n_radii} on {image_shape}: {matrix.nnz} nonzeros")
        super().__init__(image_shape, geometry.shape, matrix)

    @property
    def geometry(self) -> SphericalGeometry:
        return self._geometry

    def describe(self) -> Dict[str, Any]:
        return {**super().describe(), "geometry": self._geometry.to_dict()}


class Convolution(ForwardOperator):
    """Periodic convolution acting channelwise."""

    def __init__(self, kernel: ConvolutionKernel, image_shape: Tuple[int, ...]):
        super().__init__(image_shape)
        self.kernel = kernel
        self.transfer = kernel.transfer_function(tuple(image_shape[:2]))

    def _filter(self, u: np.ndarray, transfer: np.ndarray) -> np.ndarray:
        if u.ndim == 3:
            transfer = transfer[:, :, np.newaxis]
        spectrum = scipy.fft.fft2(u, axes=(0, 1))
        return np.real(scipy.fft.ifft2(spectrum * transfer, axes=(0, 1)))

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self._filter(self._check_image(u), self.transfer)

    def adjoint(self, f: np.ndarray) -> np.ndarray:
        return self._filter(self._check_image(f), np.conj(self.transfer))

    def describe(self) -> Dict[str, Any]:
        return {**super().describe(), "kernel": self.kernel.to_dict()}


# ---------------------------------------------------------------------------
# Functional interface
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def radon_operator(geometry: RadonGeometry, image_shape: Tuple[int, int]) -> RadonTransform:
    return RadonTransform(geometry, tuple(image_shape))


@lru_cache(maxsize=8)
def spherical_operator(geometry: SphericalGeometry, image_shape: Tuple[int, int]) -> SphericalMeanTransform:
    return SphericalMeanTransform(geometry, tuple(image_shape))


def _radon_values(f, kind: str) -> np.ndarray:
    if isinstance(f, DataVolume):
        if f.kind != kind:
            raise GeometryMismatchError(f"Expected {kind} data, got {f.kind}")
        return f.values
    return np.asarray(f, dtype=np.float64)


def radon_apply(u: np.ndarray, geometry: RadonGeometry) -> DataVolume:
    u = as_image(u)
    if u.ndim != 2:
        raise GeometryMismatchError(f"Radon transform needs a single-channel image, got shape {u.shape}")
    return radon_operator(geometry, u.shape).forward(u)


def radon_adjoint(f, geometry: RadonGeometry, image_shape: Tuple[int, int]) -> np.ndarray:
    return radon_operator(geometry, tuple(image_shape)).adjoint(_radon_values(f, "radon"))


def spherical_apply(u: np.ndarray, geometry: SphericalGeometry) -> DataVolume:
    u = as_image(u)
    if u.ndim != 2:
        raise GeometryMismatchError(f"Spherical transform needs a single-channel image, got shape {u.shape}")
    return spherical_operator(geometry, u.shape).forward(u)


def spherical_adjoint(f, geometry: SphericalGeometry, image_shape: Tuple[int, int]) -> np.ndarray:
    return spherical_operator(geometry, tuple(image_shape)).adjoint(_radon_values(f, "spherical"))


def convolve_apply(u: np.ndarray, kernel: ConvolutionKernel) -> DataVolume:
    u = as_image(u)
    return Convolution(kernel, u.shape).forward(u)


def convolve_adjoint(f, kernel: ConvolutionKernel) -> np.ndarray:
    values = _radon_values(f, "image")
    return Convolution(kernel, values.shape).adjoint(values)


def build_operator(data: DataVolume, image_shape: Tuple[int, ...],
                   kernel: Optional[ConvolutionKernel] = None) -> ForwardOperator:
    """Operator matching the geometry of a data volume."""
    if data.kind == "radon":
        return radon_operator(data.geometry, tuple(image_shape))
    if data.kind == "spherical":
        return spherical_operator(data.geometry, tuple(image_shape))
    if kernel is not None:
        return Convolution(kernel, image_shape)
    return Identity(image_shape)
