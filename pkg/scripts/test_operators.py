#!/usr/bin/env python3
"""
Tests for forward operators and adjoints
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from operators import (
    Convolution, ConvolutionKernel, DataVolume, GeometryMismatchError, Identity,
    MatrixOperator, RadonGeometry, SphericalGeometry, build_operator, convolve_adjoint,
    convolve_apply, radon_adjoint, radon_apply, radon_operator, spherical_adjoint,
    spherical_apply,
)


def _dot_test(apply, adjoint, image_shape, data_shape, seed=0):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=image_shape)
    f = rng.normal(size=data_shape)
    lhs = float(np.vdot(apply(u), f))
    rhs = float(np.vdot(u, adjoint(f)))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs))


def test_radon_adjoint_contract():
    geometry = RadonGeometry.uniform(30, 64)
    error = _dot_test(lambda u: radon_apply(u, geometry).values,
                      lambda f: radon_adjoint(f, geometry, (64, 64)), (64, 64), geometry.shape)
    assert error < 1e-6


def test_spherical_adjoint_contract():
    geometry = SphericalGeometry.uniform(16, 128)
    error = _dot_test(lambda u: spherical_apply(u, geometry).values,
                      lambda f: spherical_adjoint(f, geometry, (64, 64)), (64, 64), geometry.shape)
    assert error < 1e-6


@pytest.mark.parametrize("kernel", [ConvolutionKernel.gaussian(1.5), ConvolutionKernel.motion(15)])
def test_convolution_adjoint_contract(kernel):
    error = _dot_test(lambda u: convolve_apply(u, kernel).values,
                      lambda f: convolve_adjoint(f, kernel), (32, 32), (32, 32))
    assert error < 1e-9


def test_convolution_adjoint_contract_color():
    operator = Convolution(ConvolutionKernel.motion(6), (24, 32, 3))
    error = _dot_test(operator.apply, operator.adjoint, (24, 32, 3), (24, 32, 3))
    assert error < 1e-9


def test_radon_is_linear():
    geometry = RadonGeometry.uniform(12, 32)
    rng = np.random.default_rng(1)
    u, w = rng.normal(size=(32, 32)), rng.normal(size=(32, 32))
    combined = radon_apply(2.0 * u - 3.0 * w, geometry).values
    separate = 2.0 * radon_apply(u, geometry).values - 3.0 * radon_apply(w, geometry).values
    assert np.allclose(combined, separate, atol=1e-10)


def test_radon_of_impulse_is_a_sinusoid():
    n = 64
    geometry = RadonGeometry.uniform(36, n)
    image = np.zeros((n, n))
    i, j = 20, 45
    image[i, j] = 1.0
    dx = 2.0 / n
    x0, y0 = -1 + (j + 0.5) * dx, 1 - (i + 0.5) * dx
    sinogram = radon_apply(image, geometry).values
    offsets = np.asarray(geometry.offsets) * dx
    for a, theta in enumerate(geometry.angles):
        peak = offsets[np.argmax(sinogram[a])]
        assert abs(peak - (x0 * math.cos(theta) + y0 * math.sin(theta))) <= dx


def test_radon_of_radial_bump_is_angle_independent():
    n = 64
    rows, cols = np.mgrid[0:n, 0:n]
    center = (n - 1) / 2.0
    bump = np.exp(-((rows - center) ** 2 + (cols - center) ** 2) / (2 * 10.0 ** 2))
    sinogram = radon_apply(bump, RadonGeometry.uniform(18, n)).values
    spread = np.max(np.abs(sinogram - sinogram.mean(axis=0)))
    assert spread <= 2e-2 * sinogram.max()


def test_radon_line_integral_in_pixel_units():
    # a horizontal ray through a constant image measures its length in pixels
    n = 32
    geometry = RadonGeometry((math.pi / 2,), (-0.5, 0.5))
    sinogram = radon_apply(np.ones((n, n)), geometry).values
    assert sinogram[0, 0] == pytest.approx(n, abs=1.0)


def test_radon_of_gaussian_on_rectangular_pixels():
    # 16 columns by 40 rows: pixels are taller than wide in physical units
    height, width, sigma = 40, 16, 0.3
    dx = 2.0 / width
    ys = 1 - (np.arange(height) + 0.5) * 2.0 / height
    xs = -1 + (np.arange(width) + 0.5) * dx
    gaussian = np.exp(-(xs[None, :] ** 2 + ys[:, None] ** 2) / (2 * sigma ** 2))
    offsets = np.arange(-6, 7, dtype=np.float64)
    geometry = RadonGeometry((0.0, math.pi / 6, math.pi / 4, math.pi / 2), tuple(offsets))
    sinogram = radon_apply(gaussian, geometry).values
    expected = math.sqrt(2 * math.pi) * sigma * np.exp(-(offsets * dx) ** 2 / (2 * sigma ** 2)) / dx
    for a in range(len(geometry.angles)):
        assert np.allclose(sinogram[a], expected, rtol=0.05, atol=0.05)


def test_full_circle_of_ones_integrates_to_two_pi():
    geometry = SphericalGeometry((math.pi / 4,), (0.1, 0.2, 0.25))
    values = spherical_apply(np.ones((64, 64)), geometry).values
    assert values[0] == pytest.approx([2 * math.pi] * 3, rel=1e-9)


def test_delta_kernel_is_identity():
    rng = np.random.default_rng(2)
    u = rng.normal(size=(16, 16))
    assert np.allclose(convolve_apply(u, ConvolutionKernel.delta()).values, u, atol=1e-12)


def test_kernel_taps_are_normalized():
    for kernel in (ConvolutionKernel.gaussian(2.0), ConvolutionKernel.motion(4), ConvolutionKernel.motion(15)):
        assert kernel.taps.sum() == pytest.approx(1.0)
        assert kernel.taps.shape[0] % 2 == 1 and kernel.taps.shape[1] % 2 == 1


def test_motion_blur_averages_horizontally():
    u = np.zeros((8, 16))
    u[:, 8] = 3.0
    blurred = convolve_apply(u, ConvolutionKernel.motion(3)).values
    assert blurred[0, 7:10].tolist() == pytest.approx([1.0, 1.0, 1.0])
    assert blurred.sum() == pytest.approx(u.sum())


def test_kernel_larger_than_image_is_rejected():
    with pytest.raises(GeometryMismatchError):
        Convolution(ConvolutionKernel.motion(15), (8, 8))


def test_geometry_validation():
    with pytest.raises(ValueError):
        RadonGeometry((0.5, 0.1), (-1.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        RadonGeometry((0.0, math.pi), (-1.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        RadonGeometry((0.0,), (-1.0, 0.0, 2.0))
    with pytest.raises(ValueError):
        SphericalGeometry((0.0,), (0.0, 1.0))
    with pytest.raises(ValueError):
        SphericalGeometry((0.0,), (2.5,))


def test_uniform_geometries():
    radon = RadonGeometry.uniform(7, 128)
    assert radon.shape[0] == 7
    assert radon.shape[1] % 2 == 1
    assert radon.detector_spacing == pytest.approx(1.0)
    spherical = SphericalGeometry.uniform(7, 256)
    assert spherical.shape == (7, 256)
    assert spherical.radii[-1] == pytest.approx(2.0)


def test_data_volume_checks_shape():
    geometry = RadonGeometry.uniform(4, 16)
    with pytest.raises(GeometryMismatchError):
        DataVolume("radon", np.zeros((5, geometry.shape[1])), geometry)
    with pytest.raises(ValueError):
        DataVolume("sinogram", np.zeros(3))


def test_adjoint_rejects_wrong_data_shape():
    operator = radon_operator(RadonGeometry.uniform(4, 16), (16, 16))
    with pytest.raises(GeometryMismatchError):
        operator.adjoint(np.zeros((3, 3)))
    with pytest.raises(GeometryMismatchError):
        operator.apply(np.zeros((8, 8)))


def test_build_operator_follows_data_kind():
    geometry = RadonGeometry.uniform(4, 16)
    data = DataVolume("radon", np.zeros(geometry.shape), geometry)
    assert build_operator(data, (16, 16)).geometry == geometry
    image_data = DataVolume("image", np.zeros((16, 16)))
    assert isinstance(build_operator(image_data, (16, 16)), Identity)
    assert isinstance(build_operator(image_data, (16, 16), ConvolutionKernel.gaussian(1.0)), Convolution)


def test_matrix_operator_adjoint():
    rng = np.random.default_rng(4)
    operator = MatrixOperator(rng.normal(size=(10, 12)), (3, 4))
    error = _dot_test(operator.apply, operator.adjoint, (3, 4), (10,))
    assert error < 1e-12
