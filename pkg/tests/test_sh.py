import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semsplat import sh
from semsplat.errors import DataError


def unit(v):
    return np.asarray(v, dtype=np.float64) / np.linalg.norm(v)


def sphere_quadrature(n_theta=16, n_phi=32):
    """Exact spherical quadrature for the basis products (Gauss-Legendre in
    cos(theta) x uniform in phi)."""
    nodes, weights = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    u, p = np.meshgrid(nodes, phi, indexing="ij")
    s = np.sqrt(np.clip(1.0 - u * u, 0.0, None))
    dirs = np.stack([s * np.cos(p), s * np.sin(p), u], axis=-1)
    w = weights[:, None] * (2.0 * np.pi / n_phi) * np.ones_like(p)
    return dirs.reshape(-1, 3), w.reshape(-1)


def test_constants_match_first_principles():
    pi = math.pi
    assert sh.SH_C0 == pytest.approx(0.5 / math.sqrt(pi), abs=1e-16)
    assert sh.SH_C1 == pytest.approx(math.sqrt(3.0 / (4.0 * pi)), abs=1e-15)
    assert sh.SH_C2_XY == pytest.approx(0.5 * math.sqrt(15.0 / pi), abs=1e-15)
    assert sh.SH_C2_Z2 == pytest.approx(0.25 * math.sqrt(5.0 / pi), abs=1e-15)
    assert sh.SH_C2_X2Y2 == pytest.approx(0.25 * math.sqrt(15.0 / pi), abs=1e-15)
    assert sh.SH_C3_A == pytest.approx(0.25 * math.sqrt(35.0 / (2.0 * pi)), abs=1e-15)
    assert sh.SH_C3_XYZ == pytest.approx(0.5 * math.sqrt(105.0 / pi), abs=1e-14)
    assert sh.SH_C3_B == pytest.approx(0.25 * math.sqrt(21.0 / (2.0 * pi)), abs=1e-15)
    assert sh.SH_C3_Z3 == pytest.approx(0.25 * math.sqrt(7.0 / pi), abs=1e-15)
    assert sh.SH_C3_ZX2Y2 == pytest.approx(0.25 * math.sqrt(105.0 / pi), abs=1e-15)


def test_basis_size():
    assert [sh.basis_size(d) for d in range(4)] == [1, 4, 9, 16]
    with pytest.raises(DataError):
        sh.basis_size(4)
    with pytest.raises(DataError):
        sh.basis_size(-1)


def test_orthonormality_by_quadrature():
    # the defining property of the basis; quadrature is exact for these
    # polynomial products, so 1e-12 is pure rounding headroom
    dirs, w = sphere_quadrature()
    basis = sh.eval_basis(dirs, 3)
    gram = np.einsum("p,pa,pb->ab", w, basis, basis)
    assert np.abs(gram - np.eye(16)).max() < 1e-12


def test_lower_degrees_are_prefixes():
    d = unit([0.3, -0.5, 0.8])
    full = sh.eval_basis(d, 3)
    for degree in range(4):
        k = (degree + 1) ** 2
        np.testing.assert_array_equal(sh.eval_basis(d, degree), full[:k])


def test_closed_form_at_poles_and_axes():
    z = np.array([0.0, 0.0, 1.0])
    b = sh.eval_basis(z, 3)
    expected = np.zeros(16)
    expected[0] = sh.SH_C0
    expected[2] = sh.SH_C1
    expected[6] = sh.SH_C2_Z2 * 2.0
    expected[12] = sh.SH_C3_Z3 * 2.0
    np.testing.assert_allclose(b, expected, atol=1e-15)

    x = np.array([1.0, 0.0, 0.0])
    b = sh.eval_basis(x, 3)
    expected = np.zeros(16)
    expected[0] = sh.SH_C0
    expected[3] = sh.SH_C1
    expected[6] = -sh.SH_C2_Z2
    expected[8] = sh.SH_C2_X2Y2
    expected[13] = -sh.SH_C3_B
    expected[15] = sh.SH_C3_A
    np.testing.assert_allclose(b, expected, atol=1e-15)


def test_batched_evaluation_matches_single(rng):
    dirs = rng.normal(size=(5, 7, 3))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    batched = sh.eval_basis(dirs, 2)
    assert batched.shape == (5, 7, 9)
    for i in range(5):
        for j in range(7):
            np.testing.assert_array_equal(batched[i, j], sh.eval_basis(dirs[i, j], 2))


def test_zero_direction_rejected():
    with pytest.raises(DataError):
        sh.eval_basis(np.zeros(3), 1)


def test_non_unit_direction_warns_and_normalizes():
    d = np.array([0.0, 0.0, 2.0])
    with pytest.warns(UserWarning):
        b = sh.eval_basis(d, 1)
    np.testing.assert_array_equal(b, sh.eval_basis(np.array([0.0, 0.0, 1.0]), 1))


@given(st.integers(0, 2**32 - 1), st.integers(0, 3))
def test_gradient_matches_projected_finite_difference(seed, degree):
    # the formal polynomial gradient, projected tangentially, must equal
    # the derivative of basis(normalize(d + t e_i))
    rng = np.random.default_rng(seed)
    d = unit(rng.normal(size=3))
    grad = sh.eval_basis_grad(d, degree)
    proj = np.eye(3) - np.outer(d, d)
    analytic = grad @ proj
    h = 1e-6
    for i in range(3):
        dp = unit(d + h * np.eye(3)[i])
        dm = unit(d - h * np.eye(3)[i])
        fd = (sh.eval_basis(dp, degree) - sh.eval_basis(dm, degree)) / (2.0 * h)
        np.testing.assert_allclose(analytic[:, i], fd, atol=5e-9)


def test_grad_shape():
    d = unit([1.0, 2.0, 3.0])
    assert sh.eval_basis_grad(d, 3).shape == (16, 3)
    dirs = np.tile(d, (4, 1))
    assert sh.eval_basis_grad(dirs, 1).shape == (4, 4, 3)
