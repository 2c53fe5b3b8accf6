import numpy as np
import pytest

from robust_debias import NonFiniteEvaluation
from robust_debias.stein import (SphereField, check_first_order, check_normalized_bounds,
                                 check_poincare, check_second_order, constant_field, draw,
                                 identity_field, linear_field, projector, psi_plugin_field,
                                 sample_sphere, tangential_jacobian)
from robust_debias.stein import _fd_jacobians


def test_sample_sphere_moments():
    n, R, m = 7, 2.5, 40_000
    Z = sample_sphere(n, R, np.random.default_rng(0), size=m)
    np.testing.assert_allclose(np.linalg.norm(Z, axis=1), R, rtol=1e-12)
    se = Z.std(axis=0, ddof=1) / np.sqrt(m)
    assert np.all(np.abs(Z.mean(axis=0)) <= 3 * se)
    sq = Z[:, 0] ** 2
    assert abs(sq.mean() - R**2 / n) <= 3 * sq.std(ddof=1) / np.sqrt(m)
    with pytest.raises(ValueError):
        sample_sphere(2)


def test_tangential_jacobian_examples(rng):
    n = 6
    z = sample_sphere(n, 1.0, rng)
    T = tangential_jacobian(identity_field(n), z)
    np.testing.assert_allclose(T, projector(z), atol=1e-14)
    assert np.trace(T) == pytest.approx(n - 1)
    np.testing.assert_allclose(tangential_jacobian(constant_field(np.ones(n)), z), 0.0)
    A = rng.standard_normal((n, n))
    fd = tangential_jacobian(linear_field(A), z)
    exact = tangential_jacobian(linear_field(A, analytic=True), z)
    np.testing.assert_allclose(exact, A @ projector(z), atol=1e-14)
    np.testing.assert_allclose(fd, exact, atol=1e-6)
    with pytest.raises(ValueError):
        tangential_jacobian(identity_field(n), 2 * z)


def test_fd_radial_extension_is_tangential(rng):
    n = 5
    fld = SphereField(n, 1.0, lambda Z: np.sin(Z))
    Z = sample_sphere(n, 1.0, rng, size=4)
    J = _fd_jacobians(fld, Z)
    # the radial extension is constant along z, so J z = 0
    np.testing.assert_allclose(np.einsum("mkl,ml->mk", J, Z), 0.0, atol=1e-8)


def test_non_finite_field(rng):
    bad = SphereField(4, 1.0, lambda Z: np.where(Z > 0, np.nan, Z))
    with pytest.raises(NonFiniteEvaluation):
        draw(bad, 100, seed=0)


def test_first_order_identity_exact():
    rep = check_first_order(identity_field(10, 2.0), samples=2000, seed=0)
    assert rep.lhs_estimate == pytest.approx(4.0) and rep.rhs_estimate == pytest.approx(4.0)
    assert rep.passed and rep.mc_se_lhs >= 0


def test_first_order_linear(rng):
    n = 12
    A = rng.standard_normal((n, n))
    rep = check_first_order(linear_field(A), samples=20_000, seed=1)
    assert rep.passed
    target = np.trace(A) / n
    assert abs(rep.lhs_estimate - target) <= 3 * rep.mc_se_lhs
    assert abs(rep.rhs_estimate - target) <= 3 * rep.mc_se_rhs


def test_poincare_cases(rng):
    n = 10
    assert check_poincare(constant_field(np.arange(n)), samples=500).lhs_estimate == 0.0
    rep = check_poincare(identity_field(n), samples=5000, seed=2)
    assert rep.passed and rep.rhs_estimate == pytest.approx(1.0 * (n - 1) / (n - 2))
    assert check_poincare(linear_field(rng.standard_normal((n, n))), samples=5000).passed


def test_second_order_constant_and_identity():
    n, R = 8, 1.5
    c = np.linspace(-1, 1, n)
    rep = check_second_order(constant_field(c, R), samples=20_000, seed=3)
    assert rep.rhs_estimate == pytest.approx(n * (c @ c) / R**2)
    assert rep.passed
    rep = check_second_order(identity_field(n, R), samples=1000, seed=3)
    assert rep.lhs_estimate == pytest.approx(1.0) and rep.rhs_estimate == pytest.approx(1.0)
    assert rep.extra["inequality"]["passed"]


def test_seed_reproducible(rng):
    A = rng.standard_normal((6, 6))
    a = check_second_order(linear_field(A), samples=3000, seed=11)
    b = check_second_order(linear_field(A), samples=3000, seed=11)
    assert a.to_dict() == b.to_dict()


def test_normalized_bounds():
    n = 10
    rep = check_normalized_bounds(identity_field(n), samples=3000, seed=0)
    assert rep.passed
    # f = z / R so xi = R - R (n - 1) / n = R / n, and E[f] = 0
    rep = check_normalized_bounds(constant_field(np.ones(n)), samples=500)
    assert rep.passed and rep.extra["rejected"] == 0
    zero = SphereField(n, 1.0, lambda Z: np.where(Z[:, :1] > 0, Z, 0.0))
    rep = check_normalized_bounds(zero, samples=1000, seed=0)
    assert 0 < rep.extra["rejected"] < 1000


def test_psi_plugin_jacobian_matches_refits():
    fld = psi_plugin_field(n=20, p=6, seed=4)
    Z = sample_sphere(20, 1.0, np.random.default_rng(9), size=3)
    _, T = fld.value_and_jacobian(Z)
    J_fd = _fd_jacobians(fld, Z, h=1e-6)
    P = np.eye(20)[None] - Z[:, :, None] * Z[:, None, :]
    np.testing.assert_allclose(T, J_fd @ P, atol=1e-6)


def test_psi_plugin_first_order_small():
    fld = psi_plugin_field(n=20, p=6, seed=4)
    assert check_first_order(fld, samples=2000, seed=0).passed
