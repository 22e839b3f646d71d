import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from thermogate import kernels
from thermogate._sg_py import fm_scalar
from thermogate.errors import NumericalError, ValidationError
from thermogate.models import ControlField, guess_field
from thermogate.name_thermal import BathSpec, LiouvilleGenerator
from thermogate.operators import choi_cptp_check, random_hermitian, commutator_superop
from thermogate.propagator import (
    PropagatorConfig,
    SemiGlobal,
    chebyshev_points,
    chebyshev_sample_source,
    chebyshev_taylor_matrix,
    exact_zoh_adjoint,
    exact_zoh_trajectory,
    fm_apply,
    propagate_generator,
    propagate_map,
    reference_step_expm,
)


def test_chebyshev_points_inside_step():
    s = chebyshev_points(7, 0.1)
    assert np.all(np.diff(s) > 0) and s[0] > 0 and s[-1] < 0.1


@pytest.mark.parametrize("m", [3, 7, 9])
def test_taylor_matrix_exact_for_polynomials(m, rng):
    dt = 0.1
    c = rng.normal(size=m)  # source sum c_n s^n / n!
    s = chebyshev_points(m, dt)
    from math import factorial
    samples = np.array([sum(c[n] * x**n / factorial(n) for n in range(m)) for x in s])
    fit = chebyshev_sample_source(samples, dt)
    x = np.linspace(0, dt, 13)
    val = lambda cs: np.array([sum(cs[n] * t**n / factorial(n) for n in range(m)) for t in x])
    # monomial coefficients amplify roundoff by ~ n!/dt^n; values stay accurate
    assert np.max(np.abs(val(fit) - val(c))) <= 1e-10
    assert chebyshev_taylor_matrix(m, dt).shape == (m, m)


@given(st.complex_numbers(max_magnitude=30), st.floats(0.0, 1.0), st.integers(0, 9))
@settings(max_examples=80)
def test_fm_scalar_definition(z, t, m):
    from math import factorial
    got = complex(fm_scalar(z, t, m))
    zt = z * t
    if abs(z) > 1e-3 and abs(zt) > 1.0:
        ref = (np.exp(zt) - sum(zt**j / factorial(j) for j in range(m))) / z**m
        assert abs(got - ref) <= 1e-9 * max(1.0, abs(ref))
    # f_m(z, t) = t^m sum_j (zt)^j / (j + m)!
    ref2 = t**m * sum(zt**j / factorial(j + m) for j in range(80))
    if abs(zt) < 6:
        assert abs(got - ref2) <= 1e-12 * max(1.0, abs(ref2))


def test_fm_apply_matches_quadrature(rng):
    # u(t) = int_0^t e^{A(t-s)} sum_n c_n s^n/n! ds
    d = 4
    a = commutator_superop(random_hermitian(2, rng)) - 0.1 * np.eye(d)
    coeffs = rng.normal(size=(3, d)) + 0j
    t = 0.1
    from scipy.integrate import quad_vec
    def integrand(s):
        src = coeffs[0] + coeffs[1] * s + coeffs[2] * s**2 / 2
        return expm(a * (t - s)) @ src
    ref, _ = quad_vec(integrand, 0, t, epsabs=1e-14, epsrel=1e-13)
    assert np.allclose(fm_apply(a, t, coeffs, K=4), ref, atol=1e-13)


def test_reference_step_guard():
    with pytest.raises(NumericalError):
        reference_step_expm(np.full((4, 4), 1e9), 1.0)


def test_config_validation():
    with pytest.raises(ValidationError):
        PropagatorConfig(dt=0.0)
    with pytest.raises(ValidationError):
        PropagatorConfig(M=1)
    with pytest.raises(ValidationError):
        PropagatorConfig(method="rk4")


@pytest.mark.parametrize("bath", [BathSpec(0.0, 1.0), BathSpec(1e-2, 0.5), BathSpec(1e-2, 0.5, gamma_p=1e-3)])
def test_semi_global_matches_exact_factorization(qutrit, short_qutrit_field, bath):
    gen = LiouvilleGenerator(qutrit, short_qutrit_field, bath)
    exact = exact_zoh_trajectory(gen).final
    sg = propagate_map(qutrit, short_qutrit_field, bath, PropagatorConfig(), generator=gen)
    assert np.max(np.abs(sg.final - exact)) <= 1e-10
    assert np.all(sg.inner_iters >= 1)


def test_semi_global_matches_fine_reference(qutrit, short_qutrit_field):
    bath = BathSpec(1e-4, 0.5)
    sg = propagate_map(qutrit, short_qutrit_field, bath, PropagatorConfig()).final
    ref = propagate_map(qutrit, short_qutrit_field, bath, PropagatorConfig(method="reference")).final
    assert np.max(np.abs(sg - ref)) <= 1e-8


def test_backends_agree(qutrit, short_qutrit_field):
    if "cython" not in kernels.AVAILABLE:
        pytest.skip("compiled kernels not built")
    bath = BathSpec(1e-2, 0.5)
    a = propagate_map(qutrit, short_qutrit_field, bath, PropagatorConfig(), backend="python").final
    b = propagate_map(qutrit, short_qutrit_field, bath, PropagatorConfig(), backend="cython").final
    assert np.max(np.abs(a - b)) <= 1e-12


def test_adjoint_consistency(qutrit, short_qutrit_field, hadamard):
    bath = BathSpec(1e-2, 0.5)
    cfg = PropagatorConfig()
    gen = LiouvilleGenerator(qutrit, short_qutrit_field, bath)
    fwd = propagate_map(qutrit, short_qutrit_field, bath, cfg, generator=gen)
    adj = propagate_map(qutrit, short_qutrit_field, bath, cfg, "adjoint", target=hadamard.superop, generator=gen)
    want = np.trace(hadamard.superop.conj().T @ fwd.final)
    for k in (0, 33, 200):
        assert np.trace(adj.maps[k] @ fwd.maps[k]) == pytest.approx(want, abs=1e-10)
    ex = exact_zoh_adjoint(gen, hadamard.superop)
    assert np.max(np.abs(ex.maps - adj.maps)) <= 1e-10


def test_maps_are_cptp(qutrit, short_qutrit_field):
    traj = propagate_map(qutrit, short_qutrit_field, BathSpec(0.05, 1.0), PropagatorConfig())
    for lam in traj.maps[::50]:
        assert choi_cptp_check(lam).ok


def test_grid_mismatch(qutrit, short_qutrit_field):
    with pytest.raises(ValidationError):
        propagate_map(qutrit, short_qutrit_field, BathSpec(), PropagatorConfig(dt=0.05))


def test_non_convergence_is_reported(rng):
    h = random_hermitian(3, rng, scale=400.0)
    gens = np.broadcast_to(commutator_superop(h), (8, 9, 9))
    cfg = PropagatorConfig(dt=1.0, M=7, K=3, max_inner_iters=2, inner_tol=1e-14)

    def step_gen(k, s):
        # strongly time dependent within the step
        return gens * (1 + 50 * np.asarray(s)[:, None, None])

    with pytest.raises(NumericalError):
        propagate_generator(step_gen, 3, np.eye(9, dtype=complex), cfg)


def test_constant_generator_exact(rng):
    l = commutator_superop(random_hermitian(3, rng)) - 0.05 * np.eye(9)
    cfg = PropagatorConfig()
    out = propagate_generator(lambda k, s: np.broadcast_to(l, (len(s), 9, 9)), 20, np.eye(9, dtype=complex), cfg)
    assert np.allclose(out.final, expm(l * 2.0), atol=1e-12)
