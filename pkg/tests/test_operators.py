import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from thermogate.errors import ShapeError, ValidationError
from thermogate.operators import (
    choi_cptp_check,
    commutator_superop,
    dim_of_superop,
    embedded_gellmann,
    gellmann_basis,
    gkls_superop,
    hs_inner,
    phase_noise_superop,
    random_hermitian,
    random_unitary,
    sandwich_superop,
    trace_residual,
    unitary_superop,
    unvectorize,
    vectorize,
)

seeds = st.integers(0, 2**32 - 1)
dims = st.integers(2, 5)


@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_gellmann_orthonormal_traceless(d):
    g = gellmann_basis(d)
    assert len(g) == d * d - 1
    gram = np.array([[np.trace(a @ b) for b in g] for a in g])
    assert np.allclose(gram, 2 * np.eye(len(g)), atol=1e-14)
    for x in g:
        assert abs(np.trace(x)) < 1e-14
        assert np.allclose(x, x.conj().T)


def test_qutrit_gellmann_ordering():
    g = gellmann_basis(3)
    assert np.allclose(g[0], [[0, 1, 0], [1, 0, 0], [0, 0, 0]])
    assert np.allclose(g[2], np.diag([1, -1, 0]))
    assert np.allclose(g[3], [[0, 0, 1], [0, 0, 0], [1, 0, 0]])
    assert np.allclose(g[5], [[0, 0, 0], [0, 0, 1], [0, 1, 0]])
    assert np.allclose(g[7], np.diag([1, 1, -2]) / np.sqrt(3))


def test_embedded_gellmann():
    x = embedded_gellmann(5, 0, 3, "x")
    assert x[0, 3] == 1 and x[3, 0] == 1 and np.count_nonzero(x) == 2


@given(seeds, dims)
def test_vectorize_roundtrip(seed, d):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    assert np.array_equal(unvectorize(vectorize(x)), x)
    assert vectorize(x)[1] == x[0, 1]  # row-stacked


@given(seeds, dims)
def test_sandwich_superop_matches_product(seed, d):
    rng = np.random.default_rng(seed)
    a, b, x = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)) for _ in range(3))
    assert np.allclose(sandwich_superop(a, b) @ vectorize(x), vectorize(a @ x @ b))


@given(seeds, dims)
def test_hs_inner_is_vdot(seed, d):
    rng = np.random.default_rng(seed)
    a, b = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)) for _ in range(2))
    assert np.isclose(hs_inner(a, b), np.trace(a.conj().T @ b))


@given(seeds, dims)
@settings(max_examples=30)
def test_commutator_superop(seed, d):
    rng = np.random.default_rng(seed)
    h = random_hermitian(d, rng)
    x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    assert np.allclose(commutator_superop(h) @ vectorize(x), vectorize(-1j * (h @ x - x @ h)))


def test_commutator_rejects_non_hermitian():
    with pytest.raises(ValidationError):
        commutator_superop(np.array([[0, 1], [0, 0]], complex))


@given(seeds, dims)
@settings(max_examples=30)
def test_unitary_channel_is_cptp(seed, d):
    u = random_unitary(d, np.random.default_rng(seed))
    rep = choi_cptp_check(unitary_superop(u))
    assert rep.ok and rep.trace_residual < 1e-12


@given(seeds, st.integers(2, 4), st.floats(1e-3, 2.0))
@settings(max_examples=30, deadline=None)
def test_gkls_exponential_is_cptp(seed, d, t):
    rng = np.random.default_rng(seed)
    h = random_hermitian(d, rng)
    chans = [(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)), float(rng.uniform(0, 1))) for _ in range(3)]
    lam = expm((commutator_superop(h) + gkls_superop(chans)) * t)
    rep = choi_cptp_check(lam)
    assert rep.trace_residual <= 1e-10
    assert rep.min_choi_eig >= -1e-8


def test_gkls_single_decay():
    f = np.array([[0, 1], [0, 0]], complex)  # |0><1|
    lam = expm(gkls_superop([(f, 1.0)]) * 3.0)
    rho = unvectorize(lam @ vectorize(np.diag([0.0, 1.0]).astype(complex)))
    assert np.isclose(rho[1, 1].real, np.exp(-3.0))
    assert np.isclose(np.trace(rho).real, 1.0)


def test_gkls_empty_needs_dim():
    with pytest.raises((ValidationError, ShapeError)):
        gkls_superop([])
    assert np.count_nonzero(gkls_superop([], dim=3)) == 0


@given(seeds, st.integers(2, 4), st.floats(0.0, 1.0))
@settings(max_examples=25)
def test_phase_noise_double_commutator(seed, d, g):
    rng = np.random.default_rng(seed)
    h = random_hermitian(d, rng)
    x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    c = h @ x - x @ h
    assert np.allclose(unvectorize(phase_noise_superop(h, g) @ vectorize(x)), -g * (h @ c - c @ h))


def test_choi_detects_non_cp():
    # transpose map is positive but not completely positive
    d = 2
    t = np.zeros((4, 4))
    for a in range(d):
        for b in range(d):
            t[b * d + a, a * d + b] = 1
    rep = choi_cptp_check(t)
    assert rep.tp_ok and not rep.cp_ok and rep.min_choi_eig < -0.5


def test_trace_residual_non_tp():
    assert trace_residual(0.5 * np.eye(4)) > 0.1


def test_dim_of_superop_rejects_bad_shape():
    with pytest.raises((ShapeError, ValidationError)):
        dim_of_superop(np.eye(5))
