"""Operator algebra and Liouville-space superoperators.

Operators are plain ``(d, d)`` complex arrays. Superoperators act on
row-stacked vectors, so ``vec(X)[a*d + b] = X[a, b]`` and the superoperator
of ``X -> A X B`` is ``kron(A, B.T)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

from .errors import ShapeError, ValidationError

HERMITIAN_TOL = 1e-12


def _square(x, name="operator") -> np.ndarray:
    a = np.asarray(x)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {a.shape}")
    return a


def is_hermitian(x, tol: float = HERMITIAN_TOL) -> bool:
    a = _square(x)
    return bool(np.max(np.abs(a - a.conj().T), initial=0.0) <= tol)


def gellmann_basis(d: int) -> list[np.ndarray]:
    """Generalized Gell-Mann matrices for su(d).

    Ordering follows the usual qutrit convention: for each column ``k`` the
    symmetric and antisymmetric pairs ``(j, k)`` with ``j < k`` come first,
    then the diagonal element built from the first ``k + 1`` levels. For
    ``d = 2`` this yields the Pauli matrices and for ``d = 3`` the standard
    eight matrices G1..G8. All elements satisfy ``Tr[G_j G_k] = 2 delta_jk``.
    """
    if int(d) != d or d < 2:
        raise ValidationError(f"invalid dimension d={d}, need an integer >= 2")
    d = int(d)
    out = []
    for k in range(1, d):
        for j in range(k):
            s = np.zeros((d, d), complex)
            s[j, k] = s[k, j] = 1.0
            a = np.zeros((d, d), complex)
            a[j, k] = -1j
            a[k, j] = 1j
            out.append(s)
            out.append(a)
        diag = np.zeros(d)
        diag[:k] = 1.0
        diag[k] = -k
        out.append(np.diag(diag * np.sqrt(2.0 / (k * (k + 1)))).astype(complex))
    return out


def embedded_gellmann(d: int, j: int, k: int, kind: str) -> np.ndarray:
    """A single two-level Gell-Mann element acting on levels ``j`` and ``k``.

    ``kind`` is ``"x"`` (|j><k| + |k><j|) or ``"y"`` (-i|j><k| + i|k><j|).
    """
    g = np.zeros((d, d), complex)
    if kind == "x":
        g[j, k] = g[k, j] = 1.0
    elif kind == "y":
        g[j, k] = -1j
        g[k, j] = 1j
    else:
        raise ValidationError(f"unknown Gell-Mann kind {kind!r}")
    return g


def hs_inner(a, b) -> complex:
    """Hilbert-Schmidt product Tr[A^dagger B]."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"dimension mismatch {a.shape} vs {b.shape}")
    return complex(np.vdot(a, b))


def vectorize(x) -> np.ndarray:
    """Row-stacked vector |X>> (row index varies slowest)."""
    a = _square(x)
    return a.reshape(-1).copy()


def unvectorize(v) -> np.ndarray:
    v = np.asarray(v)
    d = int(round(np.sqrt(v.size)))
    if d * d != v.size:
        raise ShapeError(f"length {v.size} is not a perfect square")
    return v.reshape(d, d).copy()


def dim_of_superop(s) -> int:
    s = _square(s, "superoperator")
    d = int(round(np.sqrt(s.shape[0])))
    if d * d != s.shape[0]:
        raise ShapeError(f"superoperator size {s.shape[0]} is not a square dimension")
    return d


def sandwich_superop(a, b) -> np.ndarray:
    """Superoperator of X -> A X B."""
    return np.kron(np.asarray(a), np.asarray(b).T)


def unitary_superop(u) -> np.ndarray:
    """Superoperator of X -> U X U^dagger."""
    u = np.asarray(u)
    return np.kron(u, u.conj())


def commutator_superop(h, check_hermitian: bool = True) -> np.ndarray:
    """Unitary generator -i(H x I - I x H^T) of drho/dt = -i[H, rho]."""
    h = _square(h, "H")
    if check_hermitian and not is_hermitian(h):
        raise ValidationError("commutator_superop needs a Hermitian H")
    eye = np.eye(h.shape[0])
    return -1j * (np.kron(h, eye) - np.kron(eye, h.T))


def gkls_superop(channels: Iterable[Tuple[np.ndarray, float]], dim: int | None = None) -> np.ndarray:
    """Dissipator sum_k G_k (F X F^dag - 1/2 {F^dag F, X}) as a matrix."""
    channels = list(channels)
    if not channels:
        if dim is None:
            raise ValidationError("empty channel list needs an explicit dim")
        return np.zeros((dim * dim, dim * dim), complex)
    d = np.asarray(channels[0][0]).shape[0]
    eye = np.eye(d)
    out = np.zeros((d * d, d * d), complex)
    for f, rate in channels:
        if rate < 0:
            raise ValidationError(f"negative rate {rate}")
        if rate == 0:
            continue
        f = _square(f, "jump operator")
        ff = f.conj().T @ f
        out += rate * (np.kron(f, f.conj()) - 0.5 * np.kron(ff, eye) - 0.5 * np.kron(eye, ff.T))
    return out


def phase_noise_superop(h, gamma_p: float) -> np.ndarray:
    """Double commutator -gamma_P [H, [H, .]]."""
    if gamma_p < 0:
        raise ValidationError(f"negative phase-noise rate {gamma_p}")
    h = _square(h, "H")
    d = h.shape[0]
    if gamma_p == 0:
        return np.zeros((d * d, d * d), complex)
    c = -1j * commutator_superop(h, check_hermitian=False)
    return -gamma_p * (c @ c)


@dataclass(frozen=True)
class CPTPReport:
    trace_residual: float
    min_choi_eig: float
    tp_ok: bool
    cp_ok: bool

    @property
    def ok(self) -> bool:
        return self.tp_ok and self.cp_ok


def choi_matrix(lam) -> np.ndarray:
    """Choi matrix sum_cd |c><d| (x) Lambda(|c><d|) by index reshuffling."""
    d = dim_of_superop(lam)
    t = np.asarray(lam).reshape(d, d, d, d)  # [a, b, c, d] = Lambda_(ab),(cd)
    return t.transpose(2, 0, 3, 1).reshape(d * d, d * d)


def trace_residual(lam) -> float:
    d = dim_of_superop(lam)
    t = np.asarray(lam).reshape(d, d, d * d)
    tr_out = np.einsum("aac->c", t)
    tr_in = np.eye(d).reshape(-1)
    return float(np.max(np.abs(tr_out - tr_in)))


def choi_cptp_check(lam, tol_tp: float = 1e-10, tol_cp: float = 1e-8) -> CPTPReport:
    c = choi_matrix(lam)
    c = 0.5 * (c + c.conj().T)
    mineig = float(np.linalg.eigvalsh(c)[0])
    res = trace_residual(lam)
    return CPTPReport(res, mineig, res <= tol_tp, mineig >= -tol_cp)


def random_hermitian(d: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * 0.5 * (a + a.conj().T)


def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def expm_hermitian(h, t: complex) -> np.ndarray:
    """exp(t H) for Hermitian H through its eigendecomposition."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(t * w)) @ v.conj().T


def dagger(x) -> np.ndarray:
    return np.asarray(x).conj().T


def stack_ops(ops: Sequence[np.ndarray]) -> np.ndarray:
    return np.stack([np.asarray(o, complex) for o in ops]) if len(ops) else np.zeros((0, 0, 0), complex)
