"""Invariant-based thermal dissipator for driven systems.

The invariants of the driven Hamiltonian are the static spectral projectors
carried along by the closed-system propagator, A_j(t) = U(t) A_j(0) U(t)^dag.
Jump operators F_ij(t) = U(t) V |j><i| V^dag U(t)^dag move population from
dressed level i to dressed level j, and their instantaneous frequency is read
off the dressed Hamiltonian h(t) = (U V)^dag H(t) (U V).

Fields are piecewise constant on the control grid, so within a step the
frequencies (and therefore the rates) are constant while the jump operators
keep rotating with exp(-i H_k s).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ShapeError, ValidationError
from .models import ControlField, ModelSystem, step_hamiltonians, uc_amplitude
from .operators import (
    commutator_superop,
    gellmann_basis,
    gkls_superop,
    phase_noise_superop,
)

SPECTRAL_DENSITIES = ("ohmic", "flat")


@dataclass(frozen=True)
class BathSpec:
    gamma: float = 0.0
    T: float = 1.0
    spectral: str = "ohmic"
    gamma_p: float = 0.0
    omega_min: float = 1e-6

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValidationError(f"bath.gamma must be >= 0, got {self.gamma}")
        if not self.T > 0:
            raise ValidationError(f"bath.T must be > 0, got {self.T}")
        if not self.gamma_p >= 0:
            raise ValidationError(f"bath.gamma_p must be >= 0, got {self.gamma_p}")
        if self.spectral not in SPECTRAL_DENSITIES:
            raise ValidationError(f"unknown spectral density {self.spectral!r}")

    @property
    def closed(self) -> bool:
        return self.gamma == 0 and self.gamma_p == 0


# -- rates -----------------------------------------------------------------

def _x_over_1mexp(y):
    """y / (1 - exp(-y)) for y >= 0, with the series near 0."""
    y = np.asarray(y, float)
    small = y < 1e-4
    ys = np.where(small, 1.0, y)
    big = ys / -np.expm1(-ys)
    ser = 1.0 + y / 2 + y * y / 12
    return np.where(small, ser, big)


def emission_kernel(omega, bath: BathSpec):
    """Per-unit-gamma rate of a transition that releases energy ``omega``.

    Positive omega is a downhill jump (rate J(w)(n+1)), negative omega an
    uphill one (rate J(|w|) n). For the ohmic density this is w / (1 - e^{-w/T})
    with the finite limit T at w = 0.
    """
    w = np.asarray(omega, float)
    T = bath.T
    if bath.spectral == "ohmic":
        y = np.abs(w) / T
        down = T * _x_over_1mexp(y)
        return np.where(w >= 0, down, down * np.exp(-y))
    aw = np.maximum(np.abs(w), bath.omega_min)
    y = aw / T
    down = _x_over_1mexp(y) / y
    return np.where(w >= 0, down, down * np.exp(-y))


def emission_kernel_derivative(omega, bath: BathSpec):
    """d/dw of ``emission_kernel``."""
    w = np.asarray(omega, float)
    T = bath.T
    y = np.abs(w) / T
    if bath.spectral == "ohmic":
        small = y < 1e-2
        ys = np.where(small, 1.0, y)
        qs = np.exp(-ys)
        pos = np.where(small, 0.5 + y / 6 - y**3 / 180, (1 - qs - ys * qs) / (-np.expm1(-ys)) ** 2)
        # K(w) - K(-w) = w, so K'(-y) = 1 - K'(y)
        return np.where(w >= 0, pos, 1.0 - pos)
    clamped = np.abs(w) < bath.omega_min
    ys = np.maximum(y, bath.omega_min / T)
    e = np.exp(-ys)
    dpos = -e / (T * (-np.expm1(-ys)) ** 2)
    # flat: K(w) - K(-w) = sign(w), so the slope is odd in w
    out = np.where(w >= 0, dpos, -dpos)
    return np.where(clamped, 0.0, out)


def bose(omega, T):
    w = np.asarray(omega, float)
    return 1.0 / np.expm1(w / T)


def thermal_rates(omega, bath: BathSpec):
    """(Gamma_up, Gamma_down) for a gap ``|omega|``.

    Gamma_down = gamma J n+1, Gamma_up = gamma J n, so their ratio is the
    Boltzmann factor exp(-|omega|/T).
    """
    if not bath.T > 0:
        raise ValidationError("temperature must be positive")
    a = np.abs(np.asarray(omega, float))
    down = bath.gamma * emission_kernel(a, bath)
    up = bath.gamma * emission_kernel(-a, bath)
    if np.ndim(up) == 0:
        return float(up), float(down)
    return up, down


def rate_matrix(omegas: np.ndarray, bath: BathSpec) -> np.ndarray:
    """R[i, j] = rate of the i -> j jump for dressed gaps omegas[i, j] = h_i - h_j."""
    r = bath.gamma * emission_kernel(omegas, bath)
    r = np.array(r, float)
    idx = np.arange(r.shape[-1])
    r[..., idx, idx] = 0.0
    return r


# -- invariants --------------------------------------------------------------

def ordered_eigh(h: np.ndarray, tol: float = 1e-14):
    """Eigenpairs ordered by each eigenvector's dominant computational level.

    A diagonal ``h`` yields V = I, which keeps degenerate drifts labeled by
    their computational states. Phases make the dominant component real > 0.
    """
    h = np.asarray(h)
    d = h.shape[0]
    if np.max(np.abs(h - np.diag(np.diag(h))), initial=0.0) <= tol:
        return np.real(np.diag(h)).copy(), np.eye(d, dtype=complex)
    w, v = np.linalg.eigh(h)
    weight = np.abs(v) ** 2
    order = np.full(d, -1)
    taken = np.zeros(d, bool)
    # greedy assignment from the strongest overlap down
    for flat in np.argsort(-weight, axis=None):
        row, col = divmod(int(flat), d)
        if order[row] < 0 and not taken[col]:
            order[row] = col
            taken[col] = True
    v = v[:, order]
    w = w[order]
    lead = v[np.arange(d), np.arange(d)]
    v = v * (np.abs(lead) / np.where(lead == 0, 1, lead))
    return w, v


def static_hamiltonian(model: ModelSystem, fld: ControlField | None = None) -> np.ndarray:
    if fld is not None and model.uc_shaped:
        return model.drift + uc_amplitude(model, fld)[0] * model.uncontrolled_generator
    return model.static_hamiltonian(0.0 if model.uc_shaped else 1.0)


def initial_invariants(model: ModelSystem, fld: ControlField | None = None) -> list:
    """Spectral projectors of the static Hamiltonian H0 + H_uc."""
    _, v = ordered_eigh(static_hamiltonian(model, fld))
    return [np.outer(v[:, j], v[:, j].conj()) for j in range(v.shape[0])]


def jump_operator(a_i, a_j, u_t, tol: float = 1e-10) -> np.ndarray:
    """F_ij(t) = U(t)|j><i|U(t)^dag from the initial projectors A_i(0), A_j(0).

    The transition |j><i| is formed as A_j X A_i with the rank-1 projectors,
    normalized to unit Hilbert-Schmidt norm.
    """
    for a in (a_i, a_j):
        if np.max(np.abs(a @ a - a)) > tol or np.max(np.abs(a - a.conj().T)) > tol:
            raise ValidationError("jump_operator needs orthogonal projectors")
    if np.max(np.abs(a_i @ a_j)) > tol:
        raise ValidationError("projectors must be mutually orthogonal")
    vi = _range_vector(a_i)
    vj = _range_vector(a_j)
    f = u_t @ np.outer(vj, vi.conj()) @ u_t.conj().T
    return f / np.linalg.norm(f)


def _range_vector(p):
    w, v = np.linalg.eigh(p)
    vec = v[:, -1]
    k = np.argmax(np.abs(vec))
    return vec * (abs(vec[k]) / vec[k])


def bohr_frequency(h_t, f_t) -> float:
    """Re Tr{F^dag [H, F]} / Tr{F^dag F}.

    For F = |1><0| and static H this is e_1 - e_0; the channel frequency
    omega_ij = e_i - e_j is its negative.
    """
    nrm = np.real(np.vdot(f_t, f_t))
    if nrm == 0:
        raise ValidationError("zero-norm jump operator")
    comm = h_t @ f_t - f_t @ h_t
    return float(np.real(np.vdot(f_t, comm)) / nrm)


class InvariantSet:
    """Dressed frames of the driven closed system on the control grid.

    ``frames[k] = U(t_k) V`` where V diagonalizes the static Hamiltonian. The
    invariants are ``frames[k][:, j] frames[k][:, j]^dag``.
    """

    def __init__(self, model: ModelSystem, fld: ControlField):
        if fld.n_channels != model.n_controls:
            raise ShapeError("field does not match the model")
        self.model = model
        self.field = fld
        self.dt = fld.dt
        self.n_steps = fld.n_steps
        self.energies0, self.V = ordered_eigh(static_hamiltonian(model, fld))
        hs = step_hamiltonians(model, fld)
        self.step_h = hs
        w, v = np.linalg.eigh(hs)
        self._eig = (w, v)
        self.step_u = np.einsum("kij,kj,klj->kil", v, np.exp(-1j * w * self.dt), v.conj())
        frames = np.empty((self.n_steps + 1,) + self.V.shape, complex)
        frames[0] = self.V
        for k in range(self.n_steps):
            frames[k + 1] = self.step_u[k] @ frames[k]
        self.frames = frames

    @property
    def times(self):
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def dim(self):
        return self.V.shape[0]

    def hamiltonian_at(self, k: int) -> np.ndarray:
        """Hamiltonian acting from grid point k (right-continuous)."""
        if k < self.n_steps:
            return self.step_h[k]
        from .models import eval_hamiltonian
        return eval_hamiltonian(self.model, self.field, k)

    def frame_at(self, k: int, s: float = 0.0) -> np.ndarray:
        if s == 0.0:
            return self.frames[k]
        w, v = self._eig[0][k], self._eig[1][k]
        return (v * np.exp(-1j * w * s)) @ v.conj().T @ self.frames[k]

    def projector(self, k: int, j: int) -> np.ndarray:
        c = self.frames[k][:, j]
        return np.outer(c, c.conj())

    def projectors(self, k: int) -> list:
        return [self.projector(k, j) for j in range(self.dim)]

    def jump(self, k: int, i: int, j: int) -> np.ndarray:
        f = self.frames[k]
        return np.outer(f[:, j], f[:, i].conj())

    @cached_property
    def dressed_energies(self) -> np.ndarray:
        """diag(h_k) on every grid point, shape (n_steps + 1, d)."""
        f = self.frames
        hs = np.concatenate([self.step_h, self.hamiltonian_at(self.n_steps)[None]])
        return np.real(np.einsum("kai,kab,kbi->ki", f.conj(), hs, f))

    def omegas(self, k: int | None = None) -> np.ndarray:
        """omega[i, j] = h_ii - h_jj (k=None gives every grid point)."""
        e = self.dressed_energies if k is None else self.dressed_energies[k]
        return e[..., :, None] - e[..., None, :]

    def dressed_hamiltonian(self, k: int) -> np.ndarray:
        f = self.frames[k]
        return f.conj().T @ self.hamiltonian_at(k) @ f

    def phases(self) -> np.ndarray:
        """phi_ij(t_k) = integral of omega_ij, exact for piecewise-constant gaps."""
        om = self.omegas()[:-1]
        out = np.zeros((self.n_steps + 1,) + om.shape[1:])
        out[1:] = np.cumsum(om * self.dt, axis=0)
        return out


def propagate_invariants(model: ModelSystem, fld: ControlField) -> InvariantSet:
    return InvariantSet(model, fld)


def pair_labels(d: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(d) for j in range(d) if i != j]


def bohr_trace(inv: InvariantSet) -> tuple[np.ndarray, list, np.ndarray]:
    """Channel frequencies on every grid point by the commutator projection."""
    d = inv.dim
    pairs = pair_labels(d)
    out = np.empty((inv.n_steps + 1, len(pairs)))
    for k in range(inv.n_steps + 1):
        h = inv.hamiltonian_at(k)
        for p, (i, j) in enumerate(pairs):
            out[k, p] = -bohr_frequency(h, inv.jump(k, i, j))
    return inv.times, pairs, out


# -- dissipator ----------------------------------------------------------------

def frame_dissipator(rates: np.ndarray) -> np.ndarray:
    """Dissipator with jumps |j><i| at rates R[i, j], in the dressed frame.

    Populations mix through Q = R^T - diag(out) and every coherence rho_ab
    decays at (out_a + out_b) / 2.
    """
    d = rates.shape[0]
    out = rates.sum(axis=1)
    m = np.diag(-0.5 * (out[:, None] + out[None, :]).reshape(-1)).astype(complex)
    idx = np.arange(d) * (d + 1)
    m[np.ix_(idx, idx)] = rates.T - np.diag(out)
    return m


def thermal_dissipator_at(t_index: int, inv: InvariantSet, bath: BathSpec) -> np.ndarray:
    """Assemble sum over ordered pairs of GKLS terms at grid point t_index."""
    d = inv.dim
    if not 0 <= t_index <= inv.n_steps:
        raise IndexError(f"t_index {t_index} outside the grid")
    r = rate_matrix(inv.omegas(t_index), bath)
    chans = [(inv.jump(t_index, i, j), r[i, j]) for i, j in pair_labels(d)]
    out = gkls_superop(chans, dim=d)
    if bath.gamma_p > 0:
        out = out + phase_noise_superop(inv.hamiltonian_at(t_index), bath.gamma_p)
    return out


def step_generator(h, frame, rates, bath: BathSpec, s, eig=None, lh=None) -> np.ndarray:
    """Generator at local times ``s`` of a step with Hamiltonian ``h`` that
    starts in dressed frame ``frame`` (= U(t_k) V) and has dressed rates ``rates``."""
    s_arr = np.atleast_1d(np.asarray(s, float))
    if lh is None:
        lh = commutator_superop(h, check_hermitian=False)
        if bath.gamma_p > 0:
            lh = lh + phase_noise_superop(h, bath.gamma_p)
    out = np.broadcast_to(lh, (len(s_arr),) + lh.shape).copy()
    if rates is not None and bath.gamma > 0:
        dk = frame_dissipator(rates)
        w, v = eig if eig is not None else np.linalg.eigh(h)
        f0 = v.conj().T @ frame
        for n, sn in enumerate(s_arr):
            fr = (v * np.exp(-1j * w * sn)) @ f0
            sup = np.kron(fr, fr.conj())
            out[n] += sup @ dk @ sup.conj().T
    if np.ndim(s) == 0:
        return out[0]
    return out


class LiouvilleGenerator:
    """Full generator L(t) = L_H(t) + L_D(t) for a driven model in a bath.

    ``at(k, s)`` gives the generator at local time s in step k. Within a step
    the dissipator is the dressed-frame form rotated by the running frame,
    L_D(t_k + s) = S(s) D_k S(s)^dag with S = W (x) W^*, W = e^{-i H_k s} U_k V.
    """

    def __init__(self, model: ModelSystem, fld: ControlField, bath: BathSpec, inv: InvariantSet | None = None):
        self.model = model
        self.field = fld
        self.bath = bath
        self.inv = inv if inv is not None else InvariantSet(model, fld)
        self.dt = fld.dt
        self.n_steps = fld.n_steps
        d = self.inv.dim
        self.dim = d
        self._lh = [None] * self.n_steps
        self._dk = None
        if bath.gamma > 0:
            om = self.inv.omegas()[:-1]
            self.rates = rate_matrix(om, bath)
        else:
            self.rates = None

    def hamiltonian_part(self, k: int) -> np.ndarray:
        lh = self._lh[k]
        if lh is None:
            h = self.inv.step_h[k]
            lh = commutator_superop(h, check_hermitian=False)
            if self.bath.gamma_p > 0:
                lh = lh + phase_noise_superop(h, self.bath.gamma_p)
            self._lh[k] = lh
        return lh

    def frame_dissipator(self, k: int) -> np.ndarray:
        return frame_dissipator(self.rates[k])

    def at(self, k: int, s) -> np.ndarray:
        """Generator(s) at local times ``s`` of step k; array input gives a stack."""
        rates = None if self.rates is None else self.rates[k]
        return step_generator(self.inv.step_h[k], self.inv.frames[k], rates, self.bath, s,
                              eig=(self.inv._eig[0][k], self.inv._eig[1][k]), lh=self.hamiltonian_part(k))

    def __call__(self, k: int, s):
        return self.at(k, s)


# -- coefficient-ODE oracle -------------------------------------------------------

def su_basis(d: int) -> list[np.ndarray]:
    """Identity plus Gell-Mann matrices."""
    return [np.eye(d, dtype=complex)] + gellmann_basis(d)


def structure_constants(basis) -> np.ndarray:
    """C[k, i, j] with [B_i, B_j] = sum_k C[k, i, j] B_k."""
    b = np.stack(basis)
    norms = np.real(np.einsum("kab,kab->k", b.conj(), b))
    comm = np.einsum("iab,jbc->ijac", b, b) - np.einsum("jab,ibc->ijac", b, b)
    return np.einsum("kab,ijab->kij", b.conj(), comm) / norms[:, None, None]


def expand_in_basis(x, basis, tol: float = 1e-12) -> np.ndarray:
    b = np.stack(basis)
    norms = np.real(np.einsum("kab,kab->k", b.conj(), b))
    c = np.einsum("kab,ab->k", b.conj(), x) / norms
    resid = np.max(np.abs(np.einsum("k,kab->ab", c, b) - x))
    if resid > tol:
        raise ValidationError(f"operator not in the span of the basis (residual {resid:.2e})")
    return c


def invariant_ode_oracle(model: ModelSystem, fld: ControlField, rtol: float = 1e-12, atol: float = 1e-14):
    """Invariants from dc/dt = M(t) c with M_kn = -i sum_l C^k_ln h_l(t).

    Integrated step by step with an eighth-order Runge-Kutta scheme
    (the Hamiltonian coefficients jump at grid points). Returns the invariant
    stack of shape (n_steps + 1, d, d, d): [k, j] is A_j(t_k).
    """
    from scipy.integrate import solve_ivp

    d = model.dim
    basis = su_basis(d)
    cst = structure_constants(basis)
    b = np.stack(basis)
    a0 = initial_invariants(model, fld)
    c = np.stack([expand_in_basis(a, basis) for a in a0], axis=1)  # (n_basis, d)
    hs = step_hamiltonians(model, fld)
    out = np.empty((fld.n_steps + 1, d, d, d), complex)
    out[0] = np.einsum("nj,nab->jab", c, b)
    nb = len(basis)
    for k in range(fld.n_steps):
        hcoef = expand_in_basis(hs[k], basis)
        m = -1j * np.einsum("kln,l->kn", cst, hcoef)

        def rhs(_t, y, m=m):
            return (m @ y.reshape(nb, d)).reshape(-1)

        sol = solve_ivp(rhs, (0.0, fld.dt), c.reshape(-1), method="DOP853", rtol=rtol, atol=atol)
        c = sol.y[:, -1].reshape(nb, d)
        out[k + 1] = np.einsum("nj,nab->jab", c, b)
    return out
