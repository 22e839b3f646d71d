"""Krotov-type optimal control of the dynamical map.

The objective is the normalized fidelity F = Re Tr{O^dag Lambda(tau)} / Tr{O^dag O}
(J_max in the logs is the unnormalized trace). Two update modes:

* ``sequential_krotov``: the adjoint Y(t) of the previous iterate is stored,
  and the field is updated step by step during the forward sweep with the
  new state, d eps = s(t)/(2 lambda) Re Tr{Y L'_c Lambda}, L'_c = dL/d eps_c.
* ``full_sweep_gradient``: the exact gradient of F for piecewise-constant
  fields, including the field dependence of the dissipator (through the
  dressed frequencies and the invariant frames), applied to all times at once.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.linalg import expm, expm_frechet
from scipy.optimize import minimize

from .errors import NumericalError, ValidationError
from .models import ControlField, GateTarget, ModelSystem, step_hamiltonians, uc_amplitude
from .name_thermal import (
    BathSpec,
    InvariantSet,
    LiouvilleGenerator,
    emission_kernel,
    emission_kernel_derivative,
    frame_dissipator,
    ordered_eigh,
    rate_matrix,
    static_hamiltonian,
    step_generator,
)
from .operators import commutator_superop, phase_noise_superop, unitary_superop
from .propagator import MapTrajectory, PropagatorConfig, SemiGlobal, chebyshev_points, propagate_map

MODES = ("sequential_krotov", "full_sweep_gradient")
ASCENTS = ("gradient", "conjugate")
ENGINES = ("exact_zoh", "semi_global")


@dataclass(frozen=True)
class OCTConfig:
    lam: float = 1.0
    gamma_a: float = 0.0
    max_iters: int = 200
    target_infidelity: float = 1e-4
    mode: str = "sequential_krotov"
    ascent: str = "gradient"
    engine: str = "exact_zoh"
    precondition: str = "shape"
    lam_growth: float = 2.0
    lam_relax: float = 1.0
    monotone_slack: float = 1e-12
    max_rejections: int = 30
    fd_step: float = 1e-4

    def __post_init__(self):
        if not self.lam > 0:
            raise ValidationError("oct.lam must be positive")
        if not 0 < self.target_infidelity < 1:
            raise ValidationError("oct.target_infidelity must lie in (0, 1)")
        if self.gamma_a < 0:
            raise ValidationError("oct.gamma_a must be >= 0")
        if self.mode not in MODES:
            raise ValidationError(f"oct.mode must be one of {MODES}")
        if self.ascent not in ASCENTS:
            raise ValidationError(f"oct.ascent must be one of {ASCENTS}")
        if self.engine not in ENGINES:
            raise ValidationError(f"oct.engine must be one of {ENGINES}")
        if self.precondition not in ("shape", "none"):
            raise ValidationError("oct.precondition must be 'shape' or 'none'")
        if self.max_iters < 0:
            raise ValidationError("oct.max_iters must be >= 0")
        if not self.lam_growth > 1:
            raise ValidationError("oct.lam_growth must exceed 1")
        if not 0 < self.lam_relax <= 1:
            raise ValidationError("oct.lam_relax must lie in (0, 1]")


@dataclass
class IterationRecord:
    iteration: int
    j_max: float
    fidelity: float
    infidelity: float
    field_norm: float
    seconds: float
    lam: float = float("nan")
    monotone: bool = True


@dataclass
class OCTResult:
    field: ControlField
    records: list
    best_infidelity: float
    converged: bool
    rejections: int = 0

    @property
    def final_infidelity(self) -> float:
        return self.records[-1].infidelity if self.records else float("nan")


def fidelity(lam_tau: np.ndarray, target: GateTarget | np.ndarray) -> float:
    """F = Re Tr{O^dag Lambda} / Tr{O^dag O}."""
    o = target.superop if isinstance(target, GateTarget) else np.asarray(target)
    lam_tau = np.asarray(lam_tau)
    if o.shape != lam_tau.shape:
        raise ValidationError(f"map shape {lam_tau.shape} does not match target {o.shape}")
    nrm = float(np.real(np.vdot(o, o)))
    if nrm == 0:
        raise ValidationError("zero-norm target")
    return float(np.real(np.vdot(o, lam_tau))) / nrm


def j_max(lam_tau, target: GateTarget) -> float:
    return float(np.real(np.vdot(target.superop, lam_tau)))


def control_superops(model: ModelSystem) -> list:
    return [commutator_superop(g) for g in model.control_generators]


def krotov_field_update(y_prev, lam_curr, lc, shape_value: float, lam: float, norm: float = 1.0,
                        gamma_a: float = 0.0, ld2=None) -> float:
    """Field change for one channel at one time.

    d eps = s / (2 (lam + gamma_a Re Tr{Y L''_D Lambda})) * Re Tr{Y L'_c Lambda} / norm.
    With L'_c = -i [G_c, .] the numerator equals Im Tr{Y H'_c Lambda} with
    H'_c = i L'_c, the Hamiltonian-superoperator form of the same quantity.
    """
    g = float(np.real(np.sum((lam_curr @ y_prev).T * lc))) / norm
    denom = lam
    if gamma_a > 0 and ld2 is not None:
        corr = float(np.real(np.sum((lam_curr @ y_prev).T * ld2))) / norm
        cand = lam + gamma_a * corr
        if abs(cand) >= 1e-12 * lam:
            denom = cand
    return shape_value * g / (2.0 * denom)


def forward_propagate(model, fld, bath, pcfg: PropagatorConfig, **kw) -> MapTrajectory:
    return propagate_map(model, fld, bath, pcfg, "forward", **kw)


def backward_propagate(model, fld, bath, pcfg: PropagatorConfig, target: GateTarget, **kw) -> MapTrajectory:
    return propagate_map(model, fld, bath, pcfg, "adjoint", target=target.superop, **kw)


# -- piecewise-constant dynamics in the dressed frame -----------------------------

def _phi1(z):
    """(e^z - 1) / z with the small-z limit."""
    z = np.asarray(z, complex)
    small = np.abs(z) < 1e-8
    zs = np.where(small, 1.0, z)
    return np.where(small, 1.0 + z / 2, np.expm1(zs) / zs)


class ZOHDynamics:
    """Exact map, fidelity and gradient for piecewise-constant fields.

    The map is Lambda(tau) = S_N E_{N-1} ... E_0 S_0^dag with S_k = F_k (x) F_k^*,
    F_k = U(t_k) V the dressed frame, and E_k = exp(dt D_k). Without phase
    noise each E_k only mixes dressed populations (matrix P_k) and damps
    coherences (factors c_k), so F reduces to Hilbert-space quantities of
    X = V^dag U_e^dag F_N:

        F nrm = sum_ac |X_ac|^2 P[c, a] + Re sum_{a != b} X_aa X_bb^* c[a, b].
    """

    def __init__(self, model: ModelSystem, bath: BathSpec, target: GateTarget, dt: float):
        self.model = model
        self.bath = bath
        self.target = target
        self.dt = dt
        self.d = model.dim
        self.gens = model.generators
        self.nrm = target.norm
        self.ue = target.unitary

    # forward quantities ------------------------------------------------------
    def _frames(self, fld: ControlField):
        hs = step_hamiltonians(self.model, fld)
        w, v = np.linalg.eigh(hs)
        phase = np.exp(-1j * w * self.dt)
        wk = np.einsum("kij,kj,klj->kil", v, phase, v.conj())
        _, v0 = ordered_eigh(static_hamiltonian(self.model, fld))
        n = fld.n_steps
        frames = np.empty((n + 1, self.d, self.d), complex)
        frames[0] = v0
        for k in range(n):
            frames[k + 1] = wk[k] @ frames[k]
        return hs, w, v, wk, frames

    def _dissipative(self, hs, frames):
        """Dressed energies, rates, population propagators and coherence factors."""
        n = hs.shape[0]
        d = self.d
        hd = np.real(np.einsum("kai,kab,kbi->ki", frames[:n].conj(), hs, frames[:n]))
        om = hd[:, :, None] - hd[:, None, :]
        r = rate_matrix(om, self.bath)
        out = r.sum(axis=2)
        q = np.swapaxes(r, 1, 2) - out[:, :, None] * np.eye(d)
        p = expm(q * self.dt)
        logc = -0.5 * (out[:, :, None] + out[:, None, :]) * self.dt
        return hd, om, r, q, p, logc

    def evaluate(self, fld: ControlField, want_grad: bool = False):
        if self.bath.gamma_p > 0:
            if want_grad:
                raise NotImplementedError("exact gradient is implemented for thermal noise without phase noise")
            return self._evaluate_dense(fld), None
        hs, w, v, wk, frames = self._frames(fld)
        n = hs.shape[0]
        d = self.d
        x = frames[0].conj().T @ self.ue.conj().T @ frames[n]
        if self.bath.gamma > 0:
            hd, om, r, q, p, logc = self._dissipative(hs, frames)
            pre = np.empty((n + 1, d, d))
            pre[0] = np.eye(d)
            for k in range(n):
                pre[k + 1] = p[k] @ pre[k]
            pphi = pre[n]
            cphi = np.exp(logc.sum(axis=0))
        else:
            pphi = np.eye(d)
            cphi = np.ones((d, d))
        y1 = np.abs(x) ** 2
        xd = np.diag(x)
        z = np.outer(xd, xd.conj())
        off = ~np.eye(d, dtype=bool)
        val = (np.sum(y1 * pphi.T) + np.real(np.sum((z * cphi)[off]))) / self.nrm
        if not want_grad:
            return float(val), None

        # frame costate at tau
        m = frames[0].conj().T @ self.ue.conj().T
        xi = x * pphi.T
        theta = np.diag(((cphi * off) @ xd))
        gbar = 2.0 * m.conj().T @ (xi + theta) / self.nrm
        grad = np.zeros((len(self.gens), n))
        gsum = np.zeros((n, d))
        if self.bath.gamma > 0:
            # population costates C_m = Pre_m Y1 Suf_m
            suf = np.eye(d)
            kp = emission_kernel_derivative(om, self.bath) * self.bath.gamma
            gout = -self.dt * np.real(np.sum(np.where(off, z * cphi, 0.0), axis=1)) / self.nrm
            for k in range(n - 1, -1, -1):
                c = pre[k] @ y1 @ suf
                g = self.dt * expm_frechet(q[k] * self.dt, c, compute_expm=False) / self.nrm
                dr = g - np.diag(g)[:, None] + gout[:, None]
                dom = dr * kp[k]
                np.fill_diagonal(dom, 0.0)
                gsum[k] = dom.sum(axis=1) - dom.sum(axis=0)
                suf = suf @ p[k]
        # backward through the frames
        eg = np.einsum("kij,cjl,klm->kcim", v.conj().transpose(0, 2, 1), self.gens, v)  # S^dag G S
        mu = -1j * w * self.dt
        dd = np.exp(mu)[:, None, :] * _phi1(mu[:, :, None] - mu[:, None, :])
        for k in range(n - 1, -1, -1):
            # dJ/d eps through W_k
            omega = v[k].conj().T @ frames[k] @ gbar.conj().T @ v[k]
            grad[:, k] = np.real(np.einsum("qp,cpq,pq->c", omega, eg[k] * (-1j * self.dt), dd[k]))
            if self.bath.gamma > 0:
                fr = frames[k]
                loc = np.einsum("ai,cab,bi->ci", fr.conj(), self.gens, fr)
                grad[:, k] += np.real(loc) @ gsum[k]
                gamma_k = 2.0 * hs[k] @ fr * gsum[k][None, :]
                gbar = gamma_k + wk[k].conj().T @ gbar
            else:
                gbar = wk[k].conj().T @ gbar
        return float(val), grad

    def _evaluate_dense(self, fld: ControlField) -> float:
        gen = LiouvilleGenerator(self.model, fld, self.bath)
        from .propagator import exact_zoh_trajectory
        return fidelity(exact_zoh_trajectory(gen).final, self.target)

    def fidelity(self, fld: ControlField) -> float:
        return self.evaluate(fld)[0]

    def gradient(self, fld: ControlField):
        """(F, dF/d eps[c, k]) for the step samples k < n_steps."""
        return self.evaluate(fld, want_grad=True)


# -- sequential sweeps -------------------------------------------------------------

class _StepState:
    __slots__ = ("lam", "frame", "guess")

    def __init__(self, lam, frame, guess=None):
        self.lam = lam
        self.frame = frame
        self.guess = guess


class _Sweeper:
    """Forward sweep with updates applied on the fly."""

    def __init__(self, model, bath, target, pcfg: PropagatorConfig, ocfg: OCTConfig, engine: str):
        self.model = model
        self.bath = bath
        self.target = target
        self.pcfg = pcfg
        self.ocfg = ocfg
        self.engine = engine
        self.dt = pcfg.dt
        self.d = model.dim
        self.lcs = control_superops(model)
        self.nrm = target.norm
        if engine == "semi_global":
            self.sg = SemiGlobal(pcfg)
            self.local = np.concatenate([chebyshev_points(pcfg.M, pcfg.dt), [0.5 * pcfg.dt]])

    def hamiltonian(self, eps_k, uc_k):
        h = self.model.drift + np.tensordot(eps_k, self.model.generators, 1)
        return h + uc_k * self.model.uncontrolled_generator

    def step_rates(self, h, frame):
        if self.bath.gamma == 0:
            return None
        hd = np.real(np.einsum("ai,ab,bi->i", frame.conj(), h, frame))
        return rate_matrix(hd[:, None] - hd[None, :], self.bath)

    def dissipator_curvature(self, eps_k, uc_k, frame, c):
        """Finite-difference 1/2 d^2 L_D / d eps_c^2 at fixed frame."""
        h0 = self.ocfg.fd_step
        vals = []
        for sgn in (-1.0, 0.0, 1.0):
            e = np.array(eps_k, float)
            e[c] += sgn * h0
            h = self.hamiltonian(e, uc_k)
            r = self.step_rates(h, frame)
            sup = unitary_superop(frame)
            vals.append(sup @ frame_dissipator(r) @ sup.conj().T)
        return 0.5 * (vals[0] - 2 * vals[1] + vals[2]) / h0**2

    def advance(self, state: _StepState, h) -> _StepState:
        frame = state.frame
        w, v = np.linalg.eigh(h)
        wk = (v * np.exp(-1j * w * self.dt)) @ v.conj().T
        new_frame = wk @ frame
        if self.engine == "exact_zoh":
            if self.bath.closed:
                lam = unitary_superop(wk) @ state.lam
            else:
                r = self.step_rates(h, frame)
                dk = frame_dissipator(r) if r is not None else np.zeros((self.d**2,) * 2, complex)
                if self.bath.gamma_p > 0:
                    dk = dk + phase_noise_superop(frame.conj().T @ h @ frame, self.bath.gamma_p)
                e = expm(dk * self.dt)
                lam = unitary_superop(new_frame) @ (e @ (unitary_superop(frame).conj().T @ state.lam))
            return _StepState(lam, new_frame)
        r = self.step_rates(h, frame)
        gens = step_generator(h, frame, r, self.bath, self.local, eig=(w, v))
        guess = state.guess if state.guess is not None else np.broadcast_to(state.lam, (self.pcfg.M,) + state.lam.shape).copy()
        end, _, nxt, it, res = self.sg.step(gens, state.lam, guess)
        if res > self.pcfg.inner_tol and it >= self.pcfg.max_inner_iters:
            raise NumericalError(f"semi-global step did not converge (residual {res:.3e})")
        return _StepState(end, new_frame, nxt)

    def adjoint(self, fld: ControlField) -> np.ndarray:
        gen = LiouvilleGenerator(self.model, fld, self.bath)
        if self.engine == "exact_zoh":
            from .propagator import exact_zoh_adjoint
            return exact_zoh_adjoint(gen, self.target.superop).maps
        return propagate_map(self.model, fld, self.bath, self.pcfg, "adjoint", target=self.target.superop,
                             generator=gen).maps

    def sweep(self, fld: ControlField, ys: np.ndarray, lam: float):
        """Sequential update; returns (new amplitudes, final map)."""
        amps = fld.amplitudes.copy()
        s = fld.envelope()
        uc = uc_amplitude(self.model, fld)
        _, v0 = ordered_eigh(static_hamiltonian(self.model, fld))
        d2 = self.d**2
        state = _StepState(np.eye(d2, dtype=complex), v0)
        for k in range(fld.n_steps):
            eps_k = amps[:, k].copy()
            for c, lc in enumerate(self.lcs):
                ld2 = None
                if self.ocfg.gamma_a > 0 and self.bath.gamma > 0:
                    ld2 = self.dissipator_curvature(eps_k, uc[k], state.frame, c)
                eps_k[c] += krotov_field_update(ys[k], state.lam, lc, s[k], lam, self.nrm, self.ocfg.gamma_a, ld2)
            amps[:, k] = eps_k
            state = self.advance(state, self.hamiltonian(eps_k, uc[k]))
        # last sample does not act on any step; keep it gated like the others
        eps_n = amps[:, -1]
        for c, lc in enumerate(self.lcs):
            eps_n[c] += krotov_field_update(ys[-1], state.lam, lc, s[-1], lam, self.nrm)
        return amps, state.lam

    def forward_final(self, fld: ControlField) -> np.ndarray:
        uc = uc_amplitude(self.model, fld)
        _, v0 = ordered_eigh(static_hamiltonian(self.model, fld))
        state = _StepState(np.eye(self.d**2, dtype=complex), v0)
        for k in range(fld.n_steps):
            state = self.advance(state, self.hamiltonian(fld.amplitudes[:, k], uc[k]))
        return state.lam


def _final_map(model, fld, bath, target, pcfg, engine) -> np.ndarray:
    gen = LiouvilleGenerator(model, fld, bath)
    if engine == "exact_zoh":
        from .propagator import exact_zoh_trajectory
        return exact_zoh_trajectory(gen).final
    return propagate_map(model, fld, bath, pcfg, generator=gen).final


# -- driver ----------------------------------------------------------------------------

def optimize(model: ModelSystem, bath: BathSpec, target: GateTarget, oct_config: OCTConfig,
             propagator_config: PropagatorConfig, initial_field: ControlField,
             callback: Callable[[IterationRecord], None] | None = None) -> OCTResult:
    """Iterate until the target infidelity or ``max_iters``; returns the best iterate."""
    if abs(initial_field.dt - propagator_config.dt) > 1e-12:
        raise ValidationError("field grid does not match the propagator dt")
    if initial_field.n_channels != model.n_controls:
        raise ValidationError("initial field channel count does not match the model")
    if oct_config.mode == "full_sweep_gradient":
        return _optimize_full_sweep(model, bath, target, oct_config, propagator_config, initial_field, callback)
    return _optimize_sequential(model, bath, target, oct_config, propagator_config, initial_field, callback)


def _record(it, lam_map_or_f, target, amps_prev, amps, t0, lam, mono=True, fid=None):
    f = fid if fid is not None else fidelity(lam_map_or_f, target)
    rec = IterationRecord(
        iteration=it,
        j_max=f * target.norm,
        fidelity=f,
        infidelity=1.0 - f,
        field_norm=float(np.linalg.norm(amps - amps_prev)),
        seconds=time.perf_counter() - t0,
        lam=lam,
        monotone=mono,
    )
    return rec


def _optimize_sequential(model, bath, target, ocfg, pcfg, fld0, callback):
    t0 = time.perf_counter()
    sw = _Sweeper(model, bath, target, pcfg, ocfg, ocfg.engine)
    fld = fld0.copy()
    lam_map = _final_map(model, fld, bath, target, pcfg, ocfg.engine)
    f = fidelity(lam_map, target)
    records = [_record(0, None, target, fld.amplitudes, fld.amplitudes, t0, ocfg.lam, fid=f)]
    if callback:
        callback(records[-1])
    best = (1 - f, fld.copy())
    lam = ocfg.lam
    rejections = 0
    it = 0
    while it < ocfg.max_iters and 1 - f > ocfg.target_infidelity:
        ys = sw.adjoint(fld)
        tries = 0
        while True:
            amps, lam_new = sw.sweep(fld, ys, lam)
            f_new = fidelity(lam_new, target)
            if f_new >= f - ocfg.monotone_slack or tries >= ocfg.max_rejections:
                break
            rejections += 1
            tries += 1
            lam *= ocfg.lam_growth
        if f_new < f - ocfg.monotone_slack:
            break  # could not find an improving step
        it += 1
        rec = _record(it, None, target, fld.amplitudes, amps, t0, lam, fid=f_new)
        records.append(rec)
        if callback:
            callback(rec)
        fld = fld.copy(amps)
        f = f_new
        if 1 - f < best[0]:
            best = (1 - f, fld.copy())
        lam *= ocfg.lam_relax
    return OCTResult(best[1], records, best[0], best[0] <= ocfg.target_infidelity, rejections)


def _optimize_full_sweep(model, bath, target, ocfg, pcfg, fld0, callback):
    if ocfg.engine != "exact_zoh":
        raise ValidationError("full_sweep_gradient uses the exact piecewise-constant gradient (engine exact_zoh)")
    t0 = time.perf_counter()
    dyn = ZOHDynamics(model, bath, target, pcfg.dt)
    n = fld0.n_steps
    s = fld0.envelope()[:-1] if ocfg.precondition == "shape" else np.ones(n)
    base = fld0.amplitudes.copy()
    nc = model.n_controls

    # eps = base + s x: with the shape preconditioner the envelope gates every update
    def amps_of(x):
        a = base.copy()
        a[:, :-1] += s * x.reshape(nc, n)
        return a

    cache = {}

    def fg(x):
        key = x.tobytes()
        if key not in cache:
            cache.clear()
            f, g = dyn.gradient(fld0.copy(amps_of(x)))
            cache[key] = (f, (g * s).reshape(-1))
        return cache[key]

    x = np.zeros(nc * n)
    f, g = fg(x)
    records = [_record(0, None, target, base, base, t0, ocfg.lam, fid=f)]
    if callback:
        callback(records[-1])
    best = [1 - f, x.copy()]
    state = {"amps": base, "lam": ocfg.lam, "rej": 0}

    def log(xk, fk):
        amps = amps_of(xk)
        rec = _record(len(records), None, target, state["amps"], amps, t0, state["lam"], fid=fk,
                      mono=fk >= records[-1].fidelity - ocfg.monotone_slack)
        state["amps"] = amps
        records.append(rec)
        if callback:
            callback(rec)
        if 1 - fk < best[0]:
            best[0], best[1] = 1 - fk, xk.copy()
        return 1 - fk <= ocfg.target_infidelity

    if ocfg.ascent == "conjugate":
        class _Done(Exception):
            pass

        def cb(xk):
            if log(xk, fg(xk)[0]) or len(records) > ocfg.max_iters:
                raise _Done

        def neg(x):
            fx, gx = fg(x)
            return -fx, -gx / pcfg.dt

        if ocfg.max_iters > 0 and 1 - f > ocfg.target_infidelity:
            try:
                minimize(neg, x, jac=True, method="CG", callback=cb,
                         options={"maxiter": ocfg.max_iters, "gtol": 1e-12})
            except _Done:
                pass
    else:
        lam = ocfg.lam
        tries = 0
        while len(records) <= ocfg.max_iters and 1 - f > ocfg.target_infidelity:
            trial = x + g / (2 * lam * pcfg.dt)
            f_t, g_t = fg(trial)
            if f_t < f - ocfg.monotone_slack:
                state["rej"] += 1
                tries += 1
                lam *= ocfg.lam_growth
                state["lam"] = lam
                if tries > ocfg.max_rejections:
                    break
                continue
            tries = 0
            x, f, g = trial, f_t, g_t
            if log(x, f):
                break
            lam *= ocfg.lam_relax
            state["lam"] = lam
    return OCTResult(fld0.copy(amps_of(best[1])), records, best[0], best[0] <= ocfg.target_infidelity, state["rej"])
