"""Dynamical-map propagation in Liouville space.

Three engines share one interface:

* ``semi_global``: Chebyshev source fit plus Krylov f-functions, iterated to
  self-consistency inside each step (the production integrator).
* ``reference``: concatenated dense exponentials of the midpoint generator on
  a sub-grid (brute-force oracle).
* ``exact_zoh``: closed-form product for piecewise-constant fields. Within a
  step the dissipator is a rotated copy of a fixed dressed-frame generator, so
  the map factorizes as U_N E_{N-1} ... E_0 U_0^dag with E_k = exp(D_k dt).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from math import factorial
from typing import Callable

import numpy as np
from numpy.polynomial import chebyshev as npcheb
from scipy.linalg import expm

from . import kernels
from .errors import NumericalError, ValidationError
from .models import ControlField, ModelSystem
from .name_thermal import BathSpec, InvariantSet, LiouvilleGenerator, frame_dissipator
from .operators import phase_noise_superop, unitary_superop

METHODS = ("semi_global", "reference", "exact_zoh")


@dataclass(frozen=True)
class PropagatorConfig:
    dt: float = 0.1
    M: int = 7
    K: int = 3
    inner_tol: float = 1e-11
    max_inner_iters: int = 40
    method: str = "semi_global"
    ref_substeps: int = 100

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError("propagator.dt must be positive")
        if self.M < 2:
            raise ValidationError("propagator.M must be >= 2")
        if self.K < 1:
            raise ValidationError("propagator.K must be >= 1")
        if not self.inner_tol > 0:
            raise ValidationError("propagator.inner_tol must be positive")
        if self.max_inner_iters < 1:
            raise ValidationError("propagator.max_inner_iters must be >= 1")
        if self.method not in METHODS:
            raise ValidationError(f"propagator.method must be one of {METHODS}")
        if self.ref_substeps < 1:
            raise ValidationError("propagator.ref_substeps must be >= 1")


@dataclass
class MapTrajectory:
    times: np.ndarray
    maps: np.ndarray                   # (n_steps + 1, n, n)
    inner_iters: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    direction: str = "forward"
    seconds: float = 0.0
    cheb_points: np.ndarray | None = None   # (n_steps, M, n, n) when requested

    @property
    def final(self) -> np.ndarray:
        return self.maps[-1] if self.direction == "forward" else self.maps[0]


# -- Chebyshev source fit ------------------------------------------------------------

def chebyshev_points(m: int, dt: float) -> np.ndarray:
    """Chebyshev-Gauss points mapped to (0, dt), ascending."""
    x = -np.cos(np.pi * (2 * np.arange(m) + 1) / (2 * m))
    return 0.5 * dt * (x + 1.0)


def chebyshev_taylor_matrix(m: int, dt: float) -> np.ndarray:
    """Matrix A with c = A f: samples at the Chebyshev points -> coefficients
    c_n of the fitted source written as sum_n c_n s^n / n!."""
    x = -np.cos(np.pi * (2 * np.arange(m) + 1) / (2 * m))
    tv = npcheb.chebvander(x, m - 1)              # T_n(x_j)
    fit = (2.0 / m) * tv.T
    fit[0] *= 0.5                                  # b = fit @ f
    c2p = np.zeros((m, m))
    for n in range(m):
        e = np.zeros(m)
        e[n] = 1.0
        p = npcheb.cheb2poly(e)
        c2p[: len(p), n] = p                       # x-power coefficients
    # x = 2u - 1 with u = s / dt
    x2u = np.zeros((m, m))
    for n in range(m):
        for j in range(n + 1):
            x2u[j, n] = factorial(n) / (factorial(j) * factorial(n - j)) * 2.0**j * (-1.0) ** (n - j)
    scale = np.array([factorial(j) / dt**j for j in range(m)])
    return scale[:, None] * (x2u @ c2p @ fit)


def chebyshev_sample_source(samples: np.ndarray, dt: float) -> np.ndarray:
    """Scaled monomial coefficients s_n of the Chebyshev fit of ``samples``.

    ``samples[j]`` is the source at the j-th Chebyshev point of (0, dt).
    """
    samples = np.asarray(samples)
    a = chebyshev_taylor_matrix(samples.shape[0], dt)
    return np.tensordot(a, samples, axes=(1, 0))


def fm_apply(op: np.ndarray, t, coeffs: np.ndarray, K: int) -> np.ndarray:
    """sum_n f_{n+1}(op, t) s_n, the response to the source sum_n s_n t^n / n!.

    ``coeffs`` has shape (m, n) or (m, n, ncol). Only the last f-function goes
    through the Krylov space; the rest follows from the recursion.
    """
    from ._sg_py import recursion, solution_at

    coeffs = np.asarray(coeffs, complex)
    vec = coeffs.ndim == 2
    if vec:
        coeffs = coeffs[..., None]
    m = coeffs.shape[0]
    zero = np.zeros(coeffs.shape[1:], complex)
    vs = recursion(op, zero, coeffs)
    out = solution_at(op, vs, np.atleast_1d(np.asarray(t, float)), m, K)
    out = out if np.ndim(t) else out[0]
    return out[..., 0] if vec else out


# -- steppers ------------------------------------------------------------------------

def reference_step_expm(generator: np.ndarray, dt: float) -> np.ndarray:
    """exp(L dt) by scaling and squaring with Pade approximants."""
    g = np.asarray(generator)
    nrm = float(np.max(np.sum(np.abs(g), axis=0), initial=0.0)) * abs(dt)
    if not np.isfinite(nrm) or nrm > 1e6:
        raise NumericalError(f"generator norm too large for exponentiation: |L dt|_1 = {nrm:.3e}")
    return expm(g * dt)


class SemiGlobal:
    """Fixed-step semi-global propagator for a step-wise generator.

    ``step_gen(k, s)`` returns the generator stack at local times ``s`` in step k.
    """

    def __init__(self, config: PropagatorConfig, backend: str | None = None):
        self.cfg = config
        self.kern = kernels.get(backend)
        self.s_pts = chebyshev_points(config.M, config.dt)
        self.amat = chebyshev_taylor_matrix(config.M, config.dt)

    def step(self, gens: np.ndarray, lam: np.ndarray, guess: np.ndarray):
        """gens: (M + 1, n, n) generators at the Chebyshev points then the midpoint."""
        c = self.cfg
        l0 = np.ascontiguousarray(gens[c.M])
        dl = np.ascontiguousarray(gens[: c.M] - l0)
        return self.kern.sg_step(l0, dl, lam, guess, self.amat, self.s_pts, c.dt, c.K, c.inner_tol, c.max_inner_iters)

    def run(self, step_gen: Callable, n_steps: int, lam0: np.ndarray, keep_points: bool = False,
            times_offset: float = 0.0) -> MapTrajectory:
        c = self.cfg
        t0 = time.perf_counter()
        lam = np.array(lam0, complex)
        maps = np.empty((n_steps + 1,) + lam.shape, complex)
        maps[0] = lam
        iters = np.zeros(n_steps, int)
        res = np.zeros(n_steps)
        pts = np.empty((n_steps, c.M) + lam.shape, complex) if keep_points else None
        local = np.concatenate([self.s_pts, [0.5 * c.dt]])
        guess = np.broadcast_to(lam, (c.M,) + lam.shape).copy()
        for k in range(n_steps):
            gens = np.asarray(step_gen(k, local))
            end, at_pts, nxt, it, r = self.step(gens, lam, guess)
            if not np.isfinite(r) or r > c.inner_tol and it >= c.max_inner_iters:
                raise NumericalError(
                    f"semi-global step {k} (t={times_offset + k * c.dt:.6g}) did not converge: "
                    f"residual {r:.3e} after {it} iterations; reduce dt"
                )
            lam = end
            maps[k + 1] = end
            iters[k] = it
            res[k] = r
            guess = nxt
            if keep_points:
                pts[k] = at_pts
        times = times_offset + np.arange(n_steps + 1) * c.dt
        return MapTrajectory(times, maps, iters, res, "forward", time.perf_counter() - t0, pts)


def propagate_generator(step_gen: Callable, n_steps: int, lam0, config: PropagatorConfig,
                        keep_points: bool = False, backend: str | None = None) -> MapTrajectory:
    """Semi-global propagation of dX/dt = L(t) X for an arbitrary step-wise generator."""
    return SemiGlobal(config, backend).run(step_gen, n_steps, lam0, keep_points)


def propagate_reference_generator(step_gen: Callable, n_steps: int, lam0, dt: float, substeps: int,
                                  constant_within_step: bool = False) -> MapTrajectory:
    t0 = time.perf_counter()
    lam = np.array(lam0, complex)
    maps = np.empty((n_steps + 1,) + lam.shape, complex)
    maps[0] = lam
    h = dt / substeps
    mids = (np.arange(substeps) + 0.5) * h
    for k in range(n_steps):
        if constant_within_step:
            g = reference_step_expm(np.asarray(step_gen(k, mids[:1]))[0], h)
            for _ in range(substeps):
                lam = g @ lam
        else:
            gens = np.asarray(step_gen(k, mids))
            props = expm(gens * h)
            for g in props:
                lam = g @ lam
        maps[k + 1] = lam
    times = np.arange(n_steps + 1) * dt
    return MapTrajectory(times, maps, seconds=time.perf_counter() - t0)


# -- model-level API -------------------------------------------------------------------

def _check_grid(fld: ControlField, config: PropagatorConfig):
    if abs(fld.dt - config.dt) > 1e-12 * config.dt:
        raise ValidationError(f"field dt {fld.dt} differs from propagator dt {config.dt}")


def _adjoint_gen(gen: LiouvilleGenerator):
    n = gen.n_steps
    dt = gen.dt

    def step_gen(r, s):
        g = gen.at(n - 1 - r, dt - np.asarray(s))
        return np.conj(np.swapaxes(g, -1, -2))

    return step_gen


def propagate_map(model: ModelSystem, fld: ControlField, bath: BathSpec, config: PropagatorConfig,
                  direction: str = "forward", target: np.ndarray | None = None,
                  keep_points: bool = False, backend: str | None = None,
                  generator: LiouvilleGenerator | None = None) -> MapTrajectory:
    """Forward map Lambda(t) from the identity, or adjoint Y(t) from Y(tau) = O^dag.

    The adjoint obeys dY/dt = -Y L; it is integrated backward as
    chi = Y^dag with d chi / ds = L(tau - s)^dag chi.
    """
    _check_grid(fld, config)
    gen = generator or LiouvilleGenerator(model, fld, bath)
    n = fld.n_steps
    d2 = model.dim**2
    if direction == "forward":
        lam0 = np.eye(d2, dtype=complex)
        if config.method == "exact_zoh":
            return exact_zoh_trajectory(gen)
        if config.method == "reference":
            return propagate_reference_generator(gen.at, n, lam0, config.dt, config.ref_substeps,
                                                 constant_within_step=bath.gamma == 0)
        return propagate_generator(gen.at, n, lam0, config, keep_points, backend)
    if direction != "adjoint":
        raise ValidationError(f"unknown direction {direction!r}")
    if target is None:
        raise ValidationError("adjoint propagation needs the target superoperator")
    chi0 = np.asarray(target, complex)       # chi(tau) = (O^dag)^dag
    if config.method == "exact_zoh":
        traj = exact_zoh_adjoint(gen, np.asarray(target, complex))
        return traj
    if config.method == "reference":
        tr = propagate_reference_generator(_adjoint_gen(gen), n, chi0, config.dt, config.ref_substeps,
                                           constant_within_step=bath.gamma == 0)
    else:
        tr = propagate_generator(_adjoint_gen(gen), n, chi0, config, False, backend)
    ys = np.conj(np.swapaxes(tr.maps[::-1], -1, -2))
    return MapTrajectory(np.arange(n + 1) * config.dt, ys, tr.inner_iters[::-1], tr.residuals[::-1],
                         "adjoint", tr.seconds)


# -- closed-form product for piecewise-constant fields -------------------------------------

def step_factors(gen: LiouvilleGenerator) -> np.ndarray:
    """E_k = exp(dt D_k) in the dressed frame, shape (n_steps, n, n)."""
    inv = gen.inv
    d = inv.dim
    n = gen.n_steps
    eye = np.eye(d * d, dtype=complex)
    out = np.broadcast_to(eye, (n, d * d, d * d)).copy()
    bath = gen.bath
    if bath.gamma == 0 and bath.gamma_p == 0:
        return out
    for k in range(n):
        dk = frame_dissipator(gen.rates[k]) if gen.rates is not None else np.zeros((d * d, d * d), complex)
        if bath.gamma_p > 0:
            f = inv.frames[k]
            dk = dk + phase_noise_superop(f.conj().T @ inv.step_h[k] @ f, bath.gamma_p)
        out[k] = expm(dk * gen.dt)
    return out


def exact_zoh_trajectory(gen: LiouvilleGenerator) -> MapTrajectory:
    t0 = time.perf_counter()
    inv = gen.inv
    e = step_factors(gen)
    n = gen.n_steps
    d2 = inv.dim**2
    phi = np.eye(d2, dtype=complex)
    u0_dag = unitary_superop(inv.frames[0]).conj().T
    maps = np.empty((n + 1, d2, d2), complex)
    maps[0] = unitary_superop(inv.frames[0]) @ u0_dag
    for k in range(n):
        phi = e[k] @ phi
        maps[k + 1] = unitary_superop(inv.frames[k + 1]) @ phi @ u0_dag
    return MapTrajectory(np.arange(n + 1) * gen.dt, maps, seconds=time.perf_counter() - t0)


def exact_zoh_adjoint(gen: LiouvilleGenerator, target: np.ndarray) -> MapTrajectory:
    """Y(t_k) = O^dag Lambda(tau, t_k) from the same factorization."""
    t0 = time.perf_counter()
    inv = gen.inv
    e = step_factors(gen)
    n = gen.n_steps
    d2 = inv.dim**2
    head = target.conj().T @ unitary_superop(inv.frames[n])
    ys = np.empty((n + 1, d2, d2), complex)
    suf = np.eye(d2, dtype=complex)
    ys[n] = head @ unitary_superop(inv.frames[n]).conj().T
    for k in range(n - 1, -1, -1):
        suf = suf @ e[k]
        ys[k] = head @ suf @ unitary_superop(inv.frames[k]).conj().T
    return MapTrajectory(np.arange(n + 1) * gen.dt, ys, direction="adjoint", seconds=time.perf_counter() - t0)
