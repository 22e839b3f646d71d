"""Post-run metrics and (gamma, T) scans."""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .models import ControlField, GateTarget, ModelSystem
from .name_thermal import BathSpec
from .operators import dim_of_superop, unvectorize, vectorize
from .propagator import PropagatorConfig, propagate_map

SCAN_COLUMNS = ("gamma", "T", "IF_U", "IF_noise", "IF_controlled", "log_ratio", "gain",
                "purity_sub", "delta_E", "iters")


@dataclass(frozen=True)
class SubspaceSelection:
    indices: tuple
    logical_dim: int

    def __post_init__(self):
        if len(self.indices) == 0:
            raise ValidationError("empty subspace selection")

    @property
    def size(self) -> int:
        return len(self.indices)


def working_directions(target: GateTarget | np.ndarray, tol: float = 1e-12) -> SubspaceSelection:
    """Operator-basis columns on which the target acts (column norm > tol)."""
    o = target.superop if isinstance(target, GateTarget) else np.asarray(target)
    idx = tuple(int(i) for i in np.flatnonzero(np.linalg.norm(o, axis=0) > tol))
    m = target.logical_dim if isinstance(target, GateTarget) else dim_of_superop(o)
    return SubspaceSelection(idx, m)


def full_selection(dim: int) -> SubspaceSelection:
    return SubspaceSelection(tuple(range(dim * dim)), dim)


def subspace_purity(lam: np.ndarray, sel: SubspaceSelection) -> float:
    """Tr(L_sub^dag L_sub) / (number of selected directions)."""
    lam = np.asarray(lam)
    n = lam.shape[0]
    if max(sel.indices) >= n or min(sel.indices) < 0:
        raise ValidationError("selection index outside the operator space")
    ix = np.asarray(sel.indices)
    sub = lam[np.ix_(ix, ix)]
    return float(np.real(np.vdot(sub, sub))) / sel.size


def map_purity(lam: np.ndarray) -> float:
    return subspace_purity(lam, full_selection(dim_of_superop(lam)))


def energy_change(lam: np.ndarray, h0: np.ndarray, picture: str = "heisenberg") -> float:
    """Energy change imposed by the map.

    ``literal`` applies the map to H0 itself, tr(Lambda(H0)) - tr(H0); that is
    zero for every trace-preserving map. ``heisenberg`` evolves H0 with the
    adjoint map, tr(Lambda^dag(H0)) - tr(H0) = tr(H0 Lambda(I)) - tr(H0), the
    energy taken from the maximally mixed state (times d).
    """
    lam = np.asarray(lam)
    h0 = np.asarray(h0)
    d = dim_of_superop(lam)
    if h0.shape != (d, d):
        raise ValidationError(f"H0 shape {h0.shape} does not match map dimension {d}")
    if picture == "literal":
        out = unvectorize(lam @ vectorize(h0))
    elif picture == "heisenberg":
        out = unvectorize(lam.conj().T @ vectorize(h0))
    else:
        raise ValidationError(f"unknown picture {picture!r}")
    return float(np.real(np.trace(out) - np.trace(h0)))


def purity_loss_rate(lam: np.ndarray, l_d: np.ndarray) -> float:
    """d/dt Tr(Lambda^dag Lambda) = 2 Re Tr{Lambda^dag L Lambda}.

    Only the dissipative part of L contributes; the Hamiltonian part is
    anti-Hermitian and drops out.
    """
    lam = np.asarray(lam)
    l_d = np.asarray(l_d)
    if lam.shape != l_d.shape:
        raise ValidationError("map and generator shapes differ")
    return 2.0 * float(np.real(np.vdot(lam, l_d @ lam)))


@dataclass(frozen=True)
class InfidelityMetrics:
    ratio: float
    log_ratio: float
    gain: float


def infidelity_metrics(if_u: float, if_noise: float, if_controlled: float | None = None) -> InfidelityMetrics:
    """R_IF = IF_noise/IF_U, its log10, and gain = log10(IF_C/IF_noise)."""
    if not if_u > 0:
        raise ValidationError("IF_U must be positive")
    r = if_noise / if_u
    lr = math.log10(r) if r > 0 else float("-inf")
    if if_controlled is None:
        g = float("nan")
    elif if_noise > 0 and if_controlled > 0:
        g = math.log10(if_controlled / if_noise)
    else:
        g = float("nan")
    return InfidelityMetrics(r, lr, g)


@dataclass
class ScanPoint:
    gamma: float
    T: float
    IF_U: float
    IF_noise: float
    IF_controlled: float = float("nan")
    log_ratio: float = float("nan")
    gain: float = float("nan")
    purity_sub: float = float("nan")
    delta_E: float = float("nan")
    iters: int = 0
    error: str = ""

    def row(self) -> tuple:
        return tuple(getattr(self, c) for c in SCAN_COLUMNS)


@dataclass
class ScanResult:
    gammas: list
    temperatures: list
    points: list = field(default_factory=list)

    def grid(self, name: str) -> np.ndarray:
        """Values of column ``name`` as a (len(gammas), len(temperatures)) array."""
        out = np.full((len(self.gammas), len(self.temperatures)), np.nan)
        for p in self.points:
            i = self.gammas.index(p.gamma)
            j = self.temperatures.index(p.T)
            out[i, j] = getattr(p, name)
        return out

    def failures(self) -> list:
        return [p for p in self.points if p.error]


def _infidelity(lam, target) -> float:
    from .oct import fidelity
    return 1.0 - fidelity(lam, target)


def _scan_point(args):
    model, target, ref_field, gamma, T, pcfg, ocfg, mode, if_u, spectral, sel = args
    from .oct import optimize
    pt = ScanPoint(gamma, T, if_u, float("nan"))
    try:
        bath = BathSpec(gamma=gamma, T=T, spectral=spectral)
        lam = propagate_map(model, ref_field, bath, pcfg).final
        pt.IF_noise = _infidelity(lam, target)
        final = lam
        if mode == "mitigate" and gamma > 0:
            res = optimize(model, bath, target, ocfg, pcfg, ref_field)
            final = propagate_map(model, res.field, bath, pcfg).final
            pt.IF_controlled = _infidelity(final, target)
            pt.iters = len(res.records) - 1
        m = infidelity_metrics(if_u, pt.IF_noise, pt.IF_controlled if mode == "mitigate" else None)
        pt.log_ratio = m.log_ratio
        pt.gain = m.gain
        pt.purity_sub = subspace_purity(final, sel)
        pt.delta_E = energy_change(final, model.drift)
    except Exception as exc:  # recorded per point, the scan goes on
        pt.error = f"{type(exc).__name__}: {exc}"
    return pt


def scan_grid(model: ModelSystem, target: GateTarget, gammas, temperatures, ref_field: ControlField,
              propagator_config: PropagatorConfig, oct_config=None, mode: str = "degrade_only",
              spectral: str = "ohmic", workers: int = 1) -> ScanResult:
    """Forward-propagate the reference field at every (gamma, T), optionally re-optimize.

    Rows come out gamma-major, T-minor, independent of completion order.
    """
    if mode not in ("degrade_only", "mitigate"):
        raise ValidationError(f"unknown scan mode {mode!r}")
    if mode == "mitigate" and oct_config is None:
        raise ValidationError("mitigate mode needs an OCT configuration")
    gammas = [float(g) for g in gammas]
    temperatures = [float(t) for t in temperatures]
    if not gammas or not temperatures:
        raise ValidationError("scan needs at least one gamma and one T")
    lam_u = propagate_map(model, ref_field, BathSpec(0.0, 1.0), propagator_config).final
    if_u = _infidelity(lam_u, target)
    if not if_u > 0:
        # an exactly converged reference still needs a positive normalizer
        if_u = np.finfo(float).tiny
    sel = working_directions(target)
    jobs = [(model, target, ref_field, g, t, propagator_config, oct_config, mode, if_u, spectral, sel)
            for g in gammas for t in temperatures]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(_scan_point, jobs))
    else:
        points = [_scan_point(j) for j in jobs]
    return ScanResult(gammas, temperatures, points)


# -- CSV output -----------------------------------------------------------------

def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def scan_csv(result: ScanResult) -> str:
    return _csv_text(SCAN_COLUMNS, (p.row() for p in result.points))


def bohr_trace_csv(times, pairs, omegas) -> str:
    header = ["t"] + [f"omega_{i}{j}" for i, j in pairs]
    return _csv_text(header, ([t, *om] for t, om in zip(times, omegas)))


def iteration_csv(records) -> str:
    cols = ("iteration", "j_max", "fidelity", "infidelity", "field_norm", "seconds")
    return _csv_text(cols, ([getattr(r, c) for c in cols] for r in records))


def write_atomic(path, text: str):
    """Write via a temporary file and rename so readers never see partial output."""
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)
