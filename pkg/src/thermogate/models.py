"""Driven model Hamiltonians, control fields and gate targets."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ShapeError, ValidationError
from .operators import embedded_gellmann, gellmann_basis, is_hermitian, unitary_superop

SX = np.array([[0, 1], [1, 0]], complex)
SY = np.array([[0, -1j], [1j, 0]], complex)
SZ = np.diag([1.0, -1.0]).astype(complex)
I2 = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class ModelSystem:
    """Drift plus linear controls plus a static (or shaped) uncontrolled term."""

    name: str
    drift: np.ndarray
    control_generators: tuple
    uncontrolled_generator: np.ndarray
    eps_uc: float = 0.0
    uc_shaped: bool = False
    coeff_table: Mapping[str, float] = field(default_factory=dict)
    logical_levels: tuple = (0, 1)

    def __post_init__(self):
        d = self.drift.shape[0]
        if not is_hermitian(self.drift):
            raise ValidationError("drift must be Hermitian")
        for g in self.control_generators:
            if g.shape != (d, d) or not is_hermitian(g):
                raise ValidationError("control generators must be Hermitian d x d")
        if self.uncontrolled_generator.shape != (d, d):
            raise ShapeError("uncontrolled generator has the wrong shape")

    @property
    def dim(self) -> int:
        return self.drift.shape[0]

    @property
    def n_controls(self) -> int:
        return len(self.control_generators)

    @property
    def level_energies(self) -> np.ndarray:
        return np.real(np.diag(self.drift)).copy()

    @property
    def generators(self) -> np.ndarray:
        return np.stack(self.control_generators)

    def static_hamiltonian(self, uc_factor: float = 1.0) -> np.ndarray:
        return self.drift + uc_factor * self.eps_uc * self.uncontrolled_generator


def _coeffs(table, n, keys, default=1.0):
    table = dict(table or {})
    out = {}
    for k in keys:
        for j in range(1, n + 1):
            out[f"{k}{j}"] = float(table.get(f"{k}{j}", table.get(k, default)))
    return out


def build_qubit_ancilla_model(
    n_ancillas: int = 1,
    omega: float = 1.0,
    coeff_table: Mapping[str, float] | None = None,
    eps_uc_scale: float = 0.0,
    uc_shaped: bool = False,
) -> ModelSystem:
    """Qubit driven through ``n_ancillas`` ancilla levels.

    Level order is (|0>, |1>, |a_1>, ..., |a_n>). For one ancilla the drift is
    (w/2) G3 + (4w / (2 sqrt 3)) G8 and the controls couple |0>,|1> to the
    ancilla (G4, G6); the uncontrolled term is the direct qubit coupling G1.
    """
    if n_ancillas not in (1, 2, 3):
        raise ValidationError(f"n_ancillas must be 1, 2 or 3, got {n_ancillas}")
    if omega <= 0:
        raise ValidationError("omega must be positive")
    n = n_ancillas
    d = n + 2
    c = _coeffs(coeff_table, n, "abcd")
    if n == 1:
        g = gellmann_basis(3)
        drift = 0.5 * omega * g[2] + 4 * omega / (2 * np.sqrt(3.0)) * g[7]
        gens = (c["a1"] * g[3], c["b1"] * g[5])
        unc = g[0].copy()
    else:
        diag = np.zeros(d)
        diag[0], diag[1] = 0.5 * omega, -0.5 * omega
        for j in range(1, n + 1):
            diag[1 + j] = 4 * j * omega
        drift = np.diag(diag).astype(complex)
        g4 = [embedded_gellmann(d, 0, 1 + j, "x") for j in range(1, n + 1)]
        g6 = [embedded_gellmann(d, 1, 1 + j, "x") for j in range(1, n + 1)]
        gens = (
            sum(c[f"a{j}"] * g4[j - 1] for j in range(1, n + 1)),
            sum(c[f"b{j}"] * g6[j - 1] for j in range(1, n + 1)),
        )
        unc = sum(c[f"c{j}"] * g4[j - 1] + c[f"d{j}"] * g6[j - 1] for j in range(1, n + 1))
    return ModelSystem(
        name=f"qubit_{n}anc",
        drift=np.asarray(drift, complex),
        control_generators=tuple(np.asarray(x, complex) for x in gens),
        uncontrolled_generator=np.asarray(unc, complex),
        eps_uc=float(eps_uc_scale),
        uc_shaped=uc_shaped,
        coeff_table=c,
        logical_levels=(0, 1),
    )


def build_two_qubit_model(omega1: float = 1.0, a: float = 0.0, a_x: float = 1.0, a_y: float = 1.0) -> ModelSystem:
    """Direct-control two-qubit model for the C-iX gate (basis |00>,|01>,|10>,|11>)."""
    if omega1 <= 0:
        raise ValidationError("omega1 must be positive")
    drift = a * np.kron(I2, I2) + omega1 * np.kron(SZ, I2)
    g1 = np.kron(I2 - SZ, a_x * SX + a_y * SY)
    g2 = np.kron(SX, SZ)
    return ModelSystem(
        name="two_qubit",
        drift=drift,
        control_generators=(g1, g2),
        uncontrolled_generator=np.zeros((4, 4), complex),
        eps_uc=0.0,
        coeff_table={"a": a, "a_x": a_x, "a_y": a_y},
        logical_levels=(0, 1, 2, 3),
    )


@dataclass(frozen=True)
class Shape:
    """Gaussian envelope lifted so that s = floor at both ends and 1 at the center."""

    tau: float
    sigma: float | None = None
    floor: float = 1e-4
    center: float | None = None

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, float)
        sigma = self.sigma if self.sigma is not None else self.tau / 6.0
        c = self.center if self.center is not None else self.tau / 2.0
        g = np.exp(-((t - c) ** 2) / (2 * sigma**2))
        edge = max(np.exp(-(c**2) / (2 * sigma**2)), np.exp(-((self.tau - c) ** 2) / (2 * sigma**2)))
        lifted = np.clip((g - edge) / (1.0 - edge), 0.0, None)
        return self.floor + (1.0 - self.floor) * lifted


@dataclass
class ControlField:
    """Piecewise-constant controls: ``amplitudes[:, k]`` holds on [t_k, t_k + dt)."""

    dt: float
    amplitudes: np.ndarray
    shape: Shape | None = None

    def __post_init__(self):
        a = np.array(self.amplitudes, dtype=float, ndmin=2)
        if not np.all(np.isfinite(a)):
            raise ValidationError("control amplitudes must be finite")
        if self.dt <= 0:
            raise ValidationError("dt must be positive")
        self.amplitudes = a

    @property
    def n_channels(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def n_times(self) -> int:
        return self.amplitudes.shape[1]

    @property
    def n_steps(self) -> int:
        return self.n_times - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_times) * self.dt

    @property
    def tau(self) -> float:
        return self.n_steps * self.dt

    def envelope(self) -> np.ndarray:
        if self.shape is None:
            return np.ones(self.n_times)
        return self.shape(self.times)

    def copy(self, amplitudes=None) -> "ControlField":
        amp = self.amplitudes if amplitudes is None else amplitudes
        return ControlField(self.dt, np.array(amp, float, copy=True), self.shape)


def time_grid(tau: float, dt: float) -> int:
    n = int(round(tau / dt))
    if n < 1 or abs(n * dt - tau) > 1e-9 * max(1.0, tau):
        raise ValidationError(f"tau={tau} is not a multiple of dt={dt}")
    return n


def guess_field(
    model: ModelSystem,
    tau: float = 400.0,
    dt: float = 0.1,
    amplitudes: Sequence[float] | float = 0.02,
    frequencies: Sequence[float] | None = None,
    phases: Sequence[float] | None = None,
    shape: Shape | None = None,
) -> ControlField:
    """Shaped cosines, one per channel, at drift Bohr frequencies by default."""
    n = time_grid(tau, dt)
    shape = shape or Shape(tau)
    t = np.arange(n + 1) * dt
    nc = model.n_controls
    amps = np.broadcast_to(np.asarray(amplitudes, float), (nc,))
    if frequencies is None:
        frequencies = default_guess_frequencies(model)
    freqs = np.broadcast_to(np.asarray(frequencies, float), (nc,))
    ph = np.zeros(nc) if phases is None else np.broadcast_to(np.asarray(phases, float), (nc,))
    s = shape(t)
    amp = np.stack([amps[c] * s * np.cos(freqs[c] * t + ph[c]) for c in range(nc)])
    return ControlField(dt, amp, shape)


def default_guess_frequencies(model: ModelSystem) -> list[float]:
    """Largest drift gap bridged by each control generator."""
    e = model.level_energies
    out = []
    for g in model.control_generators:
        idx = np.argwhere(np.abs(np.triu(g, 1)) > 0)
        gaps = [abs(e[i] - e[j]) for i, j in idx]
        out.append(max(gaps) if gaps else 0.0)
    return out


def eval_hamiltonian(model: ModelSystem, fld: ControlField, t_index: int) -> np.ndarray:
    """H(t_k) = H0 + sum_c eps_c(t_k) G_c + eps_uc(t_k) G_uc."""
    if not 0 <= t_index < fld.n_times:
        raise IndexError(f"t_index {t_index} outside grid of {fld.n_times} points")
    if fld.n_channels != model.n_controls:
        raise ShapeError("field channel count does not match the model")
    h = model.drift.copy()
    for c, g in enumerate(model.control_generators):
        h = h + fld.amplitudes[c, t_index] * g
    return h + uc_amplitude(model, fld)[t_index] * model.uncontrolled_generator


def uc_amplitude(model: ModelSystem, fld: ControlField) -> np.ndarray:
    if model.uc_shaped:
        return model.eps_uc * fld.envelope()
    return np.full(fld.n_times, model.eps_uc)


def step_hamiltonians(model: ModelSystem, fld: ControlField) -> np.ndarray:
    """Hamiltonians of every piecewise-constant step, shape (n_steps, d, d)."""
    if fld.n_channels != model.n_controls:
        raise ShapeError("field channel count does not match the model")
    amp = fld.amplitudes[:, :-1]
    h = np.einsum("ck,cij->kij", amp, model.generators) + model.drift
    uc = uc_amplitude(model, fld)[:-1]
    return h + uc[:, None, None] * model.uncontrolled_generator


@dataclass(frozen=True)
class GateTarget:
    name: str
    logical_dim: int
    unitary: np.ndarray        # embedded, zero outside the logical block
    superop: np.ndarray
    working: np.ndarray        # operator-basis column indices acted on by the target

    @property
    def norm(self) -> float:
        return float(np.real(np.vdot(self.superop, self.superop)))


HADAMARD = np.array([[1, 1], [1, -1]], complex) / np.sqrt(2)
CIX = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1j], [0, 0, 1j, 0]], complex)


def target_superoperator(gate: str, dim: int, levels: Sequence[int] | None = None) -> GateTarget:
    """Target O = U_e (x) U_e^*, where U_e acts on the logical levels only."""
    gate = gate.lower()
    if gate == "hadamard":
        if dim < 2 or dim > 5:
            raise ValidationError("hadamard target needs 2 <= dim <= 5")
        u = HADAMARD
    elif gate == "cix":
        if dim != 4:
            raise ValidationError("cix target needs dim = 4")
        u = CIX
    elif gate == "identity":
        u = np.eye(dim, dtype=complex)
    else:
        raise ValidationError(f"unknown gate {gate!r}")
    m = u.shape[0]
    levels = list(range(m)) if levels is None else list(levels)
    if len(levels) != m or max(levels) >= dim:
        raise ValidationError("logical levels incompatible with the target")
    ue = np.zeros((dim, dim), complex)
    ue[np.ix_(levels, levels)] = u
    o = unitary_superop(ue)
    working = np.flatnonzero(np.linalg.norm(o, axis=0) > 1e-12)
    return GateTarget(gate, m, ue, o, working)
