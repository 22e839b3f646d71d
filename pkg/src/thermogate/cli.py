"""Command-line entry point.

Commands: validate, propagate, optimize, scan, bohr-trace, diagnose.
Exit codes: 0 ok, 1 invalid configuration, 2 numerical failure, 3 I/O error,
4 unparsable configuration text.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .config import RunConfig, parse_config
from .errors import ConfigError, NumericalError, ShapeError, ValidationError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO, EXIT_PARSE = 0, 1, 2, 3, 4
COMMANDS = ("validate", "propagate", "optimize", "scan", "bohr-trace", "diagnose")


# -- building objects from a resolved config ---------------------------------------

def build_model(cfg: RunConfig):
    from .models import build_qubit_ancilla_model, build_two_qubit_model
    m = cfg["model"]
    co = dict(m["coefficients"])
    if m["type"] == "two_qubit":
        # without a_y = 0 the C-iX gate lies outside the reachable set
        return build_two_qubit_model(co.get("omega1", m["omega"]), co.get("a", 0.0),
                                     co.get("a_x", 1.0), co.get("a_y", 0.0))
    amp = max(abs(a) for a in cfg["oct"]["guess_amplitudes"])
    return build_qubit_ancilla_model(m["n_ancillas"], m["omega"], co, m["eps_uc_scale"] * amp, m["uc_shaped"])


def build_target(cfg: RunConfig, model):
    from .models import target_superoperator
    return target_superoperator(cfg.gate, model.dim)


def build_bath(cfg: RunConfig, gamma=None, T=None):
    from .name_thermal import BathSpec
    b = cfg["bath"]
    return BathSpec(gamma=b["gamma"] if gamma is None else gamma, T=b["T"] if T is None else T,
                    spectral=b["spectral"], gamma_p=b["gamma_p"])


def build_propagator_config(cfg: RunConfig, **kw):
    from .propagator import PropagatorConfig
    p = cfg["propagator"]
    args = dict(dt=cfg["grid"]["dt"], M=p["M"], K=p["K"], inner_tol=p["inner_tol"],
                max_inner_iters=p["max_inner_iters"], method=p["method"], ref_substeps=p["ref_substeps"])
    args.update(kw)
    return PropagatorConfig(**args)


def backend(cfg: RunConfig):
    b = cfg["propagator"]["backend"]
    return None if b == "auto" else b


def build_oct_config(cfg: RunConfig):
    from .oct import OCTConfig
    o = cfg["oct"]
    return OCTConfig(lam=o["lam"], gamma_a=o["gamma_a"], max_iters=o["max_iters"],
                     target_infidelity=o["target_infidelity"], mode=o["mode"], ascent=o["ascent"],
                     engine=o["engine"], precondition=o["precondition"])


def build_field(cfg: RunConfig, model):
    from .models import ControlField, Shape, guess_field
    o = cfg["oct"]
    g = cfg["grid"]
    tau = cfg.tau
    shape = Shape(tau, sigma=o["shape_sigma"] or None, floor=o["shape_floor"])
    if o["guess_file"]:
        amps = load_field(o["guess_file"])
        if amps.shape != (model.n_controls, g["n_t"] + 1):
            raise ConfigError(f"oct.guess_file: expected amplitudes of shape {(model.n_controls, g['n_t'] + 1)}, "
                              f"got {amps.shape}")
        return ControlField(g["dt"], amps, shape)
    phases = o["guess_phases"] or None
    if o["guess_seed"] >= 0 and phases is None:
        rng = np.random.default_rng(o["guess_seed"])
        phases = list(rng.uniform(0, 2 * np.pi, model.n_controls))
    try:
        return guess_field(model, tau, g["dt"], _per_channel(o["guess_amplitudes"], model, "guess_amplitudes"),
                           _per_channel(o["guess_frequencies"], model, "guess_frequencies") or None,
                           _per_channel(phases, model, "guess_phases") if phases else None, shape)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def _per_channel(vals, model, key):
    if not vals:
        return vals
    if len(vals) not in (1, model.n_controls):
        raise ConfigError(f"oct.{key}: expected 1 or {model.n_controls} values, got {len(vals)}")
    return list(vals) if len(vals) > 1 else vals[0]


def load_field(path: str) -> np.ndarray:
    """Amplitudes from a .npy array or a field CSV written by ``optimize``."""
    if path.endswith(".npy"):
        return np.load(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1:].T.copy()


# -- output -----------------------------------------------------------------------

def write_results(records, schema, path):
    """Atomic CSV write of ``records`` (sequences matching ``schema``)."""
    from .diagnostics import _csv_text, write_atomic
    try:
        write_atomic(path, _csv_text(schema, records))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_json(path, obj):
    from .diagnostics import write_atomic
    try:
        write_atomic(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


class Run:
    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.out = cfg.output_dir()
        self.prefix = cfg["output"]["prefix"]
        self.t0 = time.perf_counter()
        self.timings = {}
        self.artifacts = []
        try:
            os.makedirs(self.out, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {self.out}: {exc}") from exc

    def path(self, suffix: str) -> str:
        p = os.path.join(self.out, f"{self.prefix}_{suffix}")
        self.artifacts.append(os.path.basename(p))
        return p

    def lap(self, name: str, t: float):
        self.timings[name] = time.perf_counter() - t

    def manifest(self, summary: dict):
        self.timings["total"] = time.perf_counter() - self.t0
        write_json(os.path.join(self.out, f"{self.prefix}_{self.command}_manifest.json"), {
            "command": self.command,
            "version": __version__,
            "config_hash": self.cfg.hash(),
            "config": self.cfg.data,
            "timings": self.timings,
            "artifacts": self.artifacts,
            "summary": summary,
        })


def field_rows(fld):
    return ([t, *fld.amplitudes[:, k]] for k, t in enumerate(fld.times))


def field_schema(fld):
    return ["t"] + [f"eps_{c}" for c in range(fld.n_channels)]


# -- commands ---------------------------------------------------------------------

def cmd_validate(cfg: RunConfig, out) -> str:
    out.write(cfg.to_toml())
    return f"config ok ({cfg.hash()[:12]})"


def cmd_propagate(cfg: RunConfig, out) -> str:
    from .oct import fidelity
    from .operators import choi_cptp_check
    from .propagator import propagate_map
    run = Run(cfg, "propagate")
    model = build_model(cfg)
    fld = build_field(cfg, model)
    target = build_target(cfg, model)
    t = time.perf_counter()
    traj = propagate_map(model, fld, build_bath(cfg), build_propagator_config(cfg), backend=backend(cfg))
    run.lap("propagate", t)
    lam = traj.final
    f = fidelity(lam, target)
    rep = choi_cptp_check(lam)
    np.save(run.path("map.npy"), lam)
    summary = {"infidelity": 1 - f, "trace_residual": rep.trace_residual, "min_choi_eig": rep.min_choi_eig,
               "mean_inner_iters": float(np.mean(traj.inner_iters)) if traj.inner_iters is not None else None}
    run.manifest(summary)
    return f"IF={1 - f:.6e}"


def cmd_optimize(cfg: RunConfig, out) -> str:
    from .diagnostics import iteration_csv, write_atomic
    from .oct import optimize
    run = Run(cfg, "optimize")
    model = build_model(cfg)
    fld = build_field(cfg, model)
    target = build_target(cfg, model)
    t = time.perf_counter()
    res = optimize(model, build_bath(cfg), target, build_oct_config(cfg), build_propagator_config(cfg), fld)
    run.lap("optimize", t)
    write_atomic(run.path("iterations.csv"), iteration_csv(res.records))
    write_results(field_rows(res.field), field_schema(res.field), run.path("field.csv"))
    summary = {"best_infidelity": res.best_infidelity, "converged": res.converged,
               "iterations": len(res.records) - 1, "rejections": res.rejections}
    run.manifest(summary)
    return f"IF={res.best_infidelity:.6e} after {len(res.records) - 1} iterations"


def cmd_scan(cfg: RunConfig, out) -> str:
    from .diagnostics import scan_csv, scan_grid, write_atomic
    from dataclasses import replace

    from .oct import optimize
    run = Run(cfg, "scan")
    model = build_model(cfg)
    fld = build_field(cfg, model)
    target = build_target(cfg, model)
    pcfg = build_propagator_config(cfg)
    ocfg = build_oct_config(cfg)
    t = time.perf_counter()
    if not cfg["oct"]["guess_file"]:
        # the scan needs a closed-system reference pulse
        ref = optimize(model, build_bath(cfg, gamma=0.0), target, replace(ocfg, mode="sequential_krotov"),
                       pcfg, fld)
        fld = ref.field
        run.lap("reference", t)
        write_results(field_rows(fld), field_schema(fld), run.path("reference_field.csv"))
    s = cfg["scan"]
    workers = s["workers"] or (os.cpu_count() or 1)
    t = time.perf_counter()
    res = scan_grid(model, target, s["gammas"], s["temperatures"], fld, pcfg, ocfg, s["mode"],
                    cfg["bath"]["spectral"], workers)
    run.lap("scan", t)
    write_atomic(run.path("scan.csv"), scan_csv(res))
    failures = [{"gamma": p.gamma, "T": p.T, "error": p.error} for p in res.failures()]
    run.manifest({"points": len(res.points), "failures": failures})
    return f"scan {len(s['gammas'])}x{len(s['temperatures'])} = {len(res.points)} points, {len(failures)} failed"


def cmd_bohr_trace(cfg: RunConfig, out) -> str:
    from .diagnostics import bohr_trace_csv, write_atomic
    from .name_thermal import bohr_trace, propagate_invariants
    run = Run(cfg, "bohr-trace")
    model = build_model(cfg)
    fld = build_field(cfg, model)
    t = time.perf_counter()
    times, pairs, om = bohr_trace(propagate_invariants(model, fld))
    run.lap("invariants", t)
    write_atomic(run.path("bohr_trace.csv"), bohr_trace_csv(times, pairs, om))
    run.manifest({"pairs": len(pairs), "samples": len(times)})
    return f"bohr trace: {len(pairs)} pairs x {len(times)} times"


def cmd_diagnose(cfg: RunConfig, out) -> str:
    from .diagnostics import energy_change, map_purity, purity_loss_rate, subspace_purity, working_directions
    from .name_thermal import LiouvilleGenerator
    from .oct import fidelity
    from .operators import choi_cptp_check, commutator_superop
    from .propagator import propagate_map
    run = Run(cfg, "diagnose")
    model = build_model(cfg)
    fld = build_field(cfg, model)
    target = build_target(cfg, model)
    bath = build_bath(cfg)
    pcfg = build_propagator_config(cfg)
    t = time.perf_counter()
    gen = LiouvilleGenerator(model, fld, bath)
    lam = propagate_map(model, fld, bath, pcfg, generator=gen, backend=backend(cfg)).final
    lam_u = propagate_map(model, fld, build_bath(cfg, gamma=0.0), pcfg, backend=backend(cfg)).final
    run.lap("propagate", t)
    k = fld.n_steps - 1
    l_full = gen.at(k, fld.dt)
    l_d = l_full - commutator_superop(gen.inv.step_h[k], check_hermitian=False)
    rep = choi_cptp_check(lam)
    summary = {
        "IF_U": 1 - fidelity(lam_u, target),
        "IF_noise": 1 - fidelity(lam, target),
        "purity_sub": subspace_purity(lam, working_directions(target)),
        "map_purity": map_purity(lam),
        "delta_E": energy_change(lam, model.drift),
        "delta_E_literal": energy_change(lam, model.drift, picture="literal"),
        "purity_rate_end": purity_loss_rate(lam, l_d),
        "trace_residual": rep.trace_residual,
        "min_choi_eig": rep.min_choi_eig,
    }
    write_json(run.path("diagnostics.json"), summary)
    run.manifest(summary)
    return f"IF_noise={summary['IF_noise']:.6e} purity_sub={summary['purity_sub']:.6f}"


HANDLERS = {
    "validate": cmd_validate,
    "propagate": cmd_propagate,
    "optimize": cmd_optimize,
    "scan": cmd_scan,
    "bohr-trace": cmd_bohr_trace,
    "diagnose": cmd_diagnose,
}


def run_command(cmd: str, cfg: RunConfig, out=None) -> str:
    if cmd not in HANDLERS:
        raise ConfigError(f"unknown command {cmd!r}")
    return HANDLERS[cmd](cfg, out or sys.stdout)


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="thermogate", description="Thermal-noise gate control toolkit.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("config", help="TOML configuration file")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                    help="override a config key (repeatable)")
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config, args.overrides)
        line = run_command(args.command, cfg)
    except ConfigError as exc:
        code = EXIT_PARSE if "parse error" in str(exc) else EXIT_CONFIG
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (ValidationError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(line)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
