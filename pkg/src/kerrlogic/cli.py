"""Command-line harness: ``kerrlogic <command> [--config FILE] [--out DIR] ...``.

Commands write CSV tables and a YAML manifest into the output directory and
touch nothing else.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from . import dynamics as dy
from . import experiments as ex
from . import gates as gt
from . import reduction as rd
from .fock import density_defects

log = logging.getLogger("kerrlogic")

SQRT2 = float(np.sqrt(2.0))


@dataclass
class ExperimentConfig:
    N: int = 75
    d: int = 15
    lam: float = ex.ALPHA
    basis: str | None = None
    # steady sweep
    eps_start: float = 0.0
    eps_stop: float = 40.0
    eps_step: float = 0.5
    compare_max: float = SQRT2 * ex.ALPHA
    rel_tol: float = 0.05
    model: str = "both"  # full | reduced | both
    # time sweep
    sweep_rate: float = 4.0
    sweep_t_end: float = 10.0
    method: str = "me"  # me | mcwf
    dt_out: float = 0.05
    # fidelity
    d_grid: list = field(default_factory=lambda: list(range(5, 76, 5)))
    fidelity_eps: list = field(default_factory=lambda: [SQRT2 * ex.ALPHA, ex.ALPHA / SQRT2])
    # gates
    gate: str = "and"
    latch_full_N: int = 40
    # trajectories
    trajectories: int = 100
    seed: int = 0
    batch_size: int = 25
    step_scale: float = 2.0
    # validation
    inject_fault: bool = False
    params: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        data = yaml.safe_load(Path(path).read_text()) or {}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def gate_params(self) -> gt.GateParams:
        p = gt.DEFAULT_PARAMS
        parts = {}
        for key, cur in (("cavity", p.cavity), ("and_gate", p.and_gate), ("not_gate", p.not_gate), ("latch", p.latch)):
            over = dict(self.params.get(key, {}))
            for k in ("beta", "beta_p"):
                if k in over:
                    over[k] = complex(over[k])
            parts[key] = dataclasses.replace(cur, **over)
        return gt.GateParams(**parts)

    def trajectory_config(self) -> dy.TrajectoryConfig:
        return dy.TrajectoryConfig(self.trajectories, self.seed, self.step_scale, batch_size=self.batch_size)


# -- output helpers ------------------------------------------------------------------

def _versions() -> dict:
    return {"kerrlogic": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": float(x.real), "im": float(x.imag)}
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    return x


def write_manifest(out: Path, command: str, cfg: ExperimentConfig, results: dict, timing: dict | None = None):
    doc = {"command": command, "config": _plain(dataclasses.asdict(cfg)),
           "parameters": _plain(dataclasses.asdict(cfg.gate_params())),
           "versions": _versions(), "results": _plain(results)}
    if timing:
        doc["timing_seconds"] = _plain(timing)
    (out / f"{command}.manifest.yaml").write_text(yaml.safe_dump(doc, sort_keys=False))


def _write_rows(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _basis(cfg: ExperimentConfig) -> rd.ReductionBasis:
    if cfg.basis:
        b = rd.load_basis(cfg.basis)
        return b.truncate(cfg.d) if b.d != cfg.d else b
    return ex.jade_basis(cfg.N, cfg.d, cfg.lam, cfg.gate_params().cavity)


# -- commands ------------------------------------------------------------------------

def cmd_reduce(cfg: ExperimentConfig, out: Path) -> int:
    if cfg.d > cfg.N:
        raise ValueError(f"d={cfg.d} exceeds N={cfg.N}")
    t0 = time.perf_counter()
    basis = ex.jade_basis(cfg.N, cfg.d, cfg.lam, cfg.gate_params().cavity)
    manifest = {"N": cfg.N, "d": cfg.d, "lambda": cfg.lam, "cavity": dataclasses.asdict(cfg.gate_params().cavity)}
    rd.save_basis(out / "basis.txt", basis, manifest)
    results = {"basis_file": "basis.txt", "manifest_hash": rd.manifest_hash(manifest),
               "jade_status": basis.info.get("jade_status", "identity"),
               "jade_sweeps": basis.info.get("jade_sweeps", 0),
               "off_final": (basis.info.get("off_history") or [0.0])[-1]}
    write_manifest(out, "reduce", cfg, results, {"total": time.perf_counter() - t0})
    print(f"wrote {out / 'basis.txt'}")
    return 0


def cmd_sweep_steady(cfg: ExperimentConfig, out: Path) -> int:
    eps = np.round(np.arange(cfg.eps_start, cfg.eps_stop + 0.5 * cfg.eps_step, cfg.eps_step), 12)
    if not len(eps):
        raise ValueError("empty drive grid")
    cav = cfg.gate_params().cavity
    curves = {}
    if cfg.model in ("full", "both"):
        curves["full"] = ex.steady_sweep(gt.full_cavity(cfg.N, cav), eps)
    if cfg.model in ("reduced", "both"):
        curves["reduced"] = ex.steady_sweep(ex.reduced_cavity(_basis(cfg), cav), eps)
    rows = []
    for tag, c in curves.items():
        for ch, name in ((1, "reflected"), (2, "transmitted")):
            rows += [(e, tag, ch, v) for e, v in zip(eps, c[name])]
    _write_rows(out / "sweep_steady.csv", ["eps", "model", "channel", "abs_mean"], rows)
    results = {}
    for tag, c in curves.items():
        lo, hi, s = ex.max_slope_interval(eps, c["transmitted"])
        results[f"{tag}_max_slope_interval"] = [lo, hi]
        results[f"{tag}_max_slope"] = s
    status = 0
    if len(curves) == 2:
        m = eps <= cfg.compare_max + 1e-12
        for name in ("reflected", "transmitted"):
            rel = ex.relative_deviation(curves["full"][name][m], curves["reduced"][name][m])
            results[f"max_rel_dev_{name}"] = float(np.nanmax(rel))
            results[f"max_abs_dev_{name}"] = float(np.abs(curves["full"][name][m] - curves["reduced"][name][m]).max())
        results["rel_tol"] = cfg.rel_tol
        worst = max(results["max_rel_dev_reflected"], results["max_rel_dev_transmitted"])
        results["within_rel_tol"] = bool(worst <= cfg.rel_tol)
        if worst > cfg.rel_tol:
            status = 1
    write_manifest(out, "sweep-steady", cfg, results)
    for k, v in results.items():
        print(f"{k}: {v}")
    if status:
        print(f"FAIL: reduced model deviates by {worst:.3g} > {cfg.rel_tol:g} relative", file=sys.stderr)
    return status


def cmd_sweep_time(cfg: ExperimentConfig, out: Path) -> int:
    sched = ex.sweep_schedule(cfg.sweep_rate, cfg.sweep_t_end)
    grid = np.round(np.arange(0.0, cfg.sweep_t_end + 0.5 * cfg.dt_out, cfg.dt_out), 12)
    cav = cfg.gate_params().cavity
    models = {}
    if cfg.model in ("full", "both"):
        models["full"] = (gt.full_cavity(cfg.N, cav), None)
    if cfg.model in ("reduced", "both"):
        b = _basis(cfg)
        models["reduced"] = (ex.reduced_cavity(b, cav), b)
    timing = {}
    for tag, (cavity, basis) in models.items():
        G = gt.build_driven_cavity(cavity)
        obs = [dy.channel_observable(G, 1, "reflected"), dy.channel_observable(G, 2, "transmitted")]
        psi0 = rd.reduced_vacuum(basis) if basis is not None else ex._vacuum(cavity.a.space.total_dim)
        t0 = time.perf_counter()
        if cfg.method == "me":
            series = dy.master_evolve(psi0, G, sched, grid, obs)
        else:
            series = dy.mcwf_ensemble(psi0, G, sched, grid, cfg.trajectory_config(), obs)
        timing[tag] = time.perf_counter() - t0
        series.write_csv(out / f"sweep_time_{tag}.csv")
    write_manifest(out, "sweep-time", cfg, {"models": list(models)}, timing)
    return 0


def cmd_fidelity_curve(cfg: ExperimentConfig, out: Path) -> int:
    basis = _basis(cfg)
    if basis.d == basis.N:
        raise ValueError("fidelity curve needs a reduction basis with d < N")
    cav = cfg.gate_params().cavity
    rows, results = [], {}
    for eps in cfg.fidelity_eps:
        c = ex.fidelity_curve(basis, float(eps), cfg.d_grid, cav)
        for d, fj, ff in zip(c["d"], c["jade"], c["fock"]):
            rows += [(float(eps), int(d), "jade", fj), (float(eps), int(d), "fock", ff)]
        first = [int(d) for d, f in zip(c["d"], c["fock"]) if f >= 0.99]
        results[f"eps={float(eps):.6g}"] = {"jade": dict(zip(map(int, c["d"]), map(float, c["jade"]))),
                                              "fock": dict(zip(map(int, c["d"]), map(float, c["fock"]))),
                                              "fock_first_d_0.99": first[0] if first else None}
    _write_rows(out / "fidelity_curve.csv", ["eps", "d", "method", "fidelity"], rows)
    write_manifest(out, "fidelity-curve", cfg, results)
    return 0


def cmd_gate_sim(cfg: ExperimentConfig, out: Path) -> int:
    params = cfg.gate_params()
    kind = cfg.gate
    sched = ex.gate_schedule(kind, params.and_gate.alpha)
    grid = np.round(np.arange(0.0, sched.t_end + 0.5 * cfg.dt_out, cfg.dt_out), 12)
    models = {}
    if cfg.model in ("reduced", "both"):
        b = _basis(cfg)
        models["reduced"] = (ex.reduced_cavity(b, params.cavity), b)
    if cfg.model in ("full", "both"):
        N = cfg.N if kind != "latch" else cfg.latch_full_N
        models["full"] = (gt.full_cavity(N, params.cavity), None)
    method = "mcwf" if cfg.method == "mcwf" else "me"
    results, timing = {}, {}
    for tag, (cavity, basis) in models.items():
        setup = ex.gate_setup(kind, cavity, params, basis)
        t0 = time.perf_counter()
        series = ex.run_gate(setup, sched, grid, method, cfg.trajectory_config())
        timing[tag] = time.perf_counter() - t0
        series.write_csv(out / f"gate_{kind}_{tag}.csv")
        magnitude = kind != "latch"
        results[tag] = {lab: [[a, b_, v] for a, b_, v in ex.segment_plateaus(series, lab, sched, magnitude=magnitude)]
                        for lab in series.labels}
    write_manifest(out, "gate-sim", cfg, results, timing)
    print(yaml.safe_dump(_plain(results), sort_keys=False))
    return 0


def run_validation(cfg: ExperimentConfig) -> list[dict]:
    """Algebra-equivalence and state-validity checks as report entries."""
    checks = []

    def add(name, value, tol):
        checks.append({"name": name, "value": float(value), "tol": float(tol), "pass": bool(value <= tol)})

    params = cfg.gate_params()
    perturb = 1e-3 if cfg.inject_fault else 0.0
    for kind, N in (("and", 10), ("not", 10), ("latch", 6)):
        r = gt.check_oracle(kind, N, 10, cfg.seed, params, perturb=perturb)
        add(f"{kind}: S composed vs closed form", r["dS"], 1e-14)
        add(f"{kind}: L composed vs closed form", r["dL"], 1e-9)
        add(f"{kind}: H composed vs closed form", r["dH"], 1e-9)
        add(f"{kind}: S unitarity", r["unitarity"], 1e-10)
    rng = np.random.default_rng(cfg.seed)
    for kind, N in (("and", 10), ("not", 10), ("latch", 5)):
        cavs = gt.oracle_cavities(kind, N, params.cavity)
        G = gt.build_gate(kind, cavs, params)
        drives = dict(gt.fixed_drives(kind, params))
        drives.update(gt.random_drives(G.names() - set(drives), rng))
        H1, L1 = dy.lindblad_operators(G, drives)
        H2, L2 = gt.gate_master_equation(kind, cavs, drives, params)
        n = H1.space.total_dim
        X = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        rho = X @ X.conj().T
        rho /= np.trace(rho)
        diff = np.abs(dy.lindblad_apply(rho, H1, L1) - dy.lindblad_apply(rho, H2, L2)).max()
        add(f"{kind}: compact vs full Lindbladian", diff, 1e-8)
    cav = gt.full_cavity(10, params.cavity)
    G = gt.build_driven_cavity(cav)
    rho = dy.steady_state(*dy.lindblad_operators(G, {"epsilon": 5.0}))
    tr, herm, mn = density_defects(rho)
    add("steady state trace defect", tr, 1e-10)
    add("steady state Hermiticity defect", herm, 1e-10)
    add("steady state negative eigenvalue", max(0.0, -mn), 1e-10)
    return checks


def cmd_validate(cfg: ExperimentConfig, out: Path) -> int:
    checks = run_validation(cfg)
    failed = [c for c in checks if not c["pass"]]
    (out / "validate.report.yaml").write_text(yaml.safe_dump({"checks": checks, "failed": len(failed)}, sort_keys=False))
    write_manifest(out, "validate", cfg, {"failed": len(failed), "total": len(checks)})
    for c in checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']}: {c['value']:.3g} (tol {c['tol']:.1g})")
    return 1 if failed else 0


COMMANDS = {
    "reduce": cmd_reduce,
    "sweep-steady": cmd_sweep_steady,
    "sweep-time": cmd_sweep_time,
    "fidelity-curve": cmd_fidelity_curve,
    "gate-sim": cmd_gate_sim,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kerrlogic", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="YAML file with ExperimentConfig fields")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--trajectories", type=int)
    p.add_argument("--long", action="store_true", help="run the full latch at the full truncation N")
    p.add_argument("--gate", choices=gt.GATE_KINDS)
    p.add_argument("--model", choices=("full", "reduced", "both"))
    p.add_argument("--method", choices=("me", "mcwf"))
    p.add_argument("--basis", help="basis file written by `reduce`")
    p.add_argument("-N", type=int)
    p.add_argument("-d", type=int)
    p.add_argument("--lam", type=float)
    p.add_argument("--inject-fault", action="store_true", help="validate: perturb the closed-form oracles")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
        for name, attr in (("seed", "seed"), ("trajectories", "trajectories"), ("gate", "gate"), ("model", "model"),
                           ("method", "method"), ("basis", "basis"), ("N", "N"), ("d", "d"), ("lam", "lam")):
            v = getattr(args, name)
            if v is not None:
                setattr(cfg, attr, v)
        if args.inject_fault:
            cfg.inject_fault = True
        if args.long:
            cfg.latch_full_N = cfg.N
        if cfg.basis and not Path(cfg.basis).exists():
            raise FileNotFoundError(f"basis file {cfg.basis} not found")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except Exception as exc:  # report and exit nonzero
        log.debug("failure", exc_info=True)
        print(f"kerrlogic {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
