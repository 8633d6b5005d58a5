"""Command-line orchestration: one subcommand per module capability.

Exit codes: 0 ok, 2 config error, 3 solver failure, 4 invariant violation.
All data files are written atomically (temp file + rename) and inventoried in
a JSON manifest with sha256 checksums; identical config + seed reproduces
identical checksums.  NFPE_THREADS caps parallelism of independent sub-runs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .coefficients import validate_hypotheses
from .config import RunConfig, emit_config, parse_config
from .diagnostics import (
    barenblatt_oracle,
    compare_l1,
    heat_oracle,
    uniqueness_gap,
)
from .errors import ConfigError, InvariantViolation, NfpeError, SolverError
from .grid import Field, fmt, read_field_csv, write_field_binary, write_field_csv
from .mckean import marginal_discrepancy, simulate_linearized
from .resolvent import resolvent
from .semigroup import Trajectory, exponential_formula_study, mild_solution

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_INVARIANT = 4

MASS_DRIFT_TOL = 1e-7
MIN_VALUE_TOL = -1e-8
CONTRACTION_TOL = 1e-8


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get("NFPE_THREADS", "1")))
    except ValueError:
        return 1


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_field(field: Field, path: Path, binary: bool = False) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        if binary:
            write_field_binary(field, tmp)
        else:
            write_field_csv(field, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_of(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _initial_field(cfg: RunConfig) -> Field:
    grid = cfg.grid.build()
    kind = cfg.initial.kind
    if kind == "gaussian":
        return heat_oracle({"mean": cfg.initial.mean, "sigma0": cfg.initial.sigma0}, 0.0, grid)
    if kind == "barenblatt":
        return barenblatt_oracle(cfg.model.m, 0.0, cfg.initial.t0, grid)
    return read_field_csv(cfg.initial.path, boundary=grid.boundary)


def _load_config(path: str) -> RunConfig:
    try:
        return parse_config(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc


# ---------------------------------------------------------------------------
# Run manifest


class RunMonitor:
    """Collects phase timings, invariant outcomes and the file inventory."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.phases: dict[str, float] = {}
        self.invariants: dict[str, dict] = {}
        self.files: dict[str, str] = {}
        self.status = "ok"
        self.error: str | None = None
        self._t0 = time.perf_counter()

    def phase(self, name: str):
        monitor = self

        class _Phase:
            def __enter__(self):
                self.start = time.perf_counter()

            def __exit__(self, *exc):
                monitor.phases[name] = monitor.phases.get(name, 0.0) + (
                    time.perf_counter() - self.start
                )

        return _Phase()

    def record_invariant(self, name: str, value: float, bound: float, ok: bool) -> None:
        self.invariants[name] = {"value": value, "bound": bound, "ok": bool(ok)}

    def add_file(self, path: Path) -> None:
        self.files[path.name] = sha256_of(path)

    def violations(self) -> list[str]:
        return [k for k, v in self.invariants.items() if not v["ok"]]

    def manifest(self) -> dict:
        return {
            "command": self.command,
            "status": self.status,
            "error": self.error,
            "config": json.loads(json.dumps(_config_dict(self.cfg))),
            "config_toml": emit_config(self.cfg),
            "versions": {
                "nfpe": __version__,
                "numpy": np.__version__,
                "python": sys.version.split()[0],
            },
            "wall_times": self.phases,
            "invariants": self.invariants,
            "files": self.files,
        }

    def write(self, outdir: Path) -> Path:
        path = outdir / "manifest.json"
        atomic_write_text(path, json.dumps(self.manifest(), indent=2, sort_keys=True))
        return path


def _config_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    return d


def run_manifest(monitor: RunMonitor) -> dict:
    """Manifest document for a finished or failed run."""
    return monitor.manifest()


# ---------------------------------------------------------------------------
# Trajectory persistence


def _write_trajectory(traj: Trajectory, outdir: Path, monitor: RunMonitor, stride: int,
                      formats: tuple[str, ...]) -> None:
    summary = ["# t l1 l2 linf mass min max"]
    from .grid import norms as field_norms

    for j, (t, state) in enumerate(zip(traj.times, traj.states)):
        nm = field_norms(state)
        summary.append(
            f"{fmt(t)} {fmt(nm.l1)} {fmt(nm.l2)} {fmt(nm.linf)} {fmt(state.mass())} "
            f"{fmt(state.values.min())} {fmt(state.values.max())}"
        )
        if j % stride == 0 or j == len(traj.states) - 1:
            if "csv" in formats:
                p = outdir / f"state_{j:05d}.csv"
                atomic_write_field(state, p)
                monitor.add_file(p)
            if "binary" in formats:
                p = outdir / f"state_{j:05d}.bin"
                atomic_write_field(state, p, binary=True)
                monitor.add_file(p)
    times_path = outdir / "times.csv"
    atomic_write_text(
        times_path, "index,t\n" + "\n".join(f"{j},{fmt(t)}" for j, t in enumerate(traj.times)) + "\n"
    )
    monitor.add_file(times_path)
    summary_path = outdir / "summary.dat"
    atomic_write_text(summary_path, "\n".join(summary) + "\n")
    monitor.add_file(summary_path)


def _load_run(run_dir: Path) -> tuple[RunConfig, Trajectory]:
    manifest = json.loads((run_dir / "manifest.json").read_text())
    cfg = parse_config(manifest["config_toml"])
    grid = cfg.grid.build()
    rows = np.genfromtxt(run_dir / "times.csv", delimiter=",", names=True)
    times = np.atleast_1d(np.asarray(rows["t"], dtype=float))
    states = []
    for j in range(len(times)):
        path = run_dir / f"state_{j:05d}.csv"
        if not path.exists():
            raise ConfigError(
                f"{path} missing; re-run solve with output.stride = 1 for verification"
            )
        states.append(read_field_csv(path, boundary=grid.boundary))
    h = float(times[1] - times[0]) if len(times) > 1 else cfg.time.h
    return cfg, Trajectory(times=times, states=tuple(states), h=h, model=cfg.model.name)


# ---------------------------------------------------------------------------
# Invariant monitors


def _monitor_trajectory(traj: Trajectory, monitor: RunMonitor) -> None:
    masses = np.array([s.mass() for s in traj.states])
    drift = float(np.max(np.abs(masses - masses[0])))
    monitor.record_invariant("mass_drift", drift, MASS_DRIFT_TOL, drift <= MASS_DRIFT_TOL)
    min_val = float(min(s.values.min() for s in traj.states))
    nonneg_initial = bool(traj.states[0].values.min() >= -1e-12)
    monitor.record_invariant(
        "min_value", min_val, MIN_VALUE_TOL, (min_val >= MIN_VALUE_TOL) or not nonneg_initial
    )


def _monitor_contraction(cfg: RunConfig, rho0: Field, monitor: RunMonitor) -> None:
    c = cfg.model.build()
    rng = np.random.default_rng(cfg.seed + 12345)
    bump = rng.random(rho0.grid.shape)
    bump /= bump.sum() * rho0.grid.cell_volume
    f2 = Field(rho0.grid, 0.9 * rho0.values + 0.1 * bump)
    rcfg = replace(cfg.resolvent, lam=min(cfg.time.h, cfg.resolvent.lambda0))
    y1 = resolvent(rho0, c, rcfg).y
    y2 = resolvent(f2, c, rcfg).y
    from .grid import l1_distance

    num = l1_distance(y1, y2)
    den = l1_distance(rho0, f2)
    ok = num <= den * (1.0 + CONTRACTION_TOL)
    monitor.record_invariant("resolvent_contraction", num / max(den, 1e-300), 1.0 + CONTRACTION_TOL, ok)


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_validate(args) -> int:
    cfg = _load_config(args.config)
    c = cfg.model.build()
    report = validate_hypotheses(c)
    for line in report.lines():
        print(line)
    if args.output:
        payload = {
            "model": report.model,
            "passed": report.passed,
            "results": [asdict(r) for r in report.results],
            "fitted_alpha1": report.fitted_alpha1,
            "fitted_alpha2": report.fitted_alpha2,
            "notes": list(report.notes),
        }
        atomic_write_text(Path(args.output), json.dumps(payload, indent=2))
    if not report.passed and not args.no_strict:
        return EXIT_INVARIANT
    return EXIT_OK


def _cmd_resolvent(args) -> int:
    cfg = _load_config(args.config)
    c = cfg.model.build()
    f = read_field_csv(args.input, boundary=cfg.grid.boundary)
    rcfg = replace(cfg.resolvent, lam=args.lam)
    sol = resolvent(f, c, rcfg)
    out = Path(args.output)
    atomic_write_field(sol.y, out)
    beta_out = out.with_name(out.stem + ".beta" + out.suffix)
    atomic_write_field(sol.beta_y, beta_out)
    sidecar = out.with_suffix(out.suffix + ".json")
    atomic_write_text(
        sidecar,
        json.dumps(
            {
                "lambda": sol.lam,
                "residual_l1": sol.residual_l1,
                "mass": sol.y.mass(),
                "min": float(sol.y.values.min()),
                "eps_history": [
                    {"eps": e, "cauchy_gap": None if np.isnan(g) else g}
                    for e, g in sol.eps_history
                ],
            },
            indent=2,
        ),
    )
    print(f"wrote {out} (residual {sol.residual_l1:.3e}, {len(sol.eps_history)} eps levels)")
    return EXIT_OK


def _solve_run(cfg: RunConfig, outdir: Path) -> tuple[RunMonitor, Trajectory]:
    monitor = RunMonitor(cfg, "solve")
    c = cfg.model.build()
    with monitor.phase("setup"):
        rho0 = _initial_field(cfg)
    with monitor.phase("solve"):
        traj = mild_solution(rho0, c, cfg.time.T, cfg.time.h, cfg.resolvent)
    with monitor.phase("monitors"):
        _monitor_trajectory(traj, monitor)
        _monitor_contraction(cfg, rho0, monitor)
    with monitor.phase("io"):
        _write_trajectory(traj, outdir, monitor, cfg.output.stride, cfg.output.formats)
    return monitor, traj


def _cmd_solve(args) -> int:
    cfg = _load_config(args.config)
    outdir = Path(args.output_dir or cfg.output.directory)
    outdir.mkdir(parents=True, exist_ok=True)
    monitor = RunMonitor(cfg, "solve")
    try:
        monitor, traj = _solve_run(cfg, outdir)
    except SolverError as exc:
        monitor.status = "failed"
        monitor.error = str(exc)
        monitor.write(outdir)
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    monitor.write(outdir)
    bad = monitor.violations()
    print(f"solved {len(traj.times) - 1} steps into {outdir}")
    for name, entry in monitor.invariants.items():
        flag = "ok" if entry["ok"] else "VIOLATED"
        print(f"  {name}: {entry['value']:.3e} (bound {entry['bound']:.3e}) {flag}")
    if bad and not args.no_strict:
        return EXIT_INVARIANT
    return EXIT_OK


def _cmd_convergence(args) -> int:
    cfg = _load_config(args.config)
    c = cfg.model.build()
    rho0 = _initial_field(cfg)
    n_list = [int(v) for v in args.n_list.split(",")]
    t = args.t if args.t is not None else cfg.time.T

    def one(n):
        return exponential_formula_study(rho0, c, t, [n], cfg.resolvent).finals[0]

    workers = max_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            finals = list(pool.map(one, n_list))
        from .grid import l1_distance

        gaps = [l1_distance(a, b) for a, b in zip(finals, finals[1:])]
        report_gaps = gaps
        from .semigroup import _fit_order

        order = _fit_order(n_list[:-1], gaps)
    else:
        report = exponential_formula_study(rho0, c, t, n_list, cfg.resolvent)
        report_gaps = list(report.gaps)
        order = report.fitted_order
    payload = {
        "t": t,
        "n_list": n_list,
        "gaps": report_gaps,
        "fitted_order": order,
    }
    print(json.dumps(payload, indent=2))
    if args.output:
        atomic_write_text(Path(args.output), json.dumps(payload, indent=2))
    return EXIT_OK


def _cmd_verify(args) -> int:
    cfg_a, traj_a = _load_run(Path(args.run_a))
    cfg_b, traj_b = _load_run(Path(args.run_b))
    if cfg_a.model != cfg_b.model:
        raise ConfigError("runs use different models; verification compares like with like")
    c = cfg_a.model.build()
    report = uniqueness_gap(traj_a, traj_b, args.eps, c, floor=args.floor)
    outdir = Path(args.output_dir or "verify_out")
    outdir.mkdir(parents=True, exist_ok=True)
    rows = ["t,h_eps,gronwall_bound"]
    for t, h, g in zip(report.times, report.h_eps, report.gronwall_bound):
        rows.append(f"{fmt(t)},{fmt(h)},{fmt(g)}")
    atomic_write_text(outdir / "uniqueness.csv", "\n".join(rows) + "\n")
    payload = {
        "eps": report.eps,
        "gronwall_constant": report.gronwall_constant,
        "max_h_eps": float(np.max(report.h_eps)),
        "violated": report.violated,
    }
    atomic_write_text(outdir / "uniqueness.json", json.dumps(payload, indent=2))
    print(json.dumps(payload, indent=2))
    if report.violated and not args.no_strict:
        return EXIT_INVARIANT
    return EXIT_OK


def _cmd_compare(args) -> int:
    cfg, traj = _load_run(Path(args.run))
    grid = traj.grid
    params = dict(kv.split("=", 1) for kv in (args.params or []))
    if args.oracle == "heat":
        sigma0 = float(params.get("sigma0", cfg.initial.sigma0))
        mean = float(params.get("mean", cfg.initial.mean))
        oracle = lambda t: heat_oracle({"mean": mean, "sigma0": sigma0}, t, grid)
    elif args.oracle == "barenblatt":
        m = float(params.get("m", cfg.model.m))
        t0 = float(params.get("t0", cfg.initial.t0))
        oracle = lambda t: barenblatt_oracle(m, t, t0, grid)
    else:
        raise ConfigError(f"unknown oracle '{args.oracle}'")
    curve = compare_l1(traj, oracle)
    rows = ["t,l1_error"] + [f"{fmt(t)},{fmt(e)}" for t, e in zip(curve.times, curve.l1_errors)]
    if args.output:
        atomic_write_text(Path(args.output), "\n".join(rows) + "\n")
    print(f"max L1 error vs {args.oracle}: {curve.max_error:.6e}")
    if args.max_l1 is not None and curve.max_error > args.max_l1 and not args.no_strict:
        return EXIT_INVARIANT
    return EXIT_OK


def _cmd_simulate(args) -> int:
    cfg, traj = _load_run(Path(args.pde_run))
    if args.config:
        cfg = _load_config(args.config)
    c = cfg.model.build()
    sde = cfg.sde.build()
    if args.particles:
        sde = replace(sde, n_particles=args.particles)
    if args.seed is not None:
        sde = replace(sde, seed=args.seed)
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    monitor = RunMonitor(cfg, "simulate")
    try:
        with monitor.phase("simulate"):
            ens_traj = simulate_linearized(traj, c, sde, traj.states[0])
    except SolverError as exc:
        monitor.status = "failed"
        monitor.error = str(exc)
        monitor.write(outdir)
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    with monitor.phase("io"):
        disc_rows = ["t,l1,w1"]
        stride = max(1, args.stride)
        from .mckean import empirical_density

        for j, t in enumerate(ens_traj.times):
            ens = ens_traj.ensemble_at(j)
            disc = marginal_discrepancy(ens, traj.states[j], sde)
            disc_rows.append(f"{fmt(t)},{fmt(disc['l1'])},{fmt(disc['w1'])}")
            if j % stride == 0 or j == len(ens_traj.times) - 1:
                pos_path = outdir / f"positions_{j:05d}.csv"
                header = ",".join(f"x{k}" for k in range(ens.d))
                body = "\n".join(",".join(fmt(v) for v in row) for row in ens.positions)
                atomic_write_text(pos_path, header + "\n" + body + "\n")
                monitor.add_file(pos_path)
                kde_path = outdir / f"kde_{j:05d}.csv"
                atomic_write_field(empirical_density(ens, traj.grid, sde), kde_path)
                monitor.add_file(kde_path)
        disc_path = outdir / "discrepancy.csv"
        atomic_write_text(disc_path, "\n".join(disc_rows) + "\n")
        monitor.add_file(disc_path)
    final_disc = marginal_discrepancy(ens_traj.final(), traj.final(), sde)
    monitor.record_invariant(
        "kde_mass",
        empirical_density(ens_traj.final(), traj.grid, sde).mass(),
        1.0,
        abs(empirical_density(ens_traj.final(), traj.grid, sde).mass() - 1.0) < 1e-2,
    )
    monitor.write(outdir)
    print(
        f"simulated {sde.n_particles} particles; final l1={final_disc['l1']:.4e} "
        f"w1={final_disc['w1']:.4e}"
    )
    if monitor.violations() and not args.no_strict:
        return EXIT_INVARIANT
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nfpe",
        description="Degenerate nonlinear Fokker-Planck flows: solve, verify, simulate.",
    )
    parser.add_argument("--no-strict", action="store_true",
                        help="exit 0 even when invariant monitors fail")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check model hypotheses by sampling")
    p.add_argument("--config", required=True)
    p.add_argument("--output", help="optional JSON report path")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("resolvent", help="apply one resolvent to a field")
    p.add_argument("--config", required=True)
    p.add_argument("--input", required=True, help="input field CSV")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--output", required=True, help="output field CSV")
    p.set_defaults(func=_cmd_resolvent)

    p = sub.add_parser("solve", help="run the mild-solution stepper")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("convergence", help="exponential-formula refinement study")
    p.add_argument("--config", required=True)
    p.add_argument("--n-list", default="8,16,32,64,128")
    p.add_argument("--t", type=float)
    p.add_argument("--output", help="optional JSON report path")
    p.set_defaults(func=_cmd_convergence)

    p = sub.add_parser("verify", help="uniqueness-gap diagnostic between two runs")
    p.add_argument("--run-a", required=True)
    p.add_argument("--run-b", required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--floor", type=float, default=0.0)
    p.add_argument("--output-dir")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("compare", help="compare a run against an analytic oracle")
    p.add_argument("--run", required=True)
    p.add_argument("--oracle", choices=["heat", "barenblatt"], required=True)
    p.add_argument("--params", nargs="*", help="oracle parameters as key=value")
    p.add_argument("--max-l1", type=float)
    p.add_argument("--output", help="optional CSV path for the error curve")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("simulate", help="particle simulation against a PDE run")
    p.add_argument("--config")
    p.add_argument("--pde-run", required=True)
    p.add_argument("--particles", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=_cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except NfpeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
