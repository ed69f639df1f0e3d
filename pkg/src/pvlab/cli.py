"""Batch front end.

    pvlab run <config.toml | bundled-name> [--out DIR]
    pvlab list-scenarios
    pvlab describe <name>
    pvlab dump-fields <trajectory-dir> [--csv DIR]

Exit codes for ``run``: 0 verdict matches ``expect``, 1 mismatch,
2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ScenarioConfig, bundled_names, bundled_text, load_config, parse_config_text
from .dynamics import PdeForm, SolverError, Trajectory, el_residual, exact_family, solve_ns, taylor_green
from .flowmap import FlowError, composed_drift, integrate_flow, invert_map, jacobian_determinant, map_derivatives
from .stochastic import simulate_flow, stochastic_criticality, sample_energies
from .torus import Grid, write_field_dump, write_field_csv
from .variation import criticality_report, default_battery

log = logging.getLogger("pvlab")

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
NUMERIC_ERRORS = (FlowError, SolverError, FloatingPointError, np.linalg.LinAlgError, ValueError)


def _initial_field(cfg: ScenarioConfig, grid: Grid) -> np.ndarray:
    amp = float(cfg.params.get("amplitude", 1.0))
    if cfg.initial == "taylor_green":
        return taylor_green(grid, 0.0, amp)
    if cfg.initial == "zero":
        return grid.zeros()
    if cfg.initial == "constant":
        return grid.constant(cfg.params.get("c", [1.0] + [0.0] * (grid.dim - 1)))
    raise ConfigError(f"field 'trajectory.initial': unknown initial field {cfg.initial!r}")


def build_trajectory(cfg: ScenarioConfig) -> Trajectory:
    grid = Grid(cfg.dim, cfg.n)
    times = np.linspace(0.0, cfg.T, cfg.K + 1)
    if cfg.source == "exact":
        return exact_family(cfg.family, grid, times, cfg.q, **cfg.params)
    if cfg.source == "frozen":
        u0 = _initial_field(cfg, grid)
        return Trajectory.frozen(grid, u0, times, cfg.q, family=f"frozen_{cfg.initial}", params=cfg.params)
    if cfg.source == "solver":
        if cfg.q != 2:
            raise ConfigError("field 'pde.q': the solver handles q = 2 only")
        return solve_ns(_initial_field(cfg, grid), grid, cfg.T, cfg.solver_dt, cfg.K)
    traj = Trajectory.load(cfg.resolve(cfg.path))
    return traj if traj.q == cfg.q else dataclasses.replace(traj, q=cfg.q)


def _battery(cfg: ScenarioConfig, grid: Grid):
    full = default_battery(grid, cfg.T)
    return [full[i] for i in cfg.profiles]


def _write_timeseries(path: Path, traj: Trajectory, form: PdeForm) -> None:
    g = traj.grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "energy_integrand", "residual_projected_l2", "residual_raw_l2"])
        for k, t in enumerate(traj.times):
            e = g.lq_integral(traj.fields[k], traj.q)
            if 1 <= k <= traj.K - 1:
                raw, proj = el_residual(traj, k, form)
                row = [repr(float(t)), repr(e), repr(g.l2_norm(proj)), repr(g.l2_norm(raw))]
            else:
                row = [repr(float(t)), repr(e), "", ""]
            w.writerow(row)


def _dump_endpoints(out: Path, traj: Trajectory) -> None:
    fields = out / "fields"
    fields.mkdir(exist_ok=True)
    write_field_dump(fields / "u_first.pvl", traj.grid, traj.fields[0])
    write_field_dump(fields / "u_last.pvl", traj.grid, traj.fields[-1])


def _run_solve(cfg: ScenarioConfig, out: Path) -> dict:
    traj = build_trajectory(cfg)
    g = traj.grid
    energies = traj.meta.get("step_energy")
    report = {
        "final_energy": float(0.5 * g.integral(np.sum(traj.fields[-1] ** 2, axis=0))),
        "max_divergence": float(max(np.abs(g.divergence(u)).max() for u in traj.fields)),
    }
    ok = True
    if energies is not None:
        report["energy_nonincreasing"] = bool(np.all(np.diff(energies) <= 0))
        ok &= report["energy_nonincreasing"]
    if cfg.source == "solver" and cfg.initial == "taylor_green":
        u0 = traj.fields[0]
        err = g.l2_norm(traj.fields[-1] - np.exp(-cfg.T) * u0) / g.l2_norm(u0)
        report["taylor_green_relative_l2_error"] = err
        ok &= err <= 1e-6
    report["verdict"] = "pass" if ok else "fail"
    _write_timeseries(out / "timeseries.csv", traj, cfg.form)
    traj.save(out / "trajectory", cfg.form)
    return report


def _run_flow_demo(cfg: ScenarioConfig, out: Path) -> dict:
    traj = build_trajectory(cfg)
    g = traj.grid
    v = default_battery(g, cfg.T)[cfg.flow_profile]
    maps = integrate_flow(v, cfg.flow_eps, traj.times)
    det_err = max(float(np.abs(jacobian_determinant(map_derivatives(m)[0]) - 1).max()) for m in maps)
    mid = traj.K // 2
    m = maps[mid]
    inv = invert_map(m)
    roundtrip = float(np.abs(inv(m(g.points)) - g.points).max())
    h = 1e-4
    t = traj.times[mid]
    u = traj.fields[mid]
    fwd = composed_drift(u, integrate_flow(v, h, traj.times[: mid + 1])[-1], h * v.vdot(t))
    bwd = composed_drift(u, integrate_flow(v, -h, traj.times[: mid + 1])[-1], -h * v.vdot(t))
    lin = (fwd - bwd) / (2 * h)
    vt = v.v(t)
    expected = v.vdot(t) + g.lie_bracket(u, vt) + 0.5 * g.laplacian(vt)
    lin_err = float(np.abs(lin - expected).max())
    m.save(out / "map_mid.pvl")
    maps[-1].save(out / "map_final.pvl")
    ok = det_err <= 1e-6 and roundtrip <= 1e-8 and lin_err <= 1e-6
    return {
        "eps": cfg.flow_eps,
        "profile": v.label,
        "max_det_error": det_err,
        "inverse_roundtrip_error": roundtrip,
        "linearization_error": lin_err,
        "verdict": "pass" if ok else "fail",
    }


def execute(cfg: ScenarioConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    if cfg.scenario == "solve":
        report = _run_solve(cfg, out)
    elif cfg.scenario == "flow-demo":
        report = _run_flow_demo(cfg, out)
    else:
        traj = build_trajectory(cfg)
        battery = _battery(cfg, traj.grid)
        if len(battery) < 5:
            raise ConfigError("field 'battery.profiles': verification needs at least 5 test fields")
        if cfg.scenario == "verify-deterministic":
            rep = criticality_report(
                traj, battery, cfg.q, cfg.delta, cfg.form, cfg.theta_crit_rel, cfg.theta_res_rel
            )
        else:
            ens = simulate_flow(traj, None, cfg.samples, cfg.sde_dt, cfg.master_seed, cfg.particles)
            rep = stochastic_criticality(
                traj, battery, cfg.q, cfg.delta, cfg.samples, cfg.sde_dt, cfg.master_seed, cfg.particles,
                form=cfg.form, theta_crit_rel=cfg.theta_crit_rel, theta_res_rel=cfg.theta_res_rel, ensemble=ens,
            )
            ens.write_summary_csv(out / "ensemble_summary.csv", sample_energies(ens, cfg.q))
        report = rep.to_dict()
        _write_timeseries(out / "timeseries.csv", traj, cfg.form)
        _dump_endpoints(out, traj)
        if cfg.dump_trajectory:
            traj.save(out / "trajectory", cfg.form)
    report = {"scenario": cfg.name, "kind": cfg.scenario, "exercises": cfg.anchor, "expect": cfg.expect, **report}
    (out / "report.json").write_text(json.dumps(report, indent=2, default=float) + "\n")
    return report


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        out = Path(args.out) if args.out else cfg.resolve(cfg.output_dir or f"pvlab-out/{cfg.name}")
        report = execute(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    verdict = report.get("verdict")
    print(f"{cfg.name}: verdict={verdict} expect={cfg.expect} -> {out / 'report.json'}")
    if cfg.expect != "none" and verdict != cfg.expect:
        return EXIT_MISMATCH
    return EXIT_OK


def cmd_list(args) -> int:
    for name in bundled_names():
        cfg = parse_config_text(bundled_text(name))
        print(f"{name:28s} {cfg.scenario:22s} expect={cfg.expect:13s} {cfg.anchor}")
    return EXIT_OK


def cmd_describe(args) -> int:
    try:
        text = bundled_text(args.name)
    except KeyError:
        print(f"unknown scenario {args.name!r}; try list-scenarios", file=sys.stderr)
        return EXIT_CONFIG
    cfg = parse_config_text(text)
    print(f"{cfg.name}: {cfg.description}")
    print(f"  exercises : {cfg.anchor}")
    print(f"  kind      : {cfg.scenario}, expect {cfg.expect}")
    print(f"  grid      : N={cfg.dim}, n={cfg.n}; T={cfg.T}, K={cfg.K}")
    print(f"  equation  : q={cfg.q}, {cfg.form.value}")
    src = cfg.family if cfg.source == "exact" else cfg.initial
    print(f"  trajectory: {cfg.source} ({src}) params={cfg.params}")
    print("\n" + text)
    return EXIT_OK


def cmd_dump_fields(args) -> int:
    try:
        traj = Trajectory.load(args.directory)
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot read trajectory: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    g = traj.grid
    print(f"# N={g.dim} n={g.n} q={traj.q} T={traj.T} K={traj.K} family={traj.meta.get('family')}")
    print("k,t,max_abs_u,l2_norm,max_abs_div")
    for k, (t, u) in enumerate(zip(traj.times, traj.fields)):
        print(f"{k},{t:.6g},{np.abs(u).max():.6e},{g.l2_norm(u):.6e},{np.abs(g.divergence(u)).max():.3e}")
    if args.csv:
        d = Path(args.csv)
        d.mkdir(parents=True, exist_ok=True)
        for k, u in enumerate(traj.fields):
            write_field_csv(d / f"u_{k:05d}.csv", g, u)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pvlab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario config or bundled scenario")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides output.dir)")
    r.set_defaults(func=cmd_run)
    sub.add_parser("list-scenarios", help="list bundled scenarios").set_defaults(func=cmd_list)
    d = sub.add_parser("describe", help="show a bundled scenario")
    d.add_argument("name")
    d.set_defaults(func=cmd_describe)
    f = sub.add_parser("dump-fields", help="summarize a saved trajectory")
    f.add_argument("directory")
    f.add_argument("--csv", help="also export every node as CSV into this directory")
    f.set_defaults(func=cmd_dump_fields)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
