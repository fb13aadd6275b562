"""Command-line entry point.

Subcommands: ``build-frame`` (geometry pipeline + certificate), ``solve``
(one compressible or incompressible run), ``sweep`` (eps sweep against the
incompressible reference), ``verify`` (inequality suite).  Exit codes:
0 success, 1 verification failure, 2 config error, 3 numerical blow-up.
All floats are printed with 17 significant digits so CSVs round-trip
exactly and identical config + seed reproduces identical bytes.
"""

import argparse
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .compressible import (BlowUpError, EulerState, entropy_bump,
                           perp_gradient, pressure_pulse_data,
                           run_compressible, stream_bump_psi,
                           well_prepared_data)
from .config import (ConfigError, RunConfig, default_config, load_config,
                     make_domain, make_eos, make_grid, make_norm_params)
from .geometry import circle_frame, frame_certificate, pipeline_frame
from .incompressible import (IncompressibleSolver, limit_distance,
                             potential_flow, project_initial,
                             run_incompressible)
from .verify import run_all

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_CONFIG = 2
EXIT_BLOWUP = 3

COMP_COLUMNS = ("t", "l2_p", "l2_divv", "normA", "max_vnu", "min_S", "max_S")
INC_COLUMNS = COMP_COLUMNS + ("l2_pi",)
SWEEP_COLUMNS = ("eps", "limit_distance", "sup_normA", "sup_divv",
                 "wallclock")


def _fmt(value):
    return "%.17g" % value if isinstance(value, float) else str(value)


def write_csv(path, columns, rows):
    """Rows are dicts keyed by the column names."""
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in columns) + "\n")


def _require_circle(cfg):
    if not make_domain(cfg).is_circle:
        raise ConfigError("solver runs require the circular wall; boundary "
                          "perturbations apply to build-frame and verify "
                          "only")


# ---------------------------------------------------------------------------
# build-frame
# ---------------------------------------------------------------------------

def cmd_build_frame(cfg, out_dir, workers=None):
    domain = make_domain(cfg)
    grid = make_grid(cfg)
    eps_moll = cfg["geometry.eps_moll"]
    collar = cfg["geometry.collar_width"]
    try:
        frame, psi, _ = pipeline_frame(domain, grid, eps_moll=eps_moll,
                                       collar_width=collar)
        cert = frame_certificate(domain, grid, eps_moll=eps_moll,
                                 collar_width=collar)
    except ValueError as exc:
        print(f"geometry pipeline failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    rows = []
    valid = frame.valid_region
    for i in range(grid.n_r):
        for j in range(grid.n_theta):
            rows.append({"r": float(grid.r[i]), "theta": float(grid.theta[j]),
                         "psi": float(psi[i, j]),
                         "b_x": float(frame.b[0, i, j]),
                         "b_y": float(frame.b[1, i, j]),
                         "valid": int(valid[i, j])})
    write_csv(os.path.join(out_dir, "frame.csv"),
              ("r", "theta", "psi", "b_x", "b_y", "valid"), rows)
    cert_path = os.path.join(out_dir, "certificate.txt")
    with open(cert_path, "w") as fh:
        fh.write("\n".join(cert.lines()) + "\n")
    for line in cert.lines():
        print(line)
    return EXIT_OK if cert.passed else EXIT_VERIFY


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def _compressible_initial(cfg, eps, grid, frame, eos):
    kind = cfg["data.kind"]
    amp = cfg["data.amplitude"]
    if kind == "equilibrium":
        p = np.full((grid.n_r, grid.n_theta), amp)
        zero = np.zeros_like(p)
        return EulerState(p=p, v=np.stack([zero, zero.copy()]),
                          S=zero.copy(), eps=eps)
    if kind == "pulse":
        return pressure_pulse_data(grid, eps, amplitude=amp)
    if kind == "well_prepared":
        return well_prepared_data(
            {"kind": "stream_bumps", "amplitude": amp},
            {"kind": "bump", "amplitude": cfg["data.entropy_amplitude"]},
            eps, grid, frame, eos)
    raise ConfigError(f"data.kind {kind!r} is not a compressible data kind")


def _incompressible_initial(cfg, grid, eos):
    """Returns (state, outer_trace)."""
    kind = cfg["data.kind"]
    if kind == "potential_flow":
        v0, trace = potential_flow(grid, speed=cfg["data.speed"])
        S0 = np.zeros((grid.n_r, grid.n_theta))
        return project_initial(v0, S0, grid, eos, outer_trace=trace), trace
    if kind == "equilibrium":
        zero = np.zeros((grid.n_r, grid.n_theta))
        v0 = np.stack([zero, zero.copy()])
        return project_initial(v0, zero.copy(), grid, eos), 0.0
    if kind == "well_prepared":
        v0 = perp_gradient(grid, stream_bump_psi(grid,
                                                 cfg["data.amplitude"]))
        S0 = entropy_bump(grid, cfg["data.entropy_amplitude"])
        return project_initial(v0, S0, grid, eos), 0.0
    raise ConfigError(f"data.kind {kind!r} is not an incompressible data "
                      "kind")


def _dump_blowup(exc, out_dir, columns):
    """Partial rows + last finite state, so failed runs stay inspectable."""
    if exc.rows:
        write_csv(os.path.join(out_dir, "timeseries.csv"), columns, exc.rows)
    if exc.state is not None:
        np.savez(os.path.join(out_dir, "last_state.npz"), p=exc.state.p,
                 v=exc.state.v, S=exc.state.S, t=exc.state.t,
                 eps=exc.state.eps)
    print(f"blow-up: {exc}", file=sys.stderr)
    for key, val in sorted(exc.diagnostics.items()):
        print(f"  {key} = {_fmt(val)}", file=sys.stderr)


def cmd_solve(cfg, out_dir, workers=None):
    _require_circle(cfg)
    grid = make_grid(cfg)
    eos = make_eos(cfg)
    params = make_norm_params(cfg)
    frame = circle_frame(grid, collar_width=cfg["geometry.collar_width"])
    if cfg["mode"] == "compressible":
        state = _compressible_initial(cfg, cfg["eps"], grid, frame, eos)
        try:
            result = run_compressible(state, cfg["t_end"],
                                      cfg["output_every"], eos, frame,
                                      cfl=cfg["cfl"], norm_params=params,
                                      sponge_strength=cfg["sponge_strength"])
        except BlowUpError as exc:
            _dump_blowup(exc, out_dir, COMP_COLUMNS)
            return EXIT_BLOWUP
        columns = COMP_COLUMNS
    else:
        state, trace = _incompressible_initial(cfg, grid, eos)
        solver = IncompressibleSolver(grid, eos, outer_trace=trace)
        result = run_incompressible(state, cfg["t_end"], cfg["output_every"],
                                    solver, frame=frame, cfl=cfg["cfl"],
                                    norm_params=params)
        columns = INC_COLUMNS
    path = os.path.join(out_dir, "timeseries.csv")
    write_csv(path, columns, result.rows)
    print(f"wrote {path} ({len(result.rows)} rows, dt = {_fmt(result.dt)})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _sweep_member(args):
    """One compressible run; module-level so worker processes can pickle it.

    Rebuilds grid and frame from the config values rather than shipping
    arrays between processes.  Returns (eps, result-or-None, partial rows,
    wallclock, error message).
    """
    values, eps = args
    cfg = RunConfig(values)
    grid = make_grid(cfg)
    eos = make_eos(cfg)
    params = make_norm_params(cfg)
    frame = circle_frame(grid, collar_width=cfg["geometry.collar_width"])
    state = well_prepared_data(
        {"kind": "stream_bumps", "amplitude": cfg["data.amplitude"]},
        {"kind": "bump", "amplitude": cfg["data.entropy_amplitude"]},
        eps, grid, frame, eos)
    start = time.perf_counter()
    try:
        result = run_compressible(state, cfg["sweep.t_end"],
                                  cfg["sweep.output_every"], eos, frame,
                                  cfl=cfg["cfl"], norm_params=params,
                                  sponge_strength=cfg["sponge_strength"])
    except BlowUpError as exc:
        return eps, None, exc.rows, time.perf_counter() - start, str(exc)
    return eps, result, result.rows, time.perf_counter() - start, None


def cmd_sweep(cfg, out_dir, workers=None):
    _require_circle(cfg)
    grid = make_grid(cfg)
    eos = make_eos(cfg)
    params = make_norm_params(cfg)
    frame = circle_frame(grid, collar_width=cfg["geometry.collar_width"])
    t_end = cfg["sweep.t_end"]
    output_every = cfg["sweep.output_every"]
    eps_list = cfg["sweep.eps_list"]

    # reference limit run first, from the same (eps-independent) projection
    v0 = perp_gradient(grid, stream_bump_psi(grid, cfg["data.amplitude"]))
    S0 = entropy_bump(grid, cfg["data.entropy_amplitude"])
    inc_state = project_initial(v0, S0, grid, eos)
    solver = IncompressibleSolver(grid, eos)
    inc_run = run_incompressible(inc_state, t_end, output_every, solver,
                                 frame=frame, cfl=cfg["cfl"],
                                 norm_params=params)
    write_csv(os.path.join(out_dir, "timeseries_inc.csv"), INC_COLUMNS,
              inc_run.rows)

    jobs = [(cfg.values, eps) for eps in eps_list]
    n_workers = workers or min(len(jobs), os.cpu_count() or 1)
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            members = list(pool.map(_sweep_member, jobs))
    else:
        members = [_sweep_member(job) for job in jobs]

    sweep_rows = []
    failures = []
    for eps, result, rows, wallclock, error in members:
        write_csv(os.path.join(out_dir, f"timeseries_eps_{eps:g}.csv"),
                  COMP_COLUMNS, rows)
        if error is not None:
            failures.append((eps, error))
            continue
        sweep_rows.append({
            "eps": eps,
            "limit_distance": limit_distance(result, inc_run,
                                             params.delta, grid,
                                             n_max=params.n_max),
            "sup_normA": max(row["normA"] for row in result.rows),
            "sup_divv": max(row["l2_divv"] for row in result.rows),
            "wallclock": wallclock,
        })
    path = os.path.join(out_dir, "sweep.csv")
    write_csv(path, SWEEP_COLUMNS, sweep_rows)
    print(f"wrote {path} ({len(sweep_rows)} of {len(eps_list)} members)")
    for eps, error in failures:
        print(f"member eps = {eps:g} failed: {error}", file=sys.stderr)
    return EXIT_BLOWUP if failures else EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def cmd_verify(cfg, out_dir, workers=None):
    reports = run_all(out_dir=out_dir, workers=workers, seed=cfg["seed"])
    ok = True
    for rep in reports:
        print(rep.summary())
        ok = ok and rep.passed
    return EXIT_OK if ok else EXIT_VERIFY


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

COMMANDS = (
    ("build-frame", cmd_build_frame,
     "run the geometry pipeline and write the frame certificate"),
    ("solve", cmd_solve, "run one simulation and write its time series"),
    ("sweep", cmd_sweep,
     "run the eps sweep against the incompressible reference"),
    ("verify", cmd_verify, "run the inequality suite"),
)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="lowmach",
        description="Slip-wall Euler flow outside a disk: frames, runs, "
                    "sweeps, and inequality verification.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, help_text in COMMANDS:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", default=None, metavar="PATH",
                         help="key = value config file (defaults apply "
                              "when omitted)")
        cmd.add_argument("--out", default=".", metavar="DIR",
                         help="output directory (created if missing)")
        cmd.add_argument("--workers", type=int, default=None, metavar="N",
                         help="parallel worker count for sweep/verify")
        cmd.set_defaults(func=func)
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else default_config()
        os.makedirs(args.out, exist_ok=True)
        return args.func(cfg, args.out, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
