"""Experiment runner: JSON config in, CSV artifacts + manifest out.

    meanfield2nn run <config.json> [--threads N] [--out DIR]
    meanfield2nn preset figure1|figure2|figure3|figure4 [--scale small|paper]

Exit codes: 0 success, 2 invalid config, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from pathlib import Path

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment", "seed", "model", "activation", "output_dir"],
    "properties": {
        "experiment": {
            "enum": ["sgd", "dd", "langevin", "statics", "thresholds", "chaos",
                     "figure1", "figure2", "figure3", "figure4"]
        },
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "scale": {"enum": ["small", "paper"]},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["delta", "d"],
            "properties": {
                "delta": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "d": {"anyOf": [{"type": "integer", "minimum": 1},
                                {"const": "inf"}]},
                "s0": {"type": "integer", "minimum": 1},
            },
        },
        "activation": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["piecewise_linear", "non_monotone", "relu_affine"]},
                "knots": {
                    "type": "array",
                    "minItems": 2,
                    "items": {"type": "array", "minItems": 2, "maxItems": 2,
                              "items": {"type": "number"}},
                },
            },
        },
        "sgd": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_units": {"type": "integer", "minimum": 1},
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "schedule": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["constant", "power"]},
                        "value": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
                "steps": {"type": "integer", "minimum": 0},
                "beta": {"anyOf": [{"type": "number", "exclusiveMinimum": 0},
                                   {"const": "inf"}]},
                "lambda": {"type": "number", "minimum": 0},
                "risk_eval_stride": {"type": "integer", "minimum": 1},
                "mc_samples": {"type": "integer", "minimum": 2},
                "exact_risk": {"type": "boolean"},
                "init_scale": {"type": "number", "exclusiveMinimum": 0},
                "init_a": {"type": "number"},
                "init_b": {"type": "number"},
            },
        },
        "dd": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_atoms": {"type": "integer", "minimum": 1},
                "d": {"anyOf": [{"type": "integer", "minimum": 2},
                                {"const": "inf"}]},
                "space": {"enum": ["radial_1d", "aniso_2d", "relu_4d"]},
                "t_max": {"type": "number", "exclusiveMinimum": 0},
                "n_time_points": {"type": "integer", "minimum": 2},
                "n_snapshots": {"type": "integer", "minimum": 2},
                "init_scale": {"type": "number", "exclusiveMinimum": 0},
                "init_a": {"type": "number"},
                "init_b": {"type": "number"},
                "beta": {"type": "number", "exclusiveMinimum": 0},
                "lambda": {"type": "number", "minimum": 0},
                "wide_format": {"type": "boolean"},
            },
        },
        "statics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "d": {"anyOf": [{"type": "integer", "minimum": 2}, {"const": "inf"}]},
                "d_values": {"type": "array",
                             "items": {"anyOf": [{"type": "integer", "minimum": 2},
                                                 {"const": "inf"}]}},
                "deltas": {"type": "array", "items": {"type": "number"}},
                "grid_min": {"type": "number", "exclusiveMinimum": 0},
                "grid_max": {"type": "number", "exclusiveMinimum": 0},
                "grid_size": {"type": "integer", "minimum": 2},
                "qp_tol": {"type": "number", "exclusiveMinimum": 0},
                "dump_kernel_grids": {"type": "boolean"},
            },
        },
        "chaos": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_list": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "eps_list": {"type": "array",
                             "items": {"type": "number", "exclusiveMinimum": 0}},
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "n_reference_atoms": {"type": "integer", "minimum": 1},
                "n_checkpoints": {"type": "integer", "minimum": 2},
                "init_scale": {"type": "number", "exclusiveMinimum": 0},
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}


class ConfigError(ValueError):
    pass


def validate_config(config: dict) -> None:
    import jsonschema

    try:
        jsonschema.validate(config, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "$" + "".join(f"[{p!r}]" for p in exc.absolute_path)
        raise ConfigError(f"config field {path}: {exc.message}") from None


def _num(value, default=None):
    if value is None:
        return default
    return math.inf if value == "inf" else value


# ---------------------------------------------------------------------------
# small construction helpers (imported lazily so --threads can cap BLAS first)
# ---------------------------------------------------------------------------

def _activation(conf):
    from . import model as M

    kind = conf["kind"]
    if kind == "relu_affine":
        return M.relu_affine()
    if "knots" in conf:
        return M.ActivationSpec(M.ActivationKind(kind),
                                tuple((float(t), float(s)) for t, s in conf["knots"]))
    return M.piecewise_linear() if kind == "piecewise_linear" else M.non_monotone()


def _data_model(conf):
    from .model import DataModel

    return DataModel(conf["delta"], _num(conf["d"]), conf.get("s0"))


def _schedule(conf):
    from .sgd import Schedule

    if conf is None:
        return Schedule("constant", 1.0)
    return Schedule(conf["kind"], conf.get("value", 1.0 if conf["kind"] == "constant" else 0.25))


def _cell(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(x) for x in row])


# ---------------------------------------------------------------------------
# experiment bodies
# ---------------------------------------------------------------------------

def _sgd_pieces(config, seed):
    from .sgd import SgdConfig, gaussian_init
    from .streams import stream

    model = _data_model(config["model"])
    act = _activation(config["activation"])
    sc = config.get("sgd", {})
    relu = config["activation"]["kind"] == "relu_affine"
    cfg = SgdConfig(
        epsilon=sc.get("epsilon", 1e-6),
        schedule=_schedule(sc.get("schedule")),
        steps=sc.get("steps", 100_000),
        beta=_num(sc.get("beta"), math.inf),
        lam=sc.get("lambda", 0.0),
        seed=seed,
        risk_eval_stride=sc.get("risk_eval_stride", 0),
        mc_samples=sc.get("mc_samples", 10_000),
        exact_risk=sc.get("exact_risk", not relu),
    )
    init = gaussian_init(
        sc.get("n_units", 400), model, sc.get("init_scale", 0.8),
        stream(seed, "init"),
        a0=sc.get("init_a", 1.0) if relu else None,
        b0=sc.get("init_b", 1.0) if relu else None,
    )
    return model, act, cfg, init


def _write_sgd_outputs(out, tag, traj, schedule, epsilon):
    from .sgd import SummaryRow, iteration_to_time

    rows = [[getattr(r, f) for f in SummaryRow.FIELDS] for r in traj.rows]
    write_csv(out / f"sgd_summary{tag}.csv", SummaryRow.FIELDS, rows)
    snap_rows = []
    for k, atoms in traj.snapshots:
        t = iteration_to_time(schedule, epsilon, k)
        for i, r in enumerate(atoms.radii()):
            snap_rows.append([k, t, i, r])
    write_csv(out / f"sgd_radial_snapshots{tag}.csv",
              ["iteration", "t", "unit", "radius"], snap_rows)
    final = traj.final
    header = ["unit"] + [f"w{i}" for i in range(final.dim)]
    cols = [final.w]
    if final.a is not None:
        header += ["a", "b"]
        cols += [final.a[:, None], final.b[:, None]]
    import numpy as np

    mat = np.hstack(cols)
    write_csv(out / f"final_ensemble{tag}.csv", header,
              ([i] + list(row) for i, row in enumerate(mat)))


def run_sgd_experiment(config, out: Path, checkpoints=None, tag=""):
    from .sgd import sgd_run

    model, act, cfg, init = _sgd_pieces(config, config["seed"])
    traj = sgd_run(model, act, cfg, init, checkpoints=checkpoints)
    _write_sgd_outputs(out, tag, traj, cfg.schedule, cfg.epsilon)
    return {"model": model, "act": act, "cfg": cfg, "trajectory": traj}


def _dd_pieces(config, seed, beta_mode=False):
    import numpy as np

    from .kernels import AtomEnsemble, Space
    from .streams import stream

    model = _data_model(config["model"])
    act = _activation(config["activation"])
    dc = config.get("dd", {})
    relu = config["activation"]["kind"] == "relu_affine"
    space = Space(dc.get("space", "relu_4d" if relu
                          else ("aniso_2d" if model.anisotropic else "radial_1d")))
    d_dd = _num(dc.get("d"), math.inf)
    j = dc.get("n_atoms", 400)
    scale = dc.get("init_scale", 0.8)
    rng = stream(seed, "dd-init")
    dim = int(model.d)
    if space is Space.RADIAL_1D:
        z = rng.standard_normal((j, dim)) * (scale / math.sqrt(dim))
        atoms = np.linalg.norm(z, axis=1)[:, None]
    else:
        s0 = model.s0 if model.s0 is not None else dim
        z1 = rng.standard_normal((j, s0)) * (scale / math.sqrt(dim))
        z2 = rng.standard_normal((j, dim - s0)) * (scale / math.sqrt(dim))
        r1 = np.linalg.norm(z1, axis=1)
        r2 = np.linalg.norm(z2, axis=1)
        if space is Space.ANISO_2D:
            atoms = np.column_stack([r1, r2])
        else:
            a0 = np.full(j, dc.get("init_a", 1.0))
            b0 = np.full(j, dc.get("init_b", 1.0))
            atoms = np.column_stack([a0, b0, r1, r2])
    ens = AtomEnsemble.equal_weights(space, atoms)
    return model, act, dc, space, d_dd, ens


def _dd_grids(dc):
    import numpy as np

    from .dd import log_time_grid

    t_max = dc.get("t_max", 10.0)
    n_points = dc.get("n_time_points", 100_000)
    n_snaps = dc.get("n_snapshots", 60)
    grid = log_time_grid(t_max, n_points)
    snaps = np.concatenate([[0.0], np.geomspace(grid[1], t_max, n_snaps - 1)])
    return grid, snaps


def _write_dd_outputs(out, tag, traj, space, wide=False):
    coords = {
        "radial_1d": ["r"],
        "aniso_2d": ["r1", "r2"],
        "relu_4d": ["a", "b", "r1", "r2"],
    }[space.value]
    if wide:
        j = traj.ensembles[0].n_atoms
        header = ["t"] + [f"{c}{i}" for c in coords for i in range(j)]
        rows = ([t] + [x for c in range(len(coords)) for x in ens.atoms[:, c]]
                for t, ens in zip(traj.times, traj.ensembles))
        write_csv(out / f"dd_trajectory{tag}.csv", header, rows)
    else:
        rows = ([t, i] + list(ens.atoms[i])
                for t, ens in zip(traj.times, traj.ensembles)
                for i in range(ens.n_atoms))
        write_csv(out / f"dd_trajectory{tag}.csv", ["t", "atom"] + coords, rows)
    write_csv(out / f"dd_risks{tag}.csv", ["t", "risk"],
              zip(traj.times, traj.risks))


def run_dd_experiment(config, out: Path, tag=""):
    from .dd import dd_integrate

    model, act, dc, space, d_dd, ens = _dd_pieces(config, config["seed"])
    grid, snaps = _dd_grids(dc)
    traj = dd_integrate(act, model.delta, d_dd, ens, grid,
                        _schedule(config.get("sgd", {}).get("schedule")),
                        snapshot_times=snaps)
    _write_dd_outputs(out, tag, traj, space, dc.get("wide_format", False))
    return {"model": model, "act": act, "trajectory": traj}


def run_langevin_experiment(config, out: Path):
    import numpy as np

    from .dd import langevin_mf_1d
    from .diagnostics import boltzmann_residual
    from .kernels import lambda_pm, reduced_risk
    from .streams import stream

    model, act, dc, space, _, ens = _dd_pieces(config, config["seed"])
    beta = dc.get("beta", 50.0)
    lam = dc.get("lambda", 0.5)
    t_max = dc.get("t_max", 50.0)
    n_points = dc.get("n_time_points", 10_000)
    grid = np.linspace(0.0, t_max, n_points + 1)
    snaps = np.linspace(0.0, t_max, dc.get("n_snapshots", 51))
    traj = langevin_mf_1d(act, model.delta, beta, lam, ens, grid,
                          _schedule(config.get("sgd", {}).get("schedule")),
                          stream(config["seed"], "langevin"), snapshot_times=snaps)
    rows = []
    for t, ens_t, risk in zip(traj.times, traj.ensembles, traj.risks):
        r = ens_t.atoms[:, 0]
        free_risk = 0.5 * risk + 0.5 * lam * float(np.mean(np.square(r)))
        rows.append([t, risk, free_risk, float(np.mean(r))])
    write_csv(out / "langevin_summary.csv", ["t", "risk", "free_risk", "mean_r"], rows)
    final = traj.ensembles[-1].atoms[:, 0]
    write_csv(out / "final_particles.csv", ["particle", "r"],
              ((i, r) for i, r in enumerate(final)))
    residual = boltzmann_residual(final, act, model.delta, beta, lam)
    write_csv(out / "boltzmann.csv", ["beta", "lambda", "residual"],
              [[beta, lam, residual]])
    return {"residual": residual, "trajectory": traj}


def run_statics_experiment(config, out: Path, tag=""):
    import numpy as np

    from .statics import (DEFAULT_CHECK_GRID, build_kernel_grid,
                          check_point_mass_optimality, minimize_single_delta,
                          solve_simplex_qp)

    model = _data_model(config["model"])
    act = _activation(config["activation"])
    sc = config.get("statics", {})
    d = _num(sc.get("d"), model.d)
    deltas = sc.get("deltas", [model.delta])
    grid = np.linspace(sc.get("grid_min", 0.01), sc.get("grid_max", 10.0),
                       sc.get("grid_size", 100))
    rows = []
    for delta in deltas:
        kernel = build_kernel_grid(act, float(delta), d, grid)
        qp = solve_simplex_qp(kernel, tol=sc.get("qp_tol", 1e-9))
        r_star, risk_single = minimize_single_delta(act, float(delta), d, grid)
        passes = check_point_mass_optimality(act, float(delta), d, r_star,
                                             DEFAULT_CHECK_GRID)
        rows.append([delta, r_star, risk_single, qp.risk, qp.gap,
                     qp.converged, passes])
        if sc.get("dump_kernel_grids", False):
            kernel.to_csv(out / f"kernel_grid_delta{delta:g}{tag}.csv")
    write_csv(out / f"statics_scan{tag}.csv",
              ["delta", "r_star", "risk_single", "risk_qp", "qp_gap",
               "qp_converged", "passes_lemma1"], rows)
    return {"rows": rows}


def run_thresholds_experiment(config, out: Path):
    from .statics import delta_threshold_scan

    act = _activation(config["activation"])
    sc = config.get("statics", {})
    d_values = [_num(d) for d in sc.get("d_values", [5, 10, 40, 160])]
    deltas = sc.get("deltas")
    table = []
    passing_rows = []
    for d in d_values:
        scan = delta_threshold_scan(act, d, delta_grid=deltas)
        bounds = scan.bounds()
        lo, hi = (math.nan, math.nan) if bounds is None else bounds
        table.append([d, bounds is not None, lo, hi,
                      int(scan.passes.sum()), scan.is_interval])
        for delta, ok, r_star in zip(scan.deltas, scan.passes, scan.r_stars):
            passing_rows.append([d, delta, ok, r_star])
    write_csv(out / "thresholds.csv",
              ["d", "any_pass", "delta_low", "delta_high", "n_passing",
               "is_interval"], table)
    write_csv(out / "thresholds_passing.csv",
              ["d", "delta", "passes", "r_star"], passing_rows)
    return {"table": table}


def run_chaos_experiment(config, out: Path):
    from .diagnostics import chaos_sweep
    from .sgd import SgdConfig

    model = _data_model(config["model"])
    act = _activation(config["activation"])
    cc = config.get("chaos", {})
    base = SgdConfig(
        epsilon=cc.get("epsilon", 1e-5),
        schedule=_schedule(config.get("sgd", {}).get("schedule")),
        steps=0,
        seed=config["seed"],
        mc_samples=config.get("sgd", {}).get("mc_samples", 10_000),
    )
    report = chaos_sweep(
        model, act, base,
        cc.get("n_list", [100, 200, 400, 800]),
        cc.get("eps_list", [1e-5]),
        cc.get("horizon", 0.5),
        init_scale=cc.get("init_scale", 0.8),
        n_reference_atoms=cc.get("n_reference_atoms", 400),
        n_checkpoints=cc.get("n_checkpoints", 20),
    )
    write_csv(out / "chaos_report.csv",
              ["n_units", "epsilon", "horizon", "max_risk_gap",
               "w1_gap_at_horizon", "error"], report.rows())
    write_csv(out / "chaos_slope.csv", ["slope"], [[report.slope]])
    return {"report": report}


def run_figure1(config, out: Path):
    import numpy as np

    from .diagnostics import risk_of_radii, wasserstein1_1d
    from .kernels import reduced_risk

    steps = config["sgd"]["steps"]
    marks = sorted({k for k in (1_000, 4 * steps // 10, steps) if k <= steps})
    extra = np.unique(np.geomspace(1, steps, 12).astype(int))
    checkpoints = sorted(set(marks) | set(int(k) for k in extra))
    sgd_res = run_sgd_experiment(config, out, checkpoints=checkpoints)
    dd_res = run_dd_experiment(config, out)
    model, act = sgd_res["model"], sgd_res["act"]
    eps = config["sgd"]["epsilon"]
    gaps = []
    for k, atoms in sgd_res["trajectory"].snapshots:
        t = eps * k
        ref = dd_res["trajectory"].at_time(t)
        w1 = wasserstein1_1d(atoms.radii(), ref.radii())
        gap = abs(risk_of_radii(act, model.delta, atoms.radii())
                  - reduced_risk(act, model.delta, math.inf, ref))
        gaps.append([k, t, w1, gap, k in marks])
    write_csv(out / "gaps.csv",
              ["iteration", "t", "w1", "risk_gap", "is_reference_mark"], gaps)
    return {"gaps": gaps, "marks": marks}


def run_figure4(config, out: Path):
    import numpy as np

    kappas = (0.1, 0.4)
    metrics = []
    for kappa in kappas:
        sub = json.loads(json.dumps(config))
        sub["sgd"]["init_scale"] = kappa
        sub["dd"] = dict(sub.get("dd", {}), init_scale=kappa)
        tag = f"_kappa{kappa:g}"
        sgd_res = run_sgd_experiment(sub, out, tag=tag)
        run_dd_experiment(sub, out, tag=tag)
        last = sgd_res["trajectory"].rows[-1]
        metrics.append([kappa, last.risk_mc, last.mc_se, last.error_rate,
                        last.mean_norm])
    write_csv(out / "final_metrics.csv",
              ["kappa", "risk_mc", "mc_se", "error_rate", "mean_norm"], metrics)
    return {"metrics": metrics}


def run_figure3(config, out: Path):
    sgd_res = run_sgd_experiment(config, out)
    dd_res = run_dd_experiment(config, out)
    return {"sgd": sgd_res, "dd": dd_res}


_RUNNERS = {
    "sgd": run_sgd_experiment,
    "dd": run_dd_experiment,
    "langevin": run_langevin_experiment,
    "statics": run_statics_experiment,
    "thresholds": run_thresholds_experiment,
    "chaos": run_chaos_experiment,
    "figure1": run_figure1,
    "figure2": run_statics_experiment,
    "figure3": run_figure3,
    "figure4": run_figure4,
}


# ---------------------------------------------------------------------------
# presets: the four figure parameter sets, at paper or desk (small) scale
# ---------------------------------------------------------------------------

def preset_config(name: str, scale: str = "small", seed: int = 2024) -> dict:
    if name == "figure1":
        paper = scale == "paper"
        n, j, steps = (800, 400, 10_000_000) if paper else (200, 100, 1_000_000)
        return {
            "experiment": "figure1",
            "seed": seed,
            "scale": scale,
            "model": {"delta": 0.8, "d": 40},
            "activation": {"kind": "piecewise_linear"},
            "sgd": {"n_units": n, "epsilon": 1e-6,
                    "schedule": {"kind": "constant", "value": 1.0},
                    "steps": steps, "init_scale": 0.8, "mc_samples": 10_000,
                    "exact_risk": False},
            "dd": {"n_atoms": j, "d": "inf", "t_max": steps * 1e-6,
                   "n_time_points": 100_000, "n_snapshots": 60,
                   "init_scale": 0.8},
            "output_dir": f"out/figure1_{scale}",
        }
    if name == "figure2":
        return {
            "experiment": "figure2",
            "seed": seed,
            "scale": scale,
            "model": {"delta": 0.4, "d": 40},
            "activation": {"kind": "piecewise_linear"},
            "statics": {"d": 40,
                        "deltas": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8],
                        "grid_min": 0.01, "grid_max": 10.0, "grid_size": 100,
                        "qp_tol": 1e-9},
            "output_dir": f"out/figure2_{scale}",
        }
    if name == "figure3":
        paper = scale == "paper"
        n, j, steps = (800, 400, 10_000_000) if paper else (80, 40, 1_000_000)
        eps = 2e-4
        return {
            "experiment": "figure3",
            "seed": seed,
            "scale": scale,
            "model": {"delta": 0.6, "d": 320, "s0": 60},
            "activation": {"kind": "relu_affine"},
            "sgd": {"n_units": n, "epsilon": eps,
                    "schedule": {"kind": "power", "value": 0.25},
                    "steps": steps, "init_scale": 0.8, "init_a": 1.0,
                    "init_b": 1.0, "mc_samples": 10_000},
            "dd": {"n_atoms": j, "d": "inf", "space": "relu_4d",
                   "t_max": eps ** (4.0 / 3.0) * steps, "n_time_points": 100_000,
                   "n_snapshots": 60, "init_scale": 0.8, "init_a": 1.0,
                   "init_b": 1.0},
            "output_dir": f"out/figure3_{scale}",
        }
    if name == "figure4":
        paper = scale == "paper"
        n, j, steps = (800, 400, 10_000_000) if paper else (200, 100, 3_000_000)
        d = 320 if paper else 80
        eps = 1e-5
        return {
            "experiment": "figure4",
            "seed": seed,
            "scale": scale,
            "model": {"delta": 0.5, "d": d},
            "activation": {"kind": "non_monotone"},
            "sgd": {"n_units": n, "epsilon": eps,
                    "schedule": {"kind": "power", "value": 0.25},
                    "steps": steps, "mc_samples": 10_000, "exact_risk": False},
            "dd": {"n_atoms": j, "d": "inf", "t_max": eps ** (4.0 / 3.0) * steps,
                   "n_time_points": 100_000, "n_snapshots": 60},
            "output_dir": f"out/figure4_{scale}",
        }
    raise ConfigError(f"unknown preset {name!r}")


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def run_experiment(config: dict, out_dir: str | None = None) -> int:
    """Validate and execute a config; returns the process exit code."""
    from .model import DivergenceError

    try:
        validate_config(config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(out_dir or config["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    try:
        _RUNNERS[config["experiment"]](config, out)
    except DivergenceError as exc:
        print(f"error: numerical divergence: {exc}", file=sys.stderr)
        return 3
    manifest = {
        "config": config,
        "seed": config["seed"],
        "versions": _versions(),
        "wall_time_s": round(time.time() - started, 3),
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "artifacts": sorted(p.name for p in out.iterdir() if p.suffix == ".csv"),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def _versions() -> dict:
    import numpy
    import scipy

    from . import __version__

    return {"meanfield2nn": __version__, "numpy": numpy.__version__,
            "scipy": scipy.__version__}


def _cap_threads(n: int | None) -> None:
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="meanfield2nn")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a JSON experiment config")
    p_run.add_argument("config", type=Path)
    p_run.add_argument("--threads", type=int, default=None)
    p_run.add_argument("--out", type=str, default=None)
    p_pre = sub.add_parser("preset", help="run a stored figure parameter set")
    p_pre.add_argument("name", choices=["figure1", "figure2", "figure3", "figure4"])
    p_pre.add_argument("--scale", choices=["small", "paper"], default="small")
    p_pre.add_argument("--seed", type=int, default=2024)
    p_pre.add_argument("--threads", type=int, default=None)
    p_pre.add_argument("--out", type=str, default=None)
    args = parser.parse_args(argv)
    _cap_threads(getattr(args, "threads", None))
    if args.command == "run":
        try:
            with open(args.config) as fh:
                config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return 2
        return run_experiment(config, args.out)
    config = preset_config(args.name, args.scale, args.seed)
    return run_experiment(config, args.out)


if __name__ == "__main__":
    sys.exit(main())
