"""Command-line recipes that write experiment data as CSV and JSON.

Configuration precedence: built-in defaults, then the ``--config`` JSON
document, then command-line flags. Every run writes ``run.json`` with the
resolved configuration and library versions.

Exit codes: 0 success, 1 configuration or IO error, 2 out-of-distribution
observation, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import platform
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .certify import (
    CertifyConfig,
    OutOfDistributionError,
    PosteriorOracle,
    _finite_or_none,
    _json_default,
    attack_report,
    certify_observation,
    convergence_sweep,
    proof_geometry_scan,
    sweep_spearman,
    sweep_to_csv,
)
from .estimators import TwoModeConfig, estimator_sweep, map_estimate, mmse_closed_form, sweep_to_csv as est_csv
from .flow import (
    CondFlow,
    FlowArchitecture,
    FlowNumericalError,
    TrainConfig,
    TrainingDiverged,
    trace_from_csv,
    trace_to_csv,
    train,
    truncation_table,
)
from .mixtures import LinearGaussianProblem, gmm_density, posterior, six_mode_problem, two_mode_problem

EXIT_OK, EXIT_CONFIG, EXIT_OOD, EXIT_DIVERGED = 0, 1, 2, 3

FIG1_Y = [-0.05, -0.01, 0.01, 0.05]
FIG1_PRIOR_VAR = 0.0025
FIG1_NOISE_VAR = 0.01
FIG3_NOISE_VARS = [0.01, 0.1, 0.3]

FULL_SCALE = {
    "arch": {"num_blocks": 10, "hidden_width": 512},
    "train": {"steps": 100000, "batch": 1024, "lr": 1e-4, "eval_every": 5000,
              "eval_num_obs": 30, "eval_samples": 20000},
}

DEFAULTS = {
    "posterior": {
        "problem": {"kind": "two_mode", "prior_var": FIG1_PRIOR_VAR, "noise_var": FIG1_NOISE_VAR},
        "y_values": FIG1_Y,
        "grid_points": 4001,
        "grid_halfwidth_std": 12.0,
    },
    "estimators": {
        "prior_var": FIG1_PRIOR_VAR,
        "noise_vars": FIG3_NOISE_VARS,
        "y_grid": {"start": -0.5, "stop": 0.5, "num": 1000},
    },
    "train": {
        "problem": {"kind": "six_mode", "noise_std": 0.5, "radius": 2.0, "variance": 0.1},
        "arch": {"num_blocks": 3, "hidden_width": 64, "clamp_alpha": 1.9},
        "train": {},
        "resume": None,
    },
    "certify": {
        "problem": {"kind": "two_mode", "prior_std": 0.3, "noise_std": 0.5},
        "checkpoint": None,
        "y_tilde": [[0.5]],
        "certify": {},
        "scan_grid_points": 0,
    },
    "attack": {
        "problem": {"kind": "two_mode", "prior_std": 0.3, "noise_std": 0.5},
        "checkpoint": None,
        "y_tilde": [0.5],
        "B": [0.05, 0.2],
        "budget": 40,
        "certify": {},
    },
    "truncation": {
        "problem": {"kind": "six_mode", "noise_std": 0.5, "radius": 2.0, "variance": 0.1},
        "checkpoint": None,
        "y": [0.0, 0.0],
        "radii": [1.0, 2.0, 4.0, 8.0],
        "count": 1000,
        "reps": 5,
    },
    "appendix-c": {
        "run_dir": None,
        "problem": {"kind": "six_mode", "noise_std": 0.5, "radius": 2.0, "variance": 0.1},
        "arch": {"num_blocks": 3, "hidden_width": 64, "clamp_alpha": 1.9},
        "train": {},
        "sweep_y": [],
        "certify": {},
    },
}


class ConfigError(ValueError):
    pass


# -- config ------------------------------------------------------------------------

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(command: str, args) -> dict:
    cfg = copy.deepcopy(DEFAULTS[command])
    cfg["seed"] = 0
    if args.config:
        try:
            with open(args.config) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {args.config}: {err}") from err
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(user) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg = _merge(cfg, user)
    if args.paper_scale and "train" in cfg and "arch" in cfg:
        cfg = _merge(cfg, FULL_SCALE)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.oracle_generator:
        cfg["oracle_generator"] = True
    return cfg


def build_problem(spec: dict) -> LinearGaussianProblem:
    spec = dict(spec)
    kind = spec.pop("kind", None)
    try:
        if kind == "two_mode":
            if "prior_var" in spec:
                c = TwoModeConfig.from_variances(spec.pop("prior_var"), spec.pop("noise_var"))
                spec.update(prior_std=c.prior_std, noise_std=c.noise_std)
            return two_mode_problem(float(spec["prior_std"]), float(spec["noise_std"]))
        if kind == "six_mode":
            return six_mode_problem(**{k: float(v) for k, v in spec.items()})
        if kind == "linear":
            return LinearGaussianProblem.from_dict(spec)
    except (KeyError, TypeError) as err:
        raise ConfigError(f"bad problem spec: {err}") from err
    raise ConfigError(f"unknown problem kind {kind!r}")


def _dataclass_from(cls, values: dict, **extra):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**{**values, **extra})


def _certify_config(cfg) -> CertifyConfig:
    return _dataclass_from(CertifyConfig, cfg.get("certify", {}), seed=cfg["seed"])


def _generator(cfg, problem):
    if cfg.get("oracle_generator"):
        return PosteriorOracle(problem)
    if not cfg.get("checkpoint"):
        raise ConfigError("a checkpoint is required unless --oracle-generator is given")
    try:
        flow = CondFlow.load(cfg["checkpoint"])
    except (OSError, json.JSONDecodeError, KeyError) as err:
        raise ConfigError(f"cannot load checkpoint {cfg['checkpoint']}: {err}") from err
    if flow.data_dim != problem.data_dim or flow.cond_dim != problem.obs_dim:
        raise ConfigError("checkpoint does not match the problem dimensions")
    return flow


def _versions() -> dict:
    import numba
    import scipy

    return {"robustcert": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": platform.python_version()}


def _write_json(path: Path, obj):
    text = json.dumps(_finite_or_none(obj), indent=2, sort_keys=True, default=_json_default,
                      allow_nan=False)
    path.write_text(text + "\n")


def _fmt(v) -> str:
    return repr(float(v))


# -- subcommands -------------------------------------------------------------------------

def cmd_posterior(cfg, out: Path):
    problem = build_problem(cfg["problem"])
    if problem.data_dim != 1 or problem.obs_dim != 1:
        raise ConfigError("posterior curves need a 1D problem")
    tm = None
    if cfg["problem"].get("kind") == "two_mode":
        tm = TwoModeConfig(problem.prior.covs[0, 0, 0] ** 0.5, problem.noise_std)
    ys = [float(v) for v in cfg["y_values"]]
    if not ys:
        raise ConfigError("y_values is empty")
    posts = [posterior(problem, [y]) for y in ys]
    # one symmetric grid shared by all curves keeps +y / -y mirror images exact
    reach = max(float(np.max(np.abs(g.means[:, 0]) + cfg["grid_halfwidth_std"] * np.sqrt(g.covs[:, 0, 0])))
                for g in posts)
    x = np.linspace(-reach, reach, int(cfg["grid_points"]))
    markers = ["y,map,mmse"]
    written = []
    for i, (y, g) in enumerate(zip(ys, posts)):
        dens = gmm_density(g, x[:, None])
        name = f"posterior_{i}.csv"
        lines = [f"# y={y!r}", "x,density"] + [f"{_fmt(a)},{_fmt(b)}" for a, b in zip(x, dens)]
        (out / name).write_text("\n".join(lines) + "\n")
        written.append(name)
        if tm is not None:
            markers.append(f"{y!r},{map_estimate(tm, y)!r},{float(mmse_closed_form(tm, y))!r}")
        else:
            markers.append(f"{y!r},,{float(g.weights @ g.means[:, 0])!r}")
    (out / "markers.csv").write_text("\n".join(markers) + "\n")
    print(f"wrote {len(written)} posterior curves and markers.csv to {out}")
    return {"files": written + ["markers.csv"]}


def _y_grid(spec):
    if isinstance(spec, dict):
        try:
            return np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"])).tolist()
        except KeyError as err:
            raise ConfigError(f"y_grid needs start/stop/num: {err}") from err
    return [float(v) for v in spec]


def cmd_estimators(cfg, out: Path):
    grid = _y_grid(cfg["y_grid"])
    if not grid:
        raise ConfigError("empty y grid")
    written = []
    for nv in cfg["noise_vars"]:
        c = TwoModeConfig.from_variances(float(cfg["prior_var"]), float(nv))
        name = f"estimators_noise_var_{float(nv)!r}.csv"
        (out / name).write_text(est_csv(estimator_sweep(c, grid)))
        written.append(name)
    print(f"wrote {', '.join(written)} to {out}")
    return {"files": written}


def _arch(cfg, problem):
    return _dataclass_from(FlowArchitecture, cfg["arch"], data_dim=problem.data_dim,
                           cond_dim=problem.obs_dim)


def _train_into(cfg, out: Path):
    problem = build_problem(cfg["problem"])
    arch = _arch(cfg, problem)
    tc = _dataclass_from(TrainConfig, {k: v for k, v in cfg["train"].items() if k != "seed"},
                         seed=cfg["seed"])
    init = None
    if cfg.get("resume"):
        try:
            init = CondFlow.load(cfg["resume"])
        except (OSError, json.JSONDecodeError, KeyError) as err:
            raise ConfigError(f"cannot load checkpoint {cfg['resume']}: {err}") from err
        if init.arch != arch:
            raise ConfigError("resume checkpoint architecture differs from the config")
    ckdir = out / "checkpoints"
    ckdir.mkdir(exist_ok=True)

    def progress(row):
        print(f"step {row.step:>7d}  loss {row.loss:.5f}  eps_hat {row.epsilon_hat:.5f}"
              f" +/- {row.epsilon_hat_stderr:.5f}", flush=True)

    try:
        res = train(problem, arch, tc, init=init, progress=progress)
    except TrainingDiverged as err:
        err.last_good.save(ckdir / f"ckpt_{err.last_good.step:07d}.json")
        raise
    for fl in res.checkpoints:
        fl.save(ckdir / f"ckpt_{fl.step:07d}.json")
    res.flow.save(out / "final.json")
    (out / "trace.csv").write_text(trace_to_csv(res.trace))
    return problem, res


def cmd_train(cfg, out: Path):
    _, res = _train_into(cfg, out)
    print(f"trained to step {res.flow.step}; checkpoints in {out / 'checkpoints'}")
    return {"final_step": res.flow.step, "checkpoints": len(res.checkpoints)}


def _as_points(values, n):
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, n) if n == 1 else arr.reshape(1, -1)
    if arr.shape[1] != n:
        raise ConfigError(f"observations must have dimension {n}")
    return arr


def _fmt_bound(b):
    return "invalid" if b is None else f"{b:.5g}"


def cmd_certify(cfg, out: Path):
    problem = build_problem(cfg["problem"])
    gen = _generator(cfg, problem)
    cc = _certify_config(cfg)
    ys = _as_points(cfg["y_tilde"], problem.obs_dim)
    summary = []
    for i, y in enumerate(ys):
        cert, (w1, se) = certify_observation(gen, problem, y, cc)
        _write_json(out / f"certificate_{i}.json", cert.to_dict())
        print(f"y~={y.tolist()}  W1={w1:.5g} +/- {se:.2g}  bound_13={_fmt_bound(cert.bound_13)}"
              f"  bound_14={_fmt_bound(cert.bound_14)}  bound_dimfree={cert.bound_dimfree:.5g}"
              f"  satisfied={cert.details['bound_satisfied']}")
        summary.append(cert.details["bound_satisfied"])
        if cfg.get("scan_grid_points"):
            r = cert.inputs.a / (2 * cert.inputs.K)
            scan = proof_geometry_scan(gen, problem, y, r, int(cfg["scan_grid_points"]),
                                       CertifyConfig(**{**asdict(cc), "epsilon": cert.inputs.epsilon}))
            (out / f"scan_{i}.csv").write_text(scan.to_csv())
            print(f"  ball scan r={r:.4g}: min W1={scan.min_w1:.4g} <= {scan.bound:.4g}: {scan.satisfied}")
    return {"bound_satisfied": summary}


def cmd_attack(cfg, out: Path):
    problem = build_problem(cfg["problem"])
    gen = _generator(cfg, problem)
    cc = _certify_config(cfg)
    y = _as_points(cfg["y_tilde"], problem.obs_dim)[0]
    reports = []
    for B in cfg["B"]:
        rep = attack_report(gen, problem, y, float(B), cc, int(cfg["budget"]))
        _write_json(out / f"attack_B{float(B)!r}.json", rep)
        print(f"B={B}: attained W1={rep['attained_w1']:.5g} (unperturbed {rep['w1_at_zero']:.5g})"
              f"  bound={rep['bound']}")
        reports.append(rep["bound_satisfied"])
    return {"bound_satisfied": reports}


def cmd_truncation(cfg, out: Path):
    problem = build_problem(cfg["problem"])
    gen = _generator(cfg, problem)
    y = np.asarray(cfg["y"], dtype=float).reshape(-1)
    if y.size != problem.obs_dim:
        raise ConfigError(f"y must have dimension {problem.obs_dim}")
    rows = truncation_table(gen, y, [float(r) for r in cfg["radii"]], int(cfg["count"]),
                            int(cfg["reps"]), [cfg["seed"], 11])
    lines = ["radius,gap,gap_stderr,noise_floor,truncation_mass"]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    (out / "truncation.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return {"rows": len(rows)}


def cmd_appendix_c(cfg, out: Path):
    if cfg.get("run_dir"):
        run = Path(cfg["run_dir"])
        try:
            trace = trace_from_csv((run / "trace.csv").read_text())
        except OSError as err:
            raise ConfigError(f"missing trace in {run}: {err}") from err
        problem = build_problem(cfg["problem"])
        ckpts = sorted((run / "checkpoints").glob("ckpt_*.json")) if cfg["sweep_y"] else []
        flows = [CondFlow.load(p) for p in ckpts]
    else:
        problem, res = _train_into(cfg, out)
        trace, flows = res.trace, res.checkpoints
    if not trace:
        raise ConfigError("training trace is empty")
    from scipy.stats import spearmanr

    rows = sorted(trace, key=lambda r: (r.loss, r.step))
    lines = ["loss,epsilon_hat,epsilon_hat_stderr,step"]
    lines += [f"{r.loss!r},{r.epsilon_hat!r},{r.epsilon_hat_stderr!r},{r.step}" for r in rows]
    (out / "appendix_c.csv").write_text("\n".join(lines) + "\n")
    rho = float(spearmanr([r.loss for r in trace], [r.epsilon_hat for r in trace]).statistic) \
        if len(trace) > 1 else float("nan")
    print(f"{len(trace)} checkpoints; Spearman(loss, eps_hat) = {rho:.4f}")
    result = {"spearman_loss_epsilon": rho, "checkpoints": len(trace)}
    if cfg["sweep_y"] and len(flows) > 1:
        ys = _as_points(cfg["sweep_y"], problem.obs_dim)
        sweep = convergence_sweep(flows, problem, ys, _certify_config(cfg))
        (out / "sweep.csv").write_text(sweep_to_csv(sweep))
        result["spearman_eps_pointwise"] = sweep_spearman(sweep)
        print(f"Spearman(eps_hat, mean pointwise W1) = {result['spearman_eps_pointwise']:.4f}")
    return result


COMMANDS = {
    "posterior": cmd_posterior,
    "estimators": cmd_estimators,
    "train": cmd_train,
    "certify": cmd_certify,
    "attack": cmd_attack,
    "truncation": cmd_truncation,
    "appendix-c": cmd_appendix_c,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="robustcert", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=list(COMMANDS))
    ap.add_argument("--config", help="JSON configuration file")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    ap.add_argument("--out", default="out", help="output directory (default: ./out)")
    ap.add_argument("--oracle-generator", action="store_true",
                    help="use the exact posterior sampler in place of a trained flow")
    ap.add_argument("--paper-scale", action="store_true",
                    help="full-size architecture and training schedule")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if os.environ.get("TOOL_THREADS"):
        try:
            int(os.environ["TOOL_THREADS"])
        except ValueError:
            print("error: TOOL_THREADS must be an integer", file=sys.stderr)
            return EXIT_CONFIG
    out = Path(args.out)
    try:
        cfg = resolve_config(args.command, args)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "run.json", {"command": args.command, "config": cfg, "versions": _versions()})
        result = COMMANDS[args.command](cfg, out)
    except OutOfDistributionError as err:
        print(f"refused: {err}", file=sys.stderr)
        return EXIT_OOD
    except (TrainingDiverged, FlowNumericalError, FloatingPointError) as err:
        print(f"numerical divergence: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, ValueError, KeyError, TypeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if not (out / "run.json").exists():
        print("error: run.json missing", file=sys.stderr)
        return EXIT_CONFIG
    _write_json(out / "result.json", result)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
