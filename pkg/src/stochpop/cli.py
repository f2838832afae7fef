"""Configuration-driven experiment runner.

One task per invocation, declared in a JSON config:

    {"model": {...}, "env": {...}?, "sim": {...},
     "task": "simulate|classify|invade|permanence|drift|rps|gamma|lyapunov",
     "task_params": {...}?, "output_dir": "..."?}

Outputs are results.json (full report with provenance) and results.csv
(flat estimates table); the simulate task additionally writes
replicates.csv with per-replicate occupation and functional summaries.
Identical config and seed give byte-identical outputs regardless of
``--threads``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import engine, persist
from .engine import Coordinate, LogNorm, LogPerCapita, RateEstimate, SimConfig
from .env import env_to_config, parse_env_spec
from .errors import ConfigurationError, NumericError, StochpopError
from .lyap import GammaClosedFormInput, gamma_closed_form_detailed, lyapunov_mc
from .models import Biennial, model_info, parse_model
from .env import Gamma as GammaDist

VERSION = "0.1.0"

_TASKS = ("simulate", "classify", "invade", "permanence", "drift", "rps", "gamma", "lyapunov")
_TOP_KEYS = {"model", "env", "sim", "task", "task_params", "output_dir"}
_SIM_KEYS = {
    "seed",
    "replicates",
    "burn_in",
    "horizon",
    "thinning",
    "initial_state",
    "eta_grid",
    "bound_radius",
}


def _jsonable(obj):
    """Convert results to JSON-safe values with deterministic formatting."""
    if isinstance(obj, RateEstimate):
        return _jsonable(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if np.isnan(x):
            return "nan"
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _validate_top(cfg: dict):
    if not isinstance(cfg, dict):
        raise ConfigurationError("config must be a JSON object")
    extra = set(cfg) - _TOP_KEYS
    if extra:
        raise ConfigurationError(f"unknown config keys {sorted(extra)}")
    for key in ("model", "sim", "task"):
        if key not in cfg:
            raise ConfigurationError(f"config missing required key {key!r}")
    if cfg["task"] not in _TASKS:
        raise ConfigurationError(f"unknown task {cfg['task']!r}; choose from {_TASKS}")


def _parse_sim(obj) -> SimConfig:
    if not isinstance(obj, dict):
        raise ConfigurationError("sim section must be an object")
    extra = set(obj) - _SIM_KEYS
    if extra:
        raise ConfigurationError(f"unknown sim keys {sorted(extra)}")
    if "seed" not in obj or "horizon" not in obj:
        raise ConfigurationError("sim section needs at least seed and horizon")
    kw = dict(obj)
    if "eta_grid" in kw:
        kw["eta_grid"] = tuple(float(e) for e in kw["eta_grid"])
    if "initial_state" in kw and isinstance(kw["initial_state"], list):
        kw["initial_state"] = tuple(float(v) for v in kw["initial_state"])
    return SimConfig(**kw)


def _parse_functionals(spec_list):
    out = []
    for item in spec_list:
        if not isinstance(item, dict) or "kind" not in item:
            raise ConfigurationError(f"functional spec must be an object with 'kind': {item!r}")
        kind = item["kind"]
        if kind == "coordinate":
            out.append(Coordinate(int(item["i"])))
        elif kind == "log_percapita":
            out.append(LogPerCapita(int(item["i"])))
        elif kind == "log_norm":
            out.append(LogNorm())
        else:
            raise ConfigurationError(f"unknown functional kind {kind!r}")
    return tuple(out)


def _face_label(support) -> str:
    return "+".join(str(int(i)) for i in sorted(support))


def _row(task, quantity, species="", face="", mean="", std_error="", n="", verdict=""):
    return {
        "task": task,
        "quantity": quantity,
        "species": species,
        "face": face,
        "mean": _jsonable(mean),
        "std_error": _jsonable(std_error),
        "n": n,
        "verdict": verdict,
    }


def _est_row(task, quantity, est: RateEstimate, species="", face="", verdict=""):
    return _row(task, quantity, species, face, est.mean, est.std_error, est.n, verdict)


# ---------------------------------------------------------------------------
# Task runners: each returns (results_dict, estimate_rows, extra_files)


def _task_simulate(model, envspec, sim, params, threads):
    functionals = _parse_functionals(params.get("functionals", []))
    result = engine.simulate(model, envspec, sim, functionals=functionals, n_threads=threads)
    rows = [
        _row("simulate", f"occupation[{name}]", mean=val, n=sim.horizon - sim.burn_in)
        for name, val in result.pooled.occupation.items()
    ]
    rows += [
        _est_row("simulate", name, est)
        for name, est in result.pooled.functional_averages.items()
    ]
    rows.append(
        _row("simulate", "extinct_fraction", mean=result.pooled.extinct_fraction, n=sim.replicates)
    )
    results = {
        "pooled": {
            "occupation": result.pooled.occupation,
            "functional_averages": result.pooled.functional_averages,
            "extinct_fraction": result.pooled.extinct_fraction,
        },
        "replicates": [
            {
                "occupation": s.occupation,
                "functional_averages": s.functional_averages,
                "terminal_state": s.terminal_state,
                "extinct": s.extinction_flag,
            }
            for s in result.replicates
        ],
    }
    extra = {"replicates.csv": engine.summary_rows(result)}
    return results, rows, extra


def _task_classify(model, envspec, sim, params, threads):
    verdict = persist.scalar_classify(model, envspec, sim, n_threads=threads)
    rows = [
        _est_row("classify", name, est, verdict=verdict.kind)
        for name, est in verdict.evidence.items()
    ]
    results = {
        "verdict": verdict.kind,
        "decision_margin": verdict.decision_margin,
        "evidence": verdict.evidence,
    }
    return results, rows, {}


def _task_invade(model, envspec, sim, params, threads):
    if "invader" not in params or "resident_support" not in params:
        raise ConfigurationError("invade task needs task_params invader and resident_support")
    invader = int(params["invader"])
    support = tuple(int(i) for i in params["resident_support"])
    est = persist.invasion_rate(model, envspec, sim, invader, support, n_threads=threads)
    rows = [
        _est_row("invade", "invasion_rate", est, species=invader, face=_face_label(support))
    ]
    return {"invader": invader, "resident_support": list(support), "rate": est}, rows, {}


def _task_permanence(model, envspec, sim, params, threads):
    table, verdict = persist.boundary_invasion_report(model, envspec, sim, n_threads=threads)
    weights = persist.find_persistence_weights(table)
    rows = []
    for r in table.rows:
        for i, est in sorted(r.rates.items()):
            rows.append(
                _est_row(
                    "permanence",
                    "invasion_rate",
                    est,
                    species=i,
                    face=_face_label(r.support),
                    verdict=verdict.kind,
                )
            )
    if weights is None:
        rows.append(_row("permanence", "weights", verdict="infeasible"))
    else:
        for i, w in enumerate(weights):
            rows.append(_row("permanence", "weight", species=i, mean=float(w), verdict="feasible"))
    results = {
        "verdict": verdict.kind,
        "not_permanent": table.not_permanent,
        "decision_margin": verdict.decision_margin,
        "weights": None if weights is None else list(weights),
        "faces": [
            {
                "support": list(r.support),
                "measure": r.measure,
                "rates": {str(i): est for i, est in sorted(r.rates.items())},
                "degenerate": r.degenerate,
            }
            for r in table.rows
        ],
        "annotations": table.annotations,
    }
    return results, rows, {}


def _task_drift(model, envspec, sim, params, threads):
    allowed = {"n_pairs", "margin", "domination_steps"}
    extra = set(params) - allowed
    if extra:
        raise ConfigurationError(f"unknown drift task_params {sorted(extra)}")
    n_pairs = int(params.get("n_pairs", 100_000))
    margin = float(params.get("margin", 0.1))
    construction = persist.drift_construction(model, envspec, seed=sim.seed, margin=margin)
    report = persist.drift_bounded_check(model, envspec, construction, n_pairs, seed=sim.seed)
    results = {
        "construction": report.construction,
        "params": report.params,
        "n_pairs": report.n_pairs,
        "violations": report.violations,
        "worst_slack": report.worst_slack,
        "counterexample": report.counterexample,
        "E_log_alpha": report.e_log_alpha,
        "E_logplus_alpha": report.e_logplus_alpha,
        "E_logplus_beta": report.e_logplus_beta,
        "hypotheses_hold": report.hypotheses_hold,
    }
    verdict = "hypotheses hold" if report.hypotheses_hold else "hypotheses not shown"
    rows = [
        _est_row("drift", "E_log_alpha", report.e_log_alpha, verdict=verdict),
        _est_row("drift", "E_logplus_alpha", report.e_logplus_alpha),
        _est_row("drift", "E_logplus_beta", report.e_logplus_beta),
        _row("drift", "violations", mean=report.violations, n=report.n_pairs),
    ]
    steps = int(params.get("domination_steps", 0))
    if steps > 0:
        audit = persist.affine_domination_audit(
            model, envspec, construction, sim.replaced(horizon=steps, burn_in=0)
        )
        results["domination"] = audit
        rows.append(
            _row(
                "drift",
                "domination_min_slack",
                mean=audit["min_slack"],
                n=steps,
                verdict="dominates" if audit["ok"] else "violated",
            )
        )
    return results, rows, {}


def _task_rps(model, envspec, sim, params, threads):
    allowed = {"n", "d"}
    extra = set(params) - allowed
    if extra:
        raise ConfigurationError(f"unknown rps task_params {sorted(extra)}")
    if "d" in params:
        d = float(params["d"])
    elif hasattr(model, "d"):
        d = model.d
    else:
        raise ConfigurationError("rps task needs a death fraction (model.d or task_params.d)")
    n = int(params.get("n", 10_000))
    rep = persist.rps_condition(envspec, d, n, seed=sim.seed)
    rows = [
        _est_row("rps", "exact_lhs", rep["exact_lhs"], verdict=rep["exact_verdict"]),
        _est_row("rps", "small_d_lhs", rep["small_d_lhs"], verdict=rep["small_d_verdict"]),
    ]
    return dict(rep, d=d), rows, {}


def _task_gamma(model, envspec, sim, params, threads):
    allowed = {"rel_tol", "norm"}
    extra = set(params) - allowed
    if extra:
        raise ConfigurationError(f"unknown gamma task_params {sorted(extra)}")
    if not isinstance(model, Biennial):
        raise ConfigurationError("gamma task needs the biennial model")
    dist = envspec.coords[0]
    if not isinstance(dist, GammaDist):
        raise ConfigurationError("gamma task needs a gamma-distributed seed draw")
    inp = GammaClosedFormInput(
        p=model.p,
        a=model.a,
        theta=dist.scale,
        k=dist.shape,
        rel_tol=float(params.get("rel_tol", 1e-9)),
    )
    detail = gamma_closed_form_detailed(inp)
    mc = lyapunov_mc(model, envspec, sim, norm=params.get("norm", "l1"), n_threads=threads)
    results = {
        "gamma_closed_form": detail["value"],
        "quadrature_error_bound": detail["error_bound"],
        "gamma_mc": mc.mean,
        "gamma_mc_se": mc.std_error,
        "abs_difference": abs(detail["value"] - mc.mean),
        "inputs": {"p": inp.p, "a": inp.a, "theta": inp.theta, "k": inp.k},
    }
    rows = [
        _row("gamma", "gamma_closed_form", mean=detail["value"], std_error=0.0, n=detail["evaluations"]),
        _est_row("gamma", "gamma_mc", mc),
        _row("gamma", "abs_difference", mean=results["abs_difference"]),
    ]
    print(json.dumps(_jsonable(results), sort_keys=True))
    return results, rows, {}


def _task_lyapunov(model, envspec, sim, params, threads):
    allowed = {"norm"}
    extra = set(params) - allowed
    if extra:
        raise ConfigurationError(f"unknown lyapunov task_params {sorted(extra)}")
    mc = lyapunov_mc(model, envspec, sim, norm=params.get("norm", "l1"), n_threads=threads)
    return {"gamma_mc": mc}, [_est_row("lyapunov", "gamma_mc", mc)], {}


_RUNNERS = {
    "simulate": _task_simulate,
    "classify": _task_classify,
    "invade": _task_invade,
    "permanence": _task_permanence,
    "drift": _task_drift,
    "rps": _task_rps,
    "gamma": _task_gamma,
    "lyapunov": _task_lyapunov,
}


# ---------------------------------------------------------------------------
# Config plumbing


def _apply_set(cfg: dict, assignment: str):
    if "=" not in assignment:
        raise ConfigurationError(f"--set needs key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            node[part] = {}
        node = node[part]
    node[parts[-1]] = value


def _strip_verdicts(node):
    """Exploratory runs report raw statistics only: no claims survive."""
    if isinstance(node, dict):
        for key, value in node.items():
            if key in ("verdict", "exact_verdict", "small_d_verdict", "hypotheses_hold"):
                node[key] = "exploratory"
            else:
                _strip_verdicts(value)
    elif isinstance(node, list):
        for value in node:
            _strip_verdicts(value)


def run_config(cfg: dict, out_dir=None, seed=None, threads: int = 1, explore: bool = False) -> dict:
    """Validate, run one task, and write results; returns the full report."""
    _validate_top(cfg)
    if seed is not None:
        cfg.setdefault("sim", {})["seed"] = int(seed)
    model, default_env = parse_model(cfg["model"])
    envspec = parse_env_spec(cfg["env"]) if "env" in cfg else default_env
    model.check_env(envspec)
    sim = _parse_sim(cfg["sim"])
    params = cfg.get("task_params", {})
    if not isinstance(params, dict):
        raise ConfigurationError("task_params must be an object")

    resolved = dict(cfg)
    resolved["env"] = env_to_config(envspec)
    resolved_json = json.dumps(_jsonable(resolved), sort_keys=True, indent=2)
    digest = hashlib.sha256(resolved_json.encode()).hexdigest()

    results, rows, extra_files = _RUNNERS[cfg["task"]](model, envspec, sim, params, threads)
    if explore:
        raw = {}
        for eta in sim.eta_grid:
            name = f"S_eta={eta:g}"
            est = engine.ensemble_hit_probability(
                model, envspec, sim, engine.ExtinctionNeighborhood(eta), sim.horizon
            )
            raw[name] = est
            rows.append(_est_row(cfg["task"], f"ensemble_hit[{name}]@t={sim.horizon}", est))
        results = dict(results)
        results["exploratory"] = {
            "ensemble_hit_at_horizon": raw,
            "note": "raw statistics only; nothing here is adjudicated",
        }
        _strip_verdicts(results)
        for row in rows:
            if row.get("verdict"):
                row["verdict"] = "exploratory"
    report = {
        "task": cfg["task"],
        "provenance": {
            "package": "stochpop",
            "version": VERSION,
            "seed": sim.seed,
            "config_sha256": digest,
            "explore": bool(explore),
        },
        "config": json.loads(resolved_json),
        "results": _jsonable(results),
        "estimates": _jsonable(rows),
    }

    target = Path(out_dir if out_dir is not None else cfg.get("output_dir", "."))
    target.mkdir(parents=True, exist_ok=True)
    written = []
    try:
        json_path = target / "results.json"
        json_path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
        written.append(json_path)
        csv_path = target / "results.csv"
        with csv_path.open("w", newline="") as fh:
            writer = csv.DictWriter(
                fh,
                fieldnames=["task", "quantity", "species", "face", "mean", "std_error", "n", "verdict"],
            )
            writer.writeheader()
            for row in report["estimates"]:
                writer.writerow(row)
        written.append(csv_path)
        for name, file_rows in extra_files.items():
            path = target / name
            with path.open("w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(file_rows[0].keys()))
                writer.writeheader()
                for row in file_rows:
                    writer.writerow({k: _jsonable(v) for k, v in row.items()})
            written.append(path)
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    return report


def _cmd_run(args) -> int:
    try:
        cfg = json.loads(Path(args.config).read_text())
    except FileNotFoundError:
        print(f"error: config not found: {args.config}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return 2
    try:
        for assignment in args.set or []:
            _apply_set(cfg, assignment)
        run_config(cfg, out_dir=args.out, seed=args.seed, threads=args.threads,
                   explore=args.explore)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except StochpopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


def _cmd_list_models(args) -> int:
    for entry in model_info():
        print(f"{entry['name']}")
        print(f"  params: {entry['params']}")
        print(f"  env coordinates: {entry['env_coords']}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="stochpop",
        description="Stochastic population models: simulation and persistence checks",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one configured task")
    p_run.add_argument("--config", required=True, help="path to the JSON experiment config")
    p_run.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry (dotted path, JSON value)")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--seed", type=int, default=None, help="override sim.seed")
    p_run.add_argument("--threads", type=int, default=1,
                       help="worker threads (affects speed only, never results)")
    p_run.add_argument("--explore", action="store_true",
                       help="report raw statistics only, with no verdicts, and attach "
                            "ensemble hit probabilities for the eta grid")
    p_run.set_defaults(fn=_cmd_run)
    p_list = sub.add_parser("list-models", help="print the model catalog")
    p_list.set_defaults(fn=_cmd_list_models)
    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
