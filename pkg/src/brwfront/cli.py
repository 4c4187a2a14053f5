"""Command line interface: predict / simulate / fit / ballot / verify-many-to-one.

One JSON experiment config drives every subcommand; unknown keys are
rejected, defaults are made explicit, and every command echoes the fully
resolved config so a rerun from the echo reproduces outputs byte for byte.
All floats are serialized with 17 significant digits.

Exit codes: 0 ok, 1 config/data error, 2 model assumption failed
(NoRoot / AssumptionViolated), 3 resource limit (exact-mode blowup),
4 verification gate failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import jsonschema

from . import mechanisms as mx
from . import regimes as rg
from . import rng as brng
from . import simulator as sim
from . import stats as st
from . import walklab as wl
from .errors import (AssumptionViolated, ExactBlowup, InsufficientData, NoRoot,
                     TooLarge)

_LAW_SCHEMA = {
    "type": "object",
    "oneOf": [
        {"properties": {"kind": {"const": "gaussian"},
                        "mean": {"type": "number"}, "var": {"type": "number"}},
         "required": ["kind", "mean", "var"], "additionalProperties": False},
        {"properties": {"kind": {"const": "two_point"},
                        "values": {"type": "array", "items": {"type": "number"}},
                        "probs": {"type": "array", "items": {"type": "number"}}},
         "required": ["kind", "values", "probs"], "additionalProperties": False},
        {"properties": {"kind": {"const": "uniform"},
                        "lo": {"type": "number"}, "hi": {"type": "number"}},
         "required": ["kind", "lo", "hi"], "additionalProperties": False},
        {"properties": {"kind": {"const": "finite_discrete"},
                        "values": {"type": "array", "items": {"type": "number"}},
                        "probs": {"type": "array", "items": {"type": "number"}}},
         "required": ["kind", "values", "probs"], "additionalProperties": False},
    ],
}

_MECH_SCHEMA = {
    "type": "object",
    "oneOf": [
        {"properties": {"kind": {"const": "fixed_count_iid"},
                        "count": {"type": "integer"}, "displacement": _LAW_SCHEMA},
         "required": ["kind", "count", "displacement"], "additionalProperties": False},
        {"properties": {"kind": {"const": "random_count_iid"},
                        "counts": {"type": "array", "items": {"type": "integer"}},
                        "count_probs": {"type": "array", "items": {"type": "number"}},
                        "displacement": _LAW_SCHEMA},
         "required": ["kind", "counts", "count_probs", "displacement"],
         "additionalProperties": False},
        {"properties": {"kind": {"const": "explicit_finite"},
                        "outcomes": {"type": "array", "items": {
                            "type": "object",
                            "properties": {"prob": {"type": "number"},
                                           "displacements": {"type": "array",
                                                             "items": {"type": "number"}}},
                            "required": ["prob", "displacements"],
                            "additionalProperties": False}}},
         "required": ["kind", "outcomes"], "additionalProperties": False},
    ],
}

_MODE_SCHEMA = {
    "type": "object",
    "oneOf": [
        {"properties": {"kind": {"const": "exact"}},
         "required": ["kind"], "additionalProperties": False},
        {"properties": {"kind": {"const": "window"},
                        "width": {"type": "number"}, "cap": {"type": "integer"}},
         "required": ["kind", "width", "cap"], "additionalProperties": False},
    ],
}

_BARRIER_SCHEMA = {
    "type": "object",
    "oneOf": [
        {"properties": {"kind": {"const": "constant"}, "y": {"type": "number"}},
         "required": ["kind", "y"], "additionalProperties": False},
        {"properties": {"kind": {"const": "power_law"},
                        "alpha": {"type": "number"}, "y": {"type": "number"}},
         "required": ["kind", "alpha", "y"], "additionalProperties": False},
        {"properties": {"kind": {"const": "log_bridge"},
                        "A": {"type": "number"}, "p": {"type": "integer"},
                        "q": {"type": "integer"}, "r": {"type": "integer"},
                        "y": {"type": "number"}, "h": {"type": "number"}},
         "required": ["kind", "A", "p", "q", "r", "y", "h"],
         "additionalProperties": False},
    ],
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "schedule": {
            "type": "object",
            "properties": {"breakpoints": {"type": "array", "items": {"type": "number"}},
                           "mechanisms": {"type": "array", "items": _MECH_SCHEMA}},
            "required": ["breakpoints", "mechanisms"],
            "additionalProperties": False,
        },
        "sim": {
            "type": "object",
            "properties": {"n_ladder": {"type": "array",
                                        "items": {"type": "integer", "minimum": 0}},
                           "replicates": {"type": "integer", "minimum": 1},
                           "mode": _MODE_SCHEMA,
                           "record_trajectory": {"type": "boolean"}},
            "required": ["n_ladder", "replicates"],
            "additionalProperties": False,
        },
        "fit": {
            "type": "object",
            "properties": {"inputs": {"type": "array", "items": {"type": "string"}}},
            "required": ["inputs"],
            "additionalProperties": False,
        },
        "ballot": {
            "type": "object",
            "properties": {"walk": _LAW_SCHEMA,
                           "barrier": _BARRIER_SCHEMA,
                           "n_values": {"type": "array",
                                        "items": {"type": "integer", "minimum": 1}},
                           "replicates": {"type": "integer", "minimum": 1},
                           "method": {"enum": ["monte_carlo", "exact_dp"]}},
            "required": ["walk", "barrier"],
            "additionalProperties": False,
        },
        "verify": {
            "type": "object",
            "properties": {"thetas": {"type": "array", "items": {"type": "number"}},
                           "n_max": {"type": "integer", "minimum": 1},
                           "functionals": {"type": "integer", "minimum": 1},
                           "walk_theta_offset": {"type": "number"}},
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

_DEFAULTS = {
    "seed": 0,
    "sim": {"mode": {"kind": "window", "width": 15.0, "cap": 1_000_000},
            "record_trajectory": False},
    "ballot": {"n_values": [64, 128, 256, 512, 1024],
               "replicates": 100_000, "method": "monte_carlo"},
    "verify": {"thetas": [0.5, 1.0, 2.0], "n_max": 3, "functionals": 20,
               "walk_theta_offset": 0.0},
}


class ConfigError(Exception):
    pass


class VerificationFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# JSON with 17-significant-digit floats
# ---------------------------------------------------------------------------


def _emit(obj, indent, level):
    pad = " " * (indent * level)
    pad_in = " " * (indent * (level + 1))
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = (f"{pad_in}{json.dumps(str(k))}: {_emit(v, indent, level + 1)}"
                 for k, v in obj.items())
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = (f"{pad_in}{_emit(v, indent, level + 1)}" for v in obj)
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        if math.isfinite(obj):
            return format(obj, ".17g")
        return json.dumps(str(obj))
    if isinstance(obj, int):
        return str(obj)
    return json.dumps(obj)


def dump_json(obj) -> str:
    """Deterministic JSON text; floats carry 17 significant digits."""
    return _emit(obj, 2, 0) + "\n"


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------


def law_from_json(doc):
    kind = doc["kind"]
    if kind == "gaussian":
        return mx.Gaussian(doc["mean"], doc["var"])
    if kind == "two_point":
        return mx.TwoPoint(tuple(doc["values"]), tuple(doc["probs"]))
    if kind == "uniform":
        return mx.Uniform(doc["lo"], doc["hi"])
    return mx.FiniteDiscrete(tuple(doc["values"]), tuple(doc["probs"]))


def mechanism_from_json(doc):
    kind = doc["kind"]
    if kind == "fixed_count_iid":
        return mx.FixedCountIID(doc["count"], law_from_json(doc["displacement"]))
    if kind == "random_count_iid":
        return mx.RandomCountIID(tuple(doc["counts"]), tuple(doc["count_probs"]),
                                 law_from_json(doc["displacement"]))
    return mx.ExplicitFinite(tuple((o["prob"], tuple(o["displacements"]))
                                   for o in doc["outcomes"]))


def schedule_from_json(doc):
    return rg.EnvironmentSchedule(tuple(doc["breakpoints"]),
                                  tuple(mechanism_from_json(m) for m in doc["mechanisms"]))


def _merge_defaults(config):
    resolved = copy.deepcopy(config)
    resolved.setdefault("seed", _DEFAULTS["seed"])
    for block, defaults in _DEFAULTS.items():
        if block == "seed" or block not in resolved:
            continue
        for key, value in defaults.items():
            resolved[block].setdefault(key, copy.deepcopy(value))
    if "verify" not in resolved:
        resolved["verify"] = copy.deepcopy(_DEFAULTS["verify"])
    return resolved


def load_config(path, seed_override=None):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config schema violation: {exc.message}") from exc
    resolved = _merge_defaults(raw)
    if seed_override is not None:
        resolved["seed"] = seed_override
    return resolved


def _require(config, block, command):
    if block not in config:
        raise ConfigError(f"'{command}' needs a '{block}' block in the config")
    return config[block]


def _mode_from_json(doc):
    if doc["kind"] == "exact":
        return sim.Exact()
    return sim.WindowTruncated(width=doc["width"], cap=doc["cap"])


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_predict(config, args):
    sched = schedule_from_json(_require(config, "schedule", "predict"))
    pred = rg.solve_multi_era(sched)
    out = {
        "regime": pred.regime,
        "v_hat": pred.v_hat,
        "L": pred.L,
        "m_of_n": {"linear": pred.v_hat, "log": -pred.L},
        "per_era": [{"index": p.index, "a": p.a, "theta": p.theta, "kstar": p.kstar}
                    for p in pred.per_era],
        "eras": [{"r": e.r, "s": e.s, "phi": e.phi} for e in pred.eras],
        "residuals": {"prefix_max": pred.prefix_max},
        "warnings": list(pred.warnings),
        "resolved_config": config,
    }
    print(dump_json(out), end="")
    return 0


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_simulate(config, args):
    block = _require(config, "sim", "simulate")
    sched_doc = _require(config, "schedule", "simulate")
    sched = schedule_from_json(sched_doc)
    mode = _mode_from_json(block["mode"])
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    records = []
    for n in block["n_ladder"]:
        # independent rungs: each n gets its own derived seed
        rung_seed = brng.derive_key(config["seed"], 0xADDE, n)
        cfg = sim.SimConfig(schedule=sched, n=n, mode=mode, seed=rung_seed,
                            record_trajectory=block["record_trajectory"])
        records.extend(sim.run_ensemble(cfg, block["replicates"], jobs=args.jobs))
    files = {"ensemble.csv": sim.ensemble_csv(records)}
    if block["record_trajectory"]:
        files["trajectory.csv"] = sim.trajectory_csv(records)
    for name, text in files.items():
        (outdir / name).write_text(text)
    # timings are telemetry: kept out of the deterministic payload and hash
    (outdir / "timings.csv").write_text(sim.timings_csv(records))
    manifest = {
        "resolved_config": config,
        "outputs": {name: _sha256(outdir / name) for name in sorted(files)},
        "total_losses": sum(r.losses for r in records),
        "wall_time_s": time.perf_counter() - t0,
    }
    (outdir / "manifest.json").write_text(dump_json(manifest))
    print(dump_json(manifest), end="")
    return 0


def _read_ensembles(paths):
    ensembles = {}
    for path in paths:
        try:
            lines = Path(path).read_text().strip().split("\n")
        except OSError as exc:
            raise ConfigError(f"cannot read ensemble CSV: {exc}") from exc
        header = lines[0].split(",")
        try:
            n_col, m_col = header.index("n"), header.index("M_n")
        except ValueError as exc:
            raise ConfigError(f"{path}: not an ensemble CSV") from exc
        for line in lines[1:]:
            parts = line.split(",")
            ensembles.setdefault(int(parts[n_col]), []).append(float(parts[m_col]))
    return ensembles


def cmd_fit(config, args):
    block = _require(config, "fit", "fit")
    ensembles = _read_ensembles(block["inputs"])
    try:
        res = st.fit_front(ensembles, seed=config["seed"])
    except InsufficientData as exc:
        raise ConfigError(str(exc)) from exc
    out = {
        "v_hat_emp": res.v_hat_emp, "v_stderr": res.v_stderr,
        "c_log_emp": res.c_log_emp, "c_stderr": res.c_stderr,
        "intercept": res.intercept,
        "residuals": [{"n": n, "residual": r} for n, r in res.residuals],
        "n_ladder": list(res.n_ladder),
        "resolved_config": config,
    }
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "fit.json").write_text(dump_json(out))
    print(dump_json(out), end="")
    return 0


def cmd_ballot(config, args):
    block = _require(config, "ballot", "ballot")
    law = wl.centered(law_from_json(block["walk"]))
    barrier_doc = block["barrier"]
    R = block["replicates"]
    seed = config["seed"]
    estimates = []
    if barrier_doc["kind"] == "log_bridge":
        spec = wl.LogBridge(A=barrier_doc["A"], p=barrier_doc["p"], q=barrier_doc["q"],
                            r=barrier_doc["r"], y=barrier_doc["y"], h=barrier_doc["h"])
        estimates.append(wl.bridge_probability([law] * 3, spec, wl.MonteCarlo(R, seed)))
    else:
        for n in block["n_values"]:
            if barrier_doc["kind"] == "constant":
                barrier = wl.Constant(barrier_doc["y"])
                method = (wl.ExactDP() if block["method"] == "exact_dp"
                          else wl.MonteCarlo(R, seed))
                estimates.append(wl.ballot_probability(law, barrier, n, method))
            else:
                barrier = wl.PowerLaw(barrier_doc["alpha"], barrier_doc["y"])
                estimates.append(wl.ballot_powerlaw(law, barrier, n,
                                                    wl.MonteCarlo(R, seed)))
    lines = ["n,estimate,ci_lo,ci_hi,scaled_estimate"]
    for e in estimates:
        lines.append(",".join([str(e.n)] + [format(x, ".17g") for x in
                                            (e.estimate, e.ci_lo, e.ci_hi, e.scaled)]))
    csv_text = "\n".join(lines) + "\n"
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "ballot.csv").write_text(csv_text)
    out = {
        "estimates": [{"n": e.n, "estimate": e.estimate, "ci_lo": e.ci_lo,
                       "ci_hi": e.ci_hi, "scaled_estimate": e.scaled,
                       "method": e.method, "unresolved": e.unresolved}
                      for e in estimates],
        "resolved_config": config,
    }
    print(dump_json(out), end="")
    return 0


_VERIFY_MECHS = (
    ("pm1", mx.ExplicitFinite(((1.0, (1.0, -1.0)),))),
    ("three_outcome", mx.ExplicitFinite(((0.3, (-1.5, 0.5)), (0.5, (1.0,)),
                                         (0.2, (-0.5, 0.5, 1.5))))),
)


def cmd_verify(config, args):
    block = config["verify"]
    offset = block["walk_theta_offset"]
    gates = []
    for name, mech in _VERIFY_MECHS:
        worst = 0.0
        for theta in block["thetas"]:
            for n in range(1, block["n_max"] + 1):
                for f in wl.random_functionals(n, block["functionals"], seed=n):
                    # walk_tilt != theta is a deliberate bug injection: the
                    # walk law and the reweighting disagree
                    res = wl.many_to_one_check(
                        mech, theta, n, f,
                        walk_tilt=None if offset == 0.0 else theta + offset)
                    worst = max(worst, res.abs_diff)
        gates.append({"gate": f"many_to_one[{name}]", "passed": worst < 1e-12,
                      "max_abs_diff": worst})

    walk = mx.FiniteDiscrete((-1.0, 1.0), (0.5, 0.5))
    two_step = wl.ballot_probability(walk, wl.Constant(0.0), 2, wl.ExactDP())
    gates.append({"gate": "ballot_two_step_exact", "passed":
                  abs(two_step.estimate - 0.5) < 1e-12,
                  "estimate": two_step.estimate})
    ns = [64, 128, 256, 512, 1024]
    ps = [wl.ballot_probability(walk, wl.Constant(0.0), n, wl.ExactDP()).estimate
          for n in ns]
    slope = wl.loglog_slope(ns, ps)
    gates.append({"gate": "ballot_dp_slope", "passed": abs(slope + 0.5) <= 0.05,
                  "slope": slope})
    stone = wl.stone_window(walk, 10, 0.0, 0.0, wl.ExactDP())
    gates.append({"gate": "stone_window_binomial", "passed":
                  abs(stone.estimate - 252 / 1024) < 1e-12,
                  "estimate": stone.estimate})

    out = {"gates": gates, "passed": all(g["passed"] for g in gates),
           "resolved_config": config}
    print(dump_json(out), end="")
    if not out["passed"]:
        raise VerificationFailure("verification gates failed")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="brwfront",
        description="Front asymptotics of branching random walks through interfaces")
    parser.add_argument("--config", required=True, help="experiment config JSON")
    parser.add_argument("--out", default="brw-out", help="output directory")
    parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                        help="parallel replicates")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("command",
                        choices=["predict", "simulate", "fit", "ballot",
                                 "verify-many-to-one"])
    return parser


_COMMANDS = {
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "ballot": cmd_ballot,
    "verify-many-to-one": cmd_verify,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, seed_override=args.seed)
        return _COMMANDS[args.command](config, args)
    except (ConfigError, TooLarge, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NoRoot, AssumptionViolated) as exc:
        print(dump_json({"error": {"type": type(exc).__name__,
                                   "message": str(exc)}}), end="")
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ExactBlowup as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except VerificationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
