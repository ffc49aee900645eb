"""Command-line scenario runner.

    python3 -m lobmfg run --preset test1 --output out/test1
    python3 -m lobmfg run --config my.json --stage measure --qmax 60
    python3 -m lobmfg validate --preset test5

Exit status 0 on success, 1 on a solver or module error, 2 on a usage or
configuration error. Errors are also reported as one JSON record on stderr
(and in ``error.json`` when an output directory is available).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .equilibrium import antisymmetry_error, solve_equilibrium
from .frontiers import (FrontierError, boundary_distance, m0_curve, m1_curve,
                        numeric_switches, x0_star)
from .markov import build_generator, generator_residual, simulate, stationary_measure
from .metrics import all_metrics
from .model import REGION_LABELS, AgentClass, MarketConfig

log = logging.getLogger("lobmfg")

_GENERAL = {"P": 100.0, "delta": 2.0}

PRESETS = {
    "test1": {"classes": [{"label": "II", "q": 1.0, "lam": 1.0, "lam_minus": 0.2, "c": 2.5e-3}], "q_max": 80.0},
    "test2": {"classes": [{"label": "II", "q": 0.25, "lam": 1.0, "lam_minus": 0.2, "c": 2.5e-3}], "q_max": 40.0},
    "test3": {"classes": [{"label": "II", "q": 1.0, "lam": 1.0, "lam_minus": 0.2, "c": 1e-2}], "q_max": 80.0},
    "test4": {"classes": [{"label": "II", "q": 1.0, "lam": 0.5, "lam_minus": 0.5, "c": 2.5e-3}], "q_max": 80.0},
    "test5": {"classes": [{"label": "II", "q": 1.0, "lam": 0.5, "lam_minus": 0.5, "c": 2.5e-3},
                          {"label": "HFT", "q": 0.25, "lam": 4.0, "lam_minus": 0.0, "c": 1e-2}], "q_max": 30.0},
    "test6": {"classes": [{"label": "II", "q": 1.0, "lam": 0.6, "lam_minus": 0.4, "c": 2.5e-3},
                          {"label": "HFT", "q": 0.25, "lam": 3.6, "lam_minus": 0.4, "c": 1e-2}], "q_max": 30.0},
    # alternative assignment: routed and non-routed intensities swapped
    "test6-text": {"classes": [{"label": "II", "q": 1.0, "lam": 0.4, "lam_minus": 0.6, "c": 2.5e-3},
                               {"label": "HFT", "q": 0.25, "lam": 0.4, "lam_minus": 3.6, "c": 1e-2}], "q_max": 30.0},
}
for _p in PRESETS.values():
    for _k, _v in _GENERAL.items():
        _p.setdefault(_k, _v)

DEFAULTS = {"tol": 1e-9, "omega": 0.5, "max_iterations": 10_000, "seed": 0, "events": 100_000}
_TOP_KEYS = {"classes", "P", "delta", "q_max"} | set(DEFAULTS)
_CLASS_KEYS = {"label", "q", "lam", "lam_minus", "c"}
STAGES = ("solve", "frontiers", "measure", "simulate", "metrics")
_NEEDS = {"solve": (), "frontiers": ("solve",), "measure": ("solve",),
          "simulate": ("solve",), "metrics": ("solve", "measure")}


class UsageError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.exc = exc


def _number(x, name):
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
        raise UsageError(f"{name} must be a finite number")
    return float(x)


def parse_config(doc: dict) -> tuple[MarketConfig, dict]:
    """Validate a config document; returns the market config and run settings."""
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    extra = set(doc) - _TOP_KEYS
    if extra:
        raise UsageError(f"unknown config keys: {sorted(extra)}")
    raw = doc.get("classes")
    if not isinstance(raw, list) or not raw:
        raise UsageError("classes must be a non-empty list")
    classes = []
    for n, c in enumerate(raw):
        if not isinstance(c, dict):
            raise UsageError(f"classes[{n}] must be an object")
        extra = set(c) - _CLASS_KEYS
        missing = _CLASS_KEYS - {"label"} - set(c)
        if extra or missing:
            raise UsageError(f"classes[{n}]: unknown keys {sorted(extra)}, missing keys {sorted(missing)}")
        vals = {k: _number(c[k], f"classes[{n}].{k}") for k in ("q", "lam", "lam_minus", "c")}
        try:
            classes.append(AgentClass(label=str(c.get("label", f"class{n}")), **vals))
        except ValueError as e:
            raise UsageError(f"classes[{n}]: {e}") from None
    settings = dict(DEFAULTS)
    for k in DEFAULTS:
        if k in doc:
            settings[k] = doc[k]
    for k in ("seed", "events", "max_iterations"):
        if not isinstance(settings[k], int) or isinstance(settings[k], bool) or settings[k] < 0:
            raise UsageError(f"{k} must be a nonnegative integer")
    kw = {k: _number(doc[k], k) for k in ("P", "delta", "q_max") if doc.get(k) is not None}
    try:
        config = MarketConfig(tuple(classes), tol=_number(settings["tol"], "tol"),
                              omega=_number(settings["omega"], "omega"),
                              max_iterations=settings["max_iterations"], **kw)
    except ValueError as e:
        raise UsageError(str(e)) from None
    return config, settings


def load_document(preset=None, path=None) -> dict:
    if (preset is None) == (path is None):
        raise UsageError("give exactly one of --preset and --config")
    if preset is not None:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        return json.loads(json.dumps(PRESETS[preset]))
    try:
        return json.loads(Path(path).read_text())
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"{path} is not valid JSON: {e}") from None


def config_document(config: MarketConfig, settings: dict) -> dict:
    return {
        "classes": [{"label": k.label, "q": k.q, "lam": k.lam, "lam_minus": k.lam_minus, "c": k.c}
                    for k in config.classes],
        "P": config.P, "delta": config.delta, "q_max": config.q_max, **settings,
    }


# ---------------------------------------------------------------------------
# output


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return "" if math.isnan(x) else repr(float(x))
    return str(x)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def _grid_rows(config, *arrays):
    Q = config.sizes
    for a in range(config.n):
        for b in range(config.n):
            yield (Q[a], Q[b], *(arr[a, b] for arr in arrays))


def _labels(config):
    seen, out = {}, []
    for k in config.classes:
        seen[k.label] = seen.get(k.label, 0) + 1
        out.append(k.label if seen[k.label] == 1 else f"{k.label}{seen[k.label]}")
    return out


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def _dump(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# pipeline


def _stage_list(stage):
    if stage == "all":
        return list(STAGES)
    out = []
    for s in _NEEDS[stage] + (stage,):
        if s not in out:
            out.append(s)
    return out


def _frontiers(config, res, out):
    report = {}
    rows = {"M0": [], "M1": [], "numeric_P-C": [], "numeric_C-P": []}
    for i, label in enumerate(_labels(config)):
        num = numeric_switches(res.decisions, config, i)
        for curve, key in zip(num, ("numeric_P-C", "numeric_C-P")):
            rows[key].extend((label, x, y) for x, y in curve.points)
        try:
            x0s = x0_star(config.classes[i].q, config.eta(i))
        except ValueError as e:
            report[label] = {"skipped": str(e)}
            continue
        grid = config.sizes[config.sizes > x0s]
        x0 = np.concatenate([[x0s], grid])
        m0 = m0_curve(config, x0, i)
        m1 = m1_curve(config, x0, i)
        rows["M0"].extend((label, x, y) for x, y in m0.points)
        rows["M1"].extend((label, x, y) for x, y in m1.points)
        rep = {"x0_star": x0s}
        for name, a, b in (("P-C_to_M0", num[0], m0), ("C-P_to_M1", num[1], m1)):
            try:
                rep[name] = boundary_distance(a, b)
            except FrontierError as e:
                rep[name] = {"skipped": str(e)}
        report[label] = rep
    for kind, r in rows.items():
        write_csv(out / f"frontier_{kind}.csv", ("class", "Q_a", "Q_b"), r)
    return report


def run_pipeline(config: MarketConfig, settings: dict, out: Path, stage: str = "all") -> dict:
    """Run the requested stages and write artifacts into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    labels = _labels(config)
    diag = {"version": __version__, "config": config_document(config, settings), "stages": {}}
    timings = {}
    res = measure = None
    for st in _stage_list(stage):
        t0 = time.perf_counter()
        try:
            if st == "solve":
                res = solve_equilibrium(config)
                for i, lab in enumerate(labels):
                    write_csv(out / f"values_u_{lab}.csv", ("Q_a", "Q_b", "value"),
                              _grid_rows(config, res.values.u[i]))
                    write_csv(out / f"values_v_{lab}.csv", ("Q_a", "Q_b", "value"),
                              _grid_rows(config, res.values.v[i]))
                    reg = np.array(REGION_LABELS)[res.decisions.regions(i)]
                    write_csv(out / f"decisions_{lab}.csv", ("Q_a", "Q_b", "lp_sell", "lp_buy", "region"),
                              _grid_rows(config, res.decisions.p_sell[i], res.decisions.p_buy[i], reg))
                info = {k: v for k, v in res.info.items() if k != "seconds"}
                info["antisymmetry"] = [antisymmetry_error(res.values, config, i) for i in range(len(labels))]
                diag["stages"]["solve"] = info
            elif st == "frontiers":
                diag["stages"]["frontiers"] = _frontiers(config, res, out)
            elif st == "measure":
                G = build_generator(res.decisions, config)
                measure = stationary_measure(G, config.n)
                write_csv(out / "measure.csv", ("Q_a", "Q_b", "mass"), _grid_rows(config, measure))
                a, b = np.unravel_index(np.argmax(measure), measure.shape)
                diag["stages"]["measure"] = {"generator_residual": generator_residual(measure, G),
                                             "argmax": [config.sizes[a], config.sizes[b]]}
            elif st == "simulate":
                tr = simulate(res.decisions, config, settings["events"], seed=settings["seed"])
                kinds = ("lp_sell", "lc_sell", "lp_buy", "lc_buy")
                write_csv(out / "trajectory.csv", ("t", "Q_a", "Q_b", "event", "class", "price"),
                          ((t, a, b, kinds[k], labels[c], p) for t, a, b, k, c, p in
                           zip(tr.time, tr.ask, tr.bid, tr.kind, tr.cls, tr.price)))
                diag["stages"]["simulate"] = {"events": settings["events"], "seed": settings["seed"],
                                              "horizon": float(tr.time[-1]) if len(tr.time) else 0.0}
            elif st == "metrics":
                diag["metrics"] = all_metrics(measure, res.decisions, config)
        except Exception as e:  # noqa: BLE001 - reported with the stage name
            raise StageError(st, e) from e
        timings[st] = time.perf_counter() - t0
        log.info("stage %s done in %.2fs", st, timings[st])
    _dump(out / "metrics.json", diag)
    _dump(out / "timings.json", timings)
    return diag


def validate_document(doc: dict) -> dict:
    """Check a config without running solvers; returns a report."""
    config, settings = parse_config(doc)
    warnings, notes, per = [], [], []
    for i, k in enumerate(config.classes):
        entry = {"label": k.label, "q_over_h": config.steps(i)}
        if k.lam_minus > 0:
            x0 = x0_star(k.q, config.eta(i))
            suggested = 10.0 * math.ceil(2 * x0 / 10.0)
            entry.update(x0_star=x0, suggested_q_max=suggested)
            if config.q_max < suggested:
                warnings.append(f"{k.label}: q_max={config.q_max} is below the suggested {suggested} (about 2 x0*)")
        else:
            notes.append(f"{k.label}: no non-routed flow, first-order switching curves are unavailable")
        if k.lam == 0:
            notes.append(f"{k.label}: no routed flow, the class never provides liquidity")
        per.append(entry)
    if config.n > 250:
        warnings.append(f"lattice has {config.n}x{config.n} nodes; solves may be slow")
    return {"valid": True, "lattice_step": config.h, "lattice_size": config.n, "q_max": config.q_max,
            "classes": per, "warnings": warnings, "notes": notes, "settings": settings}


def _error(kind, message, stage=None, out=None, code=1):
    rec = {"error": kind, "message": message}
    if stage:
        rec["stage"] = stage
    print(json.dumps(rec), file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            _dump(out / "error.json", rec)
        except OSError:
            pass
    return code


def build_parser():
    ap = argparse.ArgumentParser(prog="lobmfg", description="Order-book routing equilibria.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="solve a scenario and write artifacts")
    v = sub.add_parser("validate", help="check a scenario without solving")
    for p in (r, v):
        g = p.add_mutually_exclusive_group(required=True)
        g.add_argument("--preset", choices=sorted(PRESETS))
        g.add_argument("--config", type=Path)
        p.add_argument("--qmax", type=float)
    r.add_argument("--output", type=Path, default=Path("out"))
    r.add_argument("--stage", choices=STAGES + ("all",), default="all")
    r.add_argument("--seed", type=int)
    r.add_argument("--events", type=int)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = getattr(args, "output", None)
    try:
        doc = load_document(args.preset, args.config)
        if args.qmax is not None:
            doc["q_max"] = args.qmax
        if args.command == "run":
            if args.seed is not None:
                doc["seed"] = args.seed
            if args.events is not None:
                doc["events"] = args.events
        if args.command == "validate":
            print(json.dumps(_jsonable(validate_document(doc)), indent=2))
            return 0
        config, settings = parse_config(doc)
    except UsageError as e:
        return _error("usage", str(e), out=out, code=2)
    try:
        run_pipeline(config, settings, out, args.stage)
    except StageError as e:
        return _error(type(e.exc).__name__, str(e.exc), stage=e.stage, out=out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
