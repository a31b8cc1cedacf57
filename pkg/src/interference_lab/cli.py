"""Command-line entry point: simulate | graph | estimate | discover | predict-eval | report.

Every subcommand reads and writes plain files in ``--out-dir`` and embeds the
resolved settings, input digests and tool version in its outputs. Exit codes:
0 success, 2 validation error, 3 runtime or numerical error.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pandas as pd

from interference_lab import __version__
from interference_lab.discovery import discover_parents
from interference_lab.effects import enumerate_contrasts
from interference_lab.errors import InvalidArgumentError, NumericalError, UndefinedMetricError
from interference_lab.estimators import ESTIMATORS, Nuisances, estimate_table
from interference_lab.graph import build_ad_dag, swig_transform, verify_network_ignorability
from interference_lab.models.nuisance import VARIANTS
from interference_lab.pipeline import predict_eval
from interference_lab.presets import PRESETS, preset
from interference_lab.rules import AllocationRule, enumerate_valid_rules, fci_preprocess
from interference_lab.sem import Dataset, SemConfig, oracle_table, simulate

SEED_ENV = "INTERFERENCE_LAB_SEED"
LOCK_NAME = ".interference_lab.lock"
# execution-only settings: they never change results, so they stay out of the artifacts
_EXECUTION_KEYS = {"jobs", "out_dir", "command", "func"}
_PATH_KEYS = ("dataset", "config", "parents", "inputs", "oracle")


class ValidationError(Exception):
    pass


# io helpers -----------------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) or math.isinf(v) else v
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="\n")


def frame_to_csv(df: pd.DataFrame) -> str:
    buf = io.StringIO()
    df.to_csv(buf, index=False, float_format="%.17g", lineterminator="\n")
    return buf.getvalue()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def meta(args, inputs: dict[str, Path] | None = None, extra: dict | None = None) -> dict:
    settings = {k: v for k, v in vars(args).items() if k not in _EXECUTION_KEYS}
    # input files are identified by name and digest, so moving them does not change outputs
    for key in _PATH_KEYS:
        if settings.get(key):
            settings[key] = Path(settings[key]).name
    return {
        "tool": "interference-lab",
        "version": __version__,
        "subcommand": args.command,
        "settings": settings,
        "inputs": {name: file_digest(p) for name, p in sorted((inputs or {}).items())},
        **(extra or {}),
    }


def write_manifest(out: Path, args, artifacts: list[str], inputs=None) -> None:
    doc = meta(args, inputs)
    doc["artifacts"] = {name: file_digest(out / name) for name in sorted(artifacts)}
    write_text(out / f"{args.command.replace('-', '_')}.manifest.json", dumps(doc))


@contextmanager
def output_lock(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(
            f"{out} is locked by another run (remove {lock} if no other run is active)"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out
    finally:
        lock.unlink(missing_ok=True)


def resolve_seed(args, default: int | None = 0) -> int | None:
    if args.seed is not None:
        return int(args.seed)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"{SEED_ENV}={env!r} is not an integer") from None
    return default


def load_dataset(args) -> tuple[Dataset, Path]:
    if not args.dataset:
        raise ValidationError(f"{args.command} needs --dataset (produced by `simulate`)")
    path = Path(args.dataset)
    if not path.exists():
        raise ValidationError(f"dataset {path} not found; run `interference-lab simulate` first")
    try:
        d = Dataset.from_csv(path)
    except InvalidArgumentError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    except (pd.errors.ParserError, ValueError) as exc:
        raise ValidationError(f"{path}: could not parse CSV: {exc}") from None
    if getattr(args, "positive_only", False):
        d = d.positive_pageviews()
    return d, path


def parse_rules(text: str | None, m: int) -> list[AllocationRule]:
    if not text:
        return enumerate_valid_rules(m)
    out = []
    for label in text.split(";" if ";" in text else " "):
        label = label.strip()
        if not label:
            continue
        try:
            rule = AllocationRule.parse(label)
        except InvalidArgumentError as exc:
            raise ValidationError(f"rule {label!r}: {exc}") from None
        if rule.m != m:
            raise ValidationError(f"rule {label!r} has {rule.m} positions but the data has m={m}")
        out.append(rule)
    return out


# subcommands ------------------------------------------------------------------------


def load_sem_config(args) -> SemConfig:
    if args.config and args.preset:
        raise ValidationError("pass either --config or --preset, not both")
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ValidationError(f"config {path} not found")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        doc = doc.get("sem", doc)
        try:
            cfg = SemConfig.from_dict(doc)
        except (InvalidArgumentError, TypeError) as exc:
            raise ValidationError(f"{path}: {exc}") from None
    else:
        cfg = preset(args.preset or "golden")
    seed = resolve_seed(args, default=None)
    return cfg if seed is None else cfg.replace(seed=seed)


def cmd_simulate(args) -> int:
    cfg = load_sem_config(args)
    rules = parse_rules(args.rules, cfg.m)
    if args.n < 0:
        raise ValidationError("--n must be >= 0")
    with output_lock(Path(args.out_dir)) as out:
        d = simulate(cfg, args.n, n_jobs=args.jobs)
        write_text(out / "dataset.csv", d.to_csv())
        write_text(out / "config.json", cfg.to_json())
        artifacts = ["dataset.csv", "config.json"]
        if args.oracle_draws > 0:
            table = oracle_table(cfg, args.oracle_draws, rules=rules)
            write_text(out / "oracle.csv", frame_to_csv(table))
            artifacts.append("oracle.csv")
        write_manifest(out, args, artifacts)
    print(f"wrote {d.n} pageviews (config {cfg.digest()}) to {out}")
    return 0


def cmd_graph(args) -> int:
    m = args.m
    if m < 1:
        raise ValidationError("--m must be >= 1")
    rule = parse_rules(args.intervention, m)[0] if args.intervention else enumerate_valid_rules(m)[0]
    extra = []
    for spec in args.inject or []:
        if "->" not in spec:
            raise ValidationError(f"edge {spec!r} must look like U->A1")
        u, v = (s.strip() for s in spec.split("->", 1))
        extra.append((u, v))
    g = build_ad_dag(m)
    if extra:
        try:
            g = g.with_edges(extra)
        except InvalidArgumentError as exc:
            raise ValidationError(str(exc)) from None
    swig = swig_transform(g, rule)
    verdict = verify_network_ignorability(m, rule, extra)
    doc = {
        "meta": meta(args),
        "dag": g.to_dict(),
        "swig": {
            **swig.dag.to_dict(),
            "splits": dict(swig.splits),
            "intervention": dict(swig.intervention),
            "counterfactuals": dict(swig.relabel),
        },
        "ignorability": {"rule": rule.label(), "holds": verdict, "conditioning": [f"X{i}" for i in range(1, m + 1)]},
    }
    with output_lock(Path(args.out_dir)) as out:
        write_text(out / "graph.json", dumps(doc))
    print(f"network conditional ignorability for {rule.label()}: {'holds' if verdict else 'FAILS'}")
    return 0


def _table2(frame: pd.DataFrame, rules, observed: np.ndarray, m: int) -> pd.DataFrame:
    rows = []
    for i in range(1, m + 1):
        row = {"position": i}
        for r in rules:
            cell = frame[(frame["rule"] == r.label()) & (frame["position"] == i)].iloc[0]
            hw = (cell["ci_high"] - cell["ci_low"]) / 2.0
            row[str(r)] = f"{cell['psi']:.4f} ± {hw:.4f}"
        row["observed"] = f"{observed[i - 1]:.4f}"
        rows.append(row)
    return pd.DataFrame(rows)


def cmd_estimate(args) -> int:
    d, path = load_dataset(args)
    if d.n == 0:
        raise ValidationError(f"{path} has no pageviews")
    rules = parse_rules(args.rules, d.m)
    estimators = [e.strip() for e in args.estimators.split(",") if e.strip()]
    bad = [e for e in estimators if e not in ESTIMATORS]
    if bad:
        raise ValidationError(f"unknown estimators {bad}; choose from {ESTIMATORS}")
    if args.bootstrap and args.bootstrap < 50:
        raise ValidationError("--bootstrap must be 0 (off) or >= 50")
    seed = resolve_seed(args)
    nuis = Nuisances.learned(
        kind=args.nuisance,
        variant=args.variant,
        mode=args.propensity_mode,
        smoothing=args.smoothing,
        n_trees=args.n_trees,
        max_depth=args.max_depth,
        seed=seed,
        n_jobs=args.jobs,
    )
    report = estimate_table(
        d, nuis, estimators, args.k_folds, args.bootstrap, args.level, seed, args.jobs, args.clip
    )
    labels = {r.label() for r in rules}
    long = []
    effects = []
    for e in estimators:
        f = report.frames[e]
        long.append(f[f["rule"].isin(labels)].assign(estimator=e))
        for c in enumerate_contrasts(report.tables[e]):
            effects.append(c.as_row())
    means = pd.concat(long, ignore_index=True)[
        ["estimator", "rule", "position", "psi", "se", "ci_low", "ci_high", "n_match"]
    ]
    eff = pd.DataFrame(effects)[["estimator", "kind", "position", "target", "value", "stderr", "ci_low", "ci_high", "level"]]
    observed = d.y.mean(axis=0)
    with output_lock(Path(args.out_dir)) as out:
        artifacts = ["means.csv", "effects.csv", "estimate.json"]
        write_text(out / "means.csv", frame_to_csv(means))
        write_text(out / "effects.csv", frame_to_csv(eff))
        for e in estimators:
            name = f"table2_{e}.csv"
            write_text(out / name, frame_to_csv(_table2(report.frames[e], rules, observed, d.m)))
            artifacts.append(name)
        doc = {
            "meta": meta(args, {"dataset": path}, {"nuisances": nuis.description}),
            "n_pageviews": d.n,
            "observed": observed.tolist(),
            "bootstrap": {"B": args.bootstrap, "dropped": report.n_dropped},
            "means": means.to_dict(orient="records"),
            "effects": eff.to_dict(orient="records"),
        }
        write_text(out / "estimate.json", dumps(doc))
        write_manifest(out, args, artifacts, {"dataset": path})
    print(_table2(report.frames[estimators[0]], rules, observed, d.m).to_string(index=False))
    return 0


def cmd_discover(args) -> int:
    d, path = load_dataset(args)
    if d.n == 0:
        raise ValidationError(f"{path} has no pageviews")
    targets = [int(t) for t in args.targets.split(",")] if args.targets else list(range(1, d.m + 1))
    results = []
    with output_lock(Path(args.out_dir)) as out:
        artifacts = ["parents.json"]
        for i in targets:
            if not 1 <= i <= d.m:
                raise ValidationError(f"target position {i} outside 1..{d.m}")
            ps = discover_parents(
                fci_preprocess(d, i, keep_self_in_d1=args.keep_self_in_d1),
                f"y{i}",
                args.alpha,
                args.test,
                args.max_cond,
                {"seed": resolve_seed(args), "n_perm": args.n_perm},
            )
            results.append(ps.to_dict())
            name = f"trace_y{i}.csv"
            write_text(out / name, frame_to_csv(ps.trace_frame()))
            artifacts.append(name)
        write_text(out / "parents.json", dumps({"meta": meta(args, {"dataset": path}), "targets": results}))
        write_manifest(out, args, artifacts, {"dataset": path})
    for r in results:
        print(f"{r['target']}: " + ", ".join(f"{p['column']} ({p['category']})" for p in r["parents"]))
    return 0


def cmd_predict_eval(args) -> int:
    d, path = load_dataset(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise ValidationError(f"unknown variants {bad}; choose from {VARIANTS}")
    inputs = {"dataset": path}
    discovered = None
    if args.parents:
        ppath = Path(args.parents)
        if not ppath.exists():
            raise ValidationError(f"{ppath} not found; run `interference-lab discover` first")
        doc = json.loads(ppath.read_text())
        discovered = {int(t["target"][1:]): [p["column"] for p in t["parents"]] for t in doc["targets"]}
        inputs["parents"] = ppath
    table = predict_eval(
        d,
        kind=args.model,
        variants=variants,
        train_frac=args.train_frac,
        seed=resolve_seed(args),
        alpha=args.alpha,
        discovered=discovered,
        n_trees=args.n_trees,
        max_depth=args.max_depth,
        n_jobs=args.jobs,
    )
    table["rel_diff_pct"] = 100.0 * table["rel_diff"]
    with output_lock(Path(args.out_dir)) as out:
        write_text(out / "auc.csv", frame_to_csv(table))
        doc = {"meta": meta(args, inputs), "rows": table.to_dict(orient="records")}
        write_text(out / "predict_eval.json", dumps(doc))
        write_manifest(out, args, ["auc.csv", "predict_eval.json"], inputs)
    print(table.pivot(index="position", columns="variant", values="rel_diff_pct").round(3).to_string())
    return 0


_PRODUCERS = {
    "estimate": ("estimate.json", "estimate"),
    "discover": ("parents.json", "discover"),
    "predict-eval": ("predict_eval.json", "predict-eval"),
    "graph": ("graph.json", "graph"),
}


def cmd_report(args) -> int:
    src = Path(args.inputs or args.out_dir)
    sections = [s.strip() for s in args.sections.split(",") if s.strip()]
    unknown = [s for s in sections if s not in _PRODUCERS]
    if unknown:
        raise ValidationError(f"unknown report sections {unknown}; choose from {sorted(_PRODUCERS)}")
    missing = [s for s in sections if not (src / _PRODUCERS[s][0]).exists()]
    if missing:
        hints = "; ".join(
            f"{_PRODUCERS[s][0]} (run `interference-lab {_PRODUCERS[s][1]} --out-dir {src}`)" for s in missing
        )
        raise ValidationError(f"missing upstream artifacts in {src}: {hints}")
    inputs = {_PRODUCERS[s][0]: src / _PRODUCERS[s][0] for s in sections}
    oracle_path = Path(args.oracle) if args.oracle else src / "oracle.csv"
    oracle = None
    if oracle_path.exists():
        oracle = pd.read_csv(oracle_path, dtype={"rule": str}, float_precision="round_trip")
        inputs["oracle.csv"] = oracle_path
    elif args.oracle:
        raise ValidationError(f"oracle table {oracle_path} not found; run `interference-lab simulate` first")

    lines = [f"interference-lab {__version__} report", ""]
    lines.append("provenance:")
    for name, p in sorted(inputs.items()):
        lines.append(f"  {name}  sha256={file_digest(p)}")
    bundle = []
    flagged = 0
    if "estimate" in sections:
        doc = json.loads((src / "estimate.json").read_text())
        means = pd.DataFrame(doc["means"])
        lines += ["", f"counterfactual means ({doc['n_pageviews']} pageviews):"]
        if oracle is not None:
            means = means.merge(oracle[["rule", "position", "psi"]].rename(columns={"psi": "oracle"}), on=["rule", "position"], how="left")
        for r in means.itertuples(index=False):
            line = f"  {r.estimator:8s} {r.rule} pos {r.position}: {r.psi:.4f} [{r.ci_low:.4f}, {r.ci_high:.4f}]"
            if oracle is not None and not pd.isna(r.oracle):
                covered = r.ci_low <= r.oracle <= r.ci_high
                line += f"  oracle {r.oracle:.4f}" + ("" if covered else "  <-- CI EXCLUDES ORACLE")
                flagged += 0 if covered else 1
                bundle.append({"section": "oracle_check", "key": f"{r.estimator}:{r.rule}:{r.position}", "value": int(covered)})
            lines.append(line)
            bundle.append({"section": "means", "key": f"{r.estimator}:{r.rule}:{r.position}", "value": r.psi})
        lines += ["", "effects:"]
        for e in doc["effects"]:
            lines.append(f"  {e['estimator']:8s} {e['target']}: {e['value']:+.4f} [{e['ci_low']:+.4f}, {e['ci_high']:+.4f}]")
            bundle.append({"section": "effects", "key": f"{e['estimator']}:{e['target']}", "value": e["value"]})
        if oracle is not None:
            lines += ["", f"estimates whose interval excludes the oracle value: {flagged}"]
    if "discover" in sections:
        doc = json.loads((src / "parents.json").read_text())
        lines += ["", "discovered parents:"]
        for t in doc["targets"]:
            cols = ", ".join(f"{p['column']} ({p['category']})" for p in t["parents"]) or "(none)"
            lines.append(f"  {t['target']}: {cols}")
            for p in t["parents"]:
                bundle.append({"section": "parents", "key": t["target"], "value": p["column"]})
    if "predict-eval" in sections:
        doc = json.loads((src / "predict_eval.json").read_text())
        lines += ["", "held-out AUC (relative difference vs baseline, %):"]
        for r in doc["rows"]:
            auc_txt = "n/a" if r["auc"] is None else f"{r['auc']:.4f}"
            rel = "n/a" if r["rel_diff_pct"] is None else f"{r['rel_diff_pct']:+.3f}"
            lines.append(f"  pos {r['position']} {r['variant']:12s} auc {auc_txt}  rel {rel}")
            bundle.append({"section": "auc", "key": f"{r['position']}:{r['variant']}", "value": r["auc"]})
    if "graph" in sections:
        doc = json.loads((src / "graph.json").read_text())
        ig = doc["ignorability"]
        lines += ["", f"network conditional ignorability for {ig['rule']}: {'holds' if ig['holds'] else 'fails'}"]
        bundle.append({"section": "graph", "key": ig["rule"], "value": int(ig["holds"])})
    text = "\n".join(lines) + "\n"
    with output_lock(Path(args.out_dir)) as out:
        write_text(out / "report.txt", text)
        write_text(out / "report_bundle.csv", frame_to_csv(pd.DataFrame(bundle, columns=["section", "key", "value"])))
        write_manifest(out, args, ["report.txt", "report_bundle.csv"], inputs)
    print(text, end="")
    return 0


# parser -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of settings (SemConfig for simulate)")
    common.add_argument("--seed", type=int, default=None, help=f"random seed (fallback: ${SEED_ENV})")
    common.add_argument("--out-dir", default="out", help="output directory")
    common.add_argument("--dataset", help="pageview CSV produced by simulate")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")

    parser = argparse.ArgumentParser(prog="interference-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="draw pageviews and the oracle table")
    p.add_argument("--preset", choices=sorted(PRESETS), help="named SemConfig (default golden)")
    p.add_argument("--n", type=int, default=50_000, help="number of pageviews")
    p.add_argument("--oracle-draws", type=int, default=1_000_000, help="Monte Carlo draws for the oracle (0 skips it)")
    p.add_argument("--rules", help="oracle rules, e.g. '110 100' (default: all valid rules)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("graph", parents=[common], help="ad DAG, SWIG and the ignorability check")
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--intervention", help="rule to intervene with, e.g. 110")
    p.add_argument("--inject", action="append", help="extra edge such as U->A1 (repeatable)")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("estimate", parents=[common], help="counterfactual means and interference effects")
    p.add_argument("--estimators", default="aipw,gformula,ipw")
    p.add_argument("--nuisance", choices=["logistic", "forest"], default="logistic")
    p.add_argument("--variant", choices=[v for v in VARIANTS if v != "discovered"], default="block-cross")
    p.add_argument("--propensity-mode", choices=["joint", "product"], default="joint")
    p.add_argument("--smoothing", type=float, default=None, help="probability for never-observed rules")
    p.add_argument("--k-folds", type=int, default=2)
    p.add_argument("--bootstrap", type=int, default=200, help="resamples (0 disables the bootstrap)")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--clip", type=float, default=1e-3, help="propensity floor in denominators")
    p.add_argument("--rules", help="rules to report, e.g. '111 100' (default: all valid rules)")
    p.add_argument("--positive-only", action="store_true", help="keep pageviews with at least one click")
    p.add_argument("--n-trees", type=int, default=200)
    p.add_argument("--max-depth", type=int, default=6)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("discover", parents=[common], help="parent discovery for each outcome")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--test", choices=["fisher_z", "kernel"], default="fisher_z")
    p.add_argument("--max-cond", type=int, default=3)
    p.add_argument("--n-perm", type=int, default=200)
    p.add_argument("--targets", help="comma-separated positions (default: all)")
    p.add_argument("--keep-self-in-d1", action="store_true")
    p.add_argument("--positive-only", action="store_true")
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("predict-eval", parents=[common], help="held-out AUC of the outcome-model variants")
    p.add_argument("--model", choices=["logistic", "forest"], default="logistic")
    p.add_argument("--variants", default=",".join(VARIANTS))
    p.add_argument("--train-frac", type=float, default=0.7)
    p.add_argument("--alpha", type=float, default=0.01, help="level for discovering parents on the train split")
    p.add_argument("--parents", help="parents.json from discover (default: discover on the train split)")
    p.add_argument("--positive-only", action="store_true")
    p.add_argument("--n-trees", type=int, default=200)
    p.add_argument("--max-depth", type=int, default=6)
    p.set_defaults(func=cmd_predict_eval)

    p = sub.add_parser("report", parents=[common], help="merge earlier outputs into one summary")
    p.add_argument("--inputs", help="directory holding earlier outputs (default: --out-dir)")
    p.add_argument("--sections", default="estimate", help="comma list of estimate,discover,predict-eval,graph")
    p.add_argument("--oracle", help="oracle.csv to check intervals against (default: <inputs>/oracle.csv if present)")
    p.set_defaults(func=cmd_report)
    return parser


def _apply_config(parser, argv):
    """Settings precedence: built-in defaults < --config file < explicit flags."""
    args = parser.parse_args(argv)
    if args.command == "simulate" or not args.config:
        return args
    path = Path(args.config)
    if not path.exists():
        raise ValidationError(f"config {path} not found")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    settings = {k.replace("-", "_"): v for k, v in doc.items()}
    unknown = sorted(set(settings) - known)
    if unknown:
        raise ValidationError(f"{path}: unknown settings for {args.command}: {unknown}")
    sub.set_defaults(**settings)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except (ValidationError, InvalidArgumentError, UndefinedMetricError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, RuntimeError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # anything unexpected is still a runtime failure, not a crash
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
