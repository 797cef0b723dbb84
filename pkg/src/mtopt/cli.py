"""Command-line front end.

Subcommands:

* ``run``    -- execute every (method x seed) run of an experiment config.
* ``sweep``  -- cross an experiment with an L2 x dropout regularization grid
  and emit a best-validation table per method.
* ``verify`` -- run the seeded property certificates; nonzero exit on any
  failure, with the failing gradient set dumped as JSON.
* ``report`` -- aggregate run summaries into a table: mean test score with a
  95% normal-approximation CI, interquartile range of per-epoch seconds, and
  total backward passes.

Exit codes: 0 ok, 1 verification failure, 2 usage/config error, 3 divergence.
``MTOPT_OUT`` sets the default output root.  Every artifact is written
atomically (temp file + rename).
"""

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import verify as verify_module
from .errors import ConfigError, MTOptError, TrainingDivergedError
from .net import MultiTaskModel, save_checkpoint
from .seeding import spawn_rng
from .tasks import (
    QuadraticSuite,
    load_multimnist,
    make_blob_classification,
    make_conflicting_quadratics,
    make_scale_imbalanced_regression,
)
from .trainer import (
    METHODS,
    DirectParameters,
    TrainConfig,
    atomic_write_text,
    run_summary,
    train,
    write_run_csv,
)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3

_SUITE_KEYS = {
    "blobs": {"kind", "tasks", "classes", "input_dim", "samples", "separation", "label_noise", "seed"},
    "scale_regression": {"kind", "ratio", "input_dim", "out_dim", "samples", "noise", "seed"},
    "quadratics": {"kind", "dim", "c1", "c2", "kappa", "theta0_scale"},
    "multimnist": {"kind", "images", "labels", "canvas", "offset", "seed"},
}
_MODEL_KEYS = {"trunk", "head_hidden", "activation", "dropout"}
_TRAIN_KEYS = {
    "epochs", "batch_size", "eta", "lr_decay", "l2", "optimizer", "eval_every",
    "norm_every", "space", "mgda_rescale", "mgda_max_iter", "mgda_tol", "imtl_l",
    "imtl_l_step", "graddrop_flip", "rlw_dist", "rgd_p", "mask_keep_p",
    "steps_per_epoch", "unitary_fast_path",
}
_TOP_KEYS = {"suite", "model", "train", "methods", "seeds", "repetitions", "out_dir"}


def _reject_unknown(section: dict, allowed: set, where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def load_config(path) -> dict:
    """Parse and schema-validate an experiment config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be an object")
    _reject_unknown(cfg, _TOP_KEYS, "config root")

    suite = cfg.get("suite")
    if not isinstance(suite, dict) or "kind" not in suite:
        raise ConfigError("config needs a 'suite' object with a 'kind'")
    kind = suite["kind"]
    if kind not in _SUITE_KEYS:
        raise ConfigError(f"unknown suite kind {kind!r}")
    _reject_unknown(suite, _SUITE_KEYS[kind], f"suite ({kind})")

    model = cfg.get("model") or {}
    if not isinstance(model, dict):
        raise ConfigError("'model' must be an object")
    _reject_unknown(model, _MODEL_KEYS, "model")

    train_cfg = cfg.get("train") or {}
    if not isinstance(train_cfg, dict):
        raise ConfigError("'train' must be an object")
    _reject_unknown(train_cfg, _TRAIN_KEYS, "train")

    methods = cfg.get("methods") or ["unitary"]
    if not isinstance(methods, list) or not methods:
        raise ConfigError("'methods' must be a nonempty list")
    for method in methods:
        if method not in METHODS:
            raise ConfigError(f"unknown method {method!r} (choose from {METHODS})")

    if "seeds" in cfg and "repetitions" in cfg:
        raise ConfigError("give either 'seeds' or 'repetitions', not both")
    seeds = cfg.get("seeds")
    if seeds is None:
        reps = cfg.get("repetitions", 1)
        if not isinstance(reps, int) or reps < 1:
            raise ConfigError("'repetitions' must be a positive integer")
        seeds = list(range(reps))
    if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds) or not seeds:
        raise ConfigError("'seeds' must be a nonempty list of integers")

    return {
        "suite": suite,
        "model": model,
        "train": train_cfg,
        "methods": list(methods),
        "seeds": list(seeds),
        "out_dir": cfg.get("out_dir"),
    }


def config_to_json(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=2)


def build_suite(suite_cfg: dict):
    kind = suite_cfg["kind"]
    if kind == "blobs":
        return make_blob_classification(
            tasks=suite_cfg.get("tasks", 2),
            classes=suite_cfg.get("classes", 3),
            input_dim=suite_cfg.get("input_dim", 8),
            samples=suite_cfg.get("samples", 600),
            separation=suite_cfg.get("separation", 2.0),
            label_noise=suite_cfg.get("label_noise", 0.0),
            seed=suite_cfg.get("seed", 0),
        )
    if kind == "scale_regression":
        return make_scale_imbalanced_regression(
            ratio=suite_cfg.get("ratio", 10.0),
            input_dim=suite_cfg.get("input_dim", 8),
            out_dim=suite_cfg.get("out_dim", 1),
            samples=suite_cfg.get("samples", 600),
            noise=suite_cfg.get("noise", 0.1),
            seed=suite_cfg.get("seed", 0),
        )
    if kind == "quadratics":
        dim = suite_cfg.get("dim", 2)
        return make_conflicting_quadratics(
            dim,
            suite_cfg.get("c1", [1.0] + [0.0] * (dim - 1)),
            suite_cfg.get("c2", [-1.0] + [0.0] * (dim - 1)),
            suite_cfg.get("kappa", 1.0),
        )
    if kind == "multimnist":
        return load_multimnist(
            suite_cfg["images"],
            suite_cfg["labels"],
            canvas=suite_cfg.get("canvas", 32),
            offset=suite_cfg.get("offset", 4),
            seed=suite_cfg.get("seed", 0),
        )
    raise ConfigError(f"unknown suite kind {kind!r}")


def build_model(suite, model_cfg: dict, suite_cfg: dict, seed: int, dropout=None):
    if isinstance(suite, QuadraticSuite):
        scale = suite_cfg.get("theta0_scale", 1.0)
        theta0 = spawn_rng(seed, "theta0").standard_normal(suite.dim) * scale
        return DirectParameters(theta0)
    drop = model_cfg.get("dropout", 0.0) if dropout is None else dropout
    init_seed = int(spawn_rng(seed, "init").integers(2**31))
    return MultiTaskModel.init(
        input_dim=suite.input_dim,
        trunk_widths=model_cfg.get("trunk", [32]),
        task_out_dims=suite.task_out_dims(),
        head_hidden=model_cfg.get("head_hidden"),
        activation=model_cfg.get("activation", "relu"),
        dropout=drop,
        seed=init_seed,
    )


def _run_name(method: str, seed: int, l2=None, dropout=None) -> str:
    name = f"{method}_s{seed}"
    if l2 is not None:
        name += f"_l2{l2:g}"
    if dropout is not None:
        name += f"_do{dropout:g}"
    return name


def execute_run(cfg: dict, method: str, seed: int, out_dir: str,
                l2=None, dropout=None, save_models: bool = False) -> dict:
    """Train one (method, seed) cell and write its CSV + JSON artifacts.

    Top-level so a process pool can dispatch it; rebuilds the suite from the
    config, which is deterministic given the suite seed.
    """
    suite = build_suite(cfg["suite"])
    model = build_model(suite, cfg["model"], cfg["suite"], seed, dropout=dropout)
    train_kwargs = dict(cfg["train"])
    if l2 is not None:
        train_kwargs["l2"] = l2
    train_cfg = TrainConfig(method=method, seed=seed, **train_kwargs)
    if dropout is not None:
        train_cfg.dropout = dropout
    elif not isinstance(suite, QuadraticSuite):
        train_cfg.dropout = cfg["model"].get("dropout", 0.0)
    name = _run_name(method, seed, l2=l2, dropout=dropout)
    os.makedirs(out_dir, exist_ok=True)
    try:
        result = train(model, suite, train_cfg)
    except TrainingDivergedError as err:
        summary = {"method": method, "seed": seed, "run": name,
                   "diverged": True, "error": str(err), "l2": l2, "dropout": dropout}
        atomic_write_text(os.path.join(out_dir, f"{name}.run.json"),
                          json.dumps(summary, sort_keys=True, indent=2))
        return summary
    write_run_csv(result.record, os.path.join(out_dir, f"{name}.csv"))
    summary = run_summary(result.record, train_cfg, f"{name}.csv")
    summary["run"] = name
    summary["diverged"] = False
    atomic_write_text(os.path.join(out_dir, f"{name}.run.json"),
                      json.dumps(summary, sort_keys=True, indent=2))
    if save_models and isinstance(result.model, MultiTaskModel):
        final = os.path.join(out_dir, f"{name}.model.json")
        result.model.load_params(result.selected_params)
        save_checkpoint(result.model, final)
    return summary


def _execute_cell(args):
    return execute_run(*args)


def _dispatch(cells, jobs: int):
    if jobs <= 1:
        return [_execute_cell(cell) for cell in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_execute_cell, cells))


def _default_out(args_out, cfg_out) -> str:
    if args_out:
        return args_out
    if cfg_out:
        return cfg_out
    return os.environ.get("MTOPT_OUT", "mtopt-runs")


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    methods = cfg["methods"]
    if args.method:
        if args.method not in METHODS:
            print(f"error: unknown method {args.method!r}", file=sys.stderr)
            return EXIT_USAGE
        methods = [args.method]
    seeds = [args.seed] if args.seed is not None else cfg["seeds"]
    out_dir = _default_out(args.out, cfg["out_dir"])

    cells = [(cfg, method, seed, out_dir, None, None, args.save_models)
             for method in methods for seed in seeds]
    summaries = _dispatch(cells, args.jobs)

    manifest = {"config": cfg, "runs": summaries}
    atomic_write_text(os.path.join(out_dir, "manifest.json"),
                      json.dumps(manifest, sort_keys=True, indent=2))
    diverged = [s for s in summaries if s.get("diverged")]
    for s in diverged:
        print(f"diverged: {s['run']}: {s.get('error')}", file=sys.stderr)
    print(f"wrote {len(summaries)} runs to {out_dir}")
    if diverged and not args.keep_going:
        return EXIT_DIVERGED
    return EXIT_OK


def _parse_grid(text: str, flag: str):
    if text is None or text.strip() == "":
        raise ConfigError(f"{flag} grid must be a nonempty comma-separated list")
    try:
        return [float(x) for x in text.split(",")]
    except ValueError as err:
        raise ConfigError(f"bad {flag} grid {text!r}: {err}") from err


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    l2_grid = _parse_grid(args.l2_grid, "--l2-grid")
    dropout_grid = _parse_grid(args.dropout_grid, "--dropout-grid")
    seeds = [args.seed] if args.seed is not None else cfg["seeds"]
    out_dir = _default_out(args.out, cfg["out_dir"])

    cells = [
        (cfg, method, seed, out_dir, l2, dropout, False)
        for method in cfg["methods"]
        for l2 in l2_grid
        for dropout in dropout_grid
        for seed in seeds
    ]
    summaries = _dispatch(cells, args.jobs)

    # Mean best-validation score per (method, l2, dropout) cell.
    table = {}
    for s in summaries:
        if s.get("diverged"):
            continue
        key = (s["method"], s["l2"], s["dropout"])
        table.setdefault(key, []).append(s["best_val_avg"])
    lines = ["method,l2,dropout,mean_best_val,n"]
    best = {}
    for (method, l2, dropout), vals in sorted(table.items()):
        mean = float(np.mean(vals))
        lines.append(f"{method},{l2:g},{dropout:g},{mean!r},{len(vals)}")
        if method not in best or mean > best[method][0]:
            best[method] = (mean, l2, dropout)
    atomic_write_text(os.path.join(out_dir, "sweep_summary.csv"), "\n".join(lines) + "\n")

    best_lines = ["method,best_l2,best_dropout,mean_best_val"]
    for method in sorted(best):
        mean, l2, dropout = best[method]
        best_lines.append(f"{method},{l2:g},{dropout:g},{mean!r}")
    atomic_write_text(os.path.join(out_dir, "sweep_best.csv"), "\n".join(best_lines) + "\n")

    manifest = {"config": cfg, "l2_grid": l2_grid, "dropout_grid": dropout_grid,
                "runs": summaries}
    atomic_write_text(os.path.join(out_dir, "manifest.json"),
                      json.dumps(manifest, sort_keys=True, indent=2))

    print("\n".join(best_lines))
    diverged = [s for s in summaries if s.get("diverged")]
    for s in diverged:
        print(f"diverged: {s['run']}: {s.get('error')}", file=sys.stderr)
    if diverged and not args.keep_going:
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_verify(args) -> int:
    tolerances = {}
    for spec in args.tolerance or []:
        if "=" not in spec:
            print(f"error: --tolerance wants NAME=VALUE, got {spec!r}", file=sys.stderr)
            return EXIT_USAGE
        name, value = spec.split("=", 1)
        try:
            tolerances[name] = float(value)
        except ValueError:
            print(f"error: bad tolerance value {value!r}", file=sys.stderr)
            return EXIT_USAGE
    results = verify_module.run_all(seed=args.seed, tolerances=tolerances)
    failures = 0
    out_dir = _default_out(args.out, None)
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"[{status}] {res.name}: {res.detail}")
        if not res.passed:
            failures += 1
            if res.counterexample is not None:
                path = os.path.join(out_dir, f"counterexample_{res.name}.json")
                atomic_write_text(path, json.dumps(res.counterexample, indent=2))
                print(f"       counterexample written to {path}")
    print(f"{len(results) - failures}/{len(results)} properties passed")
    return EXIT_OK if failures == 0 else EXIT_VERIFY_FAILED


def _collect_summaries(paths):
    files = []
    for path in paths:
        if os.path.isdir(path):
            for root, _, names in os.walk(path):
                files.extend(os.path.join(root, n) for n in names if n.endswith(".run.json"))
        elif path.endswith(".run.json"):
            files.append(path)
    summaries = []
    for fname in sorted(set(files)):
        with open(fname, encoding="utf-8") as fh:
            summaries.append(json.load(fh))
    return summaries


def report_rows(summaries):
    """Per-method aggregation: mean test score +- 95% CI, runtime IQR, backwards."""
    by_method = {}
    for s in summaries:
        if s.get("diverged") or s.get("test_avg") is None:
            continue
        by_method.setdefault(s["method"], []).append(s)
    rows = []
    for method in sorted(by_method):
        group = sorted(by_method[method], key=lambda s: (s["seed"], s.get("run", "")))
        scores = np.array([s["test_avg"] for s in group], dtype=np.float64)
        n = scores.size
        mean = float(scores.mean())
        if n >= 2:
            se = float(scores.std(ddof=1) / math.sqrt(n))
            ci = 1.96 * se
            ci_text = f"{ci:.6g}"
        else:
            ci = math.nan
            ci_text = "n/a"  # n=1: no CI
        seconds = np.concatenate([np.asarray(s["epoch_seconds"]) for s in group])
        q1, q3 = np.percentile(seconds, [25, 75])
        backwards = int(sum(s.get("trunk_backwards", 0) for s in group))
        head_backwards = int(sum(s.get("head_backwards", 0) for s in group))
        rows.append({
            "method": method, "n": n, "mean_test": mean, "ci95": ci, "ci_text": ci_text,
            "sec_q1": float(q1), "sec_q3": float(q3),
            "trunk_backwards": backwards, "head_backwards": head_backwards,
        })
    return rows


def cmd_report(args) -> int:
    summaries = _collect_summaries(args.runs)
    if not summaries:
        print("error: no run records found", file=sys.stderr)
        return EXIT_USAGE
    rows = report_rows(summaries)
    header = f"{'method':<24}{'n':>3}  {'test avg':>12}  {'95% CI':>10}  {'epoch sec IQR':>20}  {'backwards':>12}"
    print(header)
    print("-" * len(header))
    csv_lines = ["method,n,mean_test,ci95,sec_q1,sec_q3,trunk_backwards,head_backwards"]
    for row in rows:
        iqr = f"[{row['sec_q1']:.4g}, {row['sec_q3']:.4g}]"
        print(
            f"{row['method']:<24}{row['n']:>3}  {row['mean_test']:>12.6f}  "
            f"{row['ci_text']:>10}  {iqr:>20}  {row['trunk_backwards']:>12}"
        )
        csv_lines.append(
            f"{row['method']},{row['n']},{row['mean_test']!r},"
            f"{'' if math.isnan(row['ci95']) else repr(row['ci95'])},"
            f"{row['sec_q1']!r},{row['sec_q3']!r},"
            f"{row['trunk_backwards']},{row['head_backwards']}"
        )
    out_dir = _default_out(args.out, None)
    path = os.path.join(out_dir, "report.csv")
    atomic_write_text(path, "\n".join(csv_lines) + "\n")
    print(f"report written to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtopt",
        description="Multi-task gradient aggregation: experiments, sweeps, and certificates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute all (method x seed) runs of a config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None, help="output dir (default: config/out env MTOPT_OUT)")
    p_run.add_argument("--seed", type=int, default=None, help="run only this seed")
    p_run.add_argument("--method", default=None, help="run only this method")
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.add_argument("--keep-going", action="store_true",
                       help="exit 0 even if some runs diverge")
    p_run.add_argument("--save-models", action="store_true",
                       help="write the selected-epoch checkpoint per run")
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="regularization grid over a config")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--l2-grid", required=True, help="comma list, e.g. 0,1e-4,1e-3")
    p_sweep.add_argument("--dropout-grid", required=True, help="comma list, e.g. 0,0.5")
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.add_argument("--keep-going", action="store_true")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_verify = sub.add_parser("verify", help="run the property certificates")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--tolerance", action="append", metavar="NAME=VALUE",
                          help="override one property tolerance (repeatable)")
    p_verify.add_argument("--out", default=None, help="where to dump counterexamples")
    p_verify.set_defaults(fn=cmd_verify)

    p_report = sub.add_parser("report", help="summarize run records")
    p_report.add_argument("runs", nargs="+", help="run dirs or .run.json files")
    p_report.add_argument("--out", default=None)
    p_report.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergedError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except MTOptError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
