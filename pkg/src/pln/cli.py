"""Command-line interface.

Subcommands: ``train``, ``evaluate``, ``predict``, ``trials``, ``ppcheck``,
``curves`` and ``inspect``.  Exit codes: 0 success, 1 a self-check failed,
2 usage or configuration error, 3 data or model-file error, 4 numerical
failure.

``train --out DIR`` writes fixed file names:

* ``model.pln``      binary model
* ``report.jsonl``   config, growth steps and summary (no timings)
* ``timings.jsonl``  wall-clock time of every step and of the whole run
* ``summary.txt``    final metrics table
* ``curve_nme.csv``, ``curve_accuracy.csv``, ``layer_nodes.csv``  growth curves
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import data as pdata
from .activations import parse_activation, verify_pp
from .errors import ConfigError, DataError, ModelFormatError, NumericalError
from .metrics import score
from .model import deserialize, forward, model_summary, serialize
from .trainer import TrainConfig, load_config, train

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger("pln")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3, 4

MODEL_FILE = "model.pln"
REPORT_FILE = "report.jsonl"
TIMINGS_FILE = "timings.jsonl"
SUMMARY_FILE = "summary.txt"
CURVE_NME_FILE = "curve_nme.csv"
CURVE_ACCURACY_FILE = "curve_accuracy.csv"
LAYER_NODES_FILE = "layer_nodes.csv"
TRIALS_FILE = "trials.jsonl"
TRIALS_TABLE_FILE = "trials.txt"


# ---------------------------------------------------------------- run manifest

@dataclass
class RunManifest:
    """One reproducible run: dataset manifest, config, output dir, trials, seed."""

    data: Path
    config: Path | None = None
    out: Path | None = None
    trials: int = 50
    seed: int | None = None

    def __post_init__(self):
        for name in ("data", "config"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{name} file not found: {path}")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ConfigError(f"trials must be a positive integer, got {self.trials}")


def load_run_manifest(path) -> RunManifest:
    """Read a TOML run manifest; relative paths are taken from its directory."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"run manifest not found: {path}")
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    known = {f.name for f in fields(RunManifest)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{path}: unknown run manifest keys {sorted(unknown)}")
    if "data" not in raw:
        raise ConfigError(f"{path}: run manifest needs 'data'")
    for key in ("data", "config", "out"):
        if key in raw:
            p = Path(raw[key]).expanduser()
            raw[key] = p if p.is_absolute() else path.parent / p
    return RunManifest(**raw)


# --------------------------------------------------------------------- helpers

def _atomic_write(path: Path, payload) -> None:
    """Write ``payload`` (bytes or str) so that ``path`` is never left partial."""
    path = Path(path)
    if isinstance(payload, str):
        payload = payload.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _jsonl(records) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(value, spec=".4f") -> str:
    return "-" if value is None else format(value, spec)


def _read_model(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"model file not found: {path}")
    return deserialize(path.read_bytes())


def _load_splits(args):
    manifest = pdata.load_manifest(args.data, data_dir=args.data_dir)
    return manifest, manifest.load()


def _config_from_args(args, config_path=None) -> TrainConfig:
    overrides = {f.name: getattr(args, f.name, None) for f in fields(TrainConfig)}
    return load_config(config_path, **overrides)


def _merge_run(args):
    """Fill ``--data/--config/--out/--trials/--seed`` from ``--run`` where not given."""
    if getattr(args, "run", None) is None:
        return args
    run = load_run_manifest(args.run)
    if args.data is None:
        args.data = run.data
    if getattr(args, "config", None) is None:
        args.config = run.config
    if getattr(args, "out", None) is None:
        args.out = run.out
    if getattr(args, "trials", None) is None:
        args.trials = run.trials
    if args.seed is None:
        args.seed = run.seed
    return args


def _check_compatible(model, dataset):
    if dataset.P != model.P:
        raise DataError(f"model expects {model.P} input features, data has {dataset.P}")
    if dataset.Q != model.Q:
        raise DataError(f"model has {model.Q} outputs, data has {dataset.Q} targets")
    if model.labels is not None and dataset.labels is not None and list(model.labels) != list(dataset.labels):
        raise DataError(f"label sets differ: model {model.labels}, data {dataset.labels}")


# ---------------------------------------------------------------------- curves

def read_report(path) -> list:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"report not found: {path}")
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed report line ({exc})") from None
    return records


def curve_tables(records) -> dict:
    """Growth curves from report records.

    Returns CSV text for cumulative random nodes vs training NME, vs accuracy,
    and the per-layer node counts of the accepted layers.
    """
    summary = next((r for r in records if r.get("record") == "summary"), None)
    steps = [r for r in records if r.get("record") == "step"]
    if summary is None or not steps:
        raise DataError("report has no growth steps or no summary record")
    try:
        Q = int(summary["Q"])
        node_steps = [s for s in steps if s["event"] == "node" and s["accepted"]]
        layer_steps = [s for s in steps if s["event"] == "layer" and s["accepted"]]
        baseline = next(s for s in steps if s["event"] == "baseline")
    except (KeyError, StopIteration, TypeError, ValueError) as exc:
        raise DataError(f"malformed report: {exc}") from None

    done = 0  # random nodes in finished layers
    current = None
    nme_rows = [(0, -1, baseline["train_nme_db"], baseline.get("validation_nme_db"))]
    acc_rows = [(0, -1, baseline.get("train_accuracy"), baseline.get("validation_accuracy"))]
    for s in node_steps:
        if current is not None and s["layer_index"] != current[0]:
            done += current[1]
        current = (s["layer_index"], s["n_nodes_after"] - 2 * Q)
        total = done + current[1]
        nme_rows.append((total, s["layer_index"], s["train_nme_db"], s.get("validation_nme_db")))
        acc_rows.append((total, s["layer_index"], s.get("train_accuracy"), s.get("validation_accuracy")))
    layer_rows = [(s["layer_index"], s["n_nodes_after"], s["n_nodes_after"] - 2 * Q) for s in layer_steps]

    def cell(v):
        return "" if v is None else repr(float(v))

    return {
        CURVE_NME_FILE: _csv(
            ["random_nodes", "layer_index", "train_nme_db", "validation_nme_db"],
            [(n, i, cell(a), cell(b)) for n, i, a, b in nme_rows],
        ),
        CURVE_ACCURACY_FILE: _csv(
            ["random_nodes", "layer_index", "train_accuracy", "validation_accuracy"],
            [(n, i, cell(a), cell(b)) for n, i, a, b in acc_rows],
        ),
        LAYER_NODES_FILE: _csv(["layer_index", "n_nodes", "n_random"], layer_rows),
    }


# -------------------------------------------------------------------- commands

def cmd_train(args) -> int:
    args = _merge_run(args)
    if args.data is None:
        raise ConfigError("train needs --data or --run")
    if args.out is None:
        raise ConfigError("train needs --out or --run with 'out'")
    config = _config_from_args(args, args.config)
    _, (train_set, test_set) = _load_splits(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    model, report = train(train_set, config)
    files = {
        MODEL_FILE: serialize(model),
        REPORT_FILE: _jsonl(report.records(timing=False)),
        TIMINGS_FILE: _jsonl(
            [{"record": "step", "index": i, "event": s.event, "elapsed_s": s.elapsed_s}
             for i, s in enumerate(report.steps)]
            + [{"record": "total", "train_time_s": report.train_time_s}]
        ),
    }
    rows = [("train", score(train_set.T, forward(model, train_set.X, keep_trace=False)[0],
                            train_set.classification))]
    if test_set.n_samples:
        rows.append(("test", score(test_set.T, forward(model, test_set.X, keep_trace=False)[0],
                                   test_set.classification)))
    lines = [
        f"dataset    {train_set.name}",
        f"layers     {model.depth}",
        f"widths     {' '.join(map(str, model.widths)) or '-'}",
        f"parameters {report.n_parameters}",
        f"baseline   train NME {report.baseline_train_nme_db:.4f} dB",
        "",
        f"{'split':<6} {'NME (dB)':>10} {'accuracy':>9}",
    ]
    lines += [f"{name:<6} {m.nme_db:>10.4f} {_fmt(m.accuracy):>9}" for name, m in rows]
    files[SUMMARY_FILE] = "\n".join(lines) + "\n"
    files.update(curve_tables(report.records()))
    for name, payload in files.items():
        _atomic_write(out / name, payload)
    print(files[SUMMARY_FILE], end="")
    logger.info("wrote %s", out / MODEL_FILE)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = _read_model(args.model)
    _, (train_set, test_set) = _load_splits(args)
    dataset = train_set if args.split == "train" else test_set
    _check_compatible(model, dataset)
    pred = forward(model, dataset.X, depth=args.depth, keep_trace=False)[0]
    m = score(dataset.T, pred, dataset.classification)
    result = {
        "split": args.split,
        "depth": model.depth if args.depth is None else args.depth,
        "samples": dataset.n_samples,
        "nme_db": m.nme_db,
        "cost": m.cost,
        "accuracy": m.accuracy,
    }
    if args.json:
        print(json.dumps(result, sort_keys=True))
    else:
        for key, value in result.items():
            print(f"{key:<8} {'-' if value is None else value}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = _read_model(args.model)
    _, (train_set, test_set) = _load_splits(args)
    dataset = train_set if args.split == "train" else test_set
    if dataset.P != model.P:
        raise DataError(f"model expects {model.P} input features, data has {dataset.P}")
    pred = forward(model, dataset.X, depth=args.depth, keep_trace=False)[0]
    if model.task == "classification":
        labels = model.labels or [str(i) for i in range(model.Q)]
        header = ["prediction"] + [f"score_{lab}" for lab in labels]
        rows = [[labels[int(np.argmax(col))], *map(repr, col.tolist())] for col in pred.T]
    else:
        header = [f"target_{i}" for i in range(model.Q)]
        rows = [list(map(repr, col.tolist())) for col in pred.T]
    text = _csv(header, rows)
    if args.out:
        _atomic_write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def trials_table(name: str, summary, timing: bool = True) -> str:
    cols = [("train_nme_db", "Training NME"), ("test_nme_db", "Testing NME"),
            ("test_accuracy", "Test accuracy")]
    if timing:
        cols.append(("train_time_s", "Training time (s)"))
    header = ["Dataset"] + [title for _, title in cols]
    row = [name]
    for key, _ in cols:
        if key not in summary.stats:
            row.append("-")
            continue
        mean, std = summary.stats[key]
        if key == "test_accuracy":
            mean, std = 100 * mean, 100 * std
            row.append(f"{mean:.1f} ± {std:.1f}")
        elif key == "train_time_s":
            row.append(f"{mean:.4f}")
        else:
            row.append(f"{mean:.2f} ± {std:.2f}")
    widths = [max(len(h), len(r)) for h, r in zip(header, row)]
    fmt = " | ".join(f"{{:<{w}}}" for w in widths)
    return fmt.format(*header) + "\n" + fmt.format(*row) + "\n"


def cmd_trials(args) -> int:
    args = _merge_run(args)
    if args.data is None:
        raise ConfigError("trials needs --data or --run")
    trials = 50 if args.trials is None else args.trials
    config = _config_from_args(args, args.config)
    manifest = pdata.load_manifest(args.data, data_dir=args.data_dir)
    summary = pdata.run_trials(manifest, manifest.split, config, trials=trials, n_jobs=args.jobs)
    print(trials_table(manifest.name, summary), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        per_trial = [{k: v for k, v in r.items() if k != "train_time_s"} for r in summary.trials]
        _atomic_write(out / TRIALS_FILE, _jsonl(per_trial))
        _atomic_write(out / TRIALS_TABLE_FILE, trials_table(manifest.name, summary, timing=False))
        _atomic_write(out / TIMINGS_FILE, _jsonl(
            [{"trial": r["trial"], "train_time_s": r["train_time_s"]} for r in summary.trials]
        ))
    return EXIT_OK


def cmd_ppcheck(args) -> int:
    spec = parse_activation(args.spec)
    residual = verify_pp(spec, args.n, args.trials, seed=args.seed)
    ok = residual <= args.tol
    print(f"{'PASS' if ok else 'FAIL'} {spec} N={args.n} trials={args.trials} max_residual={residual:.3e}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_curves(args) -> int:
    tables = curve_tables(read_report(args.report))
    out = Path(args.out) if args.out else Path(args.report).parent
    out.mkdir(parents=True, exist_ok=True)
    for name, text in tables.items():
        _atomic_write(out / name, text)
        print(out / name)
    return EXIT_OK


def cmd_inspect(args) -> int:
    model = _read_model(args.model)
    info = model_summary(model)
    if args.full:
        info["w_ls"] = model.w_ls.tolist()
        for entry, layer in zip(info["layers"], model.layers):
            entry["random_block"] = layer.random_block.tolist()
            entry["output_matrix"] = None if layer.output_matrix is None else layer.output_matrix.tolist()
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------- parser

_FLAG_HELP = {
    "lambda_ls": "ridge parameter of the baseline linear map",
    "mu": "ADMM parameter",
    "k_max": "ADMM iteration cap",
    "alpha": "output-matrix constraint factor (>= 1)",
    "delta": "nodes added per width step",
    "eta_n": "node-growth threshold on relative NME improvement",
    "eta_l": "layer-growth threshold on relative NME improvement",
    "n_max": "maximum nodes per layer",
    "l_max": "maximum number of layers",
    "q": "norm order of the output constraint (1 or 2)",
    "p": "error norm (2 only)",
    "seed": "root random seed",
    "validation_fraction": "fraction of training data held out for growth decisions",
    "activation": "relu, lrelu:a=A or genrelu:a=A,b=B",
    "normalize_random": "rescale random-node outputs to unit norm per sample",
    "admm_tol": "ADMM early-stop tolerance (0 disables)",
    "admm_iterate": "ADMM result to keep: projected (feasible) or primal",
    "initial_width": "width of a new layer before growth (default 2Q + delta)",
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training parameters (override the config file)")
    for f in fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        kwargs = {"dest": f.name, "default": None, "help": _FLAG_HELP.get(f.name)}
        if f.name == "normalize_random":
            g.add_argument(flag, action=argparse.BooleanOptionalAction, **kwargs)
        elif f.name in ("activation", "admm_iterate"):
            g.add_argument(flag, **kwargs)
        else:
            g.add_argument(flag, type=int if str(f.type).startswith("int") else float, **kwargs)


def _add_data_flags(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--data", type=Path, required=required, help="dataset manifest (TOML)")
    p.add_argument("--data-dir", help=f"base directory for data files (default ${pdata.DATA_DIR_ENV})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pln", description="Progressive learning networks.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="grow a network and write model, report and curves")
    _add_data_flags(p, required=False)
    p.add_argument("--config", type=Path, help="training config (TOML)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--run", type=Path, help="run manifest (TOML) supplying data/config/out/seed")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a model on a dataset split")
    p.add_argument("model", type=Path)
    _add_data_flags(p)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--depth", type=int, help="evaluate the prefix with this many layers")
    p.add_argument("--json", action="store_true", help="print one JSON object")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="write predictions as CSV")
    p.add_argument("model", type=Path)
    _add_data_flags(p)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--depth", type=int)
    p.add_argument("--out", type=Path, help="CSV file (default stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("trials", help="repeat training over seeds and report mean ± std")
    _add_data_flags(p, required=False)
    p.add_argument("--config", type=Path)
    p.add_argument("--run", type=Path)
    p.add_argument("--trials", type=int, help="number of repetitions (default 50)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out", type=Path, help="directory for per-trial records")
    _add_config_flags(p)
    p.set_defaults(func=cmd_trials)

    p = sub.add_parser("ppcheck", help="numerically check the progression property")
    p.add_argument("spec", help="activation, e.g. relu or genrelu:a=0.1,b=1.0")
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=cmd_ppcheck)

    p = sub.add_parser("curves", help="growth curves from a training report")
    p.add_argument("report", type=Path)
    p.add_argument("--out", type=Path, help="output directory (default: next to the report)")
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("inspect", help="print model dimensions and norms as JSON")
    p.add_argument("model", type=Path)
    p.add_argument("--full", action="store_true", help="include every matrix")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"pln: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelFormatError) as exc:
        print(f"pln: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"pln: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FileNotFoundError as exc:
        print(f"pln: error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"pln: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
