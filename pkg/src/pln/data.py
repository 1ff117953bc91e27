"""Datasets, loaders, train/test partitioning and the repeated-trial protocol.

Samples are columns: ``X`` is ``P x J`` and ``T`` is ``Q x J``.  Classification
targets are one-hot columns built from a stable label-to-index map.
"""
from __future__ import annotations

import csv
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = [
    "Dataset",
    "SplitSpec",
    "DataManifest",
    "MinMaxScaler",
    "load_csv",
    "load_libsvm",
    "load_manifest",
    "partition",
    "run_trials",
    "TrialSummary",
    "DATA_DIR_ENV",
]

logger = logging.getLogger(__name__)

DATA_DIR_ENV = "PLN_DATA_DIR"
TASKS = ("classification", "regression")


@dataclass
class Dataset:
    X: np.ndarray
    T: np.ndarray
    task: str = "classification"
    labels: list | None = None
    name: str = ""

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.T = np.asarray(self.T, dtype=np.float64)
        if self.task not in TASKS:
            raise DataError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.X.ndim != 2 or self.T.ndim != 2:
            raise DataError("X and T must be 2-D (features/targets x samples)")
        if self.X.shape[1] != self.T.shape[1]:
            raise DataError(f"X has {self.X.shape[1]} samples but T has {self.T.shape[1]}")
        if self.X.shape[1] < 1:
            raise DataError("dataset has no samples")

    @property
    def P(self) -> int:
        return self.X.shape[0]

    @property
    def Q(self) -> int:
        return self.T.shape[0]

    @property
    def n_samples(self) -> int:
        return self.X.shape[1]

    @property
    def classification(self) -> bool:
        return self.task == "classification"

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return replace(self, X=self.X[:, idx], T=self.T[:, idx])

    def class_indices(self) -> np.ndarray:
        return np.argmax(self.T, axis=0)


def _sort_labels(values) -> list:
    values = set(values)
    try:
        return sorted(values, key=float)
    except ValueError:
        return sorted(values)


def one_hot(raw_labels, labels: list | None = None):
    """One-hot encode ``raw_labels`` (strings); returns ``(T, labels)``."""
    raw_labels = [str(v) for v in raw_labels]
    if labels is None:
        labels = _sort_labels(raw_labels)
    index = {lab: i for i, lab in enumerate(labels)}
    T = np.zeros((len(labels), len(raw_labels)))
    for j, lab in enumerate(raw_labels):
        try:
            T[index[lab], j] = 1.0
        except KeyError:
            raise DataError(f"unknown label {lab!r}") from None
    return T, list(labels)


def _canonical_label(text: str) -> str:
    text = text.strip()
    try:
        value = float(text)
    except ValueError:
        return text
    return str(int(value)) if value.is_integer() else repr(value)


def load_csv(
    path,
    *,
    label_column: int | None = -1,
    target_columns=None,
    delimiter: str = ",",
    header: bool = False,
    task: str | None = None,
    labels: list | None = None,
    name: str = "",
) -> Dataset:
    """Load a delimited text file with one sample per row.

    For classification give ``label_column``; for regression give
    ``target_columns`` (the task is inferred from which is set unless
    ``task`` is passed).  ``labels`` fixes the label map, e.g. for a test file
    that must share the training file's encoding.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh, delimiter=delimiter) if row and any(c.strip() for c in row)]
    if header and rows:
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path}: no samples")
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {i + 1} has {len(row)} fields, expected {width}")

    if task is None:
        task = "regression" if target_columns is not None else "classification"
    if task == "classification":
        if label_column is None:
            raise ConfigError("classification data needs a label column")
        tcols = [label_column % width]
    else:
        if target_columns is None:
            raise ConfigError("regression data needs target columns")
        tcols = sorted({c % width for c in target_columns})
    fcols = [c for c in range(width) if c not in tcols]

    try:
        X = np.array([[float(row[c]) for c in fcols] for row in rows]).T
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric feature value ({exc})") from None
    if task == "classification":
        T, labels = one_hot([_canonical_label(row[tcols[0]]) for row in rows], labels)
    else:
        try:
            T = np.array([[float(row[c]) for c in tcols] for row in rows]).T
        except ValueError as exc:
            raise DataError(f"{path}: non-numeric target value ({exc})") from None
        labels = None
    X = X.reshape(len(fcols), len(rows))
    return Dataset(X, T, task, labels, name or path.stem)


def load_libsvm(
    path,
    n_features: int | None = None,
    *,
    task: str = "classification",
    labels: list | None = None,
    name: str = "",
) -> Dataset:
    """Load the sparse ``label index:value ...`` format (1-based indices)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    raw_labels, entries = [], []
    max_index = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            raw_labels.append(tokens[0])
            feats = {}
            for tok in tokens[1:]:
                idx, sep, value = tok.partition(":")
                try:
                    idx, value = int(idx), float(value)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: malformed entry {tok!r}") from None
                if not sep or idx < 1:
                    raise DataError(f"{path}:{lineno}: malformed entry {tok!r}")
                if idx in feats:
                    raise DataError(f"{path}:{lineno}: duplicate feature index {idx}")
                if n_features is not None and idx > n_features:
                    raise DataError(f"{path}:{lineno}: feature index {idx} exceeds {n_features}")
                feats[idx] = value
                max_index = max(max_index, idx)
            entries.append(feats)
    if not entries:
        raise DataError(f"{path}: no samples")
    P = n_features if n_features is not None else max_index
    X = np.zeros((P, len(entries)))
    for j, feats in enumerate(entries):
        for idx, value in feats.items():
            X[idx - 1, j] = value
    if task == "classification":
        T, labels = one_hot([_canonical_label(v) for v in raw_labels], labels)
    else:
        try:
            T = np.array([[float(v) for v in raw_labels]])
        except ValueError:
            raise DataError(f"{path}: non-numeric regression target") from None
        labels = None
    return Dataset(X, T, task, labels, name or path.stem)


@dataclass(frozen=True)
class SplitSpec:
    """``mode='fixed'`` keeps given train/test sets; ``'random'`` shuffles and cuts."""

    mode: str = "fixed"
    train_count: int = 0
    test_count: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("fixed", "random"):
            raise ConfigError(f"split mode must be 'fixed' or 'random', got {self.mode!r}")
        if self.mode == "random" and (self.train_count < 1 or self.test_count < 1):
            raise ConfigError("random split needs train_count >= 1 and test_count >= 1")

    def with_seed(self, seed: int) -> "SplitSpec":
        return replace(self, seed=int(seed))


def partition(data, spec: SplitSpec):
    """Return ``(train, test)``.

    In fixed mode ``data`` must already be a ``(train, test)`` pair and is
    passed through; in random mode it is a single :class:`Dataset`.
    """
    if spec.mode == "fixed":
        if not (isinstance(data, tuple) and len(data) == 2):
            raise ConfigError("fixed split expects a (train, test) pair")
        return data
    if isinstance(data, tuple):
        data = concat(*data)
    total = data.n_samples
    if spec.train_count + spec.test_count > total:
        raise DataError(
            f"cannot draw {spec.train_count} + {spec.test_count} samples from {total}"
        )
    perm = np.random.default_rng(spec.seed).permutation(total)
    train_idx = perm[: spec.train_count]
    test_idx = perm[spec.train_count : spec.train_count + spec.test_count]
    return data.subset(train_idx), data.subset(test_idx)


def concat(a: Dataset, b: Dataset) -> Dataset:
    if a.P != b.P or a.Q != b.Q or a.task != b.task or a.labels != b.labels:
        raise DataError("datasets are not compatible")
    return replace(a, X=np.hstack([a.X, b.X]), T=np.hstack([a.T, b.T]))


class MinMaxScaler:
    """Per-feature affine map of the training range onto [-1, 1]."""

    def fit(self, X):
        X = np.asarray(X, dtype=np.float64)
        self.low_ = X.min(axis=1, keepdims=True)
        span = X.max(axis=1, keepdims=True) - self.low_
        self.span_ = np.where(span > 0, span, 1.0)
        return self

    def transform(self, X):
        return 2.0 * (np.asarray(X, dtype=np.float64) - self.low_) / self.span_ - 1.0


def _resolve(path: str, base: Path, data_dir: str | None) -> Path:
    p = Path(os.path.expanduser(path))
    if p.is_absolute():
        return p
    root = data_dir or os.environ.get(DATA_DIR_ENV)
    if root:
        candidate = Path(root) / p
        if candidate.exists() or not (base / p).exists():
            return candidate
    return base / p


@dataclass
class DataManifest:
    """Where a dataset lives and how to read and split it.

    Relative paths resolve against ``data_dir``, then ``$PLN_DATA_DIR``, then
    the manifest's own directory.
    """

    name: str
    task: str = "classification"
    format: str = "csv"
    train: Path | None = None
    test: Path | None = None
    file: Path | None = None
    delimiter: str = ","
    header: bool = False
    label_column: int | None = -1
    target_columns: list | None = None
    n_features: int | None = None
    scale: str = "none"
    split: SplitSpec = field(default_factory=SplitSpec)
    path: Path | None = None

    def _read(self, path: Path, labels=None) -> Dataset:
        if self.format == "csv":
            return load_csv(
                path,
                label_column=self.label_column if self.task == "classification" else None,
                target_columns=self.target_columns,
                delimiter=self.delimiter,
                header=self.header,
                task=self.task,
                labels=labels,
                name=self.name,
            )
        return load_libsvm(path, self.n_features, task=self.task, labels=labels, name=self.name)

    def source(self):
        """The raw data: a ``(train, test)`` pair or a single dataset."""
        if self.train is not None:
            train = self._read(self.train)
            if self.test is None:
                return train
            test = self._read(self.test)
            if self.task == "classification" and train.labels != test.labels:
                labels = _sort_labels(set(train.labels) | set(test.labels))
                train, test = self._read(self.train, labels), self._read(self.test, labels)
            return train, test
        return self._read(self.file)

    def load(self, split_seed: int | None = None):
        """Return ``(train, test)`` after partitioning and optional scaling."""
        spec = self.split if split_seed is None else self.split.with_seed(split_seed)
        train, test = partition(self.source(), spec)
        return apply_scaling(train, test, self.scale)


def apply_scaling(train: Dataset, test: Dataset, scale: str):
    if scale == "none":
        return train, test
    if scale != "minmax":
        raise ConfigError(f"unknown scaling {scale!r}")
    sc = MinMaxScaler().fit(train.X)
    return replace(train, X=sc.transform(train.X)), replace(test, X=sc.transform(test.X))


def load_manifest(path, data_dir: str | None = None) -> DataManifest:
    """Read a TOML dataset manifest."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"manifest not found: {path}")
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = path.parent
    data_dir = raw.pop("data_dir", None) or data_dir
    files = {}
    for key in ("train", "test", "file"):
        if key in raw:
            files[key] = _resolve(raw.pop(key), base, data_dir)
    for f in files.values():
        if not f.is_file():
            raise ConfigError(f"data file not found: {f}")
    split_raw = dict(raw.pop("split", {}))
    if "file" in files:
        if "train" in files or "test" in files:
            raise ConfigError(f"{path}: give either 'file' or 'train'/'test', not both")
        split_raw.setdefault("mode", "random")
    elif "train" not in files:
        raise ConfigError(f"{path}: manifest needs 'train' (and 'test') or 'file'")
    elif "test" not in files and split_raw.get("mode", "fixed") == "fixed":
        raise ConfigError(f"{path}: a fixed split needs both 'train' and 'test'")
    known = {"name", "task", "format", "delimiter", "header", "label_column",
             "target_columns", "n_features", "scale"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{path}: unknown manifest keys {sorted(unknown)}")
    raw.setdefault("name", path.stem)
    if raw.get("format", "csv") not in ("csv", "libsvm"):
        raise ConfigError(f"{path}: format must be 'csv' or 'libsvm'")
    if raw.get("task", "classification") not in TASKS:
        raise ConfigError(f"{path}: task must be one of {TASKS}")
    try:
        split = SplitSpec(**split_raw)
    except TypeError as exc:
        raise ConfigError(f"{path}: bad [split] table ({exc})") from None
    return DataManifest(split=split, path=path, **files, **raw)


@dataclass
class TrialSummary:
    """Per-trial metrics (ordered by trial index) and their mean/std."""

    trials: list
    stats: dict

    def row(self, metric: str) -> tuple:
        return self.stats[metric]


METRICS = ("train_nme_db", "test_nme_db", "test_accuracy", "train_time_s")


def _trial_seeds(root_seed: int, trials: int):
    children = np.random.SeedSequence(root_seed).spawn(trials)
    return [tuple(int(v) for v in child.generate_state(2)) for child in children]


def _run_one(args):
    from .metrics import accuracy, nme_db
    from .model import predict
    from .trainer import train

    index, manifest_or_source, spec, config, split_seed, model_seed, scale = args
    if isinstance(manifest_or_source, DataManifest):
        train_set, test_set = manifest_or_source.load(split_seed if spec.mode == "random" else None)
    else:
        train_set, test_set = partition(manifest_or_source, spec.with_seed(split_seed))
        train_set, test_set = apply_scaling(train_set, test_set, scale)
    cfg = replace(config, seed=model_seed)
    start = time.perf_counter()
    model, report = train(train_set, cfg)
    elapsed = time.perf_counter() - start
    pred = predict(model, test_set.X)
    result = {
        "trial": index,
        "split_seed": split_seed if spec.mode == "random" else None,
        "model_seed": model_seed,
        "train_nme_db": report.final_train_nme_db,
        "test_nme_db": nme_db(test_set.T, pred),
        "test_accuracy": accuracy(test_set.T, pred) if test_set.classification else None,
        "layers": model.depth,
        "widths": model.widths,
        "train_time_s": elapsed,
    }
    logger.info("trial %d: test NME %.3f dB, accuracy %s", index, result["test_nme_db"], result["test_accuracy"])
    return result


def run_trials(source, spec: SplitSpec, config, trials: int = 50, n_jobs: int = 1, scale: str = "none") -> TrialSummary:
    """Repeat train/test ``trials`` times with fresh split and model seeds.

    ``source`` is a :class:`DataManifest`, a single :class:`Dataset` (random
    split) or a ``(train, test)`` pair.  Seeds for trial ``i`` come from the
    ``i``-th child of ``config.seed``'s seed sequence, so results are
    independent of ``n_jobs``.  Standard deviations use ``ddof=0``.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if isinstance(source, DataManifest):
        spec = source.split
    jobs = [
        (i, source, spec, config, split_seed, model_seed, scale)
        for i, (split_seed, model_seed) in enumerate(_trial_seeds(config.seed, trials))
    ]
    if n_jobs == 1:
        results = [_run_one(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    stats = {}
    for metric in METRICS:
        values = [r[metric] for r in results if r[metric] is not None]
        if values:
            stats[metric] = (float(np.mean(values)), float(np.std(values)))
    return TrialSummary(results, stats)
