"""Progressive growth of a network: width first, then depth.

Training starts from the regularized linear map.  Each new layer begins with
``2Q + delta`` nodes and gains ``delta`` random nodes at a time while the
relative NME improvement stays above ``eta_n``; layers are added while the
improvement across layers stays above ``eta_l``.  Every output matrix is the
better of the ADMM solution and the feasible pass-through ``[U_Q, 0]``, which
reproduces the previous stage's prediction, so accepted training costs never
increase.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .activations import ActivationSpec, parse_activation, pp_pair
from .data import Dataset
from .errors import ConfigError, DataError
from .metrics import accuracy, improvement_ratio, nme_db, squared_error
from .model import PlnModel, build_layer, count_parameters, extend_layer, layer_output, predict
from .solvers import ITERATES, AdmmSettings, solve_constrained_ls, solve_ridge

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = [
    "TrainConfig",
    "GrowthStep",
    "TrainReport",
    "OutputFit",
    "fit_linear_baseline",
    "optimize_output_matrix",
    "grow_width",
    "grow_depth",
    "train",
    "load_config",
]

logger = logging.getLogger(__name__)

COST_TOL = 1e-9
REASONS = ("accepted", "node_gain_below_eta_n", "layer_gain_below_eta_l", "hit_n_max", "hit_l_max")


@dataclass(frozen=True)
class TrainConfig:
    """All tunables of a training run.

    Defaults follow the classification settings used for every benchmark in
    the original experiments, except ``lambda_ls`` which is data dependent.
    ``initial_width`` defaults to ``2Q + delta``.
    """

    lambda_ls: float = 1.0
    mu: float = 1e3
    k_max: int = 100
    alpha: float = 2.0
    delta: int = 50
    eta_n: float = 0.005
    eta_l: float = 0.1
    n_max: int = 1000
    l_max: int = 100
    q: int = 2
    p: int = 2
    seed: int = 0
    validation_fraction: float = 0.0
    activation: str = "relu"
    normalize_random: bool = True
    admm_tol: float = 1e-6
    admm_iterate: str = "projected"
    initial_width: int | None = None

    def __post_init__(self):
        checks = [
            (self.lambda_ls >= 0, "lambda_ls must be >= 0"),
            (self.mu > 0, "mu must be > 0"),
            (int(self.k_max) == self.k_max and self.k_max >= 1, "k_max must be a positive integer"),
            (self.alpha >= 1, "alpha must be >= 1 so the pass-through output matrix stays feasible"),
            (int(self.delta) == self.delta and self.delta >= 1, "delta must be a positive integer"),
            (self.eta_n > 0, "eta_n must be > 0"),
            (self.eta_l > 0, "eta_l must be > 0"),
            (int(self.n_max) == self.n_max and self.n_max >= 1, "n_max must be a positive integer"),
            (int(self.l_max) == self.l_max and self.l_max >= 0, "l_max must be a nonnegative integer"),
            (self.q in (1, 2), "q must be 1 or 2"),
            (self.p == 2, "only p = 2 is supported"),
            (int(self.seed) == self.seed and self.seed >= 0, "seed must be a nonnegative integer"),
            (0 <= self.validation_fraction < 1, "validation_fraction must be in [0, 1)"),
            (self.admm_tol >= 0, "admm_tol must be >= 0"),
            (self.initial_width is None or self.initial_width >= 1, "initial_width must be positive"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        parse_activation(self.activation)
        if self.admm_iterate not in ITERATES:
            raise ConfigError(f"admm_iterate must be one of {ITERATES}, got {self.admm_iterate!r}")

    @property
    def activation_spec(self) -> ActivationSpec:
        return parse_activation(self.activation)

    @property
    def admm(self) -> AdmmSettings:
        return AdmmSettings(mu=self.mu, k_max=int(self.k_max), tol=self.admm_tol, iterate=self.admm_iterate)

    def check_targets(self, Q: int) -> None:
        if self.n_max < 2 * Q:
            raise ConfigError(f"n_max={self.n_max} is below 2Q={2 * Q}")
        if self.initial_width is not None and self.initial_width < 2 * Q:
            raise ConfigError(f"initial_width={self.initial_width} is below 2Q={2 * Q}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(values) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**values)


def load_config(path, **overrides) -> TrainConfig:
    """Read a TOML config file; keyword overrides that are not None win."""
    values = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path, "rb") as fh:
                values = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(values)


@dataclass
class GrowthStep:
    """One decision of the growth controller.

    ``event`` is ``'baseline'``, ``'node'`` (a width candidate) or ``'layer'``
    (the verdict on a whole layer).
    """

    event: str
    layer_index: int
    n_nodes_after: int
    train_cost: float
    train_nme_db: float
    accepted: bool
    reason: str
    validation_nme_db: float | None = None
    train_accuracy: float | None = None
    validation_accuracy: float | None = None
    used_pp_fallback: bool = False
    admm_iterations: int = 0
    elapsed_s: float = 0.0

    def record(self, timing: bool = False) -> dict:
        out = asdict(self)
        if not timing:
            del out["elapsed_s"]
        return out


@dataclass
class TrainReport:
    steps: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    P: int = 0
    Q: int = 0
    baseline_train_nme_db: float = 0.0
    baseline_train_cost: float = 0.0
    final_train_nme_db: float = 0.0
    final_train_cost: float = 0.0
    final_train_accuracy: float | None = None
    final_validation_nme_db: float | None = None
    final_validation_accuracy: float | None = None
    widths: list = field(default_factory=list)
    n_parameters: int = 0
    train_time_s: float = 0.0

    def accepted_steps(self) -> list:
        return [s for s in self.steps if s.accepted]

    def summary(self, timing: bool = False) -> dict:
        out = {k: v for k, v in asdict(self).items() if k not in ("steps", "config")}
        if not timing:
            del out["train_time_s"]
        return out

    def records(self, timing: bool = False) -> list:
        """Line records: the config, every step, then the summary."""
        out = [{"record": "config", **self.config}]
        out += [{"record": "step", **s.record(timing)} for s in self.steps]
        out.append({"record": "summary", **self.summary(timing)})
        return out


class OutputFit(NamedTuple):
    O: np.ndarray
    cost: float
    used_pp_fallback: bool
    iterations: int


def fit_linear_baseline(data: Dataset, config: TrainConfig):
    """Regularized linear map and its training cost ``sum ||t - W x||^2``."""
    if data.n_samples < 1:
        raise DataError("empty dataset")
    W = solve_ridge(data.X, data.T, config.lambda_ls)
    return W, squared_error(data.T, W @ data.X)


def pp_output_matrix(activation: ActivationSpec, Q: int, n: int) -> np.ndarray:
    """``[U_Q, 0]``: reproduces the previous prediction through the top 2Q nodes."""
    c = activation.u_scale
    O = np.zeros((Q, n))
    O[:, :Q] = c * np.eye(Q)
    O[:, Q : 2 * Q] = -c * np.eye(Q)
    return O


def output_radius(config: TrainConfig, activation: ActivationSpec, Q: int) -> float:
    return config.alpha ** (1.0 / config.q) * pp_pair(activation, Q).u_norm(config.q)


def optimize_output_matrix(Y, T, config: TrainConfig, activation: ActivationSpec | None = None,
                           extra_candidates=(), warm_start=None) -> OutputFit:
    """Constrained least-squares output matrix for layer signals ``Y``.

    The ADMM solution competes with ``[U_Q, 0]`` and any ``extra_candidates``
    (each must be feasible); the lowest training cost wins.
    """
    Y = np.asarray(Y, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    activation = activation or config.activation_spec
    Q, n = T.shape[0], Y.shape[0]
    if Y.shape[1] != T.shape[1]:
        raise DataError(f"Y has {Y.shape[1]} samples but T has {T.shape[1]}")
    if n < 2 * Q:
        raise ConfigError(f"layer has {n} nodes, needs at least 2Q={2 * Q}")
    eps = output_radius(config, activation, Q)
    res = solve_constrained_ls(Y, T, eps, config.q, config.admm, warm_start=warm_start)
    best = OutputFit(res.O, squared_error(T, res.O @ Y), False, res.iterations)
    candidates = [pp_output_matrix(activation, Q, n), *extra_candidates]
    for i, O in enumerate(candidates):
        cost = squared_error(T, O @ Y)
        if cost < best.cost:
            best = OutputFit(O, cost, i == 0, res.iterations)
    return best


def _layer_stream(seed: int, layer_index: int, offset: int) -> np.random.Generator:
    """Generator for the random rows of ``layer_index`` starting at row ``offset``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, layer_index, offset)))


@dataclass
class _Signals:
    """Inputs to the layer being grown, for the fit set and the decision set."""

    train: np.ndarray
    val: np.ndarray | None


class _Controller:
    def __init__(self, model: PlnModel, data: Dataset, config: TrainConfig,
                 validation: Dataset | None, start: float):
        self.model = model
        self.data = data
        self.config = config
        self.validation = validation
        self.start = start
        self.activation = model.activation

    def _evaluate(self, O, Y, Yv):
        pred = O @ Y
        m = {
            "train_cost": squared_error(self.data.T, pred),
            "train_nme_db": nme_db(self.data.T, pred),
            "train_accuracy": accuracy(self.data.T, pred) if self.data.classification else None,
            "validation_nme_db": None,
            "validation_accuracy": None,
        }
        if self.validation is not None:
            vpred = O @ Yv
            m["validation_nme_db"] = nme_db(self.validation.T, vpred)
            if self.validation.classification:
                m["validation_accuracy"] = accuracy(self.validation.T, vpred)
        return m

    @staticmethod
    def decision_nme(m) -> float:
        v = m["validation_nme_db"]
        return m["train_nme_db"] if v is None else v

    def _step(self, event, layer_index, n_nodes, m, accepted, reason, fit=None) -> GrowthStep:
        return GrowthStep(
            event=event,
            layer_index=layer_index,
            n_nodes_after=n_nodes,
            accepted=accepted,
            reason=reason,
            used_pp_fallback=bool(fit.used_pp_fallback) if fit else False,
            admm_iterations=fit.iterations if fit else 0,
            elapsed_s=time.perf_counter() - self.start,
            **m,
        )

    def fit_layer(self, layer, sig: _Signals, extra=()):
        Y = layer_output(layer, sig.train, self.activation)[1]
        Yv = layer_output(layer, sig.val, self.activation)[1] if sig.val is not None else None
        fit = optimize_output_matrix(Y, self.data.T, self.config, self.activation, extra)
        layer.output_matrix = fit.O
        return fit, self._evaluate(fit.O, Y, Yv)

    def grow_width(self, layer, layer_index: int, sig: _Signals):
        cfg = self.config
        steps = []
        fit, m = self.fit_layer(layer, sig)
        steps.append(self._step("node", layer_index, layer.n_nodes, m, True, "accepted", fit))
        logger.debug("layer %d: %d nodes, train NME %.4f dB", layer_index, layer.n_nodes, m["train_nme_db"])
        while True:
            if layer.n_nodes + cfg.delta > cfg.n_max:
                steps.append(self._step("node", layer_index, layer.n_nodes, m, False, "hit_n_max"))
                break
            rng = _layer_stream(cfg.seed, layer_index, layer.n_random)
            candidate = extend_layer(layer, cfg.delta, rng)
            padded = np.hstack([layer.output_matrix, np.zeros((layer.Q, cfg.delta))])
            cfit, cm = self.fit_layer(candidate, sig, extra=(padded,))
            gain = _ratio(self.decision_nme(m), self.decision_nme(cm))
            if gain >= cfg.eta_n and cm["train_cost"] <= m["train_cost"] + COST_TOL:
                layer, fit, m = candidate, cfit, cm
                steps.append(self._step("node", layer_index, layer.n_nodes, m, True, "accepted", fit))
                logger.debug("layer %d: %d nodes, train NME %.4f dB", layer_index, layer.n_nodes, m["train_nme_db"])
            else:
                steps.append(self._step("node", layer_index, candidate.n_nodes, cm, False,
                                        "node_gain_below_eta_n", cfit))
                break
        return layer, m, steps

    def signals(self, depth: int) -> _Signals:
        def run(X):
            signal = X
            for layer in self.model.layers[:depth]:
                signal = layer_output(layer, signal, self.activation)[1]
            return signal

        return _Signals(run(self.data.X), run(self.validation.X) if self.validation is not None else None)

    def current_metrics(self):
        sig = self.signals(self.model.depth)
        return self._evaluate(self.model.output_map(), sig.train, sig.val), sig

    def grow_depth(self):
        cfg, model = self.config, self.model
        Q = model.Q
        steps = []
        m, sig = self.current_metrics()
        while True:
            li = model.depth
            if li >= cfg.l_max:
                steps.append(self._step("layer", li, 0, m, False, "hit_l_max"))
                break
            width = min(cfg.initial_width or 2 * Q + cfg.delta, cfg.n_max)
            layer = build_layer(model.output_map(), width, Q, _layer_stream(cfg.seed, li, 0),
                                cfg.normalize_random)
            layer, lm, wsteps = self.grow_width(layer, li, sig)
            steps.extend(wsteps)
            gain = _ratio(self.decision_nme(m), self.decision_nme(lm))
            if gain >= cfg.eta_l and lm["train_cost"] <= m["train_cost"] + COST_TOL:
                model.layers.append(layer)
                steps.append(self._step("layer", li, layer.n_nodes, lm, True, "accepted"))
                logger.info("layer %d accepted: %d nodes, train NME %.4f dB", li, layer.n_nodes, lm["train_nme_db"])
                sig = _Signals(
                    layer_output(layer, sig.train, self.activation)[1],
                    layer_output(layer, sig.val, self.activation)[1] if sig.val is not None else None,
                )
                m = lm
            else:
                for s in wsteps:
                    if s.accepted:
                        s.accepted, s.reason = False, "layer_gain_below_eta_l"
                steps.append(self._step("layer", li, layer.n_nodes, lm, False, "layer_gain_below_eta_l"))
                logger.info("layer %d rejected: gain %.4g below eta_l", li, gain)
                break
        return model, steps


def _ratio(old: float, new: float) -> float:
    # a 0 dB reference (zero prediction) falls back to the plain difference
    if old == 0.0:
        return old - new
    return improvement_ratio(old, new)


def _split_validation(data: Dataset, config: TrainConfig):
    if config.validation_fraction == 0:
        return data, None
    J = data.n_samples
    n_val = int(round(config.validation_fraction * J))
    if n_val < 1 or n_val >= J:
        raise ConfigError(f"validation_fraction={config.validation_fraction} leaves no usable split of {J} samples")
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(0,)))
    perm = rng.permutation(J)
    return data.subset(np.sort(perm[n_val:])), data.subset(np.sort(perm[:n_val]))


def _new_model(data: Dataset, config: TrainConfig, W) -> PlnModel:
    return PlnModel(
        activation=config.activation_spec,
        w_ls=W,
        layers=[],
        seed=int(config.seed),
        q=config.q,
        alpha=float(config.alpha),
        task=data.task,
        labels=data.labels,
        constrained=config.admm_iterate == "projected",
    )


def grow_width(model: PlnModel, layer_index: int, data: Dataset, config: TrainConfig,
               validation: Dataset | None = None):
    """Re-optimize and widen ``model.layers[layer_index]`` in place of the original.

    Returns the updated model and the node-level growth steps.
    """
    if not 0 <= layer_index < model.depth:
        raise ConfigError(f"no layer {layer_index} in a model of depth {model.depth}")
    config.check_targets(model.Q)
    ctl = _Controller(model, data, config, validation, time.perf_counter())
    sig = ctl.signals(layer_index)
    layer, _, steps = ctl.grow_width(model.layers[layer_index], layer_index, sig)
    model.layers[layer_index] = layer
    del model.layers[layer_index + 1 :]
    return model, steps


def grow_depth(model: PlnModel, data: Dataset, config: TrainConfig, validation: Dataset | None = None):
    """Add layers on top of ``model`` until the layer gain or ``l_max`` stops it."""
    config.check_targets(model.Q)
    return _Controller(model, data, config, validation, time.perf_counter()).grow_depth()


def train(data: Dataset, config: TrainConfig):
    """Fit the baseline map, then grow layers.  Returns ``(model, report)``."""
    config.check_targets(data.Q)
    start = time.perf_counter()
    fit_set, val_set = _split_validation(data, config)
    W, c_ls = fit_linear_baseline(fit_set, config)
    model = _new_model(fit_set, config, W)
    ctl = _Controller(model, fit_set, config, val_set, start)
    m0, _ = ctl.current_metrics()
    steps = [ctl._step("baseline", -1, 0, m0, True, "accepted")]
    model, more = ctl.grow_depth()
    steps.extend(more)
    elapsed = time.perf_counter() - start

    pred = predict(model, fit_set.X)
    report = TrainReport(
        steps=steps,
        config=config.to_dict(),
        P=model.P,
        Q=model.Q,
        baseline_train_nme_db=m0["train_nme_db"],
        baseline_train_cost=c_ls,
        final_train_nme_db=nme_db(fit_set.T, pred),
        final_train_cost=squared_error(fit_set.T, pred),
        final_train_accuracy=accuracy(fit_set.T, pred) if fit_set.classification else None,
        widths=model.widths,
        n_parameters=count_parameters(model),
        train_time_s=elapsed,
    )
    if val_set is not None:
        vpred = predict(model, val_set.X)
        report.final_validation_nme_db = nme_db(val_set.T, vpred)
        if val_set.classification:
            report.final_validation_accuracy = accuracy(val_set.T, vpred)
    return model, report
