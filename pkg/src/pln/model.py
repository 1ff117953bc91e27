"""Network structure, forward pass and model files.

Layer ``i`` maps its input ``u`` (``x`` for the first layer, ``y_{i-1}``
otherwise) to ``z_i = [s_i; -s_i; R_i u]`` where ``s_i = prev_map @ u`` is the
previous stage's prediction, then ``y_i = g(z_i)``.  ``prev_map`` is the
baseline linear map for the first layer and the previous layer's output
matrix afterwards.  Only ``R_i`` is random; only the output matrices and the
baseline map are learned.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .activations import ActivationSpec, apply_activation, parse_activation, pp_pair
from .errors import ConfigError, DataError, ModelFormatError

__all__ = [
    "PlnLayer",
    "PlnModel",
    "ForwardTrace",
    "build_layer",
    "extend_layer",
    "layer_output",
    "forward",
    "predict",
    "count_parameters",
    "serialize",
    "deserialize",
    "save_model",
    "load_model",
    "model_summary",
]

MAGIC = b"PLN1"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sHI")
_CRC = struct.Struct("<I")
_F8 = np.dtype("<f8")


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass
class PlnLayer:
    """One layer: deterministic block driven by ``prev_map`` over a random block."""

    prev_map: np.ndarray
    random_block: np.ndarray
    output_matrix: np.ndarray | None = None
    normalize_random: bool = False

    @property
    def Q(self) -> int:
        return self.prev_map.shape[0]

    @property
    def input_dim(self) -> int:
        return self.prev_map.shape[1]

    @property
    def n_random(self) -> int:
        return self.random_block.shape[0]

    @property
    def n_nodes(self) -> int:
        return 2 * self.Q + self.n_random

    @property
    def top_map(self) -> np.ndarray:
        return np.vstack([self.prev_map, -self.prev_map])

    @property
    def weight_matrix(self) -> np.ndarray:
        return np.vstack([self.top_map, self.random_block])

    @property
    def optimized(self) -> bool:
        return self.output_matrix is not None


def build_layer(prev_map, n_nodes: int, Q: int, rng_seed=None, normalize_random: bool = False) -> PlnLayer:
    """New layer with ``n_nodes - 2Q`` random nodes drawn uniformly on [-1, 1].

    ``rng_seed`` may be an integer seed or a ``numpy.random.Generator``; in the
    latter case the draws continue that generator's stream.
    """
    prev_map = np.asarray(prev_map, dtype=np.float64)
    if prev_map.ndim != 2 or prev_map.shape[0] != Q:
        raise DataError(f"previous map must have {Q} rows, got shape {prev_map.shape}")
    if n_nodes < 2 * Q:
        raise ConfigError(f"a layer needs at least 2Q={2 * Q} nodes, got {n_nodes}")
    R = _rng(rng_seed).uniform(-1.0, 1.0, size=(n_nodes - 2 * Q, prev_map.shape[1]))
    return PlnLayer(prev_map, R, None, bool(normalize_random))


def extend_layer(layer: PlnLayer, delta: int, rng_seed=None) -> PlnLayer:
    """Copy of ``layer`` with ``delta`` more random rows appended at the bottom.

    The output matrix is dropped and must be re-optimized.
    """
    if int(delta) != delta or delta < 1:
        raise ConfigError(f"delta must be a positive integer, got {delta}")
    extra = _rng(rng_seed).uniform(-1.0, 1.0, size=(int(delta), layer.input_dim))
    return replace(layer, random_block=np.vstack([layer.random_block, extra]), output_matrix=None)


def layer_output(layer: PlnLayer, inputs: np.ndarray, activation: ActivationSpec):
    """Return ``(z, y, s)`` for a column-stacked input batch."""
    s = layer.prev_map @ inputs
    z = np.vstack([s, -s, layer.random_block @ inputs])
    y = apply_activation(activation, z)
    if layer.normalize_random and layer.n_random:
        rand = y[2 * layer.Q :]
        norms = np.linalg.norm(rand, axis=0)
        nz = norms > 0.0
        rand[:, nz] /= norms[nz]
    return z, y, s


@dataclass
class ForwardTrace:
    z: list = field(default_factory=list)
    y: list = field(default_factory=list)
    s: list = field(default_factory=list)


@dataclass
class PlnModel:
    """Baseline linear map plus an ordered list of layers."""

    activation: ActivationSpec
    w_ls: np.ndarray
    layers: list = field(default_factory=list)
    seed: int = 0
    q: int = 2
    alpha: float = 2.0
    task: str = "classification"
    labels: list | None = None
    constrained: bool = True

    @property
    def P(self) -> int:
        return self.w_ls.shape[1]

    @property
    def Q(self) -> int:
        return self.w_ls.shape[0]

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def widths(self) -> list:
        return [layer.n_nodes for layer in self.layers]

    def output_map(self, depth: int | None = None) -> np.ndarray:
        """Map producing the prediction at ``depth`` from that stage's signal."""
        depth = self.depth if depth is None else depth
        return self.w_ls if depth == 0 else self.layers[depth - 1].output_matrix

    def epsilon(self) -> float:
        """Radius of the output-matrix constraint, ``alpha^(1/q) ||U_Q||_q``."""
        return self.alpha ** (1.0 / self.q) * pp_pair(self.activation, self.Q).u_norm(self.q)

    def check_constraints(self, rtol: float = 1e-12) -> None:
        """Raise if an output matrix leaves the norm ball (constrained models only)."""
        if not self.constrained:
            return
        eps = self.epsilon()
        for i, layer in enumerate(self.layers):
            if layer.optimized:
                norm = np.linalg.norm(layer.output_matrix.ravel(), ord=self.q)
                if norm > eps * (1.0 + rtol):
                    raise ModelFormatError(
                        f"layer {i} output matrix norm {norm:.6g} exceeds constraint {eps:.6g}"
                    )


def forward(model: PlnModel, X, depth: int | None = None, keep_trace: bool = True):
    """Predictions (Q x J) at ``depth`` layers plus the per-layer signals."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != model.P:
        raise DataError(f"input must have {model.P} rows, got shape {X.shape}")
    depth = model.depth if depth is None else int(depth)
    if not 0 <= depth <= model.depth:
        raise ConfigError(f"depth must be in [0, {model.depth}], got {depth}")
    trace = ForwardTrace()
    signal = X
    for layer in model.layers[:depth]:
        if not layer.optimized:
            raise ConfigError("forward pass reached a layer without an output matrix")
        z, y, s = layer_output(layer, signal, model.activation)
        if keep_trace:
            trace.z.append(z)
            trace.y.append(y)
            trace.s.append(s)
        signal = y
    return model.output_map(depth) @ signal, trace


def predict(model: PlnModel, X, depth: int | None = None) -> np.ndarray:
    return forward(model, X, depth, keep_trace=False)[0]


def count_parameters(model: PlnModel) -> int:
    """Learned parameters: the baseline map and every output matrix."""
    return model.Q * model.P + sum(model.Q * layer.n_nodes for layer in model.layers)


def _header(model: PlnModel) -> dict:
    return {
        "P": model.P,
        "Q": model.Q,
        "activation": str(model.activation),
        "q": model.q,
        "alpha": model.alpha,
        "seed": model.seed,
        "task": model.task,
        "labels": model.labels,
        "constrained": model.constrained,
        "layers": [
            {
                "n_nodes": layer.n_nodes,
                "input_dim": layer.input_dim,
                "normalize_random": layer.normalize_random,
                "optimized": layer.optimized,
            }
            for layer in model.layers
        ],
    }


def serialize(model: PlnModel) -> bytes:
    """Encode ``model`` in the versioned binary model format.

    Layout: ``b"PLN1"``, uint16 version, uint32 header length, UTF-8 JSON
    header, then float64 little-endian row-major matrices (baseline map, then
    per layer its random block and output matrix), then a CRC32 of everything
    before it.
    """
    header = json.dumps(_header(model), sort_keys=True, separators=(",", ":")).encode()
    parts = [_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)), header]
    parts.append(np.ascontiguousarray(model.w_ls, dtype=_F8).tobytes())
    for layer in model.layers:
        parts.append(np.ascontiguousarray(layer.random_block, dtype=_F8).tobytes())
        if layer.optimized:
            parts.append(np.ascontiguousarray(layer.output_matrix, dtype=_F8).tobytes())
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body))


def deserialize(data: bytes, check: bool = True) -> PlnModel:
    data = bytes(data)
    if len(data) < _PREFIX.size + _CRC.size:
        raise ModelFormatError("model stream is truncated")
    magic, version, hlen = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic bytes {magic!r}; not a model file")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    body, (crc,) = data[: -_CRC.size], _CRC.unpack_from(data, len(data) - _CRC.size)
    if zlib.crc32(body) != crc:
        raise ModelFormatError("model stream is corrupted or truncated (checksum mismatch)")
    offset = _PREFIX.size
    try:
        header = json.loads(body[offset : offset + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"unreadable model header: {exc}") from None
    offset += hlen

    def take(rows, cols):
        nonlocal offset
        size = rows * cols * 8
        if offset + size > len(body):
            raise ModelFormatError("model stream is truncated")
        arr = np.frombuffer(body, dtype=_F8, count=rows * cols, offset=offset)
        offset += size
        return arr.reshape(rows, cols).astype(np.float64)

    P, Q = header["P"], header["Q"]
    w_ls = take(Q, P)
    layers = []
    prev_map = w_ls
    for i, spec in enumerate(header["layers"]):
        if prev_map is None:
            raise ModelFormatError(f"layer {i} follows a layer without an output matrix")
        d = spec["input_dim"]
        R = take(spec["n_nodes"] - 2 * Q, d)
        O = take(Q, spec["n_nodes"]) if spec["optimized"] else None
        layers.append(PlnLayer(prev_map, R, O, spec["normalize_random"]))
        prev_map = O
    if offset != len(body):
        raise ModelFormatError("model stream has trailing data")
    model = PlnModel(
        activation=parse_activation(header["activation"]),
        w_ls=w_ls,
        layers=layers,
        seed=header["seed"],
        q=header["q"],
        alpha=header["alpha"],
        task=header["task"],
        labels=header["labels"],
        constrained=header.get("constrained", True),
    )
    if check:
        model.check_constraints()
    return model


def save_model(model: PlnModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(model))


def load_model(path) -> PlnModel:
    with open(path, "rb") as fh:
        return deserialize(fh.read())


def model_summary(model: PlnModel) -> dict:
    """Dimensions and norms only, for human inspection."""
    return {
        "P": model.P,
        "Q": model.Q,
        "activation": str(model.activation),
        "q": model.q,
        "alpha": model.alpha,
        "epsilon": model.epsilon(),
        "seed": model.seed,
        "task": model.task,
        "constrained": model.constrained,
        "parameters": count_parameters(model),
        "w_ls_fro": float(np.linalg.norm(model.w_ls)),
        "layers": [
            {
                "n_nodes": layer.n_nodes,
                "n_random": layer.n_random,
                "input_dim": layer.input_dim,
                "random_block_fro": float(np.linalg.norm(layer.random_block)),
                "output_matrix_norm": (
                    float(np.linalg.norm(layer.output_matrix.ravel(), ord=model.q))
                    if layer.optimized else None
                ),
            }
            for layer in model.layers
        ],
    }
