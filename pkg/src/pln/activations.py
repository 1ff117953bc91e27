"""Activations with the progression property and their paired transforms.

An activation ``g`` has the progression property when there are linear maps
``V`` (2N x N) and ``U`` (N x 2N) with ``U @ g(V @ gamma) == gamma`` for every
``gamma``.  For the three rectifier variants below ``V = [I; -I]`` and ``U`` is
a scaled ``[I, -I]``, so neither is ever stored densely on hot paths: ``V`` is
"stack the input over its negation" and ``U`` is "scaled difference of the two
halves".
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "ActivationSpec",
    "PPTransformPair",
    "parse_activation",
    "apply_activation",
    "pp_pair",
    "verify_pp",
]

KINDS = ("relu", "lrelu", "genrelu")
DEFAULT_LRELU_A = 0.01
DEFAULT_GENRELU_A = 0.1
DEFAULT_GENRELU_B = 1.0


@dataclass(frozen=True)
class ActivationSpec:
    """A rectifier-type activation.

    Parameters
    ----------
    kind : {'relu', 'lrelu', 'genrelu'}
    a : float, optional
        Negative-side slope (``lrelu``, ``genrelu``).  Defaults to 0.01 for
        lrelu and 0.1 for genrelu.
    b : float, optional
        Positive-side slope (``genrelu`` only, default 1.0).
    """

    kind: str = "relu"
    a: float | None = None
    b: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown activation kind {self.kind!r}; expected one of {KINDS}")
        a = self.a if self.a is not None else (DEFAULT_LRELU_A if self.kind == "lrelu" else DEFAULT_GENRELU_A)
        b = self.b if self.b is not None else DEFAULT_GENRELU_B
        a, b = float(a), float(b)
        if not (np.isfinite(a) and np.isfinite(b)):
            raise ConfigError("activation parameters must be finite")
        if self.kind == "relu":
            a, b = 0.0, 1.0
        elif self.kind == "lrelu":
            if not 0.0 < a < 1.0:
                raise ConfigError(f"lrelu requires 0 < a < 1, got a={a}")
            b = 1.0
        else:
            if not 0.0 < a < b:
                raise ConfigError(f"genrelu requires 0 < a < b, got a={a}, b={b}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def relu(cls) -> "ActivationSpec":
        return cls("relu")

    @classmethod
    def lrelu(cls, a: float = DEFAULT_LRELU_A) -> "ActivationSpec":
        return cls("lrelu", a=a)

    @classmethod
    def genrelu(cls, a: float = DEFAULT_GENRELU_A, b: float = DEFAULT_GENRELU_B) -> "ActivationSpec":
        return cls("genrelu", a=a, b=b)

    @property
    def u_scale(self) -> float:
        """Scalar ``c`` in ``U = c [I, -I]``."""
        if self.kind == "relu":
            return 1.0
        if self.kind == "lrelu":
            return 1.0 / (1.0 + self.a)
        return 1.0 / (self.a + self.b)

    def __str__(self) -> str:
        if self.kind == "relu":
            return "relu"
        if self.kind == "lrelu":
            return f"lrelu:a={self.a!r}"
        return f"genrelu:a={self.a!r},b={self.b!r}"

    def __call__(self, z):
        return apply_activation(self, z)


def parse_activation(text: str) -> ActivationSpec:
    """Parse ``"relu"``, ``"lrelu:a=0.01"`` or ``"genrelu:a=0.1,b=1.0"``.

    Omitted parameters take the defaults (``a=0.01`` for lrelu,
    ``a=0.1, b=1.0`` for genrelu).
    """
    if isinstance(text, ActivationSpec):
        return text
    kind, _, rest = str(text).strip().partition(":")
    kind = kind.strip().lower()
    params = {}
    if rest.strip():
        for item in rest.split(","):
            key, eq, value = item.partition("=")
            key = key.strip().lower()
            if not eq or key not in ("a", "b"):
                raise ConfigError(f"malformed activation parameter {item!r} in {text!r}")
            try:
                params[key] = float(value)
            except ValueError:
                raise ConfigError(f"non-numeric activation parameter {item!r}") from None
    if kind == "relu":
        if params:
            raise ConfigError("relu takes no parameters")
        return ActivationSpec.relu()
    if kind == "lrelu":
        if "b" in params:
            raise ConfigError("lrelu takes only parameter a")
        return ActivationSpec.lrelu(params.get("a", DEFAULT_LRELU_A))
    if kind == "genrelu":
        return ActivationSpec.genrelu(
            params.get("a", DEFAULT_GENRELU_A), params.get("b", DEFAULT_GENRELU_B)
        )
    raise ConfigError(f"unknown activation {text!r}")


def apply_activation(spec: ActivationSpec, z) -> np.ndarray:
    """Apply the scalar nonlinearity elementwise."""
    z = np.asarray(z, dtype=np.float64)
    if spec.kind == "relu":
        return np.maximum(z, 0.0)
    if spec.kind == "lrelu":
        return np.where(z >= 0.0, z, spec.a * z)
    return np.where(z >= 0.0, spec.b * z, spec.a * z)


@dataclass(frozen=True)
class PPTransformPair:
    """Structured ``(V_N, U_N)`` pair acting on column-stacked signals."""

    n: int
    scale: float

    def split(self, gamma) -> np.ndarray:
        """``V_N @ gamma``: stack the input over its negation."""
        gamma = np.asarray(gamma, dtype=np.float64)
        return np.concatenate([gamma, -gamma], axis=0)

    def merge(self, y) -> np.ndarray:
        """``U_N @ y``: scaled difference of the upper and lower halves."""
        y = np.asarray(y, dtype=np.float64)
        return self.scale * (y[: self.n] - y[self.n : 2 * self.n])

    @property
    def V(self) -> np.ndarray:
        eye = np.eye(self.n)
        return np.vstack([eye, -eye])

    @property
    def U(self) -> np.ndarray:
        eye = np.eye(self.n)
        return self.scale * np.hstack([eye, -eye])

    def u_norm(self, q: int) -> float:
        """Entrywise ``q``-norm of ``U_N`` (``2N`` nonzeros of size ``scale``)."""
        return self.scale * (2 * self.n) ** (1.0 / q)


def pp_pair(spec: ActivationSpec, n: int) -> PPTransformPair:
    if int(n) != n or n < 1:
        raise ConfigError(f"N must be a positive integer, got {n}")
    return PPTransformPair(int(n), spec.u_scale)


def verify_pp(spec: ActivationSpec, n: int, trials: int, seed: int = 0, bound: float = 1.0) -> float:
    """Largest ``||U g(V gamma) - gamma||_inf`` over random ``gamma``.

    ``gamma`` entries are drawn uniformly from ``[-bound, bound]``.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    pair = pp_pair(spec, n)
    rng = np.random.default_rng(seed)
    gammas = rng.uniform(-bound, bound, size=(pair.n, int(trials)))
    restored = pair.merge(apply_activation(spec, pair.split(gammas)))
    return float(np.max(np.abs(restored - gammas)))
