"""Convex solvers for the per-layer least-squares problems.

Two problems show up when a network is built layer by layer:

* Tikhonov-regularized least squares for the linear baseline map,
  ``min_W ||T - W X||_F^2 + lam ||W||_F^2`` (closed form).
* Norm-ball constrained least squares for every output matrix,
  ``min_O 1/2 ||T - O Y||_F^2  s.t.  ||O||_q <= eps``, solved with ADMM using a
  Gram factorization computed once per problem.

Samples are stored as columns throughout: ``X`` is ``P x J``, ``Y`` is
``n x J`` and ``T`` is ``Q x J``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .errors import ConfigError, DataError, NumericalError

__all__ = [
    "AdmmSettings",
    "AdmmResult",
    "GramInverse",
    "solve_ridge",
    "project_ball",
    "precompute_gram_inverse",
    "solve_constrained_ls",
    "ls_objective",
]

logger = logging.getLogger(__name__)

ITERATES = ("projected", "primal")


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DataError(f"{name} must be a 2-D matrix, got shape {a.shape}")
    return a


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError("input contains non-finite entries")


def solve_ridge(X, T, lam: float = 0.0) -> np.ndarray:
    """Regularized least-squares map ``W`` (Q x P) from inputs to targets.

    Minimizes ``sum_j ||t_j - W x_j||^2 + lam ||W||_F^2``.  With ``lam == 0``
    and a rank-deficient ``X`` the minimum-norm solution is returned.
    """
    X = _as_matrix(X, "X")
    T = _as_matrix(T, "T")
    if X.shape[1] != T.shape[1]:
        raise DataError(f"X has {X.shape[1]} samples but T has {T.shape[1]}")
    if X.shape[1] < 1:
        raise DataError("at least one sample is required")
    lam = float(lam)
    if not lam >= 0.0:
        raise ConfigError(f"lambda must be nonnegative, got {lam}")
    _check_finite(X, T)
    P, J = X.shape
    if lam == 0.0:
        W, *_ = linalg.lstsq(X.T, T.T, lapack_driver="gelsd")
        return W.T.copy()
    if P <= J:
        A = X @ X.T
        A[np.diag_indices_from(A)] += lam
        return linalg.solve(A, X @ T.T, assume_a="pos").T
    # dual form: W = T (X^T X + lam I)^-1 X^T
    B = X.T @ X
    B[np.diag_indices_from(B)] += lam
    return linalg.solve(B, T.T, assume_a="pos").T @ X.T


def project_ball(M, q: int, epsilon: float) -> np.ndarray:
    """Euclidean projection of ``M`` onto ``{Z : ||vec(Z)||_q <= epsilon}``.

    ``q=2`` rescales radially; ``q=1`` uses the sort-based simplex projection
    on the magnitudes.
    """
    M = np.asarray(M, dtype=np.float64)
    epsilon = float(epsilon)
    if not epsilon > 0.0:
        raise ConfigError(f"ball radius must be positive, got {epsilon}")
    if q == 2:
        norm = np.linalg.norm(M)
        if norm <= epsilon:
            return M.copy()
        out = M * (epsilon / norm)
        # one more radial step absorbs rounding so the result is always feasible
        norm = np.linalg.norm(out)
        return out * (epsilon / norm) if norm > epsilon else out
    if q == 1:
        mag = np.abs(M).ravel()
        if mag.sum() <= epsilon:
            return M.copy()
        u = np.sort(mag)[::-1]
        css = np.cumsum(u)
        idx = np.arange(1, u.size + 1)
        rho = np.nonzero(u - (css - epsilon) / idx > 0)[0][-1]
        theta = (css[rho] - epsilon) / (rho + 1.0)
        out = np.sign(M) * np.maximum(np.abs(M) - theta, 0.0)
        total = np.abs(out).sum()
        return out * (epsilon / total) if total > epsilon else out
    raise ConfigError(f"norm order q must be 1 or 2, got {q}")


class GramInverse:
    """Reusable factorization of ``Y Y^T + shift I`` with ``shift = 1/mu``.

    When ``Y`` has more rows than columns the Woodbury identity is used so the
    factored system is ``J x J`` instead of ``n x n``.
    """

    def __init__(self, Y, mu: float):
        Y = _as_matrix(Y, "Y")
        mu = float(mu)
        if not mu > 0.0:
            raise ConfigError(f"mu must be positive, got {mu}")
        _check_finite(Y)
        self.n, self.J = Y.shape
        self.mu = mu
        self.shift = 1.0 / mu
        self.woodbury = self.n > self.J
        self._Y = Y
        A = Y.T @ Y if self.woodbury else Y @ Y.T
        A[np.diag_indices_from(A)] += self.shift
        try:
            self._factor = linalg.cho_factor(A, check_finite=False)
            self._cholesky = True
        except linalg.LinAlgError:
            logger.debug("Gram matrix not numerically positive definite, using LU")
            self._factor = linalg.lu_factor(A, check_finite=False)
            self._cholesky = False

    @property
    def dim(self) -> int:
        """Size of the system actually factored, ``min(n, J)``."""
        return self.J if self.woodbury else self.n

    def _solve_small(self, rhs):
        if self._cholesky:
            return linalg.cho_solve(self._factor, rhs, check_finite=False)
        return linalg.lu_solve(self._factor, rhs, check_finite=False)

    def apply(self, rhs) -> np.ndarray:
        """Return ``(Y Y^T + shift I)^-1 @ rhs`` for ``rhs`` of shape (n,) or (n, m)."""
        rhs = np.asarray(rhs, dtype=np.float64)
        if rhs.shape[0] != self.n:
            raise DataError(f"right-hand side has {rhs.shape[0]} rows, expected {self.n}")
        if not self.woodbury:
            return self._solve_small(rhs)
        Y = self._Y
        return (rhs - Y @ self._solve_small(Y.T @ rhs)) / self.shift

    def solve_right(self, B) -> np.ndarray:
        """Return ``B @ (Y Y^T + shift I)^-1`` for ``B`` of shape (m, n)."""
        return self.apply(np.asarray(B).T).T

    # The two helpers below split the ADMM O-update so that the Woodbury path
    # never divides by a tiny shift (large mu would amplify rounding error).

    def solve_right_data(self, T) -> np.ndarray:
        """Return ``T Y^T (Y Y^T + shift I)^-1`` for targets ``T`` of shape (m, J)."""
        T = np.asarray(T, dtype=np.float64)
        if not self.woodbury:
            return self.solve_right(T @ self._Y.T)
        # push-through: T Y^T (Y Y^T + s I)^-1 = T (Y^T Y + s I)^-1 Y^T
        return self._solve_small(T.T).T @ self._Y.T

    def solve_right_shifted(self, B) -> np.ndarray:
        """Return ``shift * B (Y Y^T + shift I)^-1`` for ``B`` of shape (m, n)."""
        B = np.asarray(B, dtype=np.float64)
        if not self.woodbury:
            return self.shift * self.solve_right(B)
        Y = self._Y
        return B - self._solve_small((B @ Y).T).T @ Y.T


def precompute_gram_inverse(Y, mu: float) -> GramInverse:
    return GramInverse(Y, mu)


@dataclass(frozen=True)
class AdmmSettings:
    """ADMM parameters.

    ``mu`` scales the augmented term, ``k_max`` caps iterations and ``tol``
    stops early once ``||Q_{k+1} - Q_k||_F <= tol * max(1, ||Q_k||_F)``;
    ``tol=0`` always runs ``k_max`` iterations.

    ``iterate`` selects what is returned: ``'projected'`` (the splitting
    variable, always feasible) or ``'primal'`` (the last unprojected
    least-squares iterate, which may lie outside the ball).
    """

    mu: float = 1.0
    k_max: int = 100
    tol: float = 1e-6
    verbose: bool = False
    iterate: str = "projected"

    def __post_init__(self):
        if not float(self.mu) > 0.0:
            raise ConfigError(f"mu must be positive, got {self.mu}")
        if int(self.k_max) != self.k_max or self.k_max < 1:
            raise ConfigError(f"k_max must be a positive integer, got {self.k_max}")
        if not float(self.tol) >= 0.0:
            raise ConfigError(f"tol must be nonnegative, got {self.tol}")
        if self.iterate not in ITERATES:
            raise ConfigError(f"iterate must be one of {ITERATES}, got {self.iterate!r}")


class AdmmResult(NamedTuple):
    O: np.ndarray
    iterations: int
    objective: float


def ls_objective(O, Y, T) -> float:
    """``1/2 ||T - O Y||_F^2``."""
    R = T - O @ Y
    return 0.5 * float(np.vdot(R, R))


def solve_constrained_ls(
    Y,
    T,
    epsilon: float,
    q: int = 2,
    settings: AdmmSettings | None = None,
    warm_start=None,
    gram: GramInverse | None = None,
) -> AdmmResult:
    """Minimize ``1/2 ||T - O Y||_F^2`` subject to ``||O||_q <= epsilon`` with ADMM.

    Parameters
    ----------
    Y : ndarray, shape (n, J)
    T : ndarray, shape (Q, J)
    epsilon : float
        Radius of the norm ball.
    q : {1, 2}
    settings : AdmmSettings, optional
    warm_start : ndarray, shape (Q, n), optional
        Initial splitting variable; zero when omitted.  The multiplier always
        starts at zero.
    gram : GramInverse, optional
        Precomputed factorization for ``(Y, settings.mu)``.

    Returns
    -------
    AdmmResult
        The projected splitting iterate (always feasible) unless
        ``settings.iterate == 'primal'``, the number of iterations run and the
        objective of the returned matrix.
    """
    settings = settings or AdmmSettings()
    Y = _as_matrix(Y, "Y")
    T = _as_matrix(T, "T")
    if Y.shape[1] != T.shape[1]:
        raise DataError(f"Y has {Y.shape[1]} samples but T has {T.shape[1]}")
    _check_finite(Y, T)
    if q not in (1, 2):
        raise ConfigError(f"norm order q must be 1 or 2, got {q}")
    if not float(epsilon) > 0.0:
        raise ConfigError(f"ball radius must be positive, got {epsilon}")
    n = Y.shape[0]
    Qdim = T.shape[0]
    if gram is None:
        gram = GramInverse(Y, settings.mu)
    elif gram.n != n or gram.mu != float(settings.mu):
        raise DataError("Gram factorization does not match Y / mu")

    base = gram.solve_right_data(T)
    if warm_start is None:
        Qk = np.zeros((Qdim, n))
    else:
        Qk = project_ball(_as_matrix(warm_start, "warm_start"), q, epsilon)
        if Qk.shape != (Qdim, n):
            raise DataError(f"warm start has shape {Qk.shape}, expected {(Qdim, n)}")
    Lk = np.zeros((Qdim, n))

    k = 0
    O = Qk
    for k in range(1, int(settings.k_max) + 1):
        O = base + gram.solve_right_shifted(Qk + Lk)
        Qn = project_ball(O - Lk, q, epsilon)
        Lk += Qn - O
        change = np.linalg.norm(Qn - Qk)
        Qk = Qn
        if settings.verbose:
            logger.info(
                "admm iteration=%d objective=%.12e primal_residual=%.6e",
                k, ls_objective(Qk, Y, T), np.linalg.norm(Qn - O),
            )
        if change <= settings.tol * max(1.0, np.linalg.norm(Qk)):
            break
    out = O if settings.iterate == "primal" else Qk
    return AdmmResult(out, k, ls_objective(out, Y, T))
