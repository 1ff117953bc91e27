"""Scoring: normalized mean error in dB, accuracy, growth-decision ratio."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

__all__ = ["Metrics", "nme_db", "accuracy", "improvement_ratio", "squared_error", "score"]

NME_FLOOR_DB = -300.0


@dataclass(frozen=True)
class Metrics:
    nme_db: float
    cost: float
    accuracy: float | None = None


def squared_error(T, T_hat) -> float:
    """``sum_j ||t_j - t_hat_j||_2^2``."""
    R = np.asarray(T, dtype=np.float64) - np.asarray(T_hat, dtype=np.float64)
    return float(np.vdot(R, R))


def nme_db(T, T_hat, p: int = 2) -> float:
    """Normalized mean error ``10 log10(sum ||t - t_hat||_p^p / sum ||t||_p^p)``.

    A perfect match is reported as -300 dB rather than ``-inf``.
    """
    T = np.asarray(T, dtype=np.float64)
    T_hat = np.asarray(T_hat, dtype=np.float64)
    if T.shape != T_hat.shape:
        raise DataError(f"shape mismatch: {T.shape} vs {T_hat.shape}")
    if p == 2:
        err = squared_error(T, T_hat)
        energy = float(np.vdot(T, T))
    else:
        err = float(np.sum(np.abs(T - T_hat) ** p))
        energy = float(np.sum(np.abs(T) ** p))
    if energy <= 0.0:
        raise DataError("target energy is zero; NME is undefined")
    if err <= 0.0:
        return NME_FLOOR_DB
    return float(max(NME_FLOOR_DB, 10.0 * np.log10(err / energy)))


def accuracy(T_onehot, T_hat) -> float:
    """Fraction of columns whose argmax matches; ties go to the lowest index."""
    T_onehot = np.asarray(T_onehot)
    T_hat = np.asarray(T_hat)
    if T_onehot.shape != T_hat.shape:
        raise DataError(f"shape mismatch: {T_onehot.shape} vs {T_hat.shape}")
    if T_onehot.shape[1] == 0:
        raise DataError("no samples to score")
    return float(np.mean(np.argmax(T_hat, axis=0) == np.argmax(T_onehot, axis=0)))


def improvement_ratio(nme_old: float, nme_new: float) -> float:
    """Relative NME improvement ``(old - new) / |old|``; positive means better."""
    if nme_old == 0.0:
        raise ValueError("improvement ratio undefined for a 0 dB reference")
    return (nme_old - nme_new) / abs(nme_old)


def score(T, T_hat, classification: bool) -> Metrics:
    return Metrics(
        nme_db=nme_db(T, T_hat),
        cost=squared_error(T, T_hat),
        accuracy=accuracy(T, T_hat) if classification else None,
    )
