"""Input checks shared by the estimator wrappers."""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .dataset import Record, TrajectorySet

__all__ = ["check_gamma", "check_trajectories", "check_fields"]


def check_gamma(gamma, n_samples: int, name: str = "gamma") -> np.ndarray:
    """Broadcast a scalar or per-sample parameter to a finite, positive ``(n_samples,)`` array."""
    if gamma is None:
        raise ValueError(f"{name} is required")
    g = np.asarray(gamma, dtype=np.float64)
    if g.ndim == 0:
        g = np.full(n_samples, float(g))
    if g.shape != (n_samples,):
        raise ValueError(f"{name} must be a scalar or have shape ({n_samples},), got {g.shape}")
    if not np.all(np.isfinite(g)) or np.any(g <= 0):
        raise ValueError(f"{name} must be finite and positive")
    return g


def check_trajectories(X, gamma=None, equation: str = "KS", dt: float = 0.015) -> TrajectorySet:
    """Accept a :class:`TrajectorySet` or an array ``(n_sequences, n_frames, N)`` plus gamma."""
    if isinstance(X, TrajectorySet):
        if gamma is not None:
            raise ValueError("gamma is taken from the TrajectorySet; do not pass it separately")
        if len(X) == 0:
            raise ValueError("empty TrajectorySet")
        return X
    arr = check_array(X, ensure_2d=False, allow_nd=True, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] < 2:
        raise ValueError(f"trajectories must be (n_sequences, n_frames >= 2, N), got {arr.shape}")
    g = check_gamma(gamma, arr.shape[0])
    records = [Record(float(gi), i, dt, frames) for i, (gi, frames) in enumerate(zip(g, arr))]
    return TrajectorySet(equation, arr.shape[2], records)


def check_fields(X, gamma=None, n_features: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Fields ``(m, N)`` and parameters ``(m,)`` for one-step prediction.

    Without ``gamma`` the parameter is read from an extra last column, so ``X``
    is ``(m, N + 1)``.
    """
    arr = check_array(X, dtype=np.float64, ensure_2d=False)
    if arr.ndim == 1:
        arr = arr[None]
    if gamma is None:
        fields, g = arr[:, :-1], arr[:, -1]
        g = check_gamma(g, len(arr), "gamma column")
    else:
        fields, g = arr, check_gamma(gamma, len(arr))
    if n_features is not None and fields.shape[1] != n_features:
        extra = "" if gamma is not None else " (plus a gamma column)"
        raise ValueError(f"X has {fields.shape[1]} grid points{extra}, the model expects {n_features}")
    return fields, g


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)
