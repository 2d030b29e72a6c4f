"""Rollouts and the statistics used to compare learned operators with the solver."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import no_grad
from .dataset import sample_initial_condition
from .solver import spectral_derivative

__all__ = [
    "MetricSeries",
    "CorrelationCurve",
    "LongTermStats",
    "rollout",
    "relative_l2",
    "front_slope",
    "front_length",
    "autocorrelation",
    "error_vs_time",
    "long_term_stats",
    "first_extrema",
    "write_series_csv",
    "write_corr_csv",
]

EPS = 1e-12


@dataclass
class MetricSeries:
    times: np.ndarray
    values: np.ndarray
    label: str = ""
    gamma: float = float("nan")

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.times.shape != self.values.shape:
            raise ValueError(f"times {self.times.shape} and values {self.values.shape} differ")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")


@dataclass
class CorrelationCurve:
    """R(r) at lags ``r_j = 2 pi j / N`` wrapped into [-pi, pi), ordered by j (r_0 = 0 first)."""

    lags: np.ndarray
    values: np.ndarray
    members: int = 0

    def sorted(self) -> tuple[np.ndarray, np.ndarray]:
        order = np.argsort(self.lags)
        return self.lags[order], self.values[order]


@dataclass
class LongTermStats:
    curve: CorrelationCurve
    mean_length: float
    lengths: MetricSeries
    diverged: bool = False
    frames_used: int = 0
    steps_completed: int = 0
    extra: dict = field(default_factory=dict)


def _stepper(model) -> Callable[[np.ndarray, object], np.ndarray]:
    predict = getattr(model, "predict", None)
    return predict if callable(predict) else model


def rollout(model, phi0, gamma, steps: int) -> np.ndarray:
    """``[p_1, ..., p_steps]`` with ``p_k = model(p_{k-1}, gamma)`` and ``p_0 = phi0``.

    ``phi0`` may be one field ``(N,)`` or a batch ``(B, N)``. A non-finite state
    stops the rollout with a warning; the finite prefix is returned.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    step = _stepper(model)
    p = np.asarray(phi0, dtype=np.float64)
    single = p.ndim == 1
    batch = p[None] if single else p
    out = np.empty((steps,) + batch.shape)
    with no_grad():
        for k in range(steps):
            batch = np.asarray(step(batch, gamma), dtype=np.float64).reshape(batch.shape)
            if not np.all(np.isfinite(batch)):
                warnings.warn(f"rollout produced a non-finite state at step {k + 1}; "
                              f"truncated to {k} steps", RuntimeWarning, stacklevel=2)
                out = out[:k]
                break
            out[k] = batch
    return out[:, 0] if single else out


def relative_l2(pred, ref) -> np.ndarray:
    """``||pred - ref|| / ||ref||`` over the last axis."""
    pred, ref = np.asarray(pred, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {ref.shape}")
    return np.linalg.norm(pred - ref, axis=-1) / (np.linalg.norm(ref, axis=-1) + EPS)


def front_slope(phi) -> np.ndarray:
    return spectral_derivative(np.asarray(phi, dtype=np.float64))


def front_length(phi, slope=None) -> np.ndarray:
    """Normalized arc length ``(1/2pi) int sqrt(phi_x^2 + 1) dx`` (periodic trapezoid rule).

    ``slope`` replaces the spectral derivative when given.
    """
    s = front_slope(phi) if slope is None else np.asarray(slope, dtype=np.float64)
    return np.mean(np.sqrt(s * s + 1.0), axis=-1)


def autocorrelation(ensemble, demean: bool = True) -> CorrelationCurve:
    """Ensemble mean of the normalized circular autocorrelation of each member.

    With ``demean`` each member's spatial mean is removed first, so a drifting
    mean level does not mask the shape of the fluctuations.
    """
    phi = np.atleast_2d(np.asarray(ensemble, dtype=np.float64))
    if phi.shape[0] == 0:
        raise ValueError("empty ensemble")
    if demean:
        phi = phi - phi.mean(axis=-1, keepdims=True)
    n = phi.shape[-1]
    energy = np.sum(phi * phi, axis=-1)
    keep = energy > 0.0
    if not np.all(keep):
        warnings.warn(f"{np.count_nonzero(~keep)} zero-norm ensemble member(s) excluded",
                      RuntimeWarning, stacklevel=2)
        if not np.any(keep):
            raise ValueError("every ensemble member has zero norm")
    spec = np.fft.rfft(phi[keep], axis=-1)
    corr = np.fft.irfft(np.abs(spec) ** 2, n=n, axis=-1) / energy[keep, None]
    j = np.arange(n)
    lags = 2.0 * np.pi * np.where(j < n // 2, j, j - n) / n
    return CorrelationCurve(lags, corr.mean(axis=0), int(np.count_nonzero(keep)))


def error_vs_time(model, reference, gamma, dt: float = 0.015, label: str = "") -> MetricSeries:
    """Relative L2 error of a rollout started from ``reference[0]`` against every frame."""
    ref = np.asarray(reference, dtype=np.float64)
    if ref.ndim != 2 or ref.shape[0] < 2:
        raise ValueError("reference trajectory needs at least two frames")
    pred = rollout(model, ref[0], gamma, ref.shape[0] - 1)
    errs = np.full(ref.shape[0], np.nan)
    errs[0] = 0.0
    errs[1: 1 + len(pred)] = relative_l2(pred, ref[1: 1 + len(pred)])
    return MetricSeries(dt * np.arange(ref.shape[0]), errs, label, float(gamma))


def long_term_stats(model, gamma, n: int = 256, seed: int = 0, burn_in: int = 500,
                    samples: int = 500, every: int = 10, dt: float = 0.015, phi0=None,
                    label: str = "") -> LongTermStats:
    """Roll out ``burn_in + samples`` steps from a random start and summarize the tail.

    Every ``every``-th frame after the burn-in enters the autocorrelation
    ensemble and the mean front length. A diverging rollout gives a partial
    result with ``diverged`` set.
    """
    if burn_in < 0 or samples < 1 or every < 1:
        raise ValueError("need burn_in >= 0, samples >= 1 and every >= 1")
    start = sample_initial_condition(n, seed) if phi0 is None else np.asarray(phi0, dtype=np.float64)
    total = burn_in + samples
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        traj = rollout(model, start, gamma, total)
    diverged = len(traj) < total or any(issubclass(w.category, RuntimeWarning) for w in caught)
    lengths = front_length(np.vstack([start, traj]))
    series = MetricSeries(dt * np.arange(len(lengths)), lengths, label, float(gamma))
    tail = traj[burn_in::every] if len(traj) > burn_in else traj[len(traj) // 2::every]
    if diverged:
        warnings.warn(f"rollout diverged after {len(traj)} of {total} steps; statistics are partial",
                      RuntimeWarning, stacklevel=2)
    if len(tail) == 0:
        tail = np.vstack([start, traj])[-1:]
    extra = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            curve = autocorrelation(tail)
        except ValueError:
            # every sampled frame is spatially constant: R(r) is undefined
            n_grid = tail.shape[-1]
            j = np.arange(n_grid)
            lags = 2.0 * np.pi * np.where(j < n_grid // 2, j, j - n_grid) / n_grid
            curve = CorrelationCurve(lags, np.full(n_grid, np.nan), 0)
            extra["flat"] = True
    if extra:
        warnings.warn("every sampled frame is flat; autocorrelation undefined", RuntimeWarning,
                      stacklevel=2)
    return LongTermStats(curve, float(front_length(tail).mean()), series, diverged, len(tail),
                         len(traj), extra)


def first_extrema(curve: CorrelationCurve, count: int = 2) -> list[tuple[float, float]]:
    """The first ``count`` interior local extrema of R(r) for r > 0 as (lag, value)."""
    n = len(curve.values)
    half = np.arange(n // 2 + 1)
    r = 2.0 * np.pi * half / n
    v = curve.values[half]  # R(pi) is stored at lag -pi
    out = []
    for i in range(1, len(v) - 1):
        if (v[i] - v[i - 1]) * (v[i + 1] - v[i]) < 0:
            out.append((float(r[i]), float(v[i])))
            if len(out) == count:
                break
    return out


def _metadata_line(meta: dict) -> str:
    return "# " + ", ".join(f"{k}={v}" for k, v in meta.items())


def write_series_csv(path, series: MetricSeries, columns: tuple[str, str], meta: dict) -> None:
    rows = [_metadata_line(meta), ",".join(columns)]
    rows += [f"{t!r},{v!r}" for t, v in zip(series.times.tolist(), series.values.tolist())]
    Path(path).write_text("\n".join(rows) + "\n")


def write_corr_csv(path, curve: CorrelationCurve, meta: dict) -> None:
    rows = [_metadata_line(meta), "r,R"]
    rows += [f"{r!r},{v!r}" for r, v in zip(curve.lags.tolist(), curve.values.tolist())]
    Path(path).write_text("\n".join(rows) + "\n")


def read_csv(path) -> tuple[dict, np.ndarray]:
    """Metadata and numeric table of a CSV written by this module."""
    lines = Path(path).read_text().splitlines()
    meta = dict(item.split("=", 1) for item in lines[0][2:].split(", "))
    table = np.array([[float(x) for x in line.split(",")] for line in lines[2:]])
    return meta, table
