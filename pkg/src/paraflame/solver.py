"""Pseudo-spectral reference solver for the Michelson-Sivashinsky and
Kuramoto-Sivashinsky flame-front equations on the periodic domain [-pi, pi).

    MS:  phi_t = -1/2 phi_x^2 + nu phi_xx + Gamma(phi),   Gamma = F^-1 |k| F
    KS:  phi_t = -1/(2 beta^2) phi_x^2 - 1/beta^2 phi_xx - 1/beta^4 phi_xxxx

Derivatives are spectral; the quadratic term is de-aliased by 3/2 zero
padding. Time stepping uses an adaptive Dormand-Prince 5(4) pair that lands
exactly on every sample time.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "SolverConfig",
    "IntegrationError",
    "grid",
    "wavenumbers",
    "spectral_derivative",
    "gamma_op",
    "ms_rhs",
    "ks_rhs",
    "rhs",
    "linear_symbol",
    "integrate",
    "dopri5",
    "SolverStepper",
]

EQUATIONS = ("MS", "KS")


class IntegrationError(RuntimeError):
    """The adaptive integrator could not advance (step size underflow)."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (reached t={t:.6g})")
        self.t = t


@dataclass(frozen=True)
class SolverConfig:
    """Equation, parameter and integrator settings for one trajectory.

    ``gamma`` is nu for MS and beta for KS. ``nonlinear`` and ``nonlocal`` are
    test hooks that drop the quadratic term and the MS Gamma operator.
    """

    equation: str
    gamma: float
    dt: float = 0.015
    atol: float = 1e-9
    rtol: float = 1e-7
    dealias: bool = True
    nonlinear: bool = True
    nonlocal_term: bool = True

    def __post_init__(self):
        if self.equation not in EQUATIONS:
            raise ValueError(f"equation must be one of {EQUATIONS}, got {self.equation!r}")
        for name in ("gamma", "dt", "atol", "rtol"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive, got {value!r}")

    def with_(self, **changes) -> "SolverConfig":
        return replace(self, **changes)


def grid(n: int) -> np.ndarray:
    """Equispaced points x_j = -pi + 2 pi j / n."""
    return -np.pi + 2.0 * np.pi * np.arange(n) / n


def wavenumbers(n: int) -> np.ndarray:
    return np.arange(n // 2 + 1, dtype=np.float64)


def spectral_derivative(phi: np.ndarray, order: int = 1) -> np.ndarray:
    """d^order/dx^order along the last axis (Nyquist mode dropped for odd orders)."""
    n = phi.shape[-1]
    k = wavenumbers(n)
    mult = (1j * k) ** order
    if order % 2 and n % 2 == 0:
        mult[-1] = 0.0
    return np.fft.irfft(mult * np.fft.rfft(phi, axis=-1), n=n, axis=-1)


def gamma_op(phi: np.ndarray) -> np.ndarray:
    """The MS non-local operator F^-1(|k| F(phi))."""
    n = phi.shape[-1]
    return np.fft.irfft(wavenumbers(n) * np.fft.rfft(phi, axis=-1), n=n, axis=-1)


def linear_symbol(config: SolverConfig, n: int) -> np.ndarray:
    """Fourier multiplier of the linear part, i.e. the small-amplitude growth rate of mode k."""
    k = wavenumbers(n)
    if config.equation == "MS":
        sym = -config.gamma * k ** 2
        if config.nonlocal_term:
            sym = sym + k
        return sym
    b2 = config.gamma ** 2
    return k ** 2 / b2 - k ** 4 / (b2 * b2)


def _nonlinear_coeff(config: SolverConfig) -> float:
    return 0.5 if config.equation == "MS" else 0.5 / config.gamma ** 2


def _slope_squared_hat(phi_hat: np.ndarray, n: int, dealias: bool) -> np.ndarray:
    """rfft of phi_x^2 given rfft(phi); 3/2-rule padded when ``dealias``."""
    k = wavenumbers(n)
    dhat = 1j * k * phi_hat
    dhat[..., -1] = 0.0
    if not dealias:
        dx = np.fft.irfft(dhat, n=n, axis=-1)
        out = np.fft.rfft(dx * dx, axis=-1)
    else:
        m = 3 * n // 2
        padded = np.zeros(phi_hat.shape[:-1] + (m // 2 + 1,), dtype=np.complex128)
        padded[..., : n // 2 + 1] = dhat
        dx = np.fft.irfft(padded, n=m, axis=-1) * (m / n)
        out = np.fft.rfft(dx * dx, axis=-1)[..., : n // 2 + 1] * (n / m)
    out[..., -1] = 0.0
    return out


class _Rhs:
    """Right-hand side with the multipliers precomputed for one grid size."""

    def __init__(self, config: SolverConfig, n: int):
        self.n = n
        self.lin = linear_symbol(config, n)
        self.coeff = _nonlinear_coeff(config)
        self.nonlinear = config.nonlinear
        self.dealias = config.dealias

    def __call__(self, phi: np.ndarray) -> np.ndarray:
        phi_hat = np.fft.rfft(phi, axis=-1)
        out = self.lin * phi_hat
        if self.nonlinear:
            out = out - self.coeff * _slope_squared_hat(phi_hat, self.n, self.dealias)
        return np.fft.irfft(out, n=self.n, axis=-1)


def rhs(phi: np.ndarray, config: SolverConfig) -> np.ndarray:
    return _Rhs(config, phi.shape[-1])(np.asarray(phi, dtype=np.float64))


def ms_rhs(phi: np.ndarray, nu: float, dealias: bool = True) -> np.ndarray:
    """-1/2 phi_x^2 + nu phi_xx + Gamma(phi)."""
    return rhs(phi, SolverConfig("MS", nu, dealias=dealias))


def ks_rhs(phi: np.ndarray, beta: float, dealias: bool = True) -> np.ndarray:
    """-1/(2 beta^2) phi_x^2 - 1/beta^2 phi_xx - 1/beta^4 phi_xxxx."""
    return rhs(phi, SolverConfig("KS", beta, dealias=dealias))


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = _B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                    -92097 / 339200, 187 / 2100, 1 / 40])

_SAFETY = 0.9
_FAC_MIN = 0.2
_FAC_MAX = 10.0
_ALPHA = 0.7 / 5  # PI controller exponents
_BETA = 0.4 / 5


def _initial_step(f, y0, f0, atol, rtol):
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + h0 * f0
    d2 = np.sqrt(np.mean(((f(y1) - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1)


def dopri5(f, y0: np.ndarray, sample_times: np.ndarray, atol: float, rtol: float,
           h_init: float | None = None) -> np.ndarray:
    """Integrate the autonomous system y' = f(y), returning y at each sample time.

    Steps are clipped so that every sample time is hit exactly. Raises
    :class:`IntegrationError` on step-size underflow or a non-finite state.
    """
    y = np.array(y0, dtype=np.float64)
    t = 0.0
    k1 = f(y)
    h = h_init if h_init is not None else _initial_step(f, y, k1, atol, rtol)
    err_prev = 1e-4
    out = np.empty((len(sample_times),) + y.shape)
    stages = [None] * 7
    for i, t_target in enumerate(sample_times):
        while t < t_target:
            h_step = min(h, t_target - t)
            clipped = h_step < h
            if h_step <= 1e-14 * max(1.0, abs(t)):
                raise IntegrationError("step size underflow", t)
            stages[0] = k1
            for s in range(1, 7):
                acc = y.copy()
                for j, a in enumerate(_A[s]):
                    if a:
                        acc += (h_step * a) * stages[j]
                stages[s] = f(acc)
            y_new = acc  # stage 7 sits at the 5th-order solution (FSAL)
            err_vec = sum((h_step * e) * k for e, k in zip(_E, stages) if e)
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
            if not np.isfinite(err):
                raise IntegrationError("non-finite state", t)
            if err <= 1.0:
                t = t_target if clipped or t + h_step >= t_target else t + h_step
                y = y_new
                k1 = stages[6]
                fac = _SAFETY * max(err, 1e-10) ** -_ALPHA * err_prev ** _BETA
                err_prev = max(err, 1e-4)
                h_next = h_step * min(_FAC_MAX, max(_FAC_MIN, fac))
                # a clipped step says nothing about the unclipped step size
                h = max(h, h_next) if clipped else h_next
            else:
                h = h_step * max(_FAC_MIN, _SAFETY * err ** -0.2)
        out[i] = y
    return out


def integrate(phi0: np.ndarray, config: SolverConfig, steps: int) -> np.ndarray:
    """Trajectory [phi(dt), phi(2 dt), ..., phi(steps dt)] as a (steps, N) array."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    phi0 = np.asarray(phi0, dtype=np.float64)
    if phi0.ndim != 1:
        raise ValueError(f"phi0 must be a 1D field, got shape {phi0.shape}")
    f = _Rhs(config, phi0.shape[0])
    times = config.dt * np.arange(1, steps + 1)
    return dopri5(f, phi0, times, config.atol, config.rtol)


class SolverStepper:
    """The reference solver packaged as a one-step operator ``(phi, gamma) -> phi(t + dt)``.

    Lets the evaluation tools treat ground truth exactly like a trained model.
    """

    def __init__(self, equation: str, dt: float = 0.015, atol: float = 1e-9,
                 rtol: float = 1e-7, dealias: bool = True):
        self.equation = equation
        self.dt = dt
        self.atol = atol
        self.rtol = rtol
        self.dealias = dealias

    def config(self, gamma: float) -> SolverConfig:
        return SolverConfig(self.equation, float(gamma), dt=self.dt, atol=self.atol,
                            rtol=self.rtol, dealias=self.dealias)

    def step(self, fields: np.ndarray, gamma) -> np.ndarray:
        fields = np.atleast_2d(np.asarray(fields, dtype=np.float64))
        gammas = np.broadcast_to(np.asarray(gamma, dtype=np.float64), (fields.shape[0],))
        return np.stack([integrate(phi, self.config(g), 1)[0] for phi, g in zip(fields, gammas)])

    __call__ = step
