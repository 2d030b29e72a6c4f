"""Quick internal consistency checks: gradients, spectral exactness, band map."""
from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import functional as _functional
from .evaluation import autocorrelation
from .models import PCNN, PFNO, PFNOStar, ParamEmbedding, PcnnSpec, PfnoSpec, band_indices
from .solver import gamma_op, grid, spectral_derivative

__all__ = ["CheckResult", "run_selftest", "FAULTS"]


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_error) and self.max_error <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<28} max_err={self.max_error:.3e}  tol={self.tolerance:.0e}"


def _grad_primitives() -> float:
    r = np.random.default_rng(0)
    x = ad.Parameter(r.normal(size=(2, 3, 16)), "x")
    w = ad.Parameter(r.normal(size=(4, 3)), "w")
    k = ad.Parameter(r.normal(size=(4, 3, 3)), "k")
    R = ad.Parameter(r.normal(size=(5, 2, 3)) + 1j * r.normal(size=(5, 2, 3)), "R")
    probe = r.normal(size=(2, 4, 16))
    probe2 = r.normal(size=(2, 2, 16))
    cases = [
        (lambda: ad.sum(ad.mul(ad.channel_linear(x, w), probe)), [x, w]),
        (lambda: ad.sum(ad.mul(ad.conv1d_periodic(x, k), probe)), [x, k]),
        (lambda: ad.sum(ad.mul(ad.irfft_pad(ad.complex_mode_mix(ad.rfft_truncate(x, 5), R), 16,
                                            ad.index(ad.channel_mean(x), (slice(None), slice(0, 2)))),
                               probe2)), [x, R]),
        (lambda: ad.sum(ad.mul(ad.softplus(x), ad.relu(ad.sub(x, 0.3)))), [x]),
        (lambda: ad.sum(ad.l2_norm(ad.upsample1d(ad.maxpool1d(x)))), [x]),
    ]
    return max(ad.gradient_check(fn, ps) for fn, ps in cases)


def _grad_networks() -> float:
    emb = ParamEmbedding("log", 6.0, 24.0)
    nets = [
        PFNO(PfnoSpec(n=16, layers=2, width=3, modes=4, bands=2, ratio_hidden=4), emb, seed=1),
        PFNOStar(PfnoSpec(n=16, layers=2, width=3, modes=4, bands=2), emb, seed=2),
        PCNN(PcnnSpec(n=16, levels=2, channels=(2, 3), param_levels=2, ratio_hidden=3), emb, seed=3),
    ]
    v = np.random.default_rng(4).normal(size=(2, 16))
    probe = np.random.default_rng(5).normal(size=(2, 16))
    return max(ad.gradient_check(lambda net=net: ad.sum(ad.mul(net(v, [7.0, 20.0]), probe)),
                                 net.parameters()) for net in nets)


def _spectral_round_trip() -> float:
    x = np.random.default_rng(6).normal(size=(3, 64))
    with ad.no_grad():
        back = ad.irfft_pad(ad.rfft_truncate(x, 32), 64, x.mean(axis=-1)).data
        modes = ad.rfft_truncate(np.cos(5 * 2 * np.pi * np.arange(64) / 64), 8).data
    expected = np.zeros(8, complex)
    expected[4] = 32.0
    return max(np.abs(back - x).max(), np.abs(modes - expected).max() / 32.0)


def _spectral_operators() -> float:
    x = grid(256)
    errs = [
        np.abs(gamma_op(np.cos(3 * x)) - 3 * np.cos(3 * x)).max(),
        np.abs(gamma_op(np.sin(5 * x) + np.cos(2 * x)) - 5 * np.sin(5 * x) - 2 * np.cos(2 * x)).max(),
        np.abs(spectral_derivative(np.sin(3 * x)) - 3 * np.cos(3 * x)).max(),
    ]
    ens = np.random.default_rng(7).normal(size=(3, 64))
    demeaned = ens - ens.mean(axis=1, keepdims=True)
    direct = np.mean([[np.sum(m * np.roll(m, j)) / np.sum(m * m) for j in range(64)]
                      for m in demeaned], axis=0)
    errs.append(np.abs(autocorrelation(ens).values - direct).max())
    return float(max(errs))


def _band_map_enumeration() -> float:
    bad = 0
    for kmax in (16, 64, 128):
        for bands in range(6):
            idx = band_indices(kmax, bands)
            for kappa, i in zip(range(1, kmax + 1), idx):
                if i < bands:
                    ok = kmax / 2 ** (i + 1) < kappa <= kmax / 2 ** i
                else:
                    ok = kappa <= kmax / 2 ** bands
                bad += not ok
            bad += len(idx) != kmax
    return float(bad)


CHECKS: list[tuple[str, Callable[[], float], float]] = [
    ("gradient/primitives", _grad_primitives, 1e-5),
    ("gradient/networks", _grad_networks, 1e-5),
    ("spectral/fft-round-trip", _spectral_round_trip, 1e-10),
    ("spectral/operators", _spectral_operators, 1e-10),
    ("band-map/enumeration", _band_map_enumeration, 0.0),
]


@contextlib.contextmanager
def _wrong_fft_scale():
    original = _functional._rfft
    _functional._rfft = lambda a, *args, **kwargs: 1.01 * original(a, *args, **kwargs)
    try:
        yield
    finally:
        _functional._rfft = original


FAULTS = {"fft-scale": _wrong_fft_scale}


def run_selftest(inject: str | None = None) -> list[CheckResult]:
    """Run every check; ``inject`` names a deliberate fault from :data:`FAULTS`."""
    ctx = FAULTS[inject]() if inject else contextlib.nullcontext()
    results = []
    with ctx:
        for name, fn, tol in CHECKS:
            try:
                err = float(fn())
            except Exception:  # a crash counts as a failed check
                err = float("inf")
            results.append(CheckResult(name, err, tol))
    return results
