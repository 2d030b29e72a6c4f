"""Parametric Fourier neural operators.

``PFNO`` conditions each Fourier layer on gamma through an auxiliary complex
weight tensor ``R*`` whose contribution is scaled per wavenumber band by
positive ratios from a small MLP. ``PFNOStar`` instead appends the
normalized gamma to the input as an extra constant channel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from .base import OperatorNet, band_map, positive_ratio_head, uniform_init

__all__ = ["PfnoSpec", "PFNO", "PFNOStar", "fourier_layer"]


@dataclass(frozen=True)
class PfnoSpec:
    n: int = 256
    layers: int = 4
    width: int = 30
    modes: int = 64
    bands: int = 6
    share_weights: bool = True
    use_skip: bool = False
    ratio_hidden: int = 32

    def __post_init__(self):
        if self.n % 2 or self.n < 2:
            raise ValueError(f"grid size must be even, got {self.n}")
        if not 1 <= self.modes <= self.n // 2:
            raise ValueError(f"modes={self.modes} outside [1, N/2={self.n // 2}]")
        if self.layers < 1 or self.width < 1 or self.ratio_hidden < 1:
            raise ValueError("layers, width and ratio_hidden must be positive")
        if self.bands < 0:
            raise ValueError(f"bands must be >= 0, got {self.bands}")

    @property
    def n_ratios(self) -> int:
        return 1 + self.bands


def fourier_layer(z, R, W, b=None, Rstar=None, scale=None, activation="relu",
                  skip: bool = False) -> Tensor:
    """One (parametric) Fourier layer on ``z`` of shape ``(B, d, N)``.

    spectral = F^-1[(R + R* diag(scale)) F z] keeps wavenumbers 1..kmax and
    passes the channel means through unchanged; the result is
    ``act(spectral + W z + b)``, plus ``z`` itself when ``skip``.
    ``scale`` is ``(B, kmax)`` and is ignored when ``Rstar`` is None.
    """
    z = ad.as_tensor(z)
    n = z.shape[-1]
    kmax = R.shape[0]
    modes = ad.rfft_truncate(z, kmax)
    mixed = ad.complex_mode_mix(modes, R)
    if Rstar is not None:
        extra = ad.complex_mode_mix(modes, Rstar)
        if scale is not None:
            s = ad.as_tensor(scale)
            extra = ad.mul(extra, ad.reshape(s, (s.shape[0], 1, kmax)))
        mixed = ad.add(mixed, extra)
    out = ad.add(ad.irfft_pad(mixed, n, ad.channel_mean(z)), ad.channel_linear(z, W, b))
    if activation == "relu":
        out = ad.relu(out)
    elif activation is not None:
        raise ValueError(f"unknown activation {activation!r}")
    return ad.add(z, out) if skip else out


class _FourierNet(OperatorNet):
    in_channels = 1
    parametric = True

    def _build(self, rng):
        s = self.spec
        d, k = s.width, s.modes
        self.lift = self._mlp_params("P", [self.in_channels, d, d], rng, ["relu", None])
        groups = [""] if s.share_weights else [f".{l}" for l in range(s.layers)]
        self.blocks = []
        for tag in groups:
            blk = {
                "R": self._add(f"fourier{tag}.R", self._complex_init(rng, (k, d, d))),
                "W": self._add(f"fourier{tag}.W", uniform_init(rng, (d, d), d)),
                "b": self._add(f"fourier{tag}.b", uniform_init(rng, (d,), d)),
            }
            if self.parametric:
                blk["Rstar"] = self._add(f"fourier{tag}.Rstar", self._complex_init(rng, (k, d, d)))
            self.blocks.append(blk)
        self.ratios = []
        if self.parametric:
            for l in range(s.layers):
                self.ratios.append(self._mlp_params(
                    f"D.{l}", [1, s.ratio_hidden, s.n_ratios], rng, ["relu", None]))
        self.project = self._mlp_params("Q", [d, 2 * d, 1], rng, ["relu", None])

    def _complex_init(self, rng, shape):
        scale = 1.0 / self.spec.width
        return scale * (rng.uniform(size=shape) + 1j * rng.uniform(size=shape))

    def block(self, l: int) -> dict:
        return self.blocks[0 if self.spec.share_weights else l]

    def band_scale(self, l: int, g: np.ndarray) -> Tensor:
        """Per-wavenumber positive ratios ``(B, kmax)`` for layer ``l``."""
        raw = ad.mlp(ad.Tensor(g.reshape(-1, 1)), self.ratios[l])
        return band_map(positive_ratio_head(raw), self.spec.modes, self.spec.bands)

    def lifted_input(self, v: Tensor, g: np.ndarray) -> Tensor:
        return ad.reshape(v, (v.shape[0], 1, v.shape[1]))

    def _forward(self, v, g):
        s = self.spec
        z = ad.mlp(self.lifted_input(v, g), self.lift, spatial=True)
        for l in range(s.layers):
            blk = self.block(l)
            scale = self.band_scale(l, g) if self.parametric else None
            z = fourier_layer(z, blk["R"], blk["W"], blk["b"], blk.get("Rstar"), scale,
                              skip=s.use_skip)
        out = ad.mlp(z, self.project, spatial=True)
        return ad.reshape(out, (v.shape[0], s.n))


class PFNO(_FourierNet):
    """Fourier neural operator with band-wise parametric spectral weights."""

    kind = "pfno"


class PFNOStar(_FourierNet):
    """Fourier neural operator taking ``(v(x), gamma~)`` as a two-channel input."""

    kind = "pfno_star"
    in_channels = 2
    parametric = False

    def lifted_input(self, v, g):
        b, n = v.shape
        v3 = ad.reshape(v, (b, 1, n))
        gamma_channel = np.broadcast_to(g.reshape(b, 1, 1), (b, 1, n)).copy()
        return ad.concat_channels(v3, ad.Tensor(gamma_channel))
