"""Parametric U-Net style convolutional operator.

Each encoder level has two parallel sub-maps producing ``e`` and ``e*``; the
level output is ``e + e* * D_l(gamma)`` with ``D_l`` a positive scalar from a
small MLP. Levels at or above ``param_levels`` drop the parametric branch.
The decoder upsamples and concatenates the encoder output of the same level.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from .base import OperatorNet, positive_ratio_head, uniform_init

__all__ = ["PcnnSpec", "PCNN"]


@dataclass(frozen=True)
class PcnnSpec:
    n: int = 256
    levels: int = 6
    channels: tuple = (16, 32, 64, 96, 96, 96)
    param_levels: int = 4
    convs_per_block: int = 2
    use_inception: bool = False
    ratio_hidden: int = 32

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if len(self.channels) < self.levels:
            raise ValueError(f"{self.levels} levels need {self.levels} channel counts, "
                             f"got {len(self.channels)}")
        if self.n % 2 ** (self.levels - 1):
            raise ValueError(f"N={self.n} is not divisible by 2^{self.levels - 1}")
        if self.convs_per_block < 1 or self.param_levels < 0:
            raise ValueError("convs_per_block must be >= 1 and param_levels >= 0")

    @property
    def pool_lattice(self) -> int:
        """Shifts by multiples of this many points commute with the network."""
        return 2 ** (self.levels - 1)


class PCNN(OperatorNet):
    kind = "pcnn"

    def _build(self, rng):
        s = self.spec
        c = s.channels[: s.levels]
        self.enc, self.enc_star, self.ratios = [], [], []
        for l in range(s.levels):
            c_in = 1 if l == 0 else c[l - 1]
            self.enc.append(self._block_params(f"enc.{l}", c_in, c[l], rng))
            if l < s.param_levels:
                self.enc_star.append(self._block_params(f"enc_star.{l}", c_in, c[l], rng))
                self.ratios.append(self._mlp_params(f"D.{l}", [1, s.ratio_hidden, 1], rng,
                                                    ["relu", None]))
        # decoder level l merges the upsampled level-(l+1) features with the level-l skip
        self.dec = {}
        for l in range(s.levels - 2, -1, -1):
            self.dec[l] = self._block_params(f"dec.{l}", c[l + 1] + c[l], c[l], rng)
        self.head = (self._add("head.weight", uniform_init(rng, (1, c[0], 3), 3 * c[0])),
                     self._add("head.bias", uniform_init(rng, (1,), 3 * c[0])))

    def _block_params(self, prefix, c_in, c_out, rng) -> list:
        s = self.spec
        if s.use_inception:
            return [{
                "point": (self._add(f"{prefix}.point.weight", uniform_init(rng, (c_out, c_in), c_in)),
                          self._add(f"{prefix}.point.bias", uniform_init(rng, (c_out,), c_in))),
                "conv3": self._conv(f"{prefix}.conv3", c_in, c_out, rng),
                "conv5a": self._conv(f"{prefix}.conv5a", c_in, c_out, rng),
                "conv5b": self._conv(f"{prefix}.conv5b", c_out, c_out, rng),
            }]
        convs = []
        for i in range(s.convs_per_block):
            convs.append(self._conv(f"{prefix}.{i}", c_in if i == 0 else c_out, c_out, rng))
        return convs

    def _conv(self, name, c_in, c_out, rng):
        return (self._add(f"{name}.weight", uniform_init(rng, (c_out, c_in, 3), 3 * c_in)),
                self._add(f"{name}.bias", uniform_init(rng, (c_out,), 3 * c_in)))

    def _apply_block(self, block, x, activate=True) -> Tensor:
        act = ad.relu if activate else (lambda t: t)
        if self.spec.use_inception:
            p = block[0]
            a = ad.channel_linear(x, *p["point"])
            b = ad.conv1d_periodic(x, *p["conv3"])
            c = ad.conv1d_periodic(act(ad.conv1d_periodic(x, *p["conv5a"])), *p["conv5b"])
            return act(ad.add(ad.add(a, b), c))
        for w, b in block:
            x = act(ad.conv1d_periodic(x, w, b))
        return x

    def ratio(self, l: int, g: np.ndarray) -> Tensor:
        """``D_l(gamma)`` as a ``(B, 1, 1)`` tensor."""
        raw = ad.mlp(ad.Tensor(g.reshape(-1, 1)), self.ratios[l])
        return ad.reshape(positive_ratio_head(raw), (len(g), 1, 1))

    def encoder_step(self, l: int, e_plus, g: np.ndarray, ratio=None):
        """Level ``l`` of the encoder: returns ``(e, e_star, e_plus)``.

        ``ratio`` overrides ``D_l(gamma)``; ``e_star`` is None on levels without
        a parametric branch.
        """
        x = ad.as_tensor(e_plus)
        if l > 0:
            x = ad.maxpool1d(x)
        e = self._apply_block(self.enc[l], x)
        if l >= self.spec.param_levels:
            return e, None, e
        e_star = self._apply_block(self.enc_star[l], x)
        d = self.ratio(l, g) if ratio is None else ratio
        return e, e_star, ad.add(e, ad.mul(e_star, d))

    def _forward(self, v, g):
        s = self.spec
        x = ad.reshape(v, (v.shape[0], 1, v.shape[1]))
        skips = []
        for l in range(s.levels):
            _, _, x = self.encoder_step(l, x, g)
            skips.append(x)
        for l in range(s.levels - 2, -1, -1):
            # the block feeding the output level stays linear
            x = self._apply_block(self.dec[l], ad.concat_channels(ad.upsample1d(x), skips[l]),
                                  activate=l > 0)
        out = ad.conv1d_periodic(x, *self.head)
        return ad.reshape(out, (v.shape[0], s.n))
