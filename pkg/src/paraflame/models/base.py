"""Shared pieces of the operator networks: parameter store, initializers,
positive ratio heads and the wavenumber band map."""
from __future__ import annotations

from dataclasses import asdict
from typing import Iterator

import numpy as np

from .. import autodiff as ad
from ..autodiff import Parameter, Tensor, no_grad
from .embedding import ParamEmbedding

__all__ = [
    "OperatorNet",
    "band_indices",
    "band_map",
    "positive_ratio_head",
    "uniform_init",
]


def band_indices(kmax: int, bands: int) -> np.ndarray:
    """Band id of each wavenumber 1..kmax.

    Band ``i < bands`` covers ``(kmax / 2^(i+1), kmax / 2^i]`` and band
    ``bands`` covers ``(0, kmax / 2^bands]``. Tested with integer arithmetic,
    so every wavenumber lands in exactly one band even when some bands are empty.
    """
    if kmax < 1 or bands < 0:
        raise ValueError(f"need kmax >= 1 and bands >= 0, got {kmax}, {bands}")
    kappa = np.arange(1, kmax + 1)
    idx = np.full(kmax, bands, dtype=np.intp)
    for i in range(bands - 1, -1, -1):
        idx[(kappa * 2 ** (i + 1) > kmax) & (kappa * 2 ** i <= kmax)] = i
    return idx


def band_map(d, kmax: int, bands: int) -> Tensor:
    """Spread ``bands + 1`` band values over wavenumbers 1..kmax (last axis)."""
    d = ad.as_tensor(d)
    if d.shape[-1] != bands + 1:
        raise ValueError(f"expected {bands + 1} band values, got {d.shape[-1]}")
    if kmax < 2 ** bands:
        raise ValueError(f"kmax={kmax} < 2^{bands}: the lowest band would be empty")
    return ad.gather_last(d, band_indices(kmax, bands))


def positive_ratio_head(raw) -> Tensor:
    """Strictly positive scaling ratios via softplus."""
    return ad.softplus(raw)


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class OperatorNet:
    """One-step map ``(phi, gamma) -> phi(t + dt)`` with named parameters.

    Subclasses set ``kind`` and implement ``_build`` and ``_forward``.
    """

    kind = ""

    def __init__(self, spec, embedding: ParamEmbedding | None = None, seed: int = 0):
        self.spec = spec
        self.embedding = embedding if embedding is not None else ParamEmbedding()
        self.params: dict[str, Parameter] = {}
        self._build(np.random.default_rng(seed))

    def _add(self, name: str, value) -> Parameter:
        p = Parameter(value, name)
        self.params[name] = p
        return p

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def named_parameters(self) -> Iterator[tuple[str, Parameter]]:
        return iter(self.params.items())

    def num_parameters(self) -> int:
        return int(sum(p.data.size * (2 if p.is_complex else 1) for p in self.params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise KeyError(f"parameter name mismatch: {sorted(missing)}")
        for k, p in self.params.items():
            value = np.asarray(state[k])
            if value.shape != p.shape:
                raise ValueError(f"{k}: shape {value.shape} != {p.shape}")
            p.data = value.astype(p.data.dtype, copy=True)

    def spec_dict(self) -> dict:
        return {"spec": asdict(self.spec), "embedding": self.embedding.to_dict()}

    def embed(self, gamma, batch: int) -> np.ndarray:
        g = np.asarray(self.embedding.transform(gamma), dtype=np.float64)
        return np.broadcast_to(g.reshape(-1), (batch,)).copy() if g.size == 1 else g.reshape(batch)

    def forward(self, v, gamma) -> Tensor:
        """``v`` is ``(N,)`` or ``(B, N)``; ``gamma`` a scalar or ``(B,)`` raw parameter."""
        v = ad.as_tensor(v)
        single = v.ndim == 1
        if single:
            v = ad.reshape(v, (1, v.shape[0]))
        if v.shape[-1] != self.spec.n:
            raise ad.ShapeError(f"field has N={v.shape[-1]}, model expects N={self.spec.n}")
        g = self.embed(gamma, v.shape[0])
        out = self._forward(v, g)
        return ad.reshape(out, (v.shape[1],)) if single else out

    __call__ = forward

    def predict(self, v, gamma) -> np.ndarray:
        with no_grad():
            return self.forward(np.asarray(v, dtype=np.float64), gamma).data.copy()

    def _build(self, rng: np.random.Generator) -> None:  # pragma: no cover
        raise NotImplementedError

    def _forward(self, v: Tensor, g: np.ndarray) -> Tensor:  # pragma: no cover
        raise NotImplementedError

    def _mlp_params(self, prefix: str, sizes, rng, acts) -> list[tuple]:
        layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = self._add(f"{prefix}.{i}.weight", uniform_init(rng, (b, a), a))
            bias = self._add(f"{prefix}.{i}.bias", uniform_init(rng, (b,), a))
            layers.append((w, bias, acts[i]))
        return layers
