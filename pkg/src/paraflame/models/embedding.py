"""Map the raw PDE parameter onto the unit interval of the training range."""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

__all__ = ["ParamEmbedding"]


@dataclass(frozen=True)
class ParamEmbedding:
    """``log`` or ``linear`` rescaling of gamma so the training range becomes [0, 1].

    With ``lo``/``hi`` unset the embedding is the identity. A degenerate range
    (one training value) maps every gamma to 0.
    """

    mode: str = "log"
    lo: float | None = None
    hi: float | None = None

    def __post_init__(self):
        if self.mode not in ("log", "linear"):
            raise ValueError(f"mode must be 'log' or 'linear', got {self.mode!r}")
        if (self.lo is None) != (self.hi is None):
            raise ValueError("lo and hi must be set together")
        if self.lo is not None:
            if self.hi < self.lo:
                raise ValueError(f"empty range [{self.lo}, {self.hi}]")
            if self.mode == "log" and self.lo <= 0:
                raise ValueError("log embedding needs a positive range")

    @classmethod
    def fit(cls, gammas, mode: str = "log") -> "ParamEmbedding":
        g = np.asarray(gammas, dtype=np.float64)
        if g.size == 0:
            raise ValueError("cannot fit an embedding on no parameter values")
        return cls(mode, float(g.min()), float(g.max()))

    @property
    def fitted(self) -> bool:
        return self.lo is not None

    def transform(self, gamma) -> np.ndarray:
        g = np.asarray(gamma, dtype=np.float64)
        if not self.fitted:
            return g
        tol = 1e-9 * max(abs(self.lo), abs(self.hi), 1.0)
        if np.any(g < self.lo - tol) or np.any(g > self.hi + tol):
            warnings.warn(f"gamma outside the training range [{self.lo:g}, {self.hi:g}]; "
                          "extrapolating", stacklevel=3)
        if self.hi == self.lo:
            return np.zeros_like(g)
        if self.mode == "log":
            return (np.log(g) - np.log(self.lo)) / (np.log(self.hi) - np.log(self.lo))
        return (g - self.lo) / (self.hi - self.lo)

    def to_dict(self) -> dict:
        return asdict(self)
