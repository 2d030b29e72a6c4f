"""Parametric operator networks mapping ``(phi, gamma)`` to the next frame."""
from .base import OperatorNet, band_indices, band_map, positive_ratio_head
from .checkpoint import MODEL_KINDS, Checkpoint, build_model, load_checkpoint, save_checkpoint
from .embedding import ParamEmbedding
from .pcnn import PCNN, PcnnSpec
from .pfno import PFNO, PFNOStar, PfnoSpec, fourier_layer

__all__ = [
    "OperatorNet", "PFNO", "PFNOStar", "PCNN", "PfnoSpec", "PcnnSpec", "ParamEmbedding",
    "band_indices", "band_map", "positive_ratio_head", "fourier_layer",
    "Checkpoint", "build_model", "save_checkpoint", "load_checkpoint", "MODEL_KINDS",
]
