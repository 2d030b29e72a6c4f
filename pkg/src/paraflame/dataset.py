"""Trajectory generation, storage and 1-to-n pair extraction.

A :class:`TrajectorySet` holds solver trajectories for one equation. Each
record stores its parameter, generation seed and sampling interval next to
the frames, so any record can be regenerated from the file alone. Frames
start at ``t = dt``; the random initial condition itself is not stored.
"""
from __future__ import annotations

import os
import struct
import tempfile
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .solver import IntegrationError, SolverConfig, integrate

__all__ = [
    "Record",
    "TrajectorySet",
    "PlanEntry",
    "Plan",
    "PairBatch",
    "FormatError",
    "GenerationError",
    "sample_initial_condition",
    "generate_record",
    "generate",
    "full_plan",
    "desk_plan",
    "pair_index",
    "make_pairs",
    "save",
    "load",
    "export_csv",
    "worker_count",
]

MAGIC = b"PFT1"
VERSION = 1
IC_HIGH = 0.03
DEFAULT_DT = 0.015
VALID_SEED_OFFSET = 1 << 32
_EQUATION_TAGS = {"MS": 0, "KS": 1}
_HEADER = struct.Struct("<4sIBII")
_RECORD = struct.Struct("<dQdI")


class FormatError(ValueError):
    """Malformed dataset or checkpoint container."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class GenerationError(RuntimeError):
    def __init__(self, gamma: float, seed: int, cause: Exception):
        super().__init__(f"solver failed for gamma={gamma:g}, seed={seed}: {cause}")
        self.gamma = gamma
        self.seed = seed


@dataclass
class Record:
    gamma: float
    seed: int
    dt: float
    frames: np.ndarray  # (n_frames, N)

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ValueError(f"frames must be (n_frames, N), got {self.frames.shape}")

    def __len__(self) -> int:
        return self.frames.shape[0]

    def times(self) -> np.ndarray:
        return self.dt * np.arange(1, len(self) + 1)

    def identical(self, other: "Record") -> bool:
        return (self.gamma == other.gamma and self.seed == other.seed and self.dt == other.dt
                and self.frames.shape == other.frames.shape
                and self.frames.tobytes() == other.frames.tobytes())


@dataclass
class TrajectorySet:
    equation: str
    n: int
    records: list[Record] = field(default_factory=list)

    def __post_init__(self):
        if self.equation not in _EQUATION_TAGS:
            raise ValueError(f"unknown equation {self.equation!r}")
        for r in self.records:
            if r.frames.shape[1] != self.n:
                raise ValueError(f"record with N={r.frames.shape[1]} in a set with N={self.n}")

    def __len__(self) -> int:
        return len(self.records)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrajectorySet):
            return NotImplemented
        return (self.equation == other.equation and self.n == other.n
                and len(self) == len(other)
                and all(a.identical(b) for a, b in zip(self.records, other.records)))

    @property
    def gammas(self) -> np.ndarray:
        return np.array([r.gamma for r in self.records])

    @property
    def frame_count(self) -> int:
        return sum(len(r) for r in self.records)

    def max_abs(self) -> float:
        return max((float(np.abs(r.frames).max()) for r in self.records), default=0.0)

    def subset(self, gamma: float) -> "TrajectorySet":
        return TrajectorySet(self.equation, self.n, [r for r in self.records if r.gamma == gamma])


# -- generation ------------------------------------------------------------------------

def sample_initial_condition(n: int, seed: int) -> np.ndarray:
    """i.i.d. U[0, 0.03] values from a counter-based generator keyed by ``seed``."""
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    return rng.uniform(0.0, IC_HIGH, size=n)


def generate_record(equation: str, gamma: float, seed: int, frames: int,
                    dt: float = DEFAULT_DT, n: int = 256, atol: float = 1e-9,
                    rtol: float = 1e-7) -> Record:
    config = SolverConfig(equation, gamma, dt=dt, atol=atol, rtol=rtol)
    try:
        traj = integrate(sample_initial_condition(n, seed), config, frames)
    except IntegrationError as exc:
        raise GenerationError(gamma, seed, exc) from exc
    return Record(float(gamma), int(seed), float(dt), traj)


@dataclass(frozen=True)
class PlanEntry:
    gamma: float
    sequences: int
    frames: int
    dt: float = DEFAULT_DT


@dataclass(frozen=True)
class Plan:
    """What to generate. Record ``i`` (in entry order) gets seed ``base_seed + offset + i``,
    where the offset separates the train and validation splits."""

    equation: str
    entries: tuple[PlanEntry, ...]
    n: int = 256
    base_seed: int = 0
    split: str = "train"
    atol: float = 1e-9
    rtol: float = 1e-7

    def __post_init__(self):
        if self.split not in ("train", "valid"):
            raise ValueError(f"split must be 'train' or 'valid', got {self.split!r}")
        if self.equation not in _EQUATION_TAGS:
            raise ValueError(f"unknown equation {self.equation!r}")

    def jobs(self) -> list[tuple]:
        offset = VALID_SEED_OFFSET if self.split == "valid" else 0
        out = []
        for e in self.entries:
            for _ in range(e.sequences):
                seed = self.base_seed + offset + len(out)
                out.append((self.equation, e.gamma, seed, e.frames, e.dt, self.n, self.atol, self.rtol))
        return out

    def seeds(self) -> list[int]:
        return [job[2] for job in self.jobs()]

    def summary(self) -> list[str]:
        groups: dict[float, list[PlanEntry]] = {}
        for e in self.entries:
            groups.setdefault(e.gamma, []).append(e)
        lines = []
        for gamma, es in groups.items():
            parts = " + ".join(f"{e.sequences} x {e.frames} frames" for e in es)
            lines.append(f"{self.equation} gamma={gamma:g}: {sum(e.sequences for e in es)} records ({parts})")
        total = sum(e.sequences * e.frames for e in self.entries)
        lines.append(f"total: {sum(e.sequences for e in self.entries)} records, {total} frames, "
                     f"{len(groups)} gamma groups, split={self.split}")
        return lines


def full_plan(equation: str, split: str = "train", base_seed: int = 0) -> Plan:
    """Full-size generation protocol; the validation split is 10% of each group."""
    if equation == "MS":
        entries = [PlanEntry(nu, 250, 1000) for nu in (0.07, 0.1, 0.15)]
        for nu in (0.025, 0.035, 0.05):
            entries.append(PlanEntry(nu, 250, 500))
            entries.append(PlanEntry(nu, 1, 125000))
    elif equation == "KS":
        frames = int(round(7.5 / DEFAULT_DT))
        entries = [PlanEntry(beta, 250, frames) for beta in (6.0, 9.0, 12.0, 18.0, 24.0)]
    else:
        raise ValueError(f"unknown equation {equation!r}")
    if split == "valid":
        # the single extra-long sequence has no 10% counterpart
        entries = [PlanEntry(e.gamma, e.sequences // 10, e.frames, e.dt)
                   for e in entries if e.sequences >= 10]
    return Plan(equation, tuple(entries), base_seed=base_seed, split=split)


def desk_plan(equation: str, gammas: Sequence[float], sequences: int, frames: int,
              split: str = "train", base_seed: int = 0, n: int = 256,
              dt: float = DEFAULT_DT) -> Plan:
    entries = tuple(PlanEntry(float(g), sequences, frames, dt) for g in gammas)
    return Plan(equation, entries, n=n, base_seed=base_seed, split=split)


def worker_count(jobs: int) -> int:
    """Pool size: PARAFLAME_THREADS if set, else the CPU count, never more than ``jobs``."""
    env = os.environ.get("PARAFLAME_THREADS")
    limit = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(limit, jobs))


def _run_job(job: tuple) -> Record:
    return generate_record(*job)


def generate(plan: Plan, workers: int | None = None) -> TrajectorySet:
    jobs = plan.jobs()
    workers = worker_count(len(jobs)) if workers is None else max(1, workers)
    if workers == 1 or len(jobs) <= 1:
        records = [_run_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_job, jobs))
    return TrajectorySet(plan.equation, plan.n, records)


# -- pairs -----------------------------------------------------------------------------

@dataclass
class PairBatch:
    """Inputs ``(B, N)`` with parameters ``(B,)`` and the following ``n`` frames ``(B, n, N)``."""

    inputs: np.ndarray
    gammas: np.ndarray
    targets: np.ndarray

    @property
    def n(self) -> int:
        return self.targets.shape[1]

    def __len__(self) -> int:
        return self.inputs.shape[0]


def pair_index(data: TrajectorySet, n: int, stride: int = 1) -> np.ndarray:
    """(record, start) pairs with start = 0, stride, ... and start + n < frames."""
    if n < 1 or stride < 1:
        raise ValueError(f"need n >= 1 and stride >= 1, got n={n}, stride={stride}")
    rows = []
    for i, r in enumerate(data.records):
        if len(r) <= n:
            warnings.warn(f"record {i} (gamma={r.gamma:g}, seed={r.seed}) has {len(r)} frames, "
                          f"too short for horizon {n}; skipped", stacklevel=2)
            continue
        starts = np.arange(0, len(r) - n, stride)
        rows.append(np.column_stack([np.full(starts.size, i), starts]))
    if not rows:
        return np.empty((0, 2), dtype=np.int64)
    return np.concatenate(rows).astype(np.int64)


def gather_pairs(data: TrajectorySet, index: np.ndarray, n: int) -> PairBatch:
    inputs = np.empty((len(index), data.n))
    targets = np.empty((len(index), n, data.n))
    gammas = np.empty(len(index))
    for b, (i, j) in enumerate(index):
        rec = data.records[i]
        inputs[b] = rec.frames[j]
        targets[b] = rec.frames[j + 1: j + 1 + n]
        gammas[b] = rec.gamma
    return PairBatch(inputs, gammas, targets)


def make_pairs(data: TrajectorySet, n: int, stride: int = 1, batch_size: int | None = None,
               shuffle: bool = False, seed: int = 0) -> Iterator[PairBatch]:
    """Stream 1-to-n training pairs; never crosses record boundaries."""
    index = pair_index(data, n, stride)
    if shuffle:
        index = index[np.random.default_rng(seed).permutation(len(index))]
    size = len(index) if batch_size is None else batch_size
    for lo in range(0, len(index), max(size, 1)):
        yield gather_pairs(data, index[lo: lo + size], n)


# -- persistence -----------------------------------------------------------------------

def _encode(data: TrajectorySet) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, _EQUATION_TAGS[data.equation], data.n, len(data))]
    for r in data.records:
        parts.append(_RECORD.pack(r.gamma, r.seed, r.dt, len(r)))
        parts.append(r.frames.astype("<f8", copy=False).tobytes())
    return b"".join(parts)


def atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(data: TrajectorySet, path) -> None:
    atomic_write(path, _encode(data))


def decode(buf: bytes) -> TrajectorySet:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated header", len(buf))
    magic, version, tag, n, count = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    tags = {v: k for k, v in _EQUATION_TAGS.items()}
    if tag not in tags:
        raise FormatError(f"unknown equation tag {tag}", 8)
    if n == 0:
        raise FormatError("grid size 0", 9)
    off = _HEADER.size
    records = []
    for _ in range(count):
        if off + _RECORD.size > len(buf):
            raise FormatError("truncated record header", off)
        gamma, seed, dt, frames = _RECORD.unpack_from(buf, off)
        off += _RECORD.size
        nbytes = frames * n * 8
        if off + nbytes > len(buf):
            raise FormatError("truncated frame data", off)
        arr = np.frombuffer(buf, dtype="<f8", count=frames * n, offset=off).reshape(frames, n)
        records.append(Record(gamma, seed, dt, arr.astype(np.float64)))
        off += nbytes
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes", off)
    return TrajectorySet(tags[tag], n, records)


def load(path) -> TrajectorySet:
    return decode(Path(path).read_bytes())


def export_csv(record: Record, path) -> None:
    """One row per frame: ``t, x_0, ..., x_{N-1}``."""
    n = record.frames.shape[1]
    header = ",".join(["t"] + [f"x_{j}" for j in range(n)])
    table = np.column_stack([record.times(), record.frames])
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.17g")
