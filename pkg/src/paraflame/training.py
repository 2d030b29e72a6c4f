"""1-to-n recurrent training: loss, Adam, gradient clipping and the epoch loop."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .dataset import TrajectorySet, gather_pairs, pair_index
from .models.base import OperatorNet

__all__ = [
    "TrainConfig",
    "Adam",
    "NonFiniteGradient",
    "TrainingDivergence",
    "recurrent_loss",
    "clip_gradients",
    "lr_at",
    "sgd_step",
    "evaluate_loss",
    "train",
    "TrainResult",
    "write_history",
]

EPS = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    n: int = 20
    epochs: int = 1000
    batch_size: int = 800
    lr0: float = 0.0025
    weight_decay: float = 1e-4
    sched_step: int = 100
    sched_gamma: float = 0.5
    clip: float | None = 50.0
    seed: int = 0
    stride: int = 1
    decoupled_decay: bool = False

    def __post_init__(self):
        if self.n < 1 or self.epochs < 0 or self.batch_size < 1 or self.stride < 1:
            raise ValueError("n, batch_size and stride must be >= 1 and epochs >= 0")
        if self.lr0 < 0 or self.weight_decay < 0 or self.sched_step < 1 or self.sched_gamma <= 0:
            raise ValueError("invalid learning-rate schedule or weight decay")
        if self.clip is not None and self.clip <= 0:
            raise ValueError(f"clip must be positive or None, got {self.clip}")


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


class TrainingDivergence(RuntimeError):
    def __init__(self, epoch: int, batch: int, detail: str):
        super().__init__(f"training diverged at epoch {epoch}, batch {batch}: {detail}")
        self.epoch = epoch
        self.batch = batch


def recurrent_loss(model: Callable, v, gammas, targets) -> Tensor:
    """Mean over the batch of ``(1/n) sum_k ||p_k - t_k|| / ||t_k||`` with p_k = model(p_{k-1}).

    ``v`` is ``(B, N)`` and ``targets`` is ``(B, n, N)``; the whole rollout is
    one graph, so gradients flow through every recurrent step.
    """
    targets = np.asarray(targets, dtype=np.float64)
    n = targets.shape[1]
    if n < 1:
        raise ValueError("need at least one target step")
    p = ad.as_tensor(v)
    total = None
    for k in range(n):
        p = model(p, gammas)
        t = targets[:, k]
        rel = ad.div(ad.l2_norm(ad.sub(p, t), axis=-1), np.linalg.norm(t, axis=-1) + EPS)
        total = rel if total is None else ad.add(total, rel)
    return ad.div(ad.mean(total), float(n))


def lr_at(epoch: int, lr0: float = 0.0025, step: int = 100, gamma: float = 0.5) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return lr0 * gamma ** (epoch // step)


def _real_view(a: np.ndarray) -> np.ndarray:
    """Flat float64 view; complex entries become (re, im) pairs sharing memory with ``a``."""
    flat = a.reshape(-1)
    return flat.view(np.float64) if np.iscomplexobj(flat) else flat


def clip_gradients(grads: dict, max_norm: float = 50.0) -> tuple[dict, float]:
    """Scale all gradients by ``max_norm / norm`` when the global L2 norm exceeds it."""
    norm = math.sqrt(sum(float(np.sum(np.abs(g) ** 2)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        return {k: g * scale for k, g in grads.items()}, norm
    return dict(grads), norm


class Adam:
    """Adam with L2 weight decay added to the gradient (or decoupled, if asked).

    Complex parameters are updated as pairs of real numbers, so the moments
    act on real and imaginary parts independently.
    """

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 decoupled: bool = False):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.decoupled = decoupled
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict, lr: float, weight_decay: float = 0.0) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(name)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1 ** self.t, 1.0 - b2 ** self.t
        for name, p in params.items():
            w = _real_view(p.data)
            g = _real_view(np.array(grads[name], dtype=p.data.dtype).reshape(p.data.shape))
            if weight_decay and not self.decoupled:
                g = g + weight_decay * w
            m = self.m.setdefault(name, np.zeros_like(w))
            v = self.v.setdefault(name, np.zeros_like(w))
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if weight_decay and self.decoupled:
                update = update + lr * weight_decay * w
            w -= update

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        return out

    def load_state_arrays(self, arrays: dict, t: int) -> None:
        self.t = int(t)
        self.m = {k[len("adam.m."):]: np.array(v) for k, v in arrays.items() if k.startswith("adam.m.")}
        self.v = {k[len("adam.v."):]: np.array(v) for k, v in arrays.items() if k.startswith("adam.v.")}


def sgd_step(params: dict, grads: dict, lr: float) -> None:
    """Plain gradient descent; the reference update for first-order consistency checks."""
    for name, p in params.items():
        p.data -= lr * grads[name]


def evaluate_loss(model: OperatorNet, data: TrajectorySet, n: int, batch_size: int = 800,
                  stride: int = 1) -> float:
    """Pair-weighted mean recurrent loss over every pair of ``data``, without gradients."""
    index = pair_index(data, n, stride)
    if len(index) == 0:
        raise ValueError("no pairs to evaluate")
    total = 0.0
    with no_grad():
        for lo in range(0, len(index), batch_size):
            b = gather_pairs(data, index[lo: lo + batch_size], n)
            total += recurrent_loss(model, b.inputs, b.gammas, b.targets).item() * len(b)
    return total / len(index)


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_state: dict | None = None
    best_epoch: int = -1
    best_loss: float = math.inf
    optimizer: Adam | None = None
    epochs_done: int = 0
    last_state: dict | None = None


def train(model: OperatorNet, train_set: TrajectorySet, valid_set: TrajectorySet | None,
          config: TrainConfig, start_epoch: int = 0, optimizer: Adam | None = None,
          log: Callable[[dict], None] | None = None, best_loss: float = math.inf,
          best_epoch: int = -1, best_state: dict | None = None) -> TrainResult:
    """Minimize the recurrent loss; the weights with the best validation loss are kept.

    Epoch ``e`` shuffles pairs with ``default_rng([seed, e])``, so a resumed run
    reproduces the batches an uninterrupted one would have seen. The model is
    left holding the best weights; ``result.last_state`` holds the final ones.
    When resuming, pass the previous ``best_loss``, ``best_epoch`` and
    ``best_state`` (default: the current weights).
    """
    if train_set.n != model.spec.n:
        raise ValueError(f"dataset N={train_set.n} does not match model N={model.spec.n}")
    index = pair_index(train_set, config.n, config.stride)
    if len(index) == 0:
        raise ValueError("training set yields no pairs")
    opt = optimizer or Adam(decoupled=config.decoupled_decay)
    params = model.params
    trainable = {k: p for k, p in params.items() if p.trainable}
    result = TrainResult(optimizer=opt, best_loss=best_loss, best_epoch=best_epoch,
                         epochs_done=start_epoch)
    if math.isfinite(best_loss):
        result.best_state = best_state if best_state is not None else model.state_dict()
    for epoch in range(start_epoch, start_epoch + config.epochs):
        lr = lr_at(epoch, config.lr0, config.sched_step, config.sched_gamma)
        order = index[np.random.default_rng([config.seed, epoch]).permutation(len(index))]
        total = 0.0
        for bi, lo in enumerate(range(0, len(order), config.batch_size)):
            batch = gather_pairs(train_set, order[lo: lo + config.batch_size], config.n)
            loss = recurrent_loss(model, batch.inputs, batch.gammas, batch.targets)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergence(epoch, bi, f"loss {value}")
            grads = ad.backward(loss, trainable.values())
            grads = {k: grads[p] for k, p in trainable.items()}
            if config.clip is not None:
                grads, _ = clip_gradients(grads, config.clip)
            try:
                opt.step(trainable, grads, lr, config.weight_decay)
            except NonFiniteGradient as exc:
                raise TrainingDivergence(epoch, bi, str(exc)) from exc
            total += value * len(batch)
        train_loss = total / len(index)
        if valid_set is not None and len(valid_set):
            valid_loss = evaluate_loss(model, valid_set, config.n, config.batch_size, config.stride)
        else:
            valid_loss = math.nan
        row = {"epoch": epoch, "lr": lr, "train_loss": train_loss, "valid_loss": valid_loss}
        result.history.append(row)
        score = valid_loss if math.isfinite(valid_loss) else train_loss
        if score < result.best_loss:
            result.best_loss, result.best_epoch = score, epoch
            result.best_state = model.state_dict()
        result.epochs_done = epoch + 1
        if log is not None:
            log(row)
    result.last_state = model.state_dict()
    if result.best_state is not None:
        model.load_state_dict(result.best_state)
    return result


HISTORY_FIELDS = ("epoch", "lr", "train_loss", "valid_loss")


def write_history(rows: list[dict], path, append: bool = False) -> None:
    path = Path(path)
    new = not (append and path.exists())
    with path.open("w" if new else "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(HISTORY_FIELDS)
        for row in rows:
            writer.writerow([row["epoch"], repr(float(row["lr"])), repr(float(row["train_loss"])),
                             repr(float(row["valid_loss"]))])


def read_history(path) -> list[dict]:
    with Path(path).open() as fh:
        return [{"epoch": int(r["epoch"]), "lr": float(r["lr"]), "train_loss": float(r["train_loss"]),
                 "valid_loss": float(r["valid_loss"])} for r in csv.DictReader(fh)]


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
