"""scikit-learn style wrappers around the operator networks.

``fit`` takes whole trajectories (a :class:`~paraflame.dataset.TrajectorySet`
or an array ``(n_sequences, n_frames, N)`` plus one gamma per sequence) and
runs recurrent training. ``predict`` advances fields one time step.
"""
from __future__ import annotations

from dataclasses import asdict

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .evaluation import rollout
from .models import ParamEmbedding, build_model
from .models.pcnn import PcnnSpec
from .models.pfno import PfnoSpec
from .training import TrainConfig, evaluate_loss, train
from .validation import check_fields, check_positive_int, check_trajectories

__all__ = ["PFNORegressor", "PFNOStarRegressor", "PCNNRegressor"]


class _OperatorRegressor(RegressorMixin, BaseEstimator):
    _kind = ""

    def _spec(self, n: int):
        raise NotImplementedError

    def _train_config(self) -> TrainConfig:
        return TrainConfig(n=check_positive_int(self.rollout_steps, "rollout_steps"),
                           epochs=check_positive_int(self.epochs, "epochs", 0),
                           batch_size=self.batch_size, lr0=self.lr0,
                           weight_decay=self.weight_decay, sched_step=self.sched_step,
                           sched_gamma=self.sched_gamma, clip=self.clip,
                           seed=self.random_state, stride=self.stride,
                           decoupled_decay=self.decoupled_decay)

    def fit(self, X, y=None, gamma=None, eval_set=None):
        """Train on trajectories ``X``.

        ``y`` is ignored (targets are the later frames of each trajectory).
        ``eval_set`` is a TrajectorySet or an ``(X, gamma)`` pair used to pick
        the best epoch.
        """
        data = check_trajectories(X, gamma, self.equation)
        valid = None
        if eval_set is not None:
            valid = (eval_set if not isinstance(eval_set, tuple)
                     else check_trajectories(eval_set[0], eval_set[1], self.equation))
            if valid.n != data.n:
                raise ValueError(f"eval_set has N={valid.n}, training data has N={data.n}")
        config = self._train_config()
        continuing = self.warm_start and hasattr(self, "model_")
        if continuing:
            if self.model_.spec.n != data.n:
                raise ValueError(f"warm start with N={data.n}, fitted model has N={self.model_.spec.n}")
            start, opt = self.epochs_done_, self.optimizer_
            best = dict(best_loss=self.best_loss_, best_epoch=self.best_epoch_)
        else:
            embedding = ParamEmbedding.fit(np.unique(data.gammas), self.embedding)
            self.model_ = build_model(self._kind, asdict(self._spec(data.n)), embedding.to_dict(),
                                      seed=self.random_state)
            start, opt, best = 0, None, {}
            self.history_ = []
        result = train(self.model_, data, valid, config, start_epoch=start, optimizer=opt,
                       log=self._log if self.verbose else None, **best)
        self.history_ = self.history_ + result.history
        self.optimizer_ = result.optimizer
        self.epochs_done_ = result.epochs_done
        self.best_epoch_, self.best_loss_ = result.best_epoch, result.best_loss
        self.n_features_in_ = data.n
        return self

    @staticmethod
    def _log(row):
        print(f"epoch {row['epoch']:4d}  train {row['train_loss']:.6f}  valid {row['valid_loss']:.6f}")

    def predict(self, X, gamma=None):
        """One time step for each row of ``X`` (``(m, N)``, or ``(m, N + 1)`` with gamma last)."""
        check_is_fitted(self, "model_")
        fields, g = check_fields(X, gamma, self.n_features_in_)
        return self.model_.predict(fields, g)

    def rollout(self, phi0, gamma, steps: int):
        """``steps`` successive predictions from ``phi0`` (``(N,)`` or ``(B, N)``)."""
        check_is_fitted(self, "model_")
        return rollout(self.model_, phi0, gamma, check_positive_int(steps, "steps"))

    def score(self, X, y=None, gamma=None, sample_weight=None):
        """With ``y`` the usual R^2 of one-step predictions; with trajectories only,
        minus the mean recurrent loss (higher is better either way)."""
        if y is not None:
            fields, g = check_fields(X, gamma, getattr(self, "n_features_in_", None))
            return super().score(np.column_stack([fields, g]), y, sample_weight)
        check_is_fitted(self, "model_")
        data = check_trajectories(X, gamma, self.equation)
        cfg = self._train_config()
        return -evaluate_loss(self.model_, data, cfg.n, cfg.batch_size, cfg.stride)


_TRAIN_DOC = """
    rollout_steps : int, default=20
        Recurrent steps n per training sample.
    epochs : int, default=1000
        Epochs per call to ``fit``; with ``warm_start`` each call trains this many more.
    batch_size, lr0, weight_decay, sched_step, sched_gamma, clip, stride, decoupled_decay
        Optimizer settings; see :class:`paraflame.training.TrainConfig`.
    embedding : {"log", "linear"}, default="log"
        Rescaling of gamma onto the training range.
    equation : {"MS", "KS"}, default="KS"
        Tag used when ``fit`` receives plain arrays.
    random_state : int, default=0
        Seeds weight initialization and batch shuffling.
    warm_start : bool, default=False
        Continue from the fitted weights and optimizer state.
"""


class _TrainParams:
    def _set_train_params(self, rollout_steps, epochs, batch_size, lr0, weight_decay, sched_step,
                          sched_gamma, clip, stride, decoupled_decay, embedding, equation,
                          random_state, warm_start, verbose):
        self.rollout_steps = rollout_steps
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr0 = lr0
        self.weight_decay = weight_decay
        self.sched_step = sched_step
        self.sched_gamma = sched_gamma
        self.clip = clip
        self.stride = stride
        self.decoupled_decay = decoupled_decay
        self.embedding = embedding
        self.equation = equation
        self.random_state = random_state
        self.warm_start = warm_start
        self.verbose = verbose


class PFNORegressor(_TrainParams, _OperatorRegressor):
    """Parametric Fourier neural operator (band-scaled spectral weights).

    Parameters
    ----------
    layers, width, modes, bands, share_weights, use_skip, ratio_hidden
        Architecture; see :class:`paraflame.models.PfnoSpec`.
    """
    __doc__ += _TRAIN_DOC
    _kind = "pfno"

    def __init__(self, layers=4, width=30, modes=64, bands=6, share_weights=True, use_skip=False,
                 ratio_hidden=32, rollout_steps=20, epochs=1000, batch_size=800, lr0=0.0025,
                 weight_decay=1e-4, sched_step=100, sched_gamma=0.5, clip=50.0, stride=1,
                 decoupled_decay=False, embedding="log", equation="KS", random_state=0,
                 warm_start=False, verbose=False):
        self.layers = layers
        self.width = width
        self.modes = modes
        self.bands = bands
        self.share_weights = share_weights
        self.use_skip = use_skip
        self.ratio_hidden = ratio_hidden
        self._set_train_params(rollout_steps, epochs, batch_size, lr0, weight_decay, sched_step,
                               sched_gamma, clip, stride, decoupled_decay, embedding, equation,
                               random_state, warm_start, verbose)

    def _spec(self, n):
        return PfnoSpec(n=n, layers=self.layers, width=self.width, modes=self.modes,
                        bands=self.bands, share_weights=self.share_weights,
                        use_skip=self.use_skip, ratio_hidden=self.ratio_hidden)


class PFNOStarRegressor(PFNORegressor):
    """Fourier neural operator that sees gamma as an extra constant input channel."""
    _kind = "pfno_star"


class PCNNRegressor(_TrainParams, _OperatorRegressor):
    """Parametric convolutional encoder-decoder with per-level gamma scaling.

    Parameters
    ----------
    levels, channels, param_levels, convs_per_block, use_inception, ratio_hidden
        Architecture; see :class:`paraflame.models.PcnnSpec`.
    """
    __doc__ += _TRAIN_DOC
    _kind = "pcnn"

    def __init__(self, levels=6, channels=(16, 32, 64, 96, 96, 96), param_levels=4,
                 convs_per_block=2, use_inception=False, ratio_hidden=32, rollout_steps=20,
                 epochs=1000, batch_size=800, lr0=0.0025, weight_decay=1e-4, sched_step=100,
                 sched_gamma=0.5, clip=50.0, stride=1, decoupled_decay=False, embedding="log",
                 equation="KS", random_state=0, warm_start=False, verbose=False):
        self.levels = levels
        self.channels = channels
        self.param_levels = param_levels
        self.convs_per_block = convs_per_block
        self.use_inception = use_inception
        self.ratio_hidden = ratio_hidden
        self._set_train_params(rollout_steps, epochs, batch_size, lr0, weight_decay, sched_step,
                               sched_gamma, clip, stride, decoupled_decay, embedding, equation,
                               random_state, warm_start, verbose)

    def _spec(self, n):
        return PcnnSpec(n=n, levels=self.levels, channels=tuple(self.channels),
                        param_levels=self.param_levels, convs_per_block=self.convs_per_block,
                        use_inception=self.use_inception, ratio_hidden=self.ratio_hidden)
