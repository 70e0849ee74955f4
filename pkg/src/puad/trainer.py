"""Minibatch Adam training with validation-based early stopping."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet
from .errors import ConfigError, ContractError, NumericError
from .losses import PU_TAGS, LossKind, check_alpha, objective_for
from .models import copy_model, make_ae, make_classifier, pretrain_svdd

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "PU_BCE"
    alpha: float = 0.1
    learning_rate: float = 1e-4
    batch_size: int = 128
    max_epochs: int = 200
    weight_decay: float = 1e-3
    patience: int = 20
    seed: int = 0
    pretrain_epochs: int = 50

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive", "learning_rate")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be a positive integer", "batch_size")
        if self.max_epochs < 0 or self.pretrain_epochs < 0:
            raise ConfigError("max_epochs must be nonnegative", "max_epochs")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative", "weight_decay")
        if self.patience < 1:
            raise ConfigError("patience must be a positive integer", "patience")
        try:
            check_alpha(self.alpha)
            self.loss_kind
        except ContractError as exc:
            raise ConfigError(str(exc), "alpha" if "alpha" in str(exc) else "loss") from None

    @property
    def loss_kind(self) -> LossKind:
        return LossKind(self.loss, self.alpha if self.loss in PU_TAGS else None)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple = (32,)
    latent_dim: int = 2
    noise_sigma: float = 0.1

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be at least 1", "latent_dim")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be nonnegative", "noise_sigma")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be positive", "hidden")


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    train_obj: list = field(default_factory=list)
    val_obj: list = field(default_factory=list)
    best_epoch: int | None = None
    stopped_epoch: int = 0

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("epoch,train_obj,val_obj\n")
            for e, t, v in zip(self.epochs, self.train_obj, self.val_obj):
                fh.write(f"{e},{ad.format_float(t)},{ad.format_float(v)}\n")


# ------------------------------------------------------------ sampling

class Streams:
    """Independent generators per source of randomness, all derived from one seed.

    Keeping them separate means e.g. drawing anomaly batches does not shift
    the order in which unlabeled rows are visited.
    """

    NAMES = ("init", "order", "anomaly", "noise_u", "noise_a")

    def __init__(self, seed: int):
        children = np.random.SeedSequence(seed).spawn(len(self.NAMES))
        for name, child in zip(self.NAMES, children):
            setattr(self, name, np.random.default_rng(child))


def sample_minibatch(U, A, batch_size: int, rng, rng_a=None, need_anomalies=False):
    """Yield ``(batch_u, batch_a)`` pairs covering one epoch of ``U``.

    Rows of ``U`` are visited once each in random order; the last batch may
    be short. Anomaly batches have ``batch_size`` rows drawn with
    replacement from ``A`` (``None`` when ``A`` is absent or empty).
    """
    if len(U) == 0:
        raise ContractError("sample_minibatch: unlabeled set is empty")
    has_a = A is not None and len(A) > 0
    if need_anomalies and not has_a:
        raise ContractError("sample_minibatch: labeled anomalies required but none given")
    rng_a = rng if rng_a is None else rng_a
    order = rng.permutation(len(U))
    for start in range(0, len(U), batch_size):
        batch_u = U[order[start : start + batch_size]]
        batch_a = A[rng_a.integers(0, len(A), size=batch_size)] if has_a else None
        yield batch_u, batch_a


# ------------------------------------------------------------ Adam

def adam_step(params: ParameterSet, grads: dict, state: OptimizerState, lr: float, weight_decay: float = 0.0):
    """Bias-corrected Adam; ``weight_decay * p`` is added to each gradient first."""
    state.step += 1
    t = state.step
    c1 = 1.0 - BETA1**t
    c2 = 1.0 - BETA2**t
    for name, node in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name} at step {t}")
        if weight_decay:
            g = g + weight_decay * node.value
        if name not in state.m:
            state.m[name] = np.zeros_like(node.value)
            state.v[name] = np.zeros_like(node.value)
        m = state.m[name] = BETA1 * state.m[name] + (1.0 - BETA1) * g
        v = state.v[name] = BETA2 * state.v[name] + (1.0 - BETA2) * (g * g)
        node.value = node.value - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


# ------------------------------------------------------------ training

def _noise(model, kind: LossKind, shape, rng):
    sigma = getattr(model, "noise_sigma", 0.0)
    if kind.tag == "AE" or kind.model_kind != "ae" or sigma == 0:
        return None
    return sigma * rng.standard_normal(shape)


def whole_objective(kind: LossKind, model, U, A) -> float:
    """Noise-free full-batch objective (used for validation)."""
    return float(objective_for(kind, model, U, A if kind.needs_anomalies else None).value)


def train(model, data, cfg: TrainConfig):
    """Optimise a copy of ``model`` on ``data`` and return ``(best_model, history)``.

    After each epoch the same objective is evaluated on the validation split
    (the training split when validation is empty). Training stops once it
    has not improved for ``cfg.patience`` epochs.
    """
    kind = cfg.loss_kind
    if kind.needs_anomalies and len(data.anomalies) == 0:
        raise ContractError(f"{kind.tag} needs labeled anomalies but the anomaly set is empty")
    model = copy_model(model)
    history = TrainHistory()
    if cfg.max_epochs == 0:
        return model, history

    streams = Streams(cfg.seed)
    U = data.unlabeled
    A = data.anomalies if kind.needs_anomalies else None
    val_u = data.val_unlabeled if len(data.val_unlabeled) else U
    val_a = data.val_anomalies if len(data.val_anomalies) else data.anomalies

    state = OptimizerState()
    best_val, best_params, wait = np.inf, model.params.arrays(), 0
    for epoch in range(1, cfg.max_epochs + 1):
        total, count = 0.0, 0
        for step, (bu, ba) in enumerate(
            sample_minibatch(U, A, cfg.batch_size, streams.order, streams.anomaly, kind.needs_anomalies)
        ):
            nu = _noise(model, kind, bu.shape, streams.noise_u)
            na = _noise(model, kind, ba.shape, streams.noise_a) if ba is not None else None
            model.params.zero_grad()
            obj = objective_for(kind, model, bu, ba, nu, na)
            if not np.isfinite(obj.value):
                raise NumericError(f"non-finite objective at epoch {epoch}, step {step}")
            ad.backward(obj)
            try:
                adam_step(model.params, model.params.grads(), state, cfg.learning_rate, cfg.weight_decay)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, step {step}: {exc}") from None
            total += float(obj.value) * len(bu)
            count += len(bu)
        val = whole_objective(kind, model, val_u, val_a)
        if not np.isfinite(val):
            raise NumericError(f"non-finite validation objective at epoch {epoch}")
        history.epochs.append(epoch)
        history.train_obj.append(total / count)
        history.val_obj.append(val)
        history.stopped_epoch = epoch
        if val < best_val:
            best_val, best_params, wait = val, model.params.arrays(), 0
            history.best_epoch = epoch
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    model.params.load_arrays(best_params)
    return model, history


# ------------------------------------------------------------ model setup

def build_model(kind: LossKind, dim: int, model_cfg: ModelConfig, rng):
    """Freshly initialised backbone for ``kind`` (SVDD kinds get a bias-free AE to pretrain)."""
    hidden = tuple(model_cfg.hidden)
    if kind.model_kind == "classifier":
        return make_classifier(dim, hidden, rng)
    if kind.model_kind == "svdd":
        return make_ae(dim, hidden, model_cfg.latent_dim, rng, 0.0, bias=False)
    return make_ae(dim, hidden, model_cfg.latent_dim, rng, model_cfg.noise_sigma)


def fit(data, cfg: TrainConfig, model_cfg: ModelConfig = ModelConfig()):
    """Build, (pre)train and return ``(model, history)`` for ``cfg.loss``."""
    kind = cfg.loss_kind
    streams = Streams(cfg.seed)
    model = build_model(kind, data.dim, model_cfg, streams.init)
    if kind.model_kind == "svdd":
        model, _ = pretrain_svdd(model, data, cfg)
    return train(model, data, cfg)
