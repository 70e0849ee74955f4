"""Per-point losses and dataset objectives, including the PU risk with abs correction.

Per-point losses map a Node of base losses (one per row) to a Node of the
same shape. Objectives reduce those to a scalar Node.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ContractError, DomainError
from .models import AeModel, ClassifierModel, SvddModel, base_loss

BCE_FLOOR = 1e-7
SAD_FLOOR = 1e-6

PU_TAGS = ("PU_BCE", "PU_SAD", "PU_LOGISTIC")
TAGS = ("AE", "ABC", "DAE", "SVDD", "SAD", *PU_TAGS)
SUPERVISED_TAGS = ("ABC", "SAD", *PU_TAGS)


def check_alpha(alpha) -> float:
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha


@dataclass(frozen=True)
class LossKind:
    tag: str
    alpha: float | None = None

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ContractError(f"unknown loss kind {self.tag!r}; expected one of {', '.join(TAGS)}")
        if self.is_pu:
            if self.alpha is None:
                raise ContractError(f"{self.tag} needs alpha")
            object.__setattr__(self, "alpha", check_alpha(self.alpha))
        elif self.alpha is not None:
            raise ContractError(f"{self.tag} does not take alpha")

    @property
    def is_pu(self) -> bool:
        return self.tag in PU_TAGS

    @property
    def needs_anomalies(self) -> bool:
        return self.tag in SUPERVISED_TAGS

    @property
    def model_kind(self) -> str:
        if self.tag in ("SVDD", "SAD", "PU_SAD"):
            return "svdd"
        if self.tag == "PU_LOGISTIC":
            return "classifier"
        return "ae"


def _check_label(y):
    if y not in (0, 1):
        raise ContractError(f"label must be 0 or 1, got {y!r}")


# -------------------------------------------------------- per-point losses

def bce_point_loss(ell, y: int) -> Node:
    """-log p(y|x) with p(normal|x) = exp(-ell).

    For y=1 the base loss is floored at ``BCE_FLOOR`` so the log stays finite.
    """
    _check_label(y)
    ell = ad.constant(ell)
    if np.any(ell.value < 0):
        raise DomainError("bce_point_loss: base loss must be nonnegative")
    if y == 0:
        return ell
    return ad.neg_log1mexp(ad.clamp_min(ell, BCE_FLOOR))


def sad_point_loss(ell_tilde, y: int) -> Node:
    """ell for y=0, 1/max(ell, SAD_FLOOR) for y=1."""
    _check_label(y)
    ell_tilde = ad.constant(ell_tilde)
    if np.any(ell_tilde.value < 0):
        raise DomainError("sad_point_loss: base loss must be nonnegative")
    if y == 0:
        return ell_tilde
    return ad.reciprocal(ad.clamp_min(ell_tilde, SAD_FLOOR))


def logistic_point_loss(logit, y: int) -> Node:
    """softplus(-(2y - 1) * logit)."""
    _check_label(y)
    logit = ad.constant(logit)
    return ad.softplus(logit if y == 0 else ad.scale(logit, -1.0))


PointLoss = Callable[[Node, int], Node]

POINT_LOSSES: dict[str, PointLoss] = {
    "bce": bce_point_loss,
    "sad": sad_point_loss,
    "logistic": logistic_point_loss,
}


# ---------------------------------------------------------- objectives

def mean_objective(base: Node, point_loss: PointLoss | None = None, y: int = 0) -> Node:
    """Mean of ``point_loss(base, y)``, or of ``base`` itself when no point loss is given."""
    base = ad.constant(base)
    if base.value.size == 0:
        raise ContractError("mean_objective: empty batch")
    return ad.mean(base if point_loss is None else point_loss(base, y))


class PuTerms(NamedTuple):
    la_plus: Node
    lu_minus: Node
    la_minus: Node


def pu_terms(base_u: Node, base_a: Node, point_loss: PointLoss) -> PuTerms:
    """The three empirical risks of the PU decomposition from per-row base losses."""
    base_u, base_a = ad.constant(base_u), ad.constant(base_a)
    if base_u.value.size == 0 or base_a.value.size == 0:
        raise ContractError("pu_terms: both batches must be non-empty")
    return PuTerms(
        la_plus=ad.mean(point_loss(base_a, 1)),
        lu_minus=ad.mean(point_loss(base_u, 0)),
        la_minus=ad.mean(point_loss(base_a, 0)),
    )


def pu_objective(alpha, terms: PuTerms) -> Node:
    """alpha * L_A^+ + |L_U^- - alpha * L_A^-|."""
    alpha = check_alpha(alpha)
    normal_risk = ad.sub(terms.lu_minus, ad.scale(terms.la_minus, alpha))
    return ad.add(ad.scale(terms.la_plus, alpha), ad.abs_(normal_risk))


def pu_unbiased_estimate(alpha, terms: PuTerms) -> float:
    """The uncorrected estimator alpha * L_A^+ + L_U^- - alpha * L_A^- (value only)."""
    alpha = check_alpha(alpha)
    return float(alpha * terms.la_plus.value + terms.lu_minus.value - alpha * terms.la_minus.value)


def pn_ideal_objective(alpha, base_a: Node, base_n: Node, point_loss: PointLoss) -> Node:
    """alpha * E_A[loss(., 1)] + (1 - alpha) * E_N[loss(., 0)] with true normal samples."""
    alpha = check_alpha(alpha)
    base_a, base_n = ad.constant(base_a), ad.constant(base_n)
    if base_a.value.size == 0 or base_n.value.size == 0:
        raise ContractError("pn_ideal_objective: both batches must be non-empty")
    return ad.add(
        ad.scale(ad.mean(point_loss(base_a, 1)), alpha),
        ad.scale(ad.mean(point_loss(base_n, 0)), 1.0 - alpha),
    )


# ------------------------------------------------------------ dispatch

_MODEL_TYPES = {"ae": AeModel, "svdd": SvddModel, "classifier": ClassifierModel}
_PU_POINT_LOSS = {"PU_BCE": bce_point_loss, "PU_SAD": sad_point_loss, "PU_LOGISTIC": logistic_point_loss}


def objective_for(kind: LossKind, model, batch_u, batch_a=None, noise_u=None, noise_a=None) -> Node:
    """Training objective of ``kind`` on one minibatch.

    ``noise_u``/``noise_a`` are DAE input perturbations; they are only used by
    autoencoder kinds other than plain AE.
    """
    expected = _MODEL_TYPES[kind.model_kind]
    if not isinstance(model, expected):
        raise ContractError(f"{kind.tag} needs a {expected.__name__}, got {type(model).__name__}")
    if kind.needs_anomalies and (batch_a is None or len(batch_a) == 0):
        raise ContractError(f"{kind.tag} needs a non-empty labeled-anomaly batch")
    if kind.tag == "AE":
        noise_u = noise_a = None

    base_u = base_loss(model, batch_u, noise_u)
    tag = kind.tag
    if tag in ("AE", "DAE", "SVDD"):
        return mean_objective(base_u)
    base_a = base_loss(model, batch_a, noise_a)
    if tag == "ABC":
        return ad.add(mean_objective(base_u, bce_point_loss, 0), mean_objective(base_a, bce_point_loss, 1))
    if tag == "SAD":
        return ad.add(mean_objective(base_u, sad_point_loss, 0), mean_objective(base_a, sad_point_loss, 1))
    return pu_objective(kind.alpha, pu_terms(base_u, base_a, _PU_POINT_LOSS[tag]))
