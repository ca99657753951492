"""Contrastive training objectives: dual softmax terms and level balancing.

``dsl_per_sample`` turns a square in-batch similarity matrix (diagonal =
matched pairs) into per-sample log-probability terms.  A gradient-stopped
softmax prior from the transposed direction rescales the logits before
the cross-entropy in each direction; the scalar level loss is the
negated batch mean.  ``mmbl`` combines the per-sample terms of several
levels element-wise (min by default, or avg/max/add) and negates the
mean.  Gradients come from the reverse-mode engine in ``tensor``; for
the min fusion only the attaining level receives gradient, with ties
broken by level order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeMismatchError, Tensor
from .wti import SimilarityMatrix

FUSION_MODES = ("min", "avg", "max", "add")
LOSS_LEVEL_ORDER = ("visual", "audio", "motion")  # tie-break order for min fusion


@dataclass
class LossConfig:
    lam: float = 100.0   # prior temperature
    eta: float = 100.0   # logit scale
    fusion: str = "min"
    prior_grad: bool = False  # differentiate through the priors as well

    def __post_init__(self):
        if self.lam <= 0 or self.eta <= 0:
            raise ValueError("LossConfig: lam and eta must be positive")
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"LossConfig: fusion must be one of {FUSION_MODES}")


@dataclass
class PerSampleLosses:
    level: str
    values: Tensor  # length-B vector of log-probability terms


def dsl_per_sample(s: SimilarityMatrix, cfg: LossConfig) -> PerSampleLosses:
    """Per-sample dual-softmax log-probability terms for one level."""
    scores = s.scores
    n, m = scores.shape
    if n != m:
        raise ShapeMismatchError(f"dsl_per_sample: matrix is {scores.shape}, not square")
    scaled = T.mul(scores, cfg.lam)
    prior_v2c = T.softmax(scaled, axis=0)  # column-stochastic
    prior_c2v = T.softmax(scaled, axis=1)  # row-stochastic
    if not cfg.prior_grad:
        prior_v2c = prior_v2c.detach()
        prior_c2v = prior_c2v.detach()

    logits_v2c = T.mul(T.mul(scores, prior_v2c), cfg.eta)
    logits_c2v = T.mul(T.mul(scores, prior_c2v), cfg.eta)
    l_v2c = T.diag(T.log_softmax(logits_v2c, axis=1))
    l_c2v = T.diag(T.log_softmax(logits_c2v, axis=0))
    return PerSampleLosses(level=s.level, values=T.add(l_v2c, l_c2v))


def level_loss(per_sample: PerSampleLosses) -> Tensor:
    """Scalar loss of one level: negated mean of the per-sample terms."""
    return T.mul(T.tmean(per_sample.values), -1.0)


def mmbl(levels: list[PerSampleLosses], cfg: LossConfig) -> Tensor:
    """Balanced scalar loss across levels: -mean of fused per-sample terms."""
    if not levels:
        raise ValueError("mmbl: no levels")
    b = levels[0].values.shape[0]
    for lv in levels:
        if lv.values.shape[0] != b:
            raise ShapeMismatchError(
                f"mmbl: batch sizes differ ({lv.values.shape[0]} vs {b})")
    order = {name: i for i, name in enumerate(LOSS_LEVEL_ORDER)}
    levels = sorted(levels, key=lambda lv: order.get(lv.level, len(order)))

    if cfg.fusion == "add":
        fused = levels[0].values
        for lv in levels[1:]:
            fused = T.add(fused, lv.values)
    elif cfg.fusion == "avg":
        fused = levels[0].values
        for lv in levels[1:]:
            fused = T.add(fused, lv.values)
        fused = T.mul(fused, 1.0 / len(levels))
    else:
        stackarr = np.stack([lv.values.array for lv in levels])  # L x B
        if cfg.fusion == "min":
            pick = stackarr.argmin(axis=0)
        else:
            pick = stackarr.argmax(axis=0)
        # first occurrence in level order decides ties; gradient flows
        # only through the attaining level
        fused = None
        for li, lv in enumerate(levels):
            mask = Tensor((pick == li).astype(np.float64), op="fusion_mask")
            contrib = T.mul(lv.values, mask)
            fused = contrib if fused is None else T.add(fused, contrib)
    return T.mul(T.tmean(fused), -1.0)


def gradients(loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Backpropagate a scalar loss and collect gradients per named tensor."""
    for t in params.values():
        t.zero_grad()
    loss.backward()
    return {name: (np.zeros_like(t.array) if t.grad is None else t.grad)
            for name, t in params.items()}
