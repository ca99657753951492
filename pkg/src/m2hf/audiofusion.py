"""Audio-guided visual features: factorized bilinear fusion plus channel gating.

Audio and visual frames are projected to a shared k*d space, multiplied
element-wise, sum-pooled down to d with kernel/stride k, and (in
training) dropped out.  The fused frames pass signed-sqrt and L2
normalization, then a squeeze-and-excitation gate turns them into
per-channel weights in (0, 1) that scale the raw visual frames.

The latent width d equals the visual width so the fused frames feed the
gate directly.  Projections carry no bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeMismatchError, Tensor


@dataclass
class MfbParams:
    psi: Tensor  # d_a x (k*d)
    phi: Tensor  # d_v x (k*d)
    k: int
    d: int
    dropout_rate: float = 0.1

    @staticmethod
    def init(d_a: int, d_v: int, rng, k: int = 2, d: int | None = None,
             dropout_rate: float = 0.1) -> "MfbParams":
        if d is None:
            d = d_v
        if k < 1 or d < 1 or not 0.0 <= dropout_rate < 1.0:
            raise ValueError("MfbParams: need k >= 1, d >= 1, 0 <= dropout_rate < 1")
        scale_a = 1.0 / np.sqrt(d_a)
        scale_v = 1.0 / np.sqrt(d_v)
        return MfbParams(
            psi=T.normal((d_a, k * d), rng, std=scale_a, requires_grad=True),
            phi=T.normal((d_v, k * d), rng, std=scale_v, requires_grad=True),
            k=k, d=d, dropout_rate=dropout_rate)

    def tensors(self):
        return {"psi": self.psi, "phi": self.phi}


@dataclass
class SeParams:
    w1: Tensor  # d_v x d, d = d_v / 2
    w2: Tensor  # d x d_v

    @staticmethod
    def init(d_v: int, rng) -> "SeParams":
        if d_v % 2 != 0:
            raise ValueError(f"SeParams: width {d_v} must be even (hidden = d_v/2)")
        d = d_v // 2
        return SeParams(w1=T.normal((d_v, d), rng, std=1.0 / np.sqrt(d_v), requires_grad=True),
                        w2=T.normal((d, d_v), rng, std=1.0 / np.sqrt(d), requires_grad=True))

    def tensors(self):
        return {"w1": self.w1, "w2": self.w2}


def mfb_fuse(audio: Tensor, visual: Tensor, params: MfbParams,
             training: bool = False, rng=None) -> Tensor:
    """Project both modalities, multiply, sum-pool k*d -> d, dropout."""
    if audio.shape[0] != visual.shape[0]:
        raise ShapeMismatchError(
            f"mfb_fuse: frame counts differ, audio {audio.shape} vs visual {visual.shape}")
    if audio.shape[1] != params.psi.shape[0] or visual.shape[1] != params.phi.shape[0]:
        raise ShapeMismatchError(
            f"mfb_fuse: widths {audio.shape[1]}/{visual.shape[1]} do not match "
            f"projections {params.psi.shape[0]}/{params.phi.shape[0]}")
    product = T.mul(T.matmul(audio, params.psi), T.matmul(visual, params.phi))
    pooled = T.sum_pool(product, params.k)
    if training and params.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("mfb_fuse: training with dropout needs an rng")
        pooled = T.dropout(pooled, params.dropout_rate, rng, training=True)
    return pooled


def power_l2_normalize(x: Tensor) -> Tensor:
    """Signed sqrt per element, then unit L2 norm per frame row."""
    return T.l2_normalize(T.signed_sqrt(x), axis=1)


def se_gate(fused: Tensor, params: SeParams) -> Tensor:
    """Channel-wise weights sigmoid(relu(fused @ w1) @ w2), each in (0, 1)."""
    if fused.shape[1] != params.w1.shape[0]:
        raise ShapeMismatchError(
            f"se_gate: width {fused.shape[1]} != w1 input {params.w1.shape[0]}")
    return T.sigmoid(T.matmul(T.relu(T.matmul(fused, params.w1)), params.w2))


def audio_guided_visual(audio: Tensor, visual: Tensor, mfb: MfbParams,
                        se: SeParams, training: bool = False, rng=None) -> Tensor:
    """Gate the raw visual frames by the fused audio-visual channel weights.

    Padded all-ones audio is accepted; the result is then a deterministic
    function of the visual features alone.
    """
    fused = mfb_fuse(audio, visual, mfb, training=training, rng=rng)
    weights = se_gate(power_l2_normalize(fused), se)
    return T.mul(weights, visual)
