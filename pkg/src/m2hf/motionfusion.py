"""Motion-guided visual features via transformer-encoder fusion.

Motion frames are projected to the visual width, both modalities pass a
self-attention encoder, then a cross encoder whose keys/values are the
raw modality concatenated in time with the other modality's
self-attentive frames, then a fusion encoder whose query is the
element-wise product of the two cross features.  A squeeze-and-excitation
gate on the fusion output scales the raw visual frames.

The encoder is pre-projection attention: q, k, v are first mapped by
wq/wk/wv, multi-head attention (4 heads, head width d/4) runs on the
projected features, and the residuals use the projected query.  No
positional encoding is added, so the whole level is covariant under
frame permutations applied jointly to both modalities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .audiofusion import SeParams, se_gate
from .tensor import ShapeMismatchError, Tensor

N_HEADS = 4
FFN_EXPANSION = 4


@dataclass
class EncoderParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor            # multi-head output projection d x d
    ffn1: Tensor          # d x 4d
    ffn2: Tensor          # 4d x d
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor

    @staticmethod
    def init(d: int, rng) -> "EncoderParams":
        if d % N_HEADS != 0:
            raise ValueError(f"EncoderParams: width {d} not divisible by {N_HEADS} heads")
        s = 1.0 / np.sqrt(d)
        return EncoderParams(
            wq=T.normal((d, d), rng, std=s, requires_grad=True),
            wk=T.normal((d, d), rng, std=s, requires_grad=True),
            wv=T.normal((d, d), rng, std=s, requires_grad=True),
            wo=T.normal((d, d), rng, std=s, requires_grad=True),
            ffn1=T.normal((d, FFN_EXPANSION * d), rng, std=s, requires_grad=True),
            ffn2=T.normal((FFN_EXPANSION * d, d), rng,
                          std=1.0 / np.sqrt(FFN_EXPANSION * d), requires_grad=True),
            ln1_gamma=T.ones((d,), requires_grad=True),
            ln1_beta=T.zeros((d,), requires_grad=True),
            ln2_gamma=T.ones((d,), requires_grad=True),
            ln2_beta=T.zeros((d,), requires_grad=True),
        )

    def tensors(self):
        return {"wq": self.wq, "wk": self.wk, "wv": self.wv, "wo": self.wo,
                "ffn1": self.ffn1, "ffn2": self.ffn2,
                "ln1_gamma": self.ln1_gamma, "ln1_beta": self.ln1_beta,
                "ln2_gamma": self.ln2_gamma, "ln2_beta": self.ln2_beta}


@dataclass
class MotionLevelParams:
    motion_proj: Tensor  # d_m x d_v
    enc_self_m: EncoderParams
    enc_self_v: EncoderParams
    enc_cross_m: EncoderParams
    enc_cross_v: EncoderParams
    enc_fuse: EncoderParams
    se: SeParams

    @staticmethod
    def init(d_m: int, d_v: int, rng) -> "MotionLevelParams":
        return MotionLevelParams(
            motion_proj=T.normal((d_m, d_v), rng, std=1.0 / np.sqrt(d_m), requires_grad=True),
            enc_self_m=EncoderParams.init(d_v, rng),
            enc_self_v=EncoderParams.init(d_v, rng),
            enc_cross_m=EncoderParams.init(d_v, rng),
            enc_cross_v=EncoderParams.init(d_v, rng),
            enc_fuse=EncoderParams.init(d_v, rng),
            se=SeParams.init(d_v, rng))

    def tensors(self):
        out = {"motion_proj": self.motion_proj}
        for prefix, enc in (("enc_self_m", self.enc_self_m), ("enc_self_v", self.enc_self_v),
                            ("enc_cross_m", self.enc_cross_m), ("enc_cross_v", self.enc_cross_v),
                            ("enc_fuse", self.enc_fuse)):
            for name, t in enc.tensors().items():
                out[f"{prefix}.{name}"] = t
        for name, t in self.se.tensors().items():
            out[f"se.{name}"] = t
        return out


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, wo: Tensor) -> Tensor:
    """Scaled dot-product attention over N_HEADS column blocks."""
    d = q.shape[1]
    hw = d // N_HEADS
    heads = []
    for h in range(N_HEADS):
        qh = T.slice_cols(q, h * hw, (h + 1) * hw)
        kh = T.slice_cols(k, h * hw, (h + 1) * hw)
        vh = T.slice_cols(v, h * hw, (h + 1) * hw)
        att = T.softmax(T.mul(T.matmul(qh, T.transpose(kh)), 1.0 / np.sqrt(hw)), axis=1)
        heads.append(T.matmul(att, vh))
    return T.matmul(T.concat(heads, axis=1), wo)


def encoder(q: Tensor, k: Tensor, v: Tensor, p: EncoderParams) -> Tensor:
    """Projected attention block: LN(X + FFN(LN(X + Q~)))-style residual stack."""
    if not (q.shape[1] == k.shape[1] == v.shape[1]):
        raise ShapeMismatchError(
            f"encoder: widths differ, {q.shape} / {k.shape} / {v.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeMismatchError(
            f"encoder: key rows {k.shape[0]} != value rows {v.shape[0]}")
    qt = T.matmul(q, p.wq)
    kt = T.matmul(k, p.wk)
    vt = T.matmul(v, p.wv)
    x = multi_head_attention(qt, kt, vt, p.wo)
    inner = T.layer_norm(T.add(x, qt), p.ln1_gamma, p.ln1_beta)
    y = T.matmul(T.relu(T.matmul(inner, p.ffn1)), p.ffn2)
    return T.layer_norm(T.add(x, y), p.ln2_gamma, p.ln2_beta)


def intra_attention(x: Tensor, p: EncoderParams) -> Tensor:
    return encoder(x, x, x, p)


def inter_attention(x: Tensor, other_self: Tensor, p: EncoderParams) -> Tensor:
    """Cross encoder: keys/values are x and the other modality's
    self-attentive frames concatenated along time (length 2F)."""
    kv = T.concat([x, other_self], axis=0)
    return encoder(x, kv, kv, p)


def fuse_motion_visual(m_cross: Tensor, v_cross: Tensor, p: EncoderParams) -> Tensor:
    kv = T.concat([m_cross, v_cross], axis=0)
    return encoder(T.mul(m_cross, v_cross), kv, kv, p)


def motion_guided_visual(motion: Tensor, visual: Tensor, p: MotionLevelParams,
                         training: bool = False) -> Tensor:
    """Full chain from raw motion/visual frames to gated visual frames.

    `training` is accepted for interface symmetry with the audio level;
    this level has no dropout.
    """
    m = T.matmul(motion, p.motion_proj)
    m_self = intra_attention(m, p.enc_self_m)
    v_self = intra_attention(visual, p.enc_self_v)
    m_cross = inter_attention(m, v_self, p.enc_cross_m)
    v_cross = inter_attention(visual, m_self, p.enc_cross_v)
    fused = fuse_motion_visual(m_cross, v_cross, p.enc_fuse)
    weights = se_gate(fused, p.se)
    return T.mul(weights, visual)
