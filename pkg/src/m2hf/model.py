"""Parameter registry and per-level similarity computation.

A model owns one weighted-interaction head pair per trainable level plus
the audio fusion (bilinear + gate) and motion fusion (encoders + gate)
parameters.  ``level_similarities`` maps caption/video bundles to the
four similarity matrices; the text level is parameter-free and never
carries gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .audiofusion import MfbParams, SeParams, audio_guided_visual
from .featureio import CaptionBundle, Dims, FeatureBundle
from .motionfusion import MotionLevelParams, motion_guided_visual
from .textlevel import LexiconConfig, default_lexicon, text_similarity_matrix
from .tensor import Tensor
from .wti import SimilarityMatrix, WtiParams, wti_matrix

TRAINABLE_LEVELS = ("visual", "audio", "motion")
ALL_LEVELS = ("visual", "audio", "motion", "text")


@dataclass
class ModelParams:
    dims: Dims
    wti_visual: WtiParams
    wti_audio: WtiParams
    wti_motion: WtiParams
    mfb: MfbParams
    se_audio: SeParams
    motion_level: MotionLevelParams

    def registry(self) -> dict[str, Tensor]:
        """Flat name -> tensor map; every trainable tensor exactly once."""
        out = {}
        for level, wti in (("visual", self.wti_visual), ("audio", self.wti_audio),
                           ("motion", self.wti_motion)):
            for name, t in wti.tensors().items():
                out[f"wti_{level}.{name}"] = t
        for name, t in self.mfb.tensors().items():
            out[f"mfb.{name}"] = t
        for name, t in self.se_audio.tensors().items():
            out[f"se_audio.{name}"] = t
        for name, t in self.motion_level.tensors().items():
            out[f"motion.{name}"] = t
        return out

    def level_partition(self) -> dict[str, list[str]]:
        """Registry names owned by each trainable level (pairwise disjoint)."""
        reg = self.registry()
        parts = {
            "visual": [n for n in reg if n.startswith("wti_visual.")],
            "audio": [n for n in reg if n.startswith(("wti_audio.", "mfb.", "se_audio."))],
            "motion": [n for n in reg if n.startswith(("wti_motion.", "motion."))],
        }
        return parts


def build_model(dims: Dims, seed: int, mfb_k: int = 2, dropout_rate: float = 0.1,
                wti_literal: bool = False) -> ModelParams:
    if dims.d_v != dims.d_c:
        raise ValueError("model requires d_v == d_c (visual level compares raw features)")
    rngs = T.split_rngs(seed, 4)
    return ModelParams(
        dims=dims,
        wti_visual=WtiParams.init(dims.d_c, dims.d_v, wti_literal),
        wti_audio=WtiParams.init(dims.d_c, dims.d_v, wti_literal),
        wti_motion=WtiParams.init(dims.d_c, dims.d_v, wti_literal),
        mfb=MfbParams.init(dims.d_a, dims.d_v, rngs[0], k=mfb_k, d=dims.d_v,
                           dropout_rate=dropout_rate),
        se_audio=SeParams.init(dims.d_v, rngs[1]),
        motion_level=MotionLevelParams.init(dims.d_m, dims.d_v, rngs[2]),
    )


def level_similarities(params: ModelParams, captions: list[CaptionBundle],
                       videos: list[FeatureBundle], levels=ALL_LEVELS,
                       lexicon: LexiconConfig | None = None, training: bool = False,
                       rng=None, threads: int = 1) -> dict[str, SimilarityMatrix]:
    """Similarity matrices (captions x videos) for the requested levels."""
    out: dict[str, SimilarityMatrix] = {}
    cap_tokens = [c.tokens for c in captions]
    if "visual" in levels:
        out["visual"] = wti_matrix(cap_tokens, [v.visual for v in videos],
                                   params.wti_visual, level="visual", threads=threads)
    if "audio" in levels:
        guided = [audio_guided_visual(v.audio, v.visual, params.mfb, params.se_audio,
                                      training=training, rng=rng) for v in videos]
        out["audio"] = wti_matrix(cap_tokens, guided, params.wti_audio,
                                  level="audio", threads=threads)
    if "motion" in levels:
        guided = [motion_guided_visual(v.motion, v.visual, params.motion_level,
                                       training=training) for v in videos]
        out["motion"] = wti_matrix(cap_tokens, guided, params.wti_motion,
                                   level="motion", threads=threads)
    if "text" in levels:
        out["text"] = text_similarity_matrix(captions, videos,
                                             lexicon or default_lexicon())
    return out
