"""Weighted token-wise interaction between caption tokens and video frames.

A caption-side head and a video-side head each map their (normalized)
tokens to one scalar per token; a softmax across tokens turns those into
weights.  The score is the mean of two directed terms: for each caption
token, the best cosine against any frame, weighted by the caption
weights; and symmetrically for frames against tokens.

Both sides are L2-normalized in both directions by default.  Setting
``literal_c2v_unnormalized`` keeps the video frames unnormalized in the
caption-to-video term only.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .tensor import ShapeMismatchError, Tensor


@dataclass
class WtiParams:
    caption_weight_head: Tensor  # d_c x 1
    video_weight_head: Tensor    # d_v x 1
    # literal form of the published interaction, which skips frame
    # normalization in the caption-to-video term
    literal_c2v_unnormalized: bool = False

    @staticmethod
    def init(d_c: int, d_v: int, literal_c2v_unnormalized: bool = False) -> "WtiParams":
        # zero init: uniform token weights at step 0
        return WtiParams(
            caption_weight_head=T.zeros((d_c, 1), requires_grad=True),
            video_weight_head=T.zeros((d_v, 1), requires_grad=True),
            literal_c2v_unnormalized=literal_c2v_unnormalized,
        )

    def tensors(self):
        return {"caption_weight_head": self.caption_weight_head,
                "video_weight_head": self.video_weight_head}


@dataclass
class SimilarityMatrix:
    level: str  # visual | audio | motion | text
    scores: Tensor  # N_c x N_v


def wti_score(caption: Tensor, video: Tensor, params: WtiParams) -> Tensor:
    """Scalar similarity between one caption (T x d) and one video (F x d)."""
    if caption.shape[1] != video.shape[1]:
        raise ShapeMismatchError(
            f"wti_score: caption width {caption.shape[1]} != video width {video.shape[1]}")
    c = T.l2_normalize(caption, axis=1)
    v = T.l2_normalize(video, axis=1)

    c_weights = T.softmax(T.matmul(c, params.caption_weight_head), axis=0)  # T x 1
    v_weights = T.softmax(T.matmul(v, params.video_weight_head), axis=0)    # F x 1

    cos = T.matmul(c, T.transpose(v))  # T x F
    if params.literal_c2v_unnormalized:
        c2v = T.tsum(T.mul(T.tmax(T.matmul(c, T.transpose(video)), axis=1),
                           T.tsum(c_weights, axis=1)))
    else:
        c2v = T.tsum(T.mul(T.tmax(cos, axis=1), T.tsum(c_weights, axis=1)))
    v2c = T.tsum(T.mul(T.tmax(T.transpose(cos), axis=1), T.tsum(v_weights, axis=1)))
    return T.mul(T.add(c2v, v2c), 0.5)


def wti_matrix(captions, videos, params: WtiParams, level: str = "visual",
               threads: int = 1) -> SimilarityMatrix:
    """Pairwise wti_score grid; rows are captions, columns are videos.

    `captions` and `videos` are lists of token/frame tensors.  `threads`
    caps inference-time parallelism; gradient-carrying inputs are always
    scored serially so the graph stays deterministic.
    """
    if not captions or not videos:
        raise ShapeMismatchError("wti_matrix: empty caption or video list")
    needs_grad = (params.caption_weight_head.requires_grad
                  or any(t.requires_grad for t in list(captions) + list(videos)))
    pairs = [(i, j) for i in range(len(captions)) for j in range(len(videos))]
    if threads > 1 and not needs_grad:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            cells = list(pool.map(
                lambda ij: wti_score(captions[ij[0]], videos[ij[1]], params), pairs))
    else:
        cells = [wti_score(captions[i], videos[j], params) for i, j in pairs]
    scores = T.stack_scalars(cells, (len(captions), len(videos)))
    return SimilarityMatrix(level=level, scores=scores)
