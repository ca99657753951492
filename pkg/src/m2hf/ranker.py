"""Rank matrices, element-wise min fusion, and retrieval metrics.

Ranks use competition ("1224") ordering: a candidate's rank is one plus
the number of strictly better scores, so ties share the better rank.
Fusion takes the entry-wise minimum of per-level rank matrices; fused
rows are no longer permutations (several candidates can hold rank 1),
which the ``fused_rank1_multiplicity`` diagnostic quantifies.

Reports serialize as tab-separated lines: direction, level, metric,
value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .wti import SimilarityMatrix

DIRECTIONS = ("t2v", "v2t")
FUSE_OPS = ("min", "avg", "max", "add")
RECALL_NS = (1, 5, 10)


@dataclass
class RankMatrix:
    ranks: np.ndarray  # N_c x N_v, integer competition ranks per query
    direction: str     # t2v: queries are caption rows; v2t: queries are video columns
    level: str = "fused"


@dataclass
class MetricsSlice:
    recall: dict[int, float]
    mdr: float
    mnr: float

    def as_dict(self):
        out = {f"R@{n}": self.recall[n] for n in RECALL_NS}
        out["MdR"] = self.mdr
        out["MnR"] = self.mnr
        return out


@dataclass
class RetrievalReport:
    # (direction, level) -> MetricsSlice; level "fused" for the combined result
    slices: dict[tuple[str, str], MetricsSlice] = field(default_factory=dict)
    padded_audio: int = 0
    padded_motion: int = 0
    fused_rank1_multiplicity: dict[str, float] = field(default_factory=dict)

    def lines(self):
        out = []
        for (direction, level), s in sorted(self.slices.items()):
            for metric, value in s.as_dict().items():
                out.append(f"{direction}\t{level}\t{metric}\t{value:.6f}")
        for direction, v in sorted(self.fused_rank1_multiplicity.items()):
            out.append(f"{direction}\tfused\trank1_multiplicity\t{v:.6f}")
        out.append(f"-\t-\tpadded_audio\t{self.padded_audio}")
        out.append(f"-\t-\tpadded_motion\t{self.padded_motion}")
        return out

    def text(self):
        return "\n".join(self.lines()) + "\n"


def ranks_from_similarity(s: SimilarityMatrix, direction: str) -> RankMatrix:
    """Competition ranks by descending score, per caption row (t2v) or
    video column (v2t)."""
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    scores = np.asarray(s.scores.array, dtype=np.float64)
    ranks = np.empty(scores.shape, dtype=np.int64)
    if direction == "t2v":
        for i in range(scores.shape[0]):
            row = scores[i]
            ranks[i] = 1 + (row[None, :] > row[:, None]).sum(axis=1)
    else:
        for j in range(scores.shape[1]):
            col = scores[:, j]
            ranks[:, j] = 1 + (col[None, :] > col[:, None]).sum(axis=1)
    return RankMatrix(ranks=ranks, direction=direction, level=s.level)


def fuse_ranks(levels: list[RankMatrix], op: str = "min") -> RankMatrix:
    """Entry-wise combination of per-level rank matrices (min is the default)."""
    if not levels:
        raise ValueError("fuse_ranks: no levels")
    if op not in FUSE_OPS:
        raise ValueError(f"fuse_ranks: op must be one of {FUSE_OPS}")
    shape, direction = levels[0].ranks.shape, levels[0].direction
    for lv in levels:
        if lv.ranks.shape != shape or lv.direction != direction:
            raise ValueError("fuse_ranks: shape or direction mismatch across levels")
    stack = np.stack([lv.ranks for lv in levels])
    if op == "min":
        fused = stack.min(axis=0)
    elif op == "max":
        fused = stack.max(axis=0)
    elif op == "add":
        fused = stack.sum(axis=0)
    else:
        fused = stack.mean(axis=0)
    return RankMatrix(ranks=fused, direction=direction, level="fused")


def mmbf(levels: list[RankMatrix]) -> RankMatrix:
    """Entry-wise minimum across levels (balance fusion)."""
    return fuse_ranks(levels, "min")


def gt_ranks(r: RankMatrix, gt: dict[int, int]) -> np.ndarray:
    """Rank of each query's single correct candidate."""
    n_queries = r.ranks.shape[0] if r.direction == "t2v" else r.ranks.shape[1]
    out = np.empty(n_queries, dtype=np.float64)
    for q in range(n_queries):
        if q not in gt:
            raise KeyError(f"query {q} has no ground-truth candidate")
        out[q] = r.ranks[q, gt[q]] if r.direction == "t2v" else r.ranks[gt[q], q]
    return out


def metrics(r: RankMatrix, gt: dict[int, int]) -> MetricsSlice:
    """R@N as fraction of queries with GT rank <= N; MdR takes the lower
    middle for even counts; MnR is the arithmetic mean."""
    ranks = gt_ranks(r, gt)
    recall = {n: float((ranks <= n).mean()) for n in RECALL_NS}
    ordered = np.sort(ranks)
    mdr = float(ordered[(len(ordered) - 1) // 2])
    return MetricsSlice(recall=recall, mdr=mdr, mnr=float(ranks.mean()))


def rank1_multiplicity(r: RankMatrix) -> float:
    """Average number of rank-1 candidates per query (1.0 means unique tops)."""
    if r.direction == "t2v":
        return float((r.ranks == 1).sum(axis=1).mean())
    return float((r.ranks == 1).sum(axis=0).mean())


def build_report(level_sims: dict[str, SimilarityMatrix], gt_t2v: dict[int, int],
                 gt_v2t: dict[int, int], fuse_op: str = "min",
                 padded_audio: int = 0, padded_motion: int = 0) -> RetrievalReport:
    """Per-level and fused metrics in both directions."""
    report = RetrievalReport(padded_audio=padded_audio, padded_motion=padded_motion)
    for direction, gt in (("t2v", gt_t2v), ("v2t", gt_v2t)):
        rank_levels = [ranks_from_similarity(s, direction) for s in level_sims.values()]
        for rm in rank_levels:
            report.slices[(direction, rm.level)] = metrics(rm, gt)
        fused = fuse_ranks(rank_levels, fuse_op)
        report.slices[(direction, "fused")] = metrics(fused, gt)
        report.fused_rank1_multiplicity[direction] = rank1_multiplicity(fused)
    return report
