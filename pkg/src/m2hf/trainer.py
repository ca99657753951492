"""Training loops, optimizer, gradient checking, checkpoints, evaluation.

Two regimes: joint training of all three trainable levels under the
balanced loss (``train_e2e``), and independent per-level training with
each level's own dual-softmax loss (``train_ensemble``).  Batches use
in-batch negatives only; a final partial batch is dropped.  Everything
is deterministic given (seed, config, data).

``lr_backbone`` exists for config parity with full-scale training
recipes but is inert here: backbone features are precomputed inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .featureio import (CaptionBundle, DatasetManifest, Dims, FeatureBundle,
                        decode_tensor, encode_tensor, load_bundles)
from .model import ALL_LEVELS, TRAINABLE_LEVELS, ModelParams, level_similarities
from .objective import LossConfig, dsl_per_sample, level_loss, mmbl
from .ranker import RetrievalReport, build_report
from .tensor import Tensor
from .textlevel import LexiconConfig


class TrainingError(Exception):
    pass


@dataclass
class TrainConfig:
    mode: str = "e2e"  # e2e | ensemble
    batch_size: int = 8
    epochs: int = 5
    max_steps: int | None = None  # stop early after this many optimizer steps
    lr_backbone: float = 1e-7  # inert: features are precomputed
    lr_head: float = 1e-4
    optimizer: str = "adam"  # adam | sgd
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.mode not in ("e2e", "ensemble"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for in-batch contrastive losses")
        if self.lr_head <= 0 or self.lr_backbone <= 0:
            raise ValueError("learning rates must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class Optimizer:
    """Adam or plain SGD over a named tensor subset; updates in place."""

    def __init__(self, tensors: dict[str, Tensor], cfg: TrainConfig):
        self.tensors = tensors
        self.cfg = cfg
        self.step_count = 0
        self.m = {n: np.zeros_like(t.array) for n, t in tensors.items()}
        self.v = {n: np.zeros_like(t.array) for n, t in tensors.items()}

    def step(self, grads: dict[str, np.ndarray]):
        cfg = self.cfg
        self.step_count += 1
        for name, t in self.tensors.items():
            g = grads[name]
            if cfg.optimizer == "sgd":
                t.array[...] = t.array - cfg.lr_head * g
                continue
            self.m[name] = cfg.adam_beta1 * self.m[name] + (1 - cfg.adam_beta1) * g
            self.v[name] = cfg.adam_beta2 * self.v[name] + (1 - cfg.adam_beta2) * g * g
            mhat = self.m[name] / (1 - cfg.adam_beta1 ** self.step_count)
            vhat = self.v[name] / (1 - cfg.adam_beta2 ** self.step_count)
            t.array[...] = t.array - cfg.lr_head * mhat / (np.sqrt(vhat) + cfg.adam_eps)


@dataclass
class Dataset:
    """In-memory view of a manifest: aligned bundles plus the pair list."""
    pairs: list[tuple[str, str]]
    videos: dict[str, FeatureBundle]
    captions: dict[str, CaptionBundle]
    dims: Dims

    @staticmethod
    def from_manifest(manifest: DatasetManifest) -> "Dataset":
        videos, captions = load_bundles(manifest)
        return Dataset(pairs=list(manifest.pairs), videos=videos,
                       captions=captions, dims=manifest.dims)

    def batch(self, indices) -> tuple[list[CaptionBundle], list[FeatureBundle]]:
        caps = [self.captions[self.pairs[i][1]] for i in indices]
        vids = [self.videos[self.pairs[i][0]] for i in indices]
        return caps, vids


def _batch_loss(params: ModelParams, caps, vids, cfg: TrainConfig,
                levels, training: bool, rng) -> Tensor:
    sims = level_similarities(params, caps, vids, levels=levels,
                              training=training, rng=rng)
    per_level = [dsl_per_sample(sims[lv], cfg.loss) for lv in levels]
    if len(per_level) == 1:
        return level_loss(per_level[0])
    return mmbl(per_level, cfg.loss)


def _run_training(data: Dataset, params: ModelParams, cfg: TrainConfig,
                  levels, tensors: dict[str, Tensor]):
    """Shared loop: returns the per-step loss trace."""
    opt = Optimizer(tensors, cfg)
    order_rng, dropout_seed_rng = T.split_rngs(cfg.seed, 2)
    trace = []
    step = 0
    n = len(data.pairs)
    b = cfg.batch_size
    if n < b:
        raise TrainingError(f"dataset has {n} pairs, smaller than batch size {b}")
    max_steps = cfg.max_steps if cfg.max_steps is not None else cfg.epochs * (n // b)
    for _epoch in range(10**9):
        perm = order_rng.permutation(n)
        for start in range(0, n - b + 1, b):
            if step >= max_steps:
                return trace
            caps, vids = data.batch(perm[start:start + b])
            drop_rng = np.random.default_rng(dropout_seed_rng.integers(2**63))
            loss = _batch_loss(params, caps, vids, cfg, levels,
                               training=True, rng=drop_rng)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at step {step}")
            for t in tensors.values():
                t.zero_grad()
            loss.backward()
            opt.step({name: (t.grad if t.grad is not None else np.zeros_like(t.array))
                      for name, t in tensors.items()})
            trace.append(value)
            step += 1
        if step >= max_steps:
            return trace


def train_e2e(data: Dataset, params: ModelParams, cfg: TrainConfig):
    """Joint training of visual/audio/motion under the balanced loss."""
    if cfg.mode != "e2e":
        raise ValueError("train_e2e requires cfg.mode == 'e2e'")
    trace = _run_training(data, params, cfg, list(TRAINABLE_LEVELS), params.registry())
    return params, trace


def train_ensemble(data: Dataset, params: ModelParams, cfg: TrainConfig):
    """Independent per-level training; parameters are partitioned exactly."""
    if cfg.mode != "ensemble":
        raise ValueError("train_ensemble requires cfg.mode == 'ensemble'")
    registry = params.registry()
    partition = params.level_partition()
    traces = {}
    for level in TRAINABLE_LEVELS:
        tensors = {n: registry[n] for n in partition[level]}
        traces[level] = _run_training(data, params, cfg, [level], tensors)
    return params, traces


def evaluate(data: Dataset, params: ModelParams, drop=(), fuse_op: str = "min",
             lexicon: LexiconConfig | None = None, threads: int = 1) -> RetrievalReport:
    """Per-level and fused retrieval metrics over the full pair list."""
    levels = [lv for lv in ALL_LEVELS if lv not in drop]
    if not levels:
        raise ValueError("evaluate: all levels dropped")
    caps = [data.captions[cid] for _vid, cid in data.pairs]
    vids = [data.videos[vid] for vid, _cid in data.pairs]
    sims = level_similarities(params, caps, vids, levels=levels,
                              lexicon=lexicon, training=False, threads=threads)
    gt = {i: i for i in range(len(data.pairs))}
    return build_report(sims, gt_t2v=gt, gt_v2t=gt, fuse_op=fuse_op,
                        padded_audio=sum(v.audio_padded for v in vids),
                        padded_motion=sum(v.motion_padded for v in vids))


# -- gradient checking ---------------------------------------------------------


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    passed: bool


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def lines(self):
        return [f"{'PASS' if e.passed else 'FAIL'}\t{e.name}\t{e.max_rel_err:.3e}"
                for e in self.entries]


def gradcheck(params: ModelParams, caps, vids, cfg: TrainConfig,
              levels=TRAINABLE_LEVELS, h: float = 1e-5, rel_tol: float = 1e-4,
              abs_tol: float = 1e-7, max_entries_per_tensor: int = 8,
              entry_seed: int = 0, corrupt: str | None = None) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Checks up to `max_entries_per_tensor` randomly chosen coordinates of
    every registered tensor.  An entry passes when the absolute gap is
    below `abs_tol` or the relative error is below `rel_tol`.  `corrupt`
    names a tensor whose analytic gradient is deliberately perturbed
    (negative-control fixture).

    The loss is evaluated with differentiated softmax priors: the
    training loss stops gradients through the priors on purpose, which
    makes its analytic gradient differ from the derivative of the
    computed value, so only the fully differentiable variant can be
    compared against finite differences.
    """
    from dataclasses import replace as dc_replace

    registry = params.registry()
    check_cfg = dc_replace(cfg, loss=dc_replace(cfg.loss, prior_grad=True))

    def loss_value() -> Tensor:
        return _batch_loss(params, caps, vids, check_cfg, list(levels),
                           training=False, rng=None)

    loss = loss_value()
    for t in registry.values():
        t.zero_grad()
    loss.backward()
    analytic = {n: (t.grad if t.grad is not None else np.zeros_like(t.array))
                for n, t in registry.items()}
    if corrupt is not None:
        analytic[corrupt] = analytic[corrupt] + 1.0

    rng = np.random.default_rng(entry_seed)
    entries = []
    for name, t in registry.items():
        flat = t.array.reshape(-1)
        count = min(max_entries_per_tensor, flat.size)
        idx = rng.choice(flat.size, size=count, replace=False)
        worst = 0.0
        ok = True
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = loss_value().item()
            flat[i] = orig - h
            down = loss_value().item()
            flat[i] = orig
            fd = (up - down) / (2 * h)
            a = analytic[name].reshape(-1)[i]
            gap = abs(a - fd)
            rel = gap / max(abs(a), abs(fd), 1e-12)
            if gap > abs_tol and rel > rel_tol:
                ok = False
                worst = max(worst, rel)
            else:
                worst = max(worst, min(rel, gap))
        entries.append(GradCheckEntry(name=name, max_rel_err=worst, passed=ok))
    return GradCheckReport(entries=entries)


# -- checkpoints -----------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: ModelParams, step: int, config_echo: dict | None = None):
    """Text header (tab-separated, blank-line terminated) + binary tensors."""
    registry = params.registry()
    names = sorted(registry)
    lines = [f"checkpoint\tversion\t{CHECKPOINT_VERSION}", f"step\t{step}"]
    for name, value in (config_echo or {}).items():
        lines.append(f"config\t{name}\t{value}")
    for n in ("F", "T", "d_v", "d_c", "d_a", "d_m"):
        lines.append(f"dim\t{n}\t{getattr(params.dims, n)}")
    lines.extend(f"tensor\t{n}" for n in names)
    header = ("\n".join(lines) + "\n\n").encode("utf-8")
    blobs = b"".join(encode_tensor(registry[n]) for n in names)
    Path(path).write_bytes(header + blobs)


def load_checkpoint(path, params: ModelParams) -> int:
    """Load tensor values into an existing registry; returns the step."""
    blob = Path(path).read_bytes()
    sep = blob.index(b"\n\n")
    header = blob[:sep].decode("utf-8").splitlines()
    body = blob[sep + 2:]
    step = 0
    names = []
    for line in header:
        parts = line.split("\t")
        if parts[0] == "step":
            step = int(parts[1])
        elif parts[0] == "tensor":
            names.append(parts[1])
    registry = params.registry()
    if set(names) != set(registry):
        raise TrainingError("checkpoint tensor names do not match the model registry")
    off = 0
    for name in names:
        t = registry[name]
        size = 6 + 4 * t.array.ndim + 4 * t.array.size
        loaded = decode_tensor(body[off:off + size], name=f"checkpoint:{name}")
        if loaded.shape != t.shape:
            raise TrainingError(f"checkpoint tensor {name} has shape {loaded.shape}, "
                                f"expected {t.shape}")
        t.array[...] = loaded.array
        off += size
    if off != len(body):
        raise TrainingError(f"checkpoint has {len(body) - off} trailing bytes")
    return step
