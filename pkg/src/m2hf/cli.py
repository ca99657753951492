"""Command-line entry point: synth / train / eval / retrieve / gradcheck.

Configuration comes from an optional plain-text file of ``key = value``
lines ('#' comments allowed); command-line flags override file values,
which override built-in defaults.  Unknown keys are rejected.  Every
command that writes an output directory also writes ``config.echo`` with
the effective settings.  Exit codes: 0 ok, 1 domain failure, 2 usage.
The environment variable ``M2HF_THREADS`` caps internal parallelism.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .featureio import (Dims, FeatureIOError, embed_caption, read_manifest,
                        synth_dataset, write_dataset)
from .model import ALL_LEVELS, build_model, level_similarities
from .objective import LossConfig
from .ranker import fuse_ranks, ranks_from_similarity
from .textlevel import LexiconConfig, default_lexicon, load_token_file, stem
from .trainer import (Dataset, TrainConfig, TrainingError, evaluate, gradcheck,
                      load_checkpoint, save_checkpoint, train_e2e, train_ensemble)

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2

CONFIG_DEFAULTS = {
    "mode": "e2e",
    "batch_size": "8",
    "epochs": "5",
    "max_steps": "",
    "lr_head": "1e-4",
    "lr_backbone": "1e-7",
    "optimizer": "adam",
    "seed": "0",
    "lambda": "100.0",
    "eta": "100.0",
    "fusion": "min",
    "mfb_k": "2",
    "dropout_rate": "0.1",
    "wti_literal": "false",
    "stopwords": "",
    "nouns": "",
    "stemmer": "suffix_strip",
}


class UsageError(Exception):
    pass


def _threads() -> int:
    raw = os.environ.get("M2HF_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"M2HF_THREADS must be an integer, got {raw!r}")


def load_config(path: str | None, overrides: dict) -> dict:
    cfg = dict(CONFIG_DEFAULTS)
    if path:
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in cfg:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            cfg[key] = value
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in cfg:
            raise UsageError(f"unknown config key {key!r}")
        cfg[key] = str(value)
    return cfg


def _bool(value: str) -> bool:
    if value.lower() in ("1", "true", "yes"):
        return True
    if value.lower() in ("0", "false", "no"):
        return False
    raise UsageError(f"expected a boolean, got {value!r}")


def build_train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        mode=cfg["mode"],
        batch_size=int(cfg["batch_size"]),
        epochs=int(cfg["epochs"]),
        max_steps=int(cfg["max_steps"]) if cfg["max_steps"] else None,
        lr_head=float(cfg["lr_head"]),
        lr_backbone=float(cfg["lr_backbone"]),
        optimizer=cfg["optimizer"],
        seed=int(cfg["seed"]),
        loss=LossConfig(lam=float(cfg["lambda"]), eta=float(cfg["eta"]),
                        fusion=cfg["fusion"]),
    )


def build_lexicon(cfg: dict) -> LexiconConfig:
    base = default_lexicon()
    stopwords = load_token_file(cfg["stopwords"]) if cfg["stopwords"] else base.stopword_list
    if cfg["nouns"]:
        nouns = frozenset(stem(n) for n in load_token_file(cfg["nouns"]))
    else:
        nouns = base.noun_lexicon
    return LexiconConfig(stopword_list=stopwords, noun_lexicon=nouns,
                         stemmer=cfg["stemmer"])


def write_config_echo(out_dir: Path, cfg: dict):
    lines = [f"{k} = {cfg[k]}" for k in sorted(cfg)]
    (out_dir / "config.echo").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_dims(text: str) -> Dims:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 6:
        raise UsageError("--dims expects 6 comma-separated integers: F,T,d_v,d_c,d_a,d_m")
    return Dims(*parts)


def _prepare_out(out: str, force: bool) -> Path:
    path = Path(out)
    if path.exists() and any(path.iterdir()) and not force:
        raise UsageError(f"output directory {out} is not empty (use --force)")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_model(manifest, cfg: dict):
    return build_model(manifest.dims, seed=int(cfg["seed"]), mfb_k=int(cfg["mfb_k"]),
                       dropout_rate=float(cfg["dropout_rate"]),
                       wti_literal=_bool(cfg["wti_literal"]))


# -- commands --------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed})
    if args.pairs < 1:
        raise UsageError("--pairs must be >= 1")
    if not 0.0 <= args.correlation <= 1.0:
        raise UsageError("--correlation must be in [0, 1]")
    out = _prepare_out(args.out, args.force)
    dims = _parse_dims(args.dims)
    manifest, videos, captions = synth_dataset(args.pairs, dims, args.correlation,
                                               int(cfg["seed"]))
    write_dataset(manifest, videos, captions, out)
    echo = dict(cfg)
    echo.update({"pairs": str(args.pairs), "correlation": repr(args.correlation),
                 "dims": args.dims})
    write_config_echo(out, echo)
    print(f"wrote {len(videos)} videos / {len(captions)} captions to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, {
        "mode": args.mode, "batch_size": args.batch_size, "epochs": args.epochs,
        "max_steps": args.max_steps, "lr_head": args.lr_head, "seed": args.seed,
        "lambda": getattr(args, "lam", None), "eta": args.eta, "fusion": args.fusion,
        "optimizer": args.optimizer,
    })
    out = _prepare_out(args.out, args.force)
    manifest = read_manifest(Path(args.data) / "manifest.tsv")
    data = Dataset.from_manifest(manifest)
    params = _load_model(manifest, cfg)
    train_cfg = build_train_config(cfg)
    if train_cfg.mode == "e2e":
        _, trace = train_e2e(data, params, train_cfg)
        _write_trace(out / "trace.tsv", trace)
        steps = len(trace)
    else:
        _, traces = train_ensemble(data, params, train_cfg)
        for level, trace in traces.items():
            _write_trace(out / f"trace_{level}.tsv", trace)
        steps = sum(len(t) for t in traces.values())
    save_checkpoint(out / "checkpoint.bin", params, step=steps,
                    config_echo={k: cfg[k] for k in ("seed", "mfb_k", "dropout_rate",
                                                     "wti_literal")})
    write_config_echo(out, cfg)
    print(f"trained {steps} steps; checkpoint at {out / 'checkpoint.bin'}")
    return EXIT_OK


def _write_trace(path: Path, trace):
    lines = [f"{i}\t{v:.12g}" for i, v in enumerate(trace)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _restore(args, cfg):
    manifest = read_manifest(Path(args.data) / "manifest.tsv")
    data = Dataset.from_manifest(manifest)
    params = _load_model(manifest, cfg)
    if args.ckpt:
        load_checkpoint(args.ckpt, params)
    return data, params


def cmd_eval(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed})
    drop = [s for s in (args.drop.split(",") if args.drop else []) if s]
    for lv in drop:
        if lv not in ALL_LEVELS:
            raise UsageError(f"--drop: unknown level {lv!r}")
    if set(drop) >= set(ALL_LEVELS):
        raise UsageError("--drop removes every level")
    data, params = _restore(args, cfg)
    report = evaluate(data, params, drop=drop, fuse_op=args.fusion,
                      lexicon=build_lexicon(cfg), threads=_threads())
    text = report.text()
    sys.stdout.write(text)
    if args.out:
        out = _prepare_out(args.out, args.force)
        (out / "report.tsv").write_text(text, encoding="utf-8")
        write_config_echo(out, cfg)
    return EXIT_OK


def cmd_retrieve(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed})
    data, params = _restore(args, cfg)
    dims = data.dims
    if args.caption_file:
        from .featureio import read_feature_file
        from .featureio import CaptionBundle
        tokens = read_feature_file(args.caption_file)
        caption = CaptionBundle(caption_id="<query>", tokens=tokens, raw_tokens=[])
    else:
        from .featureio import CaptionBundle
        words = args.caption.split()
        if not words:
            raise UsageError("--caption is empty")
        tokens, _ = embed_caption(words, dims.T, dims.d_c)
        caption = CaptionBundle(caption_id="<query>", tokens=tokens, raw_tokens=words)
    topk = args.topk
    vids = [data.videos[vid] for vid, _cid in data.pairs]
    if topk > len(vids):
        print(f"warning: --topk {topk} clamped to corpus size {len(vids)}", file=sys.stderr)
        topk = len(vids)
    if topk < 1:
        raise UsageError("--topk must be >= 1")
    sims = level_similarities(params, [caption], vids, lexicon=build_lexicon(cfg),
                              training=False, threads=_threads())
    rank_levels = [ranks_from_similarity(s, "t2v") for s in sims.values()]
    fused = fuse_ranks(rank_levels, "min").ranks[0]
    score_sum = sum(s.scores.array[0] for s in sims.values())
    order = sorted(range(len(vids)),
                   key=lambda j: (fused[j], -score_sum[j], vids[j].video_id))
    header = "rank\tvideo_id\tfused_rank\t" + "\t".join(sims)
    print(header)
    for pos, j in enumerate(order[:topk], 1):
        scores = "\t".join(f"{sims[lv].scores.array[0, j]:.6f}" for lv in sims)
        print(f"{pos}\t{vids[j].video_id}\t{int(fused[j])}\t{scores}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed})
    dims = _parse_dims(args.dims)
    manifest, videos, captions = synth_dataset(args.pairs, dims, 0.8, int(cfg["seed"]))
    caps = [captions[cid] for _vid, cid in manifest.pairs]
    vids = [videos[vid] for vid, _cid in manifest.pairs]
    from .featureio import align_and_pad
    vids = [align_and_pad(v, dims) for v in vids]
    params = _load_model(manifest, cfg)
    train_cfg = build_train_config(cfg)
    report = gradcheck(params, caps, vids, train_cfg,
                       max_entries_per_tensor=args.entries, corrupt=args.corrupt)
    for line in report.lines():
        print(line)
    if not report.passed:
        print("gradcheck FAILED", file=sys.stderr)
        return EXIT_DOMAIN
    print("gradcheck passed")
    return EXIT_OK


# -- argument parsing --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="m2hf",
                                     description="multi-level text-video retrieval fusion")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--pairs", type=int, required=True)
    p.add_argument("--dims", default="12,32,32,32,16,24",
                   help="F,T,d_v,d_c,d_a,d_m")
    p.add_argument("--correlation", type=float, default=0.8)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train fusion parameters")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["e2e", "ensemble"], default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--max-steps", dest="max_steps", type=int, default=None)
    p.add_argument("--lr-head", dest="lr_head", type=float, default=None)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--fusion", choices=["min", "avg", "max", "add"], default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate retrieval metrics")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--drop", default="", help="comma-separated levels to remove")
    p.add_argument("--fusion", choices=["min", "avg", "max", "add"], default="min")
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("retrieve", help="rank videos for one caption")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--caption", default=None)
    p.add_argument("--caption-file", dest="caption_file", default=None,
                   help="pre-embedded caption tokens (feature container)")
    p.add_argument("--topk", type=int, default=5)
    p.set_defaults(fn=cmd_retrieve)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    common(p)
    p.add_argument("--pairs", type=int, default=4)
    p.add_argument("--dims", default="4,6,16,16,8,12")
    p.add_argument("--entries", type=int, default=6,
                   help="coordinates checked per tensor")
    p.add_argument("--corrupt", default=None, help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    if getattr(args, "caption", "x") is None and getattr(args, "caption_file", "x") is None:
        print("retrieve: one of --caption / --caption-file is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FeatureIOError, TrainingError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
