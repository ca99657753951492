"""Feature containers, dataset manifests, alignment, and synthetic fixtures.

On-disk formats
---------------
Feature container (binary): magic ``M2HF`` (4 bytes), version u8 = 1,
rank u8, then `rank` u32 little-endian dimensions, then the row-major
payload as 32-bit little-endian floats.  Values are widened to float64
on load.  Trailing bytes are an error.

Manifest (text, UTF-8, one record per line, tab-separated):

    dim <TAB> name <TAB> value
    pair <TAB> video_id <TAB> caption_id
    file <TAB> modality <TAB> id <TAB> relpath
    asr <TAB> video_id <TAB> space-joined tokens
    caption_text <TAB> caption_id <TAB> space-joined tokens

Caption text is embedded deterministically: each token string maps to a
unit vector whose entries are drawn from a generator seeded by the
SHA-256 of the token (``hash_embed``).  The synthetic generator builds
caption matrices from exactly these embeddings, so free-text queries can
be re-embedded and matched against a synthetic corpus.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"M2HF"
VERSION = 1

DIM_NAMES = ("F", "T", "d_v", "d_c", "d_a", "d_m")


class FeatureIOError(Exception):
    pass


class BadMagic(FeatureIOError):
    pass


class TruncatedFile(FeatureIOError):
    pass


class NonFiniteValue(FeatureIOError):
    pass


class ZeroFrames(FeatureIOError):
    pass


class ManifestError(FeatureIOError):
    pass


@dataclass(frozen=True)
class Dims:
    F: int
    T: int
    d_v: int
    d_c: int
    d_a: int
    d_m: int

    def as_dict(self):
        return {n: getattr(self, n) for n in DIM_NAMES}


@dataclass
class FeatureBundle:
    video_id: str
    visual: Tensor
    audio: Tensor | None = None
    motion: Tensor | None = None
    asr_tokens: list[str] = field(default_factory=list)
    audio_padded: bool = False
    motion_padded: bool = False


@dataclass
class CaptionBundle:
    caption_id: str
    tokens: Tensor
    raw_tokens: list[str] = field(default_factory=list)


@dataclass
class DatasetManifest:
    pairs: list[tuple[str, str]]
    dims: Dims
    files: dict[tuple[str, str], str]  # (modality, id) -> relpath
    asr: dict[str, list[str]]
    caption_text: dict[str, list[str]]
    root: Path


# -- binary container -------------------------------------------------------


def encode_tensor(t: Tensor) -> bytes:
    arr = np.asarray(t.array, dtype=np.float32)
    head = MAGIC + struct.pack("<BB", VERSION, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype("<f4").tobytes(order="C")


def decode_tensor(blob: bytes, name: str = "<bytes>") -> Tensor:
    if len(blob) < 6:
        raise TruncatedFile(f"{name}: only {len(blob)} bytes, header needs 6")
    if blob[:4] != MAGIC:
        raise BadMagic(f"{name}: magic {blob[:4]!r} != {MAGIC!r}")
    version, rank = struct.unpack_from("<BB", blob, 4)
    if version != VERSION:
        raise FeatureIOError(f"{name}: unsupported version {version}")
    off = 6
    if len(blob) < off + 4 * rank:
        raise TruncatedFile(f"{name}: truncated dimension block at offset {off}")
    dims = struct.unpack_from(f"<{rank}I", blob, off)
    off += 4 * rank
    count = int(np.prod(dims)) if rank else 1
    need = off + 4 * count
    if len(blob) < need:
        raise TruncatedFile(f"{name}: payload needs {need} bytes, file has {len(blob)}")
    if len(blob) > need:
        raise TruncatedFile(f"{name}: {len(blob) - need} trailing bytes after payload")
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
    if not np.all(np.isfinite(data)):
        bad = int(np.flatnonzero(~np.isfinite(data))[0])
        raise NonFiniteValue(f"{name}: non-finite value at element {bad}")
    return Tensor(data.astype(np.float64).reshape(dims))


def write_feature_file(path, t: Tensor):
    Path(path).write_bytes(encode_tensor(t))


def read_feature_file(path) -> Tensor:
    return decode_tensor(Path(path).read_bytes(), name=str(path))


# -- manifest ----------------------------------------------------------------


def write_manifest(manifest: DatasetManifest, path):
    lines = []
    for name, value in manifest.dims.as_dict().items():
        lines.append(f"dim\t{name}\t{value}")
    for vid, cid in manifest.pairs:
        lines.append(f"pair\t{vid}\t{cid}")
    for (modality, ident), rel in manifest.files.items():
        lines.append(f"file\t{modality}\t{ident}\t{rel}")
    for vid, toks in manifest.asr.items():
        lines.append(f"asr\t{vid}\t{' '.join(toks)}")
    for cid, toks in manifest.caption_text.items():
        lines.append(f"caption_text\t{cid}\t{' '.join(toks)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    dims = {}
    pairs = []
    files = {}
    asr = {}
    caption_text = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        kind = parts[0]
        try:
            if kind == "dim":
                dims[parts[1]] = int(parts[2])
            elif kind == "pair":
                pairs.append((parts[1], parts[2]))
            elif kind == "file":
                files[(parts[1], parts[2])] = parts[3]
            elif kind == "asr":
                asr[parts[1]] = parts[2].split() if len(parts) > 2 else []
            elif kind == "caption_text":
                caption_text[parts[1]] = parts[2].split() if len(parts) > 2 else []
            else:
                raise ManifestError(f"{path}:{lineno}: unknown record kind {kind!r}")
        except (IndexError, ValueError) as e:
            raise ManifestError(f"{path}:{lineno}: malformed {kind!r} record: {e}") from e
    missing = [n for n in DIM_NAMES if n not in dims]
    if missing:
        raise ManifestError(f"{path}: missing dim records {missing}")
    manifest = DatasetManifest(pairs=pairs, dims=Dims(**{n: dims[n] for n in DIM_NAMES}),
                               files=files, asr=asr, caption_text=caption_text,
                               root=path.parent)
    for (modality, ident), rel in files.items():
        fp = manifest.root / rel
        if not fp.exists():
            raise ManifestError(f"{path}: file record {modality}/{ident} -> {rel} does not exist")
    return manifest


def load_bundles(manifest: DatasetManifest):
    """Load, align, and pad every video and caption referenced by the manifest."""
    videos = {}
    captions = {}
    for vid, cid in manifest.pairs:
        if vid not in videos:
            visual = read_feature_file(manifest.root / manifest.files[("visual", vid)])
            audio = motion = None
            if ("audio", vid) in manifest.files:
                audio = read_feature_file(manifest.root / manifest.files[("audio", vid)])
            if ("motion", vid) in manifest.files:
                motion = read_feature_file(manifest.root / manifest.files[("motion", vid)])
            bundle = FeatureBundle(video_id=vid, visual=visual, audio=audio,
                                   motion=motion, asr_tokens=manifest.asr.get(vid, []))
            videos[vid] = align_and_pad(bundle, manifest.dims)
        if cid not in captions:
            tokens = read_feature_file(manifest.root / manifest.files[("caption", cid)])
            captions[cid] = CaptionBundle(caption_id=cid, tokens=tokens,
                                          raw_tokens=manifest.caption_text.get(cid, []))
    return videos, captions


# -- alignment ----------------------------------------------------------------


def _resample_frames(arr: np.ndarray, target: int) -> np.ndarray:
    n = arr.shape[0]
    if n == 0:
        raise ZeroFrames("feature matrix has zero frames")
    if n == target:
        return arr
    if n > target:
        # endpoint-inclusive uniform selection: 7 frames at target 3 -> {0, 3, 6}
        if target == 1:
            idx = np.array([0])
        else:
            idx = (np.arange(target) * (n - 1)) // (target - 1)
        return arr[idx]
    pad = np.repeat(arr[-1:], target - n, axis=0)
    return np.concatenate([arr, pad], axis=0)


def align_and_pad(bundle: FeatureBundle, dims: Dims) -> FeatureBundle:
    """Conform a bundle to the manifest dims.

    Missing audio/motion become all-ones F x d matrices (flagged as
    padded) so the guidance pathway degenerates to a function of the
    visual features alone.  Frame counts are resampled to F by uniform
    index selection when longer and repeat-last when shorter.
    """
    visual = _resample_frames(bundle.visual.array, dims.F)
    changed = visual is not bundle.visual.array

    if bundle.audio is None:
        audio = Tensor(np.ones((dims.F, dims.d_a)))
        audio_padded = True
        changed = True
    else:
        resampled = _resample_frames(bundle.audio.array, dims.F)
        changed = changed or resampled is not bundle.audio.array
        audio = bundle.audio if resampled is bundle.audio.array else Tensor(resampled)
        audio_padded = bundle.audio_padded

    if bundle.motion is None:
        motion = Tensor(np.ones((dims.F, dims.d_m)))
        motion_padded = True
        changed = True
    else:
        resampled = _resample_frames(bundle.motion.array, dims.F)
        changed = changed or resampled is not bundle.motion.array
        motion = bundle.motion if resampled is bundle.motion.array else Tensor(resampled)
        motion_padded = bundle.motion_padded

    if not changed:
        return bundle
    return replace(bundle,
                   visual=bundle.visual if visual is bundle.visual.array else Tensor(visual),
                   audio=audio, motion=motion,
                   audio_padded=audio_padded, motion_padded=motion_padded)


# -- deterministic text embedding ---------------------------------------------


def hash_embed(token: str, dim: int) -> np.ndarray:
    """Deterministic unit vector for a token string."""
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


# Weight of the caption-level common component mixed into every token
# embedding.  Makes each token lean toward the caption's pooled direction
# so token-wise similarities separate matched from unmatched pairs.
CAPTION_MIX = 0.75


def embed_caption(tokens: list[str], T: int, d_c: int) -> tuple[Tensor, np.ndarray]:
    """Deterministic caption embedding from raw token strings.

    Each token gets a hash embedding; the normalized mean of those is the
    caption direction; every row is CAPTION_MIX * direction plus
    (1 - CAPTION_MIX) * its own hash embedding.  The pooled (mean) row is
    therefore exactly proportional to the returned direction.  Token
    lists are clipped or repeat-last-padded to T rows.
    """
    if not tokens:
        raise ManifestError("cannot embed an empty caption")
    raw = [hash_embed(t, d_c) for t in tokens[:T]]
    while len(raw) < T:
        raw.append(raw[-1])
    raw = np.stack(raw)
    direction = raw.mean(axis=0)
    direction = direction / np.linalg.norm(direction)
    rows = CAPTION_MIX * direction + (1.0 - CAPTION_MIX) * raw
    return Tensor(rows), direction


# -- synthetic fixtures --------------------------------------------------------

_SYNTH_FILLER = ["the", "a", "is", "quickly", "runs", "playing", "and", "with"]


def synth_dataset(n_pairs: int, dims: Dims, correlation: float, seed: int):
    """Generate a matched caption/video corpus with tunable signal strength.

    Caption tokens come from ``embed_caption``; the caption direction is
    the latent that video features mix with noise at weight
    `correlation`.  correlation=1 makes the matched pair's pooled
    features exactly collinear.  ASR tokens share a `correlation`
    fraction of each caption's nouns.
    """
    from .textlevel import builtin_noun_stems

    if not 0.0 <= correlation <= 1.0:
        raise ValueError(f"correlation must be in [0, 1], got {correlation}")
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    if dims.d_v != dims.d_c:
        raise ValueError("synthetic fixtures require d_v == d_c (shared embedding space)")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    proj_a = rng.standard_normal((dims.d_v, dims.d_a)) / np.sqrt(dims.d_v)
    proj_m = rng.standard_normal((dims.d_v, dims.d_m)) / np.sqrt(dims.d_v)

    noun_pool = builtin_noun_stems()
    n_nouns = 6
    videos = {}
    captions = {}
    pairs = []
    asr = {}
    caption_text = {}
    for i in range(n_pairs):
        vid, cid = f"v{i:04d}", f"c{i:04d}"
        pairs.append((vid, cid))

        nouns = [noun_pool[(i * n_nouns + j) % len(noun_pool)] for j in range(n_nouns)]
        words = list(nouns)
        while len(words) < dims.T:
            words.append(f"w{i:04d}x{len(words):02d}")
        caption_text[cid] = words
        tokens, latent = embed_caption(words, dims.T, dims.d_c)
        captions[cid] = CaptionBundle(caption_id=cid, tokens=tokens, raw_tokens=words)

        c = correlation

        def mix(base, noise):
            return c * base + (1.0 - c) * noise

        visual = mix(np.tile(latent, (dims.F, 1)), rng.standard_normal((dims.F, dims.d_v)))
        audio = mix(np.tile(latent @ proj_a, (dims.F, 1)),
                    rng.standard_normal((dims.F, dims.d_a)))
        motion = mix(np.tile(latent @ proj_m, (dims.F, 1)),
                     rng.standard_normal((dims.F, dims.d_m)))

        n_shared = round(correlation * n_nouns)
        asr_words = nouns[:n_shared]
        for j in range(n_nouns - n_shared):
            asr_words.append(f"noise{i:04d}x{j:02d}")
        asr_words += [_SYNTH_FILLER[j % len(_SYNTH_FILLER)] for j in range(3)]
        asr[vid] = asr_words

        videos[vid] = FeatureBundle(video_id=vid, visual=Tensor(visual),
                                    audio=Tensor(audio), motion=Tensor(motion),
                                    asr_tokens=asr_words)

    manifest = DatasetManifest(pairs=pairs, dims=dims, files={}, asr=asr,
                               caption_text=caption_text, root=Path("."))
    return manifest, videos, captions


def write_dataset(manifest: DatasetManifest, videos, captions, out_dir):
    """Write containers plus manifest.tsv under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for vid, bundle in videos.items():
        for modality, t in (("visual", bundle.visual), ("audio", bundle.audio),
                            ("motion", bundle.motion)):
            if t is None:
                continue
            rel = f"{modality}_{vid}.m2hf"
            write_feature_file(out / rel, t)
            files[(modality, vid)] = rel
    for cid, cap in captions.items():
        rel = f"caption_{cid}.m2hf"
        write_feature_file(out / rel, cap.tokens)
        files[("caption", cid)] = rel
    manifest = replace(manifest, files=files, root=out)
    write_manifest(manifest, out / "manifest.tsv")
    return manifest
