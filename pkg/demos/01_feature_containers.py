"""
Feature containers, manifests, and alignment
============================================

Walks through the on-disk layer: binary tensor containers, the TSV
manifest that ties a corpus together, and how bundles are conformed to
a common frame count with all-ones padding for missing modalities.
"""

import tempfile
from pathlib import Path

import numpy as np

from m2hf import Dims, Tensor, align_and_pad, read_feature_file, write_feature_file
from m2hf.featureio import FeatureBundle, encode_tensor, read_manifest, synth_dataset, write_dataset

root = Path(tempfile.mkdtemp(prefix="m2hf_demo_"))

# A container is a 4-byte magic, a version byte, the rank, little-endian
# u32 dims, and a row-major float32 payload.  Values widen to float64 on load.
frames = Tensor(np.random.default_rng(0).standard_normal((4, 8)))
write_feature_file(root / "frames.m2hf", frames)
back = read_feature_file(root / "frames.m2hf")
print("container header:", encode_tensor(frames)[:6])
print("round-trip error (f32 quantization only):",
      float(np.abs(back.array - frames.array).max()))

# A synthetic corpus: matched caption/video pairs with tunable signal.
dims = Dims(F=3, T=5, d_v=8, d_c=8, d_a=6, d_m=4)
manifest, videos, captions = synth_dataset(4, dims, correlation=0.8, seed=0)
written = write_dataset(manifest, videos, captions, root / "corpus")
print("\nmanifest records:")
for line in (root / "corpus" / "manifest.tsv").read_text().splitlines()[:8]:
    print(" ", line)

reloaded = read_manifest(root / "corpus" / "manifest.tsv")
print("pairs:", reloaded.pairs)

# Alignment: a bundle with 9 frames and no audio stream is resampled to
# F frames (endpoints kept) and given an all-ones audio block.
rng = np.random.default_rng(1)
ragged = FeatureBundle(video_id="vx",
                       visual=Tensor(rng.standard_normal((9, dims.d_v))),
                       motion=Tensor(rng.standard_normal((9, dims.d_m))))
padded = align_and_pad(ragged, dims)
print("\nvisual frames after resampling:", padded.visual.array.shape)
print("audio padded with ones:", padded.audio_padded,
      bool((padded.audio.array == 1.0).all()))
