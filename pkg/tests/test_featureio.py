"""Container format, manifest, alignment, and synthetic fixture tests."""

import struct

import numpy as np
import pytest

from m2hf import featureio as fio
from m2hf.featureio import (BadMagic, Dims, FeatureBundle,
                            ManifestError, NonFiniteValue, TruncatedFile,
                            ZeroFrames, align_and_pad, decode_tensor,
                            encode_tensor, read_feature_file, read_manifest,
                            synth_dataset, write_dataset, write_feature_file)
from m2hf.tensor import Tensor

DIMS = Dims(F=4, T=6, d_v=16, d_c=16, d_a=8, d_m=12)


class TestContainer:
    def test_round_trip_preserves_f32_values(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((5, 7))
        back = decode_tensor(encode_tensor(Tensor(x))).array
        np.testing.assert_array_equal(back, x.astype(np.float32).astype(np.float64))

    def test_header_layout(self):
        blob = encode_tensor(Tensor(np.zeros((2, 3))))
        assert blob[:4] == b"M2HF"
        version, rank = struct.unpack_from("<BB", blob, 4)
        assert (version, rank) == (1, 2)
        assert struct.unpack_from("<2I", blob, 6) == (2, 3)
        assert len(blob) == 4 + 2 + 8 + 6 * 4

    def test_payload_is_le_f32_row_major(self):
        blob = encode_tensor(Tensor([[1.0, 2.0], [3.0, 4.0]]))
        vals = struct.unpack_from("<4f", blob, 14)
        assert vals == (1.0, 2.0, 3.0, 4.0)

    def test_bad_magic(self):
        with pytest.raises(BadMagic):
            decode_tensor(b"XXXX" + encode_tensor(Tensor([1.0]))[4:])

    def test_truncated_payload(self):
        blob = encode_tensor(Tensor(np.ones((3, 3))))
        with pytest.raises(TruncatedFile):
            decode_tensor(blob[:-2])

    def test_trailing_bytes_rejected(self):
        blob = encode_tensor(Tensor(np.ones((3, 3))))
        with pytest.raises(TruncatedFile, match="trailing"):
            decode_tensor(blob + b"\x00")

    def test_nonfinite_payload_rejected(self):
        blob = bytearray(encode_tensor(Tensor(np.ones(4))))
        blob[-4:] = struct.pack("<f", np.inf)
        with pytest.raises(NonFiniteValue):
            decode_tensor(bytes(blob))

    def test_file_round_trip(self, tmp_path):
        x = Tensor(np.arange(12.0).reshape(3, 4))
        p = tmp_path / "t.m2hf"
        write_feature_file(p, x)
        np.testing.assert_array_equal(read_feature_file(p).array, x.array)


class TestResample:
    def test_seven_to_three_picks_endpoints(self):
        arr = np.arange(7.0)[:, None]
        out = fio._resample_frames(arr, 3)
        np.testing.assert_array_equal(out[:, 0], [0.0, 3.0, 6.0])

    def test_short_input_repeats_last(self):
        arr = np.array([[1.0], [2.0]])
        out = fio._resample_frames(arr, 5)
        np.testing.assert_array_equal(out[:, 0], [1, 2, 2, 2, 2])

    def test_equal_length_identity(self):
        arr = np.ones((4, 2))
        assert fio._resample_frames(arr, 4) is arr

    def test_zero_frames_rejected(self):
        with pytest.raises(ZeroFrames):
            fio._resample_frames(np.zeros((0, 3)), 4)

    def test_endpoints_always_kept(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            n = rng.integers(2, 40)
            target = rng.integers(2, n + 1)
            arr = np.arange(float(n))[:, None]
            out = fio._resample_frames(arr, int(target))
            assert out[0, 0] == 0.0
            assert out[-1, 0] == float(n - 1)
            assert (np.diff(out[:, 0]) > 0).all()


class TestAlignAndPad:
    def _bundle(self, audio=True, motion=True, frames=4):
        rng = np.random.default_rng(2)
        return FeatureBundle(
            video_id="v0",
            visual=Tensor(rng.standard_normal((frames, DIMS.d_v))),
            audio=Tensor(rng.standard_normal((frames, DIMS.d_a))) if audio else None,
            motion=Tensor(rng.standard_normal((frames, DIMS.d_m))) if motion else None,
        )

    def test_missing_audio_padded_with_ones(self):
        out = align_and_pad(self._bundle(audio=False), DIMS)
        assert out.audio_padded and not out.motion_padded
        np.testing.assert_array_equal(out.audio.array, np.ones((DIMS.F, DIMS.d_a)))

    def test_missing_motion_padded_with_ones(self):
        out = align_and_pad(self._bundle(motion=False), DIMS)
        assert out.motion_padded and not out.audio_padded
        np.testing.assert_array_equal(out.motion.array, np.ones((DIMS.F, DIMS.d_m)))

    def test_idempotent(self):
        once = align_and_pad(self._bundle(audio=False, frames=9), DIMS)
        assert align_and_pad(once, DIMS) is once

    def test_conforming_bundle_returned_unchanged(self):
        b = self._bundle()
        assert align_and_pad(b, DIMS) is b

    def test_frame_resampling_applied_to_all_modalities(self):
        out = align_and_pad(self._bundle(frames=9), DIMS)
        assert out.visual.array.shape == (DIMS.F, DIMS.d_v)
        assert out.audio.array.shape == (DIMS.F, DIMS.d_a)
        assert out.motion.array.shape == (DIMS.F, DIMS.d_m)


class TestManifest:
    def test_write_read_round_trip(self, tmp_path):
        manifest, videos, captions = synth_dataset(3, DIMS, correlation=0.5, seed=7)
        written = write_dataset(manifest, videos, captions, tmp_path)
        back = read_manifest(tmp_path / "manifest.tsv")
        assert back.pairs == written.pairs
        assert back.dims == DIMS
        assert back.files == written.files
        assert back.asr == written.asr
        assert back.caption_text == written.caption_text

    def test_missing_dim_record_rejected(self, tmp_path):
        p = tmp_path / "manifest.tsv"
        p.write_text("dim\tF\t4\npair\tv0\tc0\n")
        with pytest.raises(ManifestError, match="missing dim"):
            read_manifest(p)

    def test_unknown_record_kind_rejected(self, tmp_path):
        p = tmp_path / "manifest.tsv"
        p.write_text("bogus\tx\ty\n")
        with pytest.raises(ManifestError, match="bogus"):
            read_manifest(p)

    def test_dangling_file_record_rejected(self, tmp_path):
        manifest, videos, captions = synth_dataset(2, DIMS, correlation=0.5, seed=7)
        write_dataset(manifest, videos, captions, tmp_path)
        (tmp_path / "visual_v0000.m2hf").unlink()
        with pytest.raises(ManifestError, match="does not exist"):
            read_manifest(tmp_path / "manifest.tsv")

    def test_load_bundles_pads_and_aligns(self, tmp_path):
        manifest, videos, captions = synth_dataset(2, DIMS, correlation=0.5, seed=7)
        videos["v0000"].audio = None
        written = write_dataset(manifest, videos, captions, tmp_path)
        vids, caps = fio.load_bundles(written)
        assert vids["v0000"].audio_padded
        np.testing.assert_array_equal(vids["v0000"].audio.array,
                                      np.ones((DIMS.F, DIMS.d_a)))
        assert not vids["v0001"].audio_padded
        assert set(caps) == {"c0000", "c0001"}


class TestHashEmbed:
    def test_deterministic_unit_vectors(self):
        a = fio.hash_embed("wheel", 16)
        b = fio.hash_embed("wheel", 16)
        np.testing.assert_array_equal(a, b)
        assert abs(np.linalg.norm(a) - 1.0) < 1e-12

    def test_distinct_tokens_differ(self):
        assert not np.allclose(fio.hash_embed("wheel", 16), fio.hash_embed("river", 16))

    def test_embed_caption_pooled_row_matches_direction(self):
        rows, direction = fio.embed_caption(["dog", "park", "ball"], T=6, d_c=16)
        pooled = rows.array.mean(axis=0)
        cos = pooled @ direction / np.linalg.norm(pooled)
        np.testing.assert_allclose(cos, 1.0, atol=1e-12)

    def test_embed_caption_pads_to_t_rows(self):
        rows, _ = fio.embed_caption(["one"], T=4, d_c=8)
        assert rows.array.shape == (4, 8)
        np.testing.assert_array_equal(rows.array[0], rows.array[3])

    def test_empty_caption_rejected(self):
        with pytest.raises(ManifestError):
            fio.embed_caption([], T=4, d_c=8)


class TestSynthDataset:
    def test_shapes_and_ids(self):
        manifest, videos, captions = synth_dataset(4, DIMS, correlation=1.0, seed=3)
        assert len(manifest.pairs) == 4
        for vid, cid in manifest.pairs:
            assert videos[vid].visual.array.shape == (DIMS.F, DIMS.d_v)
            assert videos[vid].audio.array.shape == (DIMS.F, DIMS.d_a)
            assert videos[vid].motion.array.shape == (DIMS.F, DIMS.d_m)
            assert captions[cid].tokens.array.shape == (DIMS.T, DIMS.d_c)

    def test_full_correlation_visual_collinear_with_caption_direction(self):
        manifest, videos, captions = synth_dataset(3, DIMS, correlation=1.0, seed=3)
        for vid, cid in manifest.pairs:
            _, direction = fio.embed_caption(captions[cid].raw_tokens, DIMS.T, DIMS.d_c)
            frames = videos[vid].visual.array
            cos = frames @ direction / np.linalg.norm(frames, axis=1)
            np.testing.assert_allclose(cos, 1.0, atol=1e-10)

    def test_zero_correlation_asr_shares_no_nouns(self):
        manifest, videos, captions = synth_dataset(3, DIMS, correlation=0.0, seed=3)
        for vid, cid in manifest.pairs:
            cap_nouns = set(captions[cid].raw_tokens[:6])
            assert not cap_nouns & set(videos[vid].asr_tokens)

    def test_full_correlation_asr_shares_all_nouns(self):
        manifest, videos, captions = synth_dataset(3, DIMS, correlation=1.0, seed=3)
        for vid, cid in manifest.pairs:
            cap_nouns = set(captions[cid].raw_tokens[:6])
            assert cap_nouns <= set(videos[vid].asr_tokens) | cap_nouns
            assert len(cap_nouns & set(videos[vid].asr_tokens)) == 6

    def test_deterministic_in_seed(self):
        _, v1, c1 = synth_dataset(2, DIMS, correlation=0.5, seed=11)
        _, v2, c2 = synth_dataset(2, DIMS, correlation=0.5, seed=11)
        np.testing.assert_array_equal(v1["v0000"].visual.array, v2["v0000"].visual.array)
        np.testing.assert_array_equal(c1["c0000"].tokens.array, c2["c0000"].tokens.array)

    def test_different_seeds_differ(self):
        _, v1, _ = synth_dataset(2, DIMS, correlation=0.5, seed=11)
        _, v2, _ = synth_dataset(2, DIMS, correlation=0.5, seed=12)
        assert not np.array_equal(v1["v0000"].visual.array, v2["v0000"].visual.array)

    def test_invalid_correlation_rejected(self):
        with pytest.raises(ValueError):
            synth_dataset(2, DIMS, correlation=1.5, seed=0)

    def test_caption_round_trip_through_disk(self, tmp_path):
        manifest, videos, captions = synth_dataset(2, DIMS, correlation=0.7, seed=5)
        written = write_dataset(manifest, videos, captions, tmp_path)
        _, caps = fio.load_bundles(written)
        re_rows, _ = fio.embed_caption(caps["c0000"].raw_tokens, DIMS.T, DIMS.d_c)
        np.testing.assert_allclose(caps["c0000"].tokens.array, re_rows.array, atol=1e-6)
