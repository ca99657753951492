"""Weighted token-wise interaction scoring tests."""

import numpy as np
import pytest

from m2hf import tensor as T
from m2hf.tensor import ShapeMismatchError, Tensor
from m2hf.wti import WtiParams, wti_matrix, wti_score


def wti_oracle(caption, video, cw, vw, literal=False):
    """Double-loop reimplementation of the interaction score."""

    def norm_rows(m):
        out = m.copy()
        for i in range(m.shape[0]):
            n = np.linalg.norm(m[i])
            if n > 0:
                out[i] = m[i] / n
        return out

    c = norm_rows(caption)
    v = norm_rows(video)
    cl = (c @ cw).ravel()
    vl = (v @ vw).ravel()
    cweights = np.exp(cl - cl.max())
    cweights /= cweights.sum()
    vweights = np.exp(vl - vl.max())
    vweights /= vweights.sum()

    frames = video if literal else v
    c2v = sum(cweights[i] * max(c[i] @ frames[j] for j in range(v.shape[0]))
              for i in range(c.shape[0]))
    v2c = sum(vweights[j] * max(v[j] @ c[i] for i in range(c.shape[0]))
              for j in range(v.shape[0]))
    return 0.5 * (c2v + v2c)


class TestWtiScore:
    def test_identical_normalized_sides_score_one(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((5, 8))
        params = WtiParams.init(8, 8)
        score = wti_score(Tensor(x), Tensor(x.copy()), params)
        np.testing.assert_allclose(score.item(), 1.0, atol=1e-12)

    def test_single_token_single_frame_is_cosine(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((1, 6))
        b = rng.standard_normal((1, 6))
        params = WtiParams.init(6, 6)
        expected = (a @ b.T).item() / (np.linalg.norm(a) * np.linalg.norm(b))
        np.testing.assert_allclose(wti_score(Tensor(a), Tensor(b), params).item(),
                                   expected, atol=1e-12)

    def test_orthogonal_sides_score_zero(self):
        c = np.zeros((2, 4))
        v = np.zeros((3, 4))
        c[:, 0] = 1.0
        v[:, 1] = 1.0
        params = WtiParams.init(4, 4)
        np.testing.assert_allclose(wti_score(Tensor(c), Tensor(v), params).item(),
                                   0.0, atol=1e-12)

    def test_score_bounded_by_one(self):
        rng = np.random.default_rng(2)
        params = WtiParams.init(8, 8)
        for _ in range(30):
            c = rng.standard_normal((4, 8))
            v = rng.standard_normal((6, 8))
            s = wti_score(Tensor(c), Tensor(v), params).item()
            assert -1.0 - 1e-12 <= s <= 1.0 + 1e-12

    def test_matches_double_loop_oracle_with_random_heads(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            tn, fn, d = rng.integers(1, 6), rng.integers(1, 6), 8
            c = rng.standard_normal((tn, d))
            v = rng.standard_normal((fn, d))
            cw = rng.standard_normal((d, 1))
            vw = rng.standard_normal((d, 1))
            params = WtiParams(Tensor(cw), Tensor(vw))
            got = wti_score(Tensor(c), Tensor(v), params).item()
            want = wti_oracle(c, v, cw, vw)
            np.testing.assert_allclose(got, want, atol=1e-10)

    def test_literal_variant_matches_oracle(self):
        rng = np.random.default_rng(4)
        c = rng.standard_normal((3, 8))
        v = 2.5 * rng.standard_normal((4, 8))
        cw = rng.standard_normal((8, 1))
        vw = rng.standard_normal((8, 1))
        params = WtiParams(Tensor(cw), Tensor(vw), literal_c2v_unnormalized=True)
        got = wti_score(Tensor(c), Tensor(v), params).item()
        want = wti_oracle(c, v, cw, vw, literal=True)
        np.testing.assert_allclose(got, want, atol=1e-10)
        # and the literal score differs from the normalized one on scaled frames
        base = wti_score(Tensor(c), Tensor(v), WtiParams(Tensor(cw), Tensor(vw))).item()
        assert abs(got - base) > 1e-6

    def test_zero_heads_give_uniform_weights(self):
        rng = np.random.default_rng(5)
        c = rng.standard_normal((3, 8))
        v = rng.standard_normal((4, 8))
        params = WtiParams.init(8, 8)
        got = wti_score(Tensor(c), Tensor(v), params).item()

        def norm_rows(m):
            return m / np.linalg.norm(m, axis=1, keepdims=True)

        cos = norm_rows(c) @ norm_rows(v).T
        want = 0.5 * (cos.max(axis=1).mean() + cos.max(axis=0).mean())
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_width_mismatch_rejected(self):
        params = WtiParams.init(4, 4)
        with pytest.raises(ShapeMismatchError):
            wti_score(Tensor(np.ones((2, 4))), Tensor(np.ones((2, 5))), params)

    def test_gradient_flows_to_heads(self):
        rng = np.random.default_rng(6)
        c = rng.standard_normal((3, 8))
        v = rng.standard_normal((4, 8))
        params = WtiParams(Tensor(rng.standard_normal((8, 1)), requires_grad=True),
                           Tensor(rng.standard_normal((8, 1)), requires_grad=True))
        wti_score(Tensor(c), Tensor(v), params).backward()
        assert params.caption_weight_head.grad is not None
        assert np.abs(params.caption_weight_head.grad).max() > 0
        assert np.abs(params.video_weight_head.grad).max() > 0


class TestWtiMatrix:
    def _inputs(self, n_c=3, n_v=4, seed=7):
        rng = np.random.default_rng(seed)
        caps = [Tensor(rng.standard_normal((3, 8))) for _ in range(n_c)]
        vids = [Tensor(rng.standard_normal((5, 8))) for _ in range(n_v)]
        return caps, vids

    def test_cells_match_pairwise_scores(self):
        caps, vids = self._inputs()
        rng = np.random.default_rng(8)
        params = WtiParams(Tensor(rng.standard_normal((8, 1))),
                           Tensor(rng.standard_normal((8, 1))))
        mat = wti_matrix(caps, vids, params, level="visual")
        assert mat.scores.shape == (3, 4)
        assert mat.level == "visual"
        for i, c in enumerate(caps):
            for j, v in enumerate(vids):
                np.testing.assert_allclose(mat.scores.array[i, j],
                                           wti_score(c, v, params).item(), atol=1e-12)

    def test_threaded_path_matches_serial(self):
        caps, vids = self._inputs(4, 5)
        rng = np.random.default_rng(9)
        params = WtiParams(Tensor(rng.standard_normal((8, 1))),
                           Tensor(rng.standard_normal((8, 1))))
        serial = wti_matrix(caps, vids, params, threads=1).scores.array
        threaded = wti_matrix(caps, vids, params, threads=4).scores.array
        np.testing.assert_array_equal(serial, threaded)

    def test_gradient_flows_through_matrix(self):
        caps, vids = self._inputs(2, 2)
        params = WtiParams.init(8, 8)
        T.tsum(wti_matrix(caps, vids, params).scores).backward()
        assert params.caption_weight_head.grad is not None

    def test_empty_lists_rejected(self):
        params = WtiParams.init(8, 8)
        with pytest.raises(ShapeMismatchError):
            wti_matrix([], [Tensor(np.ones((2, 8)))], params)
