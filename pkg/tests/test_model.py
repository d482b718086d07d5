import numpy as np
import pytest

from qlinear.model import (
    CheckpointError,
    base_forecast,
    forward_all_slots,
    forward_ql,
    forward_qd,
    forward_qn,
    forward_slot,
    init_model,
    load_checkpoint,
    param_count,
    predict_level,
    save_checkpoint,
    unit_response,
)
from qlinear.preprocess import decompose, normalize_last


def zero_model(variant, lookback=5, horizon=3, m=1, channels=2, **kw):
    model = init_model(variant, lookback, horizon, m, channels, np.random.default_rng(0),
                       moving_average_w=3, **kw)
    for head in model.heads.values():
        head.weight[...] = 0.0
        head.bias[...] = 0.0
    return model


def enumerate_params(model):
    # independent count: walk every array and tally its scalars one by one
    total = 0
    for arr in model.parameters().values():
        for _ in np.ndindex(arr.shape):
            total += 1
    return total


class TestForward:
    def test_qd_zero(self):
        m = zero_model("qd")
        trend, season = decompose(np.ones((5, 2)), 3)
        assert not forward_qd(trend, season, m).any()

    def test_qd_trend_bias(self):
        m = zero_model("qd")
        m.heads["trend"].bias[:] = 1.0
        x = np.random.default_rng(1).normal(size=(5, 2))
        np.testing.assert_array_equal(forward_qd(*decompose(x, 3), m), np.ones((3, 2)))

    @pytest.mark.parametrize("variant", ["qd", "qn", "ql"])
    def test_channel_independence(self, variant):
        m = init_model(variant, 6, 2, 1, 2, np.random.default_rng(2), moving_average_w=3)
        x = np.random.default_rng(3).normal(size=(6, 2))
        x2 = x.copy()
        x2[:, 1] += np.random.default_rng(4).normal(size=6)
        a, b = forward_slot(x, 0.5, m), forward_slot(x2, 0.5, m)
        np.testing.assert_array_equal(a[:, 0], b[:, 0])
        assert not np.allclose(a[:, 1], b[:, 1])

    def test_qn_zero_head_persists_last_value(self):
        m = zero_model("qn")
        x = np.random.default_rng(5).normal(size=(5, 2))
        normed, last = normalize_last(x)
        np.testing.assert_array_equal(forward_qn(normed, last, m), np.repeat(last, 3, axis=0))

    def test_qn_constant_input(self):
        m = init_model("qn", 5, 3, 1, 2, np.random.default_rng(6))
        m.heads["norm"].bias[:] = [0.1, 0.2, 0.3]
        normed, last = normalize_last(np.full((5, 2), 2.0))
        np.testing.assert_allclose(forward_qn(normed, last, m), m.heads["norm"].bias[:, None] + last)

    def test_qn_shift_equivariance(self):
        m = init_model("qn", 5, 3, 1, 2, np.random.default_rng(7))
        x = np.random.default_rng(8).normal(size=(5, 2))
        k = 3.7
        np.testing.assert_allclose(forward_slot(x + k, 0.5, m), forward_slot(x, 0.5, m) + k, atol=1e-12)

    def test_qn_literal_reading_is_not_shift_free_of_embedding(self):
        m = init_model("qn", 5, 3, 1, 1, np.random.default_rng(9), literal_eq3=True)
        x = np.random.default_rng(10).normal(size=(5, 1))
        delta = forward_slot(x, 1.0, m) - forward_slot(x, 0.0, m)
        np.testing.assert_allclose(delta[:, 0], m.heads["norm"].weight.sum(axis=0), atol=1e-12)

    def test_ql_zero(self):
        assert not forward_ql(np.ones((5, 2)), zero_model("ql")).any()

    def test_ql_copy_tail(self):
        m = zero_model("ql", lookback=5, horizon=3)
        for h in range(3):
            m.heads["linear"].weight[2 + h, h] = 1.0
        z = np.random.default_rng(11).normal(size=(5, 2))
        np.testing.assert_array_equal(forward_ql(z, m), z[2:])

    def test_ql_linearity(self):
        m = init_model("ql", 6, 4, 1, 3, np.random.default_rng(12))
        rng = np.random.default_rng(13)
        z1, z2 = rng.normal(size=(2, 6, 3))
        a, b = 1.7, -0.3
        np.testing.assert_allclose(forward_ql(a * z1 + b * z2, m),
                                   a * forward_ql(z1, m) + b * forward_ql(z2, m), atol=1e-10)

    def test_shape_mismatch(self):
        m = zero_model("ql")
        with pytest.raises(ValueError):
            forward_slot(np.ones((4, 2)), 0.5, m)


class TestSlots:
    def test_single_slot(self):
        m = init_model("qn", 5, 2, 1, 1, np.random.default_rng(0))
        out = forward_all_slots(np.ones((5, 1)), m)
        assert len(out) == 1
        np.testing.assert_array_equal(out[0], predict_level(np.ones((5, 1)), m, 0.5))

    def test_identical_slots_identical_forecasts(self):
        m = init_model("qd", 6, 2, 2, 2, np.random.default_rng(1), moving_average_w=3)
        m.slots.levels[:] = [0.5, 0.5]
        x = np.random.default_rng(2).normal(size=(6, 2))
        a, b = forward_all_slots(x, m)
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("variant", ["qd", "qn", "ql"])
    def test_zero_embedding_collapses_slots(self, variant):
        m = init_model(variant, 6, 2, 4, 2, np.random.default_rng(3), moving_average_w=3)
        m.slots.levels[:] = [0.5, 0.1, 0.7, 0.99]
        m.slots.weights[:] = 0.0
        m.slots.biases[:] = 0.0
        outs = forward_all_slots(np.random.default_rng(4).normal(size=(6, 2)), m)
        for o in outs[1:]:
            np.testing.assert_array_equal(o, outs[0])

    def test_heads_are_shared(self):
        m = init_model("ql", 6, 2, 3, 1, np.random.default_rng(5))
        m.slots.levels[:] = [0.5, 0.2, 0.8]
        x = np.random.default_rng(6).normal(size=(6, 1))
        before = forward_all_slots(x, m)
        m.heads["linear"].weight[0, 0] += 1.0
        after = forward_all_slots(x, m)
        for b, a in zip(before, after):
            assert a[0, 0] != b[0, 0]

    @pytest.mark.parametrize("variant", ["qd", "qn", "ql"])
    @pytest.mark.parametrize("flags", [{}, {"literal_eq3": True}, {"subsampled_trend": True},
                                       {"per_channel_heads": True}, {"reconstruct": True}])
    def test_affine_shortcut_matches_literal_path(self, variant, flags):
        rng = np.random.default_rng(7)
        m = init_model(variant, 9, 3, 3, 2, rng, moving_average_w=3, **flags)
        x = rng.normal(size=(4, 9, 2))
        base, _ = base_forecast(x, m)
        resp = unit_response(m)
        for a in (-1.3, 0.0, 0.4):
            np.testing.assert_allclose(base + a * resp, forward_slot(x, a, m), atol=1e-12)

    def test_channel_permutation(self):
        m = init_model("qd", 8, 3, 1, 3, np.random.default_rng(8), moving_average_w=3)
        x = np.random.default_rng(9).normal(size=(8, 3))
        perm = [2, 0, 1]
        np.testing.assert_allclose(forward_slot(x[:, perm], 0.5, m), forward_slot(x, 0.5, m)[:, perm])

    def test_reconstruction_copy_configuration(self):
        lookback, horizon = 6, 2
        m = zero_model("ql", lookback=lookback, horizon=horizon, reconstruct=True)
        m.heads["linear"].weight[:, :lookback] = np.eye(lookback)
        m.slots.weights[:] = 0.0
        x = np.random.default_rng(10).normal(size=(lookback, 2))
        out = forward_all_slots(x, m)[0]
        assert out.shape == (lookback + horizon, 2)
        np.testing.assert_allclose(out[:lookback], x, atol=1e-12)


class TestParamCount:
    def test_ql(self):
        m = init_model("ql", 336, 96, 1, 7, np.random.default_rng(0))
        assert param_count(m) == 336 * 96 + 96 + 2 == 32354
        assert param_count(m) == enumerate_params(m)

    def test_qd(self):
        m = init_model("qd", 336, 96, 1, 7, np.random.default_rng(0))
        assert param_count(m) == 2 * (336 * 96 + 96) + 2 == 64706
        assert param_count(m) == enumerate_params(m)

    def test_qd_subsampled_trend(self):
        m = init_model("qd", 336, 96, 1, 7, np.random.default_rng(0), subsampled_trend=True)
        assert m.heads["trend"].weight.shape == (336 // 25, 96)
        assert param_count(m) == enumerate_params(m)

    def test_growth_with_m(self):
        small = init_model("qn", 336, 96, 1, 7, np.random.default_rng(0))
        big = init_model("qn", 336, 96, 1024, 7, np.random.default_rng(0))
        assert param_count(big) - param_count(small) == 2 * 1023

    def test_per_channel_scales_with_c(self):
        m = init_model("qn", 10, 4, 1, 3, np.random.default_rng(0), per_channel_heads=True)
        assert param_count(m) == 3 * (10 * 4 + 4) + 2 == enumerate_params(m)


class TestCheckpoint:
    @pytest.mark.parametrize("variant", ["qd", "qn", "ql"])
    def test_round_trip(self, tmp_path, variant):
        m = init_model(variant, 8, 3, 4, 2, np.random.default_rng(1), moving_average_w=3,
                       reconstruct=True, shared_embedding=True)
        m.slots.weights[:] = 1.25
        save_checkpoint(m, tmp_path / "ck.npz", stats_ref="s.txt", config_text="[model]\nm = 4\n")
        back = load_checkpoint(tmp_path / "ck.npz")
        assert (back.variant, back.lookback, back.horizon, back.slots.m) == (variant, 8, 3, 4)
        assert back.reconstruct and back.slots.shared
        for k, v in m.parameters().items():
            assert back.parameters()[k].tobytes() == v.tobytes()
        assert back.metadata["stats_ref"] == "s.txt"
        x = np.random.default_rng(2).normal(size=(8, 2))
        np.testing.assert_array_equal(predict_level(x, back), predict_level(x, m))

    def test_version_mismatch(self, tmp_path):
        m = init_model("ql", 4, 2, 1, 1, np.random.default_rng(0))
        save_checkpoint(m, tmp_path / "ck.npz")
        with np.load(tmp_path / "ck.npz") as data:
            arrays = dict(data)
        arrays["format_version"] = np.array(99)
        np.savez(tmp_path / "old.npz", **arrays)
        with pytest.raises(CheckpointError, match="version 99"):
            load_checkpoint(tmp_path / "old.npz")

    def test_not_a_checkpoint(self, tmp_path):
        (tmp_path / "x.npz").write_bytes(b"garbage")
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "x.npz")
