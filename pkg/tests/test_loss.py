import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import max_relative_error, numeric_grads, objective, random_point
from qlinear.loss import aux_weight, backward, loss_and_grad, multitask_loss, pinball, pinball_grad
from qlinear.model import forward_all_slots, forward_slot, init_model
from qlinear.quantile import QuantileSlots


def scalar_pinball(y, f, a):
    # plain-python reference, no numpy
    d = y - f
    return a * d if d >= 0 else (a - 1) * d


def scalar_multitask(ys, forecasts, levels):
    n = len(ys)
    main = sum(scalar_pinball(y, f, levels[0]) for y, f in zip(ys, forecasts[0]))
    aux = 0.0
    if len(levels) > 1:
        for fs, a in zip(forecasts[1:], levels[1:]):
            aux += sum(scalar_pinball(y, f, a) for y, f in zip(ys, fs))
        aux /= 2 * (len(levels) - 1)
    return (main + aux) / (n * 2)


def slots_with(levels, shared=False):
    s = QuantileSlots.create(len(levels), shared=shared)
    s.levels[:] = levels
    return s


class TestPinball:
    @pytest.mark.parametrize("y,f,a,expected", [(1, 1, 0.7, 0.0), (2, 1, 0.5, 0.5), (0, 1, 0.9, 0.1)])
    def test_examples(self, y, f, a, expected):
        assert pinball(y, f, a) == pytest.approx(expected, abs=1e-15)

    @given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(0.001, 0.999))
    def test_non_negative(self, y, f, a):
        v = float(pinball(y, f, a))
        assert v >= 0
        assert (v == 0) == (y == f) or abs(y - f) < 1e-300

    @given(st.floats(-100, 100), st.floats(-100, 100), st.floats(-100, 100), st.floats(0.01, 0.99))
    def test_convex_midpoint(self, y, f1, f2, a):
        mid = float(pinball(y, (f1 + f2) / 2, a))
        assert mid <= (float(pinball(y, f1, a)) + float(pinball(y, f2, a))) / 2 + 1e-12

    def test_kink_convention(self):
        assert pinball_grad(1.0, 1.0, 0.3) == pytest.approx(0.7)
        assert pinball_grad(2.0, 1.0, 0.3) == pytest.approx(-0.3)


class TestMultitask:
    def test_perfect_fit(self):
        y = np.random.default_rng(0).normal(size=(3, 4, 2))
        assert multitask_loss(y, [y], slots_with([0.5])).total == 0.0

    def test_three_slot_example(self):
        y = np.full((1, 1, 1), 2.0)
        f = [np.ones((1, 1, 1))] * 3
        got = multitask_loss(y, f, slots_with([0.5, 0.9, 0.1])).total
        assert got == pytest.approx(scalar_multitask([2.0], [[1.0]] * 3, [0.5, 0.9, 0.1]), abs=1e-15)
        assert got == pytest.approx(0.375, abs=1e-15)

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(1)
        y = rng.normal(size=(2, 3, 2))
        levels = [0.5, 0.2, 0.95, 0.6]
        fs = [rng.normal(size=y.shape) for _ in levels]
        want = scalar_multitask(list(y.ravel()), [list(f.ravel()) for f in fs], levels)
        assert multitask_loss(y, fs, slots_with(levels)).total == pytest.approx(want, rel=1e-12)

    def test_aux_weight_averages(self):
        y = np.zeros((1, 1, 1))
        f = np.ones((1, 1, 1))
        a = multitask_loss(y, [f, f], slots_with([0.5, 0.3])).aux_term
        b = multitask_loss(y, [f, f, f], slots_with([0.5, 0.3, 0.3])).aux_term
        assert a == pytest.approx(b, abs=1e-15)

    def test_m1_has_no_aux(self):
        assert aux_weight(1) == 0.0

    def test_m1_is_quarter_mae(self):
        rng = np.random.default_rng(2)
        y, f = rng.normal(size=(2, 5, 4, 3))
        total = multitask_loss(y, [f], slots_with([0.5])).total
        assert abs(total * 4 - np.abs(y - f).mean()) <= 1e-12

    def test_errors(self):
        y = np.zeros((1, 2, 1))
        with pytest.raises(ValueError, match="median"):
            multitask_loss(y, [y], slots_with([0.4]))
        with pytest.raises(ValueError, match="shape"):
            multitask_loss(y, [np.zeros((1, 3, 1))], slots_with([0.5]))
        with pytest.raises(ValueError, match="inside"):
            multitask_loss(y, [y, y], slots_with([0.5, 0.0]))
        with pytest.raises(ValueError):
            multitask_loss(y, [y], slots_with([0.5, 0.2]))


class TestGradients:
    def test_loss_matches_literal_path(self):
        model, x, y = random_point(np.random.default_rng(3), "qd", True)
        breakdown, _ = loss_and_grad(x, y, model)
        assert breakdown.total == pytest.approx(objective(x, y, model), rel=1e-12)

    def test_kink_bias_gradient(self):
        model = init_model("ql", 3, 1, 1, 1, np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(1, 3, 1))
        y = forward_slot(x[0], 0.5, model)[None]
        g = backward(x, y, model)
        assert g["linear.bias"][0] == pytest.approx(0.5 / 2)
        # one-sided finite difference from above confirms the chosen branch
        eps = 1e-7
        model.heads["linear"].bias[0] += eps
        up = objective(x, y, model)
        assert up / eps == pytest.approx(0.5 / 2, rel=1e-6)

    def test_embedding_locality(self):
        model, x, y = random_point(np.random.default_rng(4), "qn", False, m=4)
        before = forward_all_slots(x, model)
        model.slots.weights[2] += 0.5
        after = forward_all_slots(x, model)
        for k in range(4):
            assert np.array_equal(before[k], after[k]) == (k != 2)

    def test_cross_slot_embedding_grad_is_zero(self):
        # slot 2's embedding gradient depends only on slot 2's own residuals
        model, x, y = random_point(np.random.default_rng(5), "ql", False, m=3)
        g1 = backward(x, y, model)
        model.slots.levels[1] = 0.123  # change only slot 1's level
        g2 = backward(x, y, model)
        assert g1["embedding.weight"][2] == g2["embedding.weight"][2]
        assert g1["embedding.bias"][2] == g2["embedding.bias"][2]

    @pytest.mark.parametrize("variant", ["qd", "qn", "ql"])
    @pytest.mark.parametrize("reconstruct", [False, True])
    @pytest.mark.parametrize("flags", [{}, {"shared_embedding": True}, {"per_channel_heads": True},
                                       {"literal_eq3": True}, {"subsampled_trend": True}])
    def test_finite_differences(self, variant, reconstruct, flags):
        rng = np.random.default_rng([ord(variant[1]), int(reconstruct), len(str(flags))])
        model, x, y = random_point(rng, variant, reconstruct, **flags)
        _, analytic = loss_and_grad(x, y, model)
        assert max_relative_error(analytic, numeric_grads(x, y, model)) <= 1e-5

    def test_chunked_slots_agree(self, monkeypatch):
        import qlinear.loss as loss_mod

        model, x, y = random_point(np.random.default_rng(6), "qd", False, m=5)
        ref_b, ref_g = loss_and_grad(x, y, model)
        monkeypatch.setattr(loss_mod, "_CHUNK_ELEMENTS", 1)
        b, g = loss_and_grad(x, y, model)
        assert b.total == pytest.approx(ref_b.total, rel=1e-14)
        for k in ref_g:
            np.testing.assert_allclose(g[k], ref_g[k], rtol=1e-12, atol=1e-15)

    def test_shape_errors(self):
        model = init_model("ql", 4, 2, 1, 1, np.random.default_rng(0))
        with pytest.raises(ValueError):
            loss_and_grad(np.zeros((1, 4, 1)), np.zeros((1, 3, 1)), model)
