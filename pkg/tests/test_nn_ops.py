import numpy as np
import pytest

from maglink.nn.ops import (
    dot_decoder,
    dot_decoder_backward,
    dropout,
    dropout_backward,
    finite_diff_check,
    linear,
    linear_backward,
    relu,
    relu_backward,
    weighted_bce,
)
from maglink.nn.params import NonFiniteGradientError, ParameterSet, adam_step, init_uniform
from maglink.rng import stream


class TestLinear:
    def test_identity_weight(self):
        x = stream(0, "lin").standard_normal((4, 3))
        y, _ = linear(x, np.eye(3), np.zeros(3))
        assert np.allclose(y, x)

    def test_zero_input_gives_bias(self):
        b = np.array([1.0, -2.0])
        y, _ = linear(np.zeros((3, 5)), np.zeros((5, 2)), b)
        assert np.allclose(y, np.broadcast_to(b, (3, 2)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            linear(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros(2))

    def test_gradients_match_finite_differences(self):
        gen = stream(1, "lin-grad")
        x0 = gen.standard_normal((5, 3))
        w0 = gen.standard_normal((3, 2))
        b0 = gen.standard_normal(2)
        r = gen.standard_normal((5, 2))  # linear functional on the output

        def loss(x, w, b):
            y, cache = linear(x, w, b)
            gx, gw, gb = linear_backward(r, cache)
            return float(np.sum(y * r)), gx, gw, gb

        for idx, arr in enumerate((x0, w0, b0)):
            def f(v, idx=idx):
                parts = [x0.copy(), w0.copy(), b0.copy()]
                parts[idx] = v.reshape(parts[idx].shape)
                out = loss(*parts)
                return out[0], out[1 + idx].ravel()

            assert finite_diff_check(f, arr.ravel()) < 1e-6


class TestRelu:
    def test_gradient_away_from_kink(self):
        gen = stream(2, "relu")
        x0 = gen.standard_normal(20)
        x0[np.abs(x0) < 1e-3] += 0.1  # probe away from the kink
        r = gen.standard_normal(20)

        def f(v):
            y, mask = relu(v)
            return float(np.sum(y * r)), relu_backward(r, mask)

        assert finite_diff_check(f, x0) < 1e-6


class TestWeightedBce:
    def test_saturated_correct(self):
        loss, _ = weighted_bce(np.array([20.0]), np.array([1.0]))
        assert loss < 1e-8

    def test_logit_zero(self):
        loss, _ = weighted_bce(np.array([0.0]), np.array([1.0]), pos_weight=1.0)
        assert loss == pytest.approx(np.log(2.0))

    def test_pos_weight_one_equals_unweighted(self):
        gen = stream(3, "bce")
        s = gen.standard_normal(50)
        y = (gen.random(50) < 0.5).astype(float)
        a, ga = weighted_bce(s, y, 1.0)
        manual = float(np.mean(-(y * np.log(1 / (1 + np.exp(-s))) + (1 - y) * np.log(1 - 1 / (1 + np.exp(-s))))))
        assert a == pytest.approx(manual, rel=1e-12)

    def test_stable_at_huge_logits(self):
        loss, grad = weighted_bce(np.array([1e4, -1e4]), np.array([0.0, 1.0]), pos_weight=2.0)
        assert np.isfinite(loss) and np.all(np.isfinite(grad))

    def test_gradient_matches_finite_differences(self):
        gen = stream(4, "bce-grad")
        s0 = gen.standard_normal(30)
        y = (gen.random(30) < 0.4).astype(float)

        def f(v):
            loss, grad = weighted_bce(v, y, pos_weight=1.7)
            return loss, grad

        assert finite_diff_check(f, s0) < 1e-6

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            weighted_bce(np.array([]), np.array([]))


class TestAdam:
    def test_first_step_is_lr_sized(self):
        params = ParameterSet()
        params.add("w", np.array([0.0]))
        adam_step(params, {"w": np.array([1.0])}, lr=1e-3)
        assert params["w"][0] == pytest.approx(-1e-3, rel=1e-6)

    def test_zero_gradient_fixed_point(self):
        params = ParameterSet()
        params.add("w", np.array([0.7]))
        adam_step(params, {"w": np.array([0.0])}, lr=1e-3)
        assert params["w"][0] == 0.7

    def test_descends_quadratic_against_scalar_reference(self):
        # independent scalar implementation of the same update rule
        theta_ref, m, v = 1.0, 0.0, 0.0
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        trajectory = []
        for t in range(1, 11):
            g = 2.0 * theta_ref
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta_ref -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
            trajectory.append(theta_ref)

        params = ParameterSet()
        params.add("theta", np.array([1.0]))
        values = []
        for _ in range(10):
            g = 2.0 * params["theta"]
            adam_step(params, {"theta": g}, lr=0.1)
            values.append(float(params["theta"][0]))
        assert np.allclose(values, trajectory, rtol=1e-12)
        fs = [v * v for v in [1.0] + values]
        assert all(b < a for a, b in zip(fs, fs[1:]))

    def test_weight_decay_added_to_gradient(self):
        params = ParameterSet()
        params.add("w", np.array([2.0]))
        adam_step(params, {"w": np.array([0.0])}, lr=1e-3, weight_decay=0.5)
        # effective gradient 1.0 shrinks the weight
        assert params["w"][0] == pytest.approx(2.0 - 1e-3, rel=1e-6)

    def test_non_finite_gradient_names_tensor(self):
        params = ParameterSet()
        params.add("bad_tensor", np.array([1.0]))
        with pytest.raises(NonFiniteGradientError, match="bad_tensor"):
            adam_step(params, {"bad_tensor": np.array([np.nan])}, lr=1e-3)

    def test_step_counter_shared(self):
        params = ParameterSet()
        params.add("a", np.zeros(2))
        params.add("b", np.zeros(3))
        adam_step(params, {"a": np.ones(2), "b": np.ones(3)}, lr=1e-3)
        assert params.step == 1

    def test_checkpoint_round_trip(self, tmp_path):
        params = ParameterSet()
        params.add("w", init_uniform((3, 2), 3, seed=0, tag="w"))
        adam_step(params, {"w": np.ones((3, 2))}, lr=1e-2)
        params.save(tmp_path / "ckpt.bin")
        loaded = ParameterSet.load(tmp_path / "ckpt.bin")
        assert loaded.step == params.step
        assert np.array_equal(loaded["w"], params["w"])
        assert np.array_equal(loaded.moment1["w"], params.moment1["w"])
        # identical content serializes identically
        loaded.save(tmp_path / "ckpt2.bin")
        assert (tmp_path / "ckpt.bin").read_bytes() == (tmp_path / "ckpt2.bin").read_bytes()


class TestDropout:
    def test_inference_identity(self):
        x = stream(5, "drop").standard_normal((4, 6))
        y, mask = dropout(x, 0.5, training=False)
        assert y is x and mask is None

    def test_p_zero_identity(self):
        x = stream(6, "drop0").standard_normal((4, 6))
        y, mask = dropout(x, 0.0, training=True)
        assert np.array_equal(y, x)

    def test_monte_carlo_expectation(self):
        x = np.full((2, 5), 3.0)
        p = 0.4
        n = 10_000
        total = np.zeros_like(x)
        for i in range(n):
            y, _ = dropout(x, p, training=True, seed=0, tag="mc", index=i)
            total += y
        mean = total / n
        # per-entry std of the estimator: x * sqrt(p/(1-p)) / sqrt(n)
        sigma = 3.0 * np.sqrt(p / (1 - p)) / np.sqrt(n)
        assert np.all(np.abs(mean - x) < 3 * sigma + 1e-12)

    def test_mask_deterministic_per_key(self):
        x = stream(7, "drop-det").standard_normal((8, 8))
        y1, m1 = dropout(x, 0.5, True, seed=3, tag="layer1", index=9)
        y2, m2 = dropout(x, 0.5, True, seed=3, tag="layer1", index=9)
        y3, _ = dropout(x, 0.5, True, seed=3, tag="layer1", index=10)
        assert np.array_equal(y1, y2) and np.array_equal(m1, m2)
        assert not np.array_equal(y1, y3)

    def test_invalid_rate(self):
        with pytest.raises(ValueError):
            dropout(np.zeros((2, 2)), 1.0, training=True)

    def test_backward_scales_by_mask(self):
        x = stream(8, "drop-b").standard_normal(40)
        y, mask = dropout(x, 0.25, True, seed=1, tag="b", index=0)
        g = np.ones(40)
        gx = dropout_backward(g, mask, 0.25)
        assert np.allclose(gx, mask / 0.75)


class TestDotDecoder:
    def test_orthogonal_scores_zero(self):
        src = np.array([[1.0, 0.0]])
        dst = np.array([[0.0, 1.0]])
        scores, _ = dot_decoder(src, dst, [(0, 0)])
        assert scores[0] == 0.0

    def test_norm_squared(self):
        z = np.array([[1.0, 2.0, 2.0]])
        scores, _ = dot_decoder(z, z, [(0, 0)])
        assert scores[0] == pytest.approx(9.0)

    def test_gradient_is_partner_embedding(self):
        gen = stream(9, "dec")
        src = gen.standard_normal((3, 4))
        dst = gen.standard_normal((5, 4))
        edges = [(0, 2), (1, 0)]
        scores, cache = dot_decoder(src, dst, edges)
        gs, gd = dot_decoder_backward(np.array([1.0, 0.0]), cache)
        assert np.allclose(gs[0], dst[2])
        assert np.allclose(gd[2], src[0])
        assert np.allclose(gs[1], 0.0)

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            dot_decoder(np.zeros((2, 3)), np.zeros((2, 3)), [(0, 5)])


class TestFiniteDiffCheck:
    def test_quadratic(self):
        def f(x):
            return float(np.sum(x**2)), 2 * x

        assert finite_diff_check(f, np.array([1.0, -2.0, 0.5])) < 1e-9

    def test_wrong_gradient_detected(self):
        def f(x):
            return float(np.sum(x**2)), 3 * x

        assert finite_diff_check(f, np.array([1.0, -2.0])) > 0.1

    def test_non_finite_rejected(self):
        def f(x):
            return float("inf"), x

        with pytest.raises(ValueError):
            finite_diff_check(f, np.array([1.0]))
