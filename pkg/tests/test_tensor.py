"""Unit and property tests for the tensor kernel, tape, and optimizer."""

import numpy as np
import pytest

from banter import gradcheck, optim, tensor as T
from banter.gradcheck import grad_check
from banter.optim import AdamState, adam_step, clip_gradients
from banter.tensor import (
    BCE_EPS,
    NumericError,
    ShapeError,
    Tape,
    Tensor,
    add,
    apply_activation,
    backward,
    bce_loss,
    clamp,
    concat,
    conv1d_same,
    div,
    dropout,
    exp,
    group_softmax,
    matmul,
    mean_rows,
    mul,
    relu,
    scale,
    sigmoid,
    sub,
    sum_all,
    tanh,
)


def tanh_reference(x: float, depth: int = 30) -> float:
    """Independent tanh oracle via the Lambert continued fraction.

    tanh(x) = x / (1 + x^2 / (3 + x^2 / (5 + ...))), evaluated bottom-up
    with ``depth`` levels. Converges far below 1e-12 for |x| < 2.
    """
    acc = 2.0 * depth - 1.0
    for k in range(depth - 1, 0, -1):
        acc = (2.0 * k - 1.0) + x * x / acc
    return x / acc


class TestTensorBasics:
    def test_scalar_tensor_has_empty_shape(self):
        t = Tensor(3.5)
        assert t.shape == ()
        assert t.item() == 3.5

    def test_data_is_float64(self):
        t = Tensor([1, 2, 3])
        assert t.data.dtype == np.float64

    def test_non_finite_values_rejected(self):
        with pytest.raises(NumericError):
            Tensor([1.0, np.nan])
        with pytest.raises(NumericError):
            Tensor([np.inf])

    def test_item_requires_single_element(self):
        with pytest.raises(ShapeError):
            Tensor([1.0, 2.0]).item()

    def test_accumulate_grad_adds(self):
        t = Tensor([1.0, 2.0])
        t.accumulate_grad(np.array([0.5, 0.5]))
        t.accumulate_grad(np.array([1.0, 1.0]))
        np.testing.assert_allclose(t.grad, [1.5, 1.5])


class TestActivations:
    def test_sigmoid_at_zero_is_half(self):
        out = apply_activation(Tensor(0.0), "sigmoid")
        assert out.item() == 0.5

    def test_relu_definition(self):
        out = apply_activation(Tensor([-2.0, 3.0]), "relu")
        np.testing.assert_allclose(out.data, [0.0, 3.0])

    def test_tanh_matches_independent_series(self):
        out = apply_activation(Tensor(0.7), "tanh")
        assert abs(out.item() - tanh_reference(0.7)) < 1e-12

    def test_tanh_series_agreement_across_range(self):
        for x in np.linspace(-1.5, 1.5, 13):
            got = apply_activation(Tensor(float(x)), "tanh").item()
            assert abs(got - tanh_reference(float(x))) < 1e-12

    def test_sigmoid_stable_in_tails(self):
        out = apply_activation(Tensor([-800.0, 800.0]), "sigmoid")
        np.testing.assert_allclose(out.data, [0.0, 1.0], atol=1e-300)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            apply_activation(Tensor(1.0), "softsign")


class TestMatmul:
    def test_identity_returns_operand(self):
        rng = np.random.default_rng(0)
        m = Tensor(rng.uniform(-1, 1, size=(3, 3)))
        out = matmul(Tensor(np.eye(3)), m)
        np.testing.assert_allclose(out.data, m.data)

    def test_one_by_one(self):
        out = matmul(Tensor([[2.0]]), Tensor([[3.0]]))
        np.testing.assert_allclose(out.data, [[6.0]])

    def test_gradient_of_sum_is_ones_times_b_transpose(self):
        rng = np.random.default_rng(1)
        a = Tensor(rng.uniform(-1, 1, size=(4, 5)), requires_grad=True)
        b = Tensor(rng.uniform(-1, 1, size=(5, 3)))
        with Tape():
            backward(sum_all(matmul(a, b)))
        np.testing.assert_allclose(a.grad, np.ones((4, 3)) @ b.data.T, atol=1e-12)

    def test_inner_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))

    def test_unsupported_ranks(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.ones(3)), Tensor(np.ones(3)))


class TestConcat:
    def test_single_input_identity(self):
        a = Tensor([1.0, 2.0])
        out = concat([a], axis=0)
        np.testing.assert_allclose(out.data, a.data)

    def test_two_hidden_vectors_give_double_width(self):
        out = concat([Tensor(np.zeros(128)), Tensor(np.ones(128))], axis=0)
        assert out.shape == (256,)

    def test_three_hidden_vectors_give_triple_width(self):
        parts = [Tensor(np.full(128, float(i))) for i in range(3)]
        assert concat(parts, axis=0).shape == (384,)

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            concat([], axis=0)

    def test_mismatched_non_concat_dims_rejected(self):
        with pytest.raises(ShapeError):
            concat([Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4)))], axis=0)

    def test_backward_splits_adjoint(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        b = Tensor([3.0], requires_grad=True)
        weights = Tensor([10.0, 20.0, 30.0])
        with Tape():
            backward(sum_all(mul(concat([a, b], axis=0), weights)))
        np.testing.assert_allclose(a.grad, [10.0, 20.0])
        np.testing.assert_allclose(b.grad, [30.0])


class TestGroupSoftmax:
    def test_singleton_group_is_all_ones(self):
        (w,) = group_softmax([Tensor([0.3, -2.0, 5.0])])
        np.testing.assert_allclose(w.data, np.ones(3))

    def test_identical_vectors_share_weight_equally(self):
        v = np.array([0.1, 0.9, -4.0])
        w1, w2 = group_softmax([Tensor(v), Tensor(v)])
        np.testing.assert_allclose(w1.data, np.full(3, 0.5))
        np.testing.assert_allclose(w2.data, np.full(3, 0.5))

    def test_log_spaced_coordinates(self):
        # coordinate values 0, ln2, ln4 normalize to 1/7, 2/7, 4/7
        vs = [Tensor([0.0]), Tensor([np.log(2.0)]), Tensor([np.log(4.0)])]
        ws = group_softmax(vs)
        np.testing.assert_allclose(
            [w.data[0] for w in ws], [1 / 7, 2 / 7, 4 / 7], atol=1e-12)

    def test_weights_sum_to_one_per_coordinate(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(2, 6))
            vs = [Tensor(rng.uniform(-5, 5, size=4)) for _ in range(n)]
            ws = group_softmax(vs)
            total = np.sum([w.data for w in ws], axis=0)
            np.testing.assert_allclose(total, np.ones(4), atol=1e-9)
            for w in ws:
                assert np.all(w.data > 0.0) and np.all(w.data < 1.0)

    def test_invariant_under_per_coordinate_shift(self):
        rng = np.random.default_rng(8)
        vs = [rng.uniform(-2, 2, size=3) for _ in range(4)]
        shift = rng.uniform(-10, 10, size=3)
        base = group_softmax([Tensor(v) for v in vs])
        shifted = group_softmax([Tensor(v + shift) for v in vs])
        for b, s in zip(base, shifted):
            np.testing.assert_allclose(b.data, s.data, atol=1e-12)

    def test_large_magnitudes_do_not_overflow(self):
        vs = [Tensor([900.0, -900.0]), Tensor([890.0, -890.0])]
        ws = group_softmax(vs)
        for w in ws:
            assert np.all(np.isfinite(w.data))

    def test_empty_group_rejected(self):
        with pytest.raises(ValueError):
            group_softmax([])

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            group_softmax([Tensor([1.0, 2.0]), Tensor([1.0])])


class TestDropout:
    def test_eval_mode_is_exact_identity(self):
        x = Tensor([1.0, -2.0, 3.0])
        assert dropout(x, 0.4, training=False) is x

    def test_zero_rate_is_identity(self):
        x = Tensor([1.0, -2.0])
        assert dropout(x, 0.0, training=True) is x

    def test_training_keeps_expected_fraction(self):
        rng = np.random.default_rng(42)
        x = Tensor(np.ones(10_000))
        out = dropout(x, 0.4, training=True, rng=rng)
        kept = np.count_nonzero(out.data) / 10_000
        assert abs(kept - 0.60) < 0.02
        # inverted scaling keeps the expected value near the input mean
        assert abs(out.data.mean() - 1.0) < 0.02

    def test_rate_one_rejected(self):
        with pytest.raises(ValueError):
            dropout(Tensor([1.0]), 1.0, training=True,
                    rng=np.random.default_rng(0))

    def test_training_without_rng_rejected(self):
        with pytest.raises(ValueError):
            dropout(Tensor([1.0]), 0.4, training=True)


class TestBceLoss:
    def test_half_probability_gives_ln_two(self):
        assert abs(bce_loss(Tensor(0.5), 1).item() - np.log(2.0)) < 1e-12

    def test_perfect_prediction_is_near_zero(self):
        loss = bce_loss(Tensor(1.0 - BCE_EPS), 1).item()
        assert abs(loss - 1e-7) < 1e-9

    def test_confident_wrong_prediction(self):
        assert abs(bce_loss(Tensor(0.9), 0).item() - (-np.log(0.1))) < 1e-12

    def test_clamp_keeps_loss_finite(self):
        assert np.isfinite(bce_loss(Tensor(0.0), 1).item())
        assert np.isfinite(bce_loss(Tensor(1.0), 0).item())

    def test_bad_label_rejected(self):
        with pytest.raises(ValueError):
            bce_loss(Tensor(0.5), 2)

    def test_non_scalar_rejected(self):
        with pytest.raises(ShapeError):
            bce_loss(Tensor([0.5, 0.5]), 1)


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor(np.arange(5, dtype=float), requires_grad=True)
        with Tape():
            backward(sum_all(x))
        np.testing.assert_allclose(x.grad, np.ones(5))

    def test_sigmoid_slope_at_zero(self):
        # d/dw [sigmoid(w) * c] at w=0 is 0.25 * c
        w = Tensor(0.0, requires_grad=True)
        with Tape():
            backward(scale(sigmoid(w), 8.0))
        np.testing.assert_allclose(w.grad, 2.0, atol=1e-12)

    def test_fanout_sums_both_contributions(self):
        # y feeds mul(y, y) and a separate add branch
        def f(params):
            y = tanh(params["x"])
            return sum_all(add(mul(y, y), y))

        x = Tensor(np.array([0.3, -0.8, 1.1]), requires_grad=True)
        report = grad_check(f, {"x": x})
        assert report.passed, report.summary()

    def test_repeated_backward_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        with Tape():
            loss = sum_all(mul(x, x))
            backward(loss)
            np.testing.assert_allclose(x.grad, [4.0])
            backward(loss)
            np.testing.assert_allclose(x.grad, [8.0])

    def test_intermediates_receive_gradients(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape():
            y = mul(x, x)
            backward(sum_all(y))
        np.testing.assert_allclose(y.grad, np.ones(2))

    def test_requires_backward_inside_tape(self):
        loss = sum_all(Tensor([1.0]))
        with pytest.raises(RuntimeError):
            backward(loss)

    def test_rejects_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape():
            y = mul(x, x)
            with pytest.raises(ShapeError):
                backward(y)

    def test_no_grad_flows_to_frozen_tensors(self):
        x = Tensor([1.0], requires_grad=True)
        c = Tensor([3.0])
        with Tape():
            backward(sum_all(mul(x, c)))
        np.testing.assert_allclose(x.grad, [3.0])
        assert c.grad is None


class TestGradCheck:
    def test_square_at_three(self):
        theta = Tensor(3.0, requires_grad=True)
        report = grad_check(lambda p: mul(p["theta"], p["theta"]),
                            {"theta": theta})
        assert report.passed
        assert report.worst < 1e-6

    def test_composite_loss_passes(self):
        rng = np.random.default_rng(3)
        params = {
            "w": Tensor(rng.uniform(-1, 1, size=(1, 5)), requires_grad=True),
            "b": Tensor(rng.uniform(-1, 1, size=1), requires_grad=True),
        }
        x = Tensor(rng.uniform(-1, 1, size=5))

        def f(p):
            z = add(matmul(p["w"], x), p["b"])
            return bce_loss(sigmoid(sum_all(z)), 1)

        report = grad_check(f, params, tol=1e-4)
        assert report.passed, report.summary()

    def test_broken_adjoint_is_named(self):
        def broken_tanh(a):
            y = np.tanh(a.data)
            out = Tensor(y)
            # wrong rule on purpose: drops the 1 - y^2 factor
            T._finish("tanh", [out], [a], lambda gs: (gs[0],))
            return out

        w = Tensor(np.array([0.9, -1.2]), requires_grad=True)
        report = grad_check(lambda p: sum_all(broken_tanh(p["w"])), {"w": w})
        assert not report.passed
        assert "w" in report.failures
        assert "FAIL" in report.summary() and "w" in report.summary()

    def test_rejects_nondeterministic_function(self):
        rng = np.random.default_rng(0)
        x = Tensor([0.5], requires_grad=True)

        def noisy(p):
            return sum_all(mul(p["x"], Tensor(rng.uniform(size=1))))

        with pytest.raises(ValueError):
            grad_check(noisy, {"x": x})

    def test_existing_gradients_survive(self):
        x = Tensor([1.0], requires_grad=True)
        x.grad = np.array([9.0])
        grad_check(lambda p: sum_all(mul(p["x"], p["x"])), {"x": x})
        np.testing.assert_allclose(x.grad, [9.0])


class TestAdam:
    def test_first_step_magnitude(self):
        theta = Tensor(1.0, requires_grad=True)
        theta.grad = np.asarray(0.5)
        adam_step(AdamState(lr=1e-3), {"theta": theta})
        # bias corrections cancel at t=1, so the step is lr * g / (|g| + eps)
        np.testing.assert_allclose(theta.data, 1.0 - 1e-3, atol=1e-8)

    def test_zero_gradient_leaves_parameters_unchanged(self):
        theta = Tensor([1.0, -2.0], requires_grad=True)
        theta.zero_grad()
        adam_step(AdamState(), {"theta": theta})
        np.testing.assert_allclose(theta.data, [1.0, -2.0])

    def test_descends_on_quadratic(self):
        theta = Tensor(1.0, requires_grad=True)
        state = AdamState(lr=1e-2)
        values = []
        for _ in range(3):
            with Tape():
                loss = mul(theta, theta)
                values.append(loss.item())
                backward(loss)
            adam_step(state, {"theta": theta})
        assert values[1] < values[0] and values[2] < values[1]

    def test_gradients_zeroed_after_step(self):
        theta = Tensor([1.0], requires_grad=True)
        theta.grad = np.array([0.3])
        adam_step(AdamState(), {"theta": theta})
        np.testing.assert_allclose(theta.grad, [0.0])

    def test_step_counter_increments(self):
        theta = Tensor([1.0], requires_grad=True)
        state = AdamState()
        for expected in (1, 2, 3):
            theta.grad = np.array([0.1])
            adam_step(state, {"theta": theta})
            assert state.t == expected

    def test_missing_gradient_rejected(self):
        with pytest.raises(ValueError):
            adam_step(AdamState(), {"theta": Tensor([1.0], requires_grad=True)})

    def test_non_finite_gradient_rejected(self):
        theta = Tensor([1.0], requires_grad=True)
        theta.grad = np.array([np.inf])
        with pytest.raises(NumericError):
            adam_step(AdamState(), {"theta": theta})


class TestClipGradients:
    def test_norm_above_cap_is_scaled(self):
        p = Tensor([3.0, 4.0], requires_grad=True)
        p.grad = np.array([3.0, 4.0])
        norm = clip_gradients({"p": p}, 1.0)
        assert abs(norm - 5.0) < 1e-12
        np.testing.assert_allclose(np.linalg.norm(p.grad), 1.0)

    def test_norm_below_cap_untouched(self):
        p = Tensor([1.0], requires_grad=True)
        p.grad = np.array([0.5])
        clip_gradients({"p": p}, 5.0)
        np.testing.assert_allclose(p.grad, [0.5])


def _away_from(x: np.ndarray, points: list, margin: float = 0.05) -> np.ndarray:
    """Nudge values off finite-difference kinks (relu corner, clamp edges)."""
    out = x.copy()
    for p in points:
        near = np.abs(out - p) < margin
        out[near] = p + margin * np.where(out[near] >= p, 1.0, -1.0) * 2.0
    return out


def _op_scenarios(rng):
    """Named (params, loss_fn) pairs exercising every registered op."""
    u = lambda *s: rng.uniform(-1, 1, size=s)
    scen = {}

    a, b = Tensor(u(4), requires_grad=True), Tensor(u(4), requires_grad=True)
    scen["add"] = ({"a": a, "b": b},
                   lambda p: sum_all(tanh(add(p["a"], p["b"]))))

    a, b = Tensor(u(4), requires_grad=True), Tensor(u(4), requires_grad=True)
    scen["sub"] = ({"a": a, "b": b},
                   lambda p: sum_all(tanh(sub(p["a"], p["b"]))))

    a, b = Tensor(u(4), requires_grad=True), Tensor(u(4), requires_grad=True)
    scen["mul"] = ({"a": a, "b": b},
                   lambda p: sum_all(tanh(mul(p["a"], p["b"]))))

    a = Tensor(u(4), requires_grad=True)
    denom = rng.uniform(0.5, 1.5, size=4) * rng.choice([-1.0, 1.0], size=4)
    b = Tensor(denom, requires_grad=True)
    scen["div"] = ({"a": a, "b": b},
                   lambda p: sum_all(tanh(div(p["a"], p["b"]))))

    a = Tensor(u(5), requires_grad=True)
    scen["scale"] = ({"a": a}, lambda p: sum_all(tanh(scale(p["a"], 1.7))))

    a = Tensor(u(3, 4), requires_grad=True)
    b = Tensor(u(4, 2), requires_grad=True)
    scen["matmul_mm"] = ({"a": a, "b": b},
                         lambda p: sum_all(tanh(matmul(p["a"], p["b"]))))

    a = Tensor(u(3, 4), requires_grad=True)
    b = Tensor(u(4), requires_grad=True)
    scen["matmul_mv"] = ({"a": a, "b": b},
                         lambda p: sum_all(tanh(matmul(p["a"], p["b"]))))

    a = Tensor(u(4), requires_grad=True)
    b = Tensor(u(4, 3), requires_grad=True)
    scen["matmul_vm"] = ({"a": a, "b": b},
                         lambda p: sum_all(tanh(matmul(p["a"], p["b"]))))

    parts = {f"x{i}": Tensor(u(3), requires_grad=True) for i in range(3)}
    mixer = Tensor(u(9))
    scen["concat"] = (parts, lambda p, m=mixer: sum_all(tanh(mul(
        concat([p["x0"], p["x1"], p["x2"]], axis=0), m))))

    a = Tensor(u(5), requires_grad=True)
    scen["sum_all"] = ({"a": a}, lambda p: mul(sum_all(p["a"]), sum_all(p["a"])))

    a = Tensor(u(4, 3), requires_grad=True)
    mixer = Tensor(u(3))
    scen["mean_rows"] = ({"a": a}, lambda p, m=mixer: sum_all(
        tanh(mul(mean_rows(p["a"]), m))))

    a = Tensor(_away_from(u(6), [0.0]), requires_grad=True)
    scen["relu"] = ({"a": a}, lambda p: sum_all(mul(relu(p["a"]), relu(p["a"]))))

    a = Tensor(u(6), requires_grad=True)
    scen["tanh"] = ({"a": a}, lambda p: sum_all(mul(tanh(p["a"]), tanh(p["a"]))))

    a = Tensor(u(6), requires_grad=True)
    scen["sigmoid"] = ({"a": a},
                       lambda p: sum_all(mul(sigmoid(p["a"]), sigmoid(p["a"]))))

    a = Tensor(u(6), requires_grad=True)
    scen["exp"] = ({"a": a}, lambda p: sum_all(tanh(exp(p["a"]))))

    a = Tensor(_away_from(u(6), [-0.5, 0.5]), requires_grad=True)
    scen["clamp"] = ({"a": a},
                     lambda p: sum_all(tanh(clamp(p["a"], -0.5, 0.5))))

    vs = {f"v{i}": Tensor(u(3), requires_grad=True) for i in range(3)}
    mixer = Tensor(u(9))
    scen["group_softmax"] = (vs, lambda p, m=mixer: sum_all(mul(concat(
        group_softmax([p["v0"], p["v1"], p["v2"]]), axis=0), m)))

    a = Tensor(u(8), requires_grad=True)
    mask_seed = int(rng.integers(1 << 30))
    scen["dropout"] = ({"a": a}, lambda p: sum_all(tanh(dropout(
        p["a"], 0.4, training=True, rng=np.random.default_rng(mask_seed)))))

    x = Tensor(u(4, 2), requires_grad=True)
    k = Tensor(u(3, 3, 2), requires_grad=True)
    c = Tensor(u(3), requires_grad=True)
    scen["conv1d_same"] = ({"x": x, "k": k, "c": c}, lambda p: sum_all(
        tanh(conv1d_same(p["x"], p["k"], p["c"]))))

    z = Tensor(u(4), requires_grad=True)
    label = int(rng.integers(0, 2))
    scen["bce_loss"] = ({"z": z},
                        lambda p: bce_loss(sigmoid(sum_all(p["z"])), label))

    return scen


class TestGradientProperty:
    @pytest.mark.parametrize("seed", range(100))
    def test_all_ops_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        for name, (params, f) in _op_scenarios(rng).items():
            report = grad_check(f, params, tol=1e-4)
            assert report.passed, f"{name}: {report.summary()}"


class TestConv1d:
    def test_width_one_is_pointwise_affine(self):
        rng = np.random.default_rng(11)
        x = rng.uniform(-1, 1, size=(5, 2))
        k = rng.uniform(-1, 1, size=(3, 1, 2))
        c = rng.uniform(-1, 1, size=3)
        out = conv1d_same(Tensor(x), Tensor(k), Tensor(c))
        np.testing.assert_allclose(out.data, x @ k[:, 0, :].T + c, atol=1e-12)

    def test_matches_direct_padding_evaluation(self):
        rng = np.random.default_rng(12)
        frames, c_in, c_out, width = 6, 3, 2, 3
        x = rng.uniform(-1, 1, size=(frames, c_in))
        k = rng.uniform(-1, 1, size=(c_out, width, c_in))
        c = rng.uniform(-1, 1, size=c_out)
        padded = np.zeros((frames + 2, c_in))
        padded[1:-1] = x
        want = np.empty((frames, c_out))
        for t in range(frames):
            window = padded[t:t + width]
            for o in range(c_out):
                want[t, o] = np.sum(window * k[o]) + c[o]
        out = conv1d_same(Tensor(x), Tensor(k), Tensor(c))
        np.testing.assert_allclose(out.data, want, atol=1e-12)

    def test_even_width_rejected(self):
        with pytest.raises(ShapeError):
            conv1d_same(Tensor(np.ones((4, 2))), Tensor(np.ones((1, 2, 2))),
                        Tensor(np.ones(1)))

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            conv1d_same(Tensor(np.ones((4, 2))), Tensor(np.ones((1, 3, 5))),
                        Tensor(np.ones(1)))
