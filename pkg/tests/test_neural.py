"""Neural building blocks: MLP backprop, Adam, masked softmax."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deldesign.errors import DimensionError, NoValidActionError, NumericError
from deldesign.neural import MLP, Adam, adam_step, masked_log_softmax, masked_softmax


def fd_gradient(f, x, h=1e-6):
    """Central finite differences of scalar f at flat vector x."""
    g = np.empty_like(x)
    for i in range(len(x)):
        xp = x.copy(); xp[i] += h
        xm = x.copy(); xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


class TestMLP:
    def test_zero_weight_output(self):
        # [TRIVIAL] zero all parameters -> output zero for any input
        net = MLP([3, 4, 2])
        net.set_flat(np.zeros_like(net.get_flat()))
        out, _ = net.forward(np.array([1.0, -2.0, 3.0]))
        np.testing.assert_array_equal(out, [0.0, 0.0])

    def test_affine_single_layer(self):
        # [DERIVED] one layer is exactly x @ W + b
        net = MLP([2, 2])
        net.params[0] = np.array([[1.0, 2.0], [3.0, 4.0]])
        net.params[1] = np.array([0.5, -0.5])
        out, _ = net.forward(np.array([1.0, 1.0]))
        np.testing.assert_allclose(out, [4.5, 5.5])

    def test_relu_hidden(self):
        # [DERIVED] hand-computed two-layer pass with a clipped unit
        net = MLP([1, 2, 1])
        net.params[0] = np.array([[1.0, -1.0]])
        net.params[1] = np.array([0.0, 0.0])
        net.params[2] = np.array([[2.0], [3.0]])
        net.params[3] = np.array([1.0])
        out, _ = net.forward(np.array([2.0]))
        # hidden = relu([2, -2]) = [2, 0]; out = 2*2 + 0*3 + 1 = 5
        assert out[0] == pytest.approx(5.0)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(0)
        net = MLP([4, 8, 3], rng=rng)
        x = rng.normal(size=(5, 4))
        batch, _ = net.forward(x)
        for i in range(5):
            single, _ = net.forward(x[i])
            np.testing.assert_allclose(batch[i], single)

    def test_input_width_check(self):
        net = MLP([3, 2])
        with pytest.raises(DimensionError):
            net.forward(np.zeros(4))

    def test_flat_round_trip(self):
        net = MLP([3, 5, 2], rng=np.random.default_rng(1))
        flat = net.get_flat()
        net2 = MLP([3, 5, 2], rng=np.random.default_rng(2))
        net2.set_flat(flat)
        np.testing.assert_array_equal(net2.get_flat(), flat)
        with pytest.raises(DimensionError):
            net2.set_flat(flat[:-1])

    @pytest.mark.parametrize("sizes", [[2, 3], [3, 4, 2], [2, 5, 5, 1]])
    def test_backward_matches_finite_differences(self, sizes):
        # [DERIVED] central FD oracle on a scalar loss; parameters perturbed
        # off their init so no unit sits exactly at the ReLU kink
        rng = np.random.default_rng(7)
        net = MLP(sizes, rng=rng)
        net.set_flat(net.get_flat() + 0.1 * rng.normal(size=net.get_flat().size))
        x = rng.normal(size=(4, sizes[0]))
        w = rng.normal(size=(4, sizes[-1]))  # fixed projection -> scalar loss

        def loss(flat):
            net.set_flat(flat)
            out, _ = net.forward(x)
            return float((w * out).sum() + 0.5 * (out**2).sum())

        flat0 = net.get_flat()
        net.set_flat(flat0)
        out, cache = net.forward(x)
        grads, dx = net.backward(cache, w + out)
        analytic = np.concatenate([g.ravel() for g in grads])
        numeric = fd_gradient(loss, flat0)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-8)

    def test_backward_input_gradient(self):
        # [DERIVED] dx against FD on the input
        rng = np.random.default_rng(9)
        net = MLP([3, 4, 2], rng=rng)
        net.set_flat(net.get_flat() + 0.1 * rng.normal(size=net.get_flat().size))
        x0 = rng.normal(size=3)

        def loss(x):
            out, _ = net.forward(x)
            return float(out.sum())

        out, cache = net.forward(x0)
        _, dx = net.backward(cache, np.ones_like(np.atleast_2d(out)))
        numeric = fd_gradient(loss, x0)
        np.testing.assert_allclose(dx[0], numeric, rtol=1e-6, atol=1e-8)

    def test_backward_shape_check(self):
        net = MLP([2, 2])
        out, cache = net.forward(np.zeros((3, 2)))
        with pytest.raises(DimensionError):
            net.backward(cache, np.zeros((2, 2)))


class TestAdam:
    def test_hand_computed_first_step(self):
        # [DERIVED] t=1: m-hat = g, v-hat = g^2, update = -lr * g/(|g|+eps)
        p = [np.array([1.0, -2.0])]
        g = [np.array([0.5, -4.0])]
        opt = Adam(p, lr=0.1)
        opt.step(p, g)
        expect = np.array([1.0, -2.0]) - 0.1 * np.sign([0.5, -4.0]) * (
            np.abs([0.5, -4.0]) / (np.abs([0.5, -4.0]) + 1e-8)
        )
        np.testing.assert_allclose(p[0], expect, rtol=1e-9)

    def test_two_steps_match_reference_formula(self):
        # [DERIVED] replay the published update rule independently
        rng = np.random.default_rng(0)
        p = [rng.normal(size=(2, 3)), rng.normal(size=3)]
        ref = [q.copy() for q in p]
        opt = Adam(p, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8)
        m = [np.zeros_like(q) for q in p]
        v = [np.zeros_like(q) for q in p]
        for t in range(1, 3):
            grads = [rng.normal(size=q.shape) for q in p]
            opt.step(p, grads)
            for i, g in enumerate(grads):
                m[i] = 0.9 * m[i] + 0.1 * g
                v[i] = 0.999 * v[i] + 0.001 * g * g
                mh = m[i] / (1 - 0.9**t)
                vh = v[i] / (1 - 0.999**t)
                ref[i] -= 1e-2 * mh / (np.sqrt(vh) + 1e-8)
        for got, want in zip(p, ref):
            np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_nonfinite_gradient_raises(self):
        p = [np.zeros(2)]
        opt = Adam(p)
        with pytest.raises(NumericError):
            opt.step(p, [np.array([1.0, np.nan])])
        with pytest.raises(NumericError):
            opt.step(p, [np.array([np.inf, 0.0])])

    def test_state_round_trip(self):
        p = [np.array([1.0, 2.0])]
        opt = Adam(p, lr=0.05)
        opt.step(p, [np.array([0.3, -0.7])])
        state = {k: v.copy() for k, v in opt.state_arrays().items()}
        p2 = [np.array([1.0, 2.0])]
        opt2 = Adam(p2, lr=0.05)
        opt2.step(p2, [np.array([0.3, -0.7])])
        opt2.load_state_arrays(state)
        g = [np.array([0.1, 0.2])]
        opt.step(p, [q.copy() for q in g])
        opt2.step(p2, [q.copy() for q in g])
        np.testing.assert_array_equal(p[0], p2[0])

    def test_functional_wrapper(self):
        p = [np.array([1.0])]
        opt = Adam(p, lr=0.1)
        p_out, opt_out = adam_step(p, [np.array([1.0])], opt)
        assert p_out is p and opt_out is opt
        assert p[0][0] < 1.0


class TestMaskedSoftmax:
    def test_reference_example(self):
        # [DERIVED] logits (0, ln 3) all valid -> (1/4, 3/4)
        probs = masked_softmax(np.array([0.0, np.log(3.0)]), np.array([True, True]))
        np.testing.assert_allclose(probs, [0.25, 0.75], rtol=1e-12)

    def test_masked_entry_zero(self):
        # [TRIVIAL] invalid entry gets probability 0, log-prob -inf
        logits = np.array([5.0, 1.0, 1.0])
        mask = np.array([False, True, True])
        probs = masked_softmax(logits, mask)
        assert probs[0] == 0.0
        np.testing.assert_allclose(probs[1:], [0.5, 0.5])
        logp = masked_log_softmax(logits, mask)
        assert logp[0] == -np.inf
        np.testing.assert_allclose(logp[1:], np.log([0.5, 0.5]))

    def test_single_valid(self):
        probs = masked_softmax(np.array([-9.0, 2.0]), np.array([False, True]))
        np.testing.assert_array_equal(probs, [0.0, 1.0])

    def test_no_valid_raises(self):
        with pytest.raises(NoValidActionError):
            masked_softmax(np.zeros(3), np.zeros(3, dtype=bool))
        with pytest.raises(NoValidActionError):
            masked_softmax(np.zeros((2, 3)), np.array([[True, False, True], [False] * 3]))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            masked_softmax(np.zeros(3), np.zeros(4, dtype=bool))

    def test_shift_invariance_large_logits(self):
        # [DERIVED] max-shift keeps huge logits finite
        probs = masked_softmax(np.array([1000.0, 1000.0 + np.log(2.0)]), np.ones(2, bool))
        np.testing.assert_allclose(probs, [1 / 3, 2 / 3], rtol=1e-12)

    def test_batch_rows_independent(self):
        logits = np.array([[0.0, 0.0], [np.log(3.0), 0.0]])
        mask = np.array([[True, True], [True, True]])
        probs = masked_softmax(logits, mask)
        np.testing.assert_allclose(probs, [[0.5, 0.5], [0.75, 0.25]], rtol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_property_sums_to_one(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 8))
        logits = rng.normal(scale=5.0, size=n)
        mask = rng.random(n) < 0.6
        if not mask.any():
            mask[int(rng.integers(n))] = True
        probs = masked_softmax(logits, mask)
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert (probs[~mask] == 0.0).all()
        assert (probs[mask] > 0.0).all()
