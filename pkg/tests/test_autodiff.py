"""Engine tests: forward oracles at 64-bit, backward vs finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alignfuse import autodiff as ad
from alignfuse.errors import ContractError, DimensionError
from alignfuse.rng import DropoutRng


def rnd(seed):
    return np.random.Generator(np.random.Philox(key=seed))


def matmul_oracle(a, b):
    """Triple-loop product at 64-bit, independent of numpy's matmul."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


class TestMatmul:
    def test_identity(self):
        a = ad.tensor([[1.0, 0.0], [0.0, 1.0]])
        b = ad.tensor([[3.0, 4.0], [5.0, 6.0]])
        assert np.allclose(ad.matmul(a, b).data, [[3, 4], [5, 6]])

    def test_row_times_column(self):
        out = ad.matmul(ad.tensor([[1.0, 2.0]]), ad.tensor([[3.0], [4.0]]))
        assert out.data.shape == (1, 1)
        assert out.data[0, 0] == pytest.approx(11.0)

    def test_against_triple_loop(self):
        g = rnd(7)
        a = g.standard_normal((5, 4))
        b = g.standard_normal((4, 3))
        got = ad.matmul(ad.tensor(a), ad.tensor(b)).data
        assert np.max(np.abs(got - matmul_oracle(a, b))) < 1e-6

    def test_shape_mismatch_names_both(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(ad.tensor(np.zeros((2, 3))), ad.tensor(np.zeros((2, 3))))

    def test_batched_and_transposed(self):
        g = rnd(8)
        a = g.standard_normal((3, 5, 4))
        b = g.standard_normal((3, 6, 4))
        got = ad.matmul(ad.tensor(a), ad.tensor(b), transpose_b=True).data
        want = np.stack([a[i] @ b[i].T for i in range(3)])
        assert np.max(np.abs(got - want)) < 1e-5


class TestSoftmaxRows:
    def test_uniform_on_constant_row(self):
        out = ad.softmax_rows(ad.tensor([[0.0, 0.0, 0.0]])).data
        assert np.allclose(out, 1.0 / 3.0)

    def test_large_logit_no_overflow(self):
        out = ad.softmax_rows(ad.tensor([[1000.0, 0.0]])).data
        assert np.isfinite(out).all()
        assert out[0, 0] == pytest.approx(1.0)
        assert out[0, 1] == pytest.approx(0.0, abs=1e-6)

    def test_against_64bit_oracle(self):
        x = np.array([[1.0, 2.0, 3.0]], dtype=np.float32)
        want = np.exp(x.astype(np.float64)) / np.exp(x.astype(np.float64)).sum()
        got = ad.softmax_rows(ad.tensor(x)).data
        assert np.max(np.abs(got - want)) < 1e-6

    def test_additive_mask_excludes_keys(self):
        x = ad.tensor(np.zeros((2, 4), dtype=np.float32))
        mask = np.array([[0.0, 0.0, -1e9, -1e9]], dtype=np.float32)
        out = ad.softmax_rows(x, additive_mask=mask).data
        assert np.allclose(out[:, :2], 0.5, atol=1e-6)
        assert np.allclose(out[:, 2:], 0.0, atol=1e-6)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_rows_sum_to_one(self, seed):
        x = rnd(seed).uniform(-10, 10, size=(4, 9)).astype(np.float32)
        out = ad.softmax_rows(ad.tensor(x)).data
        sums = out.sum(axis=-1, dtype=np.float64)
        assert np.max(np.abs(sums - 1.0)) < 1e-6
        assert (out >= 0).all()


class TestLayerNorm:
    def test_constant_row_collapses_to_zero(self):
        x = ad.tensor(np.full((2, 8), 3.5, dtype=np.float32))
        gain = ad.tensor(np.ones(8))
        bias = ad.tensor(np.zeros(8))
        out = ad.layer_norm(x, gain, bias).data
        assert np.allclose(out, 0.0, atol=1e-6)

    def test_zero_gain_gives_bias(self):
        g = rnd(3)
        x = ad.tensor(g.standard_normal((3, 8)).astype(np.float32))
        bias = np.linspace(-1, 1, 8).astype(np.float32)
        out = ad.layer_norm(x, ad.tensor(np.zeros(8)), ad.tensor(bias)).data
        assert np.allclose(out, np.broadcast_to(bias, (3, 8)), atol=1e-7)

    def test_row_statistics_against_oracle(self):
        g = rnd(11)
        x64 = g.standard_normal((3, 8))
        out = ad.layer_norm(
            ad.tensor(x64), ad.tensor(np.ones(8)), ad.tensor(np.zeros(8))
        ).data.astype(np.float64)
        # pre-affine rows: mean ~ 0, variance ~ 1 (eps shrinks it slightly)
        mu = x64.mean(axis=1, keepdims=True)
        var = ((x64 - mu) ** 2).mean(axis=1, keepdims=True)
        want = (x64 - mu) / np.sqrt(var + 1e-5)
        assert np.max(np.abs(out - want)) < 1e-4
        assert np.max(np.abs(out.mean(axis=1))) < 1e-4
        assert np.max(np.abs(out.var(axis=1) - 1.0)) < 1e-3


class TestBackward:
    def test_sum_gradient_is_ones(self):
        w = ad.tensor([1.0, 2.0, 3.0], requires_grad=True)
        with ad.Tape() as tape:
            loss = ad.mean_axis(w, axis=0)
            loss = ad.mul(loss, 3.0)  # sum = 3 * mean
        tape.backward(loss)
        assert np.allclose(w.grad, [1.0, 1.0, 1.0])

    def test_elementwise_square_gradient(self):
        w = ad.tensor([1.0, 2.0, 3.0], requires_grad=True)
        with ad.Tape() as tape:
            sq = ad.mul(w, w)
            loss = ad.mul(ad.mean_axis(sq, axis=0), 3.0)
        tape.backward(loss)
        assert np.allclose(w.grad, [2.0, 4.0, 6.0])

    def test_non_scalar_loss_rejected(self):
        w = ad.tensor([1.0, 2.0], requires_grad=True)
        with ad.Tape() as tape:
            out = ad.mul(w, w)
        with pytest.raises(ContractError):
            tape.backward(out)

    def test_unused_leaf_gets_zero_grad(self):
        used = ad.tensor([1.0, 2.0], requires_grad=True)
        unused = ad.tensor([5.0, 6.0], requires_grad=True)
        with ad.Tape() as tape:
            _dead = ad.mul(unused, 2.0)  # on tape, but never feeds the loss
            loss = ad.mean_axis(ad.mul(used, used), axis=0)
        tape.backward(loss)
        assert unused.grad is not None
        assert np.all(unused.grad == 0.0)

    def test_grad_accumulates_across_uses(self):
        w = ad.tensor([2.0], requires_grad=True)
        with ad.Tape() as tape:
            loss = ad.mean_axis(ad.add(ad.mul(w, w), w), axis=0)  # w^2 + w
        tape.backward(loss)
        assert np.allclose(w.grad, [5.0])

    def test_replay_bit_identical(self):
        g = rnd(21)
        x = g.standard_normal((4, 6)).astype(np.float32)
        w = g.standard_normal((6, 3)).astype(np.float32)

        def run():
            out = ad.matmul(ad.tensor(x), ad.tensor(w))
            out = ad.gelu(out)
            return ad.softmax_rows(out).data

        assert np.array_equal(run(), run())


def _fd_check(build, tensors, h=1e-4, tol=1e-6):
    """Central finite differences on float64 leaves vs tape gradients."""
    for t in tensors:
        t.grad = None
    with ad.Tape() as tape:
        loss = build()
    tape.backward(loss)
    for t in tensors:
        flat = t.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(build().data)
            flat[i] = orig - h
            fm = float(build().data)
            flat[i] = orig
            fd[i] = (fp - fm) / (2 * h)
        ana = t.grad.reshape(-1) if t.grad is not None else np.zeros_like(flat)
        scale = max(np.max(np.abs(fd)), 1.0)
        assert np.max(np.abs(ana - fd)) / scale < tol, (ana, fd)


class TestGradientsVsFiniteDifferences:
    """Every differentiable op, 64-bit leaves, central differences."""

    def _leaf(self, seed, shape):
        return ad.tensor(rnd(seed).uniform(-2, 2, size=shape),
                         requires_grad=True, dtype=np.float64)

    def test_add_sub_mul_div_broadcast(self):
        a = self._leaf(1, (3, 4))
        b = self._leaf(2, (4,))
        c = self._leaf(3, (3, 4))
        d = ad.tensor(rnd(4).uniform(0.5, 2.0, size=(3, 1)),
                      requires_grad=True, dtype=np.float64)

        def build():
            out = ad.add(a, b)
            out = ad.sub(out, c)
            out = ad.mul(out, b)
            out = ad.div(out, d)
            return ad.mean_axis(ad.mean_axis(out, 1), 0)

        _fd_check(build, [a, b, c, d])

    def test_matmul_chain(self):
        a = self._leaf(5, (4, 5))
        b = self._leaf(6, (5, 3))
        c = self._leaf(7, (4, 3))

        def build():
            out = ad.matmul(a, b)
            out = ad.mul(out, c)
            return ad.mean_axis(ad.mean_axis(out, 1), 0)

        _fd_check(build, [a, b, c])

    def test_matmul_transposed_args(self):
        a = self._leaf(30, (5, 4))
        b = self._leaf(31, (3, 5))

        def build():
            out = ad.matmul(a, b, transpose_a=True, transpose_b=True)  # [4,3]
            return ad.mean_axis(ad.mean_axis(out, 1), 0)

        _fd_check(build, [a, b])

    def test_sigmoid_gelu(self):
        x = self._leaf(8, (6,))

        def build():
            return ad.mean_axis(ad.mul(ad.sigmoid(x), ad.gelu(x)), 0)

        _fd_check(build, [x])

    def test_softmax(self):
        x = self._leaf(9, (3, 5))
        v = self._leaf(10, (3, 5))

        def build():
            return ad.mean_axis(ad.mean_axis(ad.mul(ad.softmax_rows(x), v), 1), 0)

        _fd_check(build, [x, v])

    def test_layer_norm(self):
        x = self._leaf(11, (3, 6))
        gain = self._leaf(12, (6,))
        bias = self._leaf(13, (6,))

        def build():
            out = ad.layer_norm(x, gain, bias)
            out = ad.mul(out, out)
            return ad.mean_axis(ad.mean_axis(out, 1), 0)

        _fd_check(build, [x, gain, bias], tol=1e-5)

    def test_concat_narrow(self):
        a = self._leaf(14, (2, 3))
        b = self._leaf(15, (2, 2))

        def build():
            out = ad.concat([a, b], axis=1)  # [2,5]
            out = ad.narrow(out, 1, 1, 3)
            out = ad.mul(out, out)
            return ad.mean_axis(ad.mean_axis(out, 1), 0)

        _fd_check(build, [a, b])

    def test_gather_rows(self):
        table = self._leaf(16, (5, 3))
        idx = np.array([0, 2, 2, 4])

        def build():
            out = ad.gather_rows(table, idx)
            out = ad.mul(out, out)
            return ad.mean_axis(ad.mean_axis(out, 1), 0)

        _fd_check(build, [table])

    def test_cross_entropy(self):
        logits = self._leaf(17, (4, 3))
        labels = np.array([0, 2, 1, 1])

        def build():
            return ad.cross_entropy_with_logits(logits, labels)

        _fd_check(build, [logits])

    def test_mse(self):
        pred = self._leaf(18, (5,))
        target = rnd(19).uniform(-1, 1, size=5)

        def build():
            return ad.mse_loss(pred, target)

        _fd_check(build, [pred])

    def test_dropout_mask_scales_grad(self):
        x = self._leaf(20, (64,))
        rng_state = DropoutRng(seed=5, counter=0)
        with ad.Tape() as tape:
            rng_state.counter = 0
            out = ad.dropout(x, 0.5, rng_state, train=True)
            loss = ad.mean_axis(out, 0)
        tape.backward(loss)
        # gradient is mask / n: entries are either 0 or 2/n
        vals = np.unique(np.round(x.grad * len(x.grad), 6))
        assert set(vals.tolist()) <= {0.0, 2.0}


class TestFiniteness:
    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_forward_ops_finite_on_bounded_inputs(self, seed):
        g = rnd(seed)
        x = ad.tensor(g.uniform(-10, 10, size=(3, 5)).astype(np.float32))
        w = ad.tensor(g.uniform(-10, 10, size=(5, 4)).astype(np.float32))
        gain = ad.tensor(g.uniform(0.1, 2.0, size=4).astype(np.float32))
        bias = ad.tensor(g.uniform(-1, 1, size=4).astype(np.float32))
        out = ad.matmul(x, w)
        for t in (
            ad.sigmoid(out), ad.gelu(out), ad.softmax_rows(out),
            ad.layer_norm(out, gain, bias), ad.mean_axis(out, 0),
            ad.add(out, bias), ad.mul(out, out),
        ):
            assert np.isfinite(t.data).all()


class TestDropoutDeterminism:
    def test_same_seed_same_mask(self):
        x = ad.tensor(np.ones(100, dtype=np.float32))
        a = ad.dropout(x, 0.3, DropoutRng(9, 0), train=True).data
        b = ad.dropout(x, 0.3, DropoutRng(9, 0), train=True).data
        assert np.array_equal(a, b)

    def test_counter_advances(self):
        x = ad.tensor(np.ones(100, dtype=np.float32))
        rng_state = DropoutRng(9, 0)
        a = ad.dropout(x, 0.3, rng_state, train=True).data
        b = ad.dropout(x, 0.3, rng_state, train=True).data
        assert not np.array_equal(a, b)

    def test_eval_mode_identity(self):
        x = ad.tensor(np.ones(10, dtype=np.float32))
        out = ad.dropout(x, 0.5, DropoutRng(1, 0), train=False)
        assert out is x
