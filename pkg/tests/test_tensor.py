import numpy as np
import pytest

from conftest import check_grad, rel_err

from ghcbc import tensor as T
from ghcbc.errors import DimensionError
from ghcbc.tensor import Tensor, no_grad

N_CASES = 100


def rand(rng, *shape, low=-2.0, high=2.0):
    return rng.uniform(low, high, size=shape)


def away_from_kink(x, margin=1e-3):
    x = x.copy()
    x[np.abs(x) < margin] += 2 * margin
    return x


class TestForward:
    def test_matmul_identity(self):
        out = Tensor([[1.0, 0.0], [0.0, 1.0]]) @ Tensor([[3.0], [4.0]])
        assert np.array_equal(out.numpy(), [[3.0], [4.0]])

    def test_matmul_dot(self):
        out = Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])
        assert np.array_equal(out.numpy(), [[11.0]])

    def test_matmul_shape_error_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 2)))

    def test_sub_self_cancels(self, rng):
        x = Tensor(rand(rng, 4, 5))
        assert np.array_equal((x - x).numpy(), np.zeros((4, 5)))

    def test_relu_definition(self):
        assert np.array_equal(T.relu(Tensor([-1.0, 2.0])).numpy(), [0.0, 2.0])

    def test_broadcast_leading_only(self, rng):
        a = Tensor(rand(rng, 3, 4))
        b = Tensor(rand(rng, 4))
        assert (a + b).shape == (3, 4)
        with pytest.raises(DimensionError):
            _ = a + Tensor(rand(rng, 3, 1))

    def test_softmax_symmetry(self):
        out = T.softmax(Tensor([0.0, 0.0]))
        assert np.allclose(out.numpy(), [0.5, 0.5], atol=0)

    def test_softmax_rows_sum_to_one(self, rng):
        x = Tensor(rand(rng, 10, 7, low=-30, high=30))
        y = T.softmax(x, axis=-1).numpy()
        assert np.all(y > 0) and np.all(y < 1)
        assert np.max(np.abs(y.sum(axis=-1) - 1.0)) <= 1e-12

    def test_layernorm_moments(self, rng):
        x = Tensor(rand(rng, 6, 9))
        y = T.layernorm(x, eps=1e-12).numpy()
        assert np.allclose(y.mean(axis=-1), 0.0, atol=1e-10)
        assert np.allclose(y.var(axis=-1), 1.0, atol=1e-6)

    def test_mean_axis_shape(self, rng):
        x = Tensor(rand(rng, 3, 8, 5))
        assert T.mean(x, axis=2).shape == (3, 8)

    def test_mean_axis_out_of_range(self, rng):
        with pytest.raises(DimensionError):
            T.mean(Tensor(rand(rng, 3)), axis=2)

    def test_concat_lengths(self, rng):
        a, b = Tensor(rand(rng, 8)), Tensor(rand(rng, 7))
        assert T.concat([a, b]).shape == (15,)

    def test_concat_split_roundtrip(self, rng):
        a, b = rand(rng, 3, 4), rand(rng, 2, 4)
        cat = T.concat([Tensor(a), Tensor(b)], axis=0).numpy()
        assert np.array_equal(cat[:3], a)
        assert np.array_equal(cat[3:], b)

    def test_concat_mismatch(self, rng):
        with pytest.raises(DimensionError):
            T.concat([Tensor(rand(rng, 3, 4)), Tensor(rand(rng, 3, 5))], axis=0)

    def test_reshape_size_guard(self, rng):
        with pytest.raises(DimensionError):
            T.reshape(Tensor(rand(rng, 3, 4)), (5, 3))

    def test_batched_matmul(self, rng):
        a, w = rand(rng, 5, 3, 4), rand(rng, 4, 6)
        out = (Tensor(a) @ Tensor(w)).numpy()
        assert out.shape == (5, 3, 6)
        assert np.allclose(out, a @ w)

    def test_im2col_matches_direct_conv(self, rng):
        x = rand(rng, 2, 6, 8)
        w = rand(rng, 2 * 3 * 3, 4)
        cols = T.im2col(Tensor(x), 3, 3, stride=2, padding=1)
        out = (cols @ Tensor(w)).numpy()  # (OH*OW, OC)
        oh, ow = 3, 4
        ref = np.zeros((oh * ow, 4))
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        for r in range(oh):
            for c in range(ow):
                patch = xp[:, 2 * r:2 * r + 3, 2 * c:2 * c + 3].reshape(-1)
                ref[r * ow + c] = patch @ w
        assert np.allclose(out, ref)

    def test_no_grad_builds_no_graph(self, rng):
        x = Tensor(rand(rng, 3), requires_grad=True)
        with no_grad():
            y = (x * x).sum()
        assert y._backward is None and not y.requires_grad


class TestGradients:
    """Analytic vs central finite differences, >= 100 random cases per op."""

    def test_matmul(self, rng):
        for _ in range(N_CASES):
            a, b = rand(rng, 3, 4), rand(rng, 4, 2)
            check_grad(lambda x, y: (x @ y).sum(), [a, b])

    def test_matmul_batched(self, rng):
        for _ in range(N_CASES):
            a, b = rand(rng, 2, 3, 4), rand(rng, 4, 2)
            check_grad(lambda x, y: ((x @ y) * (x @ y)).sum(), [a, b])

    def test_matmul_grad_is_ones_times_bt(self, rng):
        a, b = rand(rng, 3, 4), rand(rng, 4, 2)
        ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
        (ta @ tb).sum().backward()
        assert rel_err(ta.grad, np.ones((3, 2)) @ b.T) < 1e-12

    def test_add_sub_mul(self, rng):
        for _ in range(N_CASES):
            a, b = rand(rng, 4, 3), rand(rng, 3)
            check_grad(lambda x, y: ((x + y) * (x - y) * x).sum(), [a, b])

    def test_relu(self, rng):
        for _ in range(N_CASES):
            a = away_from_kink(rand(rng, 5, 4))
            check_grad(lambda x: T.relu(x).sum(), [a])

    def test_gelu(self, rng):
        for _ in range(N_CASES):
            a = rand(rng, 4, 3)
            check_grad(lambda x: T.gelu(x).sum(), [a])

    def test_gelu_at_half(self):
        check_grad(lambda x: T.gelu(x).sum(), [np.array([0.5])], tol=1e-6)

    def test_exp_log(self, rng):
        for _ in range(N_CASES):
            a = rand(rng, 4, 3, low=0.1, high=2.0)
            check_grad(lambda x: (T.log(x) * T.exp(x)).sum(), [a])

    def test_mean_and_sum(self, rng):
        for _ in range(N_CASES):
            a = rand(rng, 3, 4, 2)
            check_grad(lambda x: (T.mean(x, axis=1) * T.tsum(x, axis=1)).sum(), [a])

    def test_softmax(self, rng):
        for _ in range(N_CASES):
            a, w = rand(rng, 3, 5), rand(rng, 3, 5)
            warr = w
            check_grad(lambda x: (T.softmax(x, axis=-1) * Tensor(warr)).sum(), [a])

    def test_layernorm(self, rng):
        for _ in range(N_CASES):
            a, w = rand(rng, 4, 6), rand(rng, 4, 6)
            warr = w
            check_grad(lambda x: (T.layernorm(x) * Tensor(warr)).sum(), [a])

    def test_concat(self, rng):
        for _ in range(N_CASES):
            a, b = rand(rng, 2, 3), rand(rng, 4, 3)
            check_grad(
                lambda x, y: (T.concat([x, y], axis=0) * T.concat([x, y], axis=0)).sum(),
                [a, b],
            )

    def test_reshape_transpose(self, rng):
        for _ in range(N_CASES):
            a = rand(rng, 3, 4)
            check_grad(
                lambda x: (T.transpose(T.reshape(x, (2, 6)), (1, 0))
                           * T.transpose(T.reshape(x, (2, 6)), (1, 0))).sum(),
                [a],
            )

    def test_take(self, rng):
        for _ in range(N_CASES):
            a = rand(rng, 5, 4)
            check_grad(lambda x: (x[1:3, :] * x[1:3, :]).sum(), [a])

    def test_broadcast_to(self, rng):
        for _ in range(N_CASES):
            a = rand(rng, 1, 4)
            check_grad(lambda x: (T.broadcast_to(x, (3, 1, 4))
                                  * T.broadcast_to(x, (3, 1, 4))).sum(), [a])

    def test_im2col(self, rng):
        for _ in range(N_CASES // 4):
            a = rand(rng, 2, 5, 6)
            w = rand(rng, 2 * 3 * 3, 2)
            check_grad(lambda x, v: (T.im2col(x, 3, 3, 2, 1) @ v).sum(), [a, w])

    def test_fanout_accumulates(self, rng):
        # one tensor feeding two consumers must accumulate, checked against
        # a scalar brute-force perturbation oracle
        a = rand(rng, 3)

        def build(x):
            y = x * x
            return (y + T.exp(x)).sum() + (y * x).sum()

        check_grad(build, [a])

    def test_backward_seed_shape_guard(self, rng):
        x = Tensor(rand(rng, 3), requires_grad=True)
        with pytest.raises(DimensionError):
            (x * x).backward(np.ones(4))
