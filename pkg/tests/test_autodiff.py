"""Gradient checks for every differentiable operation.

Each op's backward pass is compared against central finite differences
of its forward pass in double precision; the forward values themselves
are compared against plain numpy where a closed form exists.
"""

import numpy as np
import pytest
from scipy.special import erf

from crener import autodiff as ad
from crener.autodiff import ParamStore, Tensor


def fd_check(fn, inputs, h=1e-6, tol=1e-6, rng=None):
    """Compare analytic gradients of scalar fn(*inputs) with central FD."""
    rng = rng or np.random.default_rng(0)
    tensors = [Tensor(np.asarray(x, dtype=np.float64), requires_grad=True) for x in inputs]
    out = fn(*tensors)
    out.backward()
    for t in tensors:
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        idxs = rng.choice(flat.size, size=min(6, flat.size), replace=False)
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + h
            lp = fn(*tensors).item()
            flat[idx] = orig - h
            lm = fn(*tensors).item()
            flat[idx] = orig
            fd = (lp - lm) / (2 * h)
            an = gflat[idx]
            assert abs(an - fd) <= tol * max(1.0, abs(an), abs(fd)), (
                f"grad mismatch at {idx}: analytic {an}, fd {fd}"
            )


class TestElementwise:
    def test_add_broadcast(self, rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4,))
        fd_check(lambda x, y: ((x + y) * (x + y)).sum(), [a, b])

    def test_sub_mul_div(self, rng):
        a = rng.normal(size=(2, 5))
        b = rng.normal(size=(2, 5)) + 3.0
        fd_check(lambda x, y: ((x - y) * x / y).sum(), [a, b])

    def test_scalar_coercion_preserves_dtype(self):
        t = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
        out = (t * 2.0 + 1.0) / 4.0 - 0.5
        assert out.data.dtype == np.float32

    def test_pow_exp_log_sqrt_tanh(self, rng):
        a = np.abs(rng.normal(size=(3, 3))) + 0.5
        fd_check(lambda x: (ad.exp(ad.log(x)) + ad.sqrt(x) + ad.tanh(x) + x ** 3).sum(), [a])

    def test_gelu_matches_erf_form(self, rng):
        x = rng.normal(size=(4, 7))
        out = ad.gelu(Tensor(x))
        expected = x * 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
        np.testing.assert_allclose(out.data, expected, rtol=1e-12)

    def test_gelu_gradient(self, rng):
        x = rng.normal(size=(5, 5))
        fd_check(lambda t: ad.gelu(t).sum(), [x])


class TestShape:
    def test_matmul(self, rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        fd_check(lambda x, y: (x @ y).sum(), [a, b])

    def test_batched_matmul_broadcast(self, rng):
        a = rng.normal(size=(2, 3, 4))
        b = rng.normal(size=(4, 5))
        fd_check(lambda x, y: ((x @ y) ** 2).sum(), [a, b])

    def test_reshape_transpose(self, rng):
        a = rng.normal(size=(2, 3, 4))
        fd_check(lambda x: (x.reshape(6, 4).transpose(1, 0) ** 2).sum(), [a])

    def test_getitem_slice_and_fancy(self, rng):
        a = rng.normal(size=(5, 4))
        fd_check(lambda x: (x[1:3] ** 2).sum() + (x[np.array([0, 0, 2])] ** 3).sum(), [a])

    def test_concat(self, rng):
        a = rng.normal(size=(3, 2))
        b = rng.normal(size=(3, 5))
        fd_check(lambda x, y: (ad.concat([x, y], axis=-1) ** 2).sum(), [a, b])

    def test_concat_forward(self, rng):
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 1))
        out = ad.concat([Tensor(a), Tensor(b)], axis=1)
        np.testing.assert_array_equal(out.data, np.concatenate([a, b], axis=1))


class TestReductions:
    def test_sum_axes(self, rng):
        a = rng.normal(size=(3, 4, 2))
        fd_check(lambda x: (x.sum(axis=1) ** 2).sum(), [a])
        fd_check(lambda x: (x.sum(axis=-1, keepdims=True) * x).sum(), [a])

    def test_mean(self, rng):
        a = rng.normal(size=(4, 6))
        fd_check(lambda x: (x.mean(axis=-1) ** 2).sum(), [a])

    def test_max_gradient(self, rng):
        a = rng.normal(size=(4, 5))
        fd_check(lambda x: (x.max(axis=1) ** 2).sum(), [a])

    def test_max_splits_ties_evenly(self):
        a = Tensor(np.array([[1.0, 3.0, 3.0, 0.0]]), requires_grad=True)
        out = a.max(axis=1).sum()
        out.backward()
        np.testing.assert_allclose(a.grad, [[0.0, 0.5, 0.5, 0.0]])


class TestFusedOps:
    def test_softmax_rows_sum_to_one(self, rng):
        x = rng.normal(size=(6, 6))
        out = ad.softmax(Tensor(x))
        np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(6), atol=1e-12)

    def test_softmax_masked_columns_exactly_zero(self, rng):
        x = rng.normal(size=(4, 5))
        mask = np.array([True, True, False, True, False])
        out = ad.softmax(Tensor(x), mask=mask[None, :])
        assert (out.data[:, ~mask] == 0.0).all()
        np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(4), atol=1e-12)

    def test_softmax_gradient(self, rng):
        x = rng.normal(size=(3, 6))
        mask = np.array([True, True, True, False, True, False])
        w = rng.normal(size=(3, 6))
        fd_check(lambda t: (ad.softmax(t, mask=mask[None, :]) * w).sum(), [x])

    def test_logsumexp_value_and_gradient(self, rng):
        x = rng.normal(size=(4, 7)) * 3
        mask = rng.random((4, 7)) > 0.3
        mask[:, 0] = True
        out = ad.logsumexp(Tensor(x), mask=mask)
        expected = np.log(np.where(mask, np.exp(x - x.max()), 0).sum(axis=-1)) + x.max()
        np.testing.assert_allclose(out.data, expected, rtol=1e-10)
        fd_check(lambda t: ad.logsumexp(t, mask=mask).sum(), [x])

    def test_masked_entries_may_hold_extreme_values(self):
        # A masked score of +-1e9 must not poison the reduction: mask
        # first, exponentiate after.
        x = np.array([[0.0, 1e9, -1e9, 2.0]])
        mask = np.array([[True, False, False, True]])
        lse = ad.logsumexp(Tensor(x), mask=mask)
        np.testing.assert_allclose(lse.data, np.logaddexp(0.0, 2.0), rtol=1e-12)
        sm = ad.softmax(Tensor(x), mask=mask)
        assert np.isfinite(sm.data).all()
        np.testing.assert_array_equal(sm.data[0, 1:3], 0.0)
        np.testing.assert_allclose(sm.data.sum(), 1.0, rtol=1e-12)

    def test_embedding_gradient_accumulates_repeats(self):
        table = Tensor(np.arange(8, dtype=np.float64).reshape(4, 2), requires_grad=True)
        ids = np.array([1, 1, 3])
        out = ad.embedding(table, ids).sum()
        out.backward()
        expected = np.zeros((4, 2))
        expected[1] = 2.0
        expected[3] = 1.0
        np.testing.assert_array_equal(table.grad, expected)

    def test_dropout_scales_kept_entries(self):
        rng = np.random.default_rng(7)
        x = Tensor(np.ones((50, 50)), requires_grad=True)
        out = ad.dropout(x, 0.4, rng)
        vals = np.unique(out.data)
        assert set(np.round(vals, 6)) <= {0.0, round(1 / 0.6, 6)}

    def test_layer_norm_gradient(self, rng):
        x = rng.normal(size=(3, 8))
        g = rng.normal(size=(8,))
        b = rng.normal(size=(8,))
        fd_check(lambda t, gg, bb: (ad.layer_norm(t, gg, bb) ** 2).sum(), [x, g, b])

    def test_conv2d_dilated_gradient(self, rng):
        x = rng.normal(size=(5, 5, 3))
        w = rng.normal(size=(3, 3, 3, 2))
        b = rng.normal(size=(2,))
        for dil in (1, 2):
            fd_check(
                lambda xx, ww, bb: (ad.conv2d_dilated(xx, ww, bb, dil) ** 2).sum(),
                [x, w, b],
                tol=1e-5,
            )


class TestGraph:
    def test_diamond_reuse_accumulates(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = x * 3.0
        z = y + y * y  # y used twice
        z.backward()
        # dz/dx = 3 + 2*y*3 = 3 + 36
        np.testing.assert_allclose(x.grad, [39.0])

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (x * 2).backward()

    def test_no_grad_path_skipped(self):
        a = Tensor(np.ones((2, 2)))
        b = Tensor(np.ones((2, 2)), requires_grad=True)
        out = (a @ b).sum()
        out.backward()
        assert a.grad is None
        assert b.grad is not None


class TestParamStore:
    def test_roundtrip_and_mismatch(self):
        store = ParamStore(np.float32)
        store.add("w", np.ones((2, 2)))
        store.add("b", np.zeros(2))
        state = store.state_dict()
        state["w"][0, 0] = 5.0
        store.load_state_dict(state)
        assert store["w"].data[0, 0] == 5.0
        with pytest.raises(ValueError):
            store.load_state_dict({"w": np.ones((2, 2))})

    def test_duplicate_name_rejected(self):
        store = ParamStore()
        store.add("w", np.ones(2))
        with pytest.raises(ValueError):
            store.add("w", np.ones(2))

    def test_zero_grad(self):
        store = ParamStore(np.float64)
        t = store.add("w", np.ones(3))
        (t * t).sum().backward()
        assert t.grad is not None
        store.zero_grad()
        assert t.grad is None
