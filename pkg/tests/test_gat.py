import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neogat import autodiff as ad
from neogat.autodiff import Tensor
from neogat.gat import GatLayer, attention_coefficients, gat_forward, gat_stack
from neogat.gradcheck import check_function
from neogat.graph import build_graph

MASK = build_graph().mask()


def loop_attention(h, W, a, mask, slope=0.2):
    """Textbook per-node softmax with explicit loops and no stabilisation."""
    n = h.shape[0]
    hw = h @ W
    f = W.shape[1]
    A = np.zeros((n, n))
    for i in range(n):
        nbrs = [j for j in range(n) if mask[i, j]]
        scores = {}
        for j in nbrs:
            z = sum(hw[i, k] * a[k] for k in range(f)) + sum(hw[j, k] * a[f + k] for k in range(f))
            scores[j] = math.exp(z if z > 0 else slope * z)
        total = sum(scores.values())
        for j in nbrs:
            A[i, j] = scores[j] / total
    return A


def layer(rng, f_in, f_out, mask=MASK):
    return GatLayer(Tensor(rng.standard_normal((f_in, f_out)) / np.sqrt(f_in)), Tensor(rng.standard_normal(2 * f_out)), mask)


def test_toy_graph_matches_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        mask = rng.random((4, 4)) < 0.5
        mask = mask | mask.T | np.eye(4, dtype=bool)
        h = rng.standard_normal((4, 3))
        lay = layer(rng, 3, 5, mask)
        A = attention_coefficients(Tensor(h), lay).data
        np.testing.assert_allclose(A, loop_attention(h, lay.W.data, lay.a.data, mask), atol=1e-9, rtol=0)


def test_singleton_neighbourhood():
    rng = np.random.default_rng(1)
    A = attention_coefficients(Tensor(rng.standard_normal((12, 4))), layer(rng, 4, 3, np.eye(12, dtype=bool))).data
    np.testing.assert_array_equal(A, np.eye(12))


def test_identical_features_give_uniform_attention():
    rng = np.random.default_rng(2)
    h = np.tile(rng.standard_normal(6), (12, 1))
    A = attention_coefficients(Tensor(h), layer(rng, 6, 4)).data
    np.testing.assert_allclose(A, MASK / MASK.sum(axis=1, keepdims=True), atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), f=st.integers(1, 40), fo=st.integers(1, 40), scale=st.floats(0.01, 50))
def test_attention_rows_stochastic_and_masked(seed, f, fo, scale):
    rng = np.random.default_rng(seed)
    A = attention_coefficients(Tensor(scale * rng.standard_normal((12, f))), layer(rng, f, fo)).data
    assert np.all(np.abs(A.sum(axis=1) - 1) < 1e-6)
    assert np.all(A[~MASK] == 0)
    assert np.all((A >= 0) & (A <= 1))


def test_identity_layer_is_identity_on_nonnegative_rows():
    h = np.abs(np.random.default_rng(3).standard_normal((12, 5)))
    lay = GatLayer(Tensor(np.eye(5)), Tensor(np.zeros(10)), np.eye(12, dtype=bool))
    np.testing.assert_allclose(gat_forward(Tensor(h), lay).data, h)


def test_equal_rows_under_uniform_attention():
    rng = np.random.default_rng(4)
    mask = np.zeros((3, 3), bool) | True
    row = rng.standard_normal(4)
    W = rng.standard_normal((4, 2))
    lay = GatLayer(Tensor(W), Tensor(rng.standard_normal(4)), mask)
    out = gat_forward(Tensor(np.tile(row, (3, 1))), lay).data
    z = row @ W
    np.testing.assert_allclose(out, np.tile(np.where(z > 0, z, np.expm1(z)), (3, 1)))


@pytest.mark.parametrize("seed", range(5))
def test_gat_gradients(seed):
    rng = np.random.default_rng(seed)
    h, lay = rng.standard_normal((12, 6)), layer(rng, 6, 4)
    res = check_function("gat", lambda h_, w, a: gat_forward(h_, GatLayer(w, a, MASK)), [h, lay.W.data, lay.a.data], seed=seed)
    assert res.ok, res.rel_err


def test_permutation_equivariance():
    rng = np.random.default_rng(5)
    n = 6
    mask = rng.random((n, n)) < 0.4
    mask = mask | mask.T | np.eye(n, dtype=bool)
    h = rng.standard_normal((n, 3))
    lay = layer(rng, 3, 4, mask)
    perm = rng.permutation(n)
    P = np.eye(n)[perm]
    out = gat_forward(Tensor(h), lay).data
    out_p = gat_forward(Tensor(P @ h), GatLayer(lay.W, lay.a, mask[np.ix_(perm, perm)])).data
    np.testing.assert_allclose(out_p, P @ out, atol=1e-12)


def test_locality_of_one_layer():
    rng = np.random.default_rng(6)
    h = rng.standard_normal((12, 5))
    lay = layer(rng, 5, 3)
    base = gat_forward(Tensor(h), lay).data
    for j in range(12):
        h2 = h.copy()
        h2[j] += rng.standard_normal(5)
        moved = np.any(gat_forward(Tensor(h2), lay).data != base, axis=1)
        assert np.all(MASK[moved, j])


def test_stack_shapes_and_determinism():
    rng = np.random.default_rng(7)
    layers = [layer(rng, 24, 37), layer(rng, 37, 32), layer(rng, 32, 16)]
    h = Tensor(rng.standard_normal((12, 24)))
    trace = {}
    out = gat_stack(h, layers, trace=trace)
    assert out.shape == (12, 16)
    assert [trace[f"gat{i}"].shape for i in (1, 2, 3)] == [(12, 37), (12, 32), (12, 16)]
    np.testing.assert_array_equal(gat_stack(h, layers).data, out.data)


def test_stack_zero_input_rows_identical():
    rng = np.random.default_rng(8)
    layers = [layer(rng, 24, 37), layer(rng, 37, 32), layer(rng, 32, 16)]
    out = gat_stack(Tensor(np.zeros((12, 24))), layers).data
    assert np.all(out == out[0])


def test_stack_dropout_only_in_train_mode():
    rng = np.random.default_rng(9)
    layers = [layer(rng, 8, 8), layer(rng, 8, 8)]
    h = Tensor(np.abs(rng.standard_normal((12, 8))) + 1)
    ev = gat_stack(h, layers, train=False, rng=np.random.default_rng(0)).data
    tr = gat_stack(h, layers, train=True, rng=np.random.default_rng(0)).data
    assert not np.array_equal(ev, tr)


def test_width_mismatch():
    rng = np.random.default_rng(10)
    with pytest.raises(ad.ShapeError):
        gat_forward(Tensor(np.zeros((12, 3))), layer(rng, 4, 2))
