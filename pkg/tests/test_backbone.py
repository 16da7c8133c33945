import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gflowout.backbone import (BackboneNet, StaleTraceError, cross_entropy, log_likelihood)
from gflowout.numeric import SeededRng, ShapeError, stable_softmax
from gflowout.oracle import finite_diff_gradcheck
from oracles import mlp_logits


def hand_net():
    bb = BackboneNet((2, 2, 2))
    bb.params["w1"][...] = np.eye(2)
    bb.params["w2"][...] = np.eye(2)
    bb.params["b1"][...] = 0.0
    bb.params["b2"][...] = 0.0
    return bb


def random_net(seed, dims=(5, 4, 3, 3)):
    rng = SeededRng(seed)
    bb = BackboneNet(dims, rng)
    for k, v in bb.params.items():
        if k.startswith("b"):
            v[...] = rng.normal(v.shape, scale=0.2)
    return bb, rng


def test_worked_example():
    tr = hand_net().forward(np.array([[1.0, -1.0]]), [np.ones((1, 2))])
    np.testing.assert_array_equal(tr.logits, [[1.0, 0.0]])
    np.testing.assert_allclose(tr.probs, [[0.7310586, 0.2689414]], atol=1e-7)
    assert hand_net().predict_logits([[1.0, -1.0]]).tolist() == [[1.0, 0.0]]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_forward_matches_list_oracle(seed):
    bb, rng = random_net(seed)
    x = rng.normal((3, 5))
    masks = [(rng.uniform((3, d)) < 0.5).astype(float) for d in bb.mask_dims]
    got = bb.predict_logits(x, masks)
    params = {k: v.tolist() for k, v in bb.params.items()}
    for i in range(3):
        want = mlp_logits(params, x[i].tolist(), [m[i].tolist() for m in masks])
        np.testing.assert_allclose(got[i], want, rtol=1e-12, atol=1e-12)


def test_all_ones_masks_are_identity():
    bb, rng = random_net(1)
    x = rng.normal((4, 5))
    a = bb.forward(x).logits
    b = bb.forward(x, bb.ones_masks(4)).logits
    assert np.array_equal(a, b)


def test_zero_mask_annihilates_layer():
    bb, rng = random_net(2)
    x = rng.normal((4, 5))
    masks = [np.ones((4, 4)), np.zeros((4, 3))]
    tr = bb.forward(x, masks)
    assert np.all(tr.acts[2] == 0)
    np.testing.assert_array_equal(tr.logits, np.tile(bb.params["b3"], (4, 1)))
    # the output no longer depends on the input
    np.testing.assert_array_equal(bb.forward(rng.normal((4, 5)), masks).logits, tr.logits)


def test_zero_input_zero_bias_gives_zero_logits():
    bb = BackboneNet((3, 4, 2), SeededRng(0))
    assert np.all(bb.predict_logits(np.zeros((2, 3))) == 0)


def test_softmax_of_logits_matches_probs():
    bb, rng = random_net(3)
    x = rng.normal((6, 5))
    tr = bb.forward(x)
    np.testing.assert_allclose(stable_softmax(bb.predict_logits(x)), tr.probs, atol=1e-12)


def test_mask_shape_mismatch():
    bb, rng = random_net(4)
    with pytest.raises(ShapeError):
        bb.forward(rng.normal((2, 5)), [np.ones((2, 4)), np.ones((2, 2))])
    with pytest.raises(ShapeError):
        bb.forward(rng.normal((2, 4)))


def test_cross_entropy_examples():
    bb = BackboneNet((2, 2, 2))
    tr = bb.forward(np.zeros((1, 2)))
    assert cross_entropy(tr, [0]) == pytest.approx(math.log(2), abs=1e-12)
    tr = hand_net().forward([[1.0, -1.0]])
    assert cross_entropy(tr, [1]) == pytest.approx(-math.log(1 / (math.e + 1)), abs=1e-12)
    assert cross_entropy(tr, [1]) == pytest.approx(1.3132617, abs=1e-7)
    big = hand_net()
    big.params["b2"][...] = [800.0, 0.0]
    assert cross_entropy(big.forward([[1.0, -1.0]]), [0]) == 0.0


def test_label_out_of_range():
    tr = hand_net().forward([[1.0, 1.0]])
    with pytest.raises(ValueError):
        log_likelihood(tr, [2])
    with pytest.raises(ValueError):
        log_likelihood(tr, [-1])


def test_output_bias_gradient_identity():
    bb, rng = random_net(5)
    x = rng.normal((7, 5))
    y = rng.integers(0, 3, size=7)
    tr = bb.forward(x)
    g = bb.backward(tr, y)
    np.testing.assert_allclose(g["b3"], (tr.probs - np.eye(3)[y]).mean(axis=0), atol=1e-15)


def test_perfect_prediction_has_zero_gradient():
    bb = hand_net()
    bb.params["b2"][...] = [1e3, -1e3]
    tr = bb.forward([[0.5, 0.5]])
    g = bb.backward(tr, [0])
    assert all(np.all(v == 0) for v in g.values())


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    bb, rng = random_net(seed, dims=(6, 5, 4, 3))
    x = rng.normal((4, 6))
    y = rng.integers(0, 3, size=4)
    masks = [(rng.uniform((4, d)) < 0.7).astype(float) for d in bb.mask_dims]
    grads = bb.backward(bb.forward(x, masks), y)
    rep = finite_diff_gradcheck(lambda: cross_entropy(bb.forward(x, masks), y), bb.params, grads)
    assert rep.max_rel_error < 1e-4, rep


def test_stale_trace():
    bb, rng = random_net(6)
    tr = bb.forward(rng.normal((2, 5)))
    other = BackboneNet((5, 4, 4, 3), SeededRng(0))
    with pytest.raises(StaleTraceError):
        other.backward(tr, [0, 1])
