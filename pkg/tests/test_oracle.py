import math

import numpy as np
import pytest

from gflowout.backbone import BackboneNet
from gflowout.fixtures import random_chain_fixture
from gflowout.numeric import SeededRng
from gflowout.objectives import RewardConfig
from gflowout.oracle import (ContractError, EnumerationGuardError, MaskSpace, exact_target,
                             finite_diff_gradcheck, policy_terminal_distribution, solve_policy,
                             tb_losses_all_masks, tv_to_target)
from gflowout.checks import check_phi_gamma
from gflowout.policies import FixedPrior, PolicyBundle, sample_trajectory
from oracles import all_masks, target_by_enumeration, tv


def nine_tenths_on_full_mask():
    """One layer of two units; label 0 has probability 0.9 under mask [1,1], else 0.5."""
    s = math.sqrt(8.0 / 9.0)
    bb = BackboneNet((1, 2, 3))
    bb.params["w1"][...] = 1.0
    bb.params["w2"][...] = [[0.0, 0.0], [math.log(1 + s), math.log(1 - s)],
                            [math.log(1 - s), math.log(1 + s)]]
    bb.params["b2"][...] = [0.0, math.log(0.5), math.log(0.5)]
    return bb


def test_hand_target():
    bb = nine_tenths_on_full_mask()
    lik = [math.exp(v) for v in np.log(bb.forward(np.ones((4, 1)), MaskSpace([2]).layers()).probs[:, 0])]
    np.testing.assert_allclose(lik, [0.5, 0.5, 0.5, 0.9], atol=1e-12)
    target, log_z = exact_target(bb, FixedPrior(0.5), [[1.0]], [0])
    np.testing.assert_allclose(target, [0.5 / 2.4, 0.5 / 2.4, 0.5 / 2.4, 0.375], atol=1e-12)
    np.testing.assert_allclose(target[:3], 0.2083, atol=1e-4)
    assert log_z == pytest.approx(math.log(2.4 * 0.25), abs=1e-12)
    uniform_policy = PolicyBundle((1, 2, 3))
    tv_u = tv_to_target(uniform_policy, bb, FixedPrior(0.5), [[1.0]], [0])[0]
    assert tv_u == pytest.approx(0.125, abs=1e-12)


def test_mask_space_order():
    space = MaskSpace([2, 1])
    assert space.flat().tolist() == [[int(b) for b in f"{k:03b}"] for k in range(8)]
    first, second = space.layers()
    assert first[5].tolist() == [1.0, 0.0] and second[5].tolist() == [1.0]
    assert [list(m) for m in all_masks((2, 1))[5]] == [[1, 0], [1]]
    assert np.array_equal(space.index(space.layers()), np.arange(8))
    with pytest.raises(EnumerationGuardError):
        MaskSpace([12, 9])


@pytest.mark.parametrize("seed", range(4))
def test_exact_target_matches_enumeration_oracle(seed):
    rng = SeededRng(seed)
    dims = (3, 3, 2, 3)
    bb = BackboneNet(dims, rng)
    x = rng.normal((1, 3))
    for beta in (0.0, 0.5, 1.0):
        target, log_z = exact_target(bb, FixedPrior(0.5), x, [1], RewardConfig(beta=beta))
        params = {k: v.tolist() for k, v in bb.params.items()}
        want, want_z = target_by_enumeration(params, (3, 2), x[0].tolist(), 1, beta)
        np.testing.assert_allclose(target, want, atol=1e-13)
        assert log_z == pytest.approx(want_z, abs=1e-12)
        assert target.sum() == pytest.approx(1.0, abs=1e-10)


def test_beta_zero_target_is_uniform():
    rng = SeededRng(5)
    bb = BackboneNet((4, 3, 3, 2), rng)
    target, _ = exact_target(bb, PolicyBundle((4, 3, 3, 2)), rng.normal((1, 4)), [0],
                             RewardConfig(beta=0.0))
    assert np.max(np.abs(target - 1 / 64)) < 1e-15


def random_bundle(seed, dims=(3, 3, 2, 2)):
    rng = SeededRng(seed)
    bb = BackboneNet(dims, rng)
    pol = PolicyBundle(dims, rng, hidden=6)
    for v in pol.parameters().values():
        v[...] = rng.normal(v.shape, scale=0.6)
    return bb, pol, rng.normal((1, dims[0]))


@pytest.mark.parametrize("mode", ["posterior", "prior", "tempered-train"])
def test_terminal_distribution_is_normalised(mode):
    bb, pol, x = random_bundle(1)
    p = policy_terminal_distribution(pol, bb, x, [1], mode)
    assert p.shape == (32,)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


def test_terminal_distribution_limits():
    rng = SeededRng(2)
    dims = (3, 3, 2, 2)
    bb = BackboneNet(dims, rng)
    pol = PolicyBundle(dims, rng)
    x = rng.normal((1, 3))
    np.testing.assert_allclose(policy_terminal_distribution(pol, bb, x, [0]), 1 / 32, rtol=1e-12)
    for net in pol.q_nets:
        net.params["b3"][...] = 100.0
    p = policy_terminal_distribution(pol, bb, x, [0])
    assert p[-1] == pytest.approx(1.0, abs=1e-5)


@pytest.mark.parametrize("mode", ["posterior", "tempered-train"])
def test_terminal_distribution_matches_samples(mode):
    bb, pol, x = random_bundle(3)
    n = 100_000
    traj = sample_trajectory(pol, bb, np.repeat(x, n, 0), np.ones(n, int), mode, SeededRng(4))
    idx = MaskSpace(bb.mask_dims).index(traj.masks)
    hist = np.bincount(idx, minlength=32) / n
    exact = policy_terminal_distribution(pol, bb, x, [1], mode)
    assert tv(hist.tolist(), exact.tolist()) < 0.02


def test_solved_policy_matches_target_on_chain():
    fx = random_chain_fixture(0, n_units=3)
    for i in range(len(fx.y)):
        x, y = fx.x[i:i + 1], fx.y[i:i + 1]
        pol = solve_policy(PolicyBundle(fx.backbone.layer_dims, hidden=8), fx.backbone,
                           FixedPrior(0.5), x, y)
        assert tv_to_target(pol, fx.backbone, FixedPrior(0.5), x, y)[0] < 1e-9
        assert tb_losses_all_masks(pol, fx.backbone, FixedPrior(0.5), x, y).max() < 1e-12


def test_gradcheck_examples():
    p = {"p": np.array([3.0])}
    rep = finite_diff_gradcheck(lambda: 0.5 * p["p"][0] ** 2, p, {"p": np.array([3.0])})
    assert rep.max_rel_error < 1e-9
    q = {"a": np.ones((2, 2))}
    rep = finite_diff_gradcheck(lambda: 4.0, q, {"a": np.zeros((2, 2))})
    assert rep.max_rel_error == 0.0 and rep.n_checked == 4
    rep = finite_diff_gradcheck(lambda: float(q["a"].sum()), q, {"a": np.zeros((2, 2))})
    assert rep.worst_param == "a" and not rep.passed()


def test_gradcheck_steps_around_relu_kink():
    # the kink at 0 lies inside the +-1e-5 stencil, so the plain central difference is 0.65
    p = {"a": np.array([3e-6])}
    loss = lambda: max(p["a"][0], 0.0)
    rep = finite_diff_gradcheck(loss, p, {"a": np.array([1.0])})
    assert rep.n_kinks == 1 and rep.max_rel_error < 1e-9
    rep = finite_diff_gradcheck(loss, p, {"a": np.array([0.9])})
    assert rep.max_rel_error > 0.05 and not rep.passed()
    smooth = {"b": np.array([2.0])}
    rep = finite_diff_gradcheck(lambda: float(np.exp(smooth["b"][0])), smooth,
                                {"b": np.exp([2.0])})
    assert rep.n_kinks == 0


def test_gradcheck_rejects_random_loss():
    rng = SeededRng(0)
    with pytest.raises(ContractError):
        finite_diff_gradcheck(lambda: rng.uniform(), {"a": np.ones(1)}, {"a": np.zeros(1)})


def test_tb_gradcheck_on_two_unit_layer():
    rng = SeededRng(7)
    dims = (2, 2, 2)
    bb = BackboneNet(dims, rng)
    pol = PolicyBundle(dims, rng, hidden=5)
    for v in pol.parameters().values():
        v[...] = rng.normal(v.shape, scale=0.4)
    x = rng.normal((3, 2))
    y = np.array([0, 1, 1])
    masks = sample_trajectory(pol, bb, x, y, "tempered-train", rng).masks
    assert check_phi_gamma(bb, pol, x, y, masks).max_rel_error < 1e-4


def test_enumeration_covers_every_mask_once():
    assert len(all_masks((2, 1))) == MaskSpace([2, 1]).size
