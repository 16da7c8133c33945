import math

import numpy as np
import pytest

from gflowout.backbone import BackboneNet, cross_entropy, log_likelihood
from gflowout.numeric import NumericError, SeededRng
from gflowout.objectives import (RewardConfig, RewardConfigError, TbTerms, backbone_objective,
                                 db_loss, db_objective, id_reward_log, prior_objective, reward_log,
                                 tb_loss, tb_objective)
from gflowout.oracle import finite_diff_gradcheck
from gflowout.policies import FixedPrior, PolicyBundle, sample_trajectory


def hand_net():
    bb = BackboneNet((2, 2, 2))
    bb.params["w1"][...] = np.eye(2)
    bb.params["w2"][...] = np.eye(2)
    return bb


def ones(n=1):
    return [np.ones((n, 2))]


def test_reward_perfect_prediction():
    bb = hand_net()
    bb.params["b2"][...] = [1e3, -1e3]
    r = reward_log(bb, FixedPrior(0.5), [[1.0, -1.0]], [0], ones())
    assert r[0] == pytest.approx(2 * math.log(0.5), abs=1e-12)
    assert r[0] == pytest.approx(-1.3862944, abs=1e-7)


def test_reward_worked_sum():
    r = reward_log(hand_net(), FixedPrior(0.5), [[1.0, -1.0]], [0], ones())
    assert r[0] == pytest.approx(math.log(math.e / (math.e + 1)) + 2 * math.log(0.5), abs=1e-12)
    assert r[0] == pytest.approx(-1.6995561, abs=1e-7)


def test_beta_zero_leaves_prior_only():
    rng = SeededRng(0)
    bb = BackboneNet((3, 4, 2), rng)
    x = rng.normal((5, 3))
    masks = [(rng.uniform((5, 4)) < 0.5).astype(float)]
    r = reward_log(bb, FixedPrior(0.3), x, [0, 1, 0, 1, 1], masks, RewardConfig(beta=0.0))
    np.testing.assert_array_equal(r, FixedPrior(0.3).log_prob(masks))


def test_reward_with_learned_prior():
    rng = SeededRng(1)
    dims = (3, 4, 2)
    bb = BackboneNet(dims, rng)
    pol = PolicyBundle(dims, rng, hidden=4)
    x = rng.normal((3, 3))
    masks = [np.ones((3, 4))]
    want = log_likelihood(bb.forward(x, masks), [0, 1, 1]) + 4 * math.log(0.5)
    np.testing.assert_allclose(reward_log(bb, pol, x, [0, 1, 1], masks), want, rtol=1e-14)


def test_augmented_reward():
    rng = SeededRng(2)
    bb = BackboneNet((3, 4, 2), rng)
    x = rng.normal((3, 3))
    y = [1, 0, 1]
    masks = [np.ones((3, 4))]
    aug = [x + 0.1, x - 0.2]
    cfg = RewardConfig(source="augmented-validation", augmentations=["a", "b"])
    ll = lambda xx: log_likelihood(bb.forward(xx, masks), y)
    want = ll(x) + (ll(aug[0]) + ll(aug[1])) / 2 + 4 * math.log(0.5)
    np.testing.assert_allclose(reward_log(bb, FixedPrior(), x, y, masks, cfg, aug), want, rtol=1e-14)
    with pytest.raises(RewardConfigError):
        reward_log(bb, FixedPrior(), x, y, masks, cfg)


def test_reward_config_validation():
    with pytest.raises(RewardConfigError):
        RewardConfig(beta=-1.0)
    with pytest.raises(RewardConfigError):
        RewardConfig(source="test")
    with pytest.raises(RewardConfigError):
        RewardConfig(source="augmented-validation")


def nine_tenths_net(units=4):
    bb = BackboneNet((1, units, 2))
    bb.params["b2"][...] = [math.log(9.0), 0.0]
    return bb


def test_id_reward():
    bb = nine_tenths_net()
    masks = [np.ones((1, 4))]
    r = id_reward_log(bb, [[0.0]], [0], masks, n_data=100)
    assert r[0] == pytest.approx(100 * math.log(0.9) + 4 * math.log(0.5), abs=1e-10)
    assert r[0] == pytest.approx(-13.3086, abs=1e-4)
    one = id_reward_log(bb, [[0.0]], [0], masks, n_data=1)
    np.testing.assert_allclose(one, reward_log(bb, FixedPrior(0.5), [[0.0]], [0], masks), rtol=1e-14)
    two = id_reward_log(bb, [[0.0]], [0], masks, n_data=200) - 4 * math.log(0.5)
    assert two[0] == 2 * (r[0] - 4 * math.log(0.5))


def test_tb_loss_examples():
    assert tb_loss(TbTerms(np.array([1.0]), np.array([-2.0]), np.array([-1.0])))[0] == 0.0
    assert tb_loss(TbTerms(np.array([2.0]), np.array([0.0]), np.array([1.0])))[0] == 1.0
    assert tb_loss(TbTerms(np.array([0.3]), np.array([-1.2]), np.array([-2.0])))[0] == \
        pytest.approx(1.21, abs=1e-14)
    with pytest.raises(NumericError):
        tb_loss(TbTerms(np.array([np.nan]), np.array([0.0]), np.array([0.0])))
    with pytest.raises(NumericError):
        tb_loss(TbTerms(np.array([0.0]), np.array([-np.inf]), np.array([0.0])))


def test_db_loss_examples():
    assert db_loss(2.0, 1.0, 0.5, 1.0, delta=0.0) == 0.0
    assert db_loss(2.0, 2.0, 0.5, 1.0, delta=0.0) == pytest.approx(math.log(0.5) ** 2, abs=1e-15)
    assert db_loss(2.0, 2.0, 0.5, 1.0, delta=0.0) == pytest.approx(0.4804530, abs=1e-7)
    assert db_loss(2.0, 1.0, 0.5) == pytest.approx(0.0, abs=1e-15)
    assert db_loss(2.0, 7.0, 0.5, delta=1e12) < 1e-20
    with pytest.raises(ValueError):
        db_loss(-1.0, 1.0, 0.5)


def db_instance(seed):
    rng = SeededRng(seed)
    dims = (4, 3, 3, 2)
    bb = BackboneNet(dims, rng)
    pol = PolicyBundle(dims, rng, hidden=6, with_flows=True)
    for v in pol.parameters().values():
        v[...] = rng.normal(v.shape, scale=0.3)
    x = rng.normal((3, 4))
    y = rng.integers(0, 2, size=3)
    masks = sample_trajectory(pol, bb, x, y, "tempered-train", rng).masks
    log_r = reward_log(bb, pol, x, y, masks)
    return bb, pol, x, y, masks, log_r


@pytest.mark.parametrize("seed", range(3))
def test_db_gradients(seed):
    bb, pol, x, y, masks, log_r = db_instance(seed)
    _, grads = db_objective(pol, bb, x, y, masks, log_r)
    params = {k: v for k, v in pol.parameters().items() if k[0] in "qf"}
    rep = finite_diff_gradcheck(lambda: db_objective(pol, bb, x, y, masks, log_r)[0], params, grads)
    assert rep.max_rel_error < 1e-4, rep


def test_db_balanced_chain_is_zero():
    # flows equal to the reward and a deterministic policy balance every edge
    bb, pol, x, y, masks, log_r = db_instance(0)
    for net in pol.q_nets:
        for v in net.params.values():
            v[...] = 0.0
        net.params["b3"][...] = 200.0
    for t, net in enumerate(pol.flow_nets):
        for v in net.params.values():
            v[...] = 0.0
    x1 = x[:1]
    y1 = y[:1]
    ones_m = [np.ones((1, 3)), np.ones((1, 3))]
    lr = reward_log(bb, pol, x1, y1, ones_m)
    for net in pol.flow_nets:
        net.params["b3"][...] = lr[0]
    loss, _ = db_objective(pol, bb, x1, y1, ones_m, lr, delta=0.0)
    assert loss < 1e-9


def test_prior_objective():
    rng = SeededRng(3)
    dims = (3, 4, 3, 2)
    bb = BackboneNet(dims, rng)
    pol = PolicyBundle(dims, rng, hidden=5)
    x = rng.normal((4, 3))
    masks = [(rng.uniform((4, d)) < 0.5).astype(float) for d in (4, 3)]
    obj, _ = prior_objective(pol, bb, x, masks)
    assert obj == pytest.approx(7 * math.log(0.5), abs=1e-12)
    for net in pol.p_nets:
        net.params["b3"][...] = 200.0
    obj, _ = prior_objective(pol, bb, x, [np.ones((4, 4)), np.ones((4, 3))])
    assert abs(obj) < 1e-5


def test_backbone_objective_is_masked_cross_entropy():
    rng = SeededRng(4)
    bb = BackboneNet((3, 4, 2), rng)
    x = rng.normal((4, 3))
    y = [0, 1, 1, 0]
    masks = [(rng.uniform((4, 4)) < 0.5).astype(float)]
    ce, grads = backbone_objective(bb, x, y, masks)
    assert ce == cross_entropy(bb.forward(x, masks), y)
    ce1, _ = backbone_objective(bb, x, y, bb.ones_masks(4))
    assert ce1 == cross_entropy(bb.forward(x), y)


def test_tb_objective_leaves_reward_inputs_alone():
    bb, pol, x, y, masks, log_r = db_instance(5)
    before = {k: v.copy() for k, v in bb.params.items()}
    _, grads, terms = tb_objective(pol, bb, x, y, masks, log_r)
    assert all(k[0] in "qz" for k in grads)
    assert all(np.array_equal(before[k], bb.params[k]) for k in before)
    np.testing.assert_array_equal(terms.log_R, log_r)
