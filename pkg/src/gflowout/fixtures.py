"""Small seeded problems whose mask spaces can be enumerated exactly."""

from dataclasses import dataclass

import numpy as np

from .backbone import BackboneNet
from .data import gen_blobs
from .numeric import SeededRng
from .objectives import RewardConfig
from .policies import PolicyBundle, sample_trajectory
from .trainer import TrainRunConfig, backbone_update, build_state, policy_update

FIXTURE_DIMS = (4, 3, 3, 2)
FIXTURE_SEED = 2
N_PROBES = 8


@dataclass
class EnumerableFixture:
    backbone: BackboneNet
    prior: PolicyBundle  # untrained p-nets: every unit kept with probability 0.5
    x: np.ndarray
    y: np.ndarray
    reward: RewardConfig


def enumerable_fixture(seed=FIXTURE_SEED, dims=FIXTURE_DIMS, n_probes=N_PROBES, beta=1.0,
                       pretrain_steps=200):
    """Backbone trained on 4-D two-class blobs plus ``n_probes`` probe points.

    Pre-training makes the reward depend strongly on which units are kept,
    so the target is far from uniform.
    """
    data = gen_blobs(seed, 200, dims[-1], _centers(dims), 1.0)
    cfg = TrainRunConfig(method="none", lr_backbone=1e-2, seed=seed)
    state = build_state(cfg, dims, len(data))
    ones = state.backbone.ones_masks(len(data))
    for _ in range(pretrain_steps):
        backbone_update(state, data.x, data.y, ones)
    return EnumerableFixture(state.backbone, PolicyBundle(dims), data.x[:n_probes],
                             data.y[:n_probes], RewardConfig(beta=beta))


def _centers(dims):
    d, k = dims[0], dims[-1]
    c = np.zeros((k, d))
    for i in range(k):
        c[i, :2] = 1.0 if i == 0 else -1.0
        if i > 1:
            c[i, i % d] += 2.0
    return c


def random_chain_fixture(seed, n_units=4, n_in=3, n_classes=2, n_probes=4):
    """Backbone whose hidden layers have one unit each (``n_units`` layers)."""
    rng = SeededRng(seed)
    dims = (n_in, *([1] * n_units), n_classes)
    bb = BackboneNet(dims, rng)
    for k in bb.params:
        if k.startswith("b"):
            bb.params[k][...] = rng.normal(bb.params[k].shape, scale=0.5)
    x = rng.normal((n_probes, n_in))
    y = rng.integers(0, n_classes, size=n_probes)
    return EnumerableFixture(bb, PolicyBundle(dims), x, y, RewardConfig())


def train_fixture_policy(fixture, steps=5000, seed=0, replicas=4, lr_policy=1e-3,
                         temperature=2.0, epsilon=0.1, objective="tb"):
    """Fit (phi, gamma) by TB on the probes; theta and xi stay frozen.

    Every step draws ``replicas`` tempered trajectories per probe, and all
    learning rates decay linearly to zero over ``steps``.
    """
    cfg = TrainRunConfig(method="gflowout", objective=objective, lr_policy=lr_policy,
                         temperature=temperature, epsilon=epsilon, beta=fixture.reward.beta,
                         seed=seed)
    policy = PolicyBundle(fixture.backbone.layer_dims, SeededRng(seed), temperature=temperature,
                          epsilon=epsilon, with_flows=objective == "db")
    state = build_state(cfg, fixture.backbone.layer_dims, len(fixture.y),
                        backbone=fixture.backbone, policy=policy)
    xr = np.repeat(fixture.x, replicas, axis=0)
    yr = np.repeat(fixture.y, replicas)
    losses = []
    for step in range(steps):
        state.optimizer.lr_scale = 1.0 - step / steps
        traj = sample_trajectory(policy, fixture.backbone, xr, yr, "tempered-train", state.rng)
        losses.append(policy_update(state, xr, yr, traj.masks)[0])
    return policy, np.array(losses)
