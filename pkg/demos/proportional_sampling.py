"""Proportional sampling on a mask space small enough to enumerate.

The fixture backbone (4-3-3-2) has six maskable units, so all 64 dropout
masks can be scored exactly.  We train only the mask generator with
trajectory balance and compare its terminal distribution with the exact
target, which is proportional to the reward.

    python demos/proportional_sampling.py
"""

import numpy as np

from gflowout.fixtures import enumerable_fixture, train_fixture_policy
from gflowout.oracle import (exact_target, log_partition_errors, policy_terminal_distribution,
                             tv_to_target)

fx = enumerable_fixture()
print("probes:", len(fx.y), " maskable units:", fx.backbone.n_maskable)

# Before training every unit is kept with probability 0.5, so the policy is uniform.
untrained = tv_to_target(fx.prior, fx.backbone, fx.prior, fx.x, fx.y, fx.reward)
print(f"TV(uniform, target) per probe: {np.round(untrained, 3)}")

policy, losses = train_fixture_policy(fx, steps=5000)
print(f"TB loss: first 50 steps {losses[:50].mean():.3f}, last 200 steps {losses[-200:].mean():.5f}")

tv = tv_to_target(policy, fx.backbone, fx.prior, fx.x, fx.y, fx.reward)
rel, learned, exact = log_partition_errors(policy, fx.backbone, fx.prior, fx.x, fx.y, fx.reward)
print(f"TV(policy, target) per probe: {np.round(tv, 3)}  mean {tv.mean():.4f}")
print(f"log Z learned {np.round(learned, 3)}")
print(f"log Z exact   {np.round(exact, 3)}  mean rel err {rel.mean():.4f}")

# The three masks the target likes most for the first probe, next to the policy's mass.
target, _ = exact_target(fx.backbone, fx.prior, fx.x[:1], fx.y[:1], fx.reward)
learned_dist = policy_terminal_distribution(policy, fx.backbone, fx.x[:1], fx.y[:1])
for k in np.argsort(-target)[:3]:
    print(f"mask {k:06b}: target {target[k]:.3f}  policy {learned_dist[k]:.3f}")
