"""Finite-difference verification of the three analytic gradient paths.

theta   masked cross-entropy of the backbone,
xi      prior objective ``mean log p(z|x; xi)``,
phi/gamma  TB loss of a frozen trajectory.

Trajectories are sampled once per instance, so every loss below is a
deterministic function of the parameters.
"""

import numpy as np

from .backbone import BackboneNet
from .numeric import SeededRng
from .objectives import RewardConfig, backbone_objective, prior_objective, reward_log, tb_objective
from .oracle import finite_diff_gradcheck
from .policies import PolicyBundle, sample_trajectory

PATHS = ("theta", "xi", "phi_gamma")


def random_instance(seed, dims=(6, 5, 4, 3), hidden=8, batch=4):
    """Random backbone and policy (non-zero output layers) plus a frozen trajectory."""
    rng = SeededRng(seed)
    bb = BackboneNet(dims, rng)
    for k, v in bb.params.items():
        if k.startswith("b"):
            v[...] = rng.normal(v.shape, scale=0.1)
    pol = PolicyBundle(dims, rng, hidden=hidden)
    for name, v in pol.parameters().items():
        v[...] = rng.normal(v.shape, scale=0.3)
    x = rng.normal((batch, dims[0]))
    y = rng.integers(0, dims[-1], size=batch)
    traj = sample_trajectory(pol, bb, x, y, "tempered-train", rng)
    return bb, pol, x, y, traj.masks


def check_theta(bb, pol, x, y, masks, corrupt=False, h=1e-5):
    _, grads = backbone_objective(bb, x, y, masks)
    if corrupt:
        grads["w1"] = grads["w1"].copy()
        grads["w1"][0, 0] += 1e-2
    return finite_diff_gradcheck(lambda: backbone_objective(bb, x, y, masks)[0], bb.params, grads, h)


def check_xi(bb, pol, x, y, masks, corrupt=False, h=1e-5):
    params = pol.groups()["prior"]
    _, grads = prior_objective(pol, bb, x, masks)
    if corrupt:
        grads["p1.w1"] = grads["p1.w1"].copy()
        grads["p1.w1"][0, 0] += 1e-2
    return finite_diff_gradcheck(lambda: prior_objective(pol, bb, x, masks)[0], params, grads, h)


def check_phi_gamma(bb, pol, x, y, masks, corrupt=False, h=1e-5, cfg=None):
    groups = pol.groups()
    params = dict(groups["policy"])
    params.update({k: v for k, v in groups["partition"].items() if k.startswith("z.")})
    log_r = reward_log(bb, pol, x, y, masks, cfg or RewardConfig())
    _, grads, _ = tb_objective(pol, bb, x, y, masks, log_r)
    if corrupt:
        grads["q1.w1"] = grads["q1.w1"].copy()
        grads["q1.w1"][0, 0] += 1e-2
    return finite_diff_gradcheck(lambda: tb_objective(pol, bb, x, y, masks, log_r)[0],
                                 params, grads, h)


CHECKS = {"theta": check_theta, "xi": check_xi, "phi_gamma": check_phi_gamma}


def check_all_paths(seed, dims=(6, 5, 4, 3), hidden=8, batch=4, corrupt=None):
    """Gradcheck reports for every path on one random instance."""
    inst = random_instance(seed, dims, hidden, batch)
    return {p: CHECKS[p](*inst, corrupt=(corrupt == p)) for p in PATHS}
