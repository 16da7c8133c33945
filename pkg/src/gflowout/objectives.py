"""Rewards and training objectives for the mask policies and the backbone.

All losses are averaged over the batch.  The backbone objective is the
mean masked cross-entropy; the dataset-size factor N/B of the stochastic
ELBO gradient is folded into the backbone learning rate.
"""

from dataclasses import dataclass, field

import numpy as np

from .backbone import cross_entropy, log_likelihood
from .numeric import NumericError, as_matrix, bernoulli_log_prob
from .policies import FixedPrior, log_prob_grads, one_hot, prior_log_prob, replay

REWARD_SOURCES = ("train", "validation", "augmented-validation")


class RewardConfigError(ValueError):
    pass


@dataclass
class RewardConfig:
    beta: float = 1.0
    source: str = "train"
    augmentations: list = field(default_factory=list)

    def __post_init__(self):
        if not self.beta >= 0:
            raise RewardConfigError("beta must be non-negative")
        if self.source not in REWARD_SOURCES:
            raise RewardConfigError(f"unknown reward source {self.source!r}")
        if self.source == "augmented-validation" and len(self.augmentations) < 1:
            raise RewardConfigError("augmented-validation needs at least one augmentation")


@dataclass
class TbTerms:
    log_Z: np.ndarray
    log_q: np.ndarray
    log_R: np.ndarray


def reward_log(backbone, prior, x, y, masks, cfg=None, augmented=None):
    """Per-sample ``log R = beta * log p(y|x,z) + log p(z|x)``.

    ``augmented`` is a list of transformed copies of ``x``; their likelihoods
    are averaged into the likelihood term while the prior term (and the
    masks) stay tied to the original inputs.
    """
    cfg = cfg or RewardConfig()
    if cfg.source == "augmented-validation" and not augmented:
        raise RewardConfigError("augmented-validation reward needs augmented inputs")
    ll = log_likelihood(backbone.forward(x, masks), y)
    if cfg.source == "augmented-validation":
        aug = [log_likelihood(backbone.forward(xa, masks), y) for xa in augmented]
        ll = ll + np.mean(aug, axis=0)
    log_r = cfg.beta * ll + prior_log_prob(prior, backbone, x, masks)
    return _finite(log_r, "log R")


def id_reward_log(backbone, x, y, masks, n_data, prior_rate=0.5):
    """Reward of the sample-independent variant: ``N log p(y|x,z) + log p(z)``."""
    if n_data < 1:
        raise ValueError("dataset size must be at least 1")
    ll = log_likelihood(backbone.forward(x, masks), y)
    return _finite(n_data * ll + FixedPrior(prior_rate).log_prob(masks), "log R")


def _finite(v, what):
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NumericError(f"non-finite {what}")
    return v


def tb_loss(terms):
    r = _finite(terms.log_Z, "log Z") + _finite(terms.log_q, "log q") - _finite(terms.log_R, "log R")
    return r * r


def db_loss(flow, flow_next, forward_prob, backward_prob=1.0, delta=1e-8):
    """Detailed-balance residual ``log((d + F P_F) / (d + F' P_B))`` squared."""
    flow, flow_next = np.asarray(flow, float), np.asarray(flow_next, float)
    if np.any(flow < 0) or np.any(flow_next < 0):
        raise ValueError("flows must be non-negative")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    r = np.log(delta + flow * forward_prob) - np.log(delta + flow_next * backward_prob)
    return r * r


def _log_delta_plus_exp(a, log_delta):
    # log(delta + exp(a)) and its derivative in a
    if log_delta == -np.inf:
        return a, np.ones_like(a)
    return np.logaddexp(log_delta, a), np.exp(a - np.logaddexp(log_delta, a))


def tb_objective(policy, backbone, x, y, masks, log_r):
    """Mean TB loss over the batch and its gradients w.r.t. (phi, gamma).

    ``log_r`` is a constant: no gradient reaches the backbone or the prior.
    """
    log_q, records = replay(policy, backbone, x, y, masks, which="q")
    if hasattr(policy, "z_net"):
        log_z, zcache = policy.log_partition(x, y, return_cache=True)
    else:
        log_z, zcache = policy.log_partition(x, y), None
    per = tb_loss(TbTerms(log_z, log_q, log_r))
    batch = per.shape[0]
    resid = 2.0 * (log_z + log_q - log_r) / batch
    grads = log_prob_grads(policy, records, resid, "q")
    if zcache is None:
        grads["z.gamma"] = np.array([resid.sum()])
    else:
        g, _ = policy.z_net.backward(zcache, resid[:, None])
        for k, v in g.items():
            grads[f"z.{k}"] = v
    return float(per.mean()), grads, TbTerms(log_z, log_q, log_r)


def db_objective(policy, backbone, x, y, masks, log_r, delta=1e-8):
    """Mean over the batch of the summed per-transition DB losses, with grads.

    State flows ``F(s_t)`` for t < L come from the flow nets; the terminal
    flow is the reward.  The backward policy of the tree is 1.
    """
    x = as_matrix(x)
    batch = x.shape[0]
    yo = one_hot(y, policy.n_classes)
    log_delta = np.log(delta) if delta > 0 else -np.inf
    _, records = replay(policy, backbone, x, y, masks, which="q")
    h = x
    log_f, fcaches, hps = [], [], []
    for l, z in enumerate(masks, start=1):
        hp = backbone.hidden_pre_mask(l, h)
        lf, fc = policy.log_flow(l - 1, hp, yo, masks[: l - 1])
        log_f.append(lf)
        fcaches.append(fc)
        h = np.asarray(z, float) * hp
    log_pf = [bernoulli_log_prob(rec[3], rec[4]).sum(axis=1) for rec in records]
    log_f.append(np.asarray(log_r, float))
    total = np.zeros(batch)
    d_logf = [np.zeros(batch) for _ in range(len(masks))]
    d_logpf = [np.zeros(batch) for _ in range(len(masks))]
    for t in range(len(masks)):
        left, dleft = _log_delta_plus_exp(log_f[t] + log_pf[t], log_delta)
        right, dright = _log_delta_plus_exp(log_f[t + 1], log_delta)
        r = left - right
        total += r * r
        g = 2.0 * r / batch
        d_logf[t] += g * dleft
        d_logpf[t] += g * dleft
        if t + 1 < len(masks):
            d_logf[t + 1] -= g * dright
    _finite(total, "DB loss")
    grads = {}
    for t, rec in enumerate(records):
        grads.update(log_prob_grads(policy, [rec], d_logpf[t], "q"))
        net, cache = fcaches[t]
        g, _ = net.backward(cache, d_logf[t][:, None])
        for k, v in g.items():
            grads[f"f{t + 1}.{k}"] = v
    return float(total.mean()), grads


def prior_objective(policy, backbone, x, masks):
    """Mean ``log p(z|x; xi)`` over the batch and its gradient w.r.t. xi (ascent)."""
    log_p, records = replay(policy, backbone, x, None, masks, which="p")
    batch = log_p.shape[0]
    grads = log_prob_grads(policy, records, np.full(batch, 1.0 / batch), "p")
    return float(log_p.mean()), grads


def backbone_objective(backbone, x, y, masks):
    """Mean masked cross-entropy and its theta-gradient (masks fixed)."""
    trace = backbone.forward(x, masks)
    return cross_entropy(trace, y), backbone.backward(trace, y)
