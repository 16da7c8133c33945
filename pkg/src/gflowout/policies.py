"""Mask-generating policies and layer-by-layer trajectory sampling.

A trajectory builds the dropout masks of the backbone one hidden layer at a
time.  At layer ``l`` every unit gets an independent Bernoulli probability
computed from the current pre-mask activation ``h'_l``, the label (posterior
only) and the masks already chosen for layers ``1..l-1``.  Because each
terminal mask set is reached by exactly one layer-ordered path, the forward
log-probability of a trajectory is the log-probability of its masks.
"""

from dataclasses import dataclass

import numpy as np

from .backbone import MLP, check_labels
from .numeric import (LOGIT_CLIP, ShapeError, as_matrix, bernoulli_log_prob,
                      bernoulli_vector, clamp_logit, clamp_prob, logit, sigmoid)

MODES = ("tempered-train", "posterior", "prior", "id")
HIDDEN = 32


def one_hot(y, k):
    y = check_labels(y, k)
    out = np.zeros((y.shape[0], k))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def temper(probs, temperature):
    """Flatten Bernoulli probabilities by dividing their logits by ``temperature``."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    p = clamp_prob(np.asarray(probs, dtype=np.float64))
    if temperature == 1:
        return p
    return clamp_prob(sigmoid(logit(p) / temperature))


def _logit_grad(z, a):
    # d/da of the clamped Bernoulli log-likelihood; zero where the clamp is active
    inside = (np.abs(a) < LOGIT_CLIP).astype(np.float64)
    return (z - sigmoid(clamp_logit(a))) * inside


class PolicyBundle:
    """q(z|x,y;phi), p(z|x;xi), log Z(x,y;gamma) and optional DB state flows.

    All generator output layers start at zero, so a fresh bundle emits
    probability 0.5 for every unit and ``log Z = 0``.
    """

    def __init__(self, layer_dims, rng=None, hidden=HIDDEN, temperature=2.0,
                 epsilon=0.1, with_flows=False):
        layer_dims = [int(d) for d in layer_dims]
        self.layer_dims = tuple(layer_dims)
        self.mask_dims = tuple(layer_dims[1:-1])
        self.n_classes = layer_dims[-1]
        self.temperature = float(temperature)
        self.epsilon = float(epsilon)
        k = self.n_classes
        self.q_nets, self.p_nets, self.flow_nets = [], [], []
        for l, d in enumerate(self.mask_dims, start=1):
            prev = self.prev_width(l)
            self.q_nets.append(MLP([d + k + prev, hidden, hidden, d], rng, zero_last=True))
            self.p_nets.append(MLP([d + prev, hidden, hidden, d], rng, zero_last=True))
            if with_flows:
                self.flow_nets.append(MLP([d + k + prev, hidden, hidden, 1], rng, zero_last=True))
        self.z_net = MLP([layer_dims[0] + k, hidden, hidden, 1], rng, zero_last=True)

    @property
    def n_layers(self):
        return len(self.mask_dims)

    def prev_width(self, l):
        return sum(self.mask_dims[: l - 1])

    def groups(self):
        """Parameter arrays keyed by name, split into optimizer groups."""
        policy, prior, partition = {}, {}, {}
        for l in range(1, self.n_layers + 1):
            for k, v in self.q_nets[l - 1].params.items():
                policy[f"q{l}.{k}"] = v
            for k, v in self.p_nets[l - 1].params.items():
                prior[f"p{l}.{k}"] = v
        for l, net in enumerate(self.flow_nets, start=1):
            for k, v in net.params.items():
                partition[f"f{l}.{k}"] = v
        for k, v in self.z_net.params.items():
            partition[f"z.{k}"] = v
        return {"policy": policy, "prior": prior, "partition": partition}

    def parameters(self):
        out = {}
        for g in self.groups().values():
            out.update(g)
        return out

    def _net_for(self, name):
        head, key = name.split(".", 1)
        if head == "z":
            return self.z_net, key
        table = {"q": self.q_nets, "p": self.p_nets, "f": self.flow_nets}[head[0]]
        return table[int(head[1:]) - 1], key

    def _features(self, l, h_unmasked, y_onehot, prev_masks, with_label):
        h_unmasked = as_matrix(h_unmasked)
        if len(prev_masks) != l - 1:
            raise ShapeError(f"layer {l} needs masks for layers 1..{l - 1}")
        parts = [h_unmasked]
        if with_label:
            parts.append(y_onehot)
        parts.extend(np.asarray(m, dtype=np.float64) for m in prev_masks)
        return np.concatenate(parts, axis=1)

    def layer_logits(self, l, h_unmasked, y_onehot, prev_masks, which="q"):
        if which == "q":
            if y_onehot is None:
                raise ValueError("the posterior policy needs labels")
            net = self.q_nets[l - 1]
            feats = self._features(l, h_unmasked, y_onehot, prev_masks, True)
        elif which == "p":
            net = self.p_nets[l - 1]
            feats = self._features(l, h_unmasked, None, prev_masks, False)
        else:
            raise ValueError(f"unknown policy {which!r}")
        cache = net.forward(feats)
        return cache["out"], (net, cache)

    def layer_probs(self, l, h_unmasked, y=None, prev_masks=(), which=None):
        """Clamped per-unit keep probabilities at hidden layer ``l`` (1-based)."""
        which = which or ("q" if y is not None else "p")
        yo = None if y is None else one_hot(y, self.n_classes)
        a, _ = self.layer_logits(l, h_unmasked, yo, list(prev_masks), which)
        return clamp_prob(sigmoid(clamp_logit(a)))

    def log_partition(self, x, y, return_cache=False):
        feats = np.concatenate([as_matrix(x), one_hot(y, self.n_classes)], axis=1)
        cache = self.z_net.forward(feats)
        out = cache["out"][:, 0]
        return (out, cache) if return_cache else out

    def log_flow(self, t, h_unmasked, y_onehot, prev_masks):
        """Log state flow of ``s_t`` (masks for layers 1..t), t = 0..L-1."""
        net = self.flow_nets[t]
        feats = self._features(t + 1, h_unmasked, y_onehot, prev_masks, True)
        cache = net.forward(feats)
        return cache["out"][:, 0], (net, cache)

    def copy(self):
        other = object.__new__(PolicyBundle)
        other.__dict__.update(self.__dict__)
        other.q_nets = [n.copy() for n in self.q_nets]
        other.p_nets = [n.copy() for n in self.p_nets]
        other.flow_nets = [n.copy() for n in self.flow_nets]
        other.z_net = self.z_net.copy()
        return other


class IdPolicy:
    """Sample-independent mask distribution q(z; phi') with scalar log Z.

    Each hidden unit has a free logit; the prior keeps every unit with
    probability ``prior_rate``.
    """

    def __init__(self, layer_dims, temperature=2.0, epsilon=0.1, prior_rate=0.5):
        layer_dims = [int(d) for d in layer_dims]
        self.layer_dims = tuple(layer_dims)
        self.mask_dims = tuple(layer_dims[1:-1])
        self.n_classes = layer_dims[-1]
        self.temperature = float(temperature)
        self.epsilon = float(epsilon)
        self.prior_rate = float(prior_rate)
        self.params = {f"q{l}.logits": np.zeros(d) for l, d in enumerate(self.mask_dims, start=1)}
        self.params["z.gamma"] = np.zeros(1)

    @property
    def n_layers(self):
        return len(self.mask_dims)

    def groups(self):
        policy = {k: v for k, v in self.params.items() if k.startswith("q")}
        return {"policy": policy, "prior": {}, "partition": {"z.gamma": self.params["z.gamma"]}}

    def parameters(self):
        return dict(self.params)

    def layer_logits(self, l, batch):
        return np.broadcast_to(self.params[f"q{l}.logits"], (batch, self.mask_dims[l - 1]))

    def layer_probs(self, l, h_unmasked=None, y=None, prev_masks=(), which=None):
        batch = 1 if h_unmasked is None else as_matrix(h_unmasked).shape[0]
        return clamp_prob(sigmoid(clamp_logit(self.layer_logits(l, batch))))

    def log_partition(self, x, y=None):
        return np.full(as_matrix(x).shape[0], self.params["z.gamma"][0])

    def log_prior(self, masks):
        r = self.prior_rate
        total = 0.0
        for z in masks:
            total = total + np.sum(z * np.log(r) + (1.0 - z) * np.log1p(-r), axis=1)
        return total

    def copy(self):
        other = object.__new__(IdPolicy)
        other.__dict__.update(self.__dict__)
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other


@dataclass
class MaskTrajectory:
    masks: list
    log_q: np.ndarray  # untempered, None when no label was available
    log_p_prior: np.ndarray
    sampled_mode: str
    trace: object = None


def _sample_layer(probs, tempered, temperature, epsilon, rng):
    if tempered:
        probs = temper(probs, temperature)
    z = bernoulli_vector(probs, rng)
    if tempered and epsilon > 0:
        explore = rng.uniform(probs.shape[0]) < epsilon
        coin = bernoulli_vector(np.full(probs.shape, 0.5), rng)
        z = np.where(explore[:, None], coin, z)
    return z


def sample_trajectory(policy, backbone, x, y, mode, rng, temperature=None, epsilon=None):
    """Sample one mask set per row of ``x`` and run the backbone under it.

    ``tempered-train`` draws from the tempered posterior mixed with whole-layer
    fair-coin masks (probability ``epsilon``); the recorded ``log_q`` and
    ``log_p_prior`` are always the untempered policy log-probabilities.
    """
    if mode not in MODES:
        raise ValueError(f"unknown sampling mode {mode!r}")
    x = as_matrix(x)
    batch = x.shape[0]
    temperature = policy.temperature if temperature is None else temperature
    epsilon = policy.epsilon if epsilon is None else epsilon
    tempered = mode == "tempered-train"

    if isinstance(policy, IdPolicy):
        if mode not in ("id", "tempered-train"):
            raise ValueError(f"mode {mode!r} is not available for the sample-independent policy")
        masks, log_q = [], np.zeros(batch)
        for l in range(1, policy.n_layers + 1):
            a = policy.layer_logits(l, batch)
            z = _sample_layer(clamp_prob(sigmoid(clamp_logit(a))), tempered, temperature, epsilon, rng)
            log_q = log_q + bernoulli_log_prob(z, a).sum(axis=1)
            masks.append(z)
        trace = backbone.forward(x, masks)
        return MaskTrajectory(masks, log_q, policy.log_prior(masks), mode, trace)

    if mode == "id":
        raise ValueError("mode 'id' needs a sample-independent policy")
    needs_label = mode in ("tempered-train", "posterior")
    if needs_label and y is None:
        raise ValueError(f"mode {mode!r} needs labels")
    yo = None if y is None else one_hot(y, policy.n_classes)
    if yo is not None and yo.shape[0] != batch:
        raise ShapeError("labels do not match the batch")

    h = x
    masks = []
    log_q = np.zeros(batch) if yo is not None else None
    log_p = np.zeros(batch)
    for l in range(1, policy.n_layers + 1):
        hp = backbone.hidden_pre_mask(l, h)
        a_p, _ = policy.layer_logits(l, hp, None, masks, "p")
        if yo is not None:
            a_q, _ = policy.layer_logits(l, hp, yo, masks, "q")
        a_s = a_p if mode == "prior" else a_q
        z = _sample_layer(clamp_prob(sigmoid(clamp_logit(a_s))), tempered, temperature, epsilon, rng)
        if yo is not None:
            log_q = log_q + bernoulli_log_prob(z, a_q).sum(axis=1)
        log_p = log_p + bernoulli_log_prob(z, a_p).sum(axis=1)
        masks.append(z)
        h = z * hp
    trace = backbone.forward(x, masks)
    return MaskTrajectory(masks, log_q, log_p, mode, trace)


def replay(policy, backbone, x, y, masks, which="q"):
    """Per-sample log-probability of ``masks`` plus the per-layer records for backprop."""
    x = as_matrix(x)
    batch = x.shape[0]
    masks = [np.asarray(m, dtype=np.float64) for m in masks]
    if len(masks) != policy.n_layers:
        raise ShapeError(f"expected {policy.n_layers} masks, got {len(masks)}")
    for z, d in zip(masks, policy.mask_dims):
        if z.shape != (batch, d):
            raise ShapeError(f"mask shape {z.shape} != {(batch, d)}")
    records = []
    total = np.zeros(batch)
    if isinstance(policy, IdPolicy):
        for l, z in enumerate(masks, start=1):
            a = policy.layer_logits(l, batch)
            total = total + bernoulli_log_prob(z, a).sum(axis=1)
            records.append((l, None, None, z, a))
        return total, records
    yo = None if which == "p" else one_hot(y, policy.n_classes)
    h = x
    for l, z in enumerate(masks, start=1):
        hp = backbone.hidden_pre_mask(l, h)
        a, (net, cache) = policy.layer_logits(l, hp, yo, masks[: l - 1], which)
        total = total + bernoulli_log_prob(z, a).sum(axis=1)
        records.append((l, net, cache, z, a))
        h = z * hp
    return total, records


def log_prob_of_masks(policy, backbone, x, y, masks, which="q"):
    return replay(policy, backbone, x, y, masks, which)[0]


def log_prob_grads(policy, records, weights, prefix):
    """Gradient of ``sum_i weights_i * log pi(z_i)`` w.r.t. the generator parameters."""
    grads = {}
    w = np.asarray(weights, dtype=np.float64)[:, None]
    for l, net, cache, z, a in records:
        dlogits = w * _logit_grad(z, a)
        if net is None:
            grads[f"{prefix}{l}.logits"] = dlogits.sum(axis=0)
            continue
        g, _ = net.backward(cache, dlogits)
        for k, v in g.items():
            grads[f"{prefix}{l}.{k}"] = v
    return grads


class FixedPrior:
    """Independent Bernoulli(rate) keep-prior shared by every unit."""

    def __init__(self, rate=0.5):
        if not 0.0 < rate < 1.0:
            raise ValueError("prior rate must lie in (0, 1)")
        self.rate = float(rate)

    def log_prob(self, masks):
        r = self.rate
        total = 0.0
        for z in masks:
            z = np.asarray(z, dtype=np.float64)
            total = total + np.sum(z * np.log(r) + (1.0 - z) * np.log1p(-r), axis=1)
        return np.asarray(total, dtype=np.float64)


def prior_log_prob(prior, backbone, x, masks):
    """``log p(z | x)`` under either the learned prior nets or a fixed prior."""
    if isinstance(prior, PolicyBundle):
        return log_prob_of_masks(prior, backbone, x, None, masks, which="p")
    if isinstance(prior, IdPolicy):
        return prior.log_prior(masks)
    return prior.log_prob(masks)
