"""Exhaustive enumeration of small mask spaces and finite-difference checks.

Masks are enumerated by binary counting over the flattened unit vector in
layer-major order: unit 0 of layer 1 is the most significant bit, the last
unit of the last hidden layer the least significant.  Index ``k`` of every
distribution returned here refers to that ordering.
"""

from dataclasses import dataclass

import numpy as np

from .metrics import tv_distance
from .numeric import as_matrix, log_sum_exp, logit, sigmoid, clamp_logit
from .objectives import RewardConfig, TbTerms, reward_log, tb_loss
from .policies import IdPolicy, log_prob_of_masks, temper

MAX_UNITS = 20


class EnumerationGuardError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class MaskSpace:
    def __init__(self, mask_dims, cap=MAX_UNITS):
        self.mask_dims = tuple(int(d) for d in mask_dims)
        self.n_units = sum(self.mask_dims)
        if self.n_units > cap:
            raise EnumerationGuardError(f"{self.n_units} maskable units exceed the cap of {cap}")

    @property
    def size(self):
        return 2 ** self.n_units

    def flat(self):
        """``(2^M, M)`` 0/1 matrix, row k = binary digits of k (MSB first)."""
        m = self.n_units
        k = np.arange(self.size)[:, None]
        return ((k >> np.arange(m - 1, -1, -1)) & 1).astype(np.float64)

    def layers(self, flat=None):
        flat = self.flat() if flat is None else flat
        cuts = np.cumsum(self.mask_dims)[:-1]
        return np.split(flat, cuts, axis=1)

    def index(self, masks):
        flat = np.concatenate([np.asarray(z) for z in masks], axis=1).astype(np.int64)
        weights = 1 << np.arange(self.n_units - 1, -1, -1)
        return flat @ weights


def _tile(x, y, n):
    x = as_matrix(x)
    if x.shape[0] != 1:
        raise ValueError("enumeration works on one probe at a time")
    ys = None if y is None else np.full(n, int(np.asarray(y).reshape(-1)[0]))
    return np.repeat(x, n, axis=0), ys


def exact_log_rewards(backbone, prior, x, y, cfg=None, augmented=None):
    space = MaskSpace(backbone.mask_dims)
    xs, ys = _tile(x, y, space.size)
    aug = None if augmented is None else [np.repeat(as_matrix(a), space.size, axis=0) for a in augmented]
    return reward_log(backbone, prior, xs, ys, space.layers(), cfg or RewardConfig(), aug)


def exact_target(backbone, prior, x, y, cfg=None, augmented=None):
    """Distribution proportional to R over all masks, and ``log sum_z R(z)``."""
    log_r = exact_log_rewards(backbone, prior, x, y, cfg, augmented)
    log_z = log_sum_exp(log_r)
    return np.exp(log_r - log_z), log_z


def policy_terminal_distribution(policy, backbone, x, y=None, mode="posterior"):
    """Exact probability of every mask under the policy (no sampling).

    ``tempered-train`` returns the behaviour distribution actually used to
    draw training trajectories, including the fair-coin exploration mix.
    """
    space = MaskSpace(backbone.mask_dims)
    xs, ys = _tile(x, y, space.size)
    masks = space.layers()
    if mode == "tempered-train":
        return np.exp(_behaviour_log_prob(policy, backbone, xs, ys, masks))
    if isinstance(policy, IdPolicy) or mode == "id":
        which = "q"
    elif mode == "prior":
        which = "p"
    elif mode == "posterior":
        which = "q"
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return np.exp(log_prob_of_masks(policy, backbone, xs, ys, masks, which))


def _behaviour_log_prob(policy, backbone, x, y, masks):
    from .policies import one_hot

    total = np.zeros(x.shape[0])
    h = x
    yo = None if y is None else one_hot(y, policy.n_classes)
    for l, z in enumerate(masks, start=1):
        if isinstance(policy, IdPolicy):
            a = policy.layer_logits(l, x.shape[0])
            hp = None
        else:
            hp = backbone.hidden_pre_mask(l, h)
            a, _ = policy.layer_logits(l, hp, yo, masks[: l - 1], "q")
        p = temper(sigmoid(clamp_logit(a)), policy.temperature)
        lp = np.sum(z * np.log(p) + (1 - z) * np.log1p(-p), axis=1)
        d = z.shape[1]
        eps = policy.epsilon
        if eps > 0:
            lp = np.logaddexp(np.log1p(-eps) + lp if eps < 1 else -np.inf, np.log(eps) - d * np.log(2.0))
        total += lp
        if hp is not None:
            h = z * hp
    return total


def tv_to_target(policy, backbone, prior, x, y, cfg=None, mode="posterior"):
    """Per-probe TV distance between the policy and the exact target."""
    x = as_matrix(x)
    y = np.asarray(y).reshape(-1)
    out = []
    for i in range(x.shape[0]):
        target, _ = exact_target(backbone, prior, x[i:i + 1], y[i:i + 1], cfg)
        pol = policy_terminal_distribution(policy, backbone, x[i:i + 1], y[i:i + 1], mode)
        out.append(tv_distance(pol, target))
    return np.array(out)


def log_partition_errors(policy, backbone, prior, x, y, cfg=None):
    """``|log Z_learned - log sum R| / |log sum R|`` per probe."""
    x = as_matrix(x)
    y = np.asarray(y).reshape(-1)
    learned = policy.log_partition(x, y)
    exact = np.array([exact_target(backbone, prior, x[i:i + 1], y[i:i + 1], cfg)[1]
                      for i in range(x.shape[0])])
    return np.abs(learned - exact) / np.abs(exact), learned, exact


def conditional_logits(log_target, space):
    """Per-layer, per-prefix logits of P(z_u = 1 | masks of earlier layers).

    Returns one ``(2^P_l, d_l)`` array per layer, P_l = units before layer l,
    rows indexed by the prefix in binary-counting order.
    """
    m = space.n_units
    lt = np.asarray(log_target).reshape((2,) * m)
    out = []
    start = 0
    for d in space.mask_dims:
        # marginalise the units after this layer
        later = tuple(range(start + d, m))
        marg = np.logaddexp.reduce(lt, axis=later) if later else lt
        marg = marg.reshape(2 ** start, *(2,) * d)
        logits = np.empty((2 ** start, d))
        for u in range(d):
            others = tuple(1 + v for v in range(d) if v != u)
            mu = np.logaddexp.reduce(marg, axis=others) if others else marg
            logits[:, u] = mu[:, 1] - mu[:, 0]
        out.append(logits)
        start += d
    return out


def solve_policy(bundle, backbone, prior, x, y, cfg=None):
    """Set the q-nets so each layer emits the target's conditionals for one probe.

    The first hidden layer of every q-net becomes a bank of prefix detectors
    (unit k fires with value 1 exactly when the earlier masks equal the
    binary digits of k), the second hidden layer copies it, and the output
    layer holds the conditional logits.  ``log Z`` is set to ``log sum R``.
    The conditionals are exact when each layer's target conditional factorises
    over its units, which always holds for single-unit layers.
    """
    space = MaskSpace(backbone.mask_dims)
    target, log_z = exact_target(backbone, prior, x, y, cfg)
    cond = conditional_logits(np.log(target), space)
    k = bundle.n_classes
    for l, logits in enumerate(cond, start=1):
        net = bundle.q_nets[l - 1]
        d = bundle.mask_dims[l - 1]
        prefix_w = bundle.prev_width(l)
        n_pat = 2 ** prefix_w
        width = net.sizes[1]
        if n_pat > width or net.sizes[2] < n_pat:
            raise EnumerationGuardError(f"layer {l} needs {n_pat} hidden units, net has {width}")
        w1 = np.zeros_like(net.params["w1"])
        b1 = np.zeros_like(net.params["b1"])
        pats = MaskSpace([prefix_w]).flat() if prefix_w else np.zeros((1, 0))
        off = d + k
        for p, bits in enumerate(pats):
            w1[p, off:off + prefix_w] = 2 * bits - 1
            b1[p] = 1.0 - bits.sum()
        w2 = np.zeros_like(net.params["w2"])
        w2[np.arange(n_pat), np.arange(n_pat)] = 1.0
        w3 = np.zeros_like(net.params["w3"])
        w3[:, :n_pat] = logits.T
        net.params["w1"][...] = w1
        net.params["b1"][...] = b1
        net.params["w2"][...] = w2
        net.params["b2"][...] = 0.0
        net.params["w3"][...] = w3
        net.params["b3"][...] = 0.0
    zn = bundle.z_net
    for name in zn.params:
        zn.params[name][...] = 0.0
    zn.params[f"b{zn.n_layers}"][...] = log_z
    return bundle


def tb_losses_all_masks(policy, backbone, prior, x, y, cfg=None):
    """TB loss of every terminal mask for one probe (one shared log Z)."""
    space = MaskSpace(backbone.mask_dims)
    xs, ys = _tile(x, y, space.size)
    masks = space.layers()
    log_q = log_prob_of_masks(policy, backbone, xs, ys, masks, "q")
    log_r = reward_log(backbone, prior, xs, ys, masks, cfg or RewardConfig())
    return tb_loss(TbTerms(policy.log_partition(xs, ys), log_q, log_r))


@dataclass
class GradcheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    n_checked: int
    per_param: dict
    n_kinks: int = 0

    def passed(self, tol=1e-4):
        return self.max_rel_error < tol


def relative_error(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


KINK_SCREEN = 1e-5


def _central(loss_fn, p, idx, h, base):
    old = p[idx]
    p[idx] = old + h
    up = loss_fn()
    p[idx] = old - h
    down = loss_fn()
    p[idx] = old
    return (up - down) / (2 * h), (base - down) / h, (up - base) / h


def _kinked(left, right):
    # smooth losses give one-sided slopes that differ by O(h); a kink gives O(1)
    return abs(right - left) > 1e-2 * max(abs(left), abs(right), 1e-8)


def finite_diff_gradcheck(loss_fn, params, grads, h=1e-5, names=None):
    """Compare analytic ``grads`` with central differences of ``loss_fn()``.

    ``params`` maps names to arrays that ``loss_fn`` reads in place; each
    scalar is perturbed by +-h and restored.  ``loss_fn`` must be
    deterministic, so any sampling has to happen before the check.

    A ReLU kink within ``h`` of the current point makes the two one-sided
    slopes disagree and the central difference meaningless.  Entries that
    fail and show that signature are measured again with step ``h / 100``
    and counted in ``n_kinks``; a wrong gradient still fails at that step.
    """
    base = loss_fn()
    if loss_fn() != base:
        raise ContractError("loss is not deterministic under a frozen seed")
    worst = (0.0, None, None)
    per, count, kinks = {}, 0, 0
    for name in names or sorted(params):
        p = params[name]
        g = np.asarray(grads.get(name, np.zeros_like(p)), dtype=np.float64)
        if g.shape != p.shape:
            raise ContractError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        fd = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            fd[idx], left, right = _central(loss_fn, p, idx, h, base)
            if relative_error(g[idx], fd[idx]) >= KINK_SCREEN and _kinked(left, right):
                fd[idx] = _central(loss_fn, p, idx, h / 100, base)[0]
                kinks += 1
        err = relative_error(g, fd)
        count += p.size
        if p.size:
            i = np.unravel_index(np.argmax(err), err.shape)
            per[name] = float(err[i])
            if err[i] > worst[0] or worst[1] is None:
                worst = (float(err[i]), name, tuple(int(v) for v in i))
    return GradcheckReport(worst[0], worst[1], worst[2], count, per, kinks)
