"""Alternating optimisation of the backbone, the mask policies and the prior.

One step samples masks once, then updates, in order,

1. theta with the masked cross-entropy,
2. (phi, gamma) with the trajectory-balance (or detailed-balance) loss,
   the reward being computed with theta and xi held fixed,
3. xi by maximising ``log p(z | x; xi)`` of the sampled masks.

Each update only touches its own parameter group.  The N/B factor of the
stochastic ELBO gradient is absorbed into ``lr_backbone``.
"""

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .backbone import BackboneNet
from .data import apply_deformation, Deformation
from .inference import predictive
from .metrics import accuracy
from .numeric import NumericError, SeededRng, bernoulli_vector
from .objectives import (RewardConfig, backbone_objective, db_objective, id_reward_log,
                         prior_objective, reward_log, tb_objective)
from .policies import IdPolicy, PolicyBundle, sample_trajectory

log = logging.getLogger(__name__)

METHODS = ("gflowout", "id-gflowout", "random-dropout", "mc-dropout", "none")


class ConfigError(ValueError):
    pass


class NumericAbort(RuntimeError):
    def __init__(self, term, detail=""):
        super().__init__(f"non-finite value in {term}" + (f": {detail}" if detail else ""))
        self.term = term


@dataclass
class TrainRunConfig:
    method: str = "gflowout"
    objective: str = "tb"
    epochs: int = 50
    batch_size: int = 32
    hidden: tuple = (32, 32)
    lr_backbone: float = 1e-3
    lr_policy: float = 1e-3
    lr_partition: float = None  # 10 x lr_policy when unset
    lr_prior: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    temperature: float = 2.0
    epsilon: float = 0.1
    beta: float = 1.0
    reward_source: str = "train"
    augment_sigma: float = 0.1
    augment_count: int = 1
    dropout_rate: float = 0.5
    patience: int = 10
    M_inference: int = 20
    db_delta: float = 1e-8
    lr_schedule: str = "constant"  # or "linear": decay every rate to 0 over the run
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.objective not in ("tb", "db"):
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.objective == "db" and self.method != "gflowout":
            raise ConfigError("the DB objective is only available for gflowout")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1]")
        if self.batch_size < 1 or self.epochs < 1 or self.M_inference < 1:
            raise ConfigError("batch_size, epochs and M_inference must be positive")
        if self.lr_schedule not in ("constant", "linear"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.patience < 0:
            raise ConfigError("patience must be non-negative")
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.lr_partition is None:
            self.lr_partition = 10.0 * self.lr_policy

    def reward(self):
        augs = [Deformation("gaussian-noise", self.augment_sigma, i) for i in range(self.augment_count)]
        return RewardConfig(self.beta, self.reward_source,
                            augs if self.reward_source == "augmented-validation" else [])


class Adam:
    """Adam with one learning rate per parameter group.

    ``groups`` maps a group name to ``(params, lr)`` where ``params`` maps
    parameter names to arrays updated in place.
    """

    def __init__(self, groups, beta1=0.9, beta2=0.999, eps=1e-8):
        self.groups = groups
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, {}
        self.lr_scale = 1.0

    def step(self, group, grads, ascend=False):
        params, lr = self.groups[group]
        lr = lr * self.lr_scale
        for name, g in grads.items():
            if name not in params:
                raise KeyError(f"{name} is not in group {group!r}")
            g = -g if ascend else g
            key = (group, name)
            if key not in self.m:
                self.m[key] = np.zeros_like(g)
                self.v[key] = np.zeros_like(g)
                self.t[key] = 0
            self.t[key] += 1
            t = self.t[key]
            self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * g * g
            mhat = self.m[key] / (1 - self.beta1 ** t)
            vhat = self.v[key] / (1 - self.beta2 ** t)
            params[name] -= lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainState:
    config: TrainRunConfig
    backbone: BackboneNet
    policy: object
    optimizer: Adam
    rng: SeededRng
    n_data: int
    steps: int = 0

    def snapshot(self):
        return (self.backbone.copy(), None if self.policy is None else self.policy.copy())


def build_state(config, layer_dims, n_data, backbone=None, policy=None):
    rng = SeededRng(config.seed)
    init_rng, run_rng = rng.spawn(2)
    backbone = backbone or BackboneNet(layer_dims, init_rng)
    if policy is None:
        if config.method == "gflowout":
            policy = PolicyBundle(backbone.layer_dims, init_rng, temperature=config.temperature,
                                  epsilon=config.epsilon, with_flows=config.objective == "db")
        elif config.method == "id-gflowout":
            policy = IdPolicy(backbone.layer_dims, config.temperature, config.epsilon)
    groups = {"backbone": (backbone.params, config.lr_backbone)}
    if policy is not None:
        pg = policy.groups()
        groups["policy"] = (pg["policy"], config.lr_policy)
        groups["partition"] = (pg["partition"], config.lr_partition)
        groups["prior"] = (pg["prior"], config.lr_prior)
    opt = Adam(groups, config.adam_beta1, config.adam_beta2, config.adam_eps)
    return TrainState(config, backbone, policy, opt, run_rng, n_data)


def baseline_mask_source(method, rate, rng, mask_dims, batch, train=True):
    """Masks of the non-learned baselines; ``rate`` is the drop probability."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("dropout rate must lie in [0, 1]")
    ones = [np.ones((batch, d)) for d in mask_dims]
    if method == "none" or rate == 0.0 or (method == "random-dropout" and not train):
        return ones
    if method in ("random-dropout", "mc-dropout"):
        return [bernoulli_vector(np.full((batch, d), 1.0 - rate), rng) for d in mask_dims]
    raise ValueError(f"{method!r} is not a baseline method")


def _split_groups(state, grads):
    groups = {}
    for name, g in grads.items():
        for gname in ("policy", "partition", "prior"):
            if name in state.optimizer.groups[gname][0]:
                groups.setdefault(gname, {})[name] = g
                break
        else:
            raise KeyError(f"gradient {name} belongs to no policy group")
    return groups


def sample_masks(state, x, y):
    cfg = state.config
    if cfg.method in ("gflowout", "id-gflowout"):
        return sample_trajectory(state.policy, state.backbone, x, y, "tempered-train", state.rng)
    return baseline_mask_source(cfg.method, cfg.dropout_rate, state.rng,
                                state.backbone.mask_dims, x.shape[0], train=True)


def backbone_update(state, x, y, masks):
    ce, grads = backbone_objective(state.backbone, x, y, masks)
    _check(ce, "backbone cross-entropy")
    state.optimizer.step("backbone", grads)
    return ce


def policy_update(state, x, y, masks, augmented=None):
    """One (phi, gamma) step; theta and xi are read but never written."""
    cfg = state.config
    try:
        if isinstance(state.policy, IdPolicy):
            log_r = id_reward_log(state.backbone, x, y, masks, state.n_data, state.policy.prior_rate)
        else:
            log_r = reward_log(state.backbone, state.policy, x, y, masks, cfg.reward(), augmented)
        if cfg.objective == "db":
            loss, grads = db_objective(state.policy, state.backbone, x, y, masks, log_r, cfg.db_delta)
            log_z = state.policy.log_partition(x, y)
        else:
            loss, grads, terms = tb_objective(state.policy, state.backbone, x, y, masks, log_r)
            log_z = terms.log_Z
    except NumericError as exc:
        raise NumericAbort("policy loss", str(exc)) from exc
    _check(loss, f"{cfg.objective.upper()} loss")
    for gname, g in _split_groups(state, grads).items():
        state.optimizer.step(gname, g)
    return loss, float(np.mean(np.abs(log_z)))


def prior_update(state, x, masks):
    obj, grads = prior_objective(state.policy, state.backbone, x, masks)
    _check(obj, "prior objective")
    state.optimizer.step("prior", grads, ascend=True)
    return obj


def _check(v, term):
    if not np.isfinite(v):
        raise NumericAbort(term, repr(v))


def _augment(x, cfg, rng):
    return [x + rng.normal(x.shape, scale=cfg.augment_sigma) for _ in range(cfg.augment_count)]


def train_step(state, x, y, validation=None):
    """One alternating update on the batch ``(x, y)``; returns step metrics."""
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    cfg = state.config
    sampled = sample_masks(state, x, y)
    masks = sampled.masks if hasattr(sampled, "masks") else sampled
    metrics = {"train_ce": backbone_update(state, x, y, masks),
               "tb_loss": float("nan"), "abs_log_z": float("nan"),
               "zero_mask_freq": float(np.mean([np.all(z == 0, axis=1).mean() for z in masks]))}
    if state.policy is not None:
        px, py, pmasks, aug = x, y, masks, None
        if cfg.reward_source != "train" and isinstance(state.policy, PolicyBundle):
            if validation is None:
                raise ConfigError(f"reward source {cfg.reward_source!r} needs validation data")
            idx = state.rng.choice(len(validation), min(cfg.batch_size, len(validation)))
            px, py = validation.x[idx], validation.y[idx]
            pmasks = sample_trajectory(state.policy, state.backbone, px, py, "tempered-train",
                                       state.rng).masks
            if cfg.reward_source == "augmented-validation":
                aug = _augment(px, cfg, state.rng)
        metrics["tb_loss"], metrics["abs_log_z"] = policy_update(state, px, py, pmasks, aug)
        if isinstance(state.policy, PolicyBundle):
            metrics["prior_obj"] = prior_update(state, x, masks)
    state.steps += 1
    return metrics


def evaluate(state, dataset, n_samples=None, rng=None):
    """Posterior-predictive accuracy and cross-entropy on a dataset."""
    cfg = state.config
    n_samples = n_samples or cfg.M_inference
    res = predictive(state.backbone, state.policy, dataset.x, n_samples, cfg.method, rng,
                     cfg.dropout_rate)
    p = np.clip(res.mean_probs[np.arange(len(dataset)), dataset.y], 1e-300, None)
    return accuracy(res.mean_probs, dataset.y), float(-np.mean(np.log(p)))


HISTORY_COLUMNS = ("epoch", "train_ce", "val_ce", "val_acc", "mean_tb_loss", "mean_abs_logZ",
                   "zero_mask_freq")


@dataclass
class FitResult:
    state: TrainState
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_acc: float = float("-inf")


def fit(config, train, validation, state=None, epochs=None):
    """Epoch loop with seeded shuffling and early stopping on validation accuracy.

    An epoch improves when its validation accuracy is higher than the best
    so far, or equal with a lower validation cross-entropy.  Training stops
    once ``patience + 1`` consecutive epochs fail to improve; the returned
    state holds the best snapshot.
    """
    if train is None or validation is None or len(train) == 0 or len(validation) == 0:
        raise ConfigError("train and validation data must be non-empty")
    if state is None:
        dims = (train.x.shape[1], *config.hidden, train.n_classes)
        state = build_state(config, dims, len(train))
    epochs = epochs or config.epochs
    eval_rng = SeededRng(config.seed).spawn(3)[2]
    result = FitResult(state)
    best = state.snapshot()
    best_ce = float("inf")
    stale = 0
    per_epoch = -(-len(train) // config.batch_size)
    total = per_epoch * epochs
    for epoch in range(1, epochs + 1):
        perm = state.rng.permutation(len(train))
        rows = []
        for b, start in enumerate(range(0, len(train), config.batch_size)):
            if config.lr_schedule == "linear":
                state.optimizer.lr_scale = 1.0 - ((epoch - 1) * per_epoch + b) / total
            idx = perm[start:start + config.batch_size]
            rows.append(train_step(state, train.x[idx], train.y[idx], validation))
        val_acc, val_ce = evaluate(state, validation, rng=eval_rng)
        result.history.append({
            "epoch": epoch,
            "train_ce": float(np.mean([r["train_ce"] for r in rows])),
            "val_ce": val_ce,
            "val_acc": val_acc,
            "mean_tb_loss": float(np.mean([r["tb_loss"] for r in rows])),
            "mean_abs_logZ": float(np.mean([r["abs_log_z"] for r in rows])),
            "zero_mask_freq": float(np.mean([r["zero_mask_freq"] for r in rows])),
        })
        log.debug("epoch %d val_acc %.4f", epoch, val_acc)
        if val_acc > result.best_val_acc or (val_acc == result.best_val_acc and val_ce < best_ce):
            result.best_val_acc, result.best_epoch, best_ce = val_acc, epoch, val_ce
            best = state.snapshot()
            stale = 0
        else:
            stale += 1
            if stale > config.patience:
                break
    _restore(state, best)
    return result


def _restore(state, snap):
    backbone, policy = snap
    for k, v in backbone.params.items():
        state.backbone.params[k][...] = v
    if policy is not None:
        cur = state.policy.parameters()
        for k, v in policy.parameters().items():
            cur[k][...] = v


def _row_keys(x):
    return {np.ascontiguousarray(r).tobytes() for r in np.asarray(x, dtype=np.float64)}


def adaptation_protocol(config, noisy_train, validation, clean_pool, test, sizes,
                        finetune_epochs=20):
    """Train on noisy labels, then fine-tune the best snapshot on nested clean subsets.

    Returns ``{size: test accuracy}``; size 0 reports the noisy model itself.
    """
    if _row_keys(noisy_train.x) & _row_keys(clean_pool.x):
        raise ConfigError("clean subsets overlap the noisy training data")
    if max(sizes) > len(clean_pool):
        raise ConfigError("subset size exceeds the clean pool")
    base = fit(config, noisy_train, validation).state
    table = {}
    for size in sorted(sizes):
        if size == 0:
            table[0] = evaluate(base, test, rng=SeededRng(config.seed + 1))[0]
            continue
        backbone, policy = base.snapshot()
        cfg = replace(config, patience=finetune_epochs)
        state = build_state(cfg, backbone.layer_dims, size, backbone=backbone, policy=policy)
        clean = clean_pool.subset(np.arange(size))
        fitted = fit(cfg, clean, validation, state=state, epochs=finetune_epochs).state
        table[size] = evaluate(fitted, test, rng=SeededRng(config.seed + 1))[0]
    return table


def config_dict(config):
    d = asdict(config)
    d["hidden"] = list(d["hidden"])
    return d
