"""Posterior-predictive averaging over sampled masks and uncertainty scores."""

from dataclasses import dataclass

import numpy as np

from .numeric import as_matrix, bernoulli_vector, stable_softmax
from .policies import IdPolicy, sample_trajectory

DEFAULT_SAMPLES = 20
EVIDENCE_CLIP = 30.0


@dataclass
class PredictiveResult:
    mean_probs: np.ndarray
    mean_logits: np.ndarray
    per_pass_probs: np.ndarray  # (M, batch, K)
    per_pass_logits: np.ndarray
    n_samples: int


def sample_inference_masks(backbone, policy, x, method, rng, dropout_rate=0.5):
    x = as_matrix(x)
    if method == "gflowout":
        return sample_trajectory(policy, backbone, x, None, "prior", rng).masks
    if method == "id-gflowout":
        if not isinstance(policy, IdPolicy):
            raise ValueError("id-gflowout needs a sample-independent policy")
        return sample_trajectory(policy, backbone, x, None, "id", rng).masks
    if method == "mc-dropout":
        keep = 1.0 - dropout_rate
        return [bernoulli_vector(np.full((x.shape[0], d), keep), rng) for d in backbone.mask_dims]
    if method in ("none", "random-dropout"):
        return backbone.ones_masks(x.shape[0])
    raise ValueError(f"unknown method {method!r}")


def is_stochastic(method):
    return method in ("gflowout", "id-gflowout", "mc-dropout")


def predictive(backbone, policy, x, n_samples=DEFAULT_SAMPLES, method="gflowout", rng=None,
               dropout_rate=0.5):
    """Uniform mixture of the backbone outputs over ``n_samples`` mask draws.

    Deterministic methods run a single all-ones pass whatever ``n_samples`` is.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    x = as_matrix(x)
    passes = n_samples if is_stochastic(method) else 1
    logits = []
    for _ in range(passes):
        masks = sample_inference_masks(backbone, policy, x, method, rng, dropout_rate)
        logits.append(backbone.predict_logits(x, masks))
    logits = np.stack(logits)
    probs = stable_softmax(logits)
    return PredictiveResult(probs.mean(axis=0), logits.mean(axis=0), probs, logits, passes)


def ds_uncertainty(logits, n_classes=None):
    """Dempster-Shafer vacuity ``K / sum_k (exp(logit_k) + 1)``.

    Logits are clipped at 30 before exponentiation.
    """
    logits = np.asarray(logits, dtype=np.float64)
    k = logits.shape[-1] if n_classes is None else n_classes
    if k < 2:
        raise ValueError("need at least two classes")
    evidence = np.exp(np.minimum(logits, EVIDENCE_CLIP))
    return k / np.sum(evidence + 1.0, axis=-1)


def predictive_entropy(probs):
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=-1)


def uncertainty(result, metric="ds", per_pass=False):
    if metric == "ds":
        if per_pass:
            return ds_uncertainty(result.per_pass_logits).mean(axis=0)
        return ds_uncertainty(result.mean_logits)
    if metric == "entropy":
        return predictive_entropy(result.mean_probs)
    raise ValueError(f"unknown uncertainty metric {metric!r}")


def ood_scores(backbone, policy, x_in, x_ood, n_samples=DEFAULT_SAMPLES, metric="ds",
               method="gflowout", rng=None, per_pass=False, dropout_rate=0.5):
    """Uncertainty scores for both sets and origin labels (1 = OOD)."""
    x_in, x_ood = as_matrix(x_in), as_matrix(x_ood)
    if x_in.shape[0] == 0 or x_ood.shape[0] == 0:
        raise ValueError("both sets must be non-empty")
    s_in = uncertainty(predictive(backbone, policy, x_in, n_samples, method, rng, dropout_rate),
                       metric, per_pass)
    s_out = uncertainty(predictive(backbone, policy, x_ood, n_samples, method, rng, dropout_rate),
                        metric, per_pass)
    scores = np.r_[s_in, s_out]
    labels = np.r_[np.zeros(s_in.size, np.int64), np.ones(s_out.size, np.int64)]
    return scores, labels
