"""Dense float64 primitives, seeded RNG and log-domain helpers.

Every numeric value in the package is a float64 numpy array.  The random
generator is numpy's PCG64 (O'Neill 2014), which produces the same stream
for the same seed on every platform numpy supports.
"""

import numpy as np

PROB_EPS = 1e-6
# logit(1 - PROB_EPS); clamping a logit to +-LOGIT_CLIP is the same as
# clamping the probability to [PROB_EPS, 1 - PROB_EPS].
LOGIT_CLIP = float(np.log((1.0 - PROB_EPS) / PROB_EPS))


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


def as_matrix(a):
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def check_finite(a, what="value"):
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite entries in {what}")
    return a


def matmul(a, b):
    """Matrix product with a shape check and a finiteness check on the result."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    return check_finite(out, "matmul result")


def log_sum_exp(v, axis=None):
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    m = np.max(v, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    out = m_safe + np.log(np.sum(np.exp(v - m_safe), axis=axis, keepdims=True))
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def stable_softmax(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(v - np.max(v, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    shifted = v - np.max(v, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def sigmoid(a):
    a = np.asarray(a, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -a))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def clamp_prob(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def clamp_logit(a):
    return np.clip(a, -LOGIT_CLIP, LOGIT_CLIP)


def bernoulli_log_prob(z, a):
    """Elementwise log-probability of binary ``z`` under logits ``a`` (clamped)."""
    a = clamp_logit(a)
    # log p = -softplus(-a), log (1-p) = -softplus(a)
    return -(z * np.logaddexp(0.0, -a) + (1.0 - z) * np.logaddexp(0.0, a))


class SeededRng:
    """PCG64 stream with an explicit integer seed.

    ``spawn`` derives independent child streams, used to give every replica
    or worker its own generator.
    """

    algorithm = "PCG64"

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, size=None):
        return self._gen.random(size)

    def normal(self, size=None, scale=1.0):
        return self._gen.normal(0.0, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, n, size, replace=False):
        return self._gen.choice(n, size=size, replace=replace)

    def spawn(self, n):
        seq = np.random.SeedSequence(self.seed)
        return [SeededRng(int(c.generate_state(1, np.uint64)[0])) for c in seq.spawn(n)]

    @property
    def state(self):
        return self._gen.bit_generator.state


def bernoulli_vector(p, rng):
    """Draw a 0/1 float array with P(entry = 1) = p, one uniform per entry."""
    p = np.asarray(p, dtype=np.float64)
    if np.any((p < 0.0) | (p > 1.0)) or not np.all(np.isfinite(p)):
        raise ValueError("Bernoulli probabilities must lie in [0, 1]")
    u = rng.uniform(p.shape)
    return (u < p).astype(np.float64)
