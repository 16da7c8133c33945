"""Feed-forward classifier with multiplicative per-layer dropout masks.

Weights follow the ``w_l`` has shape ``(d_l, d_{l-1})`` convention and
batches are row-major, so a layer computes ``h @ w.T + b``.  Hidden layers
use ReLU, masks multiply the post-activation values, and the output layer
is a softmax that is never masked.
"""

from dataclasses import dataclass, field

import numpy as np

from .numeric import ShapeError, as_matrix, log_softmax, stable_softmax


class StaleTraceError(RuntimeError):
    pass


def he_init(rng, fan_out, fan_in):
    return rng.normal((fan_out, fan_in), scale=np.sqrt(2.0 / fan_in))


class MLP:
    """Plain ReLU perceptron with a linear output and hand-written backprop.

    Parameters are stored as ``w{l}``/``b{l}`` with ``l`` counted from 1.
    ``hidden_masks`` (one ``(batch, d_l)`` array per hidden layer) multiply
    the post-ReLU activations.
    """

    def __init__(self, sizes, rng=None, zero_last=False):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {sizes}")
        self.sizes = sizes
        self.params = {}
        n = len(sizes) - 1
        for l in range(1, n + 1):
            fan_in, fan_out = sizes[l - 1], sizes[l]
            if rng is None or (zero_last and l == n):
                w = np.zeros((fan_out, fan_in))
            else:
                w = he_init(rng, fan_out, fan_in)
            self.params[f"w{l}"] = w
            self.params[f"b{l}"] = np.zeros(fan_out)

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    def w(self, l):
        return self.params[f"w{l}"]

    def b(self, l):
        return self.params[f"b{l}"]

    def hidden_pre_mask(self, l, h_prev):
        """ReLU activation of hidden layer ``l`` before its mask is applied."""
        return np.maximum(h_prev @ self.w(l).T + self.b(l), 0.0)

    def output(self, h_last):
        n = self.n_layers
        return h_last @ self.w(n).T + self.b(n)

    def forward(self, x, hidden_masks=None):
        x = as_matrix(x)
        if x.shape[1] != self.sizes[0]:
            raise ShapeError(f"input width {x.shape[1]} != {self.sizes[0]}")
        n = self.n_layers
        if hidden_masks is not None and len(hidden_masks) != n - 1:
            raise ShapeError(f"expected {n - 1} masks, got {len(hidden_masks)}")
        pre, unmasked, acts = [], [], [x]
        h = x
        for l in range(1, n):
            a = h @ self.w(l).T + self.b(l)
            hp = np.maximum(a, 0.0)
            if hidden_masks is not None:
                z = np.asarray(hidden_masks[l - 1], dtype=np.float64)
                if z.shape != hp.shape:
                    raise ShapeError(f"mask {l} has shape {z.shape}, expected {hp.shape}")
                h = z * hp
            else:
                h = hp
            pre.append(a)
            unmasked.append(hp)
            acts.append(h)
        out = self.output(h)
        return {"pre": pre, "unmasked": unmasked, "acts": acts, "out": out,
                "masks": hidden_masks}

    def backward(self, cache, dout):
        """Gradients of ``sum(dout * out)`` w.r.t. every parameter, plus d/dx."""
        n = self.n_layers
        acts, pre, masks = cache["acts"], cache["pre"], cache["masks"]
        grads = {}
        delta = np.asarray(dout, dtype=np.float64)
        for l in range(n, 0, -1):
            grads[f"w{l}"] = delta.T @ acts[l - 1]
            grads[f"b{l}"] = delta.sum(axis=0)
            dh = delta @ self.w(l)
            if l == 1:
                break
            gate = (pre[l - 2] > 0.0).astype(np.float64)
            if masks is not None:
                gate = gate * masks[l - 2]
            delta = dh * gate
        return grads, dh

    def copy(self):
        other = object.__new__(type(self))
        other.__dict__.update(self.__dict__)
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other


@dataclass
class ForwardTrace:
    x: np.ndarray
    masks: list
    pre: list
    unmasked: list  # h'_l, ReLU output before masking
    acts: list  # h_l = z_l * h'_l, acts[0] is the input
    logits: np.ndarray
    probs: np.ndarray
    dims: tuple = field(default=())


class BackboneNet(MLP):
    """Classifier ``p(y | x, z; theta)``; hidden layers 1..L-1 are maskable."""

    def __init__(self, layer_dims, rng=None):
        super().__init__(layer_dims, rng=rng, zero_last=False)
        if len(self.sizes) < 3:
            raise ValueError("backbone needs at least one hidden layer")

    @property
    def layer_dims(self):
        return tuple(self.sizes)

    @property
    def n_classes(self):
        return self.sizes[-1]

    @property
    def mask_dims(self):
        return tuple(self.sizes[1:-1])

    @property
    def n_maskable(self):
        return sum(self.mask_dims)

    def ones_masks(self, batch):
        return [np.ones((batch, d)) for d in self.mask_dims]

    def forward(self, x, masks=None):
        x = as_matrix(x)
        if masks is None:
            masks = self.ones_masks(x.shape[0])
        c = super().forward(x, masks)
        logits = c["out"]
        return ForwardTrace(x=x, masks=list(masks), pre=c["pre"], unmasked=c["unmasked"],
                            acts=c["acts"], logits=logits, probs=stable_softmax(logits),
                            dims=self.layer_dims)

    def predict_logits(self, x, masks=None):
        return self.forward(x, masks).logits

    def backward(self, trace, labels):
        """Exact gradients of the mean cross-entropy with the masks held fixed."""
        if trace.dims != self.layer_dims or trace.x.shape[1] != self.sizes[0]:
            raise StaleTraceError("trace was produced by a network of different shape")
        labels = check_labels(labels, self.n_classes, trace.probs.shape[0])
        batch = trace.probs.shape[0]
        dlogits = trace.probs.copy()
        dlogits[np.arange(batch), labels] -= 1.0
        dlogits /= batch
        cache = {"acts": trace.acts, "pre": trace.pre, "masks": trace.masks}
        grads, _ = MLP.backward(self, cache, dlogits)
        return grads


def check_labels(labels, k, n=None):
    labels = np.asarray(labels)
    if labels.ndim != 1 or (n is not None and labels.shape[0] != n):
        raise ShapeError("labels must be a vector matching the batch")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    return labels


def log_likelihood(trace, labels):
    """Per-sample ``log p(y_i | x_i, z_i; theta)``."""
    labels = check_labels(labels, trace.logits.shape[1], trace.logits.shape[0])
    return log_softmax(trace.logits)[np.arange(labels.shape[0]), labels]


def cross_entropy(trace, labels):
    return float(-np.mean(log_likelihood(trace, labels)))
