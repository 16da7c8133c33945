"""Synthetic datasets, IDX loading, deformations, label noise and splits."""

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .numeric import SeededRng


class IdxFormatError(ValueError):
    pass


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    name: str = "dataset"
    seed: int = 0
    n_classes: int = 2
    grid: tuple = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.y.shape != (self.x.shape[0],):
            raise ValueError("x must be (n, d) and y must be (n,)")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError("labels out of range")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("non-finite features")

    def __len__(self):
        return self.x.shape[0]

    def subset(self, idx, name=None):
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, x=self.x[idx], y=self.y[idx], name=name or self.name,
                       meta=dict(self.meta))


def gen_blobs(seed, n, k, centers, sigma):
    centers = np.asarray(centers, dtype=np.float64)
    if k < 2 or centers.shape[0] != k:
        raise ValueError("need K >= 2 and one center per class")
    if n < k:
        raise ValueError("need at least one point per class")
    rng = SeededRng(seed)
    y = rng.permutation(np.arange(n) % k)
    x = centers[y] + rng.normal((n, centers.shape[1]), scale=sigma) if sigma > 0 else centers[y].copy()
    return Dataset(x, y, name="blobs", seed=seed, n_classes=k,
                   meta={"generator": "blobs", "sigma": sigma})


def gen_two_moons(seed, n, noise):
    if n % 2:
        raise ValueError("n must be even")
    rng = SeededRng(seed)
    half = n // 2
    t0 = np.pi * rng.uniform(half)
    t1 = np.pi * rng.uniform(half)
    upper = np.c_[np.cos(t0), np.sin(t0)]
    lower = np.c_[1.0 - np.cos(t1), 0.5 - np.sin(t1)]
    x = np.r_[upper, lower]
    y = np.r_[np.zeros(half, np.int64), np.ones(half, np.int64)]
    if noise > 0:
        x = x + rng.normal(x.shape, scale=noise)
    perm = rng.permutation(n)
    return Dataset(x[perm], y[perm], name="moons", seed=seed, n_classes=2,
                   meta={"generator": "two_moons", "noise": noise})


IDX_UBYTE = 0x08


def write_idx(path, array):
    """Write an unsigned-byte IDX file (labels: rank 1, images: rank 3)."""
    a = np.asarray(array)
    if a.dtype != np.uint8:
        raise ValueError("only unsigned-byte payloads are supported")
    header = struct.pack(">BBBB", 0, 0, IDX_UBYTE, a.ndim) + struct.pack(f">{a.ndim}I", *a.shape)
    with open(path, "wb") as f:
        f.write(header + a.tobytes(order="C"))


def read_idx(path):
    """Raw uint8 array stored in an IDX file (magic 0x0801 or 0x0803)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise IdxFormatError("file too short for an IDX header")
    zero1, zero2, dtype, rank = struct.unpack(">BBBB", raw[:4])
    if zero1 or zero2 or dtype != IDX_UBYTE or rank not in (1, 3):
        raise IdxFormatError(f"bad IDX magic 0x{raw[:4].hex()}")
    end = 4 + 4 * rank
    if len(raw) < end:
        raise IdxFormatError(f"truncated header: expected {end} bytes, got {len(raw)}")
    dims = struct.unpack(f">{rank}I", raw[4:end])
    expected = int(np.prod(dims))
    actual = len(raw) - end
    if actual != expected:
        raise IdxFormatError(f"payload has {actual} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=np.uint8, offset=end).reshape(dims)


def load_idx(path):
    """Labels as int64 for rank-1 files, images scaled to [0, 1] for rank-3 files."""
    a = read_idx(path)
    if a.ndim == 1:
        return a.astype(np.int64)
    return a.astype(np.float64) / 255.0


def idx_dataset(images_path, labels_path, n_classes=10, name="idx"):
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if images.ndim != 3 or labels.ndim != 1 or images.shape[0] != labels.shape[0]:
        raise IdxFormatError("images and labels do not match")
    n, h, w = images.shape
    return Dataset(images.reshape(n, h * w), labels, name=name, n_classes=n_classes,
                   grid=(h, w), meta={"generator": "idx"})


@dataclass(frozen=True)
class Deformation:
    kind: str  # "rotation" or "gaussian-noise"
    intensity: float = 0.0
    seed: int = 0


def rotate_grid(images, grid, angle):
    """Rotate flattened images about the grid center, nearest-neighbour pull."""
    h, w = grid
    imgs = np.asarray(images, dtype=np.float64).reshape(-1, h, w)
    theta = np.deg2rad(angle)
    c, s = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dy, dx = rr - cy, cc - cx
    # inverse map: target pixel pulls from the source rotated by -angle
    sy = np.rint(cy + c * dy - s * dx).astype(np.int64)
    sx = np.rint(cx + s * dy + c * dx).astype(np.int64)
    valid = (sy >= 0) & (sy < h) & (sx >= 0) & (sx < w)
    out = np.zeros_like(imgs)
    out[:, valid] = imgs[:, sy[valid], sx[valid]]
    return out.reshape(imgs.shape[0], h * w)


def apply_deformation(dataset, d):
    if d.kind == "rotation":
        if dataset.grid is None:
            raise ValueError("rotation needs grid-shaped inputs")
        if d.intensity % 360 == 0:
            x = dataset.x.copy()
        else:
            x = rotate_grid(dataset.x, dataset.grid, d.intensity)
    elif d.kind == "gaussian-noise":
        if d.intensity < 0:
            raise ValueError("noise level must be non-negative")
        x = dataset.x.copy()
        if d.intensity > 0:
            x = x + SeededRng(d.seed).normal(x.shape, scale=d.intensity)
    else:
        raise ValueError(f"unknown deformation {d.kind!r}")
    meta = dict(dataset.meta, deformation=f"{d.kind}:{d.intensity}")
    return replace(dataset, x=x, meta=meta)


def inject_label_noise(dataset, fraction, seed):
    """Resample the labels of floor(fraction * n) seeded points uniformly over K."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    n = len(dataset)
    count = int(np.floor(fraction * n))
    rng = SeededRng(seed)
    idx = np.sort(rng.choice(n, count, replace=False)) if count else np.zeros(0, np.int64)
    y = dataset.y.copy()
    y[idx] = rng.integers(0, dataset.n_classes, size=count)
    meta = dict(dataset.meta, noise_fraction=fraction, noise_seed=seed,
                noise_indices=idx.tolist())
    return replace(dataset, y=y, meta=meta)


def split(dataset, ratios, seed):
    """Seeded permutation cut into consecutive parts.

    Part sizes are ``floor(ratio * n)``; the leftover points go to the first
    part.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    if np.any(ratios < 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ValueError("ratios must be non-negative and sum to 1")
    n = len(dataset)
    sizes = np.floor(ratios * n + 1e-9).astype(np.int64)
    sizes[0] += n - sizes.sum()
    perm = SeededRng(seed).permutation(n)
    cuts = np.cumsum(sizes)[:-1]
    names = ("train", "validation", "test")
    return tuple(dataset.subset(p, name=f"{dataset.name}-{names[i] if i < 3 else i}")
                 for i, p in enumerate(np.split(perm, cuts)))


def write_provenance(path, dataset):
    """Plain-text key=value sidecar describing how a dataset was made."""
    lines = [f"name={dataset.name}", f"seed={dataset.seed}",
             f"generator={dataset.meta.get('generator', 'unknown')}"]
    for k in sorted(dataset.meta):
        if k == "generator":
            continue
        v = dataset.meta[k]
        if isinstance(v, (list, tuple)):
            v = ",".join(str(i) for i in v)
        lines.append(f"{k}={v}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_provenance(path):
    out = {}
    with open(path) as f:
        for line in f:
            line = line.rstrip("\n")
            if line:
                k, _, v = line.partition("=")
                out[k] = v
    return out
