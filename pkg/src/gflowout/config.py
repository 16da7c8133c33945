"""Plain ``key = value`` run configuration files and dataset spec strings."""

import hashlib

import numpy as np

from . import data as D
from .trainer import ConfigError, TrainRunConfig

FLOAT_KEYS = ("beta", "temperature", "epsilon", "lr_backbone", "lr_policy", "lr_partition",
              "lr_prior", "dropout_rate")
INT_KEYS = ("epochs", "batch_size", "M_inference", "seed", "early_stop_patience")
STR_KEYS = ("method", "objective", "reward_source", "dataset", "deformation", "lr_schedule")
LIST_KEYS = ("layers",)
KNOWN_KEYS = FLOAT_KEYS + INT_KEYS + STR_KEYS + LIST_KEYS
REQUIRED_KEYS = ("dataset",)


class ConfigFileError(ConfigError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


def parse_config_text(text):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigFileError(f"unknown key {key!r}", lineno)
        if key in out:
            raise ConfigFileError(f"duplicate key {key!r}", lineno)
        try:
            if key in FLOAT_KEYS:
                out[key] = float(value)
            elif key in INT_KEYS:
                out[key] = int(value)
            elif key in LIST_KEYS:
                out[key] = tuple(int(v) for v in value.split(",") if v.strip())
            else:
                out[key] = value
        except ValueError:
            raise ConfigFileError(f"invalid value {value!r} for {key!r}", lineno) from None
    for key in REQUIRED_KEYS:
        if key not in out:
            raise ConfigFileError(f"missing required key {key!r}")
    return out


def to_run_config(values):
    kw = {k: v for k, v in values.items() if k not in ("dataset", "deformation", "layers",
                                                       "early_stop_patience", "reward_source")}
    if "layers" in values:
        kw["hidden"] = values["layers"]
    if "early_stop_patience" in values:
        kw["patience"] = values["early_stop_patience"]
    if "reward_source" in values:
        kw["reward_source"] = values["reward_source"]
    try:
        return TrainRunConfig(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def config_hash(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _kv(body):
    out = {}
    for part in filter(None, (p.strip() for p in body.split(","))):
        if "=" not in part:
            raise ConfigError(f"bad spec field {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def blob_centers(k, radius=3.0, shift=0.0, rotate=0.0):
    """K centers on a circle of ``radius``, rotated by ``rotate`` degrees, then shifted."""
    ang = 2 * np.pi * np.arange(k) / k + np.deg2rad(rotate)
    return radius * np.c_[np.cos(ang), np.sin(ang)] + shift


def make_dataset(spec):
    """Build a dataset from ``kind[:key=value,...]``.

    kinds: ``blobs`` (n, k, sigma, radius, shift, rotate, seed), ``moons`` (n, noise,
    seed), ``fixture`` (seed, probes) and ``idx`` (images, labels, classes).
    """
    kind, _, body = spec.partition(":")
    kv = _kv(body)
    try:
        if kind == "blobs":
            k = int(kv.get("k", 3))
            centers = blob_centers(k, float(kv.get("radius", 3.0)), float(kv.get("shift", 0.0)),
                                   float(kv.get("rotate", 0.0)))
            return D.gen_blobs(int(kv.get("seed", 0)), int(kv.get("n", 600)), k, centers,
                               float(kv.get("sigma", 0.5)))
        if kind == "moons":
            return D.gen_two_moons(int(kv.get("seed", 0)), int(kv.get("n", 1000)),
                                   float(kv.get("noise", 0.1)))
        if kind == "fixture":
            from .fixtures import enumerable_fixture
            fx = enumerable_fixture(int(kv.get("seed", 2)), n_probes=int(kv.get("probes", 8)))
            return D.Dataset(fx.x, fx.y, name="fixture", seed=int(kv.get("seed", 2)),
                             n_classes=fx.backbone.n_classes, meta={"generator": "fixture"})
        if kind == "idx":
            return D.idx_dataset(kv["images"], kv["labels"], int(kv.get("classes", 10)))
    except KeyError as exc:
        raise ConfigError(f"dataset spec {spec!r} lacks {exc.args[0]!r}") from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad dataset spec {spec!r}: {exc}") from None
    raise ConfigError(f"unknown dataset kind {kind!r}")


def make_deformation(spec):
    """``none``, ``gaussian-noise:sigma=S[,seed=N]`` or ``rotation:angle=A``."""
    if spec in (None, "", "none"):
        return None
    kind, _, body = spec.partition(":")
    kv = _kv(body)
    if kind == "gaussian-noise":
        return D.Deformation(kind, float(kv.get("sigma", 0.0)), int(kv.get("seed", 0)))
    if kind == "rotation":
        return D.Deformation(kind, float(kv.get("angle", 0.0)), int(kv.get("seed", 0)))
    raise ConfigError(f"unknown deformation {kind!r}")


SPLIT_RATIOS = (0.6, 0.2, 0.2)


def split_dataset(dataset, seed=0):
    return D.split(dataset, SPLIT_RATIOS, seed)
