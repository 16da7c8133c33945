"""Desk-scale OOD-detection and robustness experiments on synthetic data."""

import numpy as np

from .config import blob_centers, split_dataset
from .data import Deformation, apply_deformation, gen_blobs, gen_two_moons
from .inference import ood_scores
from .metrics import aupr, auroc
from .numeric import SeededRng
from .trainer import TrainRunConfig, evaluate, fit

OOD_ROTATION = 60.0  # half the angle between neighbouring class centers
OOD_SIGMA = 1.0
MOONS_NOISE = 0.3


def ood_experiment(method, seed, n_samples=20, metric="ds", epochs=100):
    """Train on 3 blobs, score test blobs against blobs rotated between the classes."""
    data = gen_blobs(0, 600, 3, blob_centers(3), OOD_SIGMA)
    train, val, test = split_dataset(data)
    cfg = TrainRunConfig(method=method, seed=seed, epochs=epochs, patience=10)
    state = fit(cfg, train, val).state
    shifted = gen_blobs(1, 120, 3, blob_centers(3, rotate=OOD_ROTATION), OOD_SIGMA)
    scores, labels = ood_scores(state.backbone, state.policy, test.x, shifted.x, n_samples,
                                metric, method, SeededRng(seed + 1000))
    return {"auroc": auroc(scores, labels), "aupr": aupr(scores, labels)}


def robustness_experiment(method, seed, noise=MOONS_NOISE, epochs=100):
    """Two-moons classifier evaluated on clean and Gaussian-noise-corrupted test points."""
    data = gen_two_moons(0, 1000, 0.1)
    train, val, test = split_dataset(data)
    cfg = TrainRunConfig(method=method, seed=seed, epochs=epochs, patience=20, lr_backbone=5e-3)
    state = fit(cfg, train, val).state
    noisy = apply_deformation(test, Deformation("gaussian-noise", noise, 123))
    clean_acc = evaluate(state, test, rng=SeededRng(seed + 1000))[0]
    noisy_acc = evaluate(state, noisy, rng=SeededRng(seed + 1000))[0]
    return {"clean_acc": clean_acc, "deformed_acc": noisy_acc}


def seed_sweep(experiment, method, seeds=range(5), **kw):
    rows = [experiment(method, s, **kw) for s in seeds]
    return {k: np.array([r[k] for r in rows]) for k in rows[0]}
