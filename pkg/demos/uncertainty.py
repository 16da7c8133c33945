"""Uncertainty from sampled masks: OOD detection and noisy inputs.

Trains GFlowOut and random dropout on three Gaussian blobs and scores
held-out blobs against blobs rotated to sit between the classes, then
repeats a two-moons run with Gaussian input noise.  Takes a couple of
minutes on one core.

    python demos/uncertainty.py
"""

import numpy as np

from gflowout.experiments import ood_experiment, robustness_experiment

for method in ("gflowout", "random-dropout"):
    ood = ood_experiment(method, seed=0)
    rob = robustness_experiment(method, seed=0)
    print(f"{method:15s} OOD AUROC {ood['auroc']:.3f}  AUPR {ood['aupr']:.3f}  "
          f"moons clean {rob['clean_acc']:.3f}  noisy {rob['deformed_acc']:.3f}")

# The same comparison through the command line:
#   gflowout train demos/blobs.cfg --out runs/blobs
#   gflowout ood runs/blobs/model.gfo --ood "blobs:k=3,n=600,sigma=1,rotate=60,seed=1"
#   gflowout eval runs/blobs/model.gfo --deformation gaussian-noise:sigma=0.3 --M 1,20
print("seed 0 only; the acceptance suite runs five seeds per method:", np.arange(5))
