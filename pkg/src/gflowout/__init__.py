"""Learned dropout masks sampled by a GFlowNet policy, for small perceptrons."""

from .backbone import BackboneNet, ForwardTrace, cross_entropy, log_likelihood
from .data import (Dataset, Deformation, apply_deformation, gen_blobs, gen_two_moons,
                   inject_label_noise, load_idx, split)
from .experiments import ood_experiment, robustness_experiment, seed_sweep
from .inference import PredictiveResult, ds_uncertainty, ood_scores, predictive, predictive_entropy
from .metrics import accuracy, aupr, auroc, tv_distance
from .numeric import SeededRng, bernoulli_vector, log_sum_exp, matmul, stable_softmax
from .objectives import (RewardConfig, TbTerms, db_loss, id_reward_log, prior_objective,
                         reward_log, tb_loss)
from .oracle import (MaskSpace, exact_target, finite_diff_gradcheck, policy_terminal_distribution,
                     tv_to_target)
from .policies import (FixedPrior, IdPolicy, MaskTrajectory, PolicyBundle, log_prob_of_masks,
                       sample_trajectory, temper)
from .trainer import TrainRunConfig, adaptation_protocol, fit, train_step

__version__ = "0.1.0"
