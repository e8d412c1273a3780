"""Locality-aware surrogate models for gradient-based black-box optimization.

A neural surrogate is trained on input/output pairs of a black box with a
pairwise loss over nearest neighbours, which aligns the surrogate's Jacobian
with the black box's.  The surrogate then supplies input gradients while the
black box itself is always used in the forward pass.
"""

from .abbo import (ExactGradient, L1Target, Objective, OptimizeResult, OutputValue, RunConfig,
                   Surrogate, TrajectoryRecord, offline_optimize, offline_train, online_optimize,
                   random_search_baseline, train_surrogate)
from .data import Dataset, LocalSamplerConfig, NeighborIndex, NormStats, build_knn, local_sample, rank_select
from .losses import gradpie_loss, mae_loss, mse_loss
from .metrics import (GradientReport, cosine_similarity, finite_difference_gradient,
                      jacobian_rowdiff, relative_error, surrogate_gradient_eval)
from .nn import AdamConfig, AdamState, MlpSurrogate

__version__ = "0.1.0"
