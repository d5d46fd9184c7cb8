"""Rectified meta-learning from noisy labels, at desk scale."""
from .autodiff import GradResult, Tape, backward, finite_diff, grad, grad_through_step
from .datasets import Dataset, load_csv, make_blobs, make_rings, save_csv, split
from .losses import RectConfig, cross_entropy, kl_consistency, meta_loss, rectify, total_loss
from .model import ModelSpec, ParamSet, features, init_params, predict
from .noise import NoiseSpec, corruption_rate, inject, inject_asymmetric, inject_mixed, inject_symmetric
from .trainer import TrainConfig, TrainState, train

__version__ = "0.1.0"
