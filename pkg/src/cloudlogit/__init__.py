"""Gaussian clouded logit losses for long-tailed classification."""

__version__ = "0.1.0"

from .datagen import ClassProfile, Dataset, exponential_profile, generate_synthetic, load_dataset, save_dataset
from .losses import GaussianCloudConfig, LossSpec, adjusted_logits, cosine_scores, grad_wrt_logits, softmax_ce
from .model import Model, backward, forward, init_model, sgd_step
from .numerics import Rng, l2_normalize, sample_clamped_gaussian
from .pipeline import (
    MetricsReport,
    TrainConfig,
    Trainer,
    evaluate,
    export_embeddings,
    lr_at,
    retrain_classifier,
    train_stage1,
)
from .sampling import SamplerSpec, draw_batch, effective_numbers, sampling_probabilities
from .schedules import CloudSchedule, cloud_schedule, normalized_cloud_sizes, raw_cloud_sizes

__all__ = [
    "ClassProfile", "Dataset", "exponential_profile", "generate_synthetic", "load_dataset", "save_dataset",
    "GaussianCloudConfig", "LossSpec", "adjusted_logits", "cosine_scores", "grad_wrt_logits", "softmax_ce",
    "Model", "backward", "forward", "init_model", "sgd_step",
    "Rng", "l2_normalize", "sample_clamped_gaussian",
    "MetricsReport", "TrainConfig", "Trainer", "evaluate", "export_embeddings", "lr_at",
    "retrain_classifier", "train_stage1",
    "SamplerSpec", "draw_batch", "effective_numbers", "sampling_probabilities",
    "CloudSchedule", "cloud_schedule", "normalized_cloud_sizes", "raw_cloud_sizes",
]
