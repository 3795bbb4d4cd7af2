"""Optimal-denoiser timestep clustering for diffusion models."""

from stagecut.budget import StageBudget, TrainingBudget, training_pflops, weighted_gflops
from stagecut.cluster import (
    GridSpec,
    Partition,
    baseline_uniform_logsnr,
    baseline_uniform_t,
    solve_n_interval,
    solve_three_interval,
)
from stagecut.dataset import Dataset, load_cifar10, load_csv, subsample, synth_clusters
from stagecut.denoiser import DenoiserEval, log_density, optimal_eps, posterior_mean, score
from stagecut.schedule import (
    KernelParams,
    VeSchedule,
    VpSchedule,
    drift_diffusion,
    kernel_at,
    snr,
    t_of_snr,
    ve_sigma_equivalent,
)
from stagecut.similarity import (
    EndpointStore,
    PairStore,
    SimilarityConfig,
    coord_agreement,
    endpoint_sample,
    run_endpoint_study,
    run_pair_study,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DenoiserEval",
    "EndpointStore",
    "GridSpec",
    "KernelParams",
    "PairStore",
    "Partition",
    "SimilarityConfig",
    "StageBudget",
    "TrainingBudget",
    "VeSchedule",
    "VpSchedule",
    "baseline_uniform_logsnr",
    "baseline_uniform_t",
    "coord_agreement",
    "drift_diffusion",
    "endpoint_sample",
    "kernel_at",
    "load_cifar10",
    "load_csv",
    "log_density",
    "optimal_eps",
    "posterior_mean",
    "run_endpoint_study",
    "run_pair_study",
    "score",
    "snr",
    "solve_n_interval",
    "solve_three_interval",
    "subsample",
    "synth_clusters",
    "t_of_snr",
    "training_pflops",
    "ve_sigma_equivalent",
    "weighted_gflops",
]
