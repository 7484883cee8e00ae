"""Goal-conditioned RL toolkit with diversity-weighted hindsight replay."""

from . import agent, cli, dpp, envs, replay
from .agent import DdpgAgent, TrainConfig
from .cli import EpochMetrics, RunConfig, bench_run, eval_run, run_experiment, train_run
from .dpp import (
    EigenSystem,
    SamplerStats,
    det_psd,
    dpp_subset_probability,
    esk_table,
    gram_kernel,
    kdpp_sample,
    kdpp_subset_probability,
    normalize_columns,
    sym_eigen,
)
from .envs import BitFlipEnv, EnvSpec, PointPushEnv, StepResult, make_env, sparse_reward
from .replay import (
    CandidateTransition,
    EpisodicBuffer,
    Trajectory,
    Transition,
    relabel,
    trajectory_diversity,
)

__version__ = "0.1.0"
