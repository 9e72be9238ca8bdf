"""Mixed cross-entropy / expectation losses and their training schedules."""
# flake8: noqa F401

from .analysis import AccuracyTable, dolan_more_profile, friedman_statistic
from .core import RandomSource, softmax
from .data import Dataset, SplitSpec, load_csv, make_blobs, split
from .escape import noise_covariance, sde_simulate
from .exceptions import PyMixLossException
from .losses import LossSpec, MixWeights, build_loss, mixed_loss
from .model import Architecture, ClassifierModel, init_model
from .schedule import Protocol, ScheduleSpec, schedule_at
from .trainer import TrainConfig, lr_sweep, train
