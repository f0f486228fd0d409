"""Relational reasoning over an attention-selected stream of entities, on Sort-of-CLEVR."""

from .baselines import CNNModel, CnnConfig, RNModel, RnConfig
from .layers import count_parameters
from .model import AttentionTrace, ModelConfig, RFSModel, attend
from .numerics import Adam, Tensor, grad_check, no_grad
from .sortofclevr import Dataset, generate_dataset, read_dataset, write_dataset
from .training import TrainConfig, build_model, evaluate, fit, load_checkpoint, restore_model, train

__version__ = "0.1.0"
