"""Global context-aware attention LSTM for skeleton sequences, in numpy."""
from .data import SkeletonSequence, SyntheticSpec, generate_synthetic
from .gca import AttentionConfig, BaselineGlobal, GCAModel, ModelConfig
from .models import build_model
from .numerics import ContractError, NonFiniteError, ParamStore, RngStream, ShapeError
from .trainer import TrainConfig, evaluate, train_direct, train_stepwise
from .twostream import BodyPartition, TwoStreamModel

__version__ = "0.1.0"
