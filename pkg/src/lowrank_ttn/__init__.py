"""Tree tensor network classifiers with CP rank constraints and tensor dropout."""
from .costs import multiply_count, param_count
from .dropout import DropoutMask, sample_dropout_mask
from .errors import (
    CapacityError,
    CheckpointError,
    ConfigError,
    DegenerateOutputError,
    DivergenceError,
    DomainError,
    ParseError,
    ShapeError,
    TTNError,
    UsageError,
)
from .model import (
    FeatureMapSpec,
    TTNModel,
    born_probabilities,
    forward,
    forward_batch,
    pixel_feature_map,
    predict,
)
from .tensors import CPTensor, DenseTensor, cp_contract, cp_to_dense, dense_contract, frobenius_norm_sq
from .topology import TreeTopology, build_topology
from .training import (
    LossReport,
    TrainConfig,
    evaluate,
    evaluate_accuracy,
    gradients,
    initialize_model,
    nll_loss,
    train_epoch,
)
from .adam import AdamState, adam_step

__version__ = "0.1.0"
