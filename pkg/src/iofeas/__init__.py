"""Learning feasible regions of forward optimization problems from observed decisions."""

from .forward import ObjectiveSpec, solve_forward
from .geometry import PrimitiveSet, make_primitive
from .hypothesis import HypothesisParams, init_params
from .losses import evaluate, pred_loss, sub_loss, true_losses
from .norms import NormSpec
from .train_bcd import TrainConfig, train

__version__ = "0.1.0"
