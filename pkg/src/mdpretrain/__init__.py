"""Pre-training equivariant ligand/receptor encoders on molecular-dynamics trajectories.

Two self-supervised tasks drive the encoder: predicting future coordinates
from a (noised) snapshot conditioned on a time-interval prompt, and recovering
the temporal order of shuffled snapshots. The pre-trained encoder is then
probed or fine-tuned for binding affinity and efficacy prediction.
"""
from .errors import InvalidInput, NumericalError
from .geom import ComplexSnapshot, EdgeSet, Trajectory
from .model import MDModel, ModelConfig

__all__ = ["ComplexSnapshot", "EdgeSet", "InvalidInput", "MDModel", "ModelConfig",
           "NumericalError", "Trajectory"]
__version__ = "0.1.0"
