"""Multi-behavior recommendation with parallel knowledge fusion."""

from .autodiff import Parameter, SparseMatrix, Tape, backward
from .data import BehaviorDataset, load_dataset
from .model import PKEFModel

__version__ = "0.1.0"

__all__ = [
    "BehaviorDataset",
    "PKEFModel",
    "Parameter",
    "SparseMatrix",
    "Tape",
    "backward",
    "load_dataset",
    "__version__",
]
