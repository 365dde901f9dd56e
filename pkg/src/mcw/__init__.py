"""Multi-species mean-field Ising models with indefinite couplings.

Limiting pressure as an inf-sup over a spectral split of the coupling, the free-energy
landscape, exact finite-N sector laws, Glauber sampling and Gaussian fluctuation
checks.
"""

from .errors import (
    BudgetExceeded,
    DegenerateMaximizer,
    DomainError,
    McwError,
    MixingFailure,
    NoSaddleFound,
    NumericalError,
    ValidationError,
)
from .model import ModelSpec, finite_sizes, load_model, model_from_dict

__version__ = "0.1.0"

__all__ = [
    "BudgetExceeded", "DegenerateMaximizer", "DomainError", "McwError", "MixingFailure", "NoSaddleFound",
    "NumericalError", "ValidationError", "ModelSpec", "finite_sizes", "load_model", "model_from_dict",
    "__version__",
]
