"""deqlab: vanilla ReLU deep equilibrium models with the theory toolkit.

Library layout:

- linalg: dense matrix kernels (spectral norm, symmetric eigensolves,
  Gram products, Gram-Schmidt)
- data: dataset generation, normalization, and MNIST/CIFAR binary parsing
- model: DEQ parameters, initialization, fixed-point forward solver
- grad: implicit-differentiation gradients via an adjoint fixed point
- kernel: population Gram matrices, their infinite-depth limit, and the
  width/depth suggestions they imply
- condition: over-parameterization condition and norm-inequality checks
- train: full-batch gradient descent with convergence-theory monitors
- concentration: Monte Carlo experiments comparing finite models to the
  population kernel
- cli: `deqlab` command-line front end
"""

__version__ = "0.1.0"

from .errors import (
    AssumptionError,
    ConfigError,
    ConvergenceError,
    DegenerateInputError,
    DeqlabError,
    InputError,
    TrainingAssertionError,
    WellPosednessError,
)

__all__ = [
    "AssumptionError",
    "ConfigError",
    "ConvergenceError",
    "DegenerateInputError",
    "DeqlabError",
    "InputError",
    "TrainingAssertionError",
    "WellPosednessError",
    "__version__",
]
