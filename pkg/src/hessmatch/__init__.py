"""Hessian matching for coarse-grained potentials.

Estimators for the CG mean force and CG Hessian from conditional
fine-grained ensembles, precomputed projected Hessian-vector-product
targets, CG models with exact second derivatives, and the training,
simulation and evaluation pipeline built on them.
"""

from .errors import HessmatchError

__version__ = "0.1.0"

__all__ = ["HessmatchError", "__version__"]
