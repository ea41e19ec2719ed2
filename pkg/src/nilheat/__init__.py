"""Discrete sub-Riemannian heat flow and entropy functionals on flat
Heisenberg-type nilmanifolds."""

from nilheat.geometry import Model, ModelKind, build_model

__all__ = ["Model", "ModelKind", "build_model"]
__version__ = "0.1.0"
