"""Galerkin boundary elements for the first-kind Hodge-Dirac boundary integral operators."""

__version__ = "0.1.0"
