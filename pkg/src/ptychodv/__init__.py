"""Ptychographic phase retrieval: physics model, iterative solvers and a
transformer-initialized deep unrolled network, built on numpy."""

__version__ = "0.1.0"
