"""Stochastic-Galerkin solver and diagnostics for kinetic equations with random inputs."""

__version__ = "0.1.0"
