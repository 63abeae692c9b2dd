"""Utility functions for the monodrift package: errors, logging, random numbers
and the worker pool."""

__all__ = ["error_handling", "parallel", "rng"]
