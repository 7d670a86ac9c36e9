"""Continual learning with likelihood-tempered variational inference.

Subpackages cover a minimal reverse-mode tensor engine, closed-form
diagonal-Gaussian calculus, mean-field Bayesian networks with task-specific
FiLM layers, the tempered training objectives, a sequential-task runner,
dataset utilities, and continual-learning metrics.
"""

__version__ = "0.1.0"
