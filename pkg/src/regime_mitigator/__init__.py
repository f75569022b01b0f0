"""Decision-model toolkit for error-regime mitigation in modular digital twins.

Builds data-driven Markov and partially observable decision models, solves
them (value iteration, point-based value iteration), simulates them exactly
in continuous time, trains model-free baselines, and benchmarks intervention
policies with statistical tests.
"""

__version__ = "0.1.0"

from .model import ModelBundle, load_model  # noqa: F401
