"""xnet: a desk-scale lab for explaining and retuning a Q-routing agent.

The package simulates an SDN-like network at flow level, trains a tabular
Q-learning routing agent, mimics it with interpretable surrogate regressors,
explains the surrogate (Shapley / PDP / ICE) and feeds the explanations back
into the agent's reward weights.
"""

__version__ = "0.1.0"

SCHEMA_VERSION = 1
