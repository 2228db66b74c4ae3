"""Personalized Bayesian federated learning with particle posteriors.

Clients approximate their local posteriors with Stein variational gradient
descent; the server aggregates the uploaded particle ensembles into a global
prior through a discrete Wasserstein barycenter.
"""

__version__ = "0.1.0"
