"""Penalization pair and containment function for doubling of variables.

``psi1`` penalizes only the negative parts of ``mu - mu_hat``; on the
simplex this still vanishes exactly on the diagonal because both measures
have unit mass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PenaltyParams:
    alpha1: float
    alpha2: float
    epsilon: float

    def __post_init__(self):
        if not (self.alpha1 > 0 and self.alpha2 > 0 and self.epsilon > 0):
            raise ValueError("alpha1, alpha2 and epsilon must be strictly positive")
        if not self.epsilon < 1:
            raise ValueError("epsilon must be below 1")


def psi1(mu, mu_hat):
    d = np.minimum(np.asarray(mu, float) - np.asarray(mu_hat, float), 0.0)
    return 0.5 * np.sum(d * d, axis=-1)


def grad_psi1(mu, mu_hat):
    """Gradient in the first argument; the gradient in ``mu_hat`` is its negative."""
    return np.minimum(np.asarray(mu, float) - np.asarray(mu_hat, float), 0.0)


def psi2(w, w_hat):
    d = np.asarray(w, float) - np.asarray(w_hat, float)
    return 0.5 * np.sum(d * d, axis=-1)


def grad_psi2(w, w_hat):
    return np.asarray(w, float) - np.asarray(w_hat, float)


def upsilon(w):
    """Containment function ``sum_e log(1 + w_e)`` (independent of ``mu``)."""
    return np.sum(np.log1p(np.asarray(w, float)), axis=-1)


def grad_upsilon(w):
    """Flux gradient ``1 / (1 + w)``; the measure gradient is zero."""
    return 1.0 / (1.0 + np.asarray(w, float))


def upsilon_sublevel_radius(c: float) -> float:
    """Every flux coordinate in ``{upsilon <= c}`` is at most this."""
    return float(np.expm1(c))
