"""Prelimit nonlinear generator ``H_n f = (1/n) e^{-nf} A_n e^{nf}`` and its periodic correction."""

from __future__ import annotations

import math
import warnings
from typing import Callable

import numpy as np

from ..particle_sim import MicroRates
from ..rate_calculus import EXP_CAP, HamiltonianOverflow

SmoothFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def counts_of(states, q: int) -> np.ndarray:
    return np.bincount(np.asarray(states, dtype=np.int64), minlength=q)


def lifted_Hn(f: SmoothFn, mr: MicroRates, counts, W, t=0.0):
    """``H_n (f o eta_n)`` at the configuration with occupation ``counts`` and flux counts ``W``.

    Particles in the same state contribute identically, so the sum over
    particles is grouped by state:
    ``sum_(a,b) mu_n(a) r_n(t,a,b) [exp{n (f(eta_n after the jump) - f(eta_n))} - 1]``.
    ``t`` may be an array; the result then has its shape.
    """
    space, n = mr.space, mr.n
    counts = np.asarray(counts, dtype=np.int64)
    W = np.asarray(W, dtype=float)
    if counts.sum() != n:
        raise ValueError("counts must sum to n")
    mu = counts / n
    w = W / n
    f0 = float(f(mu, w))
    t = np.asarray(t, dtype=float)
    rates = mr.rates(t, counts)  # (..., q, q)
    total = np.zeros(t.shape)
    overflow = False
    for e, (a, b) in enumerate(space.gamma):
        if counts[a] == 0:
            continue
        mu1 = mu.copy()
        mu1[a] -= 1.0 / n
        mu1[b] += 1.0 / n
        w1 = w.copy()
        w1[e] += 1.0 / n
        expo = n * (float(f(mu1, w1)) - f0)
        if expo > EXP_CAP:
            overflow = True
            continue
        total = total + mu[a] * rates[..., a, b] * math.expm1(expo)
    if overflow:
        warnings.warn("lifted generator exponent above 700; returning +inf", HamiltonianOverflow, stacklevel=2)
        return math.inf
    return float(total) if total.ndim == 0 else total


def periodic_Ffn(f: SmoothFn, mr: MicroRates, t, counts, W, quad_points: int = 257):
    """``F_{f,n}(t) = int_0^t H_n[s] ds - (t / tau) int_0^tau H_n[s] ds`` with ``tau`` the rate period.

    Trapezoidal rule on the lattice ``s = k tau / (quad_points - 1)``, plus a
    final partial panel up to ``t``; shifting ``t`` by ``tau`` keeps the lattice.
    """
    if mr.period is None:
        raise ValueError("micro-rates carry no period")
    tau = float(mr.period)
    h = tau / (quad_points - 1)
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    t_hi = float(ts.max())
    K = int(math.floor(t_hi / h + 1e-12))
    nodes = h * np.arange(max(K, quad_points - 1) + 1)
    Hs = lifted_Hn(f, mr, counts, W, nodes)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * h * (Hs[1:] + Hs[:-1]))])
    per_mean = cum[quad_points - 1] / tau
    out = np.empty_like(ts)
    for i, tt in enumerate(ts):
        k = int(math.floor(tt / h + 1e-12))
        k = min(k, nodes.size - 1)
        rest = tt - nodes[k]
        val = cum[k]
        if rest > 0:
            h_end = lifted_Hn(f, mr, counts, W, tt)
            val += 0.5 * rest * (Hs[k] + h_end)
        out[i] = val - tt * per_mean
    return float(out[0]) if np.ndim(t) == 0 else out


def Ffn_sup(f: SmoothFn, mr: MicroRates, counts, W, quad_points: int = 257, samples: int = 257) -> float:
    """``sup |F_{f,n}|`` over one period (sampled on the quadrature lattice)."""
    tau = float(mr.period)
    ts = np.linspace(0.0, tau, samples)
    return float(np.max(np.abs(periodic_Ffn(f, mr, ts, counts, W, quad_points))))
