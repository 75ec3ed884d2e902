"""Discounted-control approximation of the resolvent ``f - lambda H f = h``.

With ``H`` the Legendre transform of the Lagrangian, ``f`` is the value of

    sup_u  int_0^inf e^{-t/lambda} [h(x_t)/lambda - L(x_t, u_t)] dt,

discretized semi-Lagrangianly with exact exponential weights over a step
``dt`` (``beta = exp(-dt/lambda)``):

    f(x) = max_c (1 - beta) (h(x) - lambda L_c(x)) + beta f(x + dt u_c(x)).

Controls scale each edge intensity: ``w_dot = s * v(mu)`` with
``s`` from a catalog, the measure velocity following from the divergence
identity, at cost ``L_c = sum_e S(s_e v_e | v_e)``. The catalog always
holds ``s = 1`` (zero cost), so a constant ``h`` is reproduced exactly.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from ..model_core import Kernel, Momentum
from ..rate_calculus import hamiltonian_edges, edge_exponents, rel_entropy
from .grid import Grid, GridFunction

DEFAULT_CATALOG = (0.0, 0.5, 1.0, 2.0, 4.0)
MAX_TRANSITION_NNZ = 60_000_000


class ConvergenceError(RuntimeError):
    def __init__(self, msg: str, residuals: list):
        super().__init__(msg)
        self.residuals = residuals


def control_set(n_edges: int, catalog: Sequence[float]) -> np.ndarray:
    """Edgewise product of the scaling catalog, shape ``(C, |Gamma|)``."""
    cat = sorted(set(float(s) for s in catalog) | {1.0})
    if any(s < 0 for s in cat):
        raise ValueError("control scalings must be non-negative")
    return np.array(list(itertools.product(cat, repeat=n_edges)))


@dataclass
class ControlModel:
    """Transition matrices and running costs for one (grid, kernel, catalog, dt)."""

    grid: Grid
    controls: np.ndarray
    dt: float
    cost: np.ndarray  # (C, N)
    transition: sp.csr_matrix  # (C * N, N)

    @classmethod
    def build(cls, grid: Grid, k: Kernel, catalog: Sequence[float], dt: float) -> "ControlModel":
        if not dt > 0:
            raise ValueError("dt must be positive")
        space = grid.space
        mu, w = grid.node_coords()
        v = k.edge_rates(mu)
        ctl = control_set(space.n_edges, catalog)
        C, N = len(ctl), grid.size
        width = space.q * (2 ** space.n_edges if grid.n_levels > 1 else 1)
        if C * N * width > MAX_TRANSITION_NNZ:
            raise ValueError(f"control model too large ({C} controls x {N} nodes)")
        mats, costs = [], []
        for s in ctl:
            wdot = s * v
            mdot = space.divergence(wdot)
            mats.append(grid.interp_matrix(mu + dt * mdot, w + dt * wdot))
            costs.append(rel_entropy(wdot, v).sum(axis=1))
        return cls(grid, ctl, dt, np.array(costs), sp.vstack(mats, format="csr"))


@dataclass
class ResolventResult:
    f: GridFunction
    iterations: int
    update_norms: list = field(default_factory=list)
    policy: Optional[np.ndarray] = None


def resolvent_solve(
    h: GridFunction,
    lam: float,
    k: Kernel,
    grid: Optional[Grid] = None,
    controls: Sequence[float] = DEFAULT_CATALOG,
    dt: float = 0.05,
    tol: float = 1e-9,
    max_iter: Optional[int] = None,
    model: Optional[ControlModel] = None,
    f0: Optional[np.ndarray] = None,
) -> ResolventResult:
    """Value iteration for the discounted control problem until the sup-norm update is below ``tol``."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    grid = h.grid if grid is None else grid
    if model is None:
        model = ControlModel.build(grid, k, controls, dt)
    beta = math.exp(-model.dt / lam)
    C, N = model.cost.shape
    A = (1.0 - beta) * (h.values[None, :] - lam * model.cost)
    if max_iter is None:
        # contraction factor beta: enough sweeps to shrink the initial update below tol, with margin
        max_iter = int(math.ceil(3 * math.log(max(tol, 1e-300) / 1e3) / math.log(beta))) + 100
    f = h.values.copy() if f0 is None else np.asarray(f0, dtype=float).copy()
    hist = []
    for it in range(1, max_iter + 1):
        cand = A + beta * (model.transition @ f).reshape(C, N)
        f_new = cand.max(axis=0)
        delta = float(np.max(np.abs(f_new - f)))
        hist.append(delta)
        f = f_new
        if delta < tol:
            policy = cand.argmax(axis=0)
            return ResolventResult(GridFunction(grid, f), it, hist, policy)
    raise ConvergenceError(
        f"value iteration did not reach tol={tol:g} in {max_iter} sweeps (last update {hist[-1]:.3g})", hist[-20:]
    )


def hj_residual(f: GridFunction, h: GridFunction, lam: float, k: Kernel) -> dict:
    """``f - lambda H(x, grad f) - h`` with finite-difference gradients, over interior nodes."""
    grid = f.grid
    ps, pf, interior = grid.gradient(f.values)
    mu, _ = grid.node_coords()
    v = k.edge_rates(mu)
    Hv = hamiltonian_edges(v, edge_exponents(grid.space, Momentum(ps, pf)))
    res = f.values - lam * Hv - h.values
    r_in = np.abs(res[interior]) if interior.any() else np.array([np.nan])
    return {
        "max_interior": float(np.max(r_in)),
        "mean_interior": float(np.mean(r_in)),
        "max_all": float(np.max(np.abs(res))),
        "interior_nodes": int(interior.sum()),
        "residual": res,
    }


def residual_table(
    k: Kernel,
    lam: float,
    h_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    ms: Sequence[int],
    w_max: float = 0.5,
    h_w: float = 0.25,
    controls: Sequence[float] = DEFAULT_CATALOG,
    dt_factor: float = 1.0,
    tol: float = 1e-10,
) -> list[dict]:
    """Solve on refining simplex meshes (``dt = dt_factor / m``) and report interior residuals."""
    rows = []
    for m in ms:
        grid = Grid(k.space, m, w_max, h_w)
        h = grid.function(h_fn)
        dt = dt_factor / m
        sol = resolvent_solve(h, lam, k, grid, controls, dt, tol)
        r = hj_residual(sol.f, h, lam, k)
        rows.append(
            {
                "m": m,
                "dt": dt,
                "nodes": grid.size,
                "iterations": sol.iterations,
                "max_interior_residual": r["max_interior"],
                "mean_interior_residual": r["mean_interior"],
            }
        )
    return rows


def log_catalog(radius: float = 2.0, points: int = 41) -> tuple:
    """Scalings ``exp(r)`` on a uniform grid of ``r``, plus zero."""
    return (0.0,) + tuple(float(x) for x in np.exp(np.linspace(-radius, radius, points)))
