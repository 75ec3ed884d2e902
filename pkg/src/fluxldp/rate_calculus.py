"""Relative entropy, Hamiltonian, Lagrangian, Legendre duality and action.

Conventions: a state is ``x = (mu, w)``; momenta are
:class:`~fluxldp.model_core.Momentum` pairs; velocities are
:class:`VelocityPair`. All vectors over edges follow the order of
``StateSpace.gamma``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .model_core import Kernel, Momentum, StateSpace
from .particle_sim import Trajectory

FEAS_TOL = 1e-10
EXP_CAP = 700.0


class HamiltonianOverflow(RuntimeWarning):
    pass


# ---------------------------------------------------------------------------
# relative entropy


def rel_entropy(z, v):
    """``S(z | v)``: Poisson relative entropy, with ``S(0 | 0) = 0``.

    Accepts scalars or arrays (broadcast); raises on negative input.
    """
    z = np.asarray(z, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(z < 0) or np.any(v < 0):
        raise ValueError("relative entropy needs z >= 0 and v >= 0")
    z, v = np.broadcast_arrays(z, v)
    out = np.array(v, dtype=float, copy=True)
    pos = z > 0
    both = pos & (v > 0)
    zb, vb = z[both], v[both]
    # log difference: a ratio of extreme values could underflow or overflow
    out[both] = zb * (np.log(zb) - np.log(vb)) - zb + vb
    out[pos & (v == 0)] = np.inf
    # roundoff can leave tiny negatives near z = v
    np.maximum(out, 0.0, out=out)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Hamiltonian


def edge_exponents(space: StateSpace, p: Momentum) -> np.ndarray:
    """``p_b - p_a + p_(a,b)`` per edge (broadcast over leading axes)."""
    ps = np.asarray(p.state, dtype=float)
    pf = np.asarray(p.flux, dtype=float)
    return ps[..., space.targets] - ps[..., space.sources] + pf


def hamiltonian_edges(v_edges: np.ndarray, expo: np.ndarray) -> np.ndarray:
    """``sum_e v_e (exp(expo_e) - 1)`` with the overflow sentinel."""
    with np.errstate(over="ignore", invalid="ignore"):
        terms = np.where(v_edges > 0, v_edges * np.expm1(np.minimum(expo, EXP_CAP)), 0.0)
    val = terms.sum(axis=-1)
    over = np.any((expo > EXP_CAP) & (v_edges > 0), axis=-1)
    if np.any(over):
        warnings.warn("Hamiltonian exponent above 700; returning +inf", HamiltonianOverflow, stacklevel=3)
        val = np.where(over, np.inf, val)
    return val


def hamiltonian(x, p: Momentum, k: Kernel):
    """``H(x, p) = sum_(a,b) v(a,b,mu) [exp(p_b - p_a + p_(a,b)) - 1]``.

    ``x`` is ``(mu, w)`` or just ``mu``; ``w`` does not enter.
    """
    mu = x[0] if isinstance(x, tuple) else x
    v = k.edge_rates(mu)
    val = hamiltonian_edges(v, edge_exponents(k.space, p))
    return float(val) if np.ndim(val) == 0 else val


# ---------------------------------------------------------------------------
# Lagrangian


@dataclass(frozen=True)
class VelocityPair:
    mu_dot: np.ndarray
    w_dot: np.ndarray

    def defect(self, space: StateSpace) -> float:
        """Sup-norm violation of the divergence identity."""
        md = np.asarray(self.mu_dot, dtype=float)
        return float(np.max(np.abs(md - space.divergence(self.w_dot))))

    def feasible(self, space: StateSpace, tol: float = FEAS_TOL) -> bool:
        md = np.asarray(self.mu_dot, dtype=float)
        wd = np.asarray(self.w_dot, dtype=float)
        if not (np.all(np.isfinite(md)) and np.all(np.isfinite(wd))):
            return False
        return bool(np.all(wd >= 0) and abs(md.sum()) <= tol and self.defect(space) <= tol)


def induced_velocity(space: StateSpace, w_dot) -> VelocityPair:
    w_dot = np.asarray(w_dot, dtype=float)
    return VelocityPair(space.divergence(w_dot), w_dot)


def lagrangian(x, vel: VelocityPair, k: Kernel) -> float:
    """``sum_e S(w_dot_e | v_e(mu))`` on feasible velocities, ``inf`` otherwise."""
    if not vel.feasible(k.space):
        return math.inf
    mu = x[0] if isinstance(x, tuple) else x
    return float(np.sum(rel_entropy(np.asarray(vel.w_dot, dtype=float), k.edge_rates(mu))))


# ---------------------------------------------------------------------------
# Legendre duality


def legendre_dual_closed(x, vel: VelocityPair, k: Kernel) -> float:
    """Closed-form edgewise supremum ``sup_r {w_dot r - v (e^r - 1)}``.

    The momenta enter only through ``r_(a,b) = p_(a,b) - p_a + p_b`` once the
    velocity is feasible, so the supremum separates over edges.
    """
    if not vel.feasible(k.space):
        return math.inf
    mu = x[0] if isinstance(x, tuple) else x
    v = k.edge_rates(mu)
    return float(np.sum([_edge_sup_closed(z, ve) for z, ve in zip(np.asarray(vel.w_dot, float), v)]))


def _edge_sup_closed(z: float, v: float) -> float:
    return float(rel_entropy(z, v))


def _golden_max(f, lo: float, hi: float, iters: int = 80) -> tuple[float, float]:
    g = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def _edge_sup_grid(z: float, v: float, radius: float, step: float) -> float:
    """Grid search on ``[-radius, radius]`` then golden-section refinement."""
    if v == 0.0:
        # concave-linear in r: unbounded if z > 0, supremum 0 otherwise
        return math.inf if z > 0 else 0.0
    rs = np.arange(-radius, radius + 0.5 * step, step)
    with np.errstate(over="ignore"):
        vals = z * rs - v * np.expm1(rs)
    i = int(np.argmax(vals))
    lo, hi = rs[max(i - 1, 0)], rs[min(i + 1, rs.size - 1)]
    _, best = _golden_max(lambda r: z * r - v * math.expm1(r), lo, hi)
    best = max(best, float(vals[i]))
    if z == 0.0:
        # supremum is approached as r -> -inf; the finite grid stops at -radius
        best = max(best, v * (1.0 - math.exp(-radius)))
    return best


def legendre_dual(
    x,
    vel: VelocityPair,
    k: Kernel,
    p_grid_radius: float = 20.0,
    p_grid_step: float = 1e-3,
    blowup: float = 1e6,
) -> float:
    """Numerical ``sup_p <p, vel> - H(x, p)`` used as an independent oracle.

    Feasible velocities: per-edge grid search over the reduced momenta
    ``r_(a,b) = p_(a,b) - p_a + p_b`` on ``[-radius, radius]``.

    Infeasible velocities: with ``d = mu_dot - div(w_dot)``, the momentum
    ``p_state = s d``, ``p_(a,b) = -s (d_b - d_a) + r_(a,b)`` leaves every
    exponent equal to ``r`` and adds ``s |d|^2`` to the objective; a negative
    flux velocity adds ``s |w_dot_e|`` through ``r_e = -s``. The value at
    ``s = radius`` is returned, or ``inf`` once it exceeds ``blowup``.
    """
    space = k.space
    mu = x[0] if isinstance(x, tuple) else x
    v = k.edge_rates(mu)
    md = np.asarray(vel.mu_dot, dtype=float)
    wd = np.asarray(vel.w_dot, dtype=float)
    if vel.feasible(space):
        return float(sum(_edge_sup_grid(z, ve, p_grid_radius, p_grid_step) for z, ve in zip(wd, v)))
    d = md - space.divergence(wd)
    neg = wd < 0
    val = p_grid_radius * (float(d @ d) + float(-wd[neg].sum()))
    val += float(np.sum(v[neg] * (1.0 - math.exp(-p_grid_radius))))
    # the edge maximizers sit near log(w_dot / v); a bounded edge grid suffices
    r_edge = min(p_grid_radius, 50.0)
    val += float(sum(_edge_sup_grid(z, ve, r_edge, p_grid_step) for z, ve in zip(wd[~neg], v[~neg])))
    if not np.isfinite(val) or val > blowup:
        return math.inf
    return val


# ---------------------------------------------------------------------------
# action and contracted rate


def action_integral(traj: Trajectory, k: Kernel) -> float:
    """Midpoint-rule action of the piecewise-linear interpolation of ``traj``."""
    t = np.asarray(traj.times, dtype=float)
    if t.size < 2:
        raise ValueError("trajectory needs at least two nodes")
    dt = np.diff(t)
    dmu = np.diff(traj.mu, axis=0) / dt[:, None]
    dw = np.diff(traj.w, axis=0) / dt[:, None]
    if np.any(dw < 0):
        return math.inf
    if np.any(traj.mu < -FEAS_TOL):
        return math.inf
    space = k.space
    defect = np.abs(dmu - space.divergence(dw)).max(axis=1)
    if np.any(defect > FEAS_TOL) or np.any(np.abs(dmu.sum(axis=1)) > FEAS_TOL):
        return math.inf
    mid = 0.5 * (traj.mu[1:] + traj.mu[:-1])
    v = k.edge_rates(mid)
    cost = rel_entropy(dw, v).sum(axis=1)
    return float(np.sum(dt * cost))


def flux_feasible(space: StateSpace, v: np.ndarray, mu_dot: np.ndarray) -> bool:
    """Whether some ``w_dot >= 0`` supported on ``{v > 0}`` has divergence ``mu_dot``."""
    md = np.asarray(mu_dot, dtype=float)
    if abs(md.sum()) > 1e-9:
        return False
    if np.max(np.abs(md)) <= 1e-15:
        return True
    support = np.flatnonzero(v > 0)
    if support.size == 0:
        return False
    A = np.zeros((space.q, support.size))
    for j, e in enumerate(support):
        a, b = space.gamma[e]
        A[b, j] += 1.0
        A[a, j] -= 1.0
    res = linprog(np.zeros(support.size), A_eq=A[:-1], b_eq=md[:-1], bounds=(0, None), method="highs")
    return bool(res.status == 0)


@dataclass
class SegmentSolution:
    value: float
    w_dot: np.ndarray
    phi: np.ndarray
    iterations: int


def contracted_segment(space: StateSpace, v: np.ndarray, mu_dot, tol: float = 1e-9, max_iter: int = 500) -> SegmentSolution:
    """``min_{w_dot >= 0, div w_dot = mu_dot} sum_e S(w_dot_e | v_e)`` by dual ascent.

    Dual: ``g(phi) = <phi, mu_dot> - sum_e v_e (exp(phi_b - phi_a) - 1)``,
    concave and smooth; ``phi_q`` is pinned at zero. The primal optimum is
    ``w_dot_e = v_e exp(phi_b - phi_a)``. Damped Newton with backtracking.
    """
    md = np.asarray(mu_dot, dtype=float)
    v = np.asarray(v, dtype=float)
    q = space.q
    if not flux_feasible(space, v, md):
        return SegmentSolution(math.inf, np.full(space.n_edges, np.nan), np.full(q, np.nan), 0)
    src, tgt = space.sources, space.targets
    D = np.zeros((space.n_edges, q))  # d(phi_b - phi_a)/d phi
    D[np.arange(space.n_edges), tgt] += 1.0
    D[np.arange(space.n_edges), src] -= 1.0
    D = D[:, :-1]
    mdr = md[:-1]

    def g(phi):
        s = D @ phi
        with np.errstate(over="ignore"):
            return float(phi @ mdr - np.sum(v * np.expm1(s)))

    phi = np.zeros(q - 1)
    it = 0
    for it in range(1, max_iter + 1):
        s = D @ phi
        ex = v * np.exp(s)
        grad = mdr - D.T @ ex
        if np.max(np.abs(grad)) <= tol:
            break
        hess = D.T @ (ex[:, None] * D)
        try:
            step = np.linalg.solve(hess + 1e-14 * np.eye(q - 1), grad)
        except np.linalg.LinAlgError:
            step = grad
        if not np.all(np.isfinite(step)) or step @ grad <= 0:
            step = grad
        g0, tau = g(phi), 1.0
        while tau > 1e-12:
            cand = phi + tau * step
            if g(cand) >= g0 + 1e-4 * tau * float(step @ grad):
                break
            tau *= 0.5
        phi = phi + tau * step
    s = D @ phi
    w_dot = v * np.exp(s)
    full_phi = np.append(phi, 0.0)
    value = float(np.sum(rel_entropy(w_dot, v)))
    return SegmentSolution(value, w_dot, full_phi, it)


def contracted_rate(times, mu, k: Kernel, tol: float = 1e-9) -> float:
    """``J`` of a measure-only trajectory: segmentwise midpoint action with the flux optimized out."""
    times = np.asarray(times, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if times.size < 2:
        raise ValueError("trajectory needs at least two nodes")
    total = 0.0
    for i in range(times.size - 1):
        dt = times[i + 1] - times[i]
        md = (mu[i + 1] - mu[i]) / dt
        v = k.edge_rates(0.5 * (mu[i] + mu[i + 1]))
        sol = contracted_segment(k.space, v, md, tol)
        if not math.isfinite(sol.value):
            return math.inf
        total += dt * sol.value
    return total


def optimal_flux(times, mu, k: Kernel, w0=None, tol: float = 1e-9) -> Optional[Trajectory]:
    """Flux trajectory attaining the contracted rate (``None`` if infeasible)."""
    times = np.asarray(times, dtype=float)
    mu = np.asarray(mu, dtype=float)
    w = np.zeros((times.size, k.space.n_edges))
    if w0 is not None:
        w[0] = w0
    for i in range(times.size - 1):
        dt = times[i + 1] - times[i]
        sol = contracted_segment(k.space, k.edge_rates(0.5 * (mu[i] + mu[i + 1])), (mu[i + 1] - mu[i]) / dt, tol)
        if not math.isfinite(sol.value):
            return None
        w[i + 1] = w[i] + dt * sol.w_dot
    return Trajectory(times, mu, w, k.space)
