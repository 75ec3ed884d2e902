"""Monte Carlo checks of the large deviation and periodic averaging behaviour."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .model_core import Kernel, TimeKernel, average_kernel
from .particle_sim import (
    MicroRates,
    SupDistance,
    Trajectory,
    counts_from_measure,
    interpolate_trajectory,
    mean_field_ode,
    periodic_mean_field_rates,
    run_ensemble,
)
from .rate_calculus import action_integral


@dataclass
class TubeEvent:
    """Sup-norm tube around ``reference`` checked at its time nodes.

    ``radius_w`` (optional) also constrains the flux. ``min_total_flux``
    (optional) additionally requires ``sum_e w_e(T) >= min_total_flux`` at the
    horizon, which turns a loose tube into a flux-excess event.
    """

    reference: Trajectory
    radius_mu: float
    radius_w: Optional[float] = None
    min_total_flux: Optional[float] = None
    horizon: Optional[float] = None

    def __post_init__(self):
        if not self.radius_mu > 0 or (self.radius_w is not None and not self.radius_w > 0):
            raise ValueError("tube radii must be positive")
        T = float(self.reference.times[-1])
        if self.horizon is None:
            self.horizon = T
        if abs(self.horizon - T) > 1e-12 or self.reference.times[0] != 0.0:
            raise ValueError("reference must be defined on [0, horizon]")
        if np.max(np.diff(self.reference.times)) > 0.01 * self.horizon * (1 + 1e-9):
            raise ValueError("tube membership needs a node spacing of at most 0.01 * horizon")

    def contains(self, traj: Trajectory) -> bool:
        ok = np.all(np.abs(traj.mu - self.reference.mu).max(axis=1) <= self.radius_mu)
        if self.radius_w is not None:
            ok &= np.all(np.abs(traj.w - self.reference.w).max(axis=1) <= self.radius_w)
        if self.min_total_flux is not None:
            ok &= traj.w[-1].sum() >= self.min_total_flux - 1e-12
        return bool(ok)


class _TubeObserver:
    def __init__(self, tube: TubeEvent, replicas: int):
        self.tube = tube
        self.inside = np.ones(replicas, dtype=bool)
        self.last = len(tube.reference.times) - 1

    def __call__(self, ks, ids, counts, flux):
        n = counts.sum(axis=1, keepdims=True)
        ref = self.tube.reference
        ok = np.abs(counts / n - ref.mu[ks]).max(axis=1) <= self.tube.radius_mu + 1e-12
        w = flux / n
        if self.tube.radius_w is not None:
            ok &= np.abs(w - ref.w[ks]).max(axis=1) <= self.tube.radius_w + 1e-12
        if self.tube.min_total_flux is not None:
            fin = ks == self.last
            ok[fin] &= w[fin].sum(axis=1) >= self.tube.min_total_flux - 1e-12
        self.inside[ids[~ok]] = False
        return ok


@dataclass
class TubeEstimate:
    n: int
    p_hat: float
    stderr: float
    hits: int
    replicas: int
    upper_bound: Optional[float] = None

    @property
    def decay(self) -> float:
        return -math.log(self.p_hat) / self.n if self.p_hat > 0 else math.inf

    @property
    def decay_stderr(self) -> float:
        # delta method on -log(p)/n
        return self.stderr / (self.p_hat * self.n) if self.p_hat > 0 else math.inf


def mc_tube_probability(
    mr: MicroRates,
    init_counts,
    tube: TubeEvent,
    replicas: int,
    seed: int,
    batch_size: int = 1 << 18,
    workers: int = 1,
) -> TubeEstimate:
    """Fraction of replicas whose ``Z_n`` stays in the tube at every node."""
    if replicas < 100:
        raise ValueError("replicas must be >= 100")
    obs = _TubeObserver(tube, replicas)
    run_ensemble(mr, init_counts, tube.horizon, tube.reference.times, seed, replicas, observer=obs, batch_size=batch_size, workers=workers)
    hits = int(obs.inside.sum())
    p = hits / replicas
    se = math.sqrt(p * (1 - p) / replicas)
    return TubeEstimate(mr.n, p, se, hits, replicas, 3.0 / replicas if hits == 0 else None)


def default_replicas(n: int) -> int:
    return int(min(10**6 // n, 20_000))


# ---------------------------------------------------------------------------
# candidate minimization of the action over the tube


def _candidate_path(times, mu0, w0, W, space):
    W = np.vstack([w0, W])
    mu = mu0 + space.divergence(W - w0)
    return mu, W


def _feasible(tube: TubeEvent, times, ref_mu, ref_w, mu, W) -> bool:
    if np.any(np.diff(W, axis=0) < -1e-15) or np.any(mu < -1e-12):
        return False
    if np.any(np.abs(mu - ref_mu).max(axis=1) > tube.radius_mu):
        return False
    if tube.radius_w is not None and np.any(np.abs(W - ref_w).max(axis=1) > tube.radius_w):
        return False
    if tube.min_total_flux is not None and W[-1].sum() < tube.min_total_flux - 1e-12:
        return False
    return True


def minimize_tube_action(
    tube: TubeEvent,
    k: Kernel,
    segments: int = 10,
    iterations: int = 200,
    step0: Optional[float] = None,
) -> dict:
    """Smallest action among in-tube candidate paths, by coordinate descent.

    Candidates are piecewise linear on ``segments`` equal time steps. The
    free variables are the nodal flux values; the measure follows from the
    divergence identity, so every candidate is feasible for the dynamics.
    Starting points: the tube reference resampled on the coarse grid, and
    the straight line from the initial point to the reference endpoint.
    """
    ref = tube.reference
    space = k.space
    T = tube.horizon
    times = np.linspace(0.0, T, segments + 1)
    ref_mu, ref_w = interpolate_trajectory(ref, times)
    mu0, w0 = ref.mu[0], ref.w[0]
    starts = [ref_w[1:], w0 + np.outer(times[1:] / T, ref.w[-1] - w0)]

    def cost(W):
        mu, Wf = _candidate_path(times, mu0, w0, W, space)
        if not _feasible(tube, times, ref_mu, ref_w, mu, Wf):
            return math.inf
        return action_integral(Trajectory(times, mu, Wf, space), k)

    best_val, best_W = math.inf, None
    for W in starts:
        W = W.copy()
        val = cost(W)
        if not math.isfinite(val):
            continue
        step = step0 if step0 is not None else 0.1 * max(float(np.max(np.abs(W))), 1e-3)
        for _ in range(iterations):
            improved = False
            for idx in np.ndindex(W.shape):
                for sgn in (1.0, -1.0):
                    W[idx] += sgn * step
                    cand = cost(W)
                    if cand < val - 1e-15:
                        val, improved = cand, True
                        break
                    W[idx] -= sgn * step
            if not improved:
                step *= 0.5
                if step < 1e-12:
                    break
        if val < best_val:
            best_val, best_W = val, W.copy()
    if best_W is None:
        return {"action": math.inf, "trajectory": None}
    mu, Wf = _candidate_path(times, mu0, w0, best_W, space)
    return {"action": best_val, "trajectory": Trajectory(times, mu, Wf, space)}


def ldp_decay_fit(estimates: Sequence[TubeEstimate], tube: TubeEvent, k: Kernel, **kw) -> dict:
    """Compare ``-(1/n) log p_hat`` with the candidate-minimized tube action."""
    nz = [e for e in estimates if e.p_hat > 0]
    if len(nz) < 3:
        raise ValueError("need at least three n values with nonzero p_hat")
    cand = minimize_tube_action(tube, k, **kw)
    act = cand["action"]
    rows = []
    for e in sorted(nz, key=lambda e: e.n):
        rows.append(
            {
                "n": e.n,
                "p_hat": e.p_hat,
                "stderr": e.stderr,
                "hits": e.hits,
                "replicas": e.replicas,
                "decay": e.decay,
                "decay_stderr": e.decay_stderr,
                "gap": e.decay - act,
                "rel_gap": (e.decay - act) / act if act > 0 else math.inf,
            }
        )
    noise_ok = [
        b["decay"] >= a["decay"] - 2.0 * math.hypot(a["decay_stderr"], b["decay_stderr"]) for a, b in zip(rows, rows[1:])
    ]
    return {"candidate_action": act, "rows": rows, "increasing_within_noise": bool(all(noise_ok))}


# ---------------------------------------------------------------------------
# periodic averaging and containment


def periodic_averaging_experiment(
    tk: TimeKernel,
    gamma_list: Sequence[float],
    n: int,
    T: float,
    seed: int,
    mu0,
    rate_bound: float,
    replicas: int = 32,
    grid_points: int = 101,
    quad_points: int = 256,
    workers: int = 1,
) -> dict:
    """Distance of ``Z_n`` under fast periodic rates to the averaged-kernel ODE, per ``gamma``."""
    if any(b <= a for a, b in zip(gamma_list, gamma_list[1:])):
        raise ValueError("gamma_list must be increasing")
    avg = average_kernel(tk, quad_points)
    counts = counts_from_measure(mu0, n)
    ode = mean_field_ode(avg, counts / n, T, min(1e-3, T / 1000))
    grid = np.linspace(0.0, T, grid_points)
    ref_mu, ref_w = interpolate_trajectory(ode, grid)
    rows = []
    for g in gamma_list:
        mr = periodic_mean_field_rates(tk, n, g, rate_bound)
        obs = SupDistance(ref_mu, ref_w, replicas)
        run_ensemble(mr, counts, T, grid, seed, replicas, observer=obs, workers=workers)
        dist = np.maximum(obs.d_mu, obs.d_w)
        rate = obs.final_w / T
        rows.append(
            {
                "gamma": float(g),
                "sup_distance": float(dist.mean()),
                "sup_distance_se": float(dist.std(ddof=1) / math.sqrt(replicas)),
                "sup_distance_mu": float(obs.d_mu.mean()),
                "sup_distance_w": float(obs.d_w.mean()),
                "flux_rate": rate.mean(axis=0).tolist(),
                "flux_rate_se": (rate.std(axis=0, ddof=1) / math.sqrt(replicas)).tolist(),
            }
        )
    return {"n": n, "T": T, "averaged_flux_rate": (ref_w[-1] / T).tolist(), "rows": rows}


@dataclass
class ContainmentEstimate:
    n: int
    frequency: float
    stderr: float
    exceed: int
    replicas: int
    upper_bound: Optional[float] = None

    @property
    def log_frequency(self) -> float:
        return math.log(self.frequency) if self.frequency > 0 else -math.inf

    @property
    def log_stderr(self) -> float:
        return self.stderr / self.frequency if self.frequency > 0 else math.inf


def flux_containment_check(
    mr: MicroRates, init_counts, T: float, replicas: int, K_cap: float, seed: int, workers: int = 1
) -> ContainmentEstimate:
    """Frequency of ``max_e W_e(t)/n > K_cap`` for some ``t <= T``.

    Fluxes are nondecreasing, so the supremum over time is attained at ``T``.
    """
    final = np.zeros(replicas)

    def obs(ks, ids, counts, flux):
        final[ids] = flux.max(axis=1) / mr.n
        return None

    run_ensemble(mr, init_counts, T, np.array([T]), seed, replicas, observer=obs, workers=workers)
    ex = int(np.sum(final > K_cap + 1e-12))
    p = ex / replicas
    return ContainmentEstimate(mr.n, p, math.sqrt(p * (1 - p) / replicas), ex, replicas, 3.0 / replicas if ex == 0 else None)


def containment_trend(
    rates_for_n: Callable[[int], MicroRates],
    mu0,
    T: float,
    n_list: Sequence[int],
    replicas: int,
    K_cap: float,
    seed: int,
    workers: int = 1,
) -> dict:
    rows = []
    for n in n_list:
        est = flux_containment_check(rates_for_n(n), counts_from_measure(mu0, n), T, replicas, K_cap, seed, workers)
        rows.append(
            {
                "n": n,
                "frequency": est.frequency,
                "stderr": est.stderr,
                "exceed": est.exceed,
                "log_frequency": est.log_frequency,
                "log_stderr": est.log_stderr,
                "upper_bound": est.upper_bound,
            }
        )
    dec = []
    for a, b in zip(rows, rows[1:]):
        if a["frequency"] == 0:
            dec.append(b["frequency"] == 0)
        else:
            dec.append(b["log_frequency"] < a["log_frequency"] + 2.0 * math.hypot(a["log_stderr"], min(b["log_stderr"], 1e300)))
    return {"K_cap": K_cap, "T": T, "replicas": replicas, "rows": rows, "decreasing_within_noise": bool(all(dec))}
