"""Doubling-of-variables diagnostic and numerical comparison check.

The objective over node pairs ``(x, y) = ((s, f), (s', f'))`` is

    Phi = u(x)/(1-eps) - v(y)/(1+eps) - a1 psi1(mu_s, mu_s') - a2 psi2(w_f, w_f')
          - eps/(1-eps) Y(w_f) - eps/(1+eps) Y(w_f').

Only ``psi1`` couples ``s`` with ``s'`` and only ``psi2`` couples ``f`` with
``f'``, so with

    M[s, s'] = max_{f, f'} (A[s, f] - a2 P2[f, f'] - B[s', f'])

the maximum for every ``a1`` on the ladder is ``max_{s,s'} M - a1 P1``. ``M``
is computed once; it replaces pair pruning, because it is exact and costs a
single pass over all pairs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..model_core import Kernel
from .grid import Grid, GridFunction
from .penalties import PenaltyParams, grad_psi1, grad_psi2, psi1, psi2, upsilon


def _pair_table(grid: Grid, u: GridFunction, v: GridFunction, alpha2: float, eps: float):
    S, F = grid.n_simplex, grid.n_flux
    wn = grid.flux_nodes()
    ups = upsilon(wn)
    A = u.values.reshape(S, F) / (1 - eps) - eps / (1 - eps) * ups[None, :]
    B = v.values.reshape(S, F) / (1 + eps) + eps / (1 + eps) * ups[None, :]
    P2 = psi2(wn[:, None, :], wn[None, :, :])  # (F, F)
    M = np.empty((S, S))
    # C[s, f'] = max_f A[s, f] - a2 P2[f, f']
    Cm = np.empty((S, F))
    for s in range(S):
        Cm[s] = np.max(A[s][:, None] - alpha2 * P2, axis=0)
    for s in range(S):
        M[s] = np.max(Cm[s][None, :] - B, axis=1)
    return A, B, P2, M


def _inner(A, B, P2, alpha2, s, sp_):
    return A[s][:, None] - alpha2 * P2 - B[sp_][None, :]


def _argmax_pair(A, B, P2, M, P1, alpha1, alpha2):
    """Exact maximizer with ties broken by lowest x index, then lowest y index."""
    T = M - alpha1 * P1
    best = T.max()
    S, F = A.shape
    for s in range(S):
        sps = np.flatnonzero(T[s] == best)
        if sps.size == 0:
            continue
        cands = []
        for sp_ in sps:
            inner = _inner(A, B, P2, alpha2, s, sp_)
            hit = np.argwhere(inner == M[s, sp_])
            f_min = hit[:, 0].min()
            fp_min = hit[hit[:, 0] == f_min, 1].min()
            cands.append((f_min, sp_, fp_min))
        f = min(c[0] for c in cands)
        sp_, fp = min((c[1], c[2]) for c in cands if c[0] == f)
        return s, f, sp_, fp, best
    raise RuntimeError("no maximizer found")


def momentum_gap(k: Kernel, mu_x, w_x, mu_y, w_y, alpha1: float, alpha2: float) -> float:
    """``H(x, p) - H(y, p)`` for ``p = a1 grad psi1 + a2 grad psi2`` at ``x``.

    Gradient antisymmetry makes the momentum at ``y`` (minus the
    ``y``-gradients) equal to the one at ``x``, so the gap reduces to
    ``sum_e [v_e(mu_x) - v_e(mu_y)] [exp(p_b - p_a + p_e) - 1]``.
    """
    sp_ = k.space
    ps = alpha1 * grad_psi1(mu_x, mu_y)
    pf = alpha2 * grad_psi2(w_x, w_y)
    expo = ps[sp_.targets] - ps[sp_.sources] + pf
    dv = k.edge_rates(mu_x) - k.edge_rates(mu_y)
    with np.errstate(over="ignore", invalid="ignore"):
        terms = np.where(dv != 0, dv * np.expm1(np.minimum(expo, 700.0)), 0.0)
    if np.any((expo > 700) & (dv != 0)):
        return float(np.sign(np.sum(dv[expo > 700])) * np.inf)
    return float(terms.sum())


@dataclass
class DoublingRow:
    alpha1: float
    x_node: int
    y_node: int
    mu_x: list
    w_x: list
    mu_y: list
    w_y: list
    phi: float
    a1_psi1: float
    a2_psi2: float
    hamiltonian_gap: float


def doubling_diagnostic(
    u: GridFunction,
    v: GridFunction,
    pp: PenaltyParams,
    ladder: Sequence[float],
    k: Kernel,
) -> dict:
    """Exhaustive pair maximization along an ``alpha1`` ladder (``alpha2``, ``eps`` from ``pp``)."""
    if u.grid is not v.grid and (u.grid.m, u.grid.w_max, u.grid.h_w) != (v.grid.m, v.grid.w_max, v.grid.h_w):
        raise ValueError("u and v must live on the same grid")
    grid = u.grid
    F = grid.n_flux
    mun = grid.simplex_nodes()
    wn = grid.flux_nodes()
    P1 = psi1(mun[:, None, :], mun[None, :, :])
    A, B, P2, M = _pair_table(grid, u, v, pp.alpha2, pp.epsilon)
    rows = []
    for a1 in ladder:
        s, f, sp_, fp, best = _argmax_pair(A, B, P2, M, P1, float(a1), pp.alpha2)
        rows.append(
            DoublingRow(
                alpha1=float(a1),
                x_node=int(s * F + f),
                y_node=int(sp_ * F + fp),
                mu_x=mun[s].tolist(),
                w_x=wn[f].tolist(),
                mu_y=mun[sp_].tolist(),
                w_y=wn[fp].tolist(),
                phi=float(best),
                a1_psi1=float(a1 * P1[s, sp_]),
                a2_psi2=float(pp.alpha2 * P2[f, fp]),
                hamiltonian_gap=momentum_gap(k, mun[s], wn[f], mun[sp_], wn[fp], float(a1), pp.alpha2),
            )
        )
    quantum = grid_quantum(u, pp.epsilon)
    a1p = [r.a1_psi1 for r in rows]
    gaps = [r.hamiltonian_gap for r in rows]
    half = len(rows) // 2
    return {
        "alpha2": pp.alpha2,
        "epsilon": pp.epsilon,
        "rows": [r.__dict__ for r in rows],
        "quantum": quantum,
        "a1_psi1_monotone": bool(all(b <= a + quantum for a, b in zip(a1p, a1p[1:]))),
        "a1_psi1_final": a1p[-1],
        "a2_psi2_max": max(r.a2_psi2 for r in rows),
        "gap_liminf": float(min(gaps[half:])) if rows else float("nan"),
    }


def grid_quantum(u: GridFunction, eps: float) -> float:
    """Largest change of ``u / (1 - eps)`` between simplex-adjacent nodes (one grid cell)."""
    grid = u.grid
    vals = u.values.reshape(grid.n_simplex, grid.n_flux) / (1 - eps)
    q = grid.space.q
    best = 0.0
    for j in range(q - 1):
        step = np.zeros(q, np.int64)
        step[j], step[-1] = 1, -1
        up = grid.counts + step
        ok = np.all(up >= 0, axis=1)
        r = grid.simplex_rank(up[ok])
        if r.size:
            best = max(best, float(np.max(np.abs(vals[ok] - vals[r]))))
    return best


def comparison_check(a: GridFunction, b: GridFunction, tol: float) -> dict:
    """Two-sided sup-norm agreement of two candidate solutions on a common grid."""
    if a.values.shape != b.values.shape:
        raise ValueError("candidates must share a grid")
    d = a.values - b.values
    i_ab, i_ba = int(np.argmax(d)), int(np.argmin(d))
    up, down = float(d[i_ab]), float(-d[i_ba])
    out = {"pass": bool(up <= tol and down <= tol), "max_a_minus_b": up, "max_b_minus_a": down, "tol": tol}
    if not out["pass"]:
        node = i_ab if up > tol else i_ba
        mu, w = a.grid.node_coords()
        out["violation"] = {"node": node, "mu": mu[node].tolist(), "w": w[node].tolist()}
    return out
