"""Tensor grid on (simplex) x (flux box) with interpolation and finite differences.

Simplex nodes are the compositions of ``m`` into ``q`` parts, in
lexicographic order of the count vectors. Flux nodes form a uniform box
``{0, h_w, ..., w_max}`` per edge, enumerated lexicographically over edges.
Node ``(s, f)`` has linear index ``s * F + f``.

Interpolation is piecewise linear on the Freudenthal (Kuhn) triangulation
in the cumulative coordinates ``z_j = m (mu_1 + ... + mu_j)`` for the
simplex part, and multilinear in the flux part.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..model_core import StateSpace

MAX_NODES = 5_000_000


def compositions(m: int, q: int) -> np.ndarray:
    """All non-negative integer vectors of length q summing to m, lexicographic."""
    out = []
    for c in itertools.product(range(m + 1), repeat=q - 1):
        s = sum(c)
        if s <= m:
            out.append(c + (m - s,))
    return np.array(sorted(out), dtype=np.int64)


@dataclass(frozen=True)
class Grid:
    space: StateSpace
    m: int
    w_max: float
    h_w: float
    max_nodes: int = MAX_NODES
    counts: np.ndarray = field(init=False, repr=False)
    levels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.m < 1 or not self.h_w > 0 or self.w_max < 0:
            raise ValueError("need m >= 1, h_w > 0, w_max >= 0")
        q = self.space.q
        n_simplex = math.comb(self.m + q - 1, q - 1)
        n_levels = int(math.floor(self.w_max / self.h_w + 1e-9)) + 1
        total = n_simplex * n_levels ** self.space.n_edges
        if total > self.max_nodes:
            raise ValueError(
                f"grid would have {total} nodes (q={q}, m={self.m}, {n_levels} flux levels per edge); "
                f"limit is {self.max_nodes}"
            )
        object.__setattr__(self, "counts", compositions(self.m, q))
        object.__setattr__(self, "levels", self.h_w * np.arange(n_levels))
        # rank lookup over the first q-1 counts (mixed radix m+1)
        radix = (self.m + 1) ** np.arange(q - 2, -1, -1)
        lut = np.full((self.m + 1) ** (q - 1), -1, dtype=np.int64)
        lut[self.counts[:, :-1] @ radix] = np.arange(len(self.counts))
        object.__setattr__(self, "_radix", radix)
        object.__setattr__(self, "_lut", lut)

    # sizes -----------------------------------------------------------------
    @property
    def n_simplex(self) -> int:
        return len(self.counts)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def n_flux(self) -> int:
        return self.n_levels ** self.space.n_edges

    @property
    def size(self) -> int:
        return self.n_simplex * self.n_flux

    @property
    def spacing(self) -> float:
        return 1.0 / self.m

    # coordinates -------------------------------------------------------------
    def simplex_nodes(self) -> np.ndarray:
        return self.counts / self.m

    def flux_index_tuples(self) -> np.ndarray:
        E, L = self.space.n_edges, self.n_levels
        idx = np.arange(self.n_flux)
        out = np.empty((self.n_flux, E), dtype=np.int64)
        for e in range(E - 1, -1, -1):
            out[:, e] = idx % L
            idx //= L
        return out

    def flux_nodes(self) -> np.ndarray:
        return self.levels[self.flux_index_tuples()]

    def node_coords(self) -> tuple[np.ndarray, np.ndarray]:
        mu = np.repeat(self.simplex_nodes(), self.n_flux, axis=0)
        w = np.tile(self.flux_nodes(), (self.n_simplex, 1))
        return mu, w

    def simplex_rank(self, counts: np.ndarray) -> np.ndarray:
        return self._lut[np.asarray(counts)[..., :-1] @ self._radix]

    def flux_rank(self, idx: np.ndarray) -> np.ndarray:
        E, L = self.space.n_edges, self.n_levels
        return np.asarray(idx) @ (L ** np.arange(E - 1, -1, -1))

    def function(self, fn) -> "GridFunction":
        """Tabulate ``fn(mu, w)`` (vectorized over nodes)."""
        mu, w = self.node_coords()
        return GridFunction(self, np.asarray(fn(mu, w), dtype=float).reshape(self.size))

    # interpolation -----------------------------------------------------------
    def _simplex_weights(self, mu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vertex ranks (P, q) and barycentric weights (P, q) of each point."""
        q, m = self.space.q, self.m
        mu = np.clip(np.asarray(mu, dtype=float), 0.0, None)
        mu = mu / mu.sum(axis=1, keepdims=True)
        z = np.clip(m * np.cumsum(mu[:, :-1], axis=1), 0.0, m)
        z = np.maximum.accumulate(z, axis=1)
        base = np.minimum(np.floor(z), m - 1).astype(np.int64)
        frac = z - base
        P, d = z.shape
        # larger fraction first; ties broken by larger coordinate index first
        order = np.lexsort((-np.arange(d)[None, :].repeat(P, 0), -frac), axis=1) if d > 1 else np.zeros((P, 1), np.int64)
        fs = np.take_along_axis(frac, order, axis=1)
        weights = np.empty((P, d + 1))
        weights[:, 0] = 1.0 - fs[:, 0]
        weights[:, 1:d] = fs[:, :-1] - fs[:, 1:]
        weights[:, d] = fs[:, -1]
        verts = np.empty((P, d + 1), dtype=np.int64)
        zz = base.copy()
        for j in range(d + 1):
            if j:
                zz[np.arange(P), order[:, j - 1]] += 1
            c = np.diff(np.concatenate([np.zeros((P, 1), np.int64), zz, np.full((P, 1), m)], axis=1), axis=1)
            bad = np.any(c < 0, axis=1)
            c[bad] = 0
            c[bad, 0] = m
            r = self.simplex_rank(c)
            verts[:, j] = r
            weights[bad, j] = 0.0
        return verts, weights

    def _flux_weights(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        E, L = self.space.n_edges, self.n_levels
        w = np.clip(np.asarray(w, dtype=float), 0.0, self.levels[-1])
        if L == 1:
            return np.zeros((w.shape[0], 1), np.int64), np.ones((w.shape[0], 1))
        x = w / self.h_w
        base = np.minimum(np.floor(x), L - 2).astype(np.int64)
        frac = x - base
        corners = np.array(list(itertools.product((0, 1), repeat=E)), dtype=np.int64)  # (2^E, E)
        idx = base[:, None, :] + corners[None, :, :]
        wt = np.prod(np.where(corners[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :]), axis=2)
        return self.flux_rank(idx), wt

    def interp_matrix(self, mu: np.ndarray, w: np.ndarray) -> sp.csr_matrix:
        """Sparse (P, N) matrix of interpolation weights."""
        sv, sw = self._simplex_weights(mu)
        fv, fw = self._flux_weights(w)
        cols = (sv[:, :, None] * self.n_flux + fv[:, None, :]).reshape(len(sv), -1)
        vals = (sw[:, :, None] * fw[:, None, :]).reshape(len(sv), -1)
        rows = np.repeat(np.arange(len(sv)), cols.shape[1])
        mat = sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(len(sv), self.size))
        mat.eliminate_zeros()
        return mat

    def interpolate(self, values: np.ndarray, mu: np.ndarray, w: np.ndarray) -> np.ndarray:
        return self.interp_matrix(np.atleast_2d(mu), np.atleast_2d(w)) @ np.asarray(values, dtype=float)

    # finite differences --------------------------------------------------------
    def gradient(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Finite-difference momenta at every node.

        Returns ``(p_state (N, q), p_flux (N, E), interior (N,) bool)``. The
        state derivative is taken along ``e_j - e_q`` for ``j < q`` and
        ``p_state = (g_1, ..., g_{q-1}, 0)``; central where both neighbours
        exist, one-sided otherwise. ``interior`` marks nodes where every
        difference was central.
        """
        q, E, m = self.space.q, self.space.n_edges, self.m
        vals = np.asarray(values, dtype=float).reshape(self.n_simplex, self.n_flux)
        F = self.n_flux
        ps = np.zeros((self.n_simplex, F, q))
        interior = np.ones((self.n_simplex, F), dtype=bool)
        h = 1.0 / m
        for j in range(q - 1):
            step = np.zeros(q, np.int64)
            step[j], step[-1] = 1, -1
            up, dn = self.counts + step, self.counts - step
            ok_up = np.all(up >= 0, axis=1)
            ok_dn = np.all(dn >= 0, axis=1)
            r_up = np.where(ok_up, self.simplex_rank(np.where(ok_up[:, None], up, 0)), 0)
            r_dn = np.where(ok_dn, self.simplex_rank(np.where(ok_dn[:, None], dn, 0)), 0)
            fu, fd, f0 = vals[r_up], vals[r_dn], vals
            g = np.where(
                (ok_up & ok_dn)[:, None],
                (fu - fd) / (2 * h),
                np.where(ok_up[:, None], (fu - f0) / h, np.where(ok_dn[:, None], (f0 - fd) / h, 0.0)),
            )
            ps[:, :, j] = g
            interior &= (ok_up & ok_dn)[:, None]
        pf = np.zeros((self.n_simplex, F, E))
        L = self.n_levels
        tup = self.flux_index_tuples()
        stride = L ** np.arange(E - 1, -1, -1)
        for e in range(E):
            if L == 1:
                continue
            k = tup[:, e]
            hi = np.minimum(k + 1, L - 1)
            lo = np.maximum(k - 1, 0)
            f_hi = vals[:, np.arange(F) + (hi - k) * stride[e]]
            f_lo = vals[:, np.arange(F) + (lo - k) * stride[e]]
            pf[:, :, e] = (f_hi - f_lo) / ((hi - lo) * self.h_w)
            interior &= ((k > 0) & (k < L - 1))[None, :]
        return ps.reshape(-1, q), pf.reshape(-1, E), interior.ravel()


@dataclass
class GridFunction:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.size,):
            raise ValueError("value count does not match the grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function values must be finite")

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def at(self, mu, w) -> np.ndarray:
        return self.grid.interpolate(self.values, mu, w)

    def to_grid(self, other: Grid) -> "GridFunction":
        mu, w = other.node_coords()
        return GridFunction(other, self.grid.interpolate(self.values, mu, w))

    def to_csv(self, path=None) -> str:
        mu, w = self.grid.node_coords()
        sp_ = self.grid.space
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["node"] + [f"mu_{a + 1}" for a in range(sp_.q)] + sp_.edge_labels() + ["value"])
        for i in range(self.grid.size):
            wr.writerow([i, *(f"{x:.17g}" for x in mu[i]), *(f"{x:.17g}" for x in w[i]), f"{self.values[i]:.17g}"])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text
