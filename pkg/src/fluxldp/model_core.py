"""State space, measures, fluxes and jump kernels.

States are 0-based internally (``0..q-1``); file formats and reports use
1-based labels. Kernels are evaluated as ``q x q`` intensity matrices with a
zero diagonal, so one call covers every directed edge and broadcasts over
leading batch dimensions of the measure argument.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

MASS_TOL = 1e-12


@dataclass(frozen=True)
class StateSpace:
    """The states ``0..q-1`` and the lexicographically ordered edge list."""

    q: int
    gamma: tuple = field(init=False)

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 2:
            raise ValueError(f"q must be an integer >= 2, got {self.q!r}")
        edges = tuple((a, b) for a in range(self.q) for b in range(self.q) if a != b)
        object.__setattr__(self, "gamma", edges)

    @property
    def n_edges(self) -> int:
        return len(self.gamma)

    @property
    def sources(self) -> np.ndarray:
        return np.array([a for a, _ in self.gamma], dtype=np.intp)

    @property
    def targets(self) -> np.ndarray:
        return np.array([b for _, b in self.gamma], dtype=np.intp)

    def edge_index(self, a: int, b: int) -> int:
        if a == b or not (0 <= a < self.q and 0 <= b < self.q):
            raise ValueError(f"({a}, {b}) is not an edge")
        return a * (self.q - 1) + (b if b < a else b - 1)

    def edge_vector(self, matrix: np.ndarray) -> np.ndarray:
        """Gather the off-diagonal entries of ``(..., q, q)`` in edge order."""
        return matrix[..., self.sources, self.targets]

    def edge_matrix(self, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec, dtype=float)
        out = np.zeros(vec.shape[:-1] + (self.q, self.q))
        out[..., self.sources, self.targets] = vec
        return out

    def divergence(self, w: np.ndarray) -> np.ndarray:
        """Net inflow per state: ``sum_b w[(b,a)] - w[(a,b)]``."""
        w = np.asarray(w, dtype=float)
        out = np.zeros(w.shape[:-1] + (self.q,))
        for e, (a, b) in enumerate(self.gamma):
            out[..., b] += w[..., e]
            out[..., a] -= w[..., e]
        return out

    def edge_labels(self) -> list[str]:
        return [f"w_{a + 1}{b + 1}" if self.q < 10 else f"w_{a + 1}_{b + 1}" for a, b in self.gamma]


def as_measure(mu, q: Optional[int] = None) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    if q is not None and mu.shape[-1] != q:
        raise ValueError(f"measure has {mu.shape[-1]} entries, expected {q}")
    if np.any(mu < 0) or np.any(np.abs(mu.sum(axis=-1) - 1.0) > MASS_TOL):
        raise ValueError(f"not a probability vector: {mu}")
    return mu


def as_flux(w, n_edges: Optional[int] = None) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if n_edges is not None and w.shape[-1] != n_edges:
        raise ValueError(f"flux has {w.shape[-1]} entries, expected {n_edges}")
    if np.any(w < 0):
        raise ValueError("flux entries must be non-negative")
    return w


class Momentum(NamedTuple):
    state: np.ndarray
    flux: np.ndarray


def project_simplex(mu: np.ndarray) -> np.ndarray:
    """Clip at zero and renormalize (the projection used by the ODE stepper)."""
    mu = np.clip(mu, 0.0, None)
    return mu / mu.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# kernels


@dataclass(frozen=True)
class Kernel:
    """Limiting jump intensity ``v(a, b, mu)``.

    ``fn`` maps measures of shape ``(..., q)`` to intensity matrices of shape
    ``(..., q, q)``. ``dagger`` (optional) maps per-source masses ``(..., q)``
    to the monotone factor, ``ddagger`` maps measures to the positive factor;
    on non-zero edges ``fn == dagger(mu) * ddagger(mu)``.
    """

    space: StateSpace
    fn: Callable[[np.ndarray], np.ndarray]
    zero_edges: frozenset = frozenset()
    dagger: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ddagger: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "kernel"

    def rates(self, mu) -> np.ndarray:
        out = np.array(self.fn(np.asarray(mu, dtype=float)), dtype=float)
        q = self.space.q
        out[..., np.arange(q), np.arange(q)] = 0.0
        for a, b in self.zero_edges:
            out[..., a, b] = 0.0
        return out

    def edge_rates(self, mu) -> np.ndarray:
        return self.space.edge_vector(self.rates(mu))

    def __call__(self, a: int, b: int, mu) -> float:
        return float(self.rates(mu)[..., a, b])

    @property
    def has_decomposition(self) -> bool:
        return self.dagger is not None and self.ddagger is not None


@dataclass(frozen=True)
class TimeKernel:
    """Time-periodic kernel ``v0(t, a, b, mu)`` with period ``period``."""

    space: StateSpace
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    period: float
    zero_edges: frozenset = frozenset()
    dagger: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ddagger: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    name: str = "time_kernel"

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError("period must be positive")

    def rates(self, t, mu) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.array(self.fn(t, np.asarray(mu, dtype=float)), dtype=float)
        q = self.space.q
        out[..., np.arange(q), np.arange(q)] = 0.0
        for a, b in self.zero_edges:
            out[..., a, b] = 0.0
        return out

    def at(self, t: float) -> Kernel:
        """Freeze time, giving an ordinary kernel."""
        dd = None if self.ddagger is None else (lambda mu, t=t: self.ddagger(np.asarray(t), mu))
        return Kernel(
            self.space,
            lambda mu, t=t: self.fn(np.asarray(t), mu),
            self.zero_edges,
            self.dagger,
            dd,
            name=f"{self.name}@t={t:g}",
        )


def _rate_matrix(space: StateSpace, r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.ndim == 0:
        r = np.full((space.q, space.q), float(r))
    if r.shape != (space.q, space.q):
        raise ValueError(f"rate matrix must be {space.q}x{space.q}")
    r = r.copy()
    np.fill_diagonal(r, 0.0)
    if np.any(r < 0):
        raise ValueError("base rates r(a, b) must be non-negative")
    return r


def _zero_edges_of(r: np.ndarray) -> frozenset:
    q = r.shape[0]
    return frozenset((a, b) for a in range(q) for b in range(q) if a != b and r[a, b] == 0.0)


def constant_kernel(space: StateSpace, r) -> Kernel:
    """``v(a, b, mu) = mu(a) r(a, b)``."""
    r = _rate_matrix(space, r)

    def fn(mu):
        return mu[..., :, None] * r

    def dagger(x):
        return x[..., :, None] * r

    def ddagger(mu):
        return np.ones(mu.shape[:-1] + (space.q, space.q))

    return Kernel(space, fn, _zero_edges_of(r), dagger, ddagger, name="constant")


def glauber_kernel(space: StateSpace, r, grad_v: Callable[[np.ndarray], np.ndarray]) -> Kernel:
    """Glauber dynamics for a mean-field potential.

    ``v(a, b, mu) = mu(a) r(a, b) exp(grad_a V(mu)/2 - grad_b V(mu)/2)`` with
    the decomposition ``mu(a) r(a, b)`` times the exponential factor.
    """
    r = _rate_matrix(space, r)

    def ddagger(mu):
        g = np.asarray(grad_v(mu), dtype=float)
        return np.exp(0.5 * g[..., :, None] - 0.5 * g[..., None, :])

    def dagger(x):
        return x[..., :, None] * r

    def fn(mu):
        return dagger(mu) * ddagger(mu)

    return Kernel(space, fn, _zero_edges_of(r), dagger, ddagger, name="glauber")


@dataclass(frozen=True)
class PottsPotential:
    """``V(mu) = -beta * sum_a mu_a^2 - sum_a field_a mu_a``.

    ``modulation`` (period ``period``) multiplies the field term by
    ``sin(2 pi t / period)`` in the time-dependent variant.
    """

    beta: float = 0.0
    field: tuple = ()

    def _h(self, q):
        return np.zeros(q) if not self.field else np.asarray(self.field, dtype=float)

    def value(self, mu, t=None, period: float = 1.0):
        mu = np.asarray(mu, dtype=float)
        h = self._h(mu.shape[-1])
        amp = 1.0 if t is None else np.sin(2 * np.pi * np.asarray(t) / period)[..., None]
        return -self.beta * np.sum(mu**2, axis=-1) - np.sum(amp * h * mu, axis=-1)

    def grad(self, mu, t=None, period: float = 1.0):
        mu = np.asarray(mu, dtype=float)
        h = self._h(mu.shape[-1])
        amp = 1.0 if t is None else np.sin(2 * np.pi * np.asarray(t) / period)[..., None]
        return -2.0 * self.beta * mu - amp * h

    def max_half_jump(self, q: int, n: Optional[int] = None) -> float:
        """Upper bound for ``-n/2 (V(mu - d_a/n + d_b/n) - V(mu))`` and its limit."""
        h = self._h(q)
        spread = float(np.max(h) - np.min(h)) if h.size else 0.0
        extra = 0.0 if n is None else 1.0 / n
        return abs(self.beta) * (1.0 + extra) + 0.5 * spread


def glauber_periodic_kernel(space: StateSpace, r, potential: PottsPotential, period: float) -> TimeKernel:
    """Glauber kernel for a potential whose field oscillates with ``period``."""
    r = _rate_matrix(space, r)

    def ddagger(t, mu):
        g = potential.grad(mu, t=t, period=period)
        return np.exp(0.5 * g[..., :, None] - 0.5 * g[..., None, :])

    def dagger(x):
        return x[..., :, None] * r

    def fn(t, mu):
        return dagger(mu) * ddagger(t, mu)

    return TimeKernel(space, fn, period, _zero_edges_of(r), dagger, ddagger, name="glauber_periodic")


def modulated_kernel(space: StateSpace, r, amplitude, period: float, phase=0.0) -> TimeKernel:
    """``v0(t, a, b, mu) = mu(a) r(a, b) (1 + A(a, b) sin(2 pi t / period + phase(a, b)))``.

    The oscillation has mean zero over a period; ``|A| <= 1`` keeps it
    non-negative.
    """
    r = _rate_matrix(space, r)
    amp = np.broadcast_to(np.asarray(amplitude, dtype=float), (space.q, space.q)).copy()
    ph = np.broadcast_to(np.asarray(phase, dtype=float), (space.q, space.q)).copy()
    if np.any(np.abs(amp) > 1):
        raise ValueError("modulation amplitude must satisfy |A| <= 1")

    def ddagger(t, mu):
        t = np.asarray(t, dtype=float)[..., None, None]
        shape = np.broadcast_shapes(t.shape, mu.shape[:-1] + (1, 1))
        return np.broadcast_to(1.0 + amp * np.sin(2 * np.pi * t / period + ph), shape[:-2] + (space.q, space.q))

    def dagger(x):
        return x[..., :, None] * r

    def fn(t, mu):
        return dagger(mu) * ddagger(t, mu)

    # with |A| = 1 the second factor touches zero at isolated times; its
    # period average is 1, so the averaged kernel is still proper
    return TimeKernel(space, fn, period, _zero_edges_of(r), dagger, ddagger, name="constant_periodic")


def average_kernel(tk: TimeKernel, quad_points: int = 256) -> Kernel:
    """Period average of a time kernel by the composite trapezoidal rule.

    For a periodic integrand the trapezoidal rule on ``quad_points`` nodes
    (both endpoints included) reduces to the mean of the first
    ``quad_points - 1`` samples.
    """
    if quad_points < 2:
        raise ValueError("quad_points must be >= 2")
    nodes = np.linspace(0.0, tk.period, quad_points)
    weights = np.full(quad_points, 1.0 / (quad_points - 1))
    weights[[0, -1]] *= 0.5

    def _avg(g, mu):
        mu = np.asarray(mu, dtype=float)
        acc = np.zeros(mu.shape[:-1] + (tk.space.q, tk.space.q))
        # blocks of time nodes on a leading axis; block size bounds memory
        block = max(1, min(quad_points, 2**20 // max(1, acc.size)))
        pad = (1,) * (mu.ndim - 1)
        for lo in range(0, quad_points, block):
            t = nodes[lo : lo + block].reshape((-1,) + pad)
            vals = np.broadcast_to(g(t, mu), (t.shape[0],) + acc.shape)
            acc = acc + np.tensordot(weights[lo : lo + block], vals, axes=(0, 0))
        return acc

    def fn(mu):
        return _avg(tk.fn, mu)

    ddagger = None
    if tk.dagger is not None and tk.ddagger is not None:
        def ddagger(mu):
            return _avg(tk.ddagger, mu)

    return Kernel(tk.space, fn, tk.zero_edges, tk.dagger, ddagger, name=f"avg({tk.name})")


# ---------------------------------------------------------------------------
# proper-kernel check


def simplex_vertices_and_midpoints(q: int) -> np.ndarray:
    pts = list(np.eye(q))
    for a, b in itertools.combinations(range(q), 2):
        m = np.zeros(q)
        m[[a, b]] = 0.5
        pts.append(m)
    return np.array(pts)


def sample_simplex(q: int, samples: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform Dirichlet samples plus every vertex and edge midpoint."""
    draws = rng.dirichlet(np.ones(q), size=samples)
    return np.vstack([simplex_vertices_and_midpoints(q), draws])


@dataclass
class KernelReport:
    passed: bool
    violations: list
    n_points: int

    def to_dict(self) -> dict:
        return {"pass": self.passed, "violations": self.violations, "n_points": self.n_points}


def proper_kernel_check(
    k: Kernel,
    samples: int = 1000,
    seed: int = 0,
    monotone_points: int = 1000,
    continuity_mesh: float = 1e-3,
    continuity_tol: float = 1e-6,
    max_report: int = 20,
) -> KernelReport:
    """Sampled verification of the proper-kernel conditions.

    Checks, at sampled measures: vanishing exactly when the source mass is
    zero, strict positivity otherwise, the factorization and positivity of
    the second factor, monotonicity of the first factor on a grid, and a
    statistical continuity modulus (perturbations of size ``continuity_mesh``
    change ``v`` by at most ``continuity_tol`` per unit of mesh, relative to
    the local scale of ``v``).
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    q = k.space.q
    rng = np.random.default_rng(seed)
    mus = sample_simplex(q, samples, rng)
    v = k.rates(mus)
    violations: list[dict] = []

    def report(kind, a, b, mu, detail):
        if len(violations) < max_report:
            violations.append(
                {"condition": kind, "edge": [a + 1, b + 1], "mu": [float(x) for x in np.atleast_1d(mu)], "detail": detail}
            )
        else:
            violations.append(None)

    active = [(a, b) for (a, b) in k.space.gamma if (a, b) not in k.zero_edges]
    if np.any(~np.isfinite(v)) or np.any(v < 0):
        bad = np.argwhere(~np.isfinite(v) | (v < 0))[0]
        report("nonnegative", int(bad[1]), int(bad[2]), mus[bad[0]], "negative or non-finite value")

    for a, b in active:
        vab = v[:, a, b]
        zero_src = mus[:, a] == 0.0
        for i in np.flatnonzero(zero_src & (vab != 0.0)):
            report("a", a, b, mus[i], f"v={vab[i]:.3g} but mu(a)=0")
        for i in np.flatnonzero(~zero_src & ~(vab > 0.0)):
            report("a", a, b, mus[i], f"v={vab[i]:.3g} but mu(a)>0")

    if k.has_decomposition:
        dd = np.asarray(k.ddagger(mus), dtype=float)
        dg = np.asarray(k.dagger(mus), dtype=float)
        grid = np.linspace(0.0, 1.0, monotone_points)
        xs = np.repeat(grid[:, None], q, axis=1)
        dg_grid = np.asarray(k.dagger(xs), dtype=float)
        for a, b in active:
            for i in np.flatnonzero(~(dd[:, a, b] > 0) | ~np.isfinite(dd[:, a, b])):
                report("b", a, b, mus[i], "second factor not strictly positive")
            prod = dg[:, a, b] * dd[:, a, b]
            scale = np.maximum(1.0, np.abs(v[:, a, b]))
            for i in np.flatnonzero(np.abs(prod - v[:, a, b]) > 1e-10 * scale):
                report("b", a, b, mus[i], "factorization does not reproduce v")
            steps = np.diff(dg_grid[:, a, b])
            for j in np.flatnonzero(steps < -1e-14 * np.maximum(1.0, np.abs(dg_grid[:-1, a, b]))):
                report("b", a, b, [grid[j], grid[j + 1]], "first factor decreasing in the source mass")
    else:
        for a, b in active:
            violations.append(
                {"condition": "b", "edge": [a + 1, b + 1], "mu": [], "detail": "no decomposition supplied"}
            )

    # continuity: the change over a step of size mesh must shrink when the
    # step is refined tenfold (a jump would not); boundary points step inward
    n_struct = q + q * (q - 1) // 2
    direction = rng.normal(size=mus.shape)
    direction[:n_struct] = 1.0 / q - mus[:n_struct]
    direction -= direction.mean(axis=1, keepdims=True)
    flat = np.max(np.abs(direction), axis=1) < 1e-12
    direction[flat] = np.eye(q)[0] - 1.0 / q
    direction /= np.max(np.abs(direction), axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        room = np.where(direction < 0, mus / -direction, np.inf).min(axis=1)
    h = np.minimum(continuity_mesh, room)[:, None]
    coarse = np.abs(k.rates(mus + h * direction) - v)
    fine = np.abs(k.rates(mus + 0.1 * h * direction) - v)
    for a, b in active:
        bad = (fine[:, a, b] > 0.5 * coarse[:, a, b] + continuity_tol) | ~np.isfinite(fine[:, a, b])
        for i in np.flatnonzero(bad):
            report("continuity", a, b, mus[i], f"|dv| = {fine[i, a, b]:.3g} at mesh {0.1 * h[i, 0]:.1e}")

    shown = [x for x in violations if x is not None]
    return KernelReport(passed=not violations, violations=shown, n_points=len(mus))


def is_periodic(tk: TimeKernel, samples: int = 64, seed: int = 0, tol: float = 1e-12) -> bool:
    rng = np.random.default_rng(seed)
    mus = rng.dirichlet(np.ones(tk.space.q), size=samples)
    ts = rng.uniform(0, 10 * tk.period, size=samples)
    a = tk.rates(ts, mus)
    b = tk.rates(ts + tk.period, mus)
    return bool(np.all(np.abs(a - b) <= tol * np.maximum(1.0, np.abs(a))))


def sup_rate(k: Kernel, samples: int = 2000, seed: int = 0) -> np.ndarray:
    """Sampled ``sup_mu v(a, b, mu)`` per edge (vertices included)."""
    mus = sample_simplex(k.space.q, samples, np.random.default_rng(seed))
    return k.edge_rates(mus).max(axis=0)


def kernel_rate_bound(k: Kernel, samples: int = 2000, seed: int = 0) -> float:
    """Sampled sup of ``v(a, b, mu) / mu(a)`` (a per-particle rate bound)."""
    mus = sample_simplex(k.space.q, samples, np.random.default_rng(seed))
    v = k.rates(mus)
    with np.errstate(divide="ignore", invalid="ignore"):
        per = np.where(mus[..., :, None] > 0, v / mus[..., :, None], 0.0)
    return float(np.max(per))


def expected_flux_rate(k: Kernel, mu) -> float:
    return float(k.edge_rates(mu).sum())


__all__ = [
    "StateSpace",
    "Momentum",
    "Kernel",
    "TimeKernel",
    "PottsPotential",
    "as_measure",
    "as_flux",
    "project_simplex",
    "constant_kernel",
    "glauber_kernel",
    "glauber_periodic_kernel",
    "modulated_kernel",
    "average_kernel",
    "proper_kernel_check",
    "KernelReport",
    "sample_simplex",
    "is_periodic",
    "sup_rate",
    "kernel_rate_bound",
]

