"""Command-line entry point: ``fluxldp <subcommand> [--config FILE] [--set section.key=value ...]``.

Exit codes: 0 success, 1 configuration or validation error, 2 numerical failure.
Every output file carries the subcommand, the config hash and the seed in
its name and in its contents.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from typing import Callable

import numpy as np
import yaml
from pydantic import ValidationError

from . import hj_lab
from .config import ConfigError, ExperimentConfig, load_config
from .hj_lab import (
    Ffn_sup,
    Grid,
    PenaltyParams,
    comparison_check,
    doubling_diagnostic,
    log_catalog,
    resolvent_solve,
    residual_table,
)
from .ldp_experiments import (
    TubeEvent,
    containment_trend,
    default_replicas,
    ldp_decay_fit,
    mc_tube_probability,
    periodic_averaging_experiment,
)
from .model_core import Momentum, kernel_rate_bound, proper_kernel_check
from .particle_sim import (
    MicroRates,
    ParticleConfig,
    RateBoundError,
    Trajectory,
    counts_from_measure,
    empirical_trajectory,
    glauber_micro_rates,
    interpolate_trajectory,
    lln_gap,
    mean_field_ode,
    mean_field_rates,
    periodic_mean_field_rates,
    simulate,
)
from .rate_calculus import (
    HamiltonianOverflow,
    VelocityPair,
    action_integral,
    contracted_rate,
    hamiltonian,
    lagrangian,
    legendre_dual,
    legendre_dual_closed,
    rel_entropy,
)

SUBCOMMANDS = (
    "simulate",
    "lln",
    "rate-eval",
    "action",
    "hj-solve",
    "hj-doubling",
    "hj-convergence",
    "ldp-verify",
    "periodic-verify",
    "containment-check",
    "kernel-check",
)


class NumericalFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# helpers


class Run:
    """Output bookkeeping for one subcommand invocation."""

    def __init__(self, name: str, cfg: ExperimentConfig):
        self.name = name
        self.cfg = cfg
        self.hash = cfg.config_hash()
        self.seed = cfg.simulation.seed
        self.dir = cfg.output.dir
        os.makedirs(self.dir, exist_ok=True)
        self.files: list[str] = []

    @property
    def tag(self) -> str:
        return f"{self.name}_{self.hash}_s{self.seed}"

    def _path(self, suffix: str) -> str:
        p = os.path.join(self.dir, f"{self.tag}_{suffix}")
        self.files.append(p)
        return p

    def meta(self) -> dict:
        return {"subcommand": self.name, "config_hash": self.hash, "seed": self.seed}

    def write_json(self, suffix: str, payload: dict) -> str:
        body = {**self.meta(), "config": self.cfg.model_dump(mode="json"), **payload}
        path = self._path(suffix + ".json")
        with open(path, "w") as fh:
            json.dump(_jsonable(body), fh, indent=2, sort_keys=True, allow_nan=True)
            fh.write("\n")
        return path

    def write_csv(self, suffix: str, text: str) -> str:
        path = self._path(suffix + ".csv")
        with open(path, "w") as fh:
            fh.write(f"# subcommand={self.name} config_hash={self.hash} seed={self.seed}\n")
            fh.write(text)
        return path

    def write_config(self) -> str:
        path = self._path("config.yaml")
        with open(path, "w") as fh:
            fh.write(f"# subcommand={self.name} config_hash={self.hash} seed={self.seed}\n")
            fh.write(self.cfg.to_yaml())
        return path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def _table_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    keys = list(rows[0].keys())
    lines = [",".join(keys)]
    for r in rows:
        lines.append(",".join(_fmt(r[k]) for k in keys))
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    if isinstance(v, (list, tuple)):
        return '"' + " ".join(_fmt(x) for x in v) + '"'
    return str(v)


def h_function(name: str) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    table = {
        "mu1": lambda mu, w: mu[:, 0],
        "mu1_sq": lambda mu, w: mu[:, 0] ** 2,
        "cos": lambda mu, w: np.cos(np.pi * mu[:, 0]),
        "const": lambda mu, w: np.ones(mu.shape[0]),
        "mu1_flux": lambda mu, w: mu[:, 0] + 0.1 * np.sum(w / (1 + w), axis=1),
    }
    return table[name]


def micro_rates(cfg: ExperimentConfig, n: int) -> MicroRates:
    """Finite-n rates for the configured kernel family."""
    kc, sp = cfg.kernel, cfg.space()
    if kc.family == "glauber":
        return glauber_micro_rates(sp, n, kc.r, cfg.potential())
    if kc.family == "constant":
        return mean_field_rates(cfg.build_kernel(), n, kc.rate_bound)
    tk = cfg.time_kernel()
    bound = kc.rate_bound
    if kc.family == "glauber_periodic":
        return glauber_micro_rates(sp, n, kc.r, cfg.potential(), period=kc.period, gamma=cfg.simulation.gamma)
    if bound is None:
        raise ConfigError("kernel.rate_bound is required for time-dependent rates (thinning)")
    return periodic_mean_field_rates(tk, n, cfg.simulation.gamma, bound)


def _workers(cfg: ExperimentConfig) -> int:
    return cfg.simulation.workers or (os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(run: Run) -> str:
    cfg = run.cfg
    n, T = cfg.simulation.n, cfg.simulation.T
    mr = micro_rates(cfg, n)
    init = ParticleConfig.from_counts(cfg.space(), counts_from_measure(cfg.mu0(), n))
    ps = simulate(mr, init, T, cfg.simulation.seed)
    traj = empirical_trajectory(ps, np.linspace(0.0, T, cfg.simulation.grid_points))
    run.write_csv("path", ps.to_csv())
    run.write_csv("trajectory", traj.to_csv())
    fin = ps.final_config()
    run.write_json(
        "summary",
        {
            "n": n,
            "T": T,
            "events": ps.n_events,
            "final_counts": fin.counts(cfg.kernel.q).tolist(),
            "final_flux_counts": fin.flux_counts.tolist(),
            "divergence_defect": traj.divergence_defect(),
        },
    )
    return f"{ps.n_events} events, final mu={np.round(traj.mu[-1], 6).tolist()}"


def cmd_lln(run: Run) -> str:
    cfg = run.cfg
    k = cfg.build_kernel()
    rep = lln_gap(
        lambda n: micro_rates(cfg, n),
        k,
        cfg.mu0(),
        cfg.simulation.T,
        cfg.simulation.n_list,
        cfg.simulation.replicas,
        seed=cfg.simulation.seed,
        grid_points=cfg.simulation.grid_points,
        ode_dt=cfg.simulation.ode_dt,
        workers=_workers(cfg),
    )
    run.write_json("report", rep)
    run.write_csv("gaps", _table_csv(rep["rows"]))
    return "gap_mu by n: " + ", ".join(f"{r['n']}:{r['gap_mu']:.4g}" for r in rep["rows"])


def cmd_rate_eval(run: Run) -> str:
    cfg = run.cfg
    k = cfg.build_kernel()
    sp = cfg.space()
    mu = np.asarray(cfg.rate.mu, float) if cfg.rate.mu is not None else cfg.mu0()
    v = k.edge_rates(mu)
    w_dot = np.asarray(cfg.rate.w_dot, float) if cfg.rate.w_dot is not None else 2.0 * v
    if w_dot.shape != (sp.n_edges,):
        raise ConfigError(f"rate.w_dot must have {sp.n_edges} entries")
    ps = np.asarray(cfg.rate.p_state, float) if cfg.rate.p_state is not None else np.zeros(sp.q)
    pf = np.asarray(cfg.rate.p_flux, float) if cfg.rate.p_flux is not None else np.zeros(sp.n_edges)
    vel = VelocityPair(sp.divergence(w_dot), w_dot)
    with warnings.catch_warnings():
        warnings.simplefilter("error", HamiltonianOverflow)
        try:
            H = hamiltonian(mu, Momentum(ps, pf), k)
        except HamiltonianOverflow as exc:
            raise NumericalFailure(str(exc)) from exc
    out = {
        "mu": mu,
        "v": v,
        "w_dot": w_dot,
        "mu_dot": vel.mu_dot,
        "relative_entropy": rel_entropy(w_dot, v),
        "hamiltonian": H,
        "lagrangian": lagrangian(mu, vel, k),
        "legendre_dual_closed": legendre_dual_closed(mu, vel, k),
        "legendre_dual": legendre_dual(mu, vel, k),
    }
    run.write_json("values", out)
    return f"H={H:.12g} L={out['lagrangian']:.12g} dual={out['legendre_dual']:.12g}"


def cmd_action(run: Run) -> str:
    cfg = run.cfg
    k = cfg.build_kernel()
    T = cfg.simulation.T
    ode = mean_field_ode(k, cfg.mu0(), T, cfg.simulation.ode_dt)
    a = action_integral(ode, k)
    # a non-typical comparison path: the ODE measure path with every flux doubled is
    # infeasible, so use the frozen initial measure instead
    frozen = Trajectory(ode.times, np.tile(ode.mu[0], (ode.times.size, 1)), np.zeros_like(ode.w), k.space)
    a_frozen = action_integral(frozen, k)
    J = contracted_rate(ode.times[::10], ode.mu[::10], k)
    run.write_csv("ode_trajectory", ode.to_csv())
    run.write_json(
        "values",
        {"T": T, "ode_action": a, "frozen_action": a_frozen, "frozen_expected": T * float(k.edge_rates(ode.mu[0]).sum()), "ode_contracted_rate": J},
    )
    return f"ode action={a:.3e} frozen action={a_frozen:.12g} J(ode)={J:.3e}"


def _solve(cfg: ExperimentConfig, grid: Grid, catalog) -> hj_lab.resolvent.ResolventResult:
    k = cfg.build_kernel()
    h = grid.function(h_function(cfg.hj.h))
    return resolvent_solve(h, cfg.hj.lam, k, grid, catalog, cfg.hj.dt, cfg.hj.tol, cfg.hj.max_iter)


def _grid(cfg: ExperimentConfig, m=None) -> Grid:
    g = cfg.grid
    return Grid(cfg.space(), m or g.m, g.w_max, g.h_w, g.max_nodes)


def cmd_hj_solve(run: Run) -> str:
    cfg = run.cfg
    grid = _grid(cfg)
    sol = _solve(cfg, grid, cfg.hj.catalog)
    k = cfg.build_kernel()
    table = residual_table(
        k,
        cfg.hj.lam,
        h_function(cfg.hj.h),
        cfg.hj.residual_ms,
        w_max=cfg.hj.residual_w_max,
        h_w=cfg.grid.h_w,
        controls=log_catalog(2.0, cfg.hj.residual_catalog_points),
        dt_factor=cfg.hj.residual_dt_factor,
        tol=cfg.hj.tol,
    )
    run.write_csv("solution", sol.f.to_csv())
    run.write_csv("residuals", _table_csv(table))
    run.write_json("summary", {"nodes": grid.size, "iterations": sol.iterations, "sup_norm": sol.f.sup_norm(), "residual_table": table})
    return f"{grid.size} nodes, {sol.iterations} sweeps, residuals " + ", ".join(
        f"m={r['m']}:{r['max_interior_residual']:.3g}" for r in table
    )


def cmd_hj_doubling(run: Run) -> str:
    cfg = run.cfg
    grid = _grid(cfg)
    k = cfg.build_kernel()
    u = _solve(cfg, grid, cfg.hj.catalog).f
    v = _solve(cfg, grid, cfg.hj.catalog_b).f
    reports = []
    for eps in cfg.penalty.epsilon_ladder:
        pp = PenaltyParams(cfg.penalty.alpha1_ladder[0], cfg.penalty.alpha2, eps)
        reports.append(doubling_diagnostic(u, v, pp, cfg.penalty.alpha1_ladder, k))
    run.write_json("report", {"grid_spacing": grid.spacing, "h_w": grid.h_w, "reports": reports})
    rows = [{"epsilon": r["epsilon"], **row} for r in reports for row in r["rows"]]
    run.write_csv("ladder", _table_csv(rows))
    last = reports[-1]
    return f"a1*psi1 final={last['a1_psi1_final']:.3g} monotone={last['a1_psi1_monotone']} gap liminf={last['gap_liminf']:.3g}"


def cmd_hj_convergence(run: Run) -> str:
    cfg = run.cfg
    fine = _grid(cfg)
    coarse_m = cfg.hj.coarse_m or max(1, cfg.grid.m // 2)
    coarse = _grid(cfg, coarse_m)
    a = _solve(cfg, fine, cfg.hj.catalog).f
    b = _solve(cfg, coarse, cfg.hj.catalog_b).f.to_grid(fine)
    tol = 5.0 * coarse.spacing
    rep = comparison_check(a, b, tol)
    run.write_json("report", {"fine_m": fine.m, "coarse_m": coarse_m, **rep})
    return f"comparison pass={rep['pass']} max|a-b|={max(rep['max_a_minus_b'], rep['max_b_minus_a']):.3g} tol={tol:.3g}"


def _ldp_tube(cfg: ExperimentConfig, k) -> TubeEvent:
    T = cfg.simulation.T
    mu0 = cfg.mu0()
    ode = mean_field_ode(k, mu0, T, cfg.simulation.ode_dt)
    t = np.linspace(0.0, T, max(cfg.simulation.grid_points, 101))
    mu_ref, w_ref = interpolate_trajectory(ode, t)
    typical = float(w_ref[-1].sum())
    f = cfg.ldp.flux_factor
    # reference: same measure path, every edge tilted by the flux factor
    ref = Trajectory(t, mu_ref, f * w_ref, k.space)
    return TubeEvent(ref, cfg.ldp.radius_mu, cfg.ldp.radius_w, min_total_flux=f * typical)


def cmd_ldp_verify(run: Run) -> str:
    cfg = run.cfg
    k = cfg.build_kernel()
    tube = _ldp_tube(cfg, k)
    ns = cfg.simulation.n_list
    reps = cfg.ldp.replicas or [default_replicas(n) for n in ns]
    if len(reps) != len(ns):
        raise ConfigError("ldp.replicas must match simulation.n_list in length")
    ests = []
    for n, R in zip(ns, reps):
        ests.append(mc_tube_probability(micro_rates(cfg, n), counts_from_measure(cfg.mu0(), n), tube, R, cfg.simulation.seed, workers=_workers(cfg)))
    rows = [e.__dict__ | {"decay": e.decay} for e in ests]
    try:
        fit = ldp_decay_fit(ests, tube, k, segments=cfg.ldp.segments, iterations=cfg.ldp.iterations)
    except ValueError as exc:
        fit = {"error": str(exc)}
    run.write_json("report", {"estimates": rows, "fit": fit})
    run.write_csv("estimates", _table_csv(rows))
    act = fit.get("candidate_action", float("nan"))
    return f"action={act:.5g} decay by n: " + ", ".join(f"{e.n}:{e.decay:.4g}" for e in ests)


def cmd_periodic_verify(run: Run) -> str:
    cfg = run.cfg
    if not cfg.is_periodic():
        raise ConfigError("periodic-verify needs a periodic kernel family")
    tk = cfg.time_kernel()
    bound = cfg.kernel.rate_bound
    if bound is None:
        raise ConfigError("kernel.rate_bound is required for time-dependent rates (thinning)")
    sim = cfg.simulation
    rep = periodic_averaging_experiment(tk, sim.gamma_list, sim.n, sim.T, sim.seed, cfg.mu0(), bound, replicas=sim.replicas, grid_points=sim.grid_points, quad_points=cfg.kernel.quad_points, workers=_workers(cfg))
    counts = counts_from_measure(cfg.mu0(), sim.n)
    W = np.zeros(cfg.space().n_edges)

    def f(mu, w):
        return 0.3 * mu[0] + 0.5 * float(np.sum(w)) + 0.2 * float(np.sum(w * w))

    fsup = [
        {"gamma": g, "F_sup": Ffn_sup(f, periodic_mean_field_rates(tk, sim.n, g, bound), counts, W)} for g in sim.gamma_list
    ]
    rep["F_sup"] = fsup
    run.write_json("report", rep)
    run.write_csv("distances", _table_csv(rep["rows"]))
    return "sup distance by gamma: " + ", ".join(f"{r['gamma']:g}:{r['sup_distance']:.4g}" for r in rep["rows"])


def cmd_containment(run: Run) -> str:
    cfg = run.cfg
    rep = containment_trend(
        lambda n: micro_rates(cfg, n),
        cfg.mu0(),
        cfg.simulation.T,
        cfg.simulation.n_list,
        cfg.containment.replicas,
        cfg.containment.k_cap,
        cfg.simulation.seed,
        workers=_workers(cfg),
    )
    run.write_json("report", rep)
    run.write_csv("frequencies", _table_csv(rep["rows"]))
    return f"decreasing={rep['decreasing_within_noise']} freq by n: " + ", ".join(f"{r['n']}:{r['frequency']:.4g}" for r in rep["rows"])


def cmd_kernel_check(run: Run) -> str:
    cfg = run.cfg
    k = cfg.build_kernel()
    rep = proper_kernel_check(k, samples=1000, seed=cfg.simulation.seed)
    run.write_json("report", {**rep.to_dict(), "kernel": k.name, "sampled_rate_bound": kernel_rate_bound(k)})
    return "pass" if rep.passed else f"FAIL ({len(rep.violations)} violations)"


COMMANDS = {
    "simulate": cmd_simulate,
    "lln": cmd_lln,
    "rate-eval": cmd_rate_eval,
    "action": cmd_action,
    "hj-solve": cmd_hj_solve,
    "hj-doubling": cmd_hj_doubling,
    "hj-convergence": cmd_hj_convergence,
    "ldp-verify": cmd_ldp_verify,
    "periodic-verify": cmd_periodic_verify,
    "containment-check": cmd_containment,
    "kernel-check": cmd_kernel_check,
}


# ---------------------------------------------------------------------------
# driver


def _yaml_line(path: str | None, loc) -> str:
    """Best-effort source line of a config field path."""
    if path is None or not os.path.exists(path):
        return ""
    try:
        with open(path) as fh:
            node = yaml.compose(fh)
    except yaml.YAMLError:
        return ""
    line = None
    for key in loc:
        if not isinstance(node, yaml.MappingNode):
            break
        for kn, vn in node.value:
            if kn.value == str(key):
                line, node = kn.start_mark.line + 1, vn
                break
        else:
            break
    return f" (line {line})" if line else ""


def run_subcommand(name: str, config_path: str | None, overrides: list[str] | None = None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    if name not in COMMANDS:
        print(f"error: unknown subcommand {name!r}; choose from {', '.join(SUBCOMMANDS)}", file=err)
        return 1
    try:
        cfg = load_config(config_path, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=err)
        return 1
    except ValidationError as exc:
        for e in exc.errors():
            loc = ".".join(str(x) for x in e["loc"])
            print(f"config error: {loc}{_yaml_line(config_path, e['loc'])}: {e['msg']}", file=err)
        return 1
    run = Run(name, cfg)
    try:
        with np.errstate(all="ignore"):
            summary = COMMANDS[name](run)
        run.write_config()
    except (ConfigError, ValueError) as exc:
        print(f"validation error: {exc}", file=err)
        return 1
    except (NumericalFailure, RateBoundError, hj_lab.ConvergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=err)
        return 2
    print(f"{name} [config {run.hash}, seed {run.seed}]: {summary}", file=out)
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="fluxldp", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", "-c", default=None, help="YAML experiment config (defaults if omitted)")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
    args = ap.parse_args(argv)
    return run_subcommand(args.subcommand, args.config, args.overrides)


if __name__ == "__main__":
    sys.exit(main())
