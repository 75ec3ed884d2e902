import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2_contingency, chisquare

from fluxldp.model_core import Kernel, PottsPotential, StateSpace, constant_kernel, modulated_kernel
from fluxldp.particle_sim import (
    MicroRates,
    ParticleConfig,
    RateBoundError,
    Trajectory,
    counts_from_measure,
    empirical_trajectory,
    glauber_micro_rates,
    lln_gap,
    mean_field_ode,
    mean_field_rates,
    periodic_mean_field_rates,
    run_ensemble,
    simulate,
)

SP2 = StateSpace(2)
SP3 = StateSpace(3)


def one_way(n):
    r = np.array([[0.0, 1.0], [0.0, 0.0]])
    return MicroRates(SP2, n, lambda t, c: np.broadcast_to(r, np.shape(c)[:-1] + (2, 2)), rate_bound=1.0)


def test_zero_rates_give_empty_log():
    mr = MicroRates(SP2, 5, lambda t, c: np.zeros(np.shape(c)[:-1] + (2, 2)))
    ps = simulate(mr, ParticleConfig.from_counts(SP2, [3, 2], [4, 1]), 1.0, 0)
    assert ps.n_events == 0
    assert np.array_equal(ps.final_config().flux_counts, [4, 1])
    traj = empirical_trajectory(ps, np.linspace(0, 1, 5))
    assert np.all(traj.mu == [0.6, 0.4]) and np.all(traj.w == [0.8, 0.2])


def test_one_way_expected_event_count():
    mr = one_way(100)
    R = 10_000
    res = run_ensemble(mr, [100, 0], 1.0, np.array([1.0]), 7, R)
    mean = res.n_events.mean()
    expected = 100 * (1 - math.exp(-1))
    se = res.n_events.std(ddof=1) / math.sqrt(R)
    assert abs(mean - expected) < 3 * se
    # each particle jumps at most once
    assert res.n_events.max() <= 100


def test_single_event_trajectory():
    mr = one_way(1)
    ps = simulate(mr, ParticleConfig.from_counts(SP2, [1, 0]), 5.0, 3)
    assert ps.n_events == 1
    s = ps.times[0]
    traj = empirical_trajectory(ps, [0.0, s, min(5.0, s + 1.0)])
    assert np.array_equal(traj.mu[0], [1, 0]) and np.array_equal(traj.mu[1], [0, 1])
    assert np.array_equal(traj.w[1], [1, 0])


def _replay_conservation(ps):
    states = ps.init.states.copy()
    flux = ps.init.flux_counts.copy()
    src, tgt = ps.space.sources, ps.space.targets
    mu0 = np.bincount(states, minlength=ps.space.q)
    for i, e in zip(ps.particles, ps.edges):
        assert states[i] == src[e]
        states[i] = tgt[e]
        flux[e] += 1
        mu = np.bincount(states, minlength=ps.space.q)
        assert np.array_equal(mu - mu0, ps.space.divergence(flux - ps.init.flux_counts).astype(np.int64))


def glauber3(n):
    return glauber_micro_rates(SP3, n, 1.0, PottsPotential(0.8, (0.3, 0.0, -0.3)))


@pytest.mark.parametrize("thin", [False, True])
def test_conservation_and_determinism(thin):
    mr = glauber3(30)
    if thin:
        mr = mr.as_thinning()
    init = ParticleConfig.from_counts(SP3, [10, 10, 10])
    a = simulate(mr, init, 2.0, 11, replica=4)
    b = simulate(mr, init, 2.0, 11, replica=4)
    assert a.n_events > 10
    assert np.array_equal(a.times, b.times) and np.array_equal(a.particles, b.particles)
    assert np.array_equal(a.edges, b.edges)
    _replay_conservation(a)
    traj = empirical_trajectory(a, np.linspace(0, 2, 41))
    assert traj.divergence_defect() <= 1e-12


@pytest.mark.parametrize("thin", [False, True])
def test_simulate_matches_ensemble(thin):
    mr = glauber3(25)
    if thin:
        mr = mr.as_thinning()
    grid = np.linspace(0, 1.5, 31)
    res = run_ensemble(mr, [5, 10, 10], 1.5, grid, 5, 12, replica_offset=3, batch_size=5)
    for r in range(12):
        ps = simulate(mr, ParticleConfig.from_counts(SP3, [5, 10, 10]), 1.5, 5, replica=3 + r)
        traj = empirical_trajectory(ps, grid)
        assert np.array_equal(traj.mu, res.mu[r])
        assert np.array_equal(traj.w, res.w[r])
        assert ps.n_events == res.n_events[r]


def test_ensemble_independent_of_workers_and_batches():
    mr = glauber3(40)
    grid = np.linspace(0, 1, 11)
    a = run_ensemble(mr, [20, 10, 10], 1.0, grid, 2, 50)
    b = run_ensemble(mr, [20, 10, 10], 1.0, grid, 2, 50, batch_size=7, workers=3)
    assert np.array_equal(a.mu, b.mu) and np.array_equal(a.w, b.w)


def test_thinning_and_direct_agree_in_law():
    mr = glauber3(20)
    grid = np.array([1.0])
    R = 4000
    d = run_ensemble(mr, [10, 5, 5], 1.0, grid, 1, R)
    t = run_ensemble(mr.as_thinning(), [10, 5, 5], 1.0, grid, 2, R)
    # compare the law of the final occupation of state 1
    x = np.rint(d.mu[:, 0, 0] * 20).astype(int)
    y = np.rint(t.mu[:, 0, 0] * 20).astype(int)
    support = np.union1d(x, y)
    table = np.array([[np.sum(x == s) for s in support], [np.sum(y == s) for s in support]])
    keep = table.sum(axis=0) >= 10
    table = np.hstack([table[:, keep], table[:, ~keep].sum(axis=1, keepdims=True)])
    table = table[:, table.sum(axis=0) > 0]
    assert chi2_contingency(table)[1] > 0.01


def test_exchangeability_of_first_jumper():
    n = 8
    mr = one_way(n)
    firsts = []
    for r in range(2400):
        ps = simulate(mr, ParticleConfig.from_counts(SP2, [n, 0]), 10.0, 99, replica=r)
        firsts.append(ps.particles[0])
    counts = np.bincount(firsts, minlength=n)
    assert chisquare(counts).pvalue > 0.01


def test_rate_bound_violation_raises():
    k = constant_kernel(SP2, 3.0)
    mr = mean_field_rates(k, 10, rate_bound=1.0).as_thinning()
    with pytest.raises(RateBoundError):
        simulate(mr, ParticleConfig.from_counts(SP2, [5, 5]), 5.0, 0)


def test_periodic_rates_under_bound():
    tk = modulated_kernel(SP2, 2.0, 1.0, 2.0)
    mr = periodic_mean_field_rates(tk, 50, 10.0, 4.0)
    assert mr.period == pytest.approx(0.2)
    ps = simulate(mr, ParticleConfig.from_counts(SP2, [25, 25]), 1.0, 0)
    _replay_conservation(ps)


@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=5), st.integers(1, 500))
def test_counts_from_measure(raw, n):
    x = np.asarray(raw) + 1e-3
    mu = x / x.sum()
    c = counts_from_measure(mu, n)
    assert c.sum() == n and np.all(c >= 0)
    assert np.max(np.abs(c - n * mu)) < 1.0 + 1e-9


def test_mean_field_ode_symmetric_fixed_point():
    k = constant_kernel(SP2, 1.0)
    ode = mean_field_ode(k, [0.5, 0.5], 2.0, 1e-3)
    assert np.allclose(ode.mu, 0.5, atol=1e-14)
    assert np.allclose(ode.w[-1], [1.0, 1.0], atol=1e-12)


def test_mean_field_ode_closed_form():
    # two-state relaxation: mu1' = -mu1 + mu2 => mu1(t) = 1/2 + (mu1(0) - 1/2) e^{-2t}
    k = constant_kernel(SP2, 1.0)
    ode = mean_field_ode(k, [0.9, 0.1], 1.0, 1e-3)
    t = ode.times
    assert np.allclose(ode.mu[:, 0], 0.5 + 0.4 * np.exp(-2 * t), atol=1e-12)
    # w_12(t) = int mu1 = t/2 + 0.2 (1 - e^{-2t})
    assert np.allclose(ode.w[:, 0], t / 2 + 0.2 * (1 - np.exp(-2 * t)), atol=1e-12)


def test_mean_field_ode_zero_kernel():
    k = Kernel(SP3, lambda mu: np.zeros(mu.shape[:-1] + (3, 3)))
    ode = mean_field_ode(k, [0.2, 0.3, 0.5], 1.0, 0.1, w0=np.ones(6))
    assert np.all(ode.mu == [0.2, 0.3, 0.5]) and np.all(ode.w == 1.0)


def test_trajectory_csv_roundtrip():
    k = constant_kernel(SP3, 1.0)
    ode = mean_field_ode(k, [0.2, 0.3, 0.5], 0.5, 0.01)
    text = "# provenance line\n" + ode.to_csv()
    back = Trajectory.from_csv(text)
    assert np.array_equal(back.times, ode.times)
    assert np.array_equal(back.mu, ode.mu) and np.array_equal(back.w, ode.w)


def test_lln_gap_decreases_and_single_particle_is_far():
    k = constant_kernel(SP2, 1.0)
    rep = lln_gap(lambda n: mean_field_rates(k, n), k, [0.8, 0.2], 1.0, [1, 20, 80, 320], 200, seed=1)
    gaps = [r["gap_mu"] for r in rep["rows"]]
    ses = [r["gap_mu_se"] for r in rep["rows"]]
    assert gaps[0] > 0.3
    for i in range(len(gaps) - 1):
        assert gaps[i + 1] <= gaps[i] + 2 * math.hypot(ses[i], ses[i + 1])


def test_exact_micro_rates_reproduce_kernel():
    k = constant_kernel(SP3, 1.7)
    n = 40
    mr = mean_field_rates(k, n)
    counts = np.array([10, 0, 30])
    mu = counts / n
    per = mr.rates(0.0, counts)
    for a in range(3):
        if counts[a]:
            assert np.allclose(mu[a] * per[a], k.rates(mu)[a], rtol=1e-15)


def test_relabelling_preserves_count_path():
    # the counts-level dynamics never look at labels: same stream, same empirical trajectory
    mr = glauber3(12)
    base = ParticleConfig.from_counts(SP3, [6, 3, 3])
    perm = np.random.default_rng(0).permutation(12)
    shuffled = ParticleConfig(base.states[perm], base.flux_counts)
    grid = np.linspace(0, 1, 21)
    for r in range(20):
        a = empirical_trajectory(simulate(mr, base, 1.0, 21, replica=r), grid)
        b = empirical_trajectory(simulate(mr, shuffled, 1.0, 21, replica=r), grid)
        assert np.array_equal(a.mu, b.mu) and np.array_equal(a.w, b.w)


def test_exchangeability_under_relabelling():
    # permuted labels on a disjoint block of streams: same law of event counts (5% level)
    mr = glauber3(12)
    base = ParticleConfig.from_counts(SP3, [6, 3, 3])
    perm = np.random.default_rng(0).permutation(12)
    shuffled = ParticleConfig(base.states[perm], base.flux_counts)
    N = 1500
    a = [simulate(mr, base, 1.0, 21, replica=r).n_events for r in range(N)]
    b = [simulate(mr, shuffled, 1.0, 21, replica=N + r).n_events for r in range(N)]
    support = np.union1d(a, b)
    table = np.array([[np.sum(np.equal(a, s)) for s in support], [np.sum(np.equal(b, s)) for s in support]])
    # pool sparse cells so expected counts stay reasonable
    keep = table.sum(axis=0) >= 20
    table = np.hstack([table[:, keep], table[:, ~keep].sum(axis=1, keepdims=True)])
    table = table[:, table.sum(axis=0) > 0]
    assert chi2_contingency(table)[1] > 0.05
