import math

import numpy as np
import pytest

from fluxldp.ldp_experiments import (
    TubeEstimate,
    TubeEvent,
    containment_trend,
    default_replicas,
    flux_containment_check,
    ldp_decay_fit,
    mc_tube_probability,
    minimize_tube_action,
    periodic_averaging_experiment,
)
from fluxldp.model_core import StateSpace, constant_kernel, modulated_kernel
from fluxldp.particle_sim import Trajectory, counts_from_measure, mean_field_ode, mean_field_rates

SP2 = StateSpace(2)


def flat_reference(r, T=1.0, nodes=101, factor=1.0):
    # constant measure (1/2, 1/2); the typical flux grows at r/2 per edge
    t = np.linspace(0, T, nodes)
    mu = np.tile([0.5, 0.5], (nodes, 1))
    w = factor * np.outer(t, [0.5 * r, 0.5 * r])
    return Trajectory(t, mu, w, SP2)


def test_tube_validation():
    ref = flat_reference(1.0)
    with pytest.raises(ValueError):
        TubeEvent(ref, 0.0)
    coarse = Trajectory(np.linspace(0, 1, 11), np.tile([0.5, 0.5], (11, 1)), np.zeros((11, 2)), SP2)
    with pytest.raises(ValueError, match="spacing"):
        TubeEvent(coarse, 0.1)
    tube = TubeEvent(ref, 0.1)
    assert tube.contains(ref)


def test_replica_floor_and_default():
    k = constant_kernel(SP2, 1.0)
    with pytest.raises(ValueError):
        mc_tube_probability(mean_field_rates(k, 10), [5, 5], TubeEvent(flat_reference(1.0), 0.1), 99, 0)
    assert default_replicas(50) == 20_000 and default_replicas(200) == 5000


def test_typical_tube_probability_grows_with_n():
    k = constant_kernel(SP2, 1.0)
    ode = mean_field_ode(k, [0.5, 0.5], 1.0, 0.01)
    tube = TubeEvent(ode, 0.1)
    ps = [mc_tube_probability(mean_field_rates(k, n), [n // 2, n // 2], tube, 400, 1).p_hat for n in (20, 80, 320)]
    assert ps[0] < ps[1] < ps[2] and ps[2] > 0.95
    wide = TubeEvent(ode, 2.0)
    assert mc_tube_probability(mean_field_rates(k, 20), [10, 10], wide, 200, 1).p_hat == 1.0


def test_nested_tubes_and_zero_hits():
    k = constant_kernel(SP2, 1.0)
    ode = mean_field_ode(k, [0.5, 0.5], 1.0, 0.01)
    mr = mean_field_rates(k, 40)
    small = mc_tube_probability(mr, [20, 20], TubeEvent(ode, 0.1), 500, 3)
    big = mc_tube_probability(mr, [20, 20], TubeEvent(ode, 0.2), 500, 3)
    assert small.hits <= big.hits
    assert small.stderr == pytest.approx(math.sqrt(small.p_hat * (1 - small.p_hat) / 500))
    impossible = TubeEvent(ode, 0.5, min_total_flux=50.0)
    est = mc_tube_probability(mr, [20, 20], impossible, 200, 3)
    assert est.p_hat == 0 and est.upper_bound == pytest.approx(3 / 200) and est.decay == math.inf


@pytest.mark.parametrize("r", [0.14, 1.0])
def test_candidate_action_for_flux_tube(r):
    k = constant_kernel(SP2, r)
    ref = flat_reference(r, factor=2.0)
    tube = TubeEvent(ref, 0.25, min_total_flux=2 * r)
    res = minimize_tube_action(tube, k)
    # doubling the flux on both edges at fixed measure: each edge pays S(r | r/2)
    assert res["action"] == pytest.approx(r * (2 * math.log(2) - 1), rel=1e-6)


def test_zero_cost_tube_action():
    k = constant_kernel(SP2, 1.0)
    ode = mean_field_ode(k, [0.8, 0.2], 1.0, 0.01)
    assert minimize_tube_action(TubeEvent(ode, 0.1), k)["action"] < 1e-6


def test_decay_fit_requires_three_hits():
    k = constant_kernel(SP2, 1.0)
    tube = TubeEvent(flat_reference(1.0), 0.25)
    ests = [TubeEstimate(50, 0.1, 0.01, 10, 100), TubeEstimate(100, 0.0, 0.0, 0, 100, 0.03)]
    with pytest.raises(ValueError):
        ldp_decay_fit(ests, tube, k)


def test_periodic_averaging_flux_rate():
    tk = modulated_kernel(SP2, 2.0, 1.0, 2.0)
    rep = periodic_averaging_experiment(tk, [10.0, 1000.0], 2000, 1.0, 0, [0.5, 0.5], 4.0, replicas=8, grid_points=51)
    for row in rep["rows"]:
        for est, se, ref in zip(row["flux_rate"], row["flux_rate_se"], rep["averaged_flux_rate"]):
            assert abs(est - ref) <= 2 * se + 5e-3
    assert rep["rows"][1]["sup_distance"] < rep["rows"][0]["sup_distance"]


def test_periodic_with_time_constant_rates_is_small():
    tk = modulated_kernel(SP2, 1.0, 0.0, 1.0)
    rep = periodic_averaging_experiment(tk, [10.0], 2000, 1.0, 0, [0.7, 0.3], 1.0, replicas=8, grid_points=51)
    assert rep["rows"][0]["sup_distance"] < 0.05


def test_containment_extremes():
    k = constant_kernel(SP2, 1.0)
    mr = mean_field_rates(k, 100)
    counts = counts_from_measure([0.5, 0.5], 100)
    assert flux_containment_check(mr, counts, 1.0, 10_000, 10.0, 0).exceed == 0
    assert flux_containment_check(mr, counts, 1.0, 500, 0.3, 0).frequency > 0.95


def test_containment_trend_is_deterministic():
    k = constant_kernel(SP2, 1.0)
    f = lambda n: mean_field_rates(k, n)
    a = containment_trend(f, [0.5, 0.5], 1.0, [20, 40], 300, 0.65, 5)
    b = containment_trend(f, [0.5, 0.5], 1.0, [20, 40], 300, 0.65, 5)
    assert a == b
    assert a["rows"][0]["frequency"] > a["rows"][1]["frequency"]
