import json
import math

import numpy as np
import pytest
from hypothesis import given, settings

from pollfluid import (INF, GatingIndexDistribution, ModelError, NetworkSpec, ServiceDistribution,
                       SpecFormatError, derive, mean_visit_time_k, spec_from_dict, spec_to_dict,
                       example_spec, validate)
from conftest import valid_specs


def neumann(P, rhs, left):
    # fixed point x = rhs + x P (left) or x = rhs + P x, iterated to convergence
    x = np.array(rhs, dtype=float)
    for _ in range(20000):
        nxt = rhs + (x @ P if left else P @ x)
        if np.max(np.abs(nxt - x)) < 1e-15:
            break
        x = nxt
    return nxt


def test_example_loads(t1_exh):
    dq = derive(t1_exh)
    assert np.allclose(dq.rho_lc, [0.4749, 0.5194, 0.8625], atol=5e-4)
    assert dq.rho == pytest.approx(1.8568, abs=5e-4)


def test_example_gamma_warning(t1_exh):
    rep = validate(t1_exh)
    assert rep.ok
    assert len(rep.warnings) == 1 and "queue 3" in rep.warnings[0]
    assert derive(t1_exh).rho_gamma[2] == pytest.approx(1.2052, abs=1e-4)


def test_traffic_equations_against_iteration(t1_exh):
    dq = derive(t1_exh)
    assert np.allclose(dq.gamma, neumann(t1_exh.P, t1_exh.lam, left=True), atol=1e-12)
    assert np.allclose(dq.cbar, neumann(t1_exh.P, 1 / t1_exh.mu, left=False), atol=1e-12)


def test_exhaustive_and_gated_visit_times(t1_exh, t1_gated):
    # exhaustive: t = phi, so t_3 = 1 / (mu (1 - x)) = 1 / (2 * (1 - 0.75)) = 2
    dq = derive(t1_exh)
    assert np.allclose(dq.f, 1.0)
    assert dq.t[2] == pytest.approx(2.0, abs=1e-12)
    dg = derive(t1_gated)
    assert np.allclose(dg.t, 1 / t1_gated.mu, atol=1e-14)


@pytest.mark.parametrize("k", [0, 1, 2, 5, INF])
def test_mean_visit_time_k_by_stage_sum(t1_exh, k):
    # stage j of a visit serves x**j customers on average, each taking 1/mu
    mu, x = 5.0, 1 / 5 + 0.1
    stages = 500 if k == INF else k
    expected = sum(x**j / mu for j in range(stages))
    assert mean_visit_time_k(t1_exh, 1, k) == pytest.approx(expected, rel=1e-12)


def test_mean_visit_time_k_rejects_bad_index(t1_exh):
    with pytest.raises(ValueError):
        mean_visit_time_k(t1_exh, 0, 1.5)


def _with(spec, **kw):
    d = dict(lam=spec.lam, service=spec.service, P=spec.P, gating=spec.gating)
    d.update(kw)
    return NetworkSpec(**d)


@pytest.mark.parametrize("mutate, message", [
    (lambda s: _with(s, lam=np.array([1.0, 0.0, 1.0])), "arrival rates"),
    (lambda s: _with(s, P=s.P * -1), "nonnegative"),
    (lambda s: _with(s, P=s.P + np.array([[0.5, 0, 0], [0, 0, 0], [0, 0, 0]])), "sum to more than 1"),
    (lambda s: _with(s, P=np.array([[0, 1.0, 0], [0, 0, 1.0], [1.0, 0, 0]])), "no exit probability"),
    (lambda s: _with(s, lam=np.array([0.1, 0.1, 0.1])), "not overloaded"),
    (lambda s: _with(s, lam=np.array([1.0, 1.0, 1.6])), "visit times are infinite"),
])
def test_validation_errors(t1_exh, mutate, message):
    rep = validate(mutate(t1_exh))
    assert not rep.ok
    assert any(message in e for e in rep.errors), rep.errors
    with pytest.raises(ModelError):
        derive(mutate(t1_exh))


def test_single_queue_rejected():
    spec = NetworkSpec(lam=np.array([1.0]), service=(ServiceDistribution.exponential(0.5),),
                       P=np.zeros((1, 1)), gating=(GatingIndexDistribution.exhaustive(),))
    assert any("at least 2" in e for e in validate(spec).errors)


def test_non_convergent_routing_rejected(t1_exh):
    # one closed class {1, 2} plus an exit from queue 3
    P = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.5]])
    assert any("substochastic" in e for e in validate(_with(t1_exh, P=P)).errors)


def test_gating_distribution():
    g = GatingIndexDistribution({1: 0.25, 3: 0.25, INF: 0.5})
    assert g.expect_power(0.5) == pytest.approx(0.25 * 0.5 + 0.25 * 0.125)
    ks, ps = g.atoms()
    assert ks.tolist() == [1, 3, 0] and ps.sum() == pytest.approx(1.0)
    assert GatingIndexDistribution.exhaustive().is_exhaustive
    for bad in ({0: 1.0}, {1: 0.5}, {2.5: 1.0}, {1: -0.1, 2: 1.1}):
        with pytest.raises(ValueError):
            GatingIndexDistribution(bad)


@pytest.mark.parametrize("dist, mean", [
    (ServiceDistribution.exponential(4.0), 0.25),
    (ServiceDistribution.deterministic(0.7), 0.7),
    (ServiceDistribution.gamma(2.0, 4.0), 0.5),
])
def test_service_sampling_mean(dist, mean):
    assert dist.mean() == pytest.approx(mean)
    x = dist.sample(np.random.default_rng(1), 200000)
    se = x.std() / math.sqrt(x.size) + 1e-12
    assert abs(x.mean() - mean) < 4 * se + 1e-12


def test_service_rejects_bad_params():
    with pytest.raises(ValueError):
        ServiceDistribution("exponential", {"rate": -1.0})
    with pytest.raises(ValueError):
        ServiceDistribution("uniform", {"a": 1.0})


def test_json_round_trip(t1_exh):
    doc = json.loads(json.dumps(spec_to_dict(t1_exh)))
    back = spec_from_dict(doc)
    a, b = derive(t1_exh), derive(back)
    assert np.array_equal(a.cbar, b.cbar) and a.rho == b.rho
    assert doc["gating"][0]["pmf"] == [{"k": "inf", "p": 1.0}]


@pytest.mark.parametrize("edit, path", [
    (lambda d: d.pop("lambda"), "lambda"),
    (lambda d: d["service"][2]["params"].update(rate="x"), "service[2].params.rate"),
    (lambda d: d["service"][1].update(kind="weibull"), "service[1].kind"),
    (lambda d: d["routing"][1].pop(), "routing[1]"),
    (lambda d: d["gating"][0]["pmf"][0].update(k=0), "gating[0].pmf[0].k"),
    (lambda d: d["gating"][1]["pmf"][0].update(p=0.5), "gating[1].pmf"),
    (lambda d: d.update(n=4), "lambda"),
])
def test_schema_errors_carry_field_path(t1_exh, edit, path):
    doc = spec_to_dict(t1_exh)
    edit(doc)
    with pytest.raises(SpecFormatError) as info:
        spec_from_dict(doc)
    assert info.value.path == path


def test_with_gating(t1_exh):
    s = t1_exh.with_gating((1, 2, INF))
    assert [g.pmf for g in s.gating] == [{1: 1.0}, {2: 1.0}, {INF: 1.0}]
    assert example_spec((1, 2, INF)).gating == s.gating


@settings(max_examples=150, deadline=None)
@given(valid_specs())
def test_derived_identities(spec):
    dq = derive(spec)
    # sum of gamma_i / mu_i and sum of lambda_i cbar_i are two expressions for the load
    assert dq.rho_gamma.sum() == pytest.approx(dq.rho_lc.sum(), abs=1e-10)
    assert np.allclose(dq.t, dq.f * dq.phi, rtol=0, atol=1e-12)
    x = spec.lam / spec.mu + np.diag(spec.P)
    f = [1 - sum(p * x[i] ** k for k, p in g.pmf.items() if k != INF) for i, g in enumerate(spec.gating)]
    assert np.allclose(dq.f, f, atol=1e-14)
    assert np.all((dq.f > 0) & (dq.f <= 1))
    assert np.allclose(dq.gamma, neumann(spec.P, spec.lam, left=True), rtol=1e-10)
