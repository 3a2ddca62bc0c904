import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from mcre_lab.laws import FiniteLaw
from mcre_lab.mcre import (CouplingResult, DriftData, MinorizationSpec, ParametricKernel, SplitSampler,
                           bisect_quantile, common_bins, contractivity_rate, couple_chains, dominates, fit_tail,
                           histogram_tv, iterated_drift_bound, tail_curve, tv_bound_report)
from mcre_lab.process import IID, FiniteMarkov
from mcre_lab.rng import derive_stream

# x' = x/2 + U: on [0, 1] the law is uniform on [x/2, x/2 + 1] which covers [1/2, 1],
# so Q >= (1/2) uniform[1/2, 1] there.
HALF = ParametricKernel(ppf=lambda y, x, u: np.asarray(x) / 2 + u,
                        cdf=lambda y, x, z: np.clip(np.asarray(z) - np.asarray(x) / 2, 0.0, 1.0))
MINOR = MinorizationSpec(R=lambda y: np.ones(np.shape(y)), beta_bar=0.5,
                         kappa_ppf=lambda y, u: 0.5 + 0.5 * np.asarray(u),
                         kappa_cdf=lambda y, z: np.clip(2 * (np.asarray(z) - 0.5), 0.0, 1.0))
SPLIT = SplitSampler(HALF, MINOR, V=lambda x: np.asarray(x))


def test_split_step_preserves_kernel():
    rng = derive_stream(0, 0)
    m = 40_000
    for x in (0.0, 0.6, 1.0, 1.8):
        out, regen = SPLIT.step(np.zeros(m), np.full(m, x), rng.random(m), rng.random(m))
        direct = HALF.sample(0.0, x, rng.random(m))
        assert stats.ks_2samp(out, direct).pvalue > 1e-3
        assert (regen.mean() > 0) == (x <= 1.0)


def test_residual_cdf_is_a_cdf():
    z = np.linspace(-0.5, 2.0, 400)
    for x in (0.0, 0.5, 1.0):
        c = SPLIT.residual_cdf(0.0, x, z)
        assert np.all(np.diff(c) >= -1e-12)
        assert c[0] == pytest.approx(0.0) and c[-1] == pytest.approx(1.0)


def test_bisect_quantile():
    u = np.array([0.1, 0.5, 0.9])
    q = bisect_quantile(lambda z: stats.norm.cdf(z), u, -10.0, 10.0)
    assert np.allclose(q, stats.norm.ppf(u), atol=1e-9)


def test_minorization_validation():
    with pytest.raises(ValueError):
        MinorizationSpec(R=None, beta_bar=1.0, kappa_ppf=None, kappa_cdf=None)
    drift = DriftData(V=abs, gamma=lambda y: 0.5, K=lambda y: 1.0)
    with pytest.raises(ValueError):
        MinorizationSpec.from_drift(drift, 1.5, 0.5, beta_bar=0.5, kappa_ppf=None, kappa_cdf=None)
    m = MinorizationSpec.from_drift(drift, 0.5, 0.5, beta_bar=0.5, kappa_ppf=None, kappa_cdf=None)
    assert m.R(0.0) == pytest.approx(8.0)


def test_drift_K_lift():
    d = DriftData(V=abs, gamma=lambda y: 0.5, K=lambda y: 0.2)
    assert d.K_eff(0.0) == 1.0
    assert DriftData(V=abs, gamma=lambda y: 0.5, K=lambda y: 0.2, lift_K=False).K_eff(0.0) == pytest.approx(0.2)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(0, 2), st.floats(0, 3)), min_size=0, max_size=12), st.floats(0, 10))
def test_iterated_drift_bound_matches_sum(pairs, v0):
    g = [p[0] for p in pairs]
    k = [p[1] for p in pairs]
    n = len(g)
    direct = v0 * np.prod(g) + sum(k[r] * np.prod(g[r + 1:]) for r in range(n))
    assert iterated_drift_bound(g, k, v0) == pytest.approx(direct, rel=1e-9, abs=1e-12)


def test_iterated_drift_bound_length_check():
    with pytest.raises(ValueError):
        iterated_drift_bound([1.0], [1.0, 2.0], 0.0)


def test_contractivity_iid_closed_form():
    law = FiniteLaw([0.0, 1.0], [0.5, 0.5])
    g = {0.0: 0.5, 1.0: 1.2}
    drift = DriftData(V=abs, gamma=lambda y: np.vectorize(g.get)(y), K=lambda y: 2.0 + np.asarray(y))
    res = contractivity_rate(IID(law), drift, 6, j_max=1, method="exact")
    eg = 0.85
    assert np.allclose(res["roots"][0], eg)                       # j = -1: K = 1
    ek = 2.5
    assert np.allclose(res["roots"][1], (ek * eg ** np.arange(1, 7)) ** (1 / np.arange(1, 7)))


def test_contractivity_mc_agrees_with_exact():
    spec = FiniteMarkov([0.2, 1.2], [[0.9, 0.1], [0.2, 0.8]])
    drift = DriftData(V=abs, gamma=lambda y: np.exp(0.25 * np.asarray(y)) * 0.8, K=lambda y: 1.0)
    ex = contractivity_rate(spec, drift, 10, j_max=1, method="exact")
    mc = contractivity_rate(spec, drift, 10, j_max=1, replicas=50_000, rng=derive_stream(0, 0), method="mc")
    assert np.all(np.abs(ex["log_mean"] - mc["log_mean"]) <= 4 * mc["log_se"] + 1e-12)


def test_coupling_coalesces_and_is_permanent():
    rng = derive_stream(1, 0)
    res = couple_chains(SPLIT, np.zeros(2000), np.full(2000, 5.0), np.zeros(40), rng, keep_paths=True,
                        record_at=(0, 10))
    a, b = res.paths
    for i in range(2000):
        if res.tau[i] <= 40:
            assert np.all(a[res.tau[i]:, i] == b[res.tau[i]:, i])
            assert np.all(a[: res.tau[i], i] != b[: res.tau[i], i])
    assert res.censoring_rate < 0.01
    n, p, se = res.tail()
    assert p[0] == 1.0 and np.all(np.diff(p) <= 0)
    assert set(res.recorded) == {0, 10}


def test_coupling_result_tail_and_records():
    r = CouplingResult(tau=np.array([0, 2, 5, 6]), horizon=5, visits=np.zeros(4, int), first_visit=np.zeros(4, int))
    n, p, se = r.tail()
    assert p.tolist() == [0.75, 0.75, 0.5, 0.5, 0.5, 0.25]
    assert r.censoring_rate == 0.25
    assert r.records()[3]["tau"] is None


def test_fit_tail_recovers_curve():
    n = np.arange(0, 101)
    p = 1.3 * np.exp(-0.4 * np.sqrt(n))
    fit = fit_tail(n, p, 0.5, 50)
    assert fit["c1"] == pytest.approx(1.3) and fit["c2"] == pytest.approx(0.4)
    assert fit["residual"] < 1e-10
    assert dominates(fit, n, p, 50, 100)
    assert np.allclose(tail_curve(fit, n), p)
    assert not dominates(fit, n, 4 * p, 50, 100)


def test_histogram_tv():
    x = np.linspace(0, 1, 1001)
    bins = common_bins(x, x)
    assert histogram_tv(x, x, bins) == 0.0
    assert histogram_tv(np.zeros(10), np.ones(10), common_bins(np.zeros(10), np.ones(10))) == 1.0


def test_tv_report_uses_bound():
    rng = derive_stream(2, 0)
    res = couple_chains(SPLIT, np.zeros(5000), np.full(5000, 3.0), np.zeros(20), rng, record_at=(2, 5))
    rows = tv_bound_report(res, [2, 5], pairs=res.recorded)
    assert all(r["tv_ok"] for r in rows)
    assert all(r["bound"] == 2 * r["p_tau_gt_n"] for r in rows)
