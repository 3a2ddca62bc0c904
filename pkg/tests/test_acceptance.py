"""Acceptance suite: one check per criterion, each at its stated tolerance and time budget.

Every check prints a single ``criterion N: PASS|FAIL ...`` line; the lines are
repeated in the terminal summary.  Run alone with
``pytest tests/test_acceptance.py -v``.
"""

import time
from pathlib import Path

import numpy as np
import pytest
import tomli_w
from scipy import stats

from mcre_lab import queueing as q
from mcre_lab.cli import main as cli_main
from mcre_lab.counterexample import FelsmannParams, felsmann_exact, felsmann_mc
from mcre_lab.laws import FiniteLaw, PointMass, make_law
from mcre_lab.limits import (PartialSumEnsemble, coverage_check, fclt_ensemble, lln_report, sigma_max)
from mcre_lab.mcre import couple_chains, tv_bound_report
from mcre_lab.mixing import ThresholdToy, alpha_table
from mcre_lab.process import IID, FiniteMarkov, MovingSum
from mcre_lab.rng import derive_stream, replicate

RESULTS: dict[int, str] = {}
SEED = 20240601


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)


EXP1 = make_law({"dist": "expon", "rate": 1.0})
MOVSUM = MovingSum(1, FiniteLaw([0.0, 0.25]))
BOUNDED = q.QueueModel(service=IID(make_law({"dist": "uniform", "low": 0.0, "high": 1.6})), arrival=EXP1, M=1.6,
                       loynes_depth=300)
SUMS_MODEL = q.QueueModel(service=MOVSUM, arrival=EXP1, M=0.5)


def waiting_ensemble(n, replicas, stream_base, threads=1, block=500):
    def block_fn(rng, size):
        return q.simulate_queue(SUMS_MODEL, n, rng, size).W[:, 1:]
    parts = replicate(block_fn, replicas, SEED, stream_base, block, threads)
    return PartialSumEnsemble.from_values(np.concatenate(parts))


# ---------------------------------------------------------------------------


def test_c01_felsmann_exactness():
    t0 = time.time()
    a = felsmann_exact(FelsmannParams(), 40)["a"]
    n = np.arange(1, 41)
    rel = float(np.max(np.abs(a[1:] / (0.5 * 1.5 ** n) - 1)))
    mean, se = felsmann_mc(FelsmannParams(), 10, 1_000_000, SEED)
    z = abs(mean - a[10]) / se
    dt = time.time() - t0
    ok = rel <= 1e-12 and z <= 4 and dt < 10
    report(1, ok, f"max rel err {rel:.1e}; MC a_10 {mean:.3f} vs {a[10]:.3f} ({z:.2f} SE); {dt:.1f}s")
    assert ok


def test_c02_mixing_exactness():
    t0 = time.time()
    coin = FiniteLaw([0.0, 1.0], [0.5, 0.5])
    zero_ok = True
    for block in (1, 2):
        tab = alpha_table(MovingSum(1, coin), 6, block_len=block, j_range=(0, 1, 3))
        zero_ok &= all(tab.sup_alpha(n) == 0.0 for n in range(2, 7))
    iid_ok = True
    for law in (coin, FiniteLaw([0.0, 1.0, 3.0], [0.2, 0.3, 0.5])):
        tab = alpha_table(IID(law), 4, block_len=2)
        iid_ok &= all(tab.sup_alpha(n) == 0.0 for n in range(1, 5))
    mono_ok = True
    specs = [(MovingSum(1, coin), (1, 2)), (MovingSum(2, coin), (1, 2)),
             (FiniteMarkov([0.0, 1.0], [[0.8, 0.2], [0.3, 0.7]]), (1, 2, 3))]
    for spec, blocks in specs:
        prev = None
        for block in blocks:
            tab = alpha_table(spec, 3, block_len=block, j_range=(2,))
            cur = np.array([tab.sup_alpha(n) for n in (1, 2, 3)])
            if prev is not None:
                mono_ok &= bool(np.all(cur >= prev - 1e-12))
            prev = cur
    dt = time.time() - t0
    ok = zero_ok and iid_ok and mono_ok and dt < 30
    report(2, ok, f"MovingSum(1) zero for n>=2: {zero_ok}; iid zero: {iid_ok}; "
                  f"larger blocks never lower alpha: {mono_ok}; {dt:.1f}s")
    assert ok


def test_c03_transfer_bound_soundness():
    t0 = time.time()
    cases = [
        ([[0.8, 0.2], [0.3, 0.7]], [[0.2, 0.7], [0.4, 0.9]]),
        ([[0.95, 0.05], [0.05, 0.95]], [[0.1, 0.9], [0.5, 0.6]]),
        ([[0.5, 0.5], [0.5, 0.5]], [[0.3, 0.8], [0.3, 0.8]]),
        ([[0.6, 0.4], [0.1, 0.9]], [[0.05, 0.95], [0.9, 0.1]]),
    ]
    checked = violations = 0
    for matrix, p in cases:
        rows = ThresholdToy(FiniteMarkov([0.0, 1.0], matrix), np.array(p)).soundness_table(5)
        checked += len(rows)
        violations += sum(not r["ok"] for r in rows)
    dt = time.time() - t0
    ok = violations == 0 and checked > 0 and dt < 60
    report(3, ok, f"{checked} (n, r) pairs, {violations} violations; {dt:.1f}s")
    assert ok


def test_c04_split_sampler():
    t0 = time.time()
    # t_bar = 2 gives a small set w <= 1.04 and a regeneration coin of about 0.15
    model = q.QueueModel(service=IID(make_law({"dist": "uniform", "low": 0.0, "high": 0.2})), arrival=EXP1,
                         M=0.2, t_bar=2.0)
    rep = q.assumption_report(model)
    assert rep.ok, rep.failed
    v = rep.values
    sp = q.queue_splitter(model, v["t_bar"], v["r"], v["beta_bar"])
    kernel = q.queue_kernel(model)
    rng = derive_stream(SEED, 4)
    m = 100_000
    cells = [(0.0, 0.0), (0.1, 0.5), (0.2, 1.0), (0.1, 2.0), (0.2, 5.0)]
    pvals = []
    for s, w in cells:
        out, _ = sp.step(np.full(m, s), np.full(m, w), rng.random(m), rng.random(m))
        direct = kernel.ppf(s, w, rng.random(m))
        pvals.append(float(stats.ks_2samp(out, direct).pvalue))
    # every joint regeneration must put both chains at the same point
    events = 0
    for _ in range(5):
        x1 = rng.uniform(0, v["small_set_level"], m)
        x2 = rng.uniform(0, v["small_set_level"], m)
        s = rng.uniform(0, 0.2, m)
        u1, u2 = rng.random(m), rng.random(m)
        a, ra = sp.step(s, x1, u1, u2)
        b, rb = sp.step(s, x2, u1, u2)
        joint = ra & rb
        events += int(joint.sum())
        assert np.all(a[joint] == b[joint])
    res = couple_chains(sp, np.zeros(m), np.full(m, 3.0), model.service_path(0, 49, rng, m), rng)
    dt = time.time() - t0
    passing = sum(p >= 0.01 for p in pvals)
    ok = passing >= 4 and events > 0 and dt < 60
    report(4, ok, f"KS p-values {[round(p, 3) for p in pvals]}; {events} joint regenerations all coalesced; "
                  f"coupling censoring {res.censoring_rate:.4f}; {dt:.1f}s")
    assert ok


def mm1_model(depth=500):
    return q.QueueModel(service=IID(EXP1), arrival=make_law({"dist": "expon", "rate": 0.5}), loynes_depth=depth)


def mm1_cdf(x):
    # P(W <= x) = 1 - rho exp(-(mu - lambda) x) with rho = 1/2, mu - lambda = 1/2
    return 1.0 - 0.5 * np.exp(-0.5 * np.asarray(x))


def test_c05_mm1_oracle():
    t0 = time.time()
    model = mm1_model()
    path = q.simulate_queue(model, 1_000_000, derive_stream(SEED, 5))
    avg = float(path.W[1:].mean())
    w, hit = q.loynes_sample(model, 100_000, SEED, 500)
    # randomized probability integral transform handles the atom at zero
    u = derive_stream(SEED, 6).random(len(w))
    pit = np.where(w == 0, u * mm1_cdf(0.0), mm1_cdf(w))
    p = stats.kstest(pit, "uniform").pvalue
    dt = time.time() - t0
    ok = abs(avg - 1.0) <= 0.02 and p >= 0.01 and dt < 60
    report(5, ok, f"time average {avg:.4f}; Loynes KS p {p:.3f} (boundary hits {hit:.1e}); {dt:.1f}s")
    assert ok


_COUPLING = {}


def coupling_run():
    if not _COUPLING:
        t0 = time.time()
        rep = q.assumption_report(BOUNDED, derive_stream(SEED, 7))
        res = q.queue_coupling_experiment(BOUNDED, 100, 100_000, SEED, fit_max=50, record_at=(10, 25, 50),
                                          report=rep)
        _COUPLING.update(res=res, rep=rep, dt=time.time() - t0)
    return _COUPLING


def test_c06_coupling_tail():
    run = coupling_run()
    res, rep = run["res"], run["rep"]
    fs, fc = res["fit_sqrt"], res["fit_cube"]
    ok = (rep.ok and res["sqrt_dominates"] and fs["residual"] <= fc["residual"] and run["dt"] < 300)
    report(6, ok, f"assumptions {'ok' if rep.ok else rep.failed}; c1={fs['c1']:.3f} c2={fs['c2']:.3f}; "
                  f"dominates on (50,100]: {res['sqrt_dominates']}; residual sqrt {fs['residual']:.4f} "
                  f"vs cube-root {fc['residual']:.4f}; censoring {res['censoring_rate']:.4f}; {run['dt']:.1f}s")
    assert ok


def test_c07_tv_sandwich():
    run = coupling_run()
    t0 = time.time()
    result = run["res"]["result"]
    rows = tv_bound_report(result, [10, 25, 50], pairs=result.recorded)
    dt = run["dt"] + time.time() - t0
    ok = all(r["tv_ok"] for r in rows) and dt < 180
    report(7, ok, "; ".join(f"n={r['n']}: TV {r['tv']:.4f} <= {r['bound']:.4f} + 4x{r['bound_se']:.4f}" for r in rows) + f"; {dt:.1f}s")
    assert ok


def test_c08_variance_floor():
    t0 = time.time()
    model = q.QueueModel(service=IID(PointMass(0.5)), arrival=EXP1, M=0.5)
    rows = [q.variance_floor(model, n, 2000, derive_stream(SEED, 80 + i), r_star=2.0)
            for i, n in enumerate((100, 300, 1000))]
    dt = time.time() - t0
    ok = all(r["ok"] for r in rows) and dt < 180
    report(8, ok, "; ".join(f"n={r['n']}: var {r['variance']:.1f} >= floor {r['floor']:.1f} - 4x{r['stderr']:.1f}" for r in rows)
           + f"; {dt:.1f}s")
    assert ok


_SUMS = {}


def sums_5000():
    if not _SUMS:
        t0 = time.time()
        _SUMS["ens"] = waiting_ensemble(5000, 2000, 900)
        _SUMS["dt"] = time.time() - t0
    return _SUMS


def test_c09_fclt():
    run = sums_5000()
    t0 = time.time()
    d = fclt_ensemble(run["ens"]).diagnostics
    dt = run["dt"] + time.time() - t0
    ok = (0.95 <= d["var_B1"] <= 1.05 and 0.45 <= d["var_Bmid"] <= 0.55 and abs(d["corr_mid_increment"]) <= 0.05
          and d["ks_p_B1"] >= 0.01 and dt < 600)
    report(9, ok, f"Var B(1) {d['var_B1']:.4f}; Var B(0.5) {d['var_Bmid']:.4f}; "
                  f"corr {d['corr_mid_increment']:+.4f}; KS p {d['ks_p_B1']:.3f}; {dt:.1f}s")
    assert ok


def test_c10_confidence_coverage():
    run = sums_5000()
    t0 = time.time()
    ens = run["ens"]
    sig = sigma_max(ens, [100, 300, 1000, 3000, 5000])
    rows = coverage_check(ens.S[:, 5000] / np.sqrt(5000), [0.5 * sig, sig, 2 * sig], sig)
    dt = run["dt"] + time.time() - t0
    ok = all(r["ok"] for r in rows) and dt < 120
    report(10, ok, f"sigma_max {sig:.4f}; " + "; ".join(f"a={r['a'] / sig:g}s: {r['empirical']:.4f} <= "
                                                        f"{r['bound']:.4f} + 4x{r['stderr']:.4f}" for r in rows) + f"; {dt:.1f}s")
    assert ok


def test_c11_lln_trend():
    t0 = time.time()
    ens = waiting_ensemble(10_000, 2000, 1100)
    rep = lln_report(ens, [100, 1000, 10_000])
    l1 = [r["l1"] for r in rep["rows"]]
    ratio = l1[-1] / l1[0]
    dt = time.time() - t0
    ok = rep["decreasing"] and ratio <= 0.1 and dt < 120
    report(11, ok, f"E|S_n/n| {[round(v, 5) for v in l1]}; decreasing {rep['decreasing']}; "
                   f"ratio {ratio:.4f} (target <= 0.1); {dt:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# determinism: every suite through the CLI at threads 1 and 4

QUEUE_BOUNDED = {"M": 1.6, "loynes_depth": 300, "arrival": {"dist": "expon", "rate": 1.0},
                 "service": {"kind": "iid", "law": {"dist": "uniform", "low": 0.0, "high": 1.6}}}
QUEUE_SUMS = {"M": 0.5, "arrival": {"dist": "expon", "rate": 1.0},
              "service": {"kind": "moving_sum", "order": 1, "base": {"dist": "finite", "values": [0.0, 0.25]}}}
SUITES = {
    "felsmann": {"kind": "felsmann", "n_max": 40, "replicas": 1_000_000, "mc_n": 10},
    "mixing-table": {"kind": "mixing-table", "max_gap": 6, "block_len": 2, "j_range": [0, 1],
                     "environment": {"kind": "moving_sum", "order": 1,
                                     "base": {"dist": "finite", "values": [0.0, 1.0]}}},
    "transfer-bound": {"kind": "transfer-bound", "matrix": [[0.8, 0.2], [0.3, 0.7]],
                       "p": [[0.2, 0.7], [0.4, 0.9]], "horizon": 5},
    "drift": {"kind": "drift", "t": 2.0, "s_grid": [0.0, 0.1, 0.2], "w_grid": [0.0, 0.5, 1.0, 2.0, 5.0],
              "replicas": 100_000, "queue": {"M": 0.2, "arrival": {"dist": "expon", "rate": 1.0},
                                             "service": {"kind": "iid",
                                                         "law": {"dist": "uniform", "low": 0.0, "high": 0.2}}}},
    "queue-suite": {"kind": "queue-suite", "floor_n": [100, 300, 1000], "floor_replicas": 2000,
                    "loynes_samples": 100_000,
                    "queue": {"M": 0.5, "loynes_depth": 500, "arrival": {"dist": "expon", "rate": 1.0},
                              "service": {"kind": "iid", "law": {"dist": "point", "value": 0.5}}}},
    "coupling": {"kind": "coupling", "horizon": 100, "replicas": 100_000, "fit_max": 50, "tv_at": [10, 25, 50],
                 "queue": QUEUE_BOUNDED},
    "fclt": {"kind": "fclt", "replicas": 2000, "n": 5000, "queue": QUEUE_SUMS},
    "clt": {"kind": "clt", "replicas": 2000, "n": 5000, "queue": QUEUE_SUMS},
    "lln": {"kind": "lln", "replicas": 2000, "n": 10_000, "n_grid": [100, 1000, 10_000], "queue": QUEUE_SUMS},
}


def test_c12_determinism(tmp_path):
    t0 = time.time()
    mismatched = []
    compared = 0
    for kind, cfg in SUITES.items():
        path = tmp_path / f"{kind}.toml"
        path.write_text(tomli_w.dumps({"experiment": dict(cfg, master_seed=SEED)}))
        outs = []
        for threads in (1, 4):
            root = tmp_path / f"t{threads}"
            cli_main(["run", str(path), "--threads", str(threads), "--out", str(root), "--no-plots"])
            outs.append(next((root / kind).iterdir()))
        a = {p.name: p.read_bytes() for p in sorted(outs[0].glob("*.csv"))}
        b = {p.name: p.read_bytes() for p in sorted(outs[1].glob("*.csv"))}
        compared += len(a)
        if not a or a != b:
            mismatched.append(kind)
    # library-level suites without a CLI kind
    lib = []
    for threads in (1, 4):
        w, _ = q.loynes_sample(mm1_model(200), 30_000, SEED, 500, threads=threads, block_size=5000)
        m, se = felsmann_mc(FelsmannParams(), 10, 300_000, SEED, threads=threads, block_size=50_000)
        lib.append(w.tobytes() + np.array([m, se]).tobytes())
    if lib[0] != lib[1]:
        mismatched.append("library")
    dt = time.time() - t0
    ok = not mismatched
    report(12, ok, f"{compared} CSV files across {len(SUITES)} suites plus library streams; "
                   f"mismatches: {mismatched or 'none'}; {dt:.1f}s")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([str(Path(__file__)), "-v"]))
