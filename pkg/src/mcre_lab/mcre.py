"""Markov chains in random environments: drift, minorization and coupling.

A chain is given by a parametric kernel ``Q(y, x, .)`` on the real line.  The
split sampler realizes ``Q`` from two uniforms so that chains started at
different points coalesce whenever both sit in the small set
``{V <= R(y)}`` and the regeneration coin ``u1 >= beta_bar`` comes up:

* ``V(x) <= R(y)``, ``u1 >= beta_bar``: draw from ``kappa(y, .)`` at ``u2``;
* ``V(x) <= R(y)``, ``u1 <  beta_bar``: draw from the residual law with cdf
  ``(Q_cdf - (1 - beta_bar) kappa_cdf) / beta_bar`` at ``u2``;
* ``V(x) >  R(y)``: draw from ``Q(y, x, .)`` at ``u2``.

All routines are vectorized over replicas.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .process import EnvironmentSpec, gen_environment


@dataclass
class ParametricKernel:
    """``Q(y, x, .)`` through its quantile function ``ppf(y, x, u)`` and cdf."""

    ppf: Callable
    cdf: Callable
    density: Callable | None = None
    name: str = "kernel"

    def sample(self, y, x, u):
        return self.ppf(y, x, u)


@dataclass
class DriftData:
    """``[Q(y)V](x) <= gamma(y) V(x) + K(y)``.

    ``K`` values below one are lifted to one (``lift_K``); this only weakens
    the inequality, so a valid drift pair stays valid.
    """

    V: Callable
    gamma: Callable
    K: Callable
    lift_K: bool = True

    def K_eff(self, y):
        k = np.broadcast_to(np.asarray(self.K(y), dtype=float), np.shape(y))
        return np.maximum(k, 1.0) if self.lift_K else k

    def bound(self, y, x):
        return self.gamma(y) * self.V(x) + self.K_eff(y)


@dataclass
class MinorizationSpec:
    """Small-set data: level ``R(y)``, coin ``beta_bar`` and regeneration law ``kappa``.

    ``residual_ppf(y, x, u)`` may be supplied in closed form; otherwise the
    residual quantile is found by bisection on its cdf.
    """

    R: Callable
    beta_bar: float
    kappa_ppf: Callable
    kappa_cdf: Callable
    r: float | None = None
    residual_ppf: Callable | None = None

    def __post_init__(self):
        if not 0.0 <= self.beta_bar < 1.0:
            raise ValueError(f"beta_bar must lie in [0, 1), got {self.beta_bar}")

    @classmethod
    def from_drift(cls, drift: DriftData, r: float, gamma_bar: float, **kw) -> "MinorizationSpec":
        """Level ``R(y) = 2 K(y) / (r gamma(y))`` with the check ``r < 1/gamma_bar - 1``."""
        if not 0 < r < 1.0 / gamma_bar - 1.0:
            raise ValueError(f"r={r} violates 0 < r < 1/gamma_bar - 1 = {1.0 / gamma_bar - 1.0}")
        return cls(R=lambda y: 2.0 * drift.K_eff(y) / (r * drift.gamma(y)), r=r, **kw)


def bisect_quantile(cdf: Callable, u, lo, hi, tol: float = 1e-12, max_iter: int = 200):
    """Smallest ``z`` in ``[lo, hi]`` with ``cdf(z) >= u``, elementwise."""
    u = np.asarray(u, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), u.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), u.shape).copy()
    for _ in range(max_iter):
        if np.all(hi - lo <= tol * np.maximum(1.0, np.abs(hi))):
            break
        mid = 0.5 * (lo + hi)
        above = cdf(mid) >= u
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    return hi


@dataclass
class SplitSampler:
    kernel: ParametricKernel
    minor: MinorizationSpec
    V: Callable

    def in_small_set(self, y, x):
        return np.asarray(self.V(x)) <= np.asarray(self.minor.R(y))

    def residual_cdf(self, y, x, z):
        b = self.minor.beta_bar
        return (self.kernel.cdf(y, x, z) - (1.0 - b) * self.minor.kappa_cdf(y, z)) / b

    def residual_ppf(self, y, x, u):
        if self.minor.residual_ppf is not None:
            return self.minor.residual_ppf(y, x, u)
        eps = 1e-15
        lo = self.kernel.ppf(y, x, np.full(np.shape(u), eps))
        hi = self.kernel.ppf(y, x, np.full(np.shape(u), 1 - eps))
        lo = np.minimum(lo, self.minor.kappa_ppf(y, np.full(np.shape(u), eps)))
        return bisect_quantile(lambda z: self.residual_cdf(y, x, z), u, lo - 1e-12, hi)

    def step(self, y, x, u1, u2):
        """One transition; returns ``(next_state, regenerated)``."""
        y, x, u1, u2 = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (y, x, u1, u2)))
        small = self.in_small_set(y, x)
        regen = small & (u1 >= self.minor.beta_bar)
        resid = small & ~regen
        out = np.empty(x.shape)
        plain = ~small
        if plain.any():
            out[plain] = self.kernel.ppf(y[plain], x[plain], u2[plain])
        if regen.any():
            out[regen] = self.minor.kappa_ppf(y[regen], u2[regen])
        if resid.any():
            out[resid] = self.residual_ppf(y[resid], x[resid], u2[resid])
        return out, regen


def split_step(splitter: SplitSampler, y, x, u1, u2):
    return splitter.step(y, x, u1, u2)


# ---------------------------------------------------------------------------
# drift


def drift_verify(kernel: ParametricKernel, drift: DriftData, y_grid, x_grid, replicas: int,
                 rng: np.random.Generator, n_se: float = 4.0) -> list[dict]:
    """Monte Carlo ``[Q(y)V](x)`` against ``gamma(y)V(x) + K(y)`` on a grid."""
    rows = []
    for y in y_grid:
        for x in x_grid:
            u = rng.random(replicas)
            v = np.asarray(drift.V(kernel.sample(np.full(replicas, y), np.full(replicas, x), u)), dtype=float)
            est = float(v.mean())
            se = float(v.std(ddof=1) / np.sqrt(replicas)) if replicas > 1 else float("nan")
            bound = float(drift.bound(np.float64(y), np.float64(x)))
            rows.append({"y": float(y), "x": float(x), "estimate": est, "stderr": se, "bound": bound,
                         "violation": bool(est > bound + n_se * se)})
    return rows


def iterated_drift_bound(gamma_path: Sequence[float], K_path: Sequence[float], V0: float) -> float:
    """``V0 prod gamma + sum_r K_r prod_{j>r} gamma_j``."""
    g = np.asarray(gamma_path, dtype=float)
    k = np.asarray(K_path, dtype=float)
    if g.shape != k.shape:
        raise ValueError(f"gamma and K paths differ in length ({g.size} vs {k.size})")
    total = float(V0)
    for gj, kj in zip(g, k):
        total = total * gj + kj
    return total


def contractivity_rate(spec: EnvironmentSpec, drift: DriftData, n_max: int, j_max: int = 0,
                       replicas: int = 0, rng: np.random.Generator | None = None,
                       method: str = "auto") -> dict:
    """``E^{1/n}[K(Y_j) prod_{k=1..n} gamma(Y_{k+j})]`` for ``j = -1..j_max``, ``n = 1..n_max``.

    ``K(Y_{-1})`` is one.  ``method="exact"`` uses transfer-matrix products on
    the hidden-chain representation of a finite spec; ``"mc"`` averages over
    ``replicas`` sampled environments.
    """
    if method == "auto":
        method = "exact" if spec.finite else "mc"
    js = list(range(-1, j_max + 1))
    ns = np.arange(1, n_max + 1)
    logm = np.full((len(js), n_max), np.nan)
    se = np.zeros((len(js), n_max))
    if method == "exact":
        chain = spec.hidden_chain()
        sym = chain.alphabet[chain.emission]
        gam = np.broadcast_to(np.asarray(drift.gamma(sym), dtype=float), sym.shape)
        kk = np.asarray(drift.K_eff(sym), dtype=float)
        for a, j in enumerate(js):
            start = max(j, 0)
            vec = chain.dist_at(start) * (kk if j >= 0 else gam)
            # vec[h] = E[K(Y_j) ...; hidden at time start = h]
            t = start
            for i, n in enumerate(ns):
                if j >= 0 or n > 1:
                    vec = (vec @ chain.transition(t)) * gam
                    t += 1
                tot = vec.sum()
                logm[a, i] = np.log(tot) if tot > 0 else -np.inf
    elif method == "mc":
        if rng is None or replicas < 2:
            raise ValueError("Monte Carlo contractivity needs rng and replicas >= 2")
        for a, j in enumerate(js):
            start = max(j, 0)
            y = gen_environment(spec, start, n_max if j >= 0 else n_max - 1, rng, replicas)
            with np.errstate(divide="ignore"):
                logk = np.log(drift.K_eff(y[:, 0])) if j >= 0 else np.zeros(replicas)
                yy = y[:, 1:] if j >= 0 else y
                lg = np.log(np.broadcast_to(np.asarray(drift.gamma(yy), dtype=float), yy.shape))
            cum = logk[:, None] + np.cumsum(lg, axis=1)[:, :n_max]
            logm[a] = logsumexp(cum, axis=0) - np.log(replicas)
            # delta-method standard error of the log-mean
            w = np.exp(cum - logm[a][None, :])
            se[a] = w.std(axis=0, ddof=1) / np.sqrt(replicas)
    else:
        raise ValueError(f"unknown method {method!r}")
    roots = np.exp(logm / ns[None, :])
    sup = roots.max(axis=0)
    return {"j": js, "n": ns.tolist(), "roots": roots, "log_mean": logm, "log_se": se,
            "sup_over_j": sup, "method": method, "trend": np.diff(sup).tolist()}


# ---------------------------------------------------------------------------
# coupling


@dataclass
class CouplingResult:
    """Coalescence times of replica pairs; ``tau = horizon + 1`` marks censoring."""

    tau: np.ndarray
    horizon: int
    visits: np.ndarray
    first_visit: np.ndarray
    paths: tuple | None = None
    recorded: dict = field(default_factory=dict)

    @property
    def censored(self) -> np.ndarray:
        return self.tau > self.horizon

    @property
    def censoring_rate(self) -> float:
        return float(self.censored.mean())

    def tail(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``n, P(tau > n), stderr`` for ``n = 0..horizon``."""
        n = np.arange(self.horizon + 1)
        counts = np.bincount(np.minimum(self.tau, self.horizon + 1), minlength=self.horizon + 2)
        p = 1.0 - np.cumsum(counts)[: self.horizon + 1] / len(self.tau)
        p = np.clip(p, 0.0, 1.0)
        return n, p, np.sqrt(p * (1 - p) / len(self.tau))

    def records(self, limit: int | None = None) -> list[dict]:
        m = len(self.tau) if limit is None else min(limit, len(self.tau))
        return [{"tau": int(self.tau[i]) if not self.censored[i] else None, "censored": bool(self.censored[i]),
                 "visits": int(self.visits[i]), "first_visit": int(self.first_visit[i])} for i in range(m)]


def couple_chains(splitter: SplitSampler, x1, x2, env, rng: np.random.Generator,
                  horizon: int | None = None, keep_paths: bool = False, record_at=()) -> CouplingResult:
    """Run two chains on shared ``(u1, u2)`` noise through the split sampler.

    ``x1``/``x2`` are arrays over replicas (or scalars); ``env`` has shape
    ``(replicas, horizon)`` or ``(horizon,)`` shared by all replicas.
    ``tau`` is the first time the two states coincide.  States at the
    times in ``record_at`` are kept in ``result.recorded[t] = (x1_t, x2_t)``.
    """
    env = np.asarray(env, dtype=float)
    if horizon is None:
        horizon = env.shape[-1]
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    reps = max(len(x1), len(x2), env.shape[0] if env.ndim == 2 else 1)
    a = np.broadcast_to(x1, (reps,)).copy()
    b = np.broadcast_to(x2, (reps,)).copy()
    if env.ndim == 1:
        env = np.broadcast_to(env, (reps, env.shape[0]))
    tau = np.full(reps, horizon + 1, dtype=np.int64)
    tau[a == b] = 0
    visits = np.zeros(reps, dtype=np.int64)
    first = np.full(reps, -1, dtype=np.int64)
    pa = [a.copy()] if keep_paths else None
    pb = [b.copy()] if keep_paths else None
    record_at = set(int(t) for t in record_at)
    recorded = {0: (a.copy(), b.copy())} if 0 in record_at else {}
    for t in range(horizon):
        y = env[:, t]
        u1 = rng.random(reps)
        u2 = rng.random(reps)
        joint = splitter.in_small_set(y, a) & splitter.in_small_set(y, b)
        visits += joint
        first[(first < 0) & joint] = t
        coupled = a == b
        a, regen_a = splitter.step(y, a, u1, u2)
        b, regen_b = splitter.step(y, b, u1, u2)
        if np.any(coupled & (a != b)):
            raise AssertionError("coupled chains separated under shared noise")
        if np.any(regen_a & regen_b & (a != b)):
            raise AssertionError("joint regeneration did not coalesce the chains")
        hit = (a == b) & (tau > horizon)
        tau[hit] = t + 1
        if t + 1 in record_at:
            recorded[t + 1] = (a.copy(), b.copy())
        if keep_paths:
            pa.append(a.copy())
            pb.append(b.copy())
    paths = (np.array(pa), np.array(pb)) if keep_paths else None
    return CouplingResult(tau=tau, horizon=horizon, visits=visits, first_visit=first, paths=paths,
                          recorded=recorded)


def fit_tail(n, p, power: float, n_max: float) -> dict:
    """Least squares ``log p = log c1 - c2 n^power`` on ``0 < n <= n_max``, ``p > 0``."""
    n = np.asarray(n, dtype=float)
    p = np.asarray(p, dtype=float)
    sel = (n > 0) & (n <= n_max) & (p > 0)
    if sel.sum() < 2:
        return {"c1": float("nan"), "c2": float("nan"), "power": power, "residual": float("nan")}
    X = np.column_stack([np.ones(sel.sum()), -n[sel] ** power])
    coef, *_ = np.linalg.lstsq(X, np.log(p[sel]), rcond=None)
    resid = np.log(p[sel]) - X @ coef
    return {"c1": float(np.exp(coef[0])), "c2": float(coef[1]), "power": power,
            "residual": float(np.sqrt(np.mean(resid ** 2)))}


def tail_curve(fit: dict, n) -> np.ndarray:
    return fit["c1"] * np.exp(-fit["c2"] * np.asarray(n, dtype=float) ** fit["power"])


def dominates(fit: dict, n, p, lo: float, hi: float, factor: float = 3.0) -> bool:
    """Empirical tail on ``(lo, hi]`` stays below ``factor`` times the fitted curve."""
    n = np.asarray(n, dtype=float)
    sel = (n > lo) & (n <= hi)
    return bool(np.all(np.asarray(p)[sel] <= factor * tail_curve(fit, n[sel])))


def histogram_tv(a, b, bins) -> float:
    """Half L1 distance between the normalized histograms of ``a`` and ``b``."""
    bins = np.asarray(bins, dtype=float)
    ha, _ = np.histogram(np.clip(a, bins[0], bins[-1]), bins=bins)
    hb, _ = np.histogram(np.clip(b, bins[0], bins[-1]), bins=bins)
    return float(0.5 * np.abs(ha / len(a) - hb / len(b)).sum())


def common_bins(a, b, n_bins: int = 50, atom: float | None = 0.0) -> np.ndarray:
    """Equal-width bins over the pooled range; an atom gets its own bin."""
    lo = float(min(np.min(a), np.min(b)))
    hi = float(max(np.max(a), np.max(b)))
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, n_bins + 1)
    if atom is not None and lo <= atom < hi:
        eps = 1e-12 * max(1.0, abs(hi))
        edges = np.unique(np.concatenate([[atom - eps, atom + eps], edges[edges > atom + eps]]))
    return edges


def tv_bound_report(result: CouplingResult, n_grid=None, pairs: dict | None = None, bins=None,
                    n_se: float = 4.0) -> list[dict]:
    """Bound ``2 P(tau > n)`` and, for supplied ``pairs[n] = (a, b)``, the plug-in TV."""
    n_all, p, se = result.tail()
    if n_grid is None:
        n_grid = n_all
    rows = []
    for n in n_grid:
        row = {"n": int(n), "p_tau_gt_n": float(p[n]), "stderr": float(se[n]), "bound": float(2 * p[n]),
               "bound_se": float(2 * se[n])}
        if pairs and n in pairs:
            a, b = pairs[n]
            edges = common_bins(a, b) if bins is None else bins
            tv = histogram_tv(a, b, edges)
            tv_se = float(np.sqrt(len(edges) / min(len(a), len(b))) / 2)
            row.update({"tv": tv, "tv_ok": bool(tv <= row["bound"] + n_se * row["bound_se"]),
                        "tv_noise": tv_se})
        rows.append(row)
    return rows


def write_tail_csv(path, n, p, se, bound_fit) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "p_tau_gt_n", "stderr", "bound_fit"])
        for row in zip(n, p, se, bound_fit):
            w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])
