"""Single-server FIFO queue with dependent service times.

Waiting times follow ``W[k+1] = max(W[k] + S[k] - Z[k+1], 0)`` with ``W[0] = 0``.
Service times ``S`` come from an environment spec bounded by ``M``; the
inter-arrival times ``Z`` are i.i.d. with a density and are drawn through
their quantile function, so the queue is a random iteration driven by
uniforms.

Coefficients used throughout, for a rate parameter ``t``::

    V(w) = exp(t w) - 1,   gamma(s) = K(s) = exp(t s) E exp(-t Z)

and the small set ``{V <= 2/r}`` on which the kernel puts mass at least
``1 - beta_bar`` on the point 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate
from scipy.special import logsumexp

from . import laws as _laws
from .laws import FiniteLaw, PointMass
from .mcre import (CouplingResult, MinorizationSpec, ParametricKernel, SplitSampler,
                   couple_chains, dominates, fit_tail, tail_curve)
from .process import EnvironmentSpec, IID, MovingSum, Scripted, gen_environment
from .rng import derive_stream, replicate

DEFAULT_T_GRID = (0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 2.5, 3.0)


@dataclass
class QueueModel:
    service: EnvironmentSpec
    arrival: object
    M: float = float("inf")
    t_grid: Sequence[float] = DEFAULT_T_GRID
    t_bar: float | None = None
    r: float | None = None
    beta_bar: float | None = None
    lambda_n: int = 50
    lambda_j_max: int = 0
    loynes_depth: int = 1000
    _cache: dict = field(default_factory=dict, repr=False)

    def arrival_ppf(self, u):
        return np.asarray(self.arrival.ppf(u), dtype=float)

    def arrival_cdf(self, z):
        return np.asarray(self.arrival.cdf(z), dtype=float)

    def arrival_sf(self, z):
        return np.asarray(self.arrival.sf(z), dtype=float)

    def laplace(self, t: float) -> float:
        return _laws.laplace_transform(self.arrival, t)

    def service_path(self, start: int, horizon: int, rng, size=None) -> np.ndarray:
        return gen_environment(self.service, start, horizon, rng, size)


@dataclass
class WaitPath:
    W: np.ndarray
    S: np.ndarray
    Z: np.ndarray

    @property
    def n(self) -> int:
        return self.W.shape[-1] - 1


def lindley(S, Z, w0=0.0) -> np.ndarray:
    """Waiting times from service ``S[0..n-1]`` and arrivals ``Z[1..n]`` (stored as ``Z[0..n-1]``)."""
    S = np.asarray(S, dtype=float)
    Z = np.asarray(Z, dtype=float)
    n = S.shape[-1]
    W = np.empty(S.shape[:-1] + (n + 1,))
    w = np.broadcast_to(np.asarray(w0, dtype=float), S.shape[:-1]).copy()
    W[..., 0] = w
    for k in range(n):
        w = np.maximum(w + S[..., k] - Z[..., k], 0.0)
        W[..., k + 1] = w
    return W


def _lindley_scalar(S, Z) -> np.ndarray:
    out = np.empty(len(S) + 1)
    w = 0.0
    out[0] = w
    for k, (s, z) in enumerate(zip(S.tolist(), Z.tolist())):
        w = w + s - z
        if not w > 0.0:
            w = 0.0
        out[k + 1] = w
    return out


def simulate_queue(model: QueueModel, n: int, rng: np.random.Generator, size: int | None = None) -> WaitPath:
    """Waiting times ``W[0..n]``; ``Z`` column ``k`` holds ``Z[k+1]``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    S = model.service_path(0, n - 1, rng, size)
    shape = (n,) if size is None else (size, n)
    Z = model.arrival_ppf(rng.random(shape)).reshape(shape)
    W = _lindley_scalar(S, Z) if size is None else lindley(S, Z)
    return WaitPath(W=W, S=S, Z=Z)


# ---------------------------------------------------------------------------
# service-process moments


def service_mean(spec: EnvironmentSpec, k: int) -> float:
    if isinstance(spec, IID):
        return float(spec.law.mean())
    if isinstance(spec, MovingSum):
        return float((spec.order + 1) * spec.base.mean())
    if isinstance(spec, Scripted):
        return float(spec.laws[k].mean())
    return float(spec.marginal(k).mean())


def service_expect(spec: EnvironmentSpec, func, k: int) -> float:
    """``E func(S_k)`` exactly for finite specs and i.i.d. laws."""
    if isinstance(spec, IID):
        return float(spec.law.expect(func))
    if isinstance(spec, Scripted):
        return float(spec.laws[k].expect(func))
    if spec.finite:
        return float(spec.marginal(k).expect(func))
    raise TypeError("exact expectation needs a finite or i.i.d. service spec")


def service_bounds(spec: EnvironmentSpec) -> tuple[float, float]:
    if isinstance(spec, IID):
        return _laws.support(spec.law)
    if isinstance(spec, MovingSum):
        lo, hi = _laws.support(spec.base)
        return (spec.order + 1) * lo, (spec.order + 1) * hi
    if isinstance(spec, Scripted):
        sup = [_laws.support(law) for law in spec.laws]
        return min(s[0] for s in sup), max(s[1] for s in sup)
    vals = spec.alphabet
    return float(vals.min()), float(vals.max())


# ---------------------------------------------------------------------------
# exponential rates


def _log_mgf_sum_exact(spec: EnvironmentSpec, t: float, j: int, n: int) -> float | None:
    """``log E exp(t (S_j + ... + S_{j+n}))`` when available in closed form."""
    if isinstance(spec, IID):
        return (n + 1) * np.log(_laws.mgf(spec.law, t))
    if spec.finite:
        chain = spec.hidden_chain()
        e = np.exp(t * chain.alphabet[chain.emission])
        vec = chain.dist_at(j) * e
        for k in range(n):
            vec = (vec @ chain.transition(j + k)) * e
        return float(np.log(vec.sum()))
    return None


def lambda_rate(model: QueueModel, t: float, n: int | None = None, j_max: int | None = None,
                replicas: int = 20_000, rng: np.random.Generator | None = None,
                method: str = "auto", batches: int = 20) -> tuple[float, float]:
    """``max_{j<=j_max} (1/n) log E exp(t sum_{k=0..n} (S_{k+j} - Z_{k+j+1}))`` and a standard error.

    The arrival part factorizes exactly because ``Z`` is i.i.d. and
    independent of ``S``.  The service part is exact for finite or i.i.d.
    specs and otherwise a log-sum-exp Monte Carlo average whose standard
    error comes from ``batches`` replica batches.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    n = model.lambda_n if n is None else n
    j_max = model.lambda_j_max if j_max is None else j_max
    log_lz = np.log(model.laplace(t))
    use_exact = method == "exact" or (method == "auto" and _log_mgf_sum_exact(model.service, t, 0, n) is not None)
    best, best_se = -np.inf, 0.0
    for j in range(j_max + 1):
        if use_exact:
            ls = _log_mgf_sum_exact(model.service, t, j, n)
            if ls is None:
                raise TypeError("exact rate needs a finite or i.i.d. service spec")
            val, se = (ls + (n + 1) * log_lz) / n, 0.0
        else:
            if rng is None:
                raise ValueError("Monte Carlo rate needs rng")
            S = model.service_path(j, n, rng, replicas)
            x = t * S.sum(axis=1)
            ls = logsumexp(x) - np.log(replicas)
            parts = np.array_split(x, batches)
            bvals = np.array([logsumexp(p) - np.log(len(p)) for p in parts])
            val = (ls + (n + 1) * log_lz) / n
            se = float(bvals.std(ddof=1) / np.sqrt(batches) / n)
        if val > best:
            best, best_se = val, se
    return float(best), float(best_se)


def select_t_bar(model: QueueModel, rng: np.random.Generator | None = None, replicas: int = 20_000) -> dict:
    """Smallest grid ``t`` with ``Lambda(t) + 2 SE < 0``."""
    rows = []
    chosen = None
    for t in model.t_grid:
        try:
            val, se = lambda_rate(model, t, rng=rng, replicas=replicas)
        except ValueError:          # moment generating function diverges at t
            val, se = float("inf"), 0.0
        rows.append({"t": float(t), "lambda": val, "stderr": se})
        if chosen is None and val + 2 * se < 0:
            chosen = (float(t), val)
    return {"grid": rows, "t_bar": None if chosen is None else chosen[0],
            "lambda_at_t_bar": None if chosen is None else chosen[1]}


def queue_drift_coeffs(model: QueueModel, t: float):
    """``gamma(s) = K(s) = exp(t s) E exp(-t Z)``."""
    lz = model.laplace(t)
    if not np.isfinite(lz):
        raise ValueError(f"E exp(-{t} Z) is not finite")

    def gamma(s):
        return np.exp(t * np.asarray(s, dtype=float)) * lz

    return gamma, gamma


def lyapunov(t: float):
    return lambda w: np.expm1(t * np.asarray(w, dtype=float))


# ---------------------------------------------------------------------------
# kernel, densities, Fisher information


def queue_kernel(model: QueueModel) -> ParametricKernel:
    def ppf(s, w, u):
        return np.maximum(np.asarray(w) + np.asarray(s) - model.arrival_ppf(1.0 - np.asarray(u)), 0.0)

    def cdf(s, w, z):
        z = np.asarray(z, dtype=float)
        return np.where(z < 0, 0.0, model.arrival_sf(np.asarray(w) + np.asarray(s) - z)
                        + _atom(model, np.asarray(w) + np.asarray(s) - z))

    return ParametricKernel(ppf=ppf, cdf=cdf, density=lambda s, w, z: transition_density(model, s, w, z),
                            name="lindley")


def _atom(model, x):
    """``P(Z = x)``, nonzero only for discrete arrival laws."""
    if isinstance(model.arrival, (FiniteLaw, PointMass)):
        return model.arrival_cdf(x) - model.arrival_cdf(np.nextafter(x, -np.inf))
    return np.zeros(np.shape(x))


def transition_density(model: QueueModel, s, w, z):
    """Density of ``Q(s, w, .)`` with respect to ``delta_0 + Lebesgue``."""
    s, w, z = (np.asarray(a, dtype=float) for a in (s, w, z))
    if np.any(s < 0) or np.any(w < 0):
        raise ValueError("service and waiting times must be nonnegative")
    x = w + s - z
    dens = np.where(x > 0, model.arrival.pdf(np.maximum(x, 0.0)), 0.0) if hasattr(model.arrival, "pdf") else 0.0
    return np.where(z == 0, model.arrival_sf(w + s), np.where(z > 0, dens, 0.0))


def log_likelihood(model: QueueModel, W, S) -> float:
    """``sum_k log p_{S[k-1]}(W[k] | W[k-1])`` for ``k = 1..n``."""
    W = np.asarray(W, dtype=float)
    S = np.asarray(S, dtype=float)
    if len(S) < len(W) - 1:
        raise ValueError("need one service time per transition")
    p = transition_density(model, S[: len(W) - 1], W[:-1], W[1:])
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(p)))


def _arrival_name(model):
    return getattr(getattr(model.arrival, "dist", None), "name", None)


def fisher_radius(model: QueueModel, method: str = "auto", tol: float = 1e-3) -> float:
    """``sup_z f(z)^2 / P(Z > z) + int f'(z)^2 / f(z) dz``; raises if the integral diverges."""
    name = _arrival_name(model)
    if name is None:
        raise ValueError("the arrival law has no density")
    if method == "auto" and name == "expon":
        loc, scale = _laws._loc_scale(model.arrival)
        if loc == 0:
            lam = 1.0 / scale
            return 2.0 * lam ** 2
    law = model.arrival
    lo, hi = law.support()
    hi_eff = law.ppf(1 - 1e-13) if not np.isfinite(hi) else hi

    # sup term on a grid, then refined around the best point
    grid = np.concatenate([[lo], lo + np.geomspace(1e-9, max(hi_eff - lo, 1e-6), 4000)])
    grid = grid[grid < hi_eff]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = law.pdf(grid) ** 2 / law.sf(grid)
    ratio = np.nan_to_num(ratio, nan=0.0, posinf=np.inf)
    i = int(np.argmax(ratio))
    if np.isfinite(ratio[i]):
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        res = _minimize_scalar(lambda z: -law.pdf(z) ** 2 / law.sf(z), a, b)
        sup_term = max(ratio[i], res)
    else:
        raise ValueError("f^2 / P(Z > z) is unbounded")

    def dlog(z):
        h = 1e-6 * max(1.0, abs(z))
        return (law.logpdf(z + h) - law.logpdf(z - h)) / (2 * h)

    def integrand(z):
        f = law.pdf(z)
        if f <= 0:
            return 0.0
        return f * dlog(z) ** 2           # f'^2 / f = f (log f)'^2

    def integral(delta):
        val, _ = integrate.quad(integrand, lo + delta, hi_eff - delta if np.isfinite(hi) else np.inf,
                                limit=400, epsabs=1e-12, epsrel=1e-10)
        return val

    with np.errstate(all="ignore"):
        coarse, fine = integral(1e-4), integral(1e-8)
    if not np.isfinite(fine) or abs(fine - coarse) > tol * max(1.0, abs(fine)):
        raise ValueError("int f'^2/f diverges near the support boundary; model unsuitable for the variance floor")
    return float(sup_term + fine)


def _minimize_scalar(fun, a, b) -> float:
    from scipy import optimize
    if b <= a:
        return -fun(a)
    res = optimize.minimize_scalar(fun, bounds=(a, b), method="bounded", options={"xatol": 1e-12})
    return float(-res.fun)


def variance_floor(model: QueueModel, n: int, replicas: int, rng: np.random.Generator,
                   r_star: float | None = None, n_se: float = 4.0) -> dict:
    """Floor ``n inf_k E F_Z(S_k) / r*`` against the replica variance of ``sum_{k=1..n} W_k``."""
    r_star = fisher_radius(model) if r_star is None else r_star
    ks = [0] if model.service.stationary else range(n)
    try:
        g = min(service_expect(model.service, model.arrival_cdf, k) for k in ks)
    except TypeError:
        S = model.service_path(0, n - 1, rng, replicas)
        g = float(model.arrival_cdf(S).mean(axis=0).min())
    floor = n * g / r_star
    path = simulate_queue(model, n, rng, replicas)
    sums = path.W[:, 1:].sum(axis=1)
    var = float(sums.var(ddof=1))
    dev2 = (sums - sums.mean()) ** 2
    se = float(dev2.std(ddof=1) / np.sqrt(replicas))
    return {"n": n, "floor": float(floor), "variance": var, "stderr": se, "inf_p": float(g), "r_star": float(r_star),
            "ok": bool(var >= floor - n_se * se)}


# ---------------------------------------------------------------------------
# stationary start and the classical rate estimate


def _check_loynes(model):
    if not model.service.stationary:
        raise ValueError("the backward construction needs a stationary service spec")
    if service_mean(model.service, 0) >= model.arrival.mean():
        raise ValueError("supercritical queue: E S >= E Z, no stationary waiting time")


def loynes_from_paths(S_back, Z_back) -> tuple[np.ndarray, np.ndarray]:
    """``max(0, max_n sum_{k=1..n} xi_{-k})`` with ``S_back[:, k-1] = S_{-k}``, ``Z_back[:, k-1] = Z_{-k+1}``.

    Returns the samples and a flag marking maxima attained at the truncation depth.
    """
    xi = np.asarray(S_back) - np.asarray(Z_back)
    cs = np.cumsum(xi, axis=-1)
    top = cs.max(axis=-1)
    hit = (np.argmax(cs, axis=-1) == cs.shape[-1] - 1) & (top > 0)
    return np.maximum(top, 0.0), hit


def loynes_stationary(model: QueueModel, depth: int | None, rng: np.random.Generator, size: int) -> tuple[np.ndarray, float]:
    """Samples of ``W_0'`` truncated at ``depth`` and the boundary-hit frequency."""
    _check_loynes(model)
    depth = model.loynes_depth if depth is None else depth
    if depth < 1:
        raise ValueError("depth must be >= 1")
    S = model.service_path(0, depth - 1, rng, size)[:, ::-1]     # column k-1 holds S_{-k}
    Z = model.arrival_ppf(rng.random((size, depth)))
    w, hit = loynes_from_paths(S, Z)
    return w, float(hit.mean())


def loynes_sample(model: QueueModel, replicas: int, master_seed: int, stream_base: int, depth: int | None = None,
                  threads: int = 1, block_size: int = 10_000) -> tuple[np.ndarray, float]:
    parts = replicate(lambda rng, m: loynes_stationary(model, depth, rng, m), replicas, master_seed, stream_base,
                      block_size, threads)
    w = np.concatenate([p[0] for p in parts])
    hit = float(sum(p[1] * len(p[0]) for p in parts) / replicas)
    return w, hit


def borovkov_rate(model: QueueModel, n_grid: Sequence[int], replicas: int, rng: np.random.Generator,
                  depth: int | None = None) -> list[dict]:
    """``P(min_{0<k<n} X_k > max(W_1, W_0' + xi_0))`` with ``X_k = xi_1 + ... + xi_k``.

    ``xi_k = S_k - Z_{k+1}``; the service path runs continuously from
    ``-depth`` to ``max(n_grid)``.
    """
    _check_loynes(model)
    depth = model.loynes_depth if depth is None else depth
    n_max = max(n_grid)
    S = model.service_path(0, depth + n_max - 1, rng, replicas)
    S_back, S_fwd = S[:, :depth][:, ::-1], S[:, depth:]
    Z_back = model.arrival_ppf(rng.random((replicas, depth)))
    Z_fwd = model.arrival_ppf(rng.random((replicas, n_max)))       # Z_1..Z_{n_max}
    w0, _ = loynes_from_paths(S_back, Z_back)
    xi = S_fwd - Z_fwd                                             # xi_0..xi_{n_max-1}
    w1 = np.maximum(xi[:, 0], 0.0)
    level = np.maximum(w1, w0 + xi[:, 0])
    X = np.cumsum(xi[:, 1:], axis=1)                               # X_1..X_{n_max-1}
    running_min = np.minimum.accumulate(X, axis=1) if X.shape[1] else X
    rows = []
    for n in n_grid:
        if n <= 1:
            ind = np.ones(replicas, dtype=bool)
        else:
            ind = running_min[:, n - 2] > level
        p = float(ind.mean())
        rows.append({"n": int(n), "estimate": p, "stderr": float(np.sqrt(p * (1 - p) / replicas))})
    return rows


# ---------------------------------------------------------------------------
# assumptions and the coupling experiment


@dataclass
class QueueAssumptionReport:
    flags: dict
    values: dict

    @property
    def failed(self) -> list[str]:
        return [k for k, v in self.flags.items() if not v]

    @property
    def ok(self) -> bool:
        return not self.failed

    def to_dict(self) -> dict:
        return {"flags": self.flags, "values": self.values, "failed": self.failed}


def small_set_level(t_bar: float, r: float) -> float:
    """``w*`` with ``V(w*) = 2/r``."""
    return float(np.log1p(2.0 / r) / t_bar)


def assumption_report(model: QueueModel, rng: np.random.Generator | None = None, replicas: int = 20_000,
                      horizon: int = 200) -> QueueAssumptionReport:
    """Check boundedness, stability, the rate condition and the minorization tail."""
    flags, vals = {}, {}
    lo, hi = service_bounds(model.service)
    vals["service_range"] = [lo, hi]
    vals["M"] = model.M
    flags["bounded"] = bool(np.isfinite(model.M) and lo >= 0 and hi <= model.M)

    ez = float(model.arrival.mean())
    ez2 = float(model.arrival.moment(2)) if hasattr(model.arrival, "moment") else float(model.arrival.expect(lambda z: z * z))
    vals["mean_arrival"] = ez
    vals["second_moment_arrival"] = ez2
    flags["arrival_second_moment"] = bool(np.isfinite(ez2))
    ks = [0] if model.service.stationary else range(horizon // 2, horizon)
    es = max(service_mean(model.service, k) for k in ks)
    vals["limsup_mean_service"] = es
    vals["subcritical_margin"] = ez - es
    flags["subcritical"] = bool(es < ez)

    if not flags["subcritical"]:
        flags["rate"] = False
        flags["minorization"] = False
        return QueueAssumptionReport(flags, vals)

    if model.t_bar is None:
        sel = select_t_bar(model, rng, replicas)
        vals["lambda_grid"] = sel["grid"]
        t_bar = sel["t_bar"]
    else:
        t_bar = model.t_bar
        try:
            val, se = lambda_rate(model, t_bar, rng=rng, replicas=replicas)
        except ValueError:
            val, se = float("inf"), 0.0
        vals["lambda_grid"] = [{"t": t_bar, "lambda": val, "stderr": se}]
        if not val + 2 * se < 0:
            t_bar = None
    flags["rate"] = t_bar is not None
    vals["t_bar"] = t_bar
    if t_bar is None:
        flags["minorization"] = False
        return QueueAssumptionReport(flags, vals)
    lam = next(row["lambda"] for row in vals["lambda_grid"] if row["t"] == t_bar)
    gamma_bar = float(np.exp(lam))
    vals["gamma_bar"] = gamma_bar
    r = model.r if model.r is not None else (gamma_bar ** -0.5 - 1.0) / 2.0
    vals["r"] = r
    flags["r_range"] = bool(0 < r < 1.0 / gamma_bar - 1.0)
    tau = model.M + 4.0 / (gamma_bar ** -0.5 - 1.0)
    vals["tau"] = tau
    vals["p_tail_tau"] = float(model.arrival_sf(tau)) + float(_atom(model, np.float64(tau)))
    w_star = small_set_level(t_bar, r)
    vals["small_set_level"] = w_star
    p_small = float(model.arrival_cdf(model.M + w_star) - _atom(model, np.float64(model.M + w_star)))
    vals["p_tail_small_set"] = 1.0 - p_small
    flags["minorization"] = bool(vals["p_tail_tau"] > 0 and vals["p_tail_small_set"] > 0)
    beta = model.beta_bar if model.beta_bar is not None else 0.5 * (1.0 + p_small)
    vals["beta_bar"] = beta
    flags["beta_bar_valid"] = bool(p_small <= beta < 1.0)
    return QueueAssumptionReport(flags, vals)


def queue_splitter(model: QueueModel, t_bar: float, r: float, beta_bar: float) -> SplitSampler:
    """Split sampler with regeneration at 0 on ``{V <= 2/r}``."""
    kernel = queue_kernel(model)
    level = 2.0 / r

    def residual_ppf(s, w, u):
        return np.maximum(np.asarray(w) + np.asarray(s) - model.arrival_ppf(beta_bar * (1.0 - np.asarray(u))), 0.0)

    minor = MinorizationSpec(R=lambda s: np.full(np.shape(s), level), beta_bar=beta_bar,
                             kappa_ppf=lambda s, u: np.zeros(np.shape(u)),
                             kappa_cdf=lambda s, z: np.where(np.asarray(z) >= 0, 1.0, 0.0),
                             r=r, residual_ppf=residual_ppf if beta_bar > 0 else None)
    return SplitSampler(kernel=kernel, minor=minor, V=lyapunov(t_bar))


def coupling_block(model: QueueModel, splitter: SplitSampler, horizon: int, depth: int, record_at=(),
                   same_start: bool = False):
    """Replica block: chain from 0 against chain from the backward stationary start."""
    def run(rng, size):
        S = model.service_path(0, depth + horizon - 1, rng, size)
        if same_start:
            w_star = np.zeros(size)
            hit = np.zeros(size, dtype=bool)
        else:
            Z_back = model.arrival_ppf(rng.random((size, depth)))
            w_star, hit = loynes_from_paths(S[:, :depth][:, ::-1], Z_back)
        res = couple_chains(splitter, np.zeros(size), w_star, S[:, depth:], rng, horizon,
                            record_at=record_at)
        return res, hit
    return run


def _merge(results: list[CouplingResult]) -> CouplingResult:
    rec = {}
    for t in results[0].recorded:
        rec[t] = (np.concatenate([r.recorded[t][0] for r in results]),
                  np.concatenate([r.recorded[t][1] for r in results]))
    return CouplingResult(tau=np.concatenate([r.tau for r in results]), horizon=results[0].horizon,
                          visits=np.concatenate([r.visits for r in results]),
                          first_visit=np.concatenate([r.first_visit for r in results]), recorded=rec)


def queue_coupling_experiment(model: QueueModel, horizon: int, replicas: int, master_seed: int = 0,
                              threads: int = 1, rng_report: np.random.Generator | None = None,
                              fit_max: int | None = None, record_at=(), beta_grid=None,
                              depth: int | None = None, report: QueueAssumptionReport | None = None,
                              block_size: int = 10_000, stream_base: int = 0) -> dict:
    """Coupling tail ``P(tau > n)`` between the empty-start and the stationary-start queue."""
    if report is None:
        report = assumption_report(model, rng_report or derive_stream(master_seed, stream_base + 10 ** 6))
    if not report.ok:
        raise AssumptionFailure(report.failed)
    v = report.values
    depth = model.loynes_depth if depth is None else depth
    splitter = queue_splitter(model, v["t_bar"], v["r"], v["beta_bar"])
    parts = replicate(coupling_block(model, splitter, horizon, depth, record_at), replicas, master_seed,
                      stream_base, block_size, threads)
    result = _merge([p[0] for p in parts])
    boundary = float(np.mean(np.concatenate([p[1] for p in parts])))
    n, p, se = result.tail()
    fit_max = horizon // 2 if fit_max is None else fit_max
    fit_sqrt = fit_tail(n, p, 0.5, fit_max)
    fit_cube = fit_tail(n, p, 1.0 / 3.0, fit_max)
    out = {
        "n": n, "p": p, "stderr": se, "fit_sqrt": fit_sqrt, "fit_cube": fit_cube,
        "bound_fit": tail_curve(fit_sqrt, n),
        "sqrt_dominates": dominates(fit_sqrt, n, p, fit_max, horizon),
        "better_fit": "sqrt" if fit_sqrt["residual"] <= fit_cube["residual"] else "cube",
        "censoring_rate": result.censoring_rate, "boundary_hit": boundary,
        "median_tau": float(np.median(result.tau)), "result": result, "assumptions": report.to_dict(),
    }
    if beta_grid:
        medians = []
        for i, beta in enumerate(beta_grid):
            sp = queue_splitter(model, v["t_bar"], v["r"], beta)
            sub = replicate(coupling_block(model, sp, horizon, depth), replicas, master_seed,
                            stream_base, block_size, threads)
            tau = np.concatenate([s[0].tau for s in sub])
            medians.append({"beta_bar": float(beta), "median_tau": float(np.median(tau)),
                            "mean_tau": float(np.mean(np.minimum(tau, horizon + 1)))})
        out["beta_grid"] = medians
    return out


class AssumptionFailure(RuntimeError):
    def __init__(self, failed):
        self.failed = list(failed)
        super().__init__("assumption check failed: " + ", ".join(self.failed))
