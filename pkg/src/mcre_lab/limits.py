"""Limit-theorem diagnostics on replica ensembles of partial sums.

An ensemble holds ``Phi(X_k)`` for ``k = 1..n`` over independent replicas.
Expectations ``E Phi(X_k)`` are replaced by cross-replica means unless they
are supplied, and variances of partial sums are pooled across replicas.

Weak closeness to the normal law is measured by the Kolmogorov distance and
by a fixed family of 20 bounded Lipschitz witnesses ``g``:

* ``cos(w x) / max(1, w)`` and ``sin(w x) / max(1, w)`` for ``w`` in {0.5, 1, 1.5, 2, 3};
* ``tanh(x - c)`` for ``c`` in {-2, -1, 0, 1, 2};
* ``exp(-(x - c)^2 / 2)`` for ``c`` in {-2, -1, 0, 1, 2}.

Normal expectations of the witnesses use 80-point Gauss-Hermite quadrature.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import stats


@dataclass
class PartialSumEnsemble:
    """``values[r, k-1] = Phi(X_k)`` for replica ``r``; ``S[:, k]`` the centered sums (``S[:, 0] = 0``)."""

    values: np.ndarray
    means: np.ndarray
    S: np.ndarray
    var_curve: np.ndarray

    @classmethod
    def from_values(cls, values, means=None) -> "PartialSumEnsemble":
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 2:
            raise ValueError("need a (replicas >= 2, n) array")
        means = values.mean(axis=0) if means is None else np.broadcast_to(np.asarray(means, dtype=float),
                                                                          values.shape[1:])
        centered = values - means
        S = np.zeros((values.shape[0], values.shape[1] + 1))
        np.cumsum(centered, axis=1, out=S[:, 1:])
        var = S.var(axis=0, ddof=1)
        var[0] = 0.0
        return cls(values=values, means=np.asarray(means), S=S, var_curve=var)

    @property
    def replicas(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def centered(self) -> np.ndarray:
        return self.values - self.means


def log_grid(n: int, points: int = 12) -> list[int]:
    return sorted(set(np.unique(np.geomspace(1, n, points).astype(int)).tolist()) | {n})


def lln_report(ens: PartialSumEnsemble, n_grid: Sequence[int] | None = None,
               b_grid: Sequence[float] = (1.0, 2.0, 5.0, 10.0, 20.0)) -> dict:
    """``E|S_n / n|`` along ``n_grid`` plus the average uniform-integrability tail.

    The tail is ``(1/n) sum_k E[|W_k| 1{|W_k| >= B}]`` with ``W_k`` the
    centered summands, for every ``B`` in ``b_grid``.
    """
    n_grid = log_grid(ens.n) if n_grid is None else list(n_grid)
    rows = []
    for n in n_grid:
        a = np.abs(ens.S[:, n]) / n
        rows.append({"n": int(n), "l1": float(a.mean()), "stderr": float(a.std(ddof=1) / np.sqrt(ens.replicas))})
    w = np.abs(ens.centered())
    tails = [{"B": float(b), "tail": float(np.mean(np.where(w >= b, w, 0.0)))} for b in b_grid]
    l1 = np.array([r["l1"] for r in rows])
    se = np.array([r["stderr"] for r in rows])
    return {"rows": rows, "ui_tail": tails, "decreasing": decreasing_with_noise(l1, se)}


def decreasing_with_noise(values, se, allowed: int = 1) -> bool:
    """Nonincreasing except for at most ``allowed`` rises, each within one standard error."""
    values = np.asarray(values, dtype=float)
    se = np.asarray(se, dtype=float)
    rises = 0
    for i in range(1, len(values)):
        if values[i] > values[i - 1]:
            if values[i] - values[i - 1] > np.hypot(se[i], se[i - 1]):
                return False
            rises += 1
    return rises <= allowed


def _witnesses() -> list[tuple[str, Callable]]:
    out = []
    for w in (0.5, 1.0, 1.5, 2.0, 3.0):
        s = max(1.0, w)
        out.append((f"cos{w:g}", lambda x, w=w, s=s: np.cos(w * x) / s))
        out.append((f"sin{w:g}", lambda x, w=w, s=s: np.sin(w * x) / s))
    for c in (-2.0, -1.0, 0.0, 1.0, 2.0):
        out.append((f"tanh{c:+g}", lambda x, c=c: np.tanh(x - c)))
    for c in (-2.0, -1.0, 0.0, 1.0, 2.0):
        out.append((f"bump{c:+g}", lambda x, c=c: np.exp(-0.5 * (x - c) ** 2)))
    return out


WITNESSES = _witnesses()
_NODES, _WEIGHTS = hermegauss(80)
_WEIGHTS = _WEIGHTS / np.sqrt(2 * np.pi)


def normal_expectation(g: Callable) -> float:
    return float(np.dot(_WEIGHTS, g(_NODES)))


def weak_approach_report(terminal, min_replicas: int = 500) -> dict:
    """KS and witness distances between standardized terminal values and ``N(0, 1)``."""
    x = np.asarray(terminal, dtype=float)
    if len(x) < min_replicas:
        raise ValueError(f"need at least {min_replicas} replicas, got {len(x)}")
    sd = x.std(ddof=1)
    if not sd > 0:
        raise ValueError("degenerate terminal values: zero standard deviation")
    z = (x - x.mean()) / sd
    ks = stats.kstest(z, "norm")
    gaps = {name: float(abs(np.mean(g(z)) - normal_expectation(g))) for name, g in WITNESSES}
    return {"ks_stat": float(ks.statistic), "ks_p": float(ks.pvalue), "sigma": float(sd),
            "witness_gaps": gaps, "witness_max": max(gaps.values())}


def confidence_bound(a: float, sigma: float) -> float:
    """``P(|sigma N| >= a) = 2 (1 - Phi(a / sigma))``."""
    if a <= 0 or sigma <= 0:
        raise ValueError("a and sigma must be positive")
    return float(2.0 * stats.norm.sf(a / sigma))


def coverage_check(scaled_sums, a_values: Sequence[float], sigma: float, n_se: float = 4.0) -> list[dict]:
    """Empirical ``P(|S_n| / sqrt(n) >= a)`` against the normal bound."""
    x = np.abs(np.asarray(scaled_sums, dtype=float))
    rows = []
    for a in a_values:
        p = float(np.mean(x >= a))
        se = float(np.sqrt(p * (1 - p) / len(x)))
        bound = confidence_bound(a, sigma)
        rows.append({"a": float(a), "empirical": p, "stderr": se, "bound": bound, "ok": p <= bound + n_se * se})
    return rows


def sigma_max(ens: PartialSumEnsemble, n_grid: Sequence[int]) -> float:
    return float(max(np.sqrt(ens.var_curve[n] / n) for n in n_grid))


def variance_stabilizes(ens: PartialSumEnsemble, n_grid: Sequence[int], rel: float = 0.1) -> dict:
    """Running sup of ``Var(S_n / sqrt(n))`` over the grid; last two sups within ``rel``."""
    v = np.array([ens.var_curve[n] / n for n in n_grid])
    sup = np.maximum.accumulate(v)
    ok = len(sup) < 2 or sup[-1] <= (1 + rel) * sup[-2]
    return {"n": list(map(int, n_grid)), "scaled_var": v.tolist(), "running_sup": sup.tolist(), "stable": bool(ok)}


@dataclass
class FisherFloorInputs:
    g: np.ndarray
    r_star: np.ndarray

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float)
        self.r_star = np.broadcast_to(np.asarray(self.r_star, dtype=float), self.g.shape)
        if np.any(self.r_star <= 0) or np.any(self.g < 0):
            raise ValueError("need r* > 0 and g >= 0")


def cramer_rao_floor(inputs: FisherFloorInputs) -> float:
    """``sum_k g_k / r*_k``."""
    return float(np.sum(inputs.g / inputs.r_star))


@dataclass
class FcltResult:
    t_grid: np.ndarray
    v: np.ndarray
    B: np.ndarray            # B[r, i] = B_n(t_grid[i]) for replica r
    scale: float
    diagnostics: dict

    def to_csv(self, path, n_paths: int = 50) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replica", "t", "B_n"])
            for r in range(min(n_paths, self.B.shape[0])):
                for t, b in zip(self.t_grid, self.B[r]):
                    w.writerow([r, repr(float(t)), repr(float(b))])


def fclt_ensemble(ens: PartialSumEnsemble, t_grid: Sequence[float] | None = None, mid: float = 0.5,
                  tol: float = 0.05) -> FcltResult:
    """Time-changed paths ``B_n(t) = S_{v_n(t)} / sqrt(Var S_n)``.

    ``v_n(t) = min{k >= 1 : Var S_k >= t Var S_n}``.  A variance curve that
    falls more than ``tol`` (relative to ``Var S_n``) below its running
    maximum is rejected.
    """
    t_grid = np.linspace(0.02, 1.0, 50) if t_grid is None else np.asarray(t_grid, dtype=float)
    t_grid = np.unique(np.concatenate([t_grid, [mid, 1.0]]))
    var = ens.var_curve
    var_n = var[-1]
    if not var_n > 0:
        raise ValueError("zero variance of the full sum")
    running = np.maximum.accumulate(var)
    if np.max(running - var) > tol * var_n:
        raise ValueError("variance curve is not monotone within tolerance")
    v = np.searchsorted(running[1:], t_grid * var_n, side="left") + 1
    v = np.minimum(v, ens.n)
    scale = float(np.sqrt(var_n))
    B = ens.S[:, v] / scale
    i_mid = int(np.where(t_grid == mid)[0][0])
    b1, bm = B[:, -1], B[:, i_mid]
    inc = b1 - bm
    diag = {
        "var_B1": float(b1.var(ddof=1)),
        "var_Bmid": float(bm.var(ddof=1)),
        "mid": float(mid),
        "var_curve_vs_t": [{"t": float(t), "var": float(B[:, i].var(ddof=1))} for i, t in enumerate(t_grid)],
        "corr_mid_increment": float(np.corrcoef(bm, inc)[0, 1]),
        "ks_p_B1": float(stats.kstest(b1, "norm").pvalue),
        "xi_square_mean": float(np.mean(np.sum((ens.centered() / scale) ** 2, axis=1))),
    }
    return FcltResult(t_grid=t_grid, v=v, B=B, scale=scale, diagnostics=diag)
