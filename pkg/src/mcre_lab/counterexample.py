"""Mean one-step contraction without long-term contractivity.

Environment ``Y[n] = Z[n] + Z[n-1]`` with fair Bernoulli ``Z`` and a rate
function ``gamma`` on ``{0, 1, 2}``.  With ``b_n`` and ``c_n`` the parts of
``E prod_{k<=n} gamma(Y_k)`` on ``{Z_n = 0}`` and ``{Z_n = 1}``::

    b_{n+1} = (g0 b_n + g1 c_n) / 2,   c_{n+1} = (g1 b_n + g2 c_n) / 2,   b_0 = c_0 = 1/2.

For ``g = (3, 0, 0)`` this gives ``a_n = (3/2)^n / 2`` although ``E gamma(Y_0) = 3/4``.
Shifting ``gamma`` by ``eps`` keeps the mean below one for ``eps < 1/4`` and
the same recursion with ``(3+eps, eps, eps)`` gives the exact products.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .laws import FiniteLaw
from .process import MovingSum, gen_environment
from .rng import replicate


@dataclass(frozen=True)
class FelsmannParams:
    gamma0: float = 3.0
    gamma1: float = 0.0
    gamma2: float = 0.0
    epsilon: float = 0.0

    def __post_init__(self):
        if min(self.gamma0, self.gamma1, self.gamma2) < 0:
            raise ValueError("gamma values must be nonnegative")
        if not 0.0 <= self.epsilon < 0.25:
            raise ValueError(f"epsilon must lie in [0, 1/4), got {self.epsilon}")

    @property
    def gammas(self) -> np.ndarray:
        return np.array([self.gamma0, self.gamma1, self.gamma2]) + self.epsilon

    def gamma(self, y):
        return self.gammas[np.asarray(y, dtype=np.intp)]


def felsmann_exact(params: FelsmannParams, n_max: int) -> dict:
    """Sequences ``a_n, b_n, c_n`` for ``n = 0..n_max``."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    g0, g1, g2 = params.gammas
    b = np.empty(n_max + 1)
    c = np.empty(n_max + 1)
    b[0] = c[0] = 0.5
    for n in range(n_max):
        b[n + 1] = 0.5 * (g0 * b[n] + g1 * c[n])
        c[n + 1] = 0.5 * (g1 * b[n] + g2 * c[n])
    return {"n": np.arange(n_max + 1), "a": b + c, "b": b, "c": c}


ENVIRONMENT = MovingSum(1, FiniteLaw([0.0, 1.0], [0.5, 0.5]))


def felsmann_mc(params: FelsmannParams, n: int, replicas: int, master_seed: int = 0,
                stream_base: int = 0, threads: int = 1, block_size: int = 100_000) -> tuple[float, float]:
    """Monte Carlo ``E prod_{k=1..n} gamma(Y_k)`` and its standard error."""
    def block(rng, size):
        y = gen_environment(ENVIRONMENT, 1, n - 1, rng, size)
        prod = np.prod(params.gamma(y), axis=1)
        return prod.sum(), (prod ** 2).sum()

    parts = replicate(block, replicas, master_seed, stream_base, block_size, threads)
    s = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    mean = s / replicas
    var = max(s2 / replicas - mean ** 2, 0.0) * replicas / max(replicas - 1, 1)
    return float(mean), float(np.sqrt(var / replicas))


def felsmann_report(epsilon: float, n_max: int = 40, replicas: int = 0, mc_n: int | None = None,
                    master_seed: int = 0, threads: int = 1) -> dict:
    """Compare the mean rate with the growth of long products.

    ``mc_n`` limits the Monte Carlo cross-check to ``n <= mc_n`` (default
    ``min(n_max, 15)``); ``replicas = 0`` skips it.
    """
    if not 0.0 < epsilon < 0.25 and epsilon != 0.0:
        raise ValueError(f"epsilon must lie in (0, 1/4), got {epsilon}")
    base = FelsmannParams()
    shifted = FelsmannParams(epsilon=epsilon)
    exact0 = felsmann_exact(base, n_max)
    exact_eps = felsmann_exact(shifted, n_max)
    n = exact0["n"][1:]
    envelope = 1.5 * 2.0 ** (-1.0 / n)
    root_eps = exact_eps["a"][1:] ** (1.0 / n)
    root0 = exact0["a"][1:] ** (1.0 / n)
    mean_gamma = float(np.dot([0.25, 0.5, 0.25], shifted.gammas))
    rows = []
    mc_n = min(n_max, 15) if mc_n is None else mc_n
    for i, k in enumerate(n):
        row = {"n": int(k), "a_n": float(exact_eps["a"][k]), "exact": float(exact0["a"][k]),
               "mc": float("nan"), "mc_se": float("nan")}
        if replicas and k <= mc_n:
            row["mc"], row["mc_se"] = felsmann_mc(shifted, int(k), replicas, master_seed, stream_base=1000 * int(k),
                                                  threads=threads)
        rows.append(row)
    return {
        "epsilon": epsilon,
        "mean_gamma": mean_gamma,
        "mean_gamma_below_one": mean_gamma < 1.0,
        "envelope": envelope.tolist(),
        "nth_root": root_eps.tolist(),
        "nth_root_at_zero": root0.tolist(),
        "roots_above_envelope": bool(np.all(root_eps >= envelope * (1 - 1e-12))),
        "roots_above_one_from_2": bool(np.all(root_eps[1:] > 1.0)),
        "rows": rows,
    }


def write_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "a_n", "exact", "mc", "mc_se"])
        for r in rows:
            w.writerow([r["n"], repr(r["a_n"]), repr(r["exact"]), repr(r["mc"]), repr(r["mc_se"])])
