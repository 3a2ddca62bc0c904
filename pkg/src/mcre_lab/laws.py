"""Scalar probability laws used for environments and inter-arrival times.

Continuous laws are plain ``scipy.stats`` frozen distributions.  Two small
classes fill the gaps scipy leaves: finite discrete laws on arbitrary real
atoms and the point mass.  Everything is sampled through ``ppf`` of uniforms
so a generator stream fully determines the draw.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np
from scipy import integrate, stats

PROB_TOL = 1e-12


@dataclass(frozen=True)
class FiniteLaw:
    """Discrete law with real atoms ``values`` and weights ``probs``."""

    values: tuple
    probs: tuple

    def __init__(self, values: Sequence[float], probs: Sequence[float] | None = None):
        vals = np.asarray(values, dtype=float)
        if probs is None:
            p = np.full(len(vals), 1.0 / len(vals))
        else:
            p = np.asarray(probs, dtype=float)
        if vals.ndim != 1 or vals.shape != p.shape or len(vals) == 0:
            raise ValueError("values and probs must be equal-length 1-d sequences")
        if np.any(p < 0) or abs(p.sum() - 1.0) > PROB_TOL:
            raise ValueError(f"probabilities must be nonnegative and sum to 1 (sum={p.sum()!r})")
        if np.any(~np.isfinite(vals)):
            raise ValueError("atoms must be finite")
        order = np.argsort(vals, kind="stable")
        object.__setattr__(self, "values", tuple(vals[order].tolist()))
        object.__setattr__(self, "probs", tuple(p[order].tolist()))

    @property
    def atoms(self) -> np.ndarray:
        return np.asarray(self.values)

    @property
    def weights(self) -> np.ndarray:
        return np.asarray(self.probs)

    def ppf(self, u):
        cum = np.cumsum(self.weights)
        idx = np.searchsorted(cum, np.asarray(u, dtype=float), side="left")
        return self.atoms[np.minimum(idx, len(cum) - 1)]

    def index_ppf(self, u):
        cum = np.cumsum(self.weights)
        idx = np.searchsorted(cum, np.asarray(u, dtype=float), side="left")
        return np.minimum(idx, len(cum) - 1)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.sum(self.weights * (self.atoms <= x[..., None]), axis=-1)

    def sf(self, x):
        return 1.0 - self.cdf(x)

    def expect(self, func: Callable = None, **_: Any) -> float:
        if func is None:
            return self.mean()
        return float(np.sum(self.weights * np.asarray(func(self.atoms), dtype=float)))

    def mean(self) -> float:
        return float(np.dot(self.weights, self.atoms))

    def moment(self, order: int) -> float:
        return float(np.dot(self.weights, self.atoms**order))

    def support(self) -> tuple[float, float]:
        return float(self.atoms[0]), float(self.atoms[-1])

    def describe(self) -> dict:
        return {"dist": "finite", "values": list(self.values), "probs": list(self.probs)}


@dataclass(frozen=True)
class PointMass:
    value: float

    def ppf(self, u):
        return np.full(np.shape(u), float(self.value)) if np.ndim(u) else float(self.value)

    def cdf(self, x):
        return np.where(np.asarray(x, dtype=float) >= self.value, 1.0, 0.0)

    def sf(self, x):
        return 1.0 - self.cdf(x)

    def pdf(self, x):
        raise ValueError("a point mass has no Lebesgue density")

    def expect(self, func: Callable = None, **_: Any) -> float:
        if func is None:
            return float(self.value)
        return float(func(np.float64(self.value)))

    def mean(self) -> float:
        return float(self.value)

    def moment(self, order: int) -> float:
        return float(self.value) ** order

    def support(self) -> tuple[float, float]:
        return float(self.value), float(self.value)

    def describe(self) -> dict:
        return {"dist": "point", "value": float(self.value)}


def is_discrete(law) -> bool:
    return isinstance(law, (FiniteLaw, PointMass))


def as_finite(law) -> FiniteLaw:
    if isinstance(law, FiniteLaw):
        return law
    if isinstance(law, PointMass):
        return FiniteLaw([law.value], [1.0])
    raise TypeError(f"{law!r} is not a finite-alphabet law")


def support(law) -> tuple[float, float]:
    if hasattr(law, "support"):
        lo, hi = law.support()
        return float(lo), float(hi)
    raise TypeError(f"cannot determine support of {law!r}")


def describe(law) -> dict:
    if hasattr(law, "describe"):
        return law.describe()
    # scipy frozen distribution
    return {"dist": law.dist.name, "args": [float(a) for a in law.args],
            "kwds": {k: float(v) for k, v in sorted(law.kwds.items())}}


def _loc_scale(law) -> tuple[float, float]:
    shapes = law.dist.numargs
    args = list(law.args)
    loc = law.kwds.get("loc", args[shapes] if len(args) > shapes else 0.0)
    scale = law.kwds.get("scale", args[shapes + 1] if len(args) > shapes + 1 else 1.0)
    return float(loc), float(scale)


def laplace_transform(law, t: float, rtol: float = 1e-10) -> float:
    """``E[exp(-t Z)]``; closed form for point mass, exponential and gamma laws."""
    if isinstance(law, (FiniteLaw, PointMass)):
        return law.expect(lambda z: np.exp(-t * z))
    name = getattr(getattr(law, "dist", None), "name", None)
    if name in ("expon", "gamma"):
        loc, scale = _loc_scale(law)
        shape = 1.0 if name == "expon" else float(law.args[0] if law.args else law.kwds["a"])
        if 1.0 + t * scale <= 0:
            raise ValueError(f"Laplace transform diverges at t={t}")
        return float(np.exp(-t * loc) * (1.0 + t * scale) ** (-shape))
    lo, hi = law.support()
    with np.errstate(over="ignore"):
        val, _ = integrate.quad(lambda z: np.exp(-t * z) * law.pdf(z), lo, hi, epsrel=rtol, limit=200)
    if not np.isfinite(val):
        raise ValueError(f"Laplace transform diverges at t={t}")
    return float(val)


def mgf(law, t: float, rtol: float = 1e-10) -> float:
    """``E[exp(t S)]`` for a law with bounded support or closed form."""
    if isinstance(law, (FiniteLaw, PointMass)):
        return law.expect(lambda s: np.exp(t * s))
    name = law.dist.name
    if name == "uniform":
        loc, scale = _loc_scale(law)
        if t == 0:
            return 1.0
        return float(np.exp(t * loc) * np.expm1(t * scale) / (t * scale))
    if name in ("expon", "gamma"):
        return laplace_transform(law, -t)
    lo, hi = law.support()
    val, _ = integrate.quad(lambda s: np.exp(t * s) * law.pdf(s), lo, hi, epsrel=rtol, limit=200)
    if not np.isfinite(val):
        raise ValueError(f"moment generating function diverges at t={t}")
    return float(val)


def make_law(cfg: dict):
    """Build a law from a config table such as ``{dist = "expon", rate = 2.0}``."""
    cfg = dict(cfg)
    kind = cfg.pop("dist")
    if kind == "finite":
        return FiniteLaw(cfg["values"], cfg.get("probs"))
    if kind == "point":
        return PointMass(float(cfg["value"]))
    if kind == "expon":
        return stats.expon(scale=1.0 / float(cfg.get("rate", 1.0)))
    if kind == "uniform":
        low, high = float(cfg.get("low", 0.0)), float(cfg.get("high", 1.0))
        return stats.uniform(loc=low, scale=high - low)
    if kind == "gamma":
        return stats.gamma(float(cfg["shape"]), scale=1.0 / float(cfg.get("rate", 1.0)))
    if kind == "truncexpon":
        rate, upper = float(cfg.get("rate", 1.0)), float(cfg["upper"])
        return stats.truncexpon(upper * rate, scale=1.0 / rate)
    raise ValueError(f"unknown distribution {kind!r}")
