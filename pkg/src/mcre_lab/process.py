"""Random iterations driven by an exogenous environment and uniform noise.

A chain is ``X[t+1] = f(X[t], Y[t], eps[t+1])`` with ``eps`` i.i.d. uniform on
[0, 1].  Environments are described by small spec objects (:class:`IID`,
:class:`FiniteMarkov`, :class:`MovingSum`, :class:`Scripted`).  Finite-alphabet
specs also expose an exact hidden-Markov representation so that joint laws of
blocks can be enumerated (see :mod:`mcre_lab.mixing`).

Array conventions: time is the *last* axis of environment and noise arrays,
and the *first* axis of ``Trajectory.states``.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import laws as _laws
from .laws import FiniteLaw, PROB_TOL


# ---------------------------------------------------------------------------
# hidden-chain representation of finite environments


@dataclass
class HiddenChain:
    """Observed symbol ``emission[h]`` of a (possibly inhomogeneous) Markov chain ``h``."""

    alphabet: np.ndarray
    emission: np.ndarray
    dist_at: Callable[[int], np.ndarray]
    transition: Callable[[int], np.ndarray]

    @property
    def n_hidden(self) -> int:
        return len(self.emission)


def _unique_alphabet(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rounded = np.round(values, 12)
    alphabet, inverse = np.unique(rounded, return_inverse=True)
    return alphabet, inverse


# ---------------------------------------------------------------------------
# environment specs


class EnvironmentSpec:
    """Base class; subclasses implement ``sample`` and describe themselves."""

    finite = False
    stationary = False

    def sample(self, start: int, horizon: int, rng: np.random.Generator, size=None) -> np.ndarray:
        raise NotImplementedError

    def hidden_chain(self) -> HiddenChain:
        raise TypeError(f"{type(self).__name__} has no finite-alphabet representation")

    def describe(self) -> dict:
        raise NotImplementedError

    def spec_hash(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def marginal(self, t: int) -> FiniteLaw:
        """Exact law of ``Y[t]`` for finite specs."""
        chain = self.hidden_chain()
        dist = chain.dist_at(t)
        probs = np.bincount(chain.emission, weights=dist, minlength=len(chain.alphabet))
        keep = probs > 0
        return FiniteLaw(chain.alphabet[keep], probs[keep] / probs[keep].sum())

    @property
    def alphabet(self) -> np.ndarray:
        return self.hidden_chain().alphabet

    def symbol_index(self, values) -> np.ndarray:
        alphabet = self.alphabet
        idx = np.searchsorted(alphabet, np.round(np.asarray(values, dtype=float), 12))
        idx = np.minimum(idx, len(alphabet) - 1)
        if not np.all(np.isclose(alphabet[idx], values, atol=1e-9)):
            raise ValueError("value outside the declared alphabet")
        return idx


@dataclass
class IID(EnvironmentSpec):
    law: object

    stationary = True

    @property
    def finite(self) -> bool:
        return _laws.is_discrete(self.law)

    def sample(self, start, horizon, rng, size=None):
        shape = (horizon + 1,) if size is None else (size, horizon + 1)
        return np.asarray(self.law.ppf(rng.random(shape)), dtype=float).reshape(shape)

    def hidden_chain(self) -> HiddenChain:
        law = _laws.as_finite(self.law)
        p = law.weights
        k = len(p)
        return HiddenChain(law.atoms, np.arange(k), lambda t: p.copy(), lambda t: np.tile(p, (k, 1)))

    def describe(self):
        return {"kind": "iid", "law": _laws.describe(self.law)}


@dataclass
class FiniteMarkov(EnvironmentSpec):
    """Finite-state chain; ``init`` is the law at index 0."""

    values: Sequence[float]
    matrix: Sequence[Sequence[float]]
    init: Sequence[float] | None = None

    finite = True

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.matrix = np.asarray(self.matrix, dtype=float)
        k = len(self.values)
        if self.matrix.shape != (k, k):
            raise ValueError(f"transition matrix must be {k}x{k}, got {self.matrix.shape}")
        if np.any(self.matrix < 0) or np.any(np.abs(self.matrix.sum(axis=1) - 1.0) > PROB_TOL):
            raise ValueError("transition matrix rows must be nonnegative and sum to 1")
        if self.init is None:
            self.init = stationary_distribution(self.matrix)
        self.init = np.asarray(self.init, dtype=float)
        if self.init.shape != (k,) or np.any(self.init < 0) or abs(self.init.sum() - 1.0) > PROB_TOL:
            raise ValueError("initial law must be a probability vector over the alphabet")

    @property
    def stationary(self) -> bool:
        return bool(np.allclose(self.init @ self.matrix, self.init, atol=1e-12))

    def dist_at(self, t: int) -> np.ndarray:
        if t < 0:
            if not self.stationary:
                raise ValueError("negative indices need a stationary initial law")
            return self.init.copy()
        return self.init @ np.linalg.matrix_power(self.matrix, t)

    def sample(self, start, horizon, rng, size=None):
        n = 1 if size is None else size
        u = rng.random((n, horizon + 1))
        cum_init = np.cumsum(self.dist_at(start))
        cum = np.cumsum(self.matrix, axis=1)
        k = len(self.values)
        states = np.empty((n, horizon + 1), dtype=np.intp)
        states[:, 0] = np.minimum(np.searchsorted(cum_init, u[:, 0]), k - 1)
        for t in range(horizon):
            rows = cum[states[:, t]]
            states[:, t + 1] = np.minimum((u[:, t + 1, None] > rows).sum(axis=1), k - 1)
        out = self.values[states]
        return out[0] if size is None else out

    def hidden_chain(self) -> HiddenChain:
        alphabet, inverse = _unique_alphabet(self.values)
        return HiddenChain(alphabet, inverse, self.dist_at, lambda t: self.matrix)

    def describe(self):
        return {"kind": "markov", "values": self.values.tolist(), "matrix": self.matrix.tolist(),
                "init": self.init.tolist()}


@dataclass
class MovingSum(EnvironmentSpec):
    """``Y[n] = Z[n-m] + ... + Z[n]`` with i.i.d. base draws ``Z``."""

    order: int
    base: object

    stationary = True

    def __post_init__(self):
        if int(self.order) < 1:
            raise ValueError("moving-sum order must be >= 1")
        self.order = int(self.order)

    @property
    def finite(self) -> bool:
        return _laws.is_discrete(self.base)

    def sample(self, start, horizon, rng, size=None):
        m = self.order
        shape = (horizon + m + 1,) if size is None else (size, horizon + m + 1)
        z = np.asarray(self.base.ppf(rng.random(shape)), dtype=float).reshape(shape)
        y = z[..., 0:horizon + 1].copy()
        for i in range(1, m + 1):
            y = y + z[..., i:i + horizon + 1]
        return y

    def hidden_chain(self) -> HiddenChain:
        base = _laws.as_finite(self.base)
        k, m = len(base.probs), self.order
        p = base.weights
        # hidden state = (Z[n-m], ..., Z[n]) in base-k digits, oldest digit most significant
        digits = np.array(np.unravel_index(np.arange(k ** (m + 1)), (k,) * (m + 1))).T
        sums = base.atoms[digits].sum(axis=1)
        alphabet, inverse = _unique_alphabet(sums)
        weight = np.prod(p[digits], axis=1)
        n_h = k ** (m + 1)
        trans = np.zeros((n_h, n_h))
        for h in range(n_h):
            tail = digits[h, 1:]
            for z in range(k):
                nxt = np.ravel_multi_index(tuple(np.append(tail, z)), (k,) * (m + 1))
                trans[h, nxt] += p[z]
        return HiddenChain(alphabet, inverse, lambda t: weight.copy(), lambda t: trans)

    def describe(self):
        return {"kind": "moving_sum", "order": self.order, "base": _laws.describe(self.base)}


@dataclass
class Scripted(EnvironmentSpec):
    """Independent coordinates with an explicit law per index ``0..len(laws)-1``."""

    laws: Sequence[object]

    stationary = False

    @property
    def finite(self) -> bool:
        return all(_laws.is_discrete(law) for law in self.laws)

    def _check(self, start, horizon):
        if start < 0 or start + horizon >= len(self.laws):
            raise ValueError(f"scripted environment covers indices 0..{len(self.laws) - 1}")

    def sample(self, start, horizon, rng, size=None):
        self._check(start, horizon)
        shape = (horizon + 1,) if size is None else (size, horizon + 1)
        u = rng.random(shape)
        out = np.empty(shape)
        for i in range(horizon + 1):
            out[..., i] = self.laws[start + i].ppf(u[..., i])
        return out

    def hidden_chain(self) -> HiddenChain:
        finite = [_laws.as_finite(law) for law in self.laws]
        alphabet = np.unique(np.round(np.concatenate([f.atoms for f in finite]), 12))
        k = len(alphabet)

        def dist(t):
            if t < 0 or t >= len(finite):
                raise ValueError(f"scripted environment covers indices 0..{len(finite) - 1}")
            out = np.zeros(k)
            out[np.searchsorted(alphabet, np.round(finite[t].atoms, 12))] = finite[t].weights
            return out

        return HiddenChain(alphabet, np.arange(k), dist, lambda t: np.tile(dist(t + 1), (k, 1)))

    def describe(self):
        return {"kind": "scripted", "laws": [_laws.describe(law) for law in self.laws]}


def stationary_distribution(matrix) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    w, v = np.linalg.eig(matrix.T)
    i = int(np.argmin(np.abs(w - 1.0)))
    pi = np.abs(np.real(v[:, i]))
    return pi / pi.sum()


def gen_environment(spec: EnvironmentSpec, start: int, horizon: int, rng: np.random.Generator,
                    size: int | None = None) -> np.ndarray:
    """Values ``Y[start..start+horizon]``; shape ``(horizon+1,)`` or ``(size, horizon+1)``."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    return spec.sample(start, horizon, rng, size)


# ---------------------------------------------------------------------------
# iteration


@dataclass(frozen=True)
class IterationMap:
    """Pure update ``f(x, y, u)``; ``nonnegative`` declares the state space R+."""

    update: Callable
    nonnegative: bool = False
    name: str = "map"

    def __call__(self, x, y, u):
        out = self.update(x, y, u)
        if self.nonnegative and np.any(np.asarray(out) < 0):
            raise ValueError(f"{self.name} left the nonnegative state space")
        return out


@dataclass
class Trajectory:
    states: np.ndarray
    env: np.ndarray
    start: int = 0
    master_seed: int | None = None
    stream_ids: tuple = ()
    spec_hash: str | None = None

    @property
    def horizon(self) -> int:
        return len(self.states) - 1

    def to_csv(self, path) -> None:
        """Write ``t,state_0..state_{d-1},env`` plus a ``.json`` metadata sidecar."""
        path = Path(path)
        states = np.asarray(self.states, dtype=float).reshape(len(self.states), -1)
        d = states.shape[1]
        env = np.asarray(self.env, dtype=float)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"state_{i}" for i in range(d)] + ["env"])
            for i, row in enumerate(states):
                e = repr(float(env[i])) if i < len(env) else ""
                w.writerow([self.start + i] + [repr(float(v)) for v in row] + [e])
        meta = {"master_seed": self.master_seed, "stream_id": list(self.stream_ids),
                "spec_hash": self.spec_hash}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2))


def iterate(fmap: IterationMap, x0, env, noise, horizon: int | None = None) -> Trajectory:
    """Run ``states[t+1] = f(states[t], env[t], noise[t])``.

    ``noise[t]`` holds the uniform that enters step ``t -> t+1``.  Replicas may
    be stacked in the trailing axes of ``x0``; ``env``/``noise`` then carry
    time on axis 0 after transposition.
    """
    env = np.asarray(env, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if horizon is None:
        horizon = env.shape[0]
    if env.shape[0] < horizon or noise.shape[0] < horizon:
        raise ValueError(f"need {horizon} environment and noise entries, got "
                         f"{env.shape[0]} and {noise.shape[0]}")
    if np.any((noise[:horizon] < 0) | (noise[:horizon] > 1)):
        raise ValueError("noise entries must lie in [0, 1]")
    x = np.asarray(x0, dtype=float)
    states = np.empty((horizon + 1,) + x.shape)
    states[0] = x
    for t in range(horizon):
        states[t + 1] = fmap(states[t], env[t], noise[t])
    return Trajectory(states=states, env=env[:horizon])


def anchored_window(fmap: IterationMap, anchor, s: int, env, noise, horizon: int | None = None) -> Trajectory:
    """The restarted chain ``Z_{s,t}`` for ``t = s..horizon`` sharing env and noise."""
    env = np.asarray(env, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if horizon is None:
        horizon = env.shape[0]
    if s < 0 or s > horizon:
        raise ValueError(f"restart index {s} outside [0, {horizon}]")
    traj = iterate(fmap, anchor, env[s:horizon], noise[s:horizon], horizon - s)
    traj.start = s
    return traj
