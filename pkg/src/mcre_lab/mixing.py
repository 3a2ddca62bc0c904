"""Exact alpha-mixing coefficients of finite-alphabet processes.

For sigma-algebras generated by finite partitions ``{a}`` and ``{h}`` the
coefficient ``sup |P(G & H) - P(G)P(H)|`` is attained, for a fixed union
``H``, at the union ``G`` of atoms with ``d_a = P(a & H) - P(a)P(H) > 0``.
Because ``sum_a d_a = 0`` the negative side gives the same value, so only the
subsets of one side need enumeration.

Coefficients of infinite-past/infinite-future sigma-algebras are approximated
by finite blocks; such values are lower bounds and flagged as such.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .process import EnvironmentSpec, FiniteMarkov, HiddenChain, IID, MovingSum, Scripted

MAX_ATOMS = 12
ZERO_TOL = 1e-14
EXACT = "exact"
LOWER = "lower-bound-from-finite-blocks"
TRANSFER = "transfer-bound"


@dataclass
class BlockLaw:
    """Joint law of a past block (rows) and a future block (columns)."""

    table: np.ndarray
    j: int | None = None
    gap: int | None = None
    past_len: int | None = None
    future_len: int | None = None

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=float)
        if self.table.ndim != 2:
            raise ValueError("block law table must be 2-d (past atoms x future atoms)")
        if np.any(self.table < -1e-15) or abs(self.table.sum() - 1.0) > 1e-12:
            raise ValueError(f"block law must be a probability table (sum={self.table.sum()!r})")
        self.table = np.clip(self.table, 0.0, None)

    @property
    def past(self) -> np.ndarray:
        return self.table.sum(axis=1)

    @property
    def future(self) -> np.ndarray:
        return self.table.sum(axis=0)

    def compact(self) -> "BlockLaw":
        """Drop null atoms; the coefficient does not see them."""
        rows = self.past > 0
        cols = self.future > 0
        t = self.table[rows][:, cols]
        return BlockLaw(t / t.sum(), self.j, self.gap, self.past_len, self.future_len)

    def is_product(self, atol: float = 1e-10) -> bool:
        return bool(np.max(np.abs(self.table - np.outer(self.past, self.future))) <= atol)


def _subset_masks(k: int) -> np.ndarray:
    codes = np.arange(2 ** k, dtype=np.int64)
    return ((codes[:, None] >> np.arange(k)) & 1).astype(float)


def alpha_finite_exact(law: BlockLaw, max_atoms: int = MAX_ATOMS) -> float:
    """``sup_{G,H} |P(G & H) - P(G)P(H)|`` by enumerating unions of the smaller side.

    Values below ``ZERO_TOL`` are summation residue and are returned as 0.
    """
    law = law.compact()
    table = law.table
    if table.shape[0] < table.shape[1]:
        table = table.T
    pa, ph = table.sum(axis=1), table.sum(axis=0)
    k = len(ph)
    if k > max_atoms:
        raise ValueError(f"both block sides carry more than {max_atoms} atoms "
                         f"({table.shape[0]} x {k}); shorten the blocks or raise max_atoms")
    best = 0.0
    chunk = max(1, 2 ** 22 // max(len(pa), 1))
    masks_all = _subset_masks(k)
    for start in range(0, len(masks_all), chunk):
        masks = masks_all[start:start + chunk]
        joint = masks @ table.T                # P(a & H) per subset H
        d = joint - np.outer(masks @ ph, pa)
        best = max(best, float(np.max(np.sum(np.clip(d, 0.0, None), axis=1))))
    return 0.0 if best < ZERO_TOL else min(best, 0.25)


# ---------------------------------------------------------------------------
# exact block laws from hidden-chain representations


def _emit_split(vec: np.ndarray, chain: HiddenChain) -> np.ndarray:
    """Split ``vec[..., h]`` by the symbol emitted from ``h``; new axis before ``h``."""
    k = len(chain.alphabet)
    out = np.zeros(vec.shape[:-1] + (k, vec.shape[-1]))
    for sym in range(k):
        sel = chain.emission == sym
        out[..., sym, :][..., sel] = vec[..., sel]
    return out


def block_joint(chain: HiddenChain | EnvironmentSpec, past: Sequence[int], future: Sequence[int]) -> BlockLaw:
    """Exact joint law of ``(Y_t)_{t in past}`` and ``(Y_t)_{t in future}``.

    Both index sets must be contiguous and ``max(past) < min(future)``.
    Rows index past symbol words, columns future words (first index most
    significant).
    """
    if isinstance(chain, EnvironmentSpec):
        chain = chain.hidden_chain()
    past, future = list(past), list(future)
    if not past or not future:
        raise ValueError("blocks must be non-empty")
    if past != list(range(past[0], past[-1] + 1)) or future != list(range(future[0], future[-1] + 1)):
        raise ValueError("blocks must be contiguous index ranges")
    if past[-1] >= future[0]:
        raise ValueError("past block must end before the future block starts")

    # forward pass over the past block: vec[word, h]
    vec = chain.dist_at(past[0])[None, :]
    vec = _emit_split(vec, chain).reshape(-1, chain.n_hidden)
    for t in past[:-1]:
        vec = vec @ chain.transition(t)
        vec = _emit_split(vec, chain).reshape(-1, chain.n_hidden)
    for t in range(past[-1], future[0]):
        vec = vec @ chain.transition(t)
    # future block; vec[past_word, future_word, h]
    fut = _emit_split(vec, chain)
    for t in future[:-1]:
        fut = fut @ chain.transition(t)
        fut = _emit_split(fut, chain)
        fut = fut.reshape(fut.shape[0], -1, chain.n_hidden)
    table = fut.reshape(fut.shape[0], -1, chain.n_hidden).sum(axis=-1)
    return BlockLaw(table, j=past[-1], gap=future[0] - past[-1], past_len=len(past), future_len=len(future))


def joint_law(chain: HiddenChain | EnvironmentSpec, times: Sequence[int]) -> np.ndarray:
    """Exact law of ``(Y_t)`` over contiguous ``times`` as a ``k x ... x k`` array."""
    if isinstance(chain, EnvironmentSpec):
        chain = chain.hidden_chain()
    times = list(times)
    vec = _emit_split(chain.dist_at(times[0])[None, :], chain).reshape(-1, chain.n_hidden)
    for t in times[:-1]:
        vec = _emit_split(vec @ chain.transition(t), chain).reshape(-1, chain.n_hidden)
    k = len(chain.alphabet)
    return vec.sum(axis=1).reshape((k,) * len(times))


# ---------------------------------------------------------------------------
# tables


@dataclass
class DependenceTable:
    """``alpha[(j, n)]`` values with per-cell provenance."""

    alpha: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @classmethod
    def from_sequence(cls, values: Sequence[float], provenance: str = EXACT, start: int = 1) -> "DependenceTable":
        """Table with ``sup_alpha[start + i] = values[i]`` stored at ``j = 0``."""
        table = cls()
        for i, v in enumerate(values):
            table.set(0, start + i, float(v), provenance)
        return table

    def set(self, j: int, n: int, value: float, provenance: str) -> None:
        if not (-1e-15 <= value <= 0.25 + 1e-15):
            raise ValueError(f"alpha value {value!r} outside [0, 1/4]")
        self.alpha[(int(j), int(n))] = min(max(float(value), 0.0), 0.25)
        self.provenance[(int(j), int(n))] = provenance

    @property
    def gaps(self) -> list[int]:
        return sorted({n for _, n in self.alpha})

    def sup_alpha(self, n: int) -> float:
        vals = [v for (j, m), v in self.alpha.items() if m == n]
        if not vals:
            raise KeyError(f"table does not cover gap {n}")
        return max(vals)

    def sup_provenance(self, n: int) -> str:
        provs = {p for (j, m), p in self.provenance.items() if m == n}
        return provs.pop() if len(provs) == 1 else LOWER

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["j", "n", "alpha", "provenance"])
            for (j, n) in sorted(self.alpha):
                w.writerow([j, n, repr(self.alpha[(j, n)]), self.provenance[(j, n)]])

    @classmethod
    def from_csv(cls, path) -> "DependenceTable":
        table = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                table.set(int(row["j"]), int(row["n"]), float(row["alpha"]), row["provenance"])
        return table


def _exact_for(spec: EnvironmentSpec, n: int, block_len: int) -> bool:
    if isinstance(spec, IID):
        return True
    if isinstance(spec, FiniteMarkov):
        # Markov property: the coefficient of the whole past/future equals that of Y_j, Y_{j+n}
        return True
    if isinstance(spec, MovingSum):
        return n > spec.order
    return False


def alpha_table(spec: EnvironmentSpec, max_gap: int, block_len: int = 1,
                j_range: Iterable[int] = (0,), max_atoms: int = MAX_ATOMS) -> DependenceTable:
    """Fill ``alpha[j][n]`` for ``n = 1..max_gap`` from exact block laws.

    The past block is ``Y_{j-block_len+1..j}`` and the future block
    ``Y_{j+n..j+n+block_len-1}``; for stationary specs negative indices are
    allowed.
    """
    if not spec.finite:
        raise TypeError("alpha_table needs a finite-alphabet environment")
    chain = spec.hidden_chain()
    table = DependenceTable()
    for j in j_range:
        past = range(j - block_len + 1, j + 1)
        if past[0] < 0 and not spec.stationary:
            raise ValueError("blocks reaching negative indices need a stationary spec")
        for n in range(1, max_gap + 1):
            law = block_joint(chain, past, range(j + n, j + n + block_len))
            value = alpha_finite_exact(law, max_atoms)
            prov = EXACT if _exact_for(spec, n, block_len) else LOWER
            table.set(j, n, value, prov)
    return table


def alpha_summability(spec: EnvironmentSpec) -> dict:
    """Analytic verdict on ``sum_n n^p alpha(n) < infinity`` for every ``p``.

    Finitely dependent specs have ``alpha(n) = 0`` beyond their order; an
    irreducible aperiodic finite chain mixes geometrically.  Anything else is
    reported as unverified.
    """
    if isinstance(spec, IID):
        return {"summable": True, "reason": "independent"}
    if isinstance(spec, MovingSum):
        return {"summable": True, "reason": f"{spec.order}-dependent: alpha(n) = 0 for n > {spec.order}"}
    if isinstance(spec, FiniteMarkov):
        P = spec.matrix
        k = len(P)
        power = np.linalg.matrix_power(P, (k - 1) ** 2 + 1)
        if np.all(power > 0):
            return {"summable": True, "reason": "primitive finite chain: geometric mixing"}
        return {"summable": False, "reason": "finite chain is not primitive; mixing rate not certified"}
    if isinstance(spec, Scripted):
        return {"summable": True, "reason": "independent coordinates"}
    return {"summable": False, "reason": "no analytic certificate for this spec"}


def cesaro_mixing(table: DependenceTable | Sequence[float], n: int) -> float:
    """``(1/n) sum_{k=1..n} sup_alpha[k]``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(table, DependenceTable):
        missing = [k for k in range(1, n + 1) if k not in table.gaps]
        if missing:
            raise ValueError(f"table does not cover gaps {missing[:5]}")
        vals = [table.sup_alpha(k) for k in range(1, n + 1)]
    else:
        if len(table) < n:
            raise ValueError(f"sequence covers {len(table)} gaps, need {n}")
        vals = list(table[:n])
    return float(np.sum(vals) / n)


@dataclass
class CouplingBoundSeq:
    """``b[n]`` for ``n = 0..len(b)-1`` valid from index ``N`` on."""

    b: np.ndarray
    N: int = 0

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float)
        if np.any(self.b < 0) or np.any(self.b > 1):
            raise ValueError("coupling bounds must lie in [0, 1]")

    def __call__(self, n: int) -> float:
        if n < self.N:
            raise ValueError(f"coupling bound only valid for n >= {self.N}")
        if n >= len(self.b):
            raise ValueError(f"coupling bound sequence covers n < {len(self.b)}")
        return float(self.b[n])


def transfer_bound(alpha_env: DependenceTable | Sequence[float], b: CouplingBoundSeq, n: int,
                   r: int | None = None) -> float:
    """``alpha_env(r+1) + b(n-r)``; default ``r = n // 2``.

    A plain sequence ``alpha_env`` is read as ``alpha_env[k-1] = alpha(k)``.
    """
    if n <= b.N:
        raise ValueError(f"n={n} must exceed N={b.N}")
    if r is None:
        r = n // 2
    if not 0 <= r <= n - b.N:
        raise ValueError(f"r={r} outside [0, {n - b.N}]")
    if isinstance(alpha_env, DependenceTable):
        a = alpha_env.sup_alpha(r + 1)
    else:
        a = float(alpha_env[r])
    return min(a + b(n - r), 1.0)


def product_law(first: BlockLaw, second: BlockLaw) -> BlockLaw:
    """Law of ``(A1, A2) x (B1, B2)`` when pair 2 is independent of pair 1."""
    t1, t2 = first.table, second.table
    joint = np.einsum("ab,cd->acbd", t1, t2).reshape(t1.shape[0] * t2.shape[0], t1.shape[1] * t2.shape[1])
    return BlockLaw(joint)


def sigma_composition_check(first: BlockLaw, independent_pair: BlockLaw, tol: float = 1e-12,
                            max_atoms: int = MAX_ATOMS) -> tuple[float, float]:
    """Return ``(alpha(A1 v A2, B1 v B2), alpha(A1, B1))`` and assert they agree.

    ``independent_pair`` must have independent coordinates (checked to 1e-10);
    its independence from the first pair is built into the product law.
    """
    if not independent_pair.is_product(1e-10):
        raise ValueError("second pair is not internally independent")
    lhs = alpha_finite_exact(product_law(first, independent_pair), max_atoms)
    rhs = alpha_finite_exact(first, max_atoms)
    if abs(lhs - rhs) > tol:
        raise AssertionError(f"joining an independent pair changed alpha: {lhs!r} vs {rhs!r}")
    return lhs, rhs


# ---------------------------------------------------------------------------
# exactly solvable toy: two-state environment driving a threshold map


@dataclass
class ThresholdToy:
    """``X[t+1] = 1{eps[t+1] < p[X[t]][Y[t]]}`` with a two-state Markov ``Y``.

    Two copies driven by the same ``eps`` move to 1 together with probability
    ``min(p1, p2)`` and disagree with probability ``|p1 - p2|``; once equal
    they stay equal.
    """

    env: FiniteMarkov
    p: np.ndarray
    x0: int = 0

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        if self.p.shape != (2, len(self.env.values)):
            raise ValueError("p must have shape (2, environment alphabet size)")

    def _env_dist(self, t):
        return self.env.dist_at(t)

    def hidden_chain(self) -> HiddenChain:
        """Hidden state ``(x, y)`` -> index ``2*y + x``; emits ``x``."""
        m = len(self.env.values)
        P = self.env.matrix
        trans = np.zeros((2 * m, 2 * m))
        for y in range(m):
            for x in range(2):
                p1 = self.p[x, y]
                for y2 in range(m):
                    trans[2 * y + x, 2 * y2 + 1] += P[y, y2] * p1
                    trans[2 * y + x, 2 * y2 + 0] += P[y, y2] * (1 - p1)

        def dist(t):
            if t != 0:
                v = dist(0)
                return v @ np.linalg.matrix_power(trans, t)
            v = np.zeros(2 * m)
            v[2 * np.arange(m) + self.x0] = self._env_dist(0)
            return v

        return HiddenChain(np.array([0.0, 1.0]), np.tile([0, 1], m), dist, lambda t: trans)

    def alpha_x(self, horizon: int, max_atoms: int = 64) -> dict:
        """Exact ``alpha^X(n) = max_j alpha(X_0..X_j ; X_{j+n}..X_horizon)``."""
        chain = self.hidden_chain()
        out = {}
        for n in range(1, horizon + 1):
            best = 0.0
            for j in range(0, horizon - n + 1):
                law = block_joint(chain, range(0, j + 1), range(j + n, horizon + 1))
                best = max(best, alpha_finite_exact(law, max_atoms))
            out[n] = best
        return out

    def disagreement(self, s: int, k: int, anchor: int) -> float:
        """Exact ``P(Z^{X_s}_{s,s+k} != Z^{anchor}_{s,s+k})``."""
        m = len(self.env.values)
        P = self.env.matrix
        # joint law of (X_s, Y_s)
        hv = self.hidden_chain().dist_at(s).reshape(m, 2)   # [y, x]
        # state (y, a, b) with a = reference chain, b = anchored chain
        state = np.zeros((m, 2, 2))
        state[:, :, anchor] = hv
        for _ in range(k):
            nxt = np.zeros_like(state)
            for y in range(m):
                for a in range(2):
                    for c in range(2):
                        w = state[y, a, c]
                        if w == 0:
                            continue
                        pa, pc = self.p[a, y], self.p[c, y]
                        both1 = min(pa, pc)
                        a1 = pa - both1
                        c1 = pc - both1
                        both0 = 1 - max(pa, pc)
                        for y2 in range(m):
                            q = w * P[y, y2]
                            nxt[y2, 1, 1] += q * both1
                            nxt[y2, 1, 0] += q * a1
                            nxt[y2, 0, 1] += q * c1
                            nxt[y2, 0, 0] += q * both0
            state = nxt
        return float(state[:, 0, 1].sum() + state[:, 1, 0].sum())

    def coupling_bounds(self, horizon: int, anchor: int = 0) -> CouplingBoundSeq:
        """``b(k) = max_{s <= horizon-k} P(Z^{X_s}_{s,s+k} != Z^{anchor}_{s,s+k})``."""
        b = [max(self.disagreement(s, k, anchor) for s in range(0, horizon - k + 1))
             for k in range(0, horizon + 1)]
        return CouplingBoundSeq(np.minimum(b, 1.0), N=0)

    def env_alpha(self, max_gap: int) -> DependenceTable:
        """Markov environment coefficients; noise coordinates do not change them."""
        return alpha_table(self.env, max_gap, block_len=1, j_range=(0,))

    def soundness_table(self, horizon: int = 5) -> list[dict]:
        """Every admissible ``(n, r)`` with exact ``alpha^X(n)`` and the transfer bound."""
        ax = self.alpha_x(horizon)
        b = self.coupling_bounds(horizon)
        aenv = self.env_alpha(horizon + 1)
        rows = []
        for n in range(1, horizon + 1):
            for r in range(0, n - b.N + 1):
                bound = transfer_bound(aenv, b, n, r)
                rows.append({"n": n, "r": r, "alpha_x": ax[n], "bound": bound, "ok": ax[n] <= bound + 1e-12})
        return rows
