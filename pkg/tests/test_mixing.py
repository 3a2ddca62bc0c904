import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcre_lab.laws import FiniteLaw
from mcre_lab.mixing import (EXACT, LOWER, BlockLaw, CouplingBoundSeq, DependenceTable, ThresholdToy,
                             alpha_finite_exact, alpha_table, block_joint, cesaro_mixing, joint_law,
                             product_law, sigma_composition_check, transfer_bound)
from mcre_lab.process import IID, FiniteMarkov, MovingSum

COIN = FiniteLaw([0.0, 1.0], [0.5, 0.5])


def brute_alpha(table):
    """Independent oracle: every pair of event unions on both sides."""
    table = np.asarray(table)
    r, c = table.shape
    best = 0.0
    for rows in itertools.product([0, 1], repeat=r):
        for cols in itertools.product([0, 1], repeat=c):
            a, b = np.array(rows, bool), np.array(cols, bool)
            pab = table[np.ix_(a, b)].sum()
            best = max(best, abs(pab - table[a].sum() * table[:, b].sum()))
    return best


tables = st.integers(2, 4).flatmap(lambda r: st.integers(2, 4).flatmap(
    lambda c: st.lists(st.floats(0.0, 1.0), min_size=r * c, max_size=r * c).map(
        lambda v, r=r, c=c: np.array(v).reshape(r, c)))).filter(lambda t: t.sum() > 1e-3).map(lambda t: t / t.sum())


@settings(max_examples=60, deadline=None)
@given(tables)
def test_alpha_matches_brute_force(t):
    assert alpha_finite_exact(BlockLaw(t)) == pytest.approx(brute_alpha(t), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(tables)
def test_alpha_range_and_symmetry(t):
    a = alpha_finite_exact(BlockLaw(t))
    assert 0.0 <= a <= 0.25
    assert a == pytest.approx(alpha_finite_exact(BlockLaw(t.T)), abs=1e-14)


@settings(max_examples=60, deadline=None)
@given(tables, st.lists(st.floats(0.05, 0.95), min_size=4, max_size=4))
def test_refining_blocks_never_decreases_alpha(t, split):
    # split each past atom into two rows: the larger sigma-field contains the old one
    rows = []
    for i, row in enumerate(t):
        s = split[i % len(split)]
        rows += [s * row, (1 - s) * row * np.linspace(0.5, 1.5, len(row)) / np.mean(np.linspace(0.5, 1.5, len(row)))]
    fine = np.array(rows)
    fine = fine / fine.sum()
    coarse = fine[0::2] + fine[1::2]
    assert alpha_finite_exact(BlockLaw(fine)) >= alpha_finite_exact(BlockLaw(coarse)) - 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.01, 1), min_size=2, max_size=5), st.lists(st.floats(0.01, 1), min_size=2, max_size=5))
def test_product_laws_have_zero_alpha(p, q):
    p, q = np.array(p) / sum(p), np.array(q) / sum(q)
    assert alpha_finite_exact(BlockLaw(np.outer(p, q))) == pytest.approx(0.0, abs=1e-12)


def test_block_law_validation():
    with pytest.raises(ValueError):
        BlockLaw([[0.5, 0.6]])
    with pytest.raises(ValueError):
        BlockLaw([0.5, 0.5])


def test_atom_limit():
    t = np.full((13, 13), 1 / 169)
    with pytest.raises(ValueError, match="atoms"):
        alpha_finite_exact(BlockLaw(t))


def test_binary_symmetric_chain():
    # P(Y0 = Yn = 1) = 1/4 + (1/4) 0.8^n, so alpha(n) = 0.25 * 0.8^n
    spec = FiniteMarkov([0.0, 1.0], [[0.9, 0.1], [0.1, 0.9]])
    table = alpha_table(spec, 6)
    for n in range(1, 7):
        assert table.sup_alpha(n) == pytest.approx(0.25 * 0.8 ** n, abs=1e-12)
        assert table.sup_provenance(n) == EXACT


def _movsum_pair_table(gap, block):
    """Enumerate coin flips directly for (Y_{1-block+1..1}, Y_{1+gap..}) with Y_k = Z_{k-1} + Z_k."""
    ks = list(range(2 - block, 2)) + list(range(1 + gap, 1 + gap + block))
    zs = sorted({k - 1 for k in ks} | set(ks))
    joint = {}
    for flips in itertools.product([0, 1], repeat=len(zs)):
        z = dict(zip(zs, flips))
        past = tuple(z[k - 1] + z[k] for k in ks[:block])
        fut = tuple(z[k - 1] + z[k] for k in ks[block:])
        joint[(past, fut)] = joint.get((past, fut), 0) + 0.5 ** len(zs)
    pasts = sorted({p for p, _ in joint})
    futs = sorted({f for _, f in joint})
    return np.array([[joint.get((p, f), 0.0) for f in futs] for p in pasts])


@pytest.mark.parametrize("block", [1, 2])
def test_moving_sum_coefficients(block):
    spec = MovingSum(1, COIN)
    table = alpha_table(spec, 4, block_len=block, j_range=(1,))
    assert table.sup_alpha(1) == pytest.approx(brute_alpha(_movsum_pair_table(1, block)), abs=1e-12)
    assert table.sup_alpha(1) == pytest.approx({1: 0.0625, 2: 0.140625}[block], abs=1e-12)
    for n in (2, 3, 4):
        assert table.sup_alpha(n) == 0.0
        assert table.sup_provenance(n) == EXACT
    assert table.sup_provenance(1) == LOWER


def test_iid_alpha_zero():
    table = alpha_table(IID(FiniteLaw([0.0, 1.0, 3.0], [0.2, 0.3, 0.5])), 3, block_len=2)
    assert all(table.sup_alpha(n) == 0.0 for n in (1, 2, 3))


def test_block_joint_marginals():
    spec = FiniteMarkov([0.0, 1.0], [[0.9, 0.1], [0.3, 0.7]], init=[1.0, 0.0])
    law = block_joint(spec, [0], [1])
    assert np.allclose(law.table, [[0.9, 0.1], [0.0, 0.0]])
    with pytest.raises(ValueError):
        block_joint(spec, [0, 2], [3])
    j = joint_law(spec, [0, 1, 2])
    assert j.sum() == pytest.approx(1.0)


def test_table_csv_round_trip(tmp_path):
    t = alpha_table(MovingSum(1, COIN), 3)
    t.to_csv(tmp_path / "a.csv")
    back = DependenceTable.from_csv(tmp_path / "a.csv")
    assert back.alpha == t.alpha and back.provenance == t.provenance
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "j,n,alpha,provenance"


def test_table_rejects_out_of_range():
    with pytest.raises(ValueError):
        DependenceTable().set(0, 1, 0.3, EXACT)


def test_cesaro():
    assert cesaro_mixing([0.2, 0.1, 0.0, 0.0], 4) == pytest.approx(0.075)
    with pytest.raises(ValueError):
        cesaro_mixing([0.1], 2)
    t = DependenceTable.from_sequence([0.2, 0.0])
    assert cesaro_mixing(t, 2) == pytest.approx(0.1)


def test_transfer_bound_arithmetic():
    b = CouplingBoundSeq([1.0, 0.5, 0.25, 0.125])
    assert transfer_bound([0.2, 0.1, 0.05], b, 3, r=1) == pytest.approx(0.1 + 0.25)
    assert transfer_bound([0.25, 0.25, 0.25], CouplingBoundSeq([1, 1, 1, 1]), 3) == 1.0
    with pytest.raises(ValueError):
        transfer_bound([0.1] * 4, b, 3, r=4)
    with pytest.raises(ValueError):
        CouplingBoundSeq([1.2])


def test_sigma_composition():
    first = BlockLaw([[0.3, 0.2], [0.1, 0.4]])
    pair = BlockLaw(np.outer([0.6, 0.4], [0.5, 0.5]))
    lhs, rhs = sigma_composition_check(first, pair)
    assert lhs == pytest.approx(rhs)
    assert product_law(first, pair).table.shape == (4, 4)
    with pytest.raises(ValueError):
        sigma_composition_check(first, BlockLaw([[0.5, 0.0], [0.0, 0.5]]))


def test_threshold_toy_soundness():
    toy = ThresholdToy(FiniteMarkov([0.0, 1.0], [[0.8, 0.2], [0.3, 0.7]]), np.array([[0.2, 0.7], [0.4, 0.9]]))
    rows = toy.soundness_table(4)
    assert rows and all(r["ok"] for r in rows)
    assert {(r["n"], r["r"]) for r in rows} == {(n, r) for n in range(1, 5) for r in range(0, n + 1)}


def test_alpha_summability_verdicts():
    from mcre_lab.mixing import alpha_summability
    from mcre_lab.process import Scripted
    assert alpha_summability(MovingSum(2, COIN))["summable"]
    assert alpha_summability(IID(COIN))["summable"]
    assert alpha_summability(Scripted([COIN, COIN]))["summable"]
    assert alpha_summability(FiniteMarkov([0.0, 1.0], [[0.9, 0.1], [0.2, 0.8]]))["summable"]
    periodic = FiniteMarkov([0.0, 1.0], [[0.0, 1.0], [1.0, 0.0]])
    assert not alpha_summability(periodic)["summable"]
