import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from interlace.cutsaus import (CutSelection, avoid_path, connect_around, connect_around_many,
                               cut_mask, cut_times, decompose, is_avoidable_verify,
                               staircase_order)
from interlace.lattice import Box, SiteSet, boundary, is_path
from interlace.walk import RngStream, StopRule, Trajectory, sample_walk

from walkgen import brute_cuts, paired_walk, random_steps


@pytest.mark.parametrize("d", [3, 4, 5])
@pytest.mark.parametrize("strict", [True, False])
def test_cut_times_match_brute_force(d, strict):
    rng = np.random.default_rng(d + 10 * strict)
    for _ in range(30):
        steps = random_steps(rng, d, int(rng.integers(2, 300)))
        assert np.flatnonzero(cut_mask(steps, strict)).tolist() == brute_cuts(steps, strict)


@given(st.integers(0, 2 ** 32 - 1), st.integers(3, 5))
@settings(max_examples=60, deadline=None)
def test_cut_times_hypothesis(seed, d):
    steps = random_steps(np.random.default_rng(seed), d, 120)
    assert np.flatnonzero(cut_mask(steps)).tolist() == brute_cuts(steps)


def test_straight_line_is_all_cuts_with_full_rings():
    d = 4
    steps = np.zeros((12, d), dtype=np.int64)
    steps[:, 0] = np.arange(12)
    t = Trajectory(steps, origin_time=-3)
    assert cut_times(t) == list(range(-2, 8))
    dec = decompose(t, CutSelection("greedy"))
    assert all(len(r) == 3 ** (d - 1) - 1 for r in dec.rings)
    assert all(len(s) == 1 for s in dec.sausages)
    assert dec.check_fill_identity()


def test_selection_policies():
    cuts = [1, 2, 3, 5, 6, 9, 10, 11]
    assert CutSelection("greedy").select(cuts, 0, 12) == [1, 3, 5, 9, 11]
    assert CutSelection("blocks", block=2).select(cuts, 0, 12) == [1, 5, 9]
    assert CutSelection("given", times=(2, 6)).select(cuts, 0, 12) == [2, 6]
    with pytest.raises(ValueError):
        CutSelection("given", times=(2, 4)).select(cuts, 0, 12)
    with pytest.raises(ValueError):
        CutSelection("given", times=(5, 6)).select(cuts, 0, 12)


@pytest.mark.parametrize("d", [4, 5])
def test_decomposition_fill_identity_and_surgery(d):
    for j in range(5):
        t = sample_walk(np.zeros(d, dtype=int), StopRule.fixed_length(3000), RngStream(40 + d, j))
        dec = decompose(t, CutSelection("blocks", block=16))
        assert dec.check_fill_identity() and dec.check_exterior()
        U = dec.covered()
        X = t.at(dec.cut_times[dec.J // 2])
        rng = np.random.default_rng(j)
        while True:
            a, b = (tuple(np.array(X) + rng.integers(-30, 31, size=d)) for _ in range(2))
            if a not in U and b not in U:
                break
        tau = np.vstack([staircase_order(a, X, range(d)), staircase_order(X, b, range(d))[1:]])
        tau_p = avoid_path(tau, dec)
        assert is_avoidable_verify(U, tau, tau_p, 3 * max(dec.h, 2))


def test_decompose_needs_two_cuts():
    t = Trajectory(np.array([[0, 0, 0], [1, 0, 0]]))
    with pytest.raises(ValueError):
        decompose(t)


def _dec_of(rng, start, moves=12):
    st_ = paired_walk(rng, 3, moves, np.array(start))
    return decompose(Trajectory(st_), CutSelection("given", times=tuple(range(1, len(st_) - 1, 2))))


def _seg(a, b):
    return SiteSet(staircase_order(a, b, range(3)), d=3)


def test_connect_around_certificate():
    rng = np.random.default_rng(3)
    L0 = 24
    A1, A2 = _seg((-20, 5, 5), (0, 5, 5)), _seg((30, -10, 3), (30, 10, 3))
    C3 = Box((-2 * L0,) * 3, (3 * L0,) * 3)
    for _ in range(10):
        dec = _dec_of(rng, (10, 0, 0))
        tau = connect_around(A1, A2, dec, L0)
        assert is_path(tau) and C3.contains(tau).all()
        assert not dec.covered().contains(tau).any()
        assert tuple(tau[0]) in boundary(A1, "outer") and tuple(tau[-1]) in boundary(A2, "outer")


def test_connect_around_rejects_bad_input():
    rng = np.random.default_rng(4)
    dec = _dec_of(rng, (0, 0, 0))
    A = _seg((-20, 5, 5), (0, 5, 5))
    with pytest.raises(ValueError):
        connect_around(A, A, dec, 24)


def test_connect_around_many_plain_and_nested():
    rng = np.random.default_rng(5)
    L0 = 24
    decs = [_dec_of(rng, (0, 0, 0)), _dec_of(rng, (20, 20, 20))]
    A1, A2 = _seg((-20, 5, 5), (0, 5, 5)), _seg((30, -10, 3), (30, 10, 3))
    tau = connect_around_many(A1, A2, decs, L0)
    assert is_path(tau)
    shell = boundary(Box.ball((12, 12, 12), 11).sites(), "inner")
    inner = _seg((6, 12, 12), (18, 12, 12))
    decs = [_dec_of(rng, (-20, -20, -20))]
    for X, Y in ((shell, inner), (inner, shell)):
        tau = connect_around_many(X, Y, decs, L0)
        assert is_path(tau)
        assert tuple(tau[0]) in boundary(X, "outer") and tuple(tau[-1]) in boundary(Y, "outer")
