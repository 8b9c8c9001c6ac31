"""Acceptance gate: one test per criterion; conftest prints a PASS/FAIL line
for each at the end of the run."""
import filecmp
import itertools
import json
import os

import numpy as np
import pytest
from scipy import ndimage

from interlace.coarse import (IBox, ScaleIndex, ScaleParams, box_of, contains3,
                              is_skeleton, merge_skeletons, split_geometry)
from interlace.cutsaus import (CutSelection, connect_around, decompose,
                               is_avoidable_verify, avoid_path)
from interlace.coarse import staircase
from interlace.experiments import (ExperimentConfig, run, run_diameter_tail,
                                   run_sausage_stats, run_vacant_law,
                                   weakly_decreasing, weakly_increasing)
from interlace.lattice import (Box, SiteSet, boundary, diameter, distance, fill,
                               fill_cases, is_connected, search)
from interlace.potential import (capacity, equilibrium, equilibrium_box, green,
                                 green_dirichlet, green_quadrature, green_table,
                                 orbit_reps)
from interlace.separation import (_edges, chi_exhaustive, find_separating_box,
                                  verify_witness)
from interlace.walk import StopRule, Trajectory, sample_walk

from walkgen import fill_oracle, paired_walk, random_animal


def _detail(record_property, text):
    record_property("detail", text)
    print(text)


# ---------------------------------------------------------------- criterion 1


@pytest.mark.slow
@pytest.mark.criterion(1, "vacant-law exactness")
def test_vacant_law_exactness(record_property):
    cfg = ExperimentConfig(kind="vacant-law", d=3, u=[0.5, 1.0], replicas=100_000,
                           chunk=5000, seed=20240611)
    rep = run_vacant_law(cfg)
    assert len(rep.rows) == 8
    z = np.array([r["z"] for r in rep.rows])
    _detail(record_property, f"8 (K, u) cells, max |z| = {np.abs(z).max():.2f} (limit 3)")
    assert np.all(np.abs(z) <= 3), rep.csv_text()


# ---------------------------------------------------------------- criterion 2


def _random_sets(rng, n, R=3):
    grid = Box.ball((0, 0, 0), R).grid()
    out = []
    for _ in range(n):
        k = int(rng.integers(1, 25))
        out.append(SiteSet(grid[rng.choice(len(grid), size=k, replace=False)], d=3))
    return out


@pytest.mark.criterion(2, "potential-theory oracles")
def test_potential_oracles(record_property):
    worst = 0.0
    for d in (3, 5):
        zs = orbit_reps(d, 5)
        q, eq = green_quadrature(d, zs)
        g, ed = green_dirichlet(d, zs)
        gap = float(np.abs(q - g).max())
        worst = max(worst, gap / (eq + ed))
        assert gap <= eq + ed, (d, gap, eq, ed)
    for d in (3, 5):
        c = capacity(SiteSet([(0,) * d], d=d))
        assert abs(c - 1 / green(d, (0,) * d)) <= 1e-6

    rng = np.random.default_rng(7)
    table = green_table(3, 6)
    viol = 0
    sets = _random_sets(rng, 2000)
    for K1, K2 in zip(sets[::2], sets[1::2]):
        c1 = equilibrium(K1, table).capacity
        c2 = equilibrium(K2, table).capacity
        cu = equilibrium(K1 | K2, table).capacity
        tol = 1e-9 * cu
        viol += c1 > cu + tol          # monotone: K1 inside K1 u K2
        viol += c2 > cu + tol
        viol += cu > c1 + c2 + tol     # subadditive
        viol += c1 > len(K1) + tol
    assert viol == 0

    slopes = {}
    for d, rs in ((3, (4, 6, 8, 11, 16)), (5, (4, 5, 6, 8))):
        caps = [equilibrium_box(Box.ball((0,) * d, r)).capacity for r in rs]
        slopes[d] = float(np.polyfit(np.log(rs), np.log(caps), 1)[0])
        assert abs(slopes[d] - (d - 2)) <= 0.15 * (d - 2), slopes
    _detail(record_property,
            f"green gap/tolerance <= {worst:.2g}; 1000 random sets 0 violations; "
            f"cap slopes d=3 {slopes[3]:.3f} (r 4..16), d=5 {slopes[5]:.3f} (r 4..8)")


# ---------------------------------------------------------------- criterion 3


def _linf_dist(P, Q):
    P, Q = np.asarray(P), np.asarray(Q)
    return int(np.abs(P[:, None] - Q[None]).max(axis=-1).min())


def _l1_dist(P, Q):
    P, Q = np.asarray(P), np.asarray(Q)
    return int(np.abs(P[:, None] - Q[None]).sum(axis=-1).min())


def _nested_pair(rng):
    """A hollow box shell and a connected set strictly inside it."""
    r = int(rng.integers(3, 5))
    shell = boundary(Box.ball((0, 0, 0), r).sites(), "inner")
    inner = random_animal(rng, 3, int(rng.integers(1, 12)), (-(r - 2),) * 3, (r - 2,) * 3)
    pair = (shell.points, np.array(sorted(inner)))
    return pair if rng.random() < 0.5 else pair[::-1]


@pytest.mark.criterion(3, "fill property suite")
def test_fill_properties(record_property):
    rng = np.random.default_rng(11)
    grid = Box.ball((0, 0, 0), 3).grid()
    bad = 0
    for _ in range(10_000):
        keep = rng.random(len(grid)) < rng.uniform(0.05, 0.95)
        if not keep.any():
            continue
        A = SiteSet(grid[keep], d=3)
        fA = fill(A)
        bad += not boundary(fA, "inner").issubset(A)
        bad += diameter(fA) != diameter(A)
        bad += fill(fA) != fA
        bad += set(fA) != fill_oracle(A.points)

    counts = {1: 0, 2: 0, 3: 0}
    tri_bad = 0
    n_pairs = 0
    for k in range(10_000):
        if k % 5 == 0:
            P, Q = _nested_pair(rng)
        else:
            P = np.array(sorted(random_animal(rng, 3, int(rng.integers(1, 30)), (-4,) * 3, (4,) * 3)))
            Q = np.array(sorted(random_animal(rng, 3, int(rng.integers(1, 30)), (-4,) * 3, (4,) * 3)))
        for norm, dist in (("l1", _l1_dist), ("linf", _linf_dist)):
            if dist(P, Q) <= 1:
                continue
            n_pairs += 1
            fP = np.array(sorted(fill_oracle(P)))
            fQ = np.array(sorted(fill_oracle(Q)))
            sP, sQ = set(map(tuple, fP.tolist())), set(map(tuple, fQ.tolist()))
            ref = (set(map(tuple, P.tolist())) <= sQ and _l1_dist(fP, Q) > 1,
                   set(map(tuple, Q.tolist())) <= sP and _l1_dist(fQ, P) > 1,
                   dist(fP, fQ) > 1)
            got = fill_cases(SiteSet(P, d=3), SiteSet(Q, d=3), norm)
            tri_bad += sum(ref) != 1 or tuple(got) != ref
            if sum(ref) == 1:
                counts[ref.index(True) + 1] += 1
    assert min(counts.values()) > 0, counts
    _detail(record_property, f"10^4 sets {bad} violations; {n_pairs} pairs {tri_bad} "
            f"violations (cases i/ii/iii seen {counts[1]}/{counts[2]}/{counts[3]})")
    assert bad == 0 and tri_bad == 0


# ---------------------------------------------------------------- criterion 4

_R = 3
_S = 2 * _R + 1


def _all_paths(box, n):
    eye = np.vstack([np.eye(3, dtype=np.int64), -np.eye(3, dtype=np.int64)])
    paths = box.grid()[:, None, :]
    for _ in range(n):
        nxt = (paths[:, None, -1, :] + eye[None]).reshape(-1, 3)
        paths = np.concatenate([np.repeat(paths, 6, axis=0), nxt[:, None, :]], axis=1)
        paths = paths[box.contains(paths[:, -1])]
    return paths


def _flat(p):
    return ((p + _R) * np.array([_S * _S, _S, 1])).sum(axis=-1)


def _flood(allowed, start):
    """Sites reachable from ``start`` inside ``allowed``, one row per path."""
    reach = np.zeros_like(allowed)
    reach[np.arange(len(start)), start] = True
    reach &= allowed
    a = allowed.reshape(-1, _S, _S, _S)
    while True:
        r = reach.reshape(-1, _S, _S, _S)
        nxt = r.copy()
        for ax in (1, 2, 3):
            hi = [slice(None)] * 4
            lo = [slice(None)] * 4
            hi[ax] = slice(1, None)
            lo[ax] = slice(None, -1)
            nxt[tuple(hi)] |= r[tuple(lo)]
            nxt[tuple(lo)] |= r[tuple(hi)]
        nxt &= a
        if np.array_equal(nxt, r):
            return nxt.reshape(len(start), -1)
        reach = nxt.reshape(len(start), -1)


def _avoidability(A: SiteSet, h: int, nmax: int = 4, verify_every: int = 0):
    """For every nearest-neighbour path with at most nmax steps in B(0, 3) and
    endpoints off A: does a modification exist (same endpoints, avoids A,
    new sites in the *-boundary of A and h-close to the range)?"""
    B3 = Box.ball((0, 0, 0), _R)
    g = B3.grid()
    inA = A.contains(g)
    skin = boundary(A, "star").contains(g)
    n_paths = n_unique = n_fail = n_verified = 0
    failing = []
    for n in range(nmax + 1):
        P = _all_paths(B3, n)
        P = P[~(A.contains(P[:, 0]) | A.contains(P[:, -1]))]
        n_paths += len(P)
        idx = _flat(P)
        rng = np.zeros((len(P), _S ** 3), dtype=bool)
        rng[np.repeat(np.arange(len(P)), n + 1), idx.ravel()] = True
        ends = np.stack([idx[:, 0], idx[:, -1]], axis=1).astype(np.uint16)
        key = np.concatenate([np.packbits(rng, axis=1), ends.view(np.uint8)], axis=1)
        _, first = np.unique(key, axis=0, return_index=True)
        P, rng, idx = P[first], rng[first], idx[first]
        n_unique += len(P)
        near = ndimage.maximum_filter(rng.reshape(-1, _S, _S, _S),
                                      size=(1,) + (2 * h + 1,) * 3,
                                      mode="constant").reshape(len(P), -1)
        allowed = (rng | skin[None]) & near & ~inA[None]
        ok = _flood(allowed, idx[:, 0])[np.arange(len(P)), idx[:, -1]]
        n_fail += int((~ok).sum())
        failing.append(P[~ok][:, [0, -1]])
        if verify_every:
            for i in np.flatnonzero(ok)[::verify_every]:
                S = SiteSet(g[allowed[i]], d=3)
                tp = search(S, SiteSet([tuple(P[i, 0])], d=3), SiteSet([tuple(P[i, -1])], d=3)).path
                assert tp is not None and is_avoidable_verify(A, P[i], tp, h)
                n_verified += 1
    return n_paths, n_unique, n_fail, np.concatenate(failing), n_verified


@pytest.mark.criterion(4, "avoidability ground truth")
def test_avoidability_ground_truth(record_property):
    A = Box.ball((0, 0, 0), 1).sites()
    n_paths, n_unique, n_fail, _, n_ver = _avoidability(A, 4, verify_every=100)
    assert n_fail == 0

    # paths of any length: every visit to A is an excursion entered and left
    # through nearest neighbours of A, which lie in the *-boundary; that set is
    # connected, misses A and is 4-close to every site of A
    skin = boundary(A, "star")
    assert boundary(A, "outer").issubset(skin)
    assert is_connected(skin) and skin.isdisjoint(A)
    assert np.abs(skin.points[:, None] - A.points[None]).max(axis=-1).max() <= 4

    inner = boundary(A, "inner")
    m_paths, m_unique, m_fail, failing, _ = _avoidability(inner, 2 * _R)
    # the origin is enclosed by the inner boundary: exactly the paths with one
    # end at the origin and the other outside admit no modification, at any h
    at0 = (np.abs(failing[:, 0]).sum(axis=1) == 0) != (np.abs(failing[:, -1]).sum(axis=1) == 0)
    assert m_fail > 0 and at0.all()
    assert search(SiteSet.from_points(Box.ball((0, 0, 0), 3).grid(), 3) - inner,
                  SiteSet([(0, 0, 0)], d=3)).reached == SiteSet([(0, 0, 0)], d=3)
    _detail(record_property,
            f"B(0,1): {n_unique} distinct paths (<= 4 steps), 0 without a 4-modification, "
            f"{n_ver} modifications re-verified; inner boundary: {m_fail} non-avoidable paths")


# ---------------------------------------------------------------- criterion 5


@pytest.mark.slow
@pytest.mark.criterion(5, "surgery soundness")
def test_surgery_soundness(record_property):
    rng = np.random.default_rng(5)
    d = 5
    fails = []
    hs = []
    for rep in range(1000):
        t = sample_walk((0,) * d, StopRule.fixed_length(10_000), rng)
        policy = (CutSelection("greedy") if rep % 4 == 0
                  else CutSelection("blocks", block=int(rng.choice([4, 8, 16, 32]))))
        dec = decompose(t, policy)
        hs.append(dec.h)
        if not dec.check_fill_identity():
            fails.append((rep, "fill identity"))
            continue
        U = dec.covered()
        n0, nJ = dec.cut_times[0], dec.cut_times[-1]
        X = np.asarray(t.at(int(rng.integers(n0 + 1, nJ))))
        while True:
            a = X + rng.integers(-40, 41, size=d)
            b = X + rng.integers(-40, 41, size=d)
            if not U.contains(np.stack([a, b])).any():
                break
        tau = np.concatenate([staircase(a, X), staircase(X, b)[1:]])
        try:
            tp = avoid_path(tau, dec)
        except AssertionError as e:
            fails.append((rep, str(e)[:200]))
            continue
        if not is_avoidable_verify(U, tau, tp, 3 * max(dec.h, 2)):
            fails.append((rep, "verify"))
    _detail(record_property, f"1000 walks (d=5, 10^4 steps), max sausage diameter "
            f"median {int(np.median(hs))} max {max(hs)}, {len(fails)} failures")
    assert not fails, fails[:5]


# ---------------------------------------------------------------- criterion 6


def _certificate_ok(tp, A1, A2, U, C3):
    tp = np.asarray(tp)
    steps = np.abs(np.diff(tp, axis=0)).sum(axis=1)
    return (bool(np.all(steps == 1))
            and tuple(tp[0]) in boundary(A1, "outer")
            and tuple(tp[-1]) in boundary(A2, "outer")
            and not U.contains(tp).any()
            and bool(C3.contains(tp).all()))


@pytest.mark.slow
@pytest.mark.criterion(6, "non-separation cross-oracle")
def test_non_separation_cross_oracle(record_property):
    rng = np.random.default_rng(6)
    d, L0 = 3, 1
    p = ScaleParams(L=2, L0=L0)
    m = ScaleIndex(0, (0,) * d)
    C2, C3 = box_of(m, 2, p), box_of(m, 3, p)
    E = _edges(C2.sites())
    pairs = [(SiteSet(E[a], d=d), SiteSet(E[b], d=d))
             for a, b in itertools.combinations(range(len(E)), 2)]
    pairs = [(A1, A2) for A1, A2 in pairs if distance(A1, A2, "l1") > 1]
    disagree = 0
    for _ in range(100):
        st = paired_walk(rng, d, 8, rng.integers(-2 * L0, 3 * L0, size=d))
        dec = decompose(Trajectory(st), CutSelection("given", times=tuple(range(1, len(st) - 1, 2))))
        assert 4 * dec.h < L0
        U = dec.covered()
        chi = chi_exhaustive(m, U, p)
        certified = all(_certificate_ok(connect_around(A1, A2, dec, L0), A1, A2, U, C3)
                        for A1, A2 in pairs)
        disagree += chi or not certified
    _detail(record_property, f"100 instances (L0=1, C^2 with 27 sites, {len(pairs)} edge pairs "
            f"each): {disagree} disagreements")
    assert disagree == 0


# ---------------------------------------------------------------- criterion 7

_SMALL_SCALES = [  # (kappa, L0, factor) with L_kappa in 3..8
    (0, 3, None), (0, 4, None), (0, 5, None), (0, 6, None), (0, 7, None), (0, 8, None),
    (1, 1, 3), (1, 1, 4), (1, 2, 2), (1, 1, 6), (1, 2, 3), (1, 2, 4), (1, 4, 2), (1, 1, 8),
]


def _planted_instance(rng):
    """Separation instance with a known answer along tau(j) = j e_0, j <= N,
    then moved by a random signed axis permutation.

    wall:  U is a full cross-section of B at a random height s_w; the reached
           set is everything below it.
    shell: U is the *-boundary of A2, so every box along tau stays reached.
    """
    d = 3
    kappa, L0, factor = _SMALL_SCALES[rng.integers(len(_SMALL_SCALES))]
    p = ScaleParams(L=int(rng.integers(2, 6)), L0=L0, factor=factor)
    Lk = p.scale(kappa)
    kind = "wall" if Lk >= 6 and rng.random() < 0.6 else "shell"
    N = int(rng.integers(2, 5))
    tau = np.zeros((N + 1, d), dtype=np.int64)
    tau[:, 0] = np.arange(N + 1)
    boxes = [box_of(ScaleIndex(kappa, tuple(v)), 3, p) for v in tau.tolist()]
    B = Box(tuple(min(b.lo[k] for b in boxes) for k in range(d)),
            tuple(max(b.hi[k] for b in boxes) for k in range(d)))
    o = int(rng.integers(1, d))
    t_ax = 3 - o
    A1 = np.zeros((Lk, d), dtype=np.int64)
    A1[:, 0] = rng.integers(0, Lk)
    A1[:, o] = np.arange(Lk)
    A1[:, t_ax] = rng.integers(0, Lk)
    A2 = np.zeros((Lk, d), dtype=np.int64)
    A2[:, o] = np.arange(Lk)
    if kind == "wall":
        s_w = int(rng.integers(Lk, (N + 1) * Lk - 1))
        A2[:, 0] = int(rng.integers(max(s_w + 1, N * Lk), (N + 1) * Lk))
        A2[:, t_ax] = rng.integers(0, Lk)
        g = B.grid()
        U = g[g[:, 0] == s_w]
        last = (s_w - 1) // Lk
        expect = (1, N) if last >= N else (2, last)
    else:
        A2[:, 0] = N * Lk + Lk // 2
        U = boundary(SiteSet(A2, d=d), "star").points
        expect = (1, N)
    # random signed axis permutation; reflections use x -> -1 - x on sites
    # and indices alike, which maps level boxes onto level boxes
    perm = rng.permutation(d)
    flip = rng.random(d) < 0.5

    def move(x):
        x = np.asarray(x, dtype=np.int64)[..., perm]
        return np.where(flip, -1 - x, x)

    lo, hi = move(np.array(B.lo)), move(np.array(B.hi) - 1)
    B = Box(tuple(np.minimum(lo, hi).tolist()), tuple((np.maximum(lo, hi) + 1).tolist()))
    return dict(p=p, kappa=kappa, tau=move(tau), B=B, A1=SiteSet(move(A1), d=d),
                A2=SiteSet(move(A2), d=d), U=SiteSet(move(U), d=d), expect=expect, kind=kind)


def _separated_oracle(A1, A2, U, box):
    """Independent separation check by labelling the free sites of the box."""
    free = np.ones(box.shape, dtype=bool)
    lo = np.array(box.lo)
    inU = box.contains(U.points)
    free[tuple((U.points[inU] - lo).T)] = False
    lab, _ = ndimage.label(free)

    def labels(A):
        ob = boundary(A, "outer").points
        ob = ob[box.contains(ob)]
        ls = lab[tuple((ob - lo).T)]
        return set(ls[ls > 0].tolist())

    return not (labels(A1) & labels(A2))


@pytest.mark.criterion(7, "constructive separating box")
def test_planted_separating_box(record_property):
    rng = np.random.default_rng(17)
    fails = []
    kinds = {"wall": 0, "shell": 0}
    regimes = set()
    for k in range(200):
        inst = _planted_instance(rng)
        p = inst["p"]
        regimes.add(p.asymptotic_regime)
        kinds[inst["kind"]] += 1
        try:
            res = find_separating_box(inst["A1"], inst["A2"], inst["U"], inst["B"],
                                      inst["tau"], inst["kappa"], p)
        except (ValueError, AssertionError) as e:
            fails.append((k, str(e)[:200]))
            continue
        lbar, w = res
        C2 = box_of(w.m, 2, p)
        C3 = box_of(w.m, 3, p)
        ok = ((res.case, lbar) == inst["expect"] and verify_witness(w, inst["U"], p)
              and C2.contains(w.A1.points).all() and C2.contains(w.A2.points).all()
              and 2 * diameter(w.A1) >= p.scale(inst["kappa"])
              and 2 * diameter(w.A2) >= p.scale(inst["kappa"])
              and _l1_dist(w.A1.points, w.A2.points) > 1
              and _separated_oracle(w.A1, w.A2, inst["U"], C3))
        if not ok:
            fails.append((k, inst["expect"], (res.case, lbar)))
    _detail(record_property, f"200 planted instances ({kinds['wall']} wall, {kinds['shell']} "
            f"shell, asymptotic_regime={sorted(regimes)}): {len(fails)} failures")
    assert not fails, fails[:5]


# ---------------------------------------------------------------- criterion 8


def _box_dist(a: ScaleIndex, b: ScaleIndex, p: ScaleParams) -> int:
    A, B = box_of(a, 1, p), box_of(b, 1, p)
    return max(max(B.lo[k] - (A.hi[k] - 1), A.lo[k] - (B.hi[k] - 1), 0) for k in range(a.d))


def _skeleton_oracle(M, p: ScaleParams) -> bool:
    M = list(M)
    for a in M:
        for b in M:
            if a != b and _box_dist(a, b, p) <= p.L * p.L0:
                return False
        far = max((_box_dist(a, b, p) for b in M), default=0)
        h = 0
        while p.L * p.scale(h) < far:
            lo, hi = p.L * p.scale(h), p.L * p.scale(h + 1)
            n = sum(1 for b in M if b != a and lo < _box_dist(a, b, p) <= hi)
            if n > 2 ** (h + 1):
                return False
            h += 1
    return True


def _child(rng, m: ScaleIndex, p: ScaleParams) -> ScaleIndex:
    r = p.factor
    return ScaleIndex(m.kappa - 1, tuple(int(rng.integers((o - 2) * r + 2, (o + 3) * r - 2))
                                         for o in m.i))


def _child_pair(rng, m: ScaleIndex, p: ScaleParams):
    while True:
        m1 = _child(rng, m, p)
        if rng.random() < 0.5:
            m2 = _child(rng, m, p)
        else:
            off = rng.integers(-4 * p.L, 4 * p.L + 1, size=m.d)
            m2 = ScaleIndex(m.kappa - 1, tuple(int(v) for v in np.array(m1.i) + off))
            if not contains3(m, m2, p):
                continue
        if max(abs(a - b) for a, b in zip(m1.i, m2.i)) >= 2 * p.L:
            return m1, m2


def _random_skeleton(rng, m: ScaleIndex, p: ScaleParams, log: list) -> frozenset:
    if m.kappa == 0:
        return frozenset({m})
    m1, m2 = _child_pair(rng, m, p)
    M1 = _random_skeleton(rng, m1, p, log)
    M2 = _random_skeleton(rng, m2, p, log)
    out = merge_skeletons(M1, M2, m1, m2, p)
    log.append((len(M1), len(M2), len(out), _skeleton_oracle(out, p),
                all(contains3(m, x, p) for x in out)))
    return out


def _random_indices(rng, n, p):
    return [ScaleIndex(0, tuple(int(v) for v in rng.integers(-5 * p.L, 5 * p.L, size=3)))
            for _ in range(n)]


@pytest.mark.criterion(8, "skeleton algebra and split geometry")
def test_skeleton_algebra(record_property):
    p = ScaleParams(L=40, L0=1)
    rng = np.random.default_rng(8)
    m0 = ScaleIndex(0, (0, 0, 0))
    assert is_skeleton([m0], p)
    # spacing: two boxes are allowed iff their index gap exceeds L
    for n in range(1, 2 * p.L):
        other = ScaleIndex(0, (n, int(rng.integers(-n, n + 1)), 0))
        assert is_skeleton([m0, other], p) == (n > p.L) == _skeleton_oracle([m0, other], p)
    # annulus counts: at most 2^(h+1) members at annulus level h around m0
    for h, step in ((0, 10 * p.L), (1, 10 * p.L * p.factor)):
        cap = 2 ** (h + 1)
        ring = [ScaleIndex(0, (step * (k + 1), 0, step * 3 * k)) for k in range(cap + 1)]
        assert is_skeleton([m0] + ring[:cap], p) and _skeleton_oracle([m0] + ring[:cap], p)
        assert not is_skeleton([m0] + ring, p) and not _skeleton_oracle([m0] + ring, p)
    agree = sum(is_skeleton(M, p) == _skeleton_oracle(M, p)
                for M in (_random_indices(rng, int(rng.integers(2, 7)), p) for _ in range(300)))
    assert agree == 300

    merges = []
    while len(merges) < 1000:
        kappa = int(rng.integers(1, 4))
        m = ScaleIndex(kappa, tuple(int(v) for v in rng.integers(-3, 4, size=3)))
        _random_skeleton(rng, m, p, merges)
    bad_merge = sum(not (c == a + b == 2 * a and ok and inside) for a, b, c, ok, inside in merges)
    assert bad_merge == 0

    n_case = {1: 0, 2: 0}
    bad_split = 0
    for k in range(1000):
        L = int(rng.integers(2, 6))
        while True:
            i1 = rng.integers(-60 * L, 60 * L, size=3)
            i2 = i1 + rng.integers(-(4 if k % 2 else 30) * L, (4 if k % 2 else 30) * L + 1, size=3)
            i1p = rng.integers(-60 * L, 60 * L, size=3)
            i2p = rng.integers(-60 * L, 60 * L, size=3)
            if np.abs(i1 - i1p).max() >= 20 * L and np.abs(i2 - i2p).max() >= 20 * L:
                break
        res = split_geometry(i1, i2, i1p, i2p, L)
        n_case[res.case] += 1
        tau, tp = res.tau, res.tau_prime
        ok = (np.all(np.abs(np.diff(tau, axis=0)).sum(axis=1) == 1)
              and np.all(np.abs(np.diff(tp, axis=0)).sum(axis=1) == 1)
              and {tuple(tau[0]), tuple(tau[-1])} == {res.i1, res.i2}
              and {tuple(tp[0]), tuple(tp[-1])} == {res.i1p, res.i2p}
              and _linf_dist(tau, tp) >= 2 * L)
        if res.case == 2:
            a, b = np.array(res.i1), np.array(res.i2)
            Lam = int(np.abs(a - b).max())
            flo = np.maximum(np.maximum(a, b) - (Lam - 3 * L), np.minimum(a, b))
            fhi = np.minimum(np.minimum(a, b) + (Lam - 3 * L), np.maximum(a, b))
            F = IBox(tuple(flo.tolist()), tuple(fhi.tolist()))
            ok = ok and not F.is_empty()
            for c in (a, b):
                ok = ok and not F.intersect(IBox.ball(c, 6 * L)).is_empty()
            inside = (F.contains(tau) | IBox.ball(a, 6 * L).contains(tau)
                      | IBox.ball(b, 6 * L).contains(tau))
            ok = ok and inside.all()
        bad_split += not ok
    _detail(record_property, f"spacing/annulus/singleton checks pass; {len(merges)} merges "
            f"{bad_merge} failures; 1000 splits (case 1: {n_case[1]}, case 2: {n_case[2]}) "
            f"{bad_split} failures")
    assert bad_split == 0 and min(n_case.values()) > 0


# ---------------------------------------------------------------- criterion 9


@pytest.mark.slow
@pytest.mark.criterion(9, "stochastic shape checks")
def test_diameter_tail_shape(record_property):
    notes = []
    for d, window, grid, u in ((3, 48, [0, 1, 2, 4, 8, 12, 16, 20, 24], [0.1, 4.0]),
                               (5, 20, [0, 1, 2, 4, 8, 12, 16], [0.1])):
        cfg = ExperimentConfig(kind="diam-tail", d=d, window=window, N_grid=grid, u=u,
                               replicas=10_000, chunk=1000, seed=909)
        _, tails = run_diameter_tail(cfg)
        for uu, tr in zip(u, tails):
            assert tr.monotone(2.0), (d, uu, tr.counts)
            cens = tr.censored[0] / tr.replicas
            notes.append(f"d={d} u={uu} P[diam>=0]={tr.prob[0]:.3f} "
                         f"P[diam>={grid[-1]}]={tr.prob[-1]:.4f} censored {cens:.3f}")
    _detail(record_property, "diameter tails weakly decreasing: " + ", ".join(notes))


@pytest.mark.slow
@pytest.mark.criterion(9, "stochastic shape checks")
def test_sausage_stats_shape(record_property):
    cfg = ExperimentConfig(kind="sausage-stats", d=5, L=24, L0_grid=[8, 16, 32], G_grid=[2, 5],
                           replicas=10_000, chunk=500, seed=99)
    rep = run_sausage_stats(cfg)
    notes = []
    for G in cfg.G_grid:
        rows = sorted((r for r in rep.rows if r["G"] == G), key=lambda r: r["L0"])
        ps = [r["p_success"] for r in rows]
        pc = [r["p_close"] for r in rows]
        assert weakly_increasing(ps, [r["se_success"] for r in rows], 2.0), rows
        assert weakly_decreasing(pc, [r["se_close"] for r in rows], 2.0), rows
        fmt = lambda v: "[" + ", ".join(f"{x:.4f}" for x in v) + "]"
        notes.append(f"G={G} success {fmt(ps)} close {fmt(pc)}")
    _detail(record_property, "sausage success non-decreasing, closeness non-increasing in L0: "
            + "; ".join(notes))


# --------------------------------------------------------------- criterion 10

_SMALL = {
    "vacant-law": dict(replicas=300, chunk=100),
    "diam-tail": dict(d=3, window=16, u=[0.5, 3.0], replicas=40, chunk=15),
    "vol-tail": dict(d=3, window=12, u=[3.0], replicas=30, chunk=10),
    "sausage-stats": dict(d=5, L=24, L0_grid=[2, 4], G_grid=[2], replicas=12, chunk=5),
    "ubiquity": dict(d=3, window=12, u=[0.5], replicas=20, chunk=7),
}


@pytest.mark.criterion(10, "determinism")
def test_determinism(tmp_path, record_property):
    for kind, kw in _SMALL.items():
        path = tmp_path / f"{kind}.json"
        path.write_text(json.dumps(dict(kind=kind, seed=123, **kw)))
        outs = []
        for tag, workers in (("a", 1), ("b", 2), ("c", 1)):
            cfg = ExperimentConfig.from_file(str(path))
            cfg.workers = workers
            outs.append(run(cfg).write(str(tmp_path / f"{kind}-{tag}")))
        for other in outs[1:]:
            for x, y in zip(outs[0], other):
                assert filecmp.cmp(x, y, shallow=False), (kind, x, y)
        assert os.path.getsize(outs[0][0]) > 0
    _detail(record_property, "5 campaign kinds rerun with workers 1, 2, 1: byte-identical CSV/JSON")
