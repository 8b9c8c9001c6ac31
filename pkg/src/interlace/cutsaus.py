"""Cut-times of a path, sausage decompositions and avoidance surgery.

A time k is a (strict) cut-time when the ranges strictly before and strictly
after k are at l-inf distance > 1.  Between selected, non-adjacent cut-times
the path splits into sausages; the filled sausages are pairwise l-inf
exterior, and every path can be rerouted around their union through their
*-boundaries and through the rings of *-neighbours around the cut-points.

On a finite trajectory cut-times are only certified within its horizon: a
later (unobserved) return can spoil them.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from .lattice import (Box, SiteSet, boundary, closure, coord_limit, diameter, distance, encode,
                      fill, fill_cases, is_connected, is_path,
                      offset_keys, search, star_offsets)
from .walk import Trajectory

DEFAULT_BLOCK = 16
DEFAULT_G = 100


# ----------------------------------------------------------------------- cut-times


@njit(cache=True)
def _slot(k, tbits):
    return np.int64((np.uint64(k) * np.uint64(11400714819323198485)) >> np.uint64(64 - tbits))


@njit(cache=True)
def _last_reach(keys, half, tbits):
    """M[s] = last time whose site lies at offset 0 or +-half[i] from X_s.

    Works per distinct site: each unordered pair of neighbouring sites is
    found once, from the site whose key is smaller."""
    n = keys.shape[0]
    size = 1 << tbits
    mask = size - 1
    tk = np.full(size, -1, dtype=np.int64)
    tv = np.zeros(size, dtype=np.int64)
    slot = np.empty(n, dtype=np.int64)
    for t in range(n):
        k = keys[t]
        h = _slot(k, tbits)
        while tk[h] != -1 and tk[h] != k:
            h = (h + 1) & mask
        tk[h] = k
        tv[h] = t
        slot[t] = h
    best = tv.copy()
    for h in range(size):
        k = tk[h]
        if k == -1:
            continue
        for o in half:
            q = k + o
            g = _slot(q, tbits)
            while tk[g] != -1:
                if tk[g] == q:
                    if tv[g] > best[h]:
                        best[h] = tv[g]
                    if tv[h] > best[g]:
                        best[g] = tv[h]
                    break
                g = (g + 1) & mask
    M = np.empty(n, dtype=np.int64)
    for t in range(n):
        M[t] = best[slot[t]]
    return M


def _keys(steps: np.ndarray) -> np.ndarray:
    d = steps.shape[1]
    rel = steps - steps[0]
    if np.abs(rel).max(initial=0) >= coord_limit(d) - 2:
        raise ValueError("trajectory too spread out for key packing")
    return encode(rel, d)


def cut_mask(steps: np.ndarray, strict: bool = True) -> np.ndarray:
    """Boolean mask over positions of the horizon-certified cut-times."""
    steps = np.asarray(steps, dtype=np.int64)
    n, d = steps.shape
    out = np.zeros(n, dtype=bool)
    if n < 3:
        return out
    offs = star_offsets(d) if strict else np.zeros((0, d), dtype=np.int64)
    # one of each pair +-o: first nonzero coordinate positive
    nz = offs != 0
    lead = offs[np.arange(len(offs)), np.argmax(nz, axis=1)] if len(offs) else offs[:, 0]
    half = offs[lead > 0]
    tbits = max(4, int(np.ceil(np.log2(4 * n))))
    M = _last_reach(_keys(steps), offset_keys(half, d), tbits)
    pm = np.maximum.accumulate(M)
    k = np.arange(1, n - 1)
    out[1:n - 1] = pm[k - 1] <= k
    return out


def cut_times(t: Trajectory, strict: bool = True) -> list[int]:
    """Times k inside the horizon such that the past and future ranges are at
    l-inf distance > 1 (strict) or merely disjoint (strict=False)."""
    return (np.flatnonzero(cut_mask(t.steps, strict)) + t.first_time).tolist()


# ------------------------------------------------------------------- decomposition


@dataclass(frozen=True)
class CutSelection:
    """How non-adjacent cut-times are chosen.

    blocks: the first cut-time in every other window of length ``block``,
            windows starting at ``start`` (default: first interior time).
    greedy: every cut-time not adjacent to the previously chosen one.
    given:  exactly ``times``.
    """

    kind: str = "blocks"
    block: int = DEFAULT_BLOCK
    start: int | None = None
    times: tuple = ()

    def select(self, cuts: list[int], first: int, last: int) -> list[int]:
        if self.kind == "greedy":
            out = []
            for c in cuts:
                if not out or c - out[-1] >= 2:
                    out.append(c)
            return out
        if self.kind == "blocks":
            if self.block < 1:
                raise ValueError("block length must be >= 1")
            a = first + 1 if self.start is None else self.start
            cuts = np.asarray(cuts, dtype=np.int64)
            out = []
            while a <= last:
                i = np.searchsorted(cuts, a)
                if i < len(cuts) and cuts[i] < a + self.block:
                    out.append(int(cuts[i]))
                a += 2 * self.block
            return out
        if self.kind == "given":
            times = [int(v) for v in self.times]
            if any(v not in set(cuts) for v in times):
                raise ValueError("given time is not a cut-time")
            if any(b - a < 2 for a, b in zip(times, times[1:])):
                raise ValueError("given cut-times are adjacent or unsorted")
            return times
        raise ValueError(f"unknown cut selection {self.kind!r}")


@dataclass(frozen=True)
class SausageDecomposition:
    traj: Trajectory
    cut_times: tuple
    sausages: tuple
    fills: tuple
    rings: tuple
    h: int
    strict: bool = True
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def J(self) -> int:
        return len(self.cut_times) - 1

    @property
    def d(self) -> int:
        return self.traj.d

    def cut_point(self, j: int) -> tuple:
        return self.traj.at(self.cut_times[j])

    def _lookup(self):
        if "fill_keys" not in self._index:
            keys = np.concatenate([f.keys for f in self.fills])
            labels = np.concatenate([np.full(len(f), j) for j, f in enumerate(self.fills)])
            order = np.argsort(keys, kind="stable")
            self._index["fill_keys"] = keys[order]
            self._index["fill_labels"] = labels[order]
            cps = np.array([self.cut_point(j) for j in range(1, self.J)], dtype=np.int64)
            ck = encode(cps, self.d) if len(cps) else np.zeros(0, dtype=np.int64)
            order = np.argsort(ck)
            self._index["cut_keys"] = ck[order]
            self._index["cut_labels"] = np.arange(1, self.J)[order]
        return self._index

    @staticmethod
    def _find(keys, table, labels):
        if table.size == 0:
            return np.full(len(keys), -1)
        i = np.searchsorted(table, keys)
        i[i == len(table)] = 0
        return np.where(table[i] == keys, labels[i], -1)

    def fill_label(self, pts) -> np.ndarray:
        """Index j of the filled sausage containing each point, else -1."""
        ix = self._lookup()
        pts = np.asarray(pts, dtype=np.int64).reshape(-1, self.d)
        return self._find(encode(pts, self.d), ix["fill_keys"], ix["fill_labels"])

    def cut_label(self, pts) -> np.ndarray:
        """j in 1..J-1 when the point is the cut-point X_{n_j}, else -1."""
        ix = self._lookup()
        pts = np.asarray(pts, dtype=np.int64).reshape(-1, self.d)
        return self._find(encode(pts, self.d), ix["cut_keys"], ix["cut_labels"])

    def skin(self, j: int) -> SiteSet:
        key = ("skin", j)
        if key not in self._index:
            self._index[key] = boundary(self.fills[j], "star")
        return self._index[key]

    def ring(self, j: int) -> SiteSet:
        return self.rings[j - 1]

    def covered(self) -> SiteSet:
        """Union of the filled sausages and the inner cut-points."""
        if "covered" not in self._index:
            keys = [f.keys for f in self.fills] + [self._lookup()["cut_keys"]]
            self._index["covered"] = SiteSet.from_keys(np.unique(np.concatenate(keys)), self.d,
                                                       presorted=True)
        return self._index["covered"]

    def middle_range(self) -> SiteSet:
        """X over the open time interval (n_0, n_J)."""
        return self.traj.range_set(self.cut_times[0] + 1, self.cut_times[-1] - 1)

    def check_fill_identity(self) -> bool:
        return fill(self.middle_range()) == self.covered()

    def check_exterior(self) -> bool:
        """Filled sausages pairwise at l-inf distance > 1."""
        d = self.d
        ks = self._lookup()["fill_keys"]
        labs = self._lookup()["fill_labels"]
        if np.any(np.diff(ks) == 0):
            return False
        nb = (ks[:, None] + offset_keys(star_offsets(d), d)[None, :]).ravel()
        own = np.repeat(labs, 3 ** d - 1)
        other = self._find(nb, ks, labs)
        return bool(np.all((other == -1) | (other == own)))

    def to_json(self) -> str:
        return json.dumps({
            "d": self.d, "strict": self.strict, "h": self.h,
            "horizon": [self.traj.first_time, self.traj.last_time],
            "cut_times": list(self.cut_times),
            "diameters": [diameter(s) if s else 0 for s in self.sausages],
        }, sort_keys=True)


def ring_of(prev, cur, nxt) -> SiteSet:
    """*-neighbours of ``cur`` in the hyperplane perpendicular to the step."""
    prev, cur, nxt = (np.asarray(v, dtype=np.int64) for v in (prev, cur, nxt))
    e = nxt - cur
    if not np.array_equal(e, cur - prev):
        raise AssertionError("steps around a strict cut-point differ")
    d = len(cur)
    offs = star_offsets(d)
    offs = offs[offs @ e == 0]
    return SiteSet(cur + offs, d=d)


def decompose(t: Trajectory, policy: CutSelection | None = None,
              strict: bool = True) -> SausageDecomposition:
    policy = policy or CutSelection()
    cuts = cut_times(t, strict)
    sel = policy.select(cuts, t.first_time, t.last_time)
    if len(sel) < 2:
        raise ValueError("fewer than 2 usable cut-times")
    if any(b - a < 2 for a, b in zip(sel, sel[1:])):
        raise AssertionError("selected cut-times are adjacent")
    sausages = tuple(t.range_set(a + 1, b - 1) for a, b in zip(sel, sel[1:]))
    fills = tuple(fill(s) for s in sausages)
    rings = []
    for n in sel[1:-1]:
        rings.append(ring_of(t.at(n - 1), t.at(n), t.at(n + 1)))
    h = max(diameter(s) for s in sausages)
    dec = SausageDecomposition(t, tuple(sel), sausages, fills, tuple(rings), h, strict)
    if strict:
        full = t.range_set()
        for j, r in enumerate(rings, start=1):
            if not r.isdisjoint(full):
                raise AssertionError(f"ring {j} meets the trajectory")
        if not dec.check_exterior():
            raise AssertionError("filled sausages are not l-inf exterior")
    return dec


# ------------------------------------------------------------------------- surgery


def _as_path(tau) -> np.ndarray:
    if isinstance(tau, Trajectory):
        return np.asarray(tau.steps)
    return np.asarray(tau, dtype=np.int64)


def avoidance_checks(A: SiteSet, tau, tau_p, h: int, C: SiteSet | Box | None = None) -> dict:
    """The conditions for ``tau_p`` to be an h-modification of ``tau`` avoiding A."""
    tau = _as_path(tau)
    tau_p = _as_path(tau_p)
    d = tau.shape[1]
    out = {"tau_is_path": is_path(tau), "tau_p_is_path": is_path(tau_p) and len(tau_p) > 0}
    if C is not None:
        out["tau_in_C"] = bool(C.contains(tau).all())
    out["endpoints_outside"] = not A.contains(tau[[0, -1]]).any()
    if not out["tau_p_is_path"]:
        return out
    out["avoids"] = not A.contains(tau_p).any()
    out["same_endpoints"] = bool(np.array_equal(tau[0], tau_p[0]) and
                                 np.array_equal(tau[-1], tau_p[-1]))
    R = SiteSet(tau, d=d)
    new = tau_p[~R.contains(tau_p)]
    if len(new) == 0:
        out["close"] = out["on_skin"] = True
        return out
    dd, _ = cKDTree(tau).query(new, k=1, p=np.inf, distance_upper_bound=h + 0.5)
    out["close"] = bool(np.all(np.isfinite(dd)))
    nb = (encode(new, d)[:, None] + offset_keys(star_offsets(d), d)[None, :])
    touch = A.contains_keys(nb.ravel()).reshape(nb.shape).any(axis=1)
    out["on_skin"] = bool(touch.all())
    return out


def is_avoidable_verify(A: SiteSet, tau, tau_p, h: int, C=None) -> bool:
    return all(avoidance_checks(A, tau, tau_p, h, C).values())


def _bridge(allowed: SiteSet, a, b) -> np.ndarray:
    d = allowed.d
    res = search(allowed, SiteSet([tuple(a)], d=d), SiteSet([tuple(b)], d=d))
    if res.path is None:
        raise AssertionError(f"no detour between {tuple(a)} and {tuple(b)}")
    return res.path


def _dump(tau, dec: SausageDecomposition) -> str:
    return json.dumps({"tau": _as_path(tau).tolist(), "decomposition": json.loads(dec.to_json())})


def avoid_path(tau, dec: SausageDecomposition) -> np.ndarray:
    """Reroute ``tau`` around the filled sausages and inner cut-points.

    Stage 1 replaces every stretch inside a filled sausage by a shortest path
    in that sausage's *-boundary; stage 2 replaces every visit to a cut-point
    by a shortest path in its ring.  The result is checked against the
    avoidance conditions with parameter 3 max(h, 2) before it is returned.
    """
    tau = _as_path(tau)
    U = dec.covered()
    if U.contains(tau[[0, -1]]).any():
        raise ValueError("path endpoints must lie outside the filled sausages and cut-points")
    lab = dec.fill_label(tau)
    bar = []
    i = 0
    n = len(tau)
    while i < n:
        if lab[i] < 0:
            bar.append(tau[i])
            i += 1
            continue
        r = i
        while lab[r] >= 0:
            if lab[r] != lab[i]:
                raise AssertionError("path jumps between filled sausages")
            r += 1
        detour = _bridge(dec.skin(int(lab[i])), tau[i - 1], tau[r])
        bar.extend(detour[1:-1])
        i = r
    bar = np.array(bar, dtype=np.int64)
    cl = dec.cut_label(bar)
    out = []
    i = 0
    while i < len(bar):
        if cl[i] < 0:
            out.append(bar[i])
            i += 1
            continue
        prev, nxt = out[-1], bar[i + 1]
        if np.array_equal(prev, nxt):
            i += 2
            continue
        detour = _bridge(dec.ring(int(cl[i])), prev, nxt)
        out.extend(detour[1:-1])
        i += 1
    tau_p = np.array(out, dtype=np.int64)
    checks = avoidance_checks(U, tau, tau_p, 3 * max(dec.h, 2))
    if not all(checks.values()):
        raise AssertionError(f"surgery failed {checks}: {_dump(tau, dec)}")
    return tau_p


# --------------------------------------------------------------- non-separation


def _first_in(path: np.ndarray, S: SiteSet) -> np.ndarray | None:
    hit = S.contains(path)
    return path[int(np.argmax(hit))] if hit.any() else None


def _ray(y, k: int, sign: int, avoid: SiteSet) -> np.ndarray:
    """Straight path from y along sign e_k to just outside sbox(avoid + y)."""
    y = np.asarray(y, dtype=np.int64)
    box = avoid.sbox()
    end = (max(box.hi[k], int(y[k]) + 1) if sign > 0 else min(box.lo[k], int(y[k])) - 1)
    n = abs(end - int(y[k]))
    pts = np.repeat(y[None, :], n + 1, axis=0)
    pts[:, k] = y[k] + sign * np.arange(n + 1)
    return pts


def _ordered(cands: np.ndarray, C: Box | None) -> list[tuple]:
    """Distinct candidates, those inside C first, otherwise in given order."""
    seen, inside, outside = set(), [], []
    for x in map(tuple, np.asarray(cands).tolist()):
        if x in seen:
            continue
        seen.add(x)
        (inside if C is None or x in C else outside).append(x)
    return inside + outside


def boundary_exits(A: SiteSet, dec: SausageDecomposition, C: Box | None = None) -> list[tuple]:
    """Points of the outer boundary of A outside the covered set.

    If A meets the *-boundary of a filled sausage at y (moved to a ring
    neighbour when y is a cut-point), straight rays from y in the 2d axis
    directions are rerouted around the covered set and each contributes its
    first boundary point of A.  Otherwise every boundary point of A
    qualifies.  Points inside C come first."""
    U = dec.covered()
    d = A.d
    pts = A.points
    nb = pts[:, None, :] + star_offsets(d)[None, :, :]
    touch = (dec.fill_label(nb.reshape(-1, d)) >= 0).reshape(len(pts), -1).any(axis=1)
    cand = np.flatnonzero(touch & (dec.fill_label(pts) < 0))
    if len(cand) == 0:
        bd = boundary(A, "outer")
        if U.contains(bd.points).any():
            raise AssertionError("boundary point of A inside the covered set")
        return _ordered(bd.points, C)
    y = pts[cand[0]].copy()
    j = int(dec.cut_label(y)[0])
    if j > 0:
        # move to a ring neighbour of the cut-point
        e = np.asarray(dec.cut_point(j)) - np.asarray(dec.traj.at(dec.cut_times[j] - 1))
        k = next(k for k in range(d) if e[k] == 0)
        y[k] += 1
    bd = boundary(A, "outer")
    out = []
    for k in range(d):
        for sign in (-1, 1):
            tau_p = avoid_path(_ray(y, k, sign, A | U), dec)
            x = _first_in(tau_p, bd)
            if x is None:
                raise AssertionError("rerouted path never leaves A")
            out.append(x)
    return _ordered(np.array(out), C)


def staircase_order(a, b, order) -> np.ndarray:
    """Nearest-neighbour path from a to b fixing coordinates in ``order``."""
    cur = np.array(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    out = [cur.copy()]
    for k in order:
        step = 1 if b[k] > cur[k] else -1
        while cur[k] != b[k]:
            cur[k] += step
            out.append(cur.copy())
    return np.array(out)


def _check_pair(A1: SiteSet, A2: SiteSet, C2: Box, half_diam) -> None:
    for name, A in (("A1", A1), ("A2", A2)):
        if not A or not C2.contains(A.points).all():
            raise ValueError(f"{name} must be a nonempty subset of C^2")
        if not is_connected(A):
            raise ValueError(f"{name} is not connected")
        if 2 * diameter(A) < half_diam:
            raise ValueError(f"diam({name}) < L0/2")
    if distance(A1, A2, "l1") <= 1:
        raise ValueError("d(A1, A2) <= 1")


def _level0_boxes(d: int, L0: int) -> tuple[Box, Box]:
    C2 = Box((-L0,) * d, (2 * L0,) * d)
    C3 = Box((-2 * L0,) * d, (3 * L0,) * d)
    return C2, C3


def connect_around(A1: SiteSet, A2: SiteSet, dec: SausageDecomposition, L0: int,
                   max_tries: int = 4) -> np.ndarray:
    """Path in C^3 from the boundary of A1 to that of A2 avoiding the filled
    middle range of ``dec``: a certificate that it does not separate them.

    Boxes are those of index 0 at level 0: C^2 = [-L0, 2 L0)^d and
    C^3 = [-2 L0, 3 L0)^d.  Requires max sausage diameter < L0/4.  The end
    points and the connecting staircase are free choices; up to
    ``max_tries`` end points per side and every axis order are tried until
    the rerouted path stays in C^3.
    """
    d = A1.d
    C2, C3 = _level0_boxes(d, L0)
    _check_pair(A1, A2, C2, L0)
    if 4 * dec.h >= L0:
        raise ValueError("max sausage diameter must be < L0/4")
    cands = [boundary_exits(A, dec, C2)[:max_tries] for A in (A1, A2)]
    for x1 in cands[0]:
        for x2 in cands[1]:
            for order in itertools.permutations(range(d)):
                tau_p = avoid_path(staircase_order(x1, x2, order), dec)
                if C3.contains(tau_p).all():
                    return tau_p
    raise AssertionError("every certificate tried leaves C^3: "
                         + _dump(staircase_order(cands[0][0], cands[1][0], range(d)), dec))


def star_path(S: SiteSet, a, b) -> np.ndarray:
    res = search(S, SiteSet([tuple(a)], d=S.d), SiteSet([tuple(b)], d=S.d), adjacency="star")
    if res.path is None:
        raise AssertionError("*-path not found")
    return res.path


def connect_around_many(A1: SiteSet, A2: SiteSet, decs: list[SausageDecomposition],
                        L0: int) -> np.ndarray:
    """Certificate that the union of several filled pieces does not separate
    A1 from A2 in C^3, rerouting one piece at a time.

    The pieces are assumed pairwise at l-inf distance > 1 (checked); nested
    pieces are dropped.  If one of A1, A2 lies in the fill of the other, the
    outer one is replaced by the face of sites just outside C^2 with smallest
    first coordinate, and the path is cut after its last visit to the
    closure of the original outer set.
    """
    d = A1.d
    C2, C3 = _level0_boxes(d, L0)
    _check_pair(A1, A2, C2, L0)
    mids = [dec.middle_range() for dec in decs]
    for a in range(len(mids)):
        for b in range(a + 1, len(mids)):
            if distance(mids[a], mids[b], "linf") <= 1:
                raise ValueError("pieces are not at l-inf distance > 1")
    O = [dec.covered() for dec in decs]
    keep = [i for i in range(len(O))
            if not any(j != i and O[i].issubset(O[j]) and (O[i] != O[j] or j < i)
                       for j in range(len(O)))]
    decs = [decs[i] for i in keep]
    O = [O[i] for i in keep]
    allO = SiteSet.empty(d)
    for o in O:
        allO = allO | o

    orig1 = A1
    flipped = False
    c1, c2, c3 = fill_cases(A1, A2)
    if not c3:
        if c1:
            A1, A2 = A2, A1
            orig1 = A1
            flipped = True
        elif not c2:
            raise AssertionError("fill trichotomy fails for A1, A2")
        # A2 lies inside f(A1): replace A1 by a face just outside C^2
        lo, hi = np.array(C2.lo), np.array(C2.hi)
        lo[0] -= 1
        hi[0] = lo[0] + 1
        A1 = Box(tuple(lo), tuple(hi)).sites()
    def exit_point(A: SiteSet) -> tuple:
        fb = boundary(fill(A), "outer")
        xp = fb.first()
        hit = [i for i, o in enumerate(O) if xp in o]
        if not hit:
            return xp
        io = hit[0]
        rest = fb - O[io]
        if not rest:
            raise AssertionError("boundary of f(A) inside one piece")
        sigma = star_path(fb, xp, rest.first())
        x = sigma[int(np.argmax(~O[io].contains(sigma)))]
        if x in allO:
            raise AssertionError("exit point lies in another piece")
        return tuple(int(v) for v in x)

    x1, x2 = exit_point(A1), exit_point(A2)
    tau = staircase_order(x1, x2, range(d))
    for dec in decs:
        tau = avoid_path(tau, dec)
    if A1 is not orig1:
        # keep the part after the last visit to the closure of the enclosing set
        hit = closure(orig1).contains(tau)
        if not hit.any():
            raise AssertionError("path never meets the enclosing set")
        tau = tau[int(np.flatnonzero(hit)[-1]):]
        if flipped:
            tau = tau[::-1]
    if allO.contains(tau).any() or not C3.contains(tau).all():
        raise AssertionError("G-stage certificate invalid")
    return tau
