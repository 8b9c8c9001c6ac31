"""Scales, box indices, skeletons and the path geometry of the coarse step.

Level-kappa boxes have side ``L_kappa = L0 * factor**kappa`` with the default
factor ``80 L``.  Everything above level 0 is done with integer index vectors;
sites are only materialized by :func:`box_of` on request.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .lattice import Box

ASYMPTOTIC_MIN_L = 40
# coordinates must fit comfortably in int64 arithmetic
SCALE_LIMIT = 2 ** 62


@dataclass(frozen=True)
class ScaleParams:
    """Scale parameters; ``factor`` defaults to 80 L.

    ``asymptotic_regime`` is False for L < 40 or an overridden factor; outputs of
    toy-scale runs carry this flag.
    """

    L: int
    L0: int
    factor: int | None = None

    def __post_init__(self):
        if self.L < 2:
            raise ValueError("L must be >= 2")
        if self.L0 < 1:
            raise ValueError("L0 must be >= 1")
        if self.factor is None:
            object.__setattr__(self, "factor", 80 * self.L)
        if self.factor < 2:
            raise ValueError("factor must be >= 2")

    @property
    def asymptotic_regime(self) -> bool:
        return self.L >= ASYMPTOTIC_MIN_L and self.factor == 80 * self.L

    def scale(self, kappa: int) -> int:
        """L_kappa, exact, with an overflow check."""
        if kappa < 0:
            raise ValueError("negative level")
        v = self.L0 * self.factor ** kappa
        if v >= SCALE_LIMIT:
            raise OverflowError(f"scale overflow at level {kappa}")
        return v

    def as_dict(self) -> dict:
        return {"L": self.L, "L0": self.L0, "factor": self.factor,
                "asymptotic_regime": self.asymptotic_regime}


@dataclass(frozen=True)
class ScaleIndex:
    kappa: int
    i: tuple = field(default=())

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("negative level")
        object.__setattr__(self, "i", tuple(int(v) for v in self.i))

    @property
    def d(self) -> int:
        return len(self.i)


def _reach(l) -> int:
    # largest integer j with |j| < l
    l = Fraction(l)
    if l < 1:
        raise ValueError("l must be >= 1")
    return math.ceil(l) - 1


def box_of(m: ScaleIndex, l=1, p: ScaleParams | None = None) -> Box:
    """C_m^l: union of the level-kappa boxes C(kappa, i + j) over |j|_inf < l."""
    if p is None:
        raise ValueError("scale parameters required")
    Lk = p.scale(m.kappa)
    J = _reach(l)
    lo = tuple((v - J) * Lk for v in m.i)
    hi = tuple((v + J + 1) * Lk for v in m.i)
    if max(abs(v) for v in lo + hi) >= SCALE_LIMIT:
        raise OverflowError("box coordinates overflow")
    return Box(lo, hi)


def index_box(m: ScaleIndex, l, kappa_sub: int, p: ScaleParams) -> tuple[np.ndarray, np.ndarray]:
    """Closed index range [a, b] of level-``kappa_sub`` boxes inside C_m^l."""
    if kappa_sub > m.kappa:
        raise ValueError("sub-level above the box level")
    ratio = p.factor ** (m.kappa - kappa_sub)
    J = _reach(l)
    i = np.array(m.i, dtype=object)
    return (i - J) * ratio, (i + J + 1) * ratio - 1


def box_gap(i, j, Lk: int) -> int:
    """l-inf distance between two level boxes of side Lk given their indices."""
    diff = np.abs(np.asarray(i, dtype=object) - np.asarray(j, dtype=object))
    return max((int(n) - 1) * Lk + 1 if n else 0 for n in diff)


def contains3(outer: ScaleIndex, inner: ScaleIndex, p: ScaleParams) -> bool:
    """C_inner^3 inside C_outer^3, by index arithmetic."""
    if inner.kappa > outer.kappa:
        return False
    ratio = p.factor ** (outer.kappa - inner.kappa)
    return all((o - 2) * ratio <= v - 2 and v + 3 <= (o + 3) * ratio
               for o, v in zip(outer.i, inner.i))


# ------------------------------------------------------------------------ skeletons


def _level0(M: Iterable[ScaleIndex]) -> list[ScaleIndex]:
    M = list(M)
    if any(m.kappa != 0 for m in M):
        raise ValueError("skeleton indices must all be at level 0")
    return M


def annulus_level(dist: int, p: ScaleParams) -> int | None:
    """h with L L_h < dist <= L L_{h+1}, or None when dist <= L L_0."""
    if dist <= p.L * p.L0:
        return None
    h = 0
    while dist > p.L * p.L0 * p.factor ** (h + 1):
        h += 1
    return h


def is_skeleton(M: Iterable[ScaleIndex], p: ScaleParams) -> bool:
    """Annulus counts at most 2^(h+1) around every member and no two members
    within l-inf distance L L0 of each other."""
    M = sorted(set(_level0(M)), key=lambda m: m.i)
    for a in M:
        counts: dict[int, int] = {}
        for b in M:
            if b is a:
                continue
            h = annulus_level(box_gap(a.i, b.i, p.L0), p)
            if h is None:
                return False
            counts[h] = counts.get(h, 0) + 1
            if counts[h] > 2 ** (h + 1):
                return False
    return True


def merge_skeletons(M1, M2, m1: ScaleIndex, m2: ScaleIndex, p: ScaleParams) -> frozenset:
    """Union of two skeletons hanging from level-kappa boxes m1, m2 spaced at
    least 2L apart in l-inf index distance."""
    M1 = _level0(M1)
    M2 = _level0(M2)
    if m1.kappa != m2.kappa:
        raise ValueError("m1 and m2 must share a level")
    if max(abs(a - b) for a, b in zip(m1.i, m2.i)) < 2 * p.L:
        raise ValueError("spacing |i1 - i2| < 2L")
    for name, M, m in (("M1", M1, m1), ("M2", M2, m2)):
        if not all(contains3(m, x, p) for x in M):
            raise ValueError(f"{name} not inside C^3 of its parent box")
        if not is_skeleton(M, p):
            raise ValueError(f"{name} is not a skeleton")
    out = frozenset(M1) | frozenset(M2)
    if len(out) != len(set(M1)) + len(set(M2)):
        raise AssertionError("merged skeletons overlap")
    if not is_skeleton(out, p):
        raise AssertionError("merge produced a non-skeleton")
    return out


def family_bound(kappa: int, L: int, d: int) -> int:
    """((5 * 80 L)^(4d))^(2^kappa - 1), the skeleton-family count bound."""
    return ((5 * 80 * L) ** (4 * d)) ** (2 ** kappa - 1)


def check_count_recurrence(kmax: int, L: int, d: int) -> bool:
    """pairs-of-children times squared bound stays below the next bound."""
    pairs = (5 * 80 * L) ** (2 * d)
    return all(pairs * family_bound(k, L, d) ** 2 <= family_bound(k + 1, L, d)
               for k in range(kmax))


def lambda_choice(L: int, d: int) -> float:
    return (10 * math.log(2) + 4 * d * math.log(5 * 80 * L)) / 100


def scale_table(p: ScaleParams, kmax: int, d: int = 5) -> list[dict]:
    rows = []
    for k in range(kmax + 1):
        Lk = p.scale(k)
        rows.append({"kappa": k, "L_kappa": Lk, "side_C3": 5 * Lk,
                     "sites_C3": (5 * Lk) ** d})
    return rows


# ------------------------------------------------------------------- split geometry


def floor_combination(a, b, num: int, den: int) -> np.ndarray:
    """floor((num * a + (den - num) * b) / den), coordinatewise and exact."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    return (num * a + (den - num) * b) // den


def staircase(a, b) -> np.ndarray:
    """Nearest-neighbour path from a to b moving axis 0 first, then axis 1..."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    pts = [a[None, :]]
    cur = a.copy()
    for k in range(len(a)):
        n = int(b[k] - cur[k])
        if n == 0:
            continue
        seg = np.repeat(cur[None, :], abs(n), axis=0)
        seg[:, k] = cur[k] + np.sign(n) * np.arange(1, abs(n) + 1)
        pts.append(seg)
        cur = seg[-1].copy()
    return np.concatenate(pts)


def _join(*parts: np.ndarray) -> np.ndarray:
    out = [parts[0]]
    last = parts[0][-1]
    for q in parts[1:]:
        if not np.array_equal(last, q[0]):
            raise AssertionError("path pieces do not join")
        out.append(q[1:])
        last = q[-1]
    return np.concatenate(out)


@dataclass(frozen=True)
class IBox:
    """Closed integer box lo <= x <= hi (index space, never materialized)."""

    lo: tuple
    hi: tuple

    @classmethod
    def ball(cls, x, r: int) -> "IBox":
        return cls(tuple(int(v) - r for v in x), tuple(int(v) + r for v in x))

    @classmethod
    def hull(cls, pts) -> "IBox":
        pts = np.asarray(pts, dtype=np.int64).reshape(-1, len(pts[0]))
        return cls(tuple(pts.min(axis=0).tolist()), tuple(pts.max(axis=0).tolist()))

    def is_empty(self) -> bool:
        return any(a > b for a, b in zip(self.lo, self.hi))

    def intersect(self, o: "IBox") -> "IBox":
        return IBox(tuple(max(a, b) for a, b in zip(self.lo, o.lo)),
                    tuple(min(a, b) for a, b in zip(self.hi, o.hi)))

    def expand(self, r: int) -> "IBox":
        return IBox(tuple(v - r for v in self.lo), tuple(v + r for v in self.hi))

    def contains(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.int64).reshape(-1, len(self.lo))
        return np.all((pts >= np.array(self.lo)) & (pts <= np.array(self.hi)), axis=1)

    def sites(self) -> np.ndarray:
        return Box(self.lo, tuple(v + 1 for v in self.hi)).grid()


def _ray_free(y: np.ndarray, k: int, s: int, boxes: Sequence[IBox]) -> bool:
    for b in boxes:
        lo = np.array(b.lo)
        hi = np.array(b.hi)
        other = np.ones(len(y), dtype=bool)
        other[k] = False
        if not np.all((y[other] >= lo[other]) & (y[other] <= hi[other])):
            continue
        if (s > 0 and hi[k] >= y[k]) or (s < 0 and lo[k] <= y[k]):
            return False
    return True


def _ray_to_surface(y: np.ndarray, boxes: Sequence[IBox], E: IBox) -> np.ndarray:
    """Axis ray from y (outside all boxes) to the surface of E, avoiding boxes."""
    d = len(y)
    for k in range(d):
        for s in (-1, 1):
            if _ray_free(y, k, s, boxes):
                target = y.copy()
                target[k] = E.lo[k] if s < 0 else E.hi[k]
                return staircase(y, target)
    raise AssertionError("no free axis ray")


def _pins(x: np.ndarray, E: IBox) -> list[int]:
    return [k for k in range(len(x)) if x[k] == E.lo[k] or x[k] == E.hi[k]]


def surface_walk(p, q, E: IBox) -> np.ndarray:
    """Path from p to q on the surface of the closed box E."""
    p = np.asarray(p, dtype=np.int64)
    q = np.asarray(q, dtype=np.int64)
    pp, qp = _pins(p, E), _pins(q, E)
    if not pp or not qp:
        raise ValueError("endpoints must lie on the box surface")
    for k in pp:
        if k in qp and p[k] == q[k]:
            return staircase(p, q)
    k = pp[0]
    others = [j for j in qp if j != k]
    if others:
        j = others[0]
        p1 = p.copy()
        p1[j] = q[j]
        return _join(staircase(p, p1), staircase(p1, q))
    # q pinned only on the opposite face of axis k
    j = 0 if k != 0 else 1
    p1 = p.copy()
    p1[j] = E.lo[j]
    p2 = p1.copy()
    p2[k] = q[k]
    return _join(staircase(p, p1), staircase(p1, p2), staircase(p2, q))


def detour(path: np.ndarray, boxes: Sequence[IBox]) -> np.ndarray:
    """Replace the stretch of ``path`` meeting the union of ``boxes`` by axis
    rays to the surface of sbox(union) + 1 and a walk on that surface."""
    inside = np.zeros(len(path), dtype=bool)
    for b in boxes:
        inside |= b.contains(path)
    if not inside.any():
        return path
    if inside[0] or inside[-1]:
        raise ValueError("path endpoints inside the obstacle")
    first = int(np.argmax(inside))
    last = len(path) - 1 - int(np.argmax(inside[::-1]))
    a, b = path[first - 1], path[last + 1]
    E = IBox(tuple(min(x.lo[k] for x in boxes) for k in range(path.shape[1])),
             tuple(max(x.hi[k] for x in boxes) for k in range(path.shape[1]))).expand(1)
    ra = _ray_to_surface(a, boxes, E)
    rb = _ray_to_surface(b, boxes, E)
    mid = surface_walk(ra[-1], rb[-1], E)
    return _join(path[:first], ra, mid, rb[::-1], path[last + 1:])


@dataclass(frozen=True)
class SplitResult:
    tau: np.ndarray
    tau_prime: np.ndarray
    case: int
    i1: tuple
    i2: tuple
    i1p: tuple
    i2p: tuple
    Lam: int
    F: IBox | None
    obstacle: tuple


def linf(a, b) -> int:
    return int(np.max(np.abs(np.asarray(a, dtype=np.int64) - np.asarray(b, dtype=np.int64))))


def paths_apart(P: np.ndarray, Q: np.ndarray, gap: int) -> bool:
    """True when the ranges of two index paths are at l-inf distance >= gap."""
    if len(P) > len(Q):
        P, Q = Q, P
    tree = cKDTree(Q, balanced_tree=False, compact_nodes=False)
    dd, _ = tree.query(P, k=1, p=np.inf, distance_upper_bound=gap - 0.5)
    return bool(np.all(np.isinf(dd)))


def split_geometry(i1, i2, i1p, i2p, p: ScaleParams | int) -> SplitResult:
    """Two index paths, i1 -> i2 and i1' -> i2', at l-inf distance >= 2L.

    The labels are first swapped within each pair so that (i1, i2) realizes the
    smallest distance between {i1, i1'} and {i2, i2'}.
    """
    L = p.L if isinstance(p, ScaleParams) else int(p)
    pts = [np.asarray(v, dtype=np.int64) for v in (i1, i2, i1p, i2p)]
    i1, i2, i1p, i2p = pts
    if linf(i1, i1p) < 20 * L or linf(i2, i2p) < 20 * L:
        raise ValueError("need |i_j - i_j'|_inf >= 20L for j = 1, 2")
    best = None
    for a, ap in ((i1, i1p), (i1p, i1)):
        for b, bp in ((i2, i2p), (i2p, i2)):
            key = linf(a, b)
            if best is None or key < best[0]:
                best = (key, a, b, ap, bp)
    Lam, i1, i2, i1p, i2p = best
    if min(linf(i1p, i2), linf(i2p, i1)) < 10 * L:
        raise AssertionError("primed indices closer than 10L to the other pair")
    tau_bar = staircase(i1p, i2p)
    if Lam < 8 * L:
        tau = staircase(i1, i2)
        if not IBox.ball(i1, 8 * L).contains(tau).all():
            raise AssertionError("tau leaves B(i1, 8L)")
        obstacle = (IBox.ball(i1, 10 * L),)
        F = None
        case = 1
    else:
        F = IBox.ball(i1, Lam - 3 * L).intersect(IBox.ball(i2, Lam - 3 * L)) \
            .intersect(IBox.hull([i1, i2]))
        if F.is_empty():
            raise AssertionError("F is empty")
        y1 = floor_combination(i2, i1, 3 * L, Lam)
        y2 = floor_combination(i1, i2, 3 * L, Lam)
        for y, c in ((y1, i1), (y2, i2)):
            if not (F.contains(y)[0] and linf(y, c) <= 6 * L):
                raise AssertionError("F misses B(i_j, 6L)")
        tau = _join(staircase(i1, y1), staircase(y1, y2), staircase(y2, i2))
        obstacle = (F.expand(2 * L), IBox.ball(i1, 8 * L), IBox.ball(i2, 8 * L))
        case = 2
    tau_p = detour(tau_bar, obstacle)
    hit = np.zeros(len(tau_p), dtype=bool)
    for b in obstacle:
        hit |= b.contains(tau_p)
    if hit.any():
        raise AssertionError("tau' meets the obstacle")
    if not paths_apart(tau, tau_p, 2 * L):
        raise AssertionError("paths closer than 2L")
    return SplitResult(tau, tau_p, case, tuple(i1.tolist()), tuple(i2.tolist()),
                       tuple(i1p.tolist()), tuple(i2p.tolist()), Lam, F, obstacle)
