"""Separation of connected sets by an obstacle set U, and chi witnesses.

Two sets A1, A2 with l1 distance > 1 are separated by U in B when every
nearest-neighbour path with all vertices in B from the outer boundary of A1 to
the outer boundary of A2 meets U.  chi_m(U) = 1 is represented by an explicit
:class:`SeparationWitness`, checked by :func:`verify_witness`.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .coarse import ScaleIndex, ScaleParams, box_of
from .lattice import (Box, SiteSet, boundary, closure, components, diameter,
                      distance, is_connected, is_path, search)

EXHAUSTIVE_MAX_SITES = 30
EXHAUSTIVE_MAX_COMPONENTS = 20


def _sites(B) -> SiteSet:
    return B.sites() if isinstance(B, Box) else B


def is_separated(A1: SiteSet, A2: SiteSet, U: SiteSet, B) -> bool:
    """Separation of A1 from A2 by U in B (B a SiteSet or a Box)."""
    if not A1 or not A2 or distance(A1, A2, "l1") <= 1:
        return False
    B = _sites(B)
    free = B - U
    src = boundary(A1, "outer") & free
    dst = boundary(A2, "outer") & free
    if not src or not dst:
        return True
    return search(free, src, dst).path is None


def separating_path(A1: SiteSet, A2: SiteSet, U: SiteSet, B) -> np.ndarray | None:
    """A path in B \\ U from the outer boundary of A1 to that of A2, if any."""
    free = _sites(B) - U
    return search(free, boundary(A1, "outer") & free, boundary(A2, "outer") & free).path


@dataclass(frozen=True)
class SeparationWitness:
    m: ScaleIndex
    A1: SiteSet
    A2: SiteSet

    def to_json(self, p: ScaleParams | None = None) -> str:
        out = {"m": {"kappa": self.m.kappa, "i": list(self.m.i)},
               "A1": self.A1.points.tolist(), "A2": self.A2.points.tolist()}
        if p is not None:
            out["params"] = p.as_dict()
        return json.dumps(out, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SeparationWitness":
        obj = json.loads(text)
        m = ScaleIndex(obj["m"]["kappa"], tuple(obj["m"]["i"]))
        d = m.d
        return cls(m, SiteSet(obj["A1"], d=d), SiteSet(obj["A2"], d=d))


def witness_checks(w: SeparationWitness, U: SiteSet, p: ScaleParams) -> dict:
    """Each witness condition separately; all True means chi_m(U) = 1."""
    C2 = box_of(w.m, 2, p)
    half = Fraction(p.scale(w.m.kappa), 2)
    out = {}
    for name, A in (("A1", w.A1), ("A2", w.A2)):
        out[f"{name}_nonempty"] = bool(A)
        out[f"{name}_in_C2"] = bool(A) and bool(C2.contains(A.points).all())
        out[f"{name}_connected"] = bool(A) and is_connected(A)
        out[f"{name}_diam"] = bool(A) and diameter(A) >= half
    ok = all(out.values())
    out["distance"] = ok and distance(w.A1, w.A2, "l1") > 1
    out["separated"] = out["distance"] and is_separated(w.A1, w.A2, U, box_of(w.m, 3, p))
    return out


def verify_witness(w: SeparationWitness, U: SiteSet, p: ScaleParams) -> bool:
    return all(witness_checks(w, U, p).values())


# ------------------------------------------------------------------ exhaustive chi


def _edges(S: SiteSet) -> np.ndarray:
    """All nearest-neighbour edges inside S as an (n, 2, d) array."""
    pts = S.points
    d = S.d
    out = []
    for k in range(d):
        e = np.zeros(d, dtype=np.int64)
        e[k] = 1
        nb = pts + e
        ok = S.contains(nb)
        out.append(np.stack([pts[ok], nb[ok]], axis=1))
    return np.concatenate(out) if out else np.zeros((0, 2, d), dtype=np.int64)


def _far_edge_pair(E1: np.ndarray, E2: np.ndarray):
    if len(E1) == 0 or len(E2) == 0:
        return None
    diff = np.abs(E1[:, None, :, None, :] - E2[None, :, None, :, :]).sum(axis=-1)
    gap = diff.reshape(len(E1), len(E2), 4).min(axis=2)
    hit = np.argwhere(gap > 1)
    if len(hit) == 0:
        return None
    a, b = hit[0]
    return E1[a], E2[b]


def chi_exhaustive_witness(m: ScaleIndex, U: SiteSet, p: ScaleParams,
                           max_sites: int = EXHAUSTIVE_MAX_SITES) -> SeparationWitness | None:
    """Exact chi_m(U) for tiny boxes, with a witness when it equals 1.

    Rather than enumerating pairs of connected subsets, this uses the
    equivalent search: A1 is separated from A2 in B exactly when some union Z
    of components of B \\ U contains the free part of the boundary of A1 and
    avoids that of A2.  Taking Y = (B \\ U) \\ Z, a witness exists iff a
    connected A1 avoids Y and its boundary, a connected A2 avoids Z and its
    boundary, with the diameter and distance constraints.  For L_kappa <= 2
    the diameter bound is met by single edges, so minimal witnesses are pairs
    of edges.
    """
    C2 = box_of(m, 2, p)
    if C2.volume > max_sites:
        raise ValueError("instance too large for exhaustive χ")
    if p.scale(m.kappa) > 2:
        raise ValueError("exhaustive χ needs L_kappa <= 2")
    pair = separated_edge_pair(C2.sites(), box_of(m, 3, p).sites(), U)
    if pair is None:
        return None
    w = SeparationWitness(m, *pair)
    if not verify_witness(w, U, p):
        raise AssertionError(f"exhaustive witness failed verification: {w.to_json(p)}")
    return w


def separated_edge_pair(C2s: SiteSet, C3s: SiteSet, U: SiteSet):
    r"""Two edges inside C2s separated by U in C3s, or None if there are none.

    Exact answer to "are some two connected subsets of C2s of diameter >= 1
    separated", by enumerating the unions Z of components of C3s \ U near C2s.
    """
    near = closure(C2s)
    comps = [c for c in components(C3s - U) if not c.isdisjoint(near)]
    if len(comps) > EXHAUSTIVE_MAX_COMPONENTS:
        raise ValueError("instance too large for exhaustive χ")
    shadows = [closure(c) & C2s for c in comps]
    d = C2s.d
    for mask in itertools.product((False, True), repeat=len(comps)):
        Ysh = SiteSet.empty(d)
        Zsh = SiteSet.empty(d)
        for inZ, sh in zip(mask, shadows):
            if inZ:
                Zsh = Zsh | sh
            else:
                Ysh = Ysh | sh
        pair = _far_edge_pair(_edges(C2s - Ysh), _edges(C2s - Zsh))
        if pair is not None:
            return SiteSet(pair[0], d=d), SiteSet(pair[1], d=d)
    return None


def chi_exhaustive(m: ScaleIndex, U: SiteSet, p: ScaleParams,
                   max_sites: int = EXHAUSTIVE_MAX_SITES) -> bool:
    return chi_exhaustive_witness(m, U, p, max_sites) is not None


def chi_catalog(m: ScaleIndex, U: SiteSet, p: ScaleParams) -> SeparationWitness | None:
    """Heuristic chi: tries opposite inner faces of C_m^2 and pairs of
    components of C_m^2 \\ U and of U inside C_m^2.  A None result does not
    mean chi_m(U) = 0."""
    C2 = box_of(m, 2, p)
    C2s = C2.sites()
    half = Fraction(p.scale(m.kappa), 2)
    cands = []
    for k in range(C2.d):
        lo_face = SiteSet.from_points(C2.grid()[C2.grid()[:, k] == C2.lo[k]], C2.d)
        hi_face = SiteSet.from_points(C2.grid()[C2.grid()[:, k] == C2.hi[k] - 1], C2.d)
        cands.append((lo_face, hi_face))
    pieces = [c for c in components(C2s - U) + components(U & C2s) if diameter(c) >= half]
    cands.extend(itertools.combinations(pieces, 2))
    for A1, A2 in cands:
        w = SeparationWitness(m, A1, A2)
        if verify_witness(w, U, p):
            return w
    return None


# ------------------------------------------------------ constructive separating box


@dataclass(frozen=True)
class SeparatingBox:
    lbar: int
    witness: SeparationWitness
    case: int
    reached: SiteSet

    def __iter__(self):
        return iter((self.lbar, self.witness))


def _path_to_shell(S: SiteSet, x: tuple, C2: Box) -> SiteSet:
    """Range of a shortest path inside S from x to the inner boundary of C2."""
    res = search(S & C2.sites(), SiteSet([x], d=S.d), C2.shell())
    if res.path is None:
        raise AssertionError("no path to the inner boundary of C^2")
    return SiteSet(res.path, d=S.d)


def find_separating_box(A1: SiteSet, A2: SiteSet, U: SiteSet, B, tau, kappa: int,
                        p: ScaleParams) -> SeparatingBox:
    """Box index along ``tau`` at which U separates two large sets.

    Given A1 separated from A2 by U in B and a path of level-kappa indices from
    a box meeting A1 to a box meeting A2 whose tripled boxes lie in B, builds
    the set A of sites reachable from the boundary of A1 off U, and returns the
    last box along tau before A is lost (or the final box), with a witness.
    """
    tau = np.asarray(tau, dtype=np.int64)
    if tau.ndim != 2 or not is_path(tau):
        raise ValueError("tau is not a nearest-neighbour index path")
    Bs = _sites(B)
    Lk = p.scale(kappa)
    idx = [ScaleIndex(kappa, tuple(t)) for t in tau.tolist()]
    for l, m in enumerate(idx):
        C3 = box_of(m, 3, p)
        inside = B.contains_box(C3) if isinstance(B, Box) else Bs.contains(C3.grid()).all()
        if not inside:
            raise ValueError(f"hypothesis i) fails: C^3 of tau({l}) not inside B")
    if not box_of(idx[0], 1, p).contains(A1.points).any():
        raise ValueError("hypothesis ii) fails: C_m(0) does not meet A1")
    if not box_of(idx[-1], 1, p).contains(A2.points).any():
        raise ValueError("hypothesis ii) fails: C_m(N) does not meet A2")
    for name, A in (("A1", A1), ("A2", A2)):
        if not is_connected(A):
            raise ValueError(f"{name} is not connected")
        if 2 * diameter(A) < Lk:
            raise ValueError(f"diam({name}) < L_kappa/2")
    if not is_separated(A1, A2, U, Bs):
        raise ValueError("A1 not separated from A2 by U in B")

    free = Bs - U
    A = search(free, boundary(A1, "outer") & free).reached | A1
    empty = [l for l, m in enumerate(idx)
             if not box_of(m, 1, p).contains(A.points).any()]
    if not empty:
        case, lbar = 1, len(idx) - 1
    else:
        case, lbar = 2, empty[0] - 1
    m = idx[lbar]
    C1 = box_of(m, 1, p)
    C2 = box_of(m, 2, p)
    x = tuple(A.points[C1.contains(A.points)][0].tolist())
    A1p = A if C2.contains(A.points).all() else _path_to_shell(A, x, C2)
    if case == 1:
        y = tuple(A2.points[C1.contains(A2.points)][0].tolist())
        A2p = A2 if C2.contains(A2.points).all() else _path_to_shell(A2, y, C2)
    else:
        if Lk < 6:
            raise ValueError("the shrunken next box has diameter < L_kappa/2 unless L_kappa >= 6")
        nxt = box_of(idx[lbar + 1], 1, p)
        A2p = Box(tuple(v + 1 for v in nxt.lo), tuple(v - 1 for v in nxt.hi)).sites()
    w = SeparationWitness(m, A1p, A2p)
    checks = witness_checks(w, U, p)
    if not all(checks.values()):
        raise AssertionError(f"witness failed {checks}: {w.to_json(p)}")
    return SeparatingBox(lbar, w, case, A)
