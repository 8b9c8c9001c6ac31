"""Geometry of Z^d on finite site sets.

Finite sets are stored as sorted arrays of packed int64 keys, one bit field
per coordinate, so that set algebra, boundaries and neighbour queries are
vectorized array operations.  The packing preserves lexicographic order, which
is what makes every traversal in the package deterministic.

Boxes are half-open, ``lo <= x < hi`` coordinatewise.  The closed l-infinity
ball ``B(x, r)`` is therefore ``Box(x - r, x + r + 1)``.
"""
from __future__ import annotations

import itertools
import struct
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

MIN_DIM = 3
MAX_DIM = 7

# padded sbox volume above which fill() switches to the sparse algorithm
DENSE_VOLUME_LIMIT = 4_000_000
DENSE_RATIO = 64


def check_dim(d: int) -> int:
    d = int(d)
    if not MIN_DIM <= d <= MAX_DIM:
        raise ValueError(f"dimension must be in [{MIN_DIM}, {MAX_DIM}], got {d}")
    return d


@lru_cache(maxsize=None)
def key_layout(d: int):
    """Bits per coordinate, coordinate offset and field strides for dimension d."""
    bits = 63 // d
    offset = 1 << (bits - 1)
    strides = np.array([1 << (bits * (d - 1 - k)) for k in range(d)], dtype=np.int64)
    return bits, offset, strides


def coord_limit(d: int) -> int:
    """Largest |coordinate| that can be packed (with room for neighbour arithmetic)."""
    return key_layout(d)[1] - 16


def encode(points: np.ndarray, d: int) -> np.ndarray:
    pts = np.asarray(points, dtype=np.int64).reshape(-1, d)
    bits, off, strides = key_layout(d)
    lim = off - 16
    if pts.size and (pts.min() < -lim or pts.max() > lim):
        raise OverflowError(f"coordinates exceed the packable range +-{lim} for d={d}")
    return (pts + off) @ strides


def decode(keys: np.ndarray, d: int) -> np.ndarray:
    bits, off, strides = key_layout(d)
    keys = np.asarray(keys, dtype=np.int64)
    shifts = np.array([bits * (d - 1 - k) for k in range(d)], dtype=np.int64)
    mask = (1 << bits) - 1
    return ((keys[:, None] >> shifts[None, :]) & mask) - off


def offset_keys(offsets: np.ndarray, d: int) -> np.ndarray:
    """Key increments corresponding to integer displacement vectors."""
    return np.asarray(offsets, dtype=np.int64).reshape(-1, d) @ key_layout(d)[2]


@lru_cache(maxsize=None)
def nn_offsets(d: int) -> np.ndarray:
    """The 2d unit vectors +-e_k, in lexicographic order."""
    offs = []
    for k in range(d):
        e = np.zeros(d, dtype=np.int64)
        e[k] = 1
        offs.append(e)
        offs.append(-e)
    offs = np.array(offs)
    order = np.lexsort(offs.T[::-1])
    out = offs[order]
    out.flags.writeable = False
    return out


@lru_cache(maxsize=None)
def star_offsets(d: int) -> np.ndarray:
    """The 3^d - 1 nonzero vectors of {-1,0,1}^d, in lexicographic order."""
    offs = np.array([o for o in itertools.product((-1, 0, 1), repeat=d) if any(o)],
                    dtype=np.int64)
    offs.flags.writeable = False
    return offs


def _sorted_isin(query: np.ndarray, keys: np.ndarray) -> np.ndarray:
    if keys.size == 0:
        return np.zeros(np.shape(query), dtype=bool)
    idx = np.searchsorted(keys, query)
    idx[idx == keys.size] = keys.size - 1
    return keys[idx] == query


# --------------------------------------------------------------------------- boxes


@dataclass(frozen=True)
class Box:
    """Half-open box ``lo <= x < hi``."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(int(v) for v in self.lo)
        hi = tuple(int(v) for v in self.hi)
        if len(lo) != len(hi):
            raise ValueError("lo and hi differ in length")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"box with lo > hi: {lo}, {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def ball(cls, x: Sequence[int], r: int) -> "Box":
        """Closed l-infinity ball B(x, r)."""
        return cls(tuple(v - r for v in x), tuple(v + r + 1 for v in x))

    @classmethod
    def cube(cls, d: int, side: int, centered: bool = True) -> "Box":
        lo = -(side // 2) if centered else 0
        return cls((lo,) * d, (lo + side,) * d)

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple:
        return tuple(b - a for a, b in zip(self.lo, self.hi))

    @property
    def volume(self) -> int:
        v = 1
        for s in self.shape:
            v *= s
        return v

    def is_empty(self) -> bool:
        return self.volume == 0

    def contains(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.int64).reshape(-1, self.d)
        return np.all((pts >= np.array(self.lo)) & (pts < np.array(self.hi)), axis=1)

    def __contains__(self, x) -> bool:
        return bool(self.contains(np.asarray(x))[0])

    def expand(self, r: int) -> "Box":
        return Box(tuple(v - r for v in self.lo), tuple(v + r for v in self.hi))

    def intersect(self, other: "Box") -> "Box":
        lo = tuple(max(a, b) for a, b in zip(self.lo, other.lo))
        hi = tuple(max(l, min(a, b)) for l, a, b in zip(lo, self.hi, other.hi))
        return Box(lo, hi)

    def contains_box(self, other: "Box") -> bool:
        return all(a <= b for a, b in zip(self.lo, other.lo)) and \
            all(a >= b for a, b in zip(self.hi, other.hi))

    def grid(self) -> np.ndarray:
        """All sites as an array of shape (volume, d), lexicographic order."""
        axes = [np.arange(a, b, dtype=np.int64) for a, b in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def sites(self) -> "SiteSet":
        return SiteSet.from_points(self.grid(), self.d, presorted=True)

    def shell(self) -> "SiteSet":
        """Inner boundary of the box: sites with some coordinate on a face."""
        pts = self.grid()
        on = np.any((pts == np.array(self.lo)) | (pts == np.array(self.hi) - 1), axis=1)
        return SiteSet.from_points(pts[on], self.d, presorted=True)


# ------------------------------------------------------------------------- site sets


class SiteSet:
    """Finite subset of Z^d.

    Parameters
    ----------
    points : iterable of integer tuples or an (n, d) array
    d : dimension, required when ``points`` is empty
    window : optional Box that must contain every site
    """

    __slots__ = ("d", "keys", "window", "_points")

    def __init__(self, points: Iterable = (), d: int | None = None, window: Box | None = None):
        arr = np.asarray(list(points) if not isinstance(points, np.ndarray) else points,
                         dtype=np.int64)
        if arr.size == 0:
            if d is None:
                raise ValueError("dimension required for an empty SiteSet")
            arr = arr.reshape(0, d)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if d is None:
            d = arr.shape[1]
        elif arr.shape[1] != d:
            raise ValueError(f"points have dimension {arr.shape[1]}, expected {d}")
        self.d = check_dim(d)
        self.keys = np.unique(encode(arr, d))
        self.keys.flags.writeable = False
        self._points = None
        self.window = window
        if window is not None and len(self.keys) and not window.contains(self.points).all():
            raise ValueError("site outside window")

    @classmethod
    def from_keys(cls, keys: np.ndarray, d: int, presorted: bool = False,
                  window: Box | None = None) -> "SiteSet":
        obj = cls.__new__(cls)
        obj.d = d
        k = np.asarray(keys, dtype=np.int64)
        obj.keys = k if presorted else np.unique(k)
        obj.keys.flags.writeable = False
        obj._points = None
        obj.window = window
        return obj

    @classmethod
    def from_points(cls, pts: np.ndarray, d: int, presorted: bool = False) -> "SiteSet":
        return cls.from_keys(encode(pts, d), d, presorted=presorted)

    @classmethod
    def empty(cls, d: int) -> "SiteSet":
        return cls.from_keys(np.empty(0, dtype=np.int64), d, presorted=True)

    @property
    def points(self) -> np.ndarray:
        if self._points is None:
            p = decode(self.keys, self.d)
            p.flags.writeable = False
            self._points = p
        return self._points

    def __len__(self) -> int:
        return int(self.keys.size)

    def __bool__(self) -> bool:
        return self.keys.size > 0

    def __iter__(self):
        for p in self.points:
            yield tuple(int(v) for v in p)

    def __contains__(self, x) -> bool:
        return bool(self.contains(np.asarray(x, dtype=np.int64).reshape(1, self.d))[0])

    def contains(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.int64).reshape(-1, self.d)
        lim = coord_limit(self.d)
        ok = np.all(np.abs(pts) <= lim, axis=1)
        out = np.zeros(len(pts), dtype=bool)
        out[ok] = _sorted_isin(encode(pts[ok], self.d), self.keys)
        return out

    def contains_keys(self, keys: np.ndarray) -> np.ndarray:
        return _sorted_isin(np.asarray(keys, dtype=np.int64), self.keys)

    def _check(self, other: "SiteSet"):
        if other.d != self.d:
            raise ValueError("dimension mismatch")

    def union(self, other: "SiteSet") -> "SiteSet":
        self._check(other)
        return SiteSet.from_keys(np.union1d(self.keys, other.keys), self.d, presorted=True)

    def intersection(self, other: "SiteSet") -> "SiteSet":
        self._check(other)
        return SiteSet.from_keys(np.intersect1d(self.keys, other.keys, assume_unique=True),
                                 self.d, presorted=True)

    def difference(self, other: "SiteSet") -> "SiteSet":
        self._check(other)
        keep = ~_sorted_isin(self.keys, other.keys)
        return SiteSet.from_keys(self.keys[keep], self.d, presorted=True)

    __or__ = union
    __and__ = intersection
    __sub__ = difference

    def issubset(self, other: "SiteSet") -> bool:
        self._check(other)
        return bool(_sorted_isin(self.keys, other.keys).all())

    __le__ = issubset

    def isdisjoint(self, other: "SiteSet") -> bool:
        return not _sorted_isin(self.keys, other.keys).any()

    def __eq__(self, other) -> bool:
        if not isinstance(other, SiteSet):
            return NotImplemented
        return self.d == other.d and np.array_equal(self.keys, other.keys)

    def __hash__(self) -> int:
        return hash((self.d, self.keys.tobytes()))

    def __repr__(self) -> str:
        if len(self) <= 6:
            return f"SiteSet(d={self.d}, {list(self)})"
        return f"SiteSet(d={self.d}, n={len(self)}, sbox={self.sbox()})"

    def sbox(self) -> Box:
        """Smallest box containing the set."""
        if not self:
            raise ValueError("empty set")
        p = self.points
        return Box(tuple(p.min(axis=0)), tuple(p.max(axis=0) + 1))

    def translate(self, v: Sequence[int]) -> "SiteSet":
        return SiteSet.from_keys(self.keys + offset_keys(np.asarray(v), self.d)[0],
                                 self.d, presorted=True)

    def first(self) -> tuple:
        return tuple(int(v) for v in self.points[0])

    # serialization -----------------------------------------------------------

    def to_text(self) -> str:
        lines = [f"# d={self.d}"]
        lines += [" ".join(str(int(v)) for v in p) for p in self.points]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, d: int | None = None) -> "SiteSet":
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line[1:].strip().startswith("d="):
                    d = int(line[1:].strip()[2:])
                continue
            rows.append([int(v) for v in line.replace(",", " ").split()])
        if not rows:
            return cls.empty(d)
        return cls(np.array(rows, dtype=np.int64), d=d)

    _MAGIC = b"SSET"
    _VERSION = 1

    def to_bytes(self) -> bytes:
        head = self._MAGIC + struct.pack("<BBQ", self._VERSION, self.d, len(self))
        return head + self.points.astype("<i4").tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "SiteSet":
        if buf[:4] != cls._MAGIC:
            raise ValueError("not a SiteSet byte stream")
        version, d, n = struct.unpack("<BBQ", buf[4:14])
        if version != cls._VERSION:
            raise ValueError(f"unsupported SiteSet version {version}")
        body = np.frombuffer(buf[14:14 + 4 * d * n], dtype="<i4").astype(np.int64)
        if n == 0:
            return cls.empty(d)
        return cls.from_points(body.reshape(n, d), d)


def as_siteset(x, d: int | None = None) -> SiteSet:
    if isinstance(x, SiteSet):
        return x
    if isinstance(x, Box):
        return x.sites()
    return SiteSet(x, d=d)


def point(*coords) -> tuple:
    if len(coords) == 1 and not np.isscalar(coords[0]):
        coords = tuple(coords[0])
    return tuple(int(c) for c in coords)


def unit(d: int, k: int, sign: int = 1) -> tuple:
    e = [0] * d
    e[k] = sign
    return tuple(e)


# ------------------------------------------------------------------ neighbourhoods


def _neighbour_keys(K: SiteSet, offsets: np.ndarray) -> np.ndarray:
    return (K.keys[:, None] + offset_keys(offsets, K.d)[None, :]).ravel()


def boundary(K: SiteSet, kind: str = "outer") -> SiteSet:
    """Outer, star (*-) or inner boundary of a finite set.

    outer: sites outside K with a nearest neighbour in K.
    star:  sites outside K with a *-neighbour (l-inf distance 1) in K.
    inner: sites of K with a nearest neighbour outside K.
    """
    d = K.d
    if not K:
        return SiteSet.empty(d)
    if kind == "outer":
        cand = np.unique(_neighbour_keys(K, nn_offsets(d)))
        return SiteSet.from_keys(cand[~K.contains_keys(cand)], d, presorted=True)
    if kind == "star":
        cand = np.unique(_neighbour_keys(K, star_offsets(d)))
        return SiteSet.from_keys(cand[~K.contains_keys(cand)], d, presorted=True)
    if kind == "inner":
        nb = K.keys[:, None] + offset_keys(nn_offsets(d), d)[None, :]
        inside = K.contains_keys(nb.ravel()).reshape(nb.shape).all(axis=1)
        return SiteSet.from_keys(K.keys[~inside], d, presorted=True)
    raise ValueError(f"unknown boundary kind {kind!r}")


def closure(K: SiteSet) -> SiteSet:
    """K together with its outer boundary."""
    return K | boundary(K, "outer")


def neighbourhood(K: SiteSet, r: int) -> SiteSet:
    """B(K, r): sites within l-infinity distance r of K."""
    if r < 0:
        raise ValueError("negative radius")
    out = K
    for _ in range(r):
        out = out | boundary(out, "star")
    return out


# ------------------------------------------------------------------------- metrics


def distance(K1: SiteSet, K2: SiteSet, norm: str = "l1") -> int:
    """inf of |x - y| over x in K1, y in K2, for the l1 or l-infinity norm."""
    if not K1 or not K2:
        raise ValueError("empty set")
    p = {"l1": 1, "linf": np.inf}[norm]
    a, b = K1.points, K2.points
    if len(a) * len(b) <= 250_000:
        diff = np.abs(a[:, None, :] - b[None, :, :])
        dist = diff.sum(axis=2) if p == 1 else diff.max(axis=2)
        return int(dist.min())
    if len(a) > len(b):
        a, b = b, a
    tree = cKDTree(b)
    dd, _ = tree.query(a, k=1, p=p)
    return int(round(dd.min()))


def diameter(K: SiteSet) -> int:
    """sup of l-infinity distances within K."""
    if not K:
        raise ValueError("empty set")
    p = K.points
    return int((p.max(axis=0) - p.min(axis=0)).max())


def is_path(pts) -> bool:
    pts = np.asarray(pts, dtype=np.int64)
    if len(pts) < 2:
        return True
    return bool(np.all(np.abs(np.diff(pts, axis=0)).sum(axis=1) == 1))


# -------------------------------------------------------------------- connectivity


@njit(cache=True)
def _uf_find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@njit(cache=True)
def uf_labels(n, a, b):
    """Union-find over n nodes and edges (a[e], b[e]); each node gets the
    smallest index of its component."""
    parent = np.arange(n)
    for e in range(a.shape[0]):
        ra = _uf_find(parent, a[e])
        rb = _uf_find(parent, b[e])
        if ra != rb:
            if ra < rb:
                parent[rb] = ra
            else:
                parent[ra] = rb
    for i in range(n):
        parent[i] = _uf_find(parent, i)
    return parent


def _edges(K: SiteSet, adjacency: str):
    d = K.d
    offs = nn_offsets(d) if adjacency == "nn" else star_offsets(d)
    # half of the symmetric offset set suffices for undirected edges
    offs = offs[[tuple(o) > (0,) * d for o in offs]]
    a_all, b_all = [], []
    for ok in offset_keys(offs, d):
        q = K.keys + ok
        idx = np.searchsorted(K.keys, q)
        idx[idx == len(K)] = len(K) - 1
        hit = K.keys[idx] == q
        a_all.append(np.nonzero(hit)[0])
        b_all.append(idx[hit])
    if not a_all:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(a_all), np.concatenate(b_all)


def component_labels(K: SiteSet, adjacency: str = "nn") -> np.ndarray:
    if adjacency not in ("nn", "star"):
        raise ValueError(f"unknown adjacency {adjacency!r}")
    a, b = _edges(K, adjacency)
    return uf_labels(len(K), a.astype(np.int64), b.astype(np.int64))


def components(K: SiteSet, adjacency: str = "nn") -> list[SiteSet]:
    """Maximal connected pieces, ordered by their lexicographically smallest site."""
    if not K:
        return []
    lab = component_labels(K, adjacency)
    order = np.argsort(lab, kind="stable")
    lab_sorted = lab[order]
    cuts = np.nonzero(np.diff(lab_sorted))[0] + 1
    return [SiteSet.from_keys(K.keys[np.sort(g)], K.d, presorted=True)
            for g in np.split(order, cuts)]


def is_connected(K: SiteSet, adjacency: str = "nn") -> bool:
    if len(K) <= 1:
        return True
    return bool((component_labels(K, adjacency) == 0).all())


# --------------------------------------------------------------------------- masks


def to_mask(K: SiteSet, box: Box) -> np.ndarray:
    mask = np.zeros(box.shape, dtype=bool)
    if K:
        inside = box.contains(K.points)
        idx = (K.points[inside] - np.array(box.lo)).T
        mask[tuple(idx)] = True
    return mask


def from_mask(mask: np.ndarray, box: Box) -> SiteSet:
    idx = np.argwhere(mask)
    return SiteSet.from_points(idx + np.array(box.lo, dtype=np.int64), box.d, presorted=True)


def flat_strides(shape) -> np.ndarray:
    st = np.ones(len(shape), dtype=np.int64)
    for k in range(len(shape) - 2, -1, -1):
        st[k] = st[k + 1] * shape[k + 1]
    return st


# ---------------------------------------------------------------------------- fill


@njit(cache=True)
def _flood_exterior(blocked, seeds, steps):
    """BFS from seeds over unblocked cells; blocked is also used as 'seen'."""
    n = blocked.shape[0]
    ext = np.zeros(n, dtype=np.bool_)
    queue = np.empty(n, dtype=np.int64)
    head = 0
    tail = 0
    for s in seeds:
        if not blocked[s] and not ext[s]:
            ext[s] = True
            queue[tail] = s
            tail += 1
    while head < tail:
        p = queue[head]
        head += 1
        for st in steps:
            q = p + st
            if not blocked[q] and not ext[q]:
                ext[q] = True
                queue[tail] = q
                tail += 1
    return ext


def _fill_dense(A: SiteSet) -> SiteSet:
    # one layer of padding is exterior; a second layer acts as a sentinel wall
    inner = A.sbox().expand(1)
    box = inner.expand(1)
    shape = box.shape
    mask = to_mask(A, box)
    wall = np.ones(shape, dtype=bool)
    wall[tuple(slice(1, s - 1) for s in shape)] = False
    blocked = (mask | wall).ravel()
    st = flat_strides(shape)
    steps = np.concatenate([st, -st])
    shell = np.zeros(shape, dtype=bool)
    shell[tuple(slice(1, s - 1) for s in shape)] = True
    shell[tuple(slice(2, s - 2) for s in shape)] = False
    seeds = np.flatnonzero(shell)
    ext = _flood_exterior(blocked, seeds, steps)
    filled = ~(ext | wall.ravel())
    return from_mask(filled.reshape(shape), box)


class _Lines:
    """Per-axis extent of K on every axis-parallel line, for half-line escapes."""

    def __init__(self, K: SiteSet):
        self.d = K.d
        self.strides = key_layout(K.d)[2]
        self.off = key_layout(K.d)[1]
        pts = K.points
        self.tables = []
        for k in range(K.d):
            lk = K.keys - (pts[:, k] + self.off) * self.strides[k]
            uniq, inv = np.unique(lk, return_inverse=True)
            lo = np.full(len(uniq), np.iinfo(np.int64).max)
            hi = np.full(len(uniq), np.iinfo(np.int64).min)
            np.minimum.at(lo, inv, pts[:, k])
            np.maximum.at(hi, inv, pts[:, k])
            self.tables.append((uniq, lo, hi))

    def free(self, keys: np.ndarray, pts: np.ndarray) -> np.ndarray:
        """True where some axis half-line from the site misses K entirely."""
        out = np.zeros(len(keys), dtype=bool)
        for k, (uniq, lo, hi) in enumerate(self.tables):
            lk = keys - (pts[:, k] + self.off) * self.strides[k]
            idx = np.searchsorted(uniq, lk)
            idx[idx == len(uniq)] = max(len(uniq) - 1, 0)
            present = uniq[idx] == lk
            x = pts[:, k]
            out |= ~present | (x > hi[idx]) | (x < lo[idx])
        return out


def _fill_sparse(A: SiteSet) -> SiteSet:
    # a bounded component of A^c is adjacent to A, so it meets the outer
    # boundary; a site with an A-free axis half-line is in the unbounded one
    d = A.d
    lines = _Lines(A)
    cand = boundary(A, "outer")
    free = lines.free(cand.keys, cand.points)
    hard = cand.keys[~free]
    if hard.size == 0:
        return A
    exterior = set(cand.keys[free].tolist())
    holes: set = set()
    nn_k = offset_keys(nn_offsets(d), d)
    akeys = A.keys
    for start in hard.tolist():
        if start in exterior or start in holes:
            continue
        seen = {start}
        queue = deque([start])
        escaped = False
        while queue and not escaped:
            batch = list(queue)
            queue.clear()
            bk = np.array(batch, dtype=np.int64)
            if lines.free(bk, decode(bk, d)).any():
                escaped = True
                break
            nbk = (bk[:, None] + nn_k[None, :]).ravel()
            nbk = nbk[~_sorted_isin(nbk, akeys)]
            for q in nbk.tolist():
                if q in exterior:
                    escaped = True
                    break
                if q not in seen:
                    seen.add(q)
                    queue.append(q)
        if escaped:
            exterior |= seen
        else:
            holes |= seen
    if not holes:
        return A
    return A | SiteSet.from_keys(np.array(sorted(holes), dtype=np.int64), d, presorted=True)


def fill(A: SiteSet, dense_limit: int | None = None) -> SiteSet:
    """Complement of the unbounded connected component of A^c.

    Small or bulky sets use a flood fill over sbox(A) padded by one layer,
    seeded from the padding.  Thin sets (padded volume above ``dense_limit`` or
    above DENSE_RATIO times |A|) use an
    equivalent search from the outer boundary that stops as soon as an
    axis-parallel half-line avoiding A is found.
    """
    if len(A) < 2 * A.d:
        # enclosing even a single site takes 2d sites
        return A
    limit = DENSE_VOLUME_LIMIT if dense_limit is None else dense_limit
    vol = A.sbox().expand(2).volume
    if vol <= limit and (dense_limit is not None or vol <= DENSE_RATIO * len(A)):
        return _fill_dense(A)
    return _fill_sparse(A)


def fill_cases(A: SiteSet, B: SiteSet, norm: str = "l1") -> tuple[bool, bool, bool]:
    """The three alternatives for two connected sets at distance > 1:
    (A inside f(B) and d(f(A), B) > 1, B inside f(A) and d(f(B), A) > 1,
    d(f(A), f(B)) > 1).  ``norm`` applies to the last distance only; the
    first two always use l1."""
    fA, fB = fill(A), fill(B)
    c1 = A.issubset(fB) and distance(fA, B, "l1") > 1
    c2 = B.issubset(fA) and distance(fB, A, "l1") > 1
    c3 = distance(fA, fB, norm) > 1
    return c1, c2, c3


# -------------------------------------------------------------------------- search


@njit(cache=True)
def _bfs(allowed, sources, is_target, steps):
    # parent: -2 unseen, -1 root
    n = allowed.shape[0]
    parent = np.full(n, -2, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    head = 0
    tail = 0
    for s in sources:
        if allowed[s] and parent[s] == -2:
            parent[s] = -1
            queue[tail] = s
            tail += 1
            if is_target[s]:
                return parent, s
    while head < tail:
        p = queue[head]
        head += 1
        for st in steps:
            q = p + st
            if allowed[q] and parent[q] == -2:
                parent[q] = p
                queue[tail] = q
                tail += 1
                if is_target[q]:
                    return parent, q
    return parent, -1


@dataclass(frozen=True)
class SearchResult:
    reached: SiteSet
    path: np.ndarray | None
    complete: bool


def search(allowed: SiteSet, sources: SiteSet, targets: SiteSet | None = None,
           adjacency: str = "nn") -> SearchResult:
    """Breadth-first search over ``allowed`` from the sources that lie in it.

    Neighbours (nearest or *-neighbours) are explored in lexicographic offset
    order and sources in key order, so the returned shortest path is
    deterministic.  With targets the
    search stops at the first target discovered (``complete`` is then False
    and ``reached`` is partial); otherwise ``reached`` is the union of the
    components of ``allowed`` meeting the sources.
    """
    d = allowed.d
    if not allowed or not sources:
        return SearchResult(SiteSet.empty(d), None, True)
    box = allowed.sbox().expand(1)
    mask = to_mask(allowed, box).ravel()
    st = flat_strides(box.shape)
    lo = np.array(box.lo, dtype=np.int64)
    src_pts = sources.points[box.contains(sources.points)]
    src = (src_pts - lo) @ st
    tmask = np.zeros(mask.shape[0], dtype=np.bool_)
    if targets is not None and targets:
        tmask = to_mask(targets, box).ravel()
    offs = {"nn": nn_offsets, "star": star_offsets}[adjacency](d)
    steps = offs @ st
    parent, hit = _bfs(mask, src, tmask, steps)
    reached = from_mask((parent != -2).reshape(box.shape), box)
    if hit < 0:
        return SearchResult(reached, None, True)
    chain = [hit]
    while parent[chain[-1]] >= 0:
        chain.append(parent[chain[-1]])
    flat = np.array(chain[::-1], dtype=np.int64)
    path = np.stack(np.unravel_index(flat, box.shape), axis=1).astype(np.int64) + lo
    return SearchResult(reached, path, False)
