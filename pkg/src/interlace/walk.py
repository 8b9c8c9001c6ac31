"""Simple random walk on Z^d: sampling, stopping times and excursions.

Random numbers come from counter-based Philox streams keyed by
``(seed, stream_id)``, so a replica's trajectory depends only on its own
key and never on how replicas are distributed over workers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

from .lattice import Box, SiteSet, check_dim, flat_strides, neighbourhood, to_mask

NEVER = math.inf
DEFAULT_MAX_STEPS = 10**9

_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """Key of an independent random stream."""

    seed: int
    stream_id: int = 0
    path: tuple = ()

    def __post_init__(self):
        for v in (self.seed, self.stream_id, *self.path):
            if not 0 <= int(v) <= _U64:
                raise ValueError("stream keys must be 64-bit unsigned integers")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed),
                                    spawn_key=(int(self.stream_id), *map(int, self.path)))
        return np.random.Generator(np.random.Philox(ss))

    def substream(self, j: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, (*self.path, int(j)))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError("expected RngStream or numpy Generator")


# ---------------------------------------------------------------- direction draws


@dataclass(frozen=True)
class DigitSpec:
    """Directions come from 17-bit chunks of a 53-bit uniform by Lemire's
    multiply-and-shift map to [0, base); chunks whose low product bits fall
    below ``threshold`` are rejected, which makes the map exactly uniform."""

    base: int
    bits: int = 17
    mask: int = (1 << 17) - 1
    threshold: int = 0


def digit_spec(d: int) -> DigitSpec:
    base = 2 * d
    return DigitSpec(base, 17, (1 << 17) - 1, (1 << 17) % base)


def digit_state() -> np.ndarray:
    """Buffer of unused random bits: [bits, chunks left]."""
    return np.zeros(2, dtype=np.int64)


@njit(cache=True)
def next_direction(rng, st, base, bits, mask, threshold):
    while True:
        if st[1] == 0:
            st[0] = np.int64(rng.random() * 9007199254740992.0)
            st[1] = 3
        m = (st[0] & mask) * base
        st[0] >>= bits
        st[1] -= 1
        if (m & mask) >= threshold:
            return m >> bits


# ------------------------------------------------------------------------ kernels


@njit(cache=True)
def _walk_fixed(rng, st, x0, n, base, bits, mask, threshold):
    d = x0.shape[0]
    path = np.empty((n + 1, d), dtype=np.int64)
    path[0] = x0
    for t in range(n):
        r = next_direction(rng, st, base, bits, mask, threshold)
        path[t + 1] = path[t]
        path[t + 1, r >> 1] += 1 - 2 * (r & 1)
    return path


@njit(cache=True)
def _walk_exit_box(rng, st, x, lo, hi, buf, n0, max_steps, base, bits, mask, threshold):
    """Walk from x (modified in place) until it leaves [lo, hi).

    Writes positions into buf from row n0.  Returns (last row written,
    status) with status 0 = exited, 2 = buffer full, 3 = step budget spent.
    """
    d = x.shape[0]
    i = n0
    for a in range(d):
        if x[a] < lo[a] or x[a] >= hi[a]:
            return i, 0
    steps = 0
    while True:
        if i + 1 >= buf.shape[0]:
            return i, 2
        if steps >= max_steps:
            return i, 3
        r = next_direction(rng, st, base, bits, mask, threshold)
        a = r >> 1
        xa = x[a] + 1 - 2 * (r & 1)
        x[a] = xa
        i += 1
        steps += 1
        for b in range(d):
            buf[i, b] = x[b]
        if np.uint64(xa - lo[a]) >= np.uint64(hi[a] - lo[a]):
            return i, 0


@njit(cache=True)
def _walk_mask(rng, st, p, stop, moves, buf, n0, max_steps, base, bits, mask, threshold):
    """Walk on flat indices of a padded box until reaching a stop cell."""
    i = n0
    steps = 0
    while not stop[p]:
        if i + 1 >= buf.shape[0]:
            return i, 2, p
        if steps >= max_steps:
            return i, 3, p
        r = next_direction(rng, st, base, bits, mask, threshold)
        p += moves[r]
        i += 1
        steps += 1
        buf[i] = p
    return i, 0, p


def flat_moves(strides: np.ndarray) -> np.ndarray:
    """Flat-index increments in the direction order of next_direction."""
    d = len(strides)
    out = np.empty(2 * d, dtype=np.int64)
    out[0::2] = strides
    out[1::2] = -strides
    return out


# -------------------------------------------------------------------- trajectories


@dataclass(frozen=True)
class Trajectory:
    """Finite nearest-neighbour path; ``steps[j]`` is the position at time
    ``origin_time + j``.  Negative times are allowed (two-sided walks)."""

    steps: np.ndarray
    origin_time: int = 0
    horizon_reached: bool = False

    def __post_init__(self):
        s = np.asarray(self.steps, dtype=np.int64)
        if s.ndim != 2 or s.shape[0] == 0:
            raise ValueError("trajectory needs at least one point")
        check_dim(s.shape[1])
        if s.shape[0] > 1 and not np.all(np.abs(np.diff(s, axis=0)).sum(axis=1) == 1):
            raise ValueError("consecutive points must be nearest neighbours")
        s.flags.writeable = False
        object.__setattr__(self, "steps", s)
        object.__setattr__(self, "origin_time", int(self.origin_time))

    @property
    def d(self) -> int:
        return self.steps.shape[1]

    def __len__(self) -> int:
        return self.steps.shape[0]

    @property
    def first_time(self) -> int:
        return self.origin_time

    @property
    def last_time(self) -> int:
        return self.origin_time + len(self) - 1

    def times(self) -> np.ndarray:
        return np.arange(self.first_time, self.last_time + 1)

    def at(self, t: int) -> tuple:
        j = t - self.origin_time
        if not 0 <= j < len(self):
            raise IndexError(f"time {t} outside [{self.first_time}, {self.last_time}]")
        return tuple(int(v) for v in self.steps[j])

    def segment(self, a: int, b: int) -> np.ndarray:
        """Positions at times a..b inclusive (clipped to the horizon)."""
        a = max(a, self.first_time)
        b = min(b, self.last_time)
        if b < a:
            return np.empty((0, self.d), dtype=np.int64)
        return self.steps[a - self.origin_time: b - self.origin_time + 1]

    def range_set(self, a: int | None = None, b: int | None = None) -> SiteSet:
        """X_[a,b] as a site set."""
        a = self.first_time if a is None else a
        b = self.last_time if b is None else b
        seg = self.segment(a, b)
        if len(seg) == 0:
            return SiteSet.empty(self.d)
        return SiteSet(seg, d=self.d)

    def shifted(self, t0: int) -> "Trajectory":
        return Trajectory(self.steps, self.origin_time - t0, self.horizon_reached)

    def to_text(self) -> str:
        rows = (" ".join(map(str, (t, *x))) for t, x in zip(self.times(), self.steps.tolist()))
        return "\n".join(rows) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Trajectory":
        arr = np.array([[int(v) for v in line.split()] for line in text.splitlines()
                        if line.strip()], dtype=np.int64)
        t = arr[:, 0]
        if len(t) > 1 and not np.all(np.diff(t) == 1):
            raise ValueError("times must be consecutive")
        return cls(arr[:, 1:], int(t[0]))


def two_sided(back: Trajectory, fwd: Trajectory) -> Trajectory:
    """Glue two walks started at the same point: time -j is back's j-th step."""
    if not np.array_equal(back.steps[0], fwd.steps[0]):
        raise ValueError("both halves must start at the same point")
    steps = np.concatenate([back.steps[::-1], fwd.steps[1:]])
    return Trajectory(steps, -(len(back) - 1), back.horizon_reached or fwd.horizon_reached)


# ----------------------------------------------------------------------- stopping


@dataclass(frozen=True)
class StopRule:
    """When a sampled walk stops.

    exit_box(B):     first time outside B
    exit_ball(K, R): first time outside B(K, R)
    fixed_length(n): after n steps
    hit_or_exit(K, B): first time in K or outside B
    """

    kind: str
    box: Box | None = None
    K: SiteSet | None = None
    R: int | None = None
    n: int | None = None
    max_steps: int = DEFAULT_MAX_STEPS

    def __post_init__(self):
        if self.kind == "fixed_length":
            if self.n is None or self.n < 0:
                raise ValueError("fixed_length needs n >= 0")
        elif self.kind == "exit_box":
            if self.box is None:
                raise ValueError("exit_box needs a box")
        elif self.kind == "exit_ball":
            if self.K is None or not self.K or self.R is None or self.R < 0:
                raise ValueError("exit_ball needs a nonempty K and R >= 0")
        elif self.kind == "hit_or_exit":
            if self.K is None:
                raise ValueError("hit_or_exit needs K")
            if self.box is None:
                # hitting a finite set is not almost surely finite in d >= 3
                raise ValueError("stop rule may never terminate: hitting needs an enclosing box")
        else:
            raise ValueError(f"unknown or non-terminating stop rule {self.kind!r}")

    @classmethod
    def exit_box(cls, box: Box, max_steps: int = DEFAULT_MAX_STEPS) -> "StopRule":
        return cls("exit_box", box=box, max_steps=max_steps)

    @classmethod
    def exit_ball(cls, K: SiteSet, R: int, max_steps: int = DEFAULT_MAX_STEPS) -> "StopRule":
        return cls("exit_ball", K=K, R=R, max_steps=max_steps)

    @classmethod
    def fixed_length(cls, n: int) -> "StopRule":
        return cls("fixed_length", n=n)

    @classmethod
    def hit_or_exit(cls, K: SiteSet, box: Box, max_steps: int = DEFAULT_MAX_STEPS) -> "StopRule":
        return cls("hit_or_exit", K=K, box=box, max_steps=max_steps)


def _is_box(K: SiteSet) -> bool:
    return len(K) == K.sbox().volume


def walk_exit_box(x, box: Box, gen: np.random.Generator, st=None,
                  max_steps: int = DEFAULT_MAX_STEPS, chunk: int = 4096):
    """Positions of a walk from x up to and including its exit from box.

    Returns (path array, exited flag)."""
    d = box.d
    ds = digit_spec(d)
    st = digit_state() if st is None else st
    x = np.array(x, dtype=np.int64)
    lo = np.array(box.lo, dtype=np.int64)
    hi = np.array(box.hi, dtype=np.int64)
    buf = np.empty((chunk, d), dtype=np.int64)
    buf[0] = x
    n, left = 0, max_steps
    while True:
        n_new, status = _walk_exit_box(gen, st, x, lo, hi, buf, n, left,
                                       ds.base, ds.bits, ds.mask, ds.threshold)
        left -= n_new - n
        n = n_new
        if status == 2:
            buf = np.concatenate([buf, np.empty_like(buf)])
            continue
        return buf[: n + 1], status == 0


def _walk_in_mask(x, stop_mask: np.ndarray, box: Box, gen, st, max_steps: int):
    d = box.d
    ds = digit_spec(d)
    strides = flat_strides(box.shape)
    moves = flat_moves(strides)
    flat = stop_mask.ravel()
    p = int(np.dot(np.array(x) - np.array(box.lo), strides))
    buf = np.empty(4096, dtype=np.int64)
    buf[0] = p
    n, left = 0, max_steps
    while True:
        n_new, status, p = _walk_mask(gen, st, p, flat, moves, buf, n, left,
                                      ds.base, ds.bits, ds.mask, ds.threshold)
        left -= n_new - n
        n = n_new
        if status == 2:
            buf = np.concatenate([buf, np.empty_like(buf)])
            continue
        idx = np.stack(np.unravel_index(buf[: n + 1], box.shape), axis=1)
        return idx + np.array(box.lo, dtype=np.int64), status == 0


def sample_walk(x, stop: StopRule, rng) -> Trajectory:
    """Simple random walk from x until the stop rule holds (inclusive)."""
    gen = as_generator(rng)
    x = np.asarray(x, dtype=np.int64)
    d = check_dim(len(x))
    st = digit_state()
    if stop.kind == "fixed_length":
        ds = digit_spec(d)
        return Trajectory(_walk_fixed(gen, st, x, stop.n, ds.base, ds.bits, ds.mask, ds.threshold))
    if stop.kind == "exit_box":
        path, done = walk_exit_box(x, stop.box, gen, st, stop.max_steps)
        return Trajectory(path, horizon_reached=not done)
    if stop.kind == "exit_ball":
        K = stop.K
        if _is_box(K):
            path, done = walk_exit_box(x, K.sbox().expand(stop.R), gen, st, stop.max_steps)
            return Trajectory(path, horizon_reached=not done)
        ball = neighbourhood(K, stop.R)
        box = ball.sbox().expand(1)
        stop_mask = ~to_mask(ball, box)
        if not ball.contains(x)[0]:
            return Trajectory(x[None, :])
        path, done = _walk_in_mask(x, stop_mask, box, gen, st, stop.max_steps)
        return Trajectory(path, horizon_reached=not done)
    if stop.kind == "hit_or_exit":
        box = stop.box
        if not box.contains(x)[0]:
            return Trajectory(x[None, :])
        outer = box.expand(1)
        stop_mask = np.ones(outer.shape, dtype=bool)
        stop_mask[tuple(slice(1, s - 1) for s in outer.shape)] = False
        stop_mask |= to_mask(stop.K, outer)
        path, done = _walk_in_mask(x, stop_mask, outer, gen, st, stop.max_steps)
        return Trajectory(path, horizon_reached=not done)
    raise AssertionError(stop.kind)


def sample_two_sided(x, n_back: int, n_fwd: int, rng) -> Trajectory:
    """Two independent fixed-length walks from x glued at time 0."""
    gen = as_generator(rng)
    back = sample_walk(x, StopRule.fixed_length(n_back), gen)
    fwd = sample_walk(x, StopRule.fixed_length(n_fwd), gen)
    return two_sided(back, fwd)


# ---------------------------------------------------------------- stopping times


class HittingTimes(NamedTuple):
    H: float
    H_tilde: float
    T: float


def _first(mask: np.ndarray, start: int = 0):
    idx = np.flatnonzero(mask[start:])
    return int(idx[0]) + start if idx.size else None


def stopping_times(t: Trajectory, K: SiteSet, start: int = 0) -> HittingTimes:
    """Entrance time H, hitting time H_tilde and exit time T of K, counted
    from time ``start`` (``NEVER`` if not within the horizon)."""
    seg = t.segment(start, t.last_time)
    if len(seg) == 0:
        raise ValueError(f"start time {start} outside the trajectory")
    inK = K.contains(seg) if K else np.zeros(len(seg), dtype=bool)

    def conv(j):
        return NEVER if j is None else start + j

    return HittingTimes(conv(_first(inK)), conv(_first(inK, 1)), conv(_first(~inK)))


class Excursion(NamedTuple):
    R: int
    D: int
    departed: bool  # False when D is only the horizon


def excursions(t: Trajectory, sigma: SiteSet, sigma_tilde: SiteSet,
               start: int = 0) -> list[Excursion]:
    """Successive returns R_i to sigma and departures D_i from sigma_tilde."""
    if not sigma.issubset(sigma_tilde):
        raise ValueError("sigma must be contained in sigma_tilde")
    seg = t.segment(start, t.last_time)
    in_s = sigma.contains(seg) if sigma else np.zeros(len(seg), dtype=bool)
    in_st = sigma_tilde.contains(seg) if sigma_tilde else np.zeros(len(seg), dtype=bool)
    out = []
    j = 0
    while True:
        r = _first(in_s, j)
        if r is None:
            return out
        dep = _first(~in_st, r)
        if dep is None:
            out.append(Excursion(start + r, start + len(seg) - 1, False))
            return out
        out.append(Excursion(start + r, start + dep, True))
        j = dep


def excursion_count(t: Trajectory, sigma: SiteSet, sigma_tilde: SiteSet, start: int = 0) -> int:
    """g_M: number of returns to sigma within the horizon."""
    return len(excursions(t, sigma, sigma_tilde, start))
