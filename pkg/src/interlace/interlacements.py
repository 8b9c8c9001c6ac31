"""Poissonian sampling of the interlacement trace on a finite set K.

The trajectories of the cloud that meet K are S ~ Poisson(u cap(K)) forward
walks started from the normalized equilibrium measure.  Only their forward
parts are sampled: the backward part of each trajectory avoids K.

Two treatments of what happens after a walk leaves B(K, R):

``exact``     with probability P_x[H_K < inf] the walk re-enters K at a site
              drawn from the entrance law of K seen from the exit point x,
              otherwise it never returns.  Exact for the trace on K.
``truncate``  the walk is killed.  Each trajectory could have returned with
              probability at most cap(K) max g(z) over |z|_inf > R, which is
              reported as ``bias_bound`` (summed over trajectories).

Every trajectory carries a label uniform on [0, u_max]; the trace at level
u <= u_max is the union of ranges with label <= u, which couples all levels
monotonically.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from numba import njit

from .lattice import (Box, SiteSet, boundary, components, diameter, flat_strides,
                      neighbourhood, to_mask)
from .potential import (EquilibriumSolution, GreenTable, equilibrium, green_matrix,
                        green_table, leading_constant, sandwich_constants)
from .walk import (RngStream, Trajectory, as_generator, digit_spec, digit_state,
                   flat_moves, next_direction, walk_exit_box)


# ------------------------------------------------------------------------ kernels


@njit(cache=True)
def _cloud_box(rng, st, starts, labels, olo, olen, wlo, wlen, wstrides, mark, touched, nt,
               base, bits, mask, threshold):
    """Walks started in the window box, killed on leaving the outer box.

    Box membership uses the unsigned-compare trick (x - lo) < len, and the
    number of axes on which the walker is outside the window is tracked
    incrementally, which keeps the inner loop branch-light."""
    d = starts.shape[1]
    x = np.empty(d, dtype=np.int64)
    inw = np.empty(d, dtype=np.int64)
    for i in range(starts.shape[0]):
        lab = labels[i]
        out = 0
        f = 0
        for a in range(d):
            x[a] = starts[i, a]
            inw[a] = np.uint64(x[a] - wlo[a]) < np.uint64(wlen[a])
            out += 1 - inw[a]
            f += (x[a] - wlo[a]) * wstrides[a]
        while True:
            if out == 0 and mark[f] > lab:
                if mark[f] == np.inf:
                    touched[nt] = f
                    nt += 1
                mark[f] = lab
            r = next_direction(rng, st, base, bits, mask, threshold)
            a = r >> 1
            s = 1 - 2 * (r & 1)
            xa = x[a] + s
            x[a] = xa
            f += s * wstrides[a]
            now = np.int64(np.uint64(xa - wlo[a]) < np.uint64(wlen[a]))
            out += inw[a] - now
            inw[a] = now
            if np.uint64(xa - olo[a]) >= np.uint64(olen[a]):
                break
    return nt


@njit(cache=True)
def _cloud_mask(rng, st, starts, labels, inside, shell_idx, shell_p, shell_cdf, entry,
                moves, winidx, mark, touched, nt, rec, nrec, base, bits, mask, threshold):
    """Walks on flat indices of a padded box.  Cells outside B(K, R) either
    stop the walk or, on the exit shell, re-enter K with the exact law.

    When rec has room, positions are recorded with -1 separating pieces of
    one trajectory and -2 ending it; nrec < 0 on return signals overflow."""
    for i in range(starts.shape[0]):
        p = starts[i]
        lab = labels[i]
        while True:
            if nrec >= 0:
                if nrec + 2 >= rec.shape[0]:
                    nrec = -1
                else:
                    rec[nrec] = p
                    nrec += 1
            w = winidx[p]
            if w >= 0 and mark[w] > lab:
                if mark[w] == np.inf:
                    touched[nt] = w
                    nt += 1
                mark[w] = lab
            if not inside[p]:
                j = shell_idx[p]
                if j >= 0 and rng.random() < shell_p[j]:
                    v = rng.random() * shell_cdf[j, shell_cdf.shape[1] - 1]
                    lo = 0
                    hi = shell_cdf.shape[1] - 1
                    while lo < hi:
                        mid = (lo + hi) // 2
                        if shell_cdf[j, mid] > v:
                            hi = mid
                        else:
                            lo = mid + 1
                    p = entry[lo]
                    if nrec >= 0:
                        rec[nrec] = -1
                        nrec += 1
                    continue
                break
            r = next_direction(rng, st, base, bits, mask, threshold)
            p += moves[r]
        if nrec >= 0:
            rec[nrec] = -2
            nrec += 1
    return nt, nrec


@njit(cache=True)
def origin_cluster(vacant, shape, strides, start, stop_on_boundary=False):
    """BFS of the vacant cluster of a flat cell in a dense box.

    Returns (volume, l-inf diameter, touches box boundary).  With
    stop_on_boundary the search ends at the first boundary contact and the
    volume and diameter are those of the explored part only."""
    d = shape.shape[0]
    n = vacant.shape[0]
    seen = np.zeros(n, dtype=np.bool_)
    queue = np.empty(n, dtype=np.int64)
    lo = np.full(d, 1 << 40, dtype=np.int64)
    hi = np.full(d, -(1 << 40), dtype=np.int64)
    if not vacant[start]:
        return 0, -1, False
    seen[start] = True
    queue[0] = start
    head, tail = 0, 1
    touches = False
    c = np.empty(d, dtype=np.int64)
    while head < tail:
        p = queue[head]
        head += 1
        rem = p
        for a in range(d):
            c[a] = rem // strides[a]
            rem -= c[a] * strides[a]
            if c[a] < lo[a]:
                lo[a] = c[a]
            if c[a] > hi[a]:
                hi[a] = c[a]
        for a in range(d):
            for s in (-1, 1):
                if c[a] + s < 0 or c[a] + s >= shape[a]:
                    touches = True
                    if stop_on_boundary:
                        head = tail
                        break
                    continue
                q = p + s * strides[a]
                if vacant[q] and not seen[q]:
                    seen[q] = True
                    queue[tail] = q
                    tail += 1
    diam = 0
    for a in range(d):
        if hi[a] - lo[a] > diam:
            diam = hi[a] - lo[a]
    return tail, diam, touches


# ------------------------------------------------------------------ data types


@dataclass(frozen=True)
class InterlacementSample:
    u: float
    window: Box
    K: SiteSet
    trace: SiteSet
    n_trajectories: int
    labels: np.ndarray
    R_cut: int
    mode: str
    bias_bound: float
    stream: RngStream | None
    trajectories: list | None = None

    @property
    def vacant(self) -> SiteSet:
        return self.K - self.trace

    def header(self) -> dict:
        return {"u": self.u, "d": self.window.d, "window": [list(self.window.lo),
                list(self.window.hi)], "seed": None if self.stream is None else
                [self.stream.seed, self.stream.stream_id, list(self.stream.path)],
                "R_cut": self.R_cut, "mode": self.mode, "bias_bound": self.bias_bound,
                "n_trajectories": self.n_trajectories}


@dataclass(frozen=True)
class ClusterInfo:
    sites: SiteSet
    volume: int
    diameter: int
    touches_window_boundary: bool


# ---------------------------------------------------------------------- sampler


class InterlacementSampler:
    """Prepared sampler for a fixed base K (equilibrium solved once).

    Parameters
    ----------
    K : sampling base, a SiteSet or a Box
    mode : "exact", "truncate" or "auto" (exact when K is small)
    R_cut : radius of B(K, R) where walks are cut; default 1 for exact mode
        and 2 diam(K) for truncation
    """

    def __init__(self, K, mode: str = "auto", R_cut: int | None = None,
                 table: GreenTable | None = None, solution: EquilibriumSolution | None = None):
        if isinstance(K, Box):
            self.box = K
            K = K.sites()
            self.is_box = True
        else:
            self.box = K.sbox()
            self.is_box = len(K) == self.box.volume
        self.K = K
        self.d = K.d
        self.diam = diameter(K)
        self.table = table if table is not None else green_table(K.d, max(self.diam, 1))
        self.eq = solution if solution is not None else equilibrium(K, self.table)
        inner = boundary(K, "inner")
        if mode == "auto":
            mode = "exact" if len(inner) <= 2000 else "truncate"
        if mode not in ("exact", "truncate"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        if R_cut is None:
            R_cut = 1 if mode == "exact" else max(2 * self.diam, 1)
        if R_cut < 1:
            raise ValueError("R_cut must be positive")
        if mode == "truncate" and R_cut < 2 * self.diam:
            raise ValueError(f"R_cut too small: need R_cut >= 2 diam(K) = {2 * self.diam}")
        self.R_cut = int(R_cut)
        pos = self.eq.measure > 0
        self.start_pts = K.points[pos]
        self.cdf = np.cumsum(self.eq.measure[pos])
        self.cdf /= self.cdf[-1]
        self.ds = digit_spec(self.d)
        self.wstrides = flat_strides(self.box.shape)
        self.mark = np.full(self.box.volume, np.inf)
        self.touched = np.empty(self.box.volume, dtype=np.int64)
        self.per_trajectory_bound = 0.0
        if mode == "truncate":
            _, c_hi = sandwich_constants(self.table)
            c_hi = max(c_hi, leading_constant(self.d) * 1.05)
            self.per_trajectory_bound = min(1.0, self.eq.capacity * c_hi
                                            * (self.R_cut + 1) ** (2 - self.d))
        if self.is_box and mode == "truncate":
            self.outer = self.box.expand(self.R_cut)
        else:
            self._prepare_mask(inner)

    def _prepare_mask(self, inner: SiteSet):
        ball = neighbourhood(self.K, self.R_cut)
        shell = boundary(ball, "outer")
        dom = ball.sbox().expand(2)
        self.dom = dom
        dstr = flat_strides(dom.shape)
        self.inside = to_mask(ball, dom).ravel()
        self.moves = flat_moves(dstr)
        lo = np.array(dom.lo)
        self.winidx = np.full(dom.volume, -1, dtype=np.int64)
        self.winidx[(self.K.points - lo) @ dstr] = (self.K.points - np.array(self.box.lo)) @ self.wstrides
        self.shell_idx = np.full(dom.volume, -1, dtype=np.int64)
        self.entry = (inner.points - lo) @ dstr
        if self.mode == "exact":
            sp_ = shell.points
            self.shell_idx[(sp_ - lo) @ dstr] = np.arange(len(sp_))
            G = green_matrix(inner.points, inner.points, _wide_table(self, shell))
            rhs = green_matrix(inner.points, sp_, _wide_table(self, shell))
            hm = sla.cho_solve(sla.cho_factor(G), rhs).T
            if hm.min() < -1e-9:
                raise RuntimeError("negative entrance probabilities")
            hm = np.maximum(hm, 0.0)
            self.shell_p = hm.sum(axis=1)
            if self.shell_p.max() >= 1:
                raise RuntimeError("return probability >= 1 on the exit shell")
            self.shell_cdf = np.cumsum(hm, axis=1)
        else:
            self.shell_p = np.zeros(1)
            self.shell_cdf = np.zeros((1, 1))
        self.starts_flat = (self.start_pts - lo) @ dstr

    # --------------------------------------------------------------------

    def _draw(self, gen, u_max: float):
        S = int(gen.poisson(u_max * self.eq.capacity)) if u_max > 0 else 0
        idx = np.searchsorted(self.cdf, gen.random(S), side="right")
        idx = np.minimum(idx, len(self.cdf) - 1)
        labels = gen.random(S) * u_max
        return S, idx, labels

    def run(self, u_max: float, rng, record: bool = False):
        """Sample the cloud up to level u_max.  Returns (mark view, touched
        flat indices, S, labels, recorded positions or None); ``mark[f]`` is
        the smallest label of a trajectory visiting window cell f.  The
        returned views are invalidated by the next call."""
        gen = as_generator(rng)
        self.mark[self.touched[: getattr(self, "_nt", 0)]] = np.inf
        S, idx, labels = self._draw(gen, u_max)
        st = digit_state()
        ds = self.ds
        rec_out = None
        if self.is_box and self.mode == "truncate":
            if record:
                nt, rec_out = self._run_box_recorded(gen, st, idx, labels)
            else:
                olo, wlo = np.array(self.outer.lo), np.array(self.box.lo)
                nt = _cloud_box(gen, st, self.start_pts[idx], labels,
                                olo, np.array(self.outer.hi) - olo,
                                wlo, np.array(self.box.hi) - wlo, self.wstrides,
                                self.mark, self.touched, 0, ds.base, ds.bits, ds.mask, ds.threshold)
        else:
            starts = self.starts_flat[idx]
            if record:
                nt, rec_out = self._run_mask_recorded(gen, st, starts, labels)
            else:
                nt, _ = _cloud_mask(gen, st, starts, labels, self.inside, self.shell_idx,
                                    self.shell_p, self.shell_cdf, self.entry, self.moves,
                                    self.winidx, self.mark, self.touched, 0,
                                    np.empty(1, np.int64), -1,
                                    ds.base, ds.bits, ds.mask, ds.threshold)
        self._nt = nt
        return self.mark, self.touched[:nt], S, labels, rec_out

    def _run_mask_recorded(self, gen, st, starts, labels):
        ds = self.ds
        nt = 0
        trajs = []
        for i in range(len(starts)):
            size = 1 << 14
            while True:
                saved = (gen.bit_generator.state, st.copy(), nt)
                rec = np.empty(size, dtype=np.int64)
                nt2, nrec = _cloud_mask(gen, st, starts[i: i + 1], labels[i: i + 1],
                                        self.inside, self.shell_idx, self.shell_p,
                                        self.shell_cdf, self.entry, self.moves, self.winidx,
                                        self.mark, self.touched, nt, rec, 0,
                                        ds.base, ds.bits, ds.mask, ds.threshold)
                if nrec >= 0:
                    nt = nt2
                    break
                # overflow: replay this trajectory with a larger buffer
                gen.bit_generator.state, st[:], nt = saved[0], saved[1], saved[2]
                size *= 4
            pieces = np.split(rec[: nrec - 1], np.nonzero(rec[: nrec - 1] == -1)[0])
            pts = []
            for pc in pieces:
                pc = pc[pc >= 0]
                idx = np.stack(np.unravel_index(pc, self.dom.shape), axis=1)
                pts.append(Trajectory(idx + np.array(self.dom.lo)))
            trajs.append(pts)
        return nt, trajs

    def _run_box_recorded(self, gen, st, idx, labels):
        trajs = []
        wlo = np.array(self.box.lo)
        for i in range(len(idx)):
            path, _ = walk_exit_box(self.start_pts[idx[i]], self.outer, gen, st)
            trajs.append([Trajectory(path)])
        # the trace is rebuilt from the recorded paths, with the same draws
        nt = 0
        for lab, tr in zip(labels, trajs):
            p = tr[0].steps
            ok = self.box.contains(p)
            f = np.unique((p[ok] - wlo) @ self.wstrides)
            new = f[np.isinf(self.mark[f])]
            self.touched[nt: nt + len(new)] = new
            nt += len(new)
            self.mark[f] = np.minimum(self.mark[f], lab)
        return nt, trajs

    def sample(self, u: float, rng, u_max: float | None = None,
               keep_trajectories: bool = False) -> InterlacementSample:
        if u < 0:
            raise ValueError("u must be nonnegative")
        u_max = u if u_max is None else u_max
        if u_max < u:
            raise ValueError("u_max must be at least u")
        mark, touched, S, labels, rec = self.run(u_max, rng, record=keep_trajectories)
        hit = touched[mark[touched] <= u]
        pts = np.stack(np.unravel_index(np.sort(hit), self.box.shape), axis=1) + np.array(self.box.lo)
        trace = SiteSet.from_points(pts, self.d, presorted=True) if len(pts) else SiteSet.empty(self.d)
        keep = labels <= u
        trajs = None
        if rec is not None:
            trajs = [t for t, k in zip(rec, keep) if k]
        n_keep = int(keep.sum())
        return InterlacementSample(
            u=u, window=self.box, K=self.K, trace=trace, n_trajectories=n_keep,
            labels=labels[keep], R_cut=self.R_cut, mode=self.mode,
            bias_bound=n_keep * self.per_trajectory_bound,
            stream=rng if isinstance(rng, RngStream) else None, trajectories=trajs)


def _wide_table(sampler: InterlacementSampler, shell: SiteSet) -> GreenTable:
    ext = (neighbourhood(sampler.K, sampler.R_cut + 1)).sbox().shape
    return green_table(sampler.d, max(ext))


def sample_interlacement(K: SiteSet, u: float, R_cut: int | None, rng,
                         mode: str = "auto", keep_trajectories: bool = True) -> InterlacementSample:
    """One sample of I^u on K (see InterlacementSampler)."""
    return InterlacementSampler(K, mode=mode, R_cut=R_cut).sample(
        u, rng, keep_trajectories=keep_trajectories)


# ------------------------------------------------------------------- clusters


def vacant_clusters(s: InterlacementSample) -> list[ClusterInfo]:
    """Components of the vacant set on the sampled base; the cluster of the
    origin first when the origin is vacant, then by smallest site."""
    vac = s.vacant
    edge = boundary(s.K, "inner")
    comps = components(vac, "nn")
    origin = (0,) * s.window.d
    comps.sort(key=lambda c: 0 if origin in c else 1)
    return [ClusterInfo(c, len(c), diameter(c), not c.isdisjoint(edge)) for c in comps]


def vacant_probability_exact(K: SiteSet, u: float, table: GreenTable | None = None) -> float:
    """exp(-u cap(K))."""
    if u < 0:
        raise ValueError("u must be nonnegative")
    if u == 0:
        return 1.0
    return float(np.exp(-u * equilibrium(K, table).capacity))
