"""Seeded Monte Carlo campaigns and their reports.

Every campaign splits its replicas into chunks of ``cfg.chunk``; chunk c draws
from its own stream keyed by (seed, campaign id, setting, c) and returns
integer counts, which are summed.  Outputs therefore do not depend on the
number of workers.  Reports are written as CSV (one row per statistic) plus
JSON metadata carrying the config, its hash and the seed.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from functools import partial

import numpy as np
import scipy
from numba import njit
from scipy import ndimage, optimize
from scipy.spatial import cKDTree

from . import __version__
from .coarse import ScaleIndex, ScaleParams, box_of
from .cutsaus import cut_mask
from .interlacements import InterlacementSampler, origin_cluster
from .lattice import MAX_DIM, MIN_DIM, Box, SiteSet
from .potential import capacity, equilibrium_box, green_table
from .walk import RngStream, StopRule, sample_walk

KINDS = ("vacant-law", "diam-tail", "vol-tail", "sausage-stats", "ubiquity")
CAMPAIGN_ID = {k: i + 1 for i, k in enumerate(KINDS)}
VACANT_LAW_SETS = ("origin", "ball1", "segment4", "pair3")
# keys that do not affect results
RUNTIME_KEYS = ("workers", "output")


# -------------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    """Declarative campaign description (JSON on disk).

    window is the side of the centred simulation cube; N_grid/V_grid default
    to dyadic values up to window/4; L0_grid and G_grid drive sausage-stats.
    """

    kind: str
    d: int = 3
    u: list = field(default_factory=lambda: [0.5, 1.0])
    sets: list = field(default_factory=lambda: list(VACANT_LAW_SETS))
    window: int = 48
    N_grid: list | None = None
    V_grid: list | None = None
    gamma: list = field(default_factory=lambda: [0.25, 0.5, 2 / 3])
    L: int = 24
    L0_grid: list = field(default_factory=lambda: [8, 16, 32])
    G_grid: list = field(default_factory=lambda: [100])
    margin: int = 2
    R_cut: int | None = None
    replicas: int = 1000
    chunk: int = 500
    seed: int = 0
    workers: int = 1
    output: str | None = None

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(obj) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        cfg = cls(**obj)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    def content_dict(self) -> dict:
        return {k: v for k, v in self.to_dict().items() if k not in RUNTIME_KEYS}

    def config_hash(self) -> str:
        text = json.dumps(self.content_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def n_grid(self) -> list[int]:
        if self.N_grid is not None:
            return [int(v) for v in self.N_grid]
        out, n = [0, 1], 2
        while n <= self.window // 4:
            out.append(n)
            n *= 2
        return out

    def v_grid(self) -> list[int]:
        if self.V_grid is not None:
            return [int(v) for v in self.V_grid]
        out, v = [1], 2
        while v <= self.window ** self.d // 4 and v <= 1 << 16:
            out.append(v)
            v *= 2
        return out

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown campaign kind {self.kind!r}")
        if not MIN_DIM <= self.d <= MAX_DIM:
            raise ValueError(f"d must be in {MIN_DIM}..{MAX_DIM}")
        if not self.u or any(v < 0 for v in self.u):
            raise ValueError("u values must be nonnegative")
        if self.replicas < 1 or self.chunk < 1:
            raise ValueError("replicas and chunk must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not 0 <= self.seed < 1 << 63:
            raise ValueError("seed must be a nonnegative 63-bit integer")
        if self.kind == "vacant-law":
            bad = set(self.sets) - set(VACANT_LAW_SETS)
            if bad:
                raise ValueError(f"unknown sets {sorted(bad)}")
        if self.kind in ("diam-tail", "vol-tail", "ubiquity"):
            if self.window < 3:
                raise ValueError("window side must be >= 3")
            if self.kind == "diam-tail" and max(self.n_grid()) >= self.window - 1:
                raise ValueError("N grid must stay below the window diameter")
            if self.kind == "ubiquity" and not all(0 < g <= 1 for g in self.gamma):
                raise ValueError("gamma must lie in (0, 1]")
        if self.kind == "sausage-stats":
            if 4 * 6 > self.L:
                raise ValueError("sausage-stats needs L >= 24 so that C^{L/4} contains C^5")
            if min(self.L0_grid) < 1 or min(self.G_grid) < 1:
                raise ValueError("L0 and G must be positive")
            if self.margin < 0:
                raise ValueError("margin must be nonnegative")

    def chunks(self) -> list[tuple[int, int]]:
        """(chunk index, replicas in chunk)."""
        n, c = self.replicas, self.chunk
        return [(i, min(c, n - i * c)) for i in range((n + c - 1) // c)]

    def stream(self, setting: int, chunk: int) -> RngStream:
        return RngStream(self.seed, CAMPAIGN_ID[self.kind], (setting, chunk))


# -------------------------------------------------------------------- reports


@dataclass
class Report:
    kind: str
    rows: list
    meta: dict

    def csv_text(self) -> str:
        buf = io.StringIO()
        if self.rows:
            w = csv.DictWriter(buf, fieldnames=list(self.rows[0]), lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: _fmt(v) for k, v in r.items()})
        return buf.getvalue()

    def json_text(self) -> str:
        return json.dumps(self.meta, sort_keys=True, indent=1, default=_fmt)

    def write(self, prefix: str) -> tuple[str, str]:
        d = os.path.dirname(prefix)
        if d:
            os.makedirs(d, exist_ok=True)
        paths = (prefix + ".csv", prefix + ".json")
        with open(paths[0], "w") as fh:
            fh.write(self.csv_text())
        with open(paths[1], "w") as fh:
            fh.write(self.json_text())
        return paths


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _meta(cfg: ExperimentConfig, **extra) -> dict:
    out = {"config": cfg.content_dict(), "config_hash": cfg.config_hash(), "seed": cfg.seed,
           "versions": {"interlace": __version__, "numpy": np.__version__,
                        "scipy": scipy.__version__}}
    out.update(extra)
    return out


@dataclass
class TailReport:
    """Censored tail estimates P[size >= x, cluster inside the window]."""

    grid: list
    counts: list
    censored: list
    replicas: int
    bias_bound: float
    flagged: list
    fit: dict

    @property
    def prob(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) / self.replicas

    @property
    def se(self) -> np.ndarray:
        p = self.prob
        return np.sqrt(p * (1 - p) / self.replicas)

    def monotone(self, k: float = 2.0) -> bool:
        return weakly_decreasing(self.prob, self.se, k)


def binomial_se(p, n) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return np.sqrt(p * (1 - p) / n)


def weakly_decreasing(p, se, k: float = 2.0) -> bool:
    """p[i+1] <= p[i] up to k combined standard errors."""
    p, se = np.asarray(p, float), np.asarray(se, float)
    return bool(np.all(p[1:] <= p[:-1] + k * np.hypot(se[1:], se[:-1]) + 1e-15))


def weakly_increasing(p, se, k: float = 2.0) -> bool:
    return weakly_decreasing(-np.asarray(p, float), se, k)


def _map_chunks(fn, cfg: ExperimentConfig, tasks: list) -> list:
    if cfg.workers == 1 or len(tasks) == 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
        return list(ex.map(fn, tasks))


def _sum(results: list):
    out = results[0]
    for r in results[1:]:
        out = out + r
    return out


# ------------------------------------------------------------------ vacant law


def vacant_law_set(name: str, d: int) -> SiteSet:
    e1 = np.zeros(d, dtype=np.int64)
    e1[0] = 1
    if name == "origin":
        return SiteSet([(0,) * d], d=d)
    if name == "ball1":
        return Box.ball((0,) * d, 1).sites()
    if name == "segment4":
        return SiteSet([j * e1 for j in range(5)], d=d)
    if name == "pair3":
        return SiteSet([0 * e1, 3 * e1], d=d)
    raise ValueError(name)


def _vacant_law_chunk(cfg: ExperimentConfig, task) -> np.ndarray:
    setting, c, n = task
    K = vacant_law_set(cfg.sets[setting], cfg.d)
    smp = InterlacementSampler(K, mode="exact")
    cells = (K.points - np.array(smp.box.lo)) @ smp.wstrides
    gen = cfg.stream(setting, c).generator()
    us = np.asarray(cfg.u, dtype=float)
    hits = np.zeros(len(us), dtype=np.int64)
    for _ in range(n):
        mark = smp.run(float(us.max()), gen)[0]
        hits += us < mark[cells].min()
    return hits


def run_vacant_law(cfg: ExperimentConfig) -> Report:
    """Empirical P[K vacant at level u] against exp(-u cap(K)), per set K."""
    tasks = [(s, c, n) for s in range(len(cfg.sets)) for c, n in cfg.chunks()]
    res = _map_chunks(partial(_vacant_law_chunk, cfg), cfg, tasks)
    rows = []
    for s, name in enumerate(cfg.sets):
        hits = _sum([r for t, r in zip(tasks, res) if t[0] == s])
        cap = capacity(vacant_law_set(name, cfg.d))
        for u, h in zip(cfg.u, hits):
            exact = math.exp(-u * cap)
            se = math.sqrt(exact * (1 - exact) / cfg.replicas)
            phat = h / cfg.replicas
            z = 0.0 if se == 0 else (phat - exact) / se
            rows.append({"set": name, "u": u, "capacity": cap, "exact": exact,
                         "hits": int(h), "replicas": cfg.replicas, "p_hat": phat,
                         "se": se, "z": z})
    return Report("vacant-law", rows, _meta(cfg))


# ------------------------------------------------------------------- tails


def _window_sampler(cfg: ExperimentConfig) -> tuple[InterlacementSampler, Box]:
    box = Box.cube(cfg.d, cfg.window)
    return InterlacementSampler(box, mode="truncate", R_cut=cfg.R_cut), box


def _tail_chunk(cfg: ExperimentConfig, measure: str, task) -> np.ndarray:
    """Per u: rows (hits per grid value, censored per grid value)."""
    setting, c, n = task
    smp, box = _window_sampler(cfg)
    grid = np.array(cfg.n_grid() if measure == "diam" else cfg.v_grid())
    us = np.asarray(cfg.u, dtype=float)
    start = int((np.zeros(cfg.d, dtype=np.int64) - np.array(box.lo)) @ smp.wstrides)
    shape = np.array(box.shape, dtype=np.int64)
    out = np.zeros((len(us), 2, len(grid)), dtype=np.int64)
    gen = cfg.stream(setting, c).generator()
    for _ in range(n):
        mark = smp.run(float(us.max()), gen)[0]
        for a, u in enumerate(us):
            vol, diam, touches = origin_cluster(mark > u, shape, smp.wstrides, start, True)
            size = diam if measure == "diam" else (vol if vol > 0 else -1)
            reach = size >= grid
            out[a, 1 if touches else 0] += reach
    return out


def stretched_fit(grid, p) -> dict:
    """Fit log p = log a - c x^alpha on positive estimates with x >= 1."""
    x = np.asarray(grid, float)
    p = np.asarray(p, float)
    ok = (x >= 1) & (p > 0)
    x, y = x[ok], np.log(p[ok])
    if len(x) < 2:
        return {"a": None, "c": None, "alpha": None, "residual": None, "c_lower": None}
    c_lower = float(np.max(-y / x))
    if len(x) >= 4:
        def model(t, la, c, al):
            return la - c * t ** al
        try:
            (la, c, al), _ = optimize.curve_fit(model, x, y, p0=(0.0, 0.1, 1.0),
                                                bounds=([-50, 0, 0.05], [50, 50, 3]))
        except RuntimeError:
            la, c, al = 0.0, 0.0, 1.0
    else:
        c, la = np.polyfit(x, y, 1) * np.array([-1, 1])
        al = 1.0
    resid = float(np.sqrt(np.mean((y - (la - c * x ** al)) ** 2)))
    return {"a": float(np.exp(la)), "c": float(c), "alpha": float(al), "residual": resid,
            "c_lower": c_lower}


def _run_tail(cfg: ExperimentConfig, measure: str) -> tuple[Report, list[TailReport]]:
    grid = cfg.n_grid() if measure == "diam" else cfg.v_grid()
    tasks = [(0, c, n) for c, n in cfg.chunks()]
    out = _sum(_map_chunks(partial(_tail_chunk, cfg, measure), cfg, tasks))
    smp, _ = _window_sampler(cfg)
    rows, tails = [], []
    for a, u in enumerate(cfg.u):
        hits, cens = out[a, 0], out[a, 1]
        bias = u * smp.eq.capacity * smp.per_trajectory_bound
        flagged = [int(g) for g, h, cc in zip(grid, hits, cens) if h == 0 and cc > 0]
        p = hits / cfg.replicas
        tr = TailReport(list(grid), hits.tolist(), cens.tolist(), cfg.replicas, bias,
                        flagged, stretched_fit(grid, p))
        tails.append(tr)
        for g, h, cc, pp, s in zip(grid, hits, cens, tr.prob, tr.se):
            rows.append({"u": u, measure: int(g), "hits": int(h), "censored": int(cc),
                         "replicas": cfg.replicas, "p_hat": pp, "se": s,
                         "all_censored": bool(h == 0 and cc > 0)})
    meta = _meta(cfg, R_cut=smp.R_cut, fits={str(u): t.fit for u, t in zip(cfg.u, tails)},
                 bias_bounds={str(u): t.bias_bound for u, t in zip(cfg.u, tails)},
                 monotone={str(u): t.monotone() for u, t in zip(cfg.u, tails)},
                 flagged={str(u): t.flagged for u, t in zip(cfg.u, tails)})
    return Report(f"{measure}-tail", rows, meta), tails


def run_diameter_tail(cfg: ExperimentConfig) -> tuple[Report, list[TailReport]]:
    """Censored P[diam(C_0^u) >= N, C_0^u off the window boundary] per u."""
    return _run_tail(cfg, "diam")


def volume_tail_calculator(V, d: int, u: float) -> dict:
    """Shape terms for the volume tail: V^{(d-2)/d} log V and, for small
    windows, u cap(B(0, 5 N)) with N = ceil(V^{1/d} / 2)."""
    N = max(1, math.ceil(V ** (1 / d) / 2))
    out = {"V": int(V), "shape": V ** ((d - 2) / d) * math.log(max(V, 2)), "N": N,
           "u_cap_cover": None}
    side = 2 * 5 * N + 1
    if side <= 41:
        box = Box.ball((0,) * d, 5 * N)
        try:
            out["u_cap_cover"] = u * equilibrium_box(box, green_table(d, side - 1)).capacity
        except Exception:  # solver cap or table limits: leave the entry empty
            pass
    return out


def run_volume_tail(cfg: ExperimentConfig) -> tuple[Report, list[TailReport]]:
    """Censored P[|C_0^u| >= V, C_0^u off the window boundary] per u, plus the
    shape calculator of the covering lower bound (no Monte Carlo for it)."""
    rep, tails = _run_tail(cfg, "vol")
    rep.meta["calculator"] = [volume_tail_calculator(v, cfg.d, u)
                              for u in cfg.u for v in cfg.v_grid() if v >= 2]
    return rep, tails


# ------------------------------------------------------------- sausage statistics


@njit(cache=True)
def greedy_sausages(steps, cuts, zero, D, thr):
    """Farthest-reaching choice of non-adjacent cut positions n_0 < zero < n_1
    < ... < n_J with every sausage of l-inf diameter <= thr and n_J > D.

    Returns J, or -1 when no such choice exists.  Taking n_0 as late as
    possible and every later cut as far as possible is optimal, since the
    sausage after a cut only shrinks when the cut moves forward."""
    n, d = steps.shape
    cur = -1
    for k in range(zero - 1, -1, -1):
        if cuts[k]:
            cur = k
            break
    if cur < 0:
        return -1
    lo = np.empty(d, dtype=np.int64)
    hi = np.empty(d, dtype=np.int64)
    J = 0
    while cur <= D:
        best = -1
        for a in range(d):
            lo[a] = steps[cur + 1, a]
            hi[a] = steps[cur + 1, a]
        b = cur + 2
        while b < n:
            p = steps[b - 1]
            w = 0
            for a in range(d):
                if p[a] < lo[a]:
                    lo[a] = p[a]
                if p[a] > hi[a]:
                    hi[a] = p[a]
                if hi[a] - lo[a] > w:
                    w = hi[a] - lo[a]
            if w > thr:
                break
            if cuts[b] and not (J == 0 and b == zero):
                best = b
            b += 1
        if best < 0:
            return -1
        cur = best
        J += 1
    return J


def sausage_success(steps: np.ndarray, zero: int, D: int, thr: float,
                    cuts: np.ndarray | None = None) -> bool:
    """Whether cut-times n_0 < 0 < ... < n_J exist as in the sausage estimate
    (positions index ``steps``; ``zero`` is time 0, ``D`` the exit time)."""
    steps = np.asarray(steps, dtype=np.int64)
    cuts = cut_mask(steps) if cuts is None else cuts
    return bool(greedy_sausages(steps, cuts, zero, D, float(thr)) >= 0)


def min_sausage_diameter(steps, cuts, zero: int, D: int) -> int:
    """Smallest integer bound on the sausage diameters for which a good
    choice of cut-times exists, or -1 if none exists at any bound."""
    hi = int((steps.max(axis=0) - steps.min(axis=0)).max())
    if greedy_sausages(steps, cuts, zero, D, float(hi)) < 0:
        return -1
    lo = -1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if greedy_sausages(steps, cuts, zero, D, float(mid)) >= 0:
            hi = mid
        else:
            lo = mid
    return hi


def uniform_shell_site(box: Box, gen) -> np.ndarray:
    """Uniform site of the inner boundary of a box: a uniform site of a
    uniform face, kept with probability 1 / (number of faces containing it)."""
    d = box.d
    lo, hi = np.array(box.lo), np.array(box.hi)
    if np.any(hi - lo != hi[0] - lo[0]):
        raise ValueError("uniform_shell_site expects a cube")
    while True:
        k = int(gen.integers(d))
        x = lo + gen.integers(0, hi - lo)
        x[k] = lo[k] if gen.random() < 0.5 else hi[k] - 1
        faces = int(np.sum(x == lo) + np.sum(x == hi - 1))
        if faces == 1 or gen.random() * faces < 1:
            return x


def _last_index(inside: np.ndarray) -> int:
    idx = np.flatnonzero(inside)
    return int(idx[-1]) if idx.size else -1


def _sausage_chunk(cfg: ExperimentConfig, task) -> np.ndarray:
    """Rows per G: (successes, close pairs, successes with diameters < L0/4,
    sum of the smallest feasible diameter bound, its sum of squares, count of
    replicas where some bound is feasible)."""
    setting, c, n = task
    L0 = int(cfg.L0_grid[setting])
    p = ScaleParams(cfg.L, L0)
    m = ScaleIndex(0, (0,) * cfg.d)
    C4, C5 = box_of(m, 4, p), box_of(m, 5, p)
    CL = box_of(m, cfg.L // 4, p)
    Gs = [int(g) for g in cfg.G_grid]
    gmax = max(Gs)
    out = np.zeros((len(Gs), 6), dtype=np.int64)
    gen = cfg.stream(setting, c).generator()
    extra = cfg.margin * L0 * L0
    for _ in range(n):
        x = uniform_shell_site(C4, gen)
        fwd = sample_walk(x, StopRule.exit_box(CL), gen).steps
        D = len(fwd) - 1
        more = sample_walk(fwd[-1], StopRule.fixed_length(extra), gen).steps[1:]
        back = sample_walk(x, StopRule.fixed_length(extra), gen).steps[1:]
        two = np.concatenate([back[::-1], fwd, more])
        zero = len(back)
        cuts = cut_mask(two)
        pieces = [fwd[: _last_index(C4.contains(fwd[:D])) + 1]]
        for _g in range(gmax - 1):
            w = sample_walk(uniform_shell_site(C5, gen), StopRule.exit_box(CL), gen).steps
            ins = C4.contains(w[:-1])
            if ins.any():
                pieces.append(w[int(np.argmax(ins)): _last_index(ins) + 1])
            else:
                pieces.append(w[:0])
        quarter = greedy_sausages(two, cuts, zero, zero + D, L0 / 4 - 1e-9) >= 0
        best = min_sausage_diameter(two, cuts, zero, zero + D)
        if best >= 0:
            out[:, 3:] += (best, best * best, 1)
        for a, G in enumerate(Gs):
            thr = L0 / (15 * G)
            out[a, 0] += greedy_sausages(two, cuts, zero, zero + D, thr) >= 0
            out[a, 1] += _any_close(pieces[:G])
            out[a, 2] += quarter
    return out


def _any_close(pieces: list) -> bool:
    """Some two pieces at l-inf distance <= 1."""
    trees = [cKDTree(pc, balanced_tree=False, compact_nodes=False) if len(pc) else None
             for pc in pieces]
    for i in range(len(pieces)):
        for j in range(i + 1, len(pieces)):
            if trees[i] is None or trees[j] is None:
                continue
            if trees[i].count_neighbors(trees[j], 1.5, p=np.inf) > 0:
                return True
    return False


def run_sausage_stats(cfg: ExperimentConfig) -> Report:
    """Per (L0, G): frequency that good cut-times exist (diameters at most
    L0/(15G), last cut after the exit time D), the same with the weaker
    diameter bound < L0/4, and frequency that G walks come within l-inf
    distance 1 inside C^4."""
    tasks = [(s, c, n) for s in range(len(cfg.L0_grid)) for c, n in cfg.chunks()]
    res = _map_chunks(partial(_sausage_chunk, cfg), cfg, tasks)
    rows = []
    for s, L0 in enumerate(cfg.L0_grid):
        tot = _sum([r for t, r in zip(tasks, res) if t[0] == s])
        for a, G in enumerate(cfg.G_grid):
            ps, pc, pq = tot[a, :3] / cfg.replicas
            k = max(int(tot[a, 5]), 1)
            mean = tot[a, 3] / k
            var = max(tot[a, 4] / k - mean * mean, 0.0)
            rows.append({"L0": L0, "G": G, "replicas": cfg.replicas,
                         "success": int(tot[a, 0]), "p_success": ps,
                         "se_success": float(binomial_se(ps, cfg.replicas)),
                         "close": int(tot[a, 1]), "p_close": pc,
                         "se_close": float(binomial_se(pc, cfg.replicas)),
                         "success_quarter": int(tot[a, 2]), "p_success_quarter": pq,
                         "se_success_quarter": float(binomial_se(pq, cfg.replicas)),
                         "mean_min_diam_over_L0": mean / L0,
                         "se_min_diam_over_L0": math.sqrt(var / k) / L0})
    meta = _meta(cfg, asymptotic_regime=ScaleParams(cfg.L, 1).asymptotic_regime,
                 low_dimension=cfg.d < 5)
    return Report("sausage-stats", rows, meta)


# ------------------------------------------------------------------ ubiquity


def catalog_sets(box: Box, gamma: float) -> dict:
    """Connected test sets of l-inf diameter >= gamma (side - 1) inside the
    window: axis segments through the centre, their union, and a square in
    the first coordinate plane."""
    d = box.d
    side = box.shape[0]
    ln = max(1, math.ceil(gamma * (side - 1)))
    c = np.array([(lo + hi) // 2 for lo, hi in zip(box.lo, box.hi)])
    a = max(int(box.lo[0]), int(c[0]) - ln // 2)
    a = min(a, box.hi[0] - 1 - ln)
    out = {}
    t = np.arange(ln + 1)
    cross = []
    for k in range(d):
        pts = np.repeat(c[None, :], ln + 1, axis=0)
        pts[:, k] = a + t
        out[f"segment{k}"] = pts
        cross.append(pts)
    out["cross"] = np.concatenate(cross)
    g = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
    sq = np.repeat(c[None, :], len(g), axis=0)
    sq[:, 0] = a + g[:, 0]
    sq[:, 1] = a + g[:, 1]
    out["square"] = sq
    return out


def _ubiquity_chunk(cfg: ExperimentConfig, task) -> np.ndarray:
    setting, c, n = task
    smp, box = _window_sampler(cfg)
    us = np.asarray(cfg.u, dtype=float)
    lo = np.array(box.lo)
    cats = [[(pts - lo) for pts in catalog_sets(box, g).values()] for g in cfg.gamma]
    out = np.zeros((len(us), len(cfg.gamma)), dtype=np.int64)
    gen = cfg.stream(setting, c).generator()
    st = ndimage.generate_binary_structure(cfg.d, 1)
    for _ in range(n):
        mark = smp.run(float(us.max()), gen)[0].reshape(box.shape)
        for a, u in enumerate(us):
            vac = mark > u
            lab, nlab = ndimage.label(vac, structure=st)
            edge = np.zeros(nlab + 1, dtype=np.int64)
            for k in range(cfg.d):
                for sl in (0, -1):
                    f = np.take(lab, sl, axis=k).ravel()
                    edge[np.unique(f)] = 1
            edge[0] = 0
            if not edge.any():
                continue
            sizes = np.bincount(lab.ravel(), minlength=nlab + 1) * edge
            big = lab == int(np.argmax(sizes))
            near = ndimage.binary_dilation(big, structure=st)
            for b, cat in enumerate(cats):
                out[a, b] += all(near[tuple(pts.T)].any() for pts in cat)
    return out


def run_ubiquity(cfg: ExperimentConfig) -> Report:
    """Frequency that the largest vacant cluster touching the window boundary
    comes within l1 distance 1 of every catalog set, per (u, gamma)."""
    tasks = [(0, c, n) for c, n in cfg.chunks()]
    out = _sum(_map_chunks(partial(_ubiquity_chunk, cfg), cfg, tasks))
    rows = []
    for a, u in enumerate(cfg.u):
        for b, g in enumerate(cfg.gamma):
            p = out[a, b] / cfg.replicas
            rows.append({"u": u, "N": cfg.window, "gamma": g, "hits": int(out[a, b]),
                         "replicas": cfg.replicas, "p_hat": p,
                         "se": float(binomial_se(p, cfg.replicas))})
    return Report("ubiquity", rows, _meta(cfg))


def run(cfg: ExperimentConfig) -> Report:
    cfg.validate()
    if cfg.kind == "vacant-law":
        return run_vacant_law(cfg)
    if cfg.kind == "diam-tail":
        return run_diameter_tail(cfg)[0]
    if cfg.kind == "vol-tail":
        return run_volume_tail(cfg)[0]
    if cfg.kind == "sausage-stats":
        return run_sausage_stats(cfg)
    return run_ubiquity(cfg)
