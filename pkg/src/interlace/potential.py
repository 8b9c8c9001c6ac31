"""Potential theory of the simple random walk: Green function, equilibrium
measure, capacity and hitting-probability bounds.

The Green function is evaluated deterministically.  Near the origin it is a
time integral of the continuous-time heat kernel,

    g(z) = int_0^inf prod_j exp(-t/d) I_{z_j}(t/d) dt,

computed by the trapezoid rule in log-time with an Euler-Maclaurin endpoint
correction and an analytic tail.  Farther out it comes from a Dirichlet
problem on a cube whose boundary values are the two-term far-field expansion

    g(z) ~ a_d |z|^{2-d} + a_d d(d-2)/24 ((d+2) sum z_j^4/|z|^4 - 3) |z|^{-d}.
"""
from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numba import njit
from scipy.special import ive

from .lattice import Box, SiteSet, boundary, check_dim, diameter, encode

QUAD_MAX = 64
SMIN = -32.0
TMAX = 1e8
H0 = 0.2
H_MIN = 0.0125
DEFAULT_TOL = 1e-10
SOLVER_CAP = 10_000
CACHE_VERSION = 1


class GreenAccuracyError(RuntimeError):
    def __init__(self, msg, estimate, bound):
        super().__init__(f"{msg} (best estimate {estimate!r}, error bound {bound:.3g})")
        self.estimate = estimate
        self.bound = bound


class EquilibriumError(RuntimeError):
    def __init__(self, msg, condition=None):
        super().__init__(msg if condition is None else f"{msg} (condition estimate {condition:.3g})")
        self.condition = condition


def canonical(z) -> np.ndarray:
    """Representative of the orbit of z under coordinate signs and permutations."""
    return np.sort(np.abs(np.asarray(z, dtype=np.int64)), axis=-1)


# ------------------------------------------------------------------- far field


def leading_constant(d: int) -> float:
    return d / 2 * math.gamma(d / 2 - 1) * math.pi ** (-d / 2)


def green_asymptotic(d: int, zs) -> np.ndarray:
    """Two-term far-field expansion (not valid at z = 0)."""
    z = np.atleast_2d(np.asarray(zs, dtype=float))
    r2 = (z**2).sum(axis=1)
    r = np.sqrt(r2)
    s4 = (z**4).sum(axis=1) / r2**2
    a = leading_constant(d)
    return a * r ** (2 - d) + a * d * (d - 2) / 24 * ((d + 2) * s4 - 3) * r ** (-d)


# ------------------------------------------------------------------ quadrature


def _log_grid(h: float) -> np.ndarray:
    smax = math.log(TMAX)
    n = int(math.ceil((smax - SMIN) / h))
    return smax - h * np.arange(n, -1, -1)


def _quadrature(d: int, zs: np.ndarray, h: float, chunk: int = 2048) -> np.ndarray:
    zs = canonical(np.atleast_2d(zs))
    s = _log_grid(h)
    t = np.exp(s)
    nmax = int(zs.max()) if zs.size else 0
    tab = ive(np.arange(nmax + 1)[:, None], t[None, :] / d)
    a = 1 - d / 2
    T = t[-1]
    C = (d / (2 * math.pi)) ** (d / 2)
    out = np.empty(len(zs))
    for lo in range(0, len(zs), chunk):
        z = zs[lo: lo + chunk]
        prod = np.ones((len(z), len(s)))
        for j in range(d):
            prod *= tab[z[:, j]]
        f = prod * t
        trap = h * (f.sum(axis=1) - 0.5 * (f[:, 0] + f[:, -1]))
        # right end is truncated while f ~ C t^a there; f' = a f, f''' = a^3 f
        em = -h**2 / 12 * a * f[:, -1] + h**4 / 720 * a**3 * f[:, -1]
        c1 = ((4.0 * z**2 - 1) * d / 8).sum(axis=1)
        tail = C * (T ** (1 - d / 2) / (d / 2 - 1) - c1 * T ** (-d / 2) / (d / 2))
        head = math.exp(SMIN) * (z.sum(axis=1) == 0)
        out[lo: lo + chunk] = trap + em + tail + head
    return out


def green_quadrature(d: int, zs, tol: float = DEFAULT_TOL):
    """Quadrature values and error estimate (difference of successive step sizes)."""
    zs = np.atleast_2d(np.asarray(zs, dtype=np.int64))
    if zs.size and np.abs(zs).max() > QUAD_MAX:
        raise ValueError(f"quadrature is used only for |z|_inf <= {QUAD_MAX}")
    h = H0
    prev = _quadrature(d, zs, h)
    while True:
        h /= 2
        cur = _quadrature(d, zs, h)
        err = float(np.max(np.abs(cur - prev))) if len(cur) else 0.0
        # quadrature nodes and special functions add a few ulps per term
        err = max(err, 1e-14 * float(np.max(np.abs(cur), initial=0.0)) * 10)
        if err <= tol or h <= H_MIN:
            break
        prev = cur
    if err > tol:
        raise GreenAccuracyError("quadrature tolerance not reached", cur, err)
    return cur, err


# -------------------------------------------------------------- Dirichlet solve


def orbit_reps(d: int, R: int) -> np.ndarray:
    """Nondecreasing tuples in [0, R]^d, lexicographic order."""
    return np.array(list(itertools.combinations_with_replacement(range(R + 1), d)),
                    dtype=np.int64)


def orbit_size(reps: np.ndarray) -> np.ndarray:
    d = reps.shape[1]
    size = np.full(len(reps), math.factorial(d), dtype=np.int64)
    for v in np.unique(reps):
        m = (reps == v).sum(axis=1)
        size //= np.array([math.factorial(k) for k in range(d + 1)])[m]
    return size * 2 ** (reps != 0).sum(axis=1)


def _rep_codes(reps: np.ndarray, base: int) -> np.ndarray:
    d = reps.shape[1]
    w = base ** np.arange(d - 1, -1, -1, dtype=np.int64)
    return reps @ w


def _dirichlet_values(d: int, R: int, rtol: float = 1e-13):
    reps = orbit_reps(d, R)
    n = len(reps)
    base = R + 2
    codes = _rep_codes(reps, base)
    W = orbit_size(reps).astype(float)
    rows, cols = [], []
    for j in range(d):
        for sgn in (1, -1):
            v = reps.copy()
            v[:, j] += sgn
            v = np.sort(np.abs(v), axis=1)
            ok = v[:, -1] <= R
            rows.append(np.nonzero(ok)[0])
            cols.append(np.searchsorted(codes, _rep_codes(v[ok], base)))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    A = sp.coo_matrix((W[rows] / (2 * d), (rows, cols)), shape=(n, n)).tocsr()
    M = (sp.diags(W) - A).tocsr()
    bnd = reps[:, -1] == R
    inner = ~bnd
    vals = np.zeros(n)
    vals[bnd] = green_asymptotic(d, reps[bnd])
    rhs = np.zeros(n)
    rhs[0] = 1.0
    rhs = rhs[inner] - M[inner][:, bnd] @ vals[bnd]
    Mii = M[inner][:, inner]
    x, info = spla.cg(Mii, rhs, rtol=rtol, atol=0.0, maxiter=20 * n)
    if info != 0:
        raise GreenAccuracyError("conjugate gradients did not converge", None, float("inf"))
    vals[inner] = x
    return reps, vals


def green_dirichlet(d: int, zs, R: int | None = None):
    """Dirichlet-solve values at zs and an error estimate from a second solve
    on a cube 1.5 times larger (boundary error decays like R^-(d+2))."""
    zs = canonical(np.atleast_2d(zs))
    zmax = int(zs.max())
    if R is None:
        R = max(2 * zmax + 4, {3: 40, 4: 24, 5: 14, 6: 10, 7: 8}[d])
    R2 = int(math.ceil(1.5 * R))
    out = []
    for rr in (R, R2):
        reps, vals = _dirichlet_values(d, rr)
        idx = np.searchsorted(_rep_codes(reps, rr + 2), _rep_codes(zs, rr + 2))
        out.append(vals[idx])
    diff = np.abs(out[0] - out[1])
    err = diff / (1 - (R / R2) ** (d + 2))
    return out[1], float(err.max()) + 1e-12


# ------------------------------------------------------------------ public API


@lru_cache(maxsize=None)
def asymptotic_error_constant(d: int) -> float:
    """Fitted constant K with |g - two-term| <= K |z|^-(d+2), from quadrature."""
    probes = []
    for r in (24, 32, 48, 64):
        probes += [(r,) + (0,) * (d - 1), (r,) * d, (r, r // 2) + (0,) * (d - 2)]
    z = np.array(probes)
    q, _ = green_quadrature(d, z, tol=1e-12)
    rr = np.sqrt((z.astype(float) ** 2).sum(axis=1))
    return float(np.max(np.abs(q - green_asymptotic(d, z)) * rr ** (d + 2)))


@dataclass(frozen=True)
class GreenValue:
    value: float
    error: float
    method: str


def green_detail(d: int, z, tol: float = DEFAULT_TOL) -> GreenValue:
    d = check_dim(d)
    z = canonical(np.asarray(z).reshape(1, d))
    if z.max() <= QUAD_MAX:
        v, err = green_quadrature(d, z, tol)
        return GreenValue(float(v[0]), err, "quadrature")
    r = float(np.sqrt((z.astype(float) ** 2).sum()))
    bound = 2 * asymptotic_error_constant(d) * r ** (-d - 2)
    est = float(green_asymptotic(d, z)[0])
    if bound <= tol:
        return GreenValue(est, bound, "asymptotic")
    if d == 3 and z.max() <= 200:
        v, err = green_dirichlet(d, z)
        if err <= tol:
            return GreenValue(float(v[0]), err, "dirichlet_solve")
        raise GreenAccuracyError("Dirichlet solve tolerance not reached", float(v[0]), err)
    raise GreenAccuracyError("no method reaches the tolerance", est, bound)


def green(d: int, z, tol: float = DEFAULT_TOL) -> float:
    """g(0, z) to within tol."""
    return green_detail(d, z, tol).value


@dataclass(frozen=True)
class GreenTable:
    """g on all displacements with |z|_inf <= radius, stored per orbit."""

    d: int
    radius: int
    reps: np.ndarray
    values: np.ndarray
    method: str
    accuracy: float
    tol: float = DEFAULT_TOL
    _dense: dict = field(default_factory=dict, repr=False, compare=False)

    def orthant(self) -> np.ndarray:
        """Dense array v[a_1, ..., a_d] = g(a) for a in [0, radius]^d."""
        if "o" not in self._dense:
            R = self.radius
            grid = np.indices((R + 1,) * self.d).reshape(self.d, -1).T
            codes = _rep_codes(np.sort(grid, axis=1), R + 2)
            idx = np.searchsorted(_rep_codes(self.reps, R + 2), codes)
            arr = self.values[idx].reshape((R + 1,) * self.d)
            arr.flags.writeable = False
            self._dense["o"] = arr
        return self._dense["o"]

    def __call__(self, zs) -> np.ndarray:
        z = np.abs(np.atleast_2d(np.asarray(zs, dtype=np.int64)))
        out = np.empty(len(z))
        inside = z.max(axis=1) <= self.radius
        if inside.any():
            c = canonical(z[inside])
            idx = np.searchsorted(_rep_codes(self.reps, self.radius + 2),
                                  _rep_codes(c, self.radius + 2))
            out[inside] = self.values[idx]
        for i in np.nonzero(~inside)[0]:
            out[i] = green(self.d, z[i], max(self.tol, 1e-8))
        return out

    def save(self, path: str):
        np.savez(path, version=CACHE_VERSION, d=self.d, radius=self.radius, tol=self.tol,
                 reps=self.reps, values=self.values, method=self.method,
                 accuracy=self.accuracy)

    @classmethod
    def load(cls, path: str) -> "GreenTable":
        with np.load(path) as f:
            if int(f["version"]) != CACHE_VERSION:
                raise ValueError("stale Green table cache")
            return cls(int(f["d"]), int(f["radius"]), f["reps"], f["values"],
                       str(f["method"]), float(f["accuracy"]), float(f["tol"]))


def cache_name(d: int, radius: int, tol: float) -> str:
    return f"green_v{CACHE_VERSION}_d{d}_r{radius}_tol{tol:.0e}.npz"


def build_green_table(d: int, radius: int, tol: float = DEFAULT_TOL,
                      method: str = "quadrature", cache_dir: str | None = None,
                      rebuild: bool = False) -> GreenTable:
    d = check_dim(d)
    if cache_dir is not None:
        path = os.path.join(cache_dir, cache_name(d, radius, tol))
        if os.path.exists(path) and not rebuild:
            tab = GreenTable.load(path)
            if tab.method == method:
                return tab
    reps = orbit_reps(d, radius)
    if method == "quadrature":
        if radius > QUAD_MAX:
            raise ValueError(f"quadrature tables are limited to radius {QUAD_MAX}")
        values, acc = green_quadrature(d, reps, tol)
    elif method == "dirichlet_solve":
        values, acc = green_dirichlet(d, reps)
    else:
        raise ValueError(f"unknown method {method!r}")
    tab = GreenTable(d, radius, reps, values, method, acc, tol)
    if cache_dir is not None:
        os.makedirs(cache_dir, exist_ok=True)
        tab.save(path)
    return tab


_TABLES: dict = {}


def green_table(d: int, radius: int, tol: float = DEFAULT_TOL) -> GreenTable:
    """Process-wide memoized quadrature table covering at least ``radius``."""
    for (dd, rr, tt), tab in _TABLES.items():
        if dd == d and rr >= radius and tt <= tol:
            return tab
    tab = build_green_table(d, max(radius, 8), tol)
    _TABLES[(d, tab.radius, tol)] = tab
    return tab


# ------------------------------------------------------------------ equilibrium


@dataclass(frozen=True)
class EquilibriumSolution:
    """e_K on the sites of K (aligned with K.keys), capacity and diagnostics."""

    K: SiteSet
    measure: np.ndarray
    capacity: float
    residual: float
    condition: float
    n_clamped: int
    green_accuracy: float

    @property
    def normalized(self) -> np.ndarray:
        return self.measure / self.capacity

    def at(self, x) -> float:
        if x not in self.K:
            return 0.0
        key = encode(np.asarray(x).reshape(1, self.K.d), self.K.d)[0]
        return float(self.measure[np.searchsorted(self.K.keys, key)])

    def as_dict(self) -> dict:
        return {x: float(v) for x, v in zip(self.K, self.measure)}


def green_matrix(pa: np.ndarray, pb: np.ndarray, table: GreenTable, chunk: int = 512) -> np.ndarray:
    """Matrix g(pa_i - pb_j) via the dense orthant table."""
    d = table.d
    R = table.radius
    if len(pa) and len(pb):
        ext = np.maximum(pa.max(0), pb.max(0)) - np.minimum(pa.min(0), pb.min(0))
        if ext.max() > R:
            raise ValueError(f"Green table radius {R} smaller than set extent {int(ext.max())}")
    orth = table.orthant().ravel()
    strides = (R + 1) ** np.arange(d - 1, -1, -1, dtype=np.int64)
    out = np.empty((len(pa), len(pb)))
    for lo in range(0, len(pa), chunk):
        diff = np.abs(pa[lo: lo + chunk, None, :] - pb[None, :, :])
        out[lo: lo + chunk] = orth[diff @ strides]
    return out


def _solve_spd(G: np.ndarray, rhs: np.ndarray):
    try:
        c, low = sla.cho_factor(G, lower=False, check_finite=False)
    except np.linalg.LinAlgError:
        raise EquilibriumError("equilibrium system is not positive definite") from None
    anorm = np.abs(G).sum(axis=0).max()
    rcond, info = sla.lapack.dpocon(c, anorm)
    cond = float("inf") if rcond == 0 else 1.0 / rcond
    if cond > 1e13:
        raise EquilibriumError("equilibrium system is ill-conditioned", cond)
    x = sla.cho_solve((c, low), rhs, check_finite=False)
    return x, cond


def _clamp(e: np.ndarray, residual: float):
    # tiny negatives are roundoff; anything larger signals a conditioning problem
    thresh = 10 * max(residual, 1e-15)
    neg = e < 0
    if (e < -thresh).any():
        raise EquilibriumError(f"equilibrium measure has negative mass {e.min():.3g}")
    e = e.copy()
    e[neg] = 0.0
    return e, int(neg.sum())


def equilibrium(K: SiteSet, table: GreenTable | None = None,
                solver_cap: int = SOLVER_CAP) -> EquilibriumSolution:
    """Solve sum_y g(x - y) e(y) = 1 for x in K.

    e_K vanishes off the inner boundary (a site whose neighbours are all in K
    cannot escape), so the system is solved on the inner boundary only.
    """
    if not K:
        raise ValueError("empty set")
    if table is None:
        table = green_table(K.d, diameter(K))
    inner = boundary(K, "inner")
    if len(inner) > solver_cap:
        if len(K) == K.sbox().volume:
            return equilibrium_box(K.sbox(), table)
        raise EquilibriumError(f"system size {len(inner)} exceeds solver cap {solver_cap}")
    p = inner.points
    G = green_matrix(p, p, table)
    one = np.ones(len(p))
    e, cond = _solve_spd(G, one)
    res = float(np.abs(G @ e - one).max())
    e, nclamp = _clamp(e, res)
    measure = np.zeros(len(K))
    measure[np.searchsorted(K.keys, inner.keys)] = e
    return EquilibriumSolution(K, measure, float(e.sum()), res, cond, nclamp, table.accuracy)


def box_orbits(box: Box, pts: np.ndarray) -> np.ndarray:
    """Canonical labels of sites under the symmetry group of the box
    (reflections of every axis, permutations of axes of equal length)."""
    lo = np.array(box.lo)
    hi = np.array(box.hi)
    c = np.abs(2 * pts - (lo + hi - 1))
    shape = np.array(box.shape)
    out = c.copy()
    for s in np.unique(shape):
        cols = np.nonzero(shape == s)[0]
        out[:, cols] = np.sort(c[:, cols], axis=1)
    return out


@njit(cache=True)
def _orbit_sums(p, orbit_id, rep_pts, orth, strides, n):
    A = np.zeros((rep_pts.shape[0], n))
    d = p.shape[1]
    for r in range(rep_pts.shape[0]):
        for i in range(p.shape[0]):
            f = 0
            for j in range(d):
                f += abs(p[i, j] - rep_pts[r, j]) * strides[j]
            A[r, orbit_id[i]] += orth[f]
    return A


def equilibrium_box(box: Box, table: GreenTable | None = None,
                    solver_cap: int = SOLVER_CAP) -> EquilibriumSolution:
    """Equilibrium measure of a box, solved on orbits of its symmetry group.

    With P the site-to-orbit incidence matrix the reduced system
    P^T G P f = P^T 1 is symmetric positive definite and e = P f.
    """
    K = box.sites()
    if table is None:
        table = green_table(box.d, max(box.shape) - 1)
    shell = boundary(K, "inner")
    p = shell.points
    lab = box_orbits(box, p)
    reps_lab, first, orbit_id = np.unique(lab, axis=0, return_index=True, return_inverse=True)
    orbit_id = orbit_id.ravel()
    n = len(reps_lab)
    if n > solver_cap:
        raise EquilibriumError(f"reduced system size {n} exceeds solver cap {solver_cap}")
    size = np.bincount(orbit_id, minlength=n).astype(float)
    # A[r, s] = sum over the orbit s of g(x_r - y)
    rep_pts = p[first]
    orth = table.orthant().ravel()
    R = table.radius
    if max(box.shape) - 1 > R:
        raise ValueError("Green table radius smaller than the box")
    strides = (R + 1) ** np.arange(box.d - 1, -1, -1, dtype=np.int64)
    A = _orbit_sums(p, orbit_id.astype(np.int64), rep_pts, orth, strides, n)
    B = size[:, None] * A
    B = (B + B.T) / 2
    f, cond = _solve_spd(B, size)
    res = float(np.abs(A @ f - 1).max())
    f, nclamp = _clamp(f, res)
    measure = np.zeros(len(K))
    measure[np.searchsorted(K.keys, shell.keys)] = f[orbit_id]
    return EquilibriumSolution(K, measure, float((f * size).sum()), res, cond, nclamp,
                               table.accuracy)


def capacity(K: SiteSet, table: GreenTable | None = None) -> float:
    return equilibrium(K, table).capacity


def hitting_sandwich(x, K: SiteSet, table: GreenTable | None = None) -> tuple[float, float]:
    """Bounds  sum_y g(x,y) / sup_z sum_y g(z,y) <= P_x[H_K < inf]
    <= sum_y g(x,y) / inf_z sum_y g(z,y), sup and inf over z in K."""
    x = np.asarray(x, dtype=np.int64).reshape(1, K.d)
    if K.contains(x)[0]:
        return 1.0, 1.0
    p = K.points
    if table is None:
        ext = int(max(np.abs(p - x).max(), diameter(K)))
        table = green_table(K.d, ext)
    num = float(table(p - x).sum())
    rows = green_matrix(p, p, table).sum(axis=1)
    return num / rows.max(), num / rows.min()


def sandwich_constants(table: GreenTable) -> tuple[float, float]:
    """Fitted (c_lo, c_hi) with c_lo/(1+|z|^{d-2}) <= g(z) <= c_hi/|z|^{d-2} on the table."""
    z = table.reps.astype(float)
    r = np.sqrt((z**2).sum(axis=1))
    c_lo = float(np.min(table.values * (1 + r ** (table.d - 2))))
    nz = r > 0
    c_hi = float(np.max(table.values[nz] * r[nz] ** (table.d - 2)))
    return c_lo, c_hi
