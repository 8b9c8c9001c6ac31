import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from interlace.lattice import Box, SiteSet, boundary
from interlace.potential import (build_green_table, canonical, capacity, equilibrium,
                                 equilibrium_box, green, green_asymptotic, green_detail,
                                 green_quadrature, green_table, hitting_sandwich, orbit_reps)


def test_green_at_origin_matches_watson_closed_form():
    # Watson's integral in closed form for the cubic lattice
    g0 = (math.sqrt(6) / (32 * math.pi ** 3) * math.gamma(1 / 24) * math.gamma(5 / 24)
          * math.gamma(7 / 24) * math.gamma(11 / 24))
    assert abs(green(3, (0, 0, 0)) - g0) < 1e-8


@pytest.mark.parametrize("d", [3, 4, 5])
def test_green_is_harmonic_off_the_origin(d):
    tab = green_table(d, 6)
    eye = np.vstack([np.eye(d, dtype=int), -np.eye(d, dtype=int)])
    for z in orbit_reps(d, 4):
        mean = tab(z + eye).mean()
        expect = tab(z[None])[0] - (1.0 if not z.any() else 0.0)
        assert abs(mean - expect) < 1e-8


@pytest.mark.parametrize("d", [3, 5])
def test_far_field_agrees_with_quadrature(d):
    z = np.array([[0] * (d - 1) + [12], [3] * (d - 1) + [10]])
    q, err = green_quadrature(d, z)
    a = green_asymptotic(d, z)
    r = np.sqrt((z ** 2).sum(axis=1))
    assert np.all(np.abs(q - a) < 10 * r ** (-d - 2))


def test_large_displacement_uses_asymptotics():
    gv = green_detail(5, (0, 0, 0, 0, 400))
    assert gv.method == "asymptotic" and gv.error <= 1e-9


@given(st.lists(st.integers(-6, 6), min_size=3, max_size=3), st.permutations(range(3)))
@settings(max_examples=50, deadline=None)
def test_table_symmetry(z, perm):
    tab = green_table(3, 6)
    z = np.array(z)
    signs = np.where(np.arange(3) % 2 == 0, 1, -1)
    assert tab(z[None])[0] == tab((signs * z[list(perm)])[None])[0]
    assert np.array_equal(canonical(z), np.sort(np.abs(z)))


def test_two_point_capacity():
    tab = green_table(3, 8)
    for x in [(1, 0, 0), (2, 3, 1), (5, 5, 5)]:
        K = SiteSet([(0, 0, 0), x])
        expect = 2 / (tab([[0, 0, 0]])[0] + tab([x])[0])
        assert abs(capacity(K, tab) - expect) < 1e-10


def test_equilibrium_lives_on_the_inner_boundary():
    K = Box.ball((0, 0, 0), 2).sites()
    sol = equilibrium(K)
    inner = boundary(K, "inner")
    assert np.all(sol.measure >= 0)
    assert np.all(sol.measure[~inner.contains(K.points)] == 0)
    assert sol.residual < 1e-9 and sol.n_clamped == 0
    assert abs(sol.normalized.sum() - 1) < 1e-12


@pytest.mark.parametrize("lo,hi", [((0, 0, 0), (4, 4, 4)), ((0, 0, 0), (3, 5, 4)),
                                   ((-1, 0, 2, 0), (2, 4, 4, 3))])
def test_box_orbit_solver_matches_full_solve(lo, hi):
    box = Box(lo, hi)
    a = equilibrium_box(box)
    b = equilibrium(box.sites(), solver_cap=10 ** 6)
    assert abs(a.capacity - b.capacity) < 1e-9
    assert np.allclose(a.measure, b.measure, atol=1e-10)


def test_hitting_sandwich_is_exact_for_a_point():
    K = SiteSet([(0, 0, 0)])
    lo, hi = hitting_sandwich((3, 1, 0), K)
    expect = green(3, (3, 1, 0)) / green(3, (0, 0, 0))
    assert abs(lo - expect) < 1e-12 and abs(hi - expect) < 1e-12
    lo, hi = hitting_sandwich((4, 0, 0), Box.ball((0, 0, 0), 1).sites())
    assert 0 < lo <= hi < 1


def test_table_cache_roundtrip(tmp_path):
    a = build_green_table(3, 4, cache_dir=str(tmp_path))
    b = build_green_table(3, 4, cache_dir=str(tmp_path))
    assert np.array_equal(a.values, b.values) and a.method == b.method
    with pytest.raises(ValueError):
        build_green_table(3, 4, method="nope")
