from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from tugwar import boards, continuum, length_space as ls
from tugwar.game import GameError
from tugwar.simulator import estimate_value, make_strategy


@pytest.fixture(scope="module")
def segment():
    return ls.build_complex(ls.SpaceSpec("segment"), 0.1)


@pytest.fixture(scope="module")
def small_disk():
    return ls.build_complex(ls.SpaceSpec("euclidean_ball", spacing=0.04), 0.16)


def _hops(c, source):
    A = csr_matrix((np.ones(len(c.indices)), c.indices, c.indptr), shape=(c.n, c.n))
    return shortest_path(A, unweighted=True, indices=source)


def test_d_eps_examples():
    assert ls.d_eps(0.5, 1.0) == 1.0
    assert ls.d_eps(1.0, 1.0) == 2.0
    assert ls.d_eps(0.7, 1.0, i=3, j=3) == 0.0
    assert ls.d_eps(0.0, 1.0) == 0.0
    assert ls.d_eps(0.25, 0.1) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        ls.d_eps(1.0, 0.0)


@given(st.floats(0, 50), st.floats(0.01, 5))
def test_eps_hops_brackets_distance(d, eps):
    m = int(ls.eps_hops(d, eps))
    assert eps * m > d
    assert eps * (m - 1) <= d


def test_hop_count_oracle_on_fine_segment():
    # spacing 0.001 and eps 0.1: the longest strict step is 99 grid units, so
    # the cloud's hop count from 0 to k*0.001 is ceil(k/99); continuum hops
    # are 1 + floor(d/eps) and may differ by one at this resolution
    eps, sp = 0.1, 0.001
    c = ls.build_complex(ls.SpaceSpec("segment", spacing=sp), eps)
    hops = _hops(c, 0)
    k = np.arange(c.n)
    assert np.array_equal(hops[1:], np.ceil(k[1:] / 99))
    de = ls.d_eps(c.points[:, 0], eps, np.zeros(c.n, int), k)
    half = c.points[:, 0] <= 0.5
    assert np.all(eps * hops >= de - 1e-12)
    assert np.all(eps * hops[half] <= de[half] + eps + 1e-12)


def test_adjacency_is_strict_and_symmetric(small_disk):
    c = small_disk
    src = np.repeat(np.arange(c.n), np.diff(c.indptr))
    d = c.dist(src, c.indices)
    assert np.all(d < c.eps)
    assert not np.any(src == c.indices)
    pairs = set(zip(src.tolist(), c.indices.tolist()))
    assert all((b, a) in pairs for a, b in pairs)


def test_adjacency_guard_excludes_exact_eps_pairs(segment):
    # spacing eps/4 makes four grid steps land on eps up to rounding
    x = segment.points[:, 0]
    i = int(np.argmin(np.abs(x - 0.3)))
    nb = segment.indices[segment.indptr[i]:segment.indptr[i + 1]]
    assert (i + 3) in nb and (i + 4) not in nb


def test_resolution_recorded(small_disk):
    assert small_disk.h <= small_disk.eps / 2
    assert small_disk.terminal.any()


def test_disk_point_count():
    c = continuum.disk_complex(0.02, 0.08)
    interior = int((~c.terminal).sum())
    assert abs(interior - math.pi / 0.02 ** 2) / (math.pi / 0.02 ** 2) < 0.01
    assert 7700 <= c.n <= 8200


def test_spacing_too_coarse():
    with pytest.raises(GameError, match="coarse"):
        ls.build_complex(ls.SpaceSpec("segment", spacing=0.3), 0.5)


def test_empty_terminal_band():
    with pytest.raises(GameError, match="terminal"):
        ls.build_complex(ls.SpaceSpec("custom", spacing=0.1, points=[[0.0], [0.1]], terminal=[False, False]), 0.5)


def test_l_shape_terminals_are_far_endpoints():
    c = ls.build_complex(ls.SpaceSpec("l_shape"), 0.1)
    assert sorted(map(tuple, c.points[c.terminal].tolist())) == [(0.0, 1.0), (1.0, 0.0)]
    assert c.metric == "euclidean"


def test_comb_space_metric_and_terminals():
    c = ls.build_complex(ls.SpaceSpec("comb", spacing=0.25, ells=[2, 3, 4]), 1.0)
    tips = c.points[c.terminal]
    assert {(0.0, 2.0), (1.0, 3.0), (2.0, 4.0), (3.0, 0.0)} == set(map(tuple, tips.tolist()))
    a = int(np.flatnonzero((c.points[:, 0] == 0) & (c.points[:, 1] == 1.0))[0])
    b = int(np.flatnonzero((c.points[:, 0] == 1) & (c.points[:, 1] == 1.0))[0])
    assert c.dist(a, b) == pytest.approx(3.0)
    assert c.dist(a, a) == 0.0


def test_space_spec_json_round_trip():
    spec = ls.SpaceSpec("annulus", spacing=0.05, radius=1.0, inner_radius=0.4)
    again = ls.SpaceSpec.from_json(json.dumps(spec.to_json()))
    assert again == spec
    with pytest.raises(GameError):
        ls.SpaceSpec.from_json({"kind": "segment", "colour": "red"})


def test_segment_value_within_eps(segment):
    rep = ls.solve_u_eps(segment, lambda P: P[:, 0])
    assert np.max(np.abs(rep.values - segment.points[:, 0])) <= segment.eps


def test_constant_data_gives_constant_value(small_disk):
    rep = ls.solve_u_eps(small_disk, 0.7, method="iterate_below")
    assert np.allclose(rep.values, 0.7, atol=1e-9)


def test_running_payoff_ladder_approaches_continuum_value():
    # Lap_inf u = -2 on the unit disk with zero data is solved by 1 - r^2
    vals = []
    for eps in (0.4, 0.2, 0.1):
        c = ls.build_complex(ls.SpaceSpec("euclidean_ball", spacing=eps / 4), eps)
        rep = ls.solve_u_eps(c, 0.0, 1.0)
        vals.append(rep.values[int(np.argmin(np.linalg.norm(c.points, axis=1)))])
    gaps = [abs(v - 1.0) for v in vals]
    assert gaps[0] > gaps[1] > gaps[2]


def test_favored_sandwich_and_constants(segment):
    F = lambda P: P[:, 0]
    u = ls.solve_u_eps(segment, F).values
    v = ls.favored_value(segment, F, side="II")
    w = ls.favored_value(segment, F, side="I")
    assert v.converged and w.converged
    assert np.all(v.values <= u + 2e-10) and np.all(u <= w.values + 2e-10)
    assert ls.favored_residual(segment, v.values, F, side="II") <= 1e-9
    assert np.max(w.values - v.values) <= 2 * segment.eps
    const = ls.favored_value(segment, 0.3, side="II").values
    assert np.allclose(const, 0.3)
    with pytest.raises(ValueError):
        ls.favored_value(segment, F, side="III")


def test_mcshane_whitney_on_segment(segment):
    lo, hi = ls.mcshane_whitney(segment, lambda P: P[:, 0])
    x = segment.points[:, 0]
    assert np.allclose(lo.values, x) and np.allclose(hi.values, x)


def test_mcshane_whitney_singleton():
    c = ls.build_complex(ls.SpaceSpec("custom", spacing=0.05, points=np.linspace(0, 1, 21)[:, None],
                                      terminal=np.r_[True, np.zeros(20, bool)]), 0.2)
    lo, hi = ls.mcshane_whitney(c, 2.5)
    assert np.all(lo.values == 2.5) and np.all(hi.values == 2.5)


def test_mcshane_whitney_order_and_lipschitz(small_disk):
    F = continuum.cap_data(0.5)
    lo, hi = ls.mcshane_whitney(small_disk, F)
    assert np.all(lo.values <= hi.values + 1e-12)
    L = ls.lip_on(small_disk, small_disk.terminal_idx, small_disk.field_values(F))
    every = np.arange(small_disk.n)
    for fld in (lo, hi):
        assert ls.lip_on(small_disk, every, fld.values) == pytest.approx(L, rel=0.1)


def test_lip_on_linear_field(segment):
    x = segment.points[:, 0]
    assert ls.lip_on(segment, np.arange(segment.n), 3 * x) == pytest.approx(3.0)


def test_am_audit_linear_segment(segment):
    u = segment.points[:, 0]
    mid = int(np.argmin(np.abs(u - 0.5)))
    rep = ls.am_audit(segment, u, [(mid, 0.2)], metric="d")
    assert rep.regions[0].ratio == pytest.approx(1.0)
    assert rep.passed


def test_am_audit_rejects_terminal_region(segment):
    with pytest.raises(GameError):
        ls.am_audit(segment, segment.points[:, 0], [(0, 0.2)])


def test_am_audit_disk_harmonic_passes():
    c = ls.build_complex(ls.SpaceSpec("euclidean_ball", spacing=0.025), 0.1)
    rep_u = ls.solve_u_eps(c, continuum.cap_data(0.5))
    regions = ls.ball_regions(c, 50, np.random.default_rng(0))
    audit = ls.am_audit(c, rep_u.values, regions)
    assert len(regions) == 50
    assert audit.passed, audit.worst_ratio


def test_am_audit_flags_l_shape():
    c = ls.build_complex(ls.SpaceSpec("l_shape"), 0.05)
    u = ls.solve_u_eps(c, lambda P: np.where(P[:, 1] > 0.5, 1.0, 0.0)).values
    P = c.points
    region = ((P[:, 0] == 0) & (P[:, 1] < 0.8)) | ((P[:, 1] == 0) & (P[:, 0] < 0.1))
    rep = ls.am_audit(c, u, [region])
    assert not rep.passed
    assert rep.worst_ratio > 1.2


def test_uniform_lipschitz_bound_holds(small_disk):
    F = continuum.cap_data(0.5)
    u = ls.solve_u_eps(small_disk, F, 1.0).values
    L = ls.uniform_lipschitz_constant(small_disk, F, 1.0)
    rng = np.random.default_rng(0)
    i, j = rng.integers(0, small_disk.n, (2, 4000))
    de = small_disk.d_eps(i, j)
    assert np.all(np.abs(u[i] - u[j]) <= L * de + 1e-12)


def test_pull_toward_payoff_bound(small_disk):
    F = continuum.cap_data(0.5)
    g = small_disk.game(F)
    u = ls.solve_u_eps(small_disk, F).values
    y = int(small_disk.terminal_idx[np.argmax(g.F[small_disk.terminal_idx])])
    x = int(np.argmin(np.linalg.norm(small_disk.points, axis=1)))
    est = estimate_value(g, make_strategy("pull_toward", target=y), make_strategy("greedy_min", field=u),
                         x, trials=2000, seed=0)
    lip = ls.lip_on(small_disk, small_disk.terminal_idx, g.F)
    bound = g.F[y] - 2 * small_disk.eps * lip - lip * small_disk.d_eps(x, y)
    assert est.termination_rate == 1.0
    assert est.mean >= bound - 3 * est.std_err


def test_convergence_study_exact_and_constants():
    tab = ls.convergence_study(ls.SpaceSpec("segment"), lambda P: P[:, 0], eps_ladder=(0.2, 0.1, 0.05),
                               exact=lambda P: P[:, 0])
    assert all(d <= 2 * e for d, e in zip(tab.sup_diff, tab.eps))
    assert tab.to_csv().splitlines()[0] == "eps,sup_diff,runtime"
    flat = ls.convergence_study(ls.SpaceSpec("segment"), 0.4, eps_ladder=(0.2, 0.1))
    assert flat.sup_diff[1] == 0.0
    with pytest.raises(GameError):
        ls.convergence_study(ls.SpaceSpec("segment"), 0.4, eps_ladder=(0.2, 0.15))


def test_epsilon_game_has_self_loops(segment):
    g = segment.game(lambda P: P[:, 0])
    assert all(g.is_neighbor(i, i) for i in range(g.n))
    assert np.allclose(segment.game(0.0, 2.0).f[~segment.terminal], 2.0 * segment.eps ** 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_d_eps_metric_on_random_triples(seed):
    c = ls.build_complex(ls.SpaceSpec("annulus", spacing=0.05), 0.2)
    rng = np.random.default_rng(seed)
    i, j, k = rng.integers(0, c.n, (3, 200))
    dij, djk, dik = c.d_eps(i, j), c.d_eps(j, k), c.d_eps(i, k)
    assert np.all(dik <= dij + djk + 1e-12)
    d = c.dist(i, j)
    assert np.all(d <= dij + 1e-12) and np.all(dij <= d + c.eps + 1e-12)
