from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tugwar import boards
from tugwar.game import (GameError, build_game, discrete_inf_laplacian, dp_operator, from_csr,
                         game_from_json, inf_laplacian_all, local_variation, residual_vector)


def test_path_edges_and_terminals():
    g = boards.path_graph(4)
    assert g.n == 5
    assert list(np.flatnonzero(g.terminal)) == [0, 4]
    assert sorted(g.neighbors(2).tolist()) == [1, 3]
    assert len(g.edges) == 8


def test_empty_terminal_set_rejected():
    with pytest.raises(GameError, match="empty terminal"):
        build_game([0, 1], [(0, 1)], [], {})


def test_disconnected_rejected():
    with pytest.raises(GameError, match="disconnected"):
        build_game([0, 1, 2, 3], [(0, 1), (2, 3)], [0], {0: 0.0})


def test_asymmetric_directed_listing_rejected():
    with pytest.raises(GameError, match="asymmetric"):
        build_game([0, 1, 2], [(0, 1), (1, 0), (1, 2)], [0], {0: 0.0}, edges_directed=True)


def test_payoff_domain_checks():
    with pytest.raises(GameError):
        build_game([0, 1], [(0, 1)], [0], {0: 0.0, 1: 1.0})
    with pytest.raises(GameError):
        build_game([0, 1], [(0, 1)], [0], {0: 0.0}, {0: 1.0})
    with pytest.raises(GameError):
        build_game([0, 1], [(0, 1)], [0], {0: float("inf")})
    with pytest.raises(GameError):
        build_game([0, 1], [(0, 5)], [0], {0: 0.0})


def test_from_csr_validation():
    with pytest.raises(GameError):
        from_csr([0, 1, 2], [1, 0], [False, False], [0, 0])
    with pytest.raises(GameError):
        from_csr([0, 1, 1], [1], [True, False], [0, 0])


def test_json_round_trip():
    g = boards.triangle()
    doc = json.dumps(g.to_json())
    h = game_from_json(doc)
    assert h.labels == g.labels
    assert np.array_equal(h.terminal, g.terminal)
    assert np.allclose(h.f, g.f)
    assert sorted(map(tuple, h.edges.tolist())) == sorted(map(tuple, g.edges.tolist()))


def test_json_unknown_field_rejected():
    with pytest.raises(GameError):
        game_from_json({"states": [0, 1], "edges": [[0, 1]], "terminals": [0], "F": {"0": 0},
                        "colour": "red"})


def test_laplacian_on_path():
    g = boards.path_graph(4)
    u = np.array([0.0, 0.0, 0.0, 0.0, 1.0])
    assert discrete_inf_laplacian(g, u, 3) == 1.0
    assert discrete_inf_laplacian(g, u, 1) == 0.0
    with pytest.raises(GameError):
        discrete_inf_laplacian(g, u, 0)
    lap = inf_laplacian_all(g, u)
    assert lap[3] == 1.0 and lap[2] == 0.0


def test_local_variation_and_residual_of_linear_field():
    g = boards.path_graph(4)
    u = np.linspace(0, 1, 5)
    assert np.allclose(local_variation(g, u)[1:4], 0.25)
    assert residual_vector(g, u).max() < 1e-15


def test_dp_operator_one_step_from_zero_off_terminals():
    g = boards.path_graph(4)
    out = dp_operator(g, np.array([0.0, 0.0, 0.0, 0.0, 1.0]))
    assert np.allclose(out.values, [0, 0, 0, 0.5, 1])


def test_dp_operator_triangle_fixed_point():
    g = boards.triangle()
    u = np.array([0.0, -2.0, 0.0])
    assert np.allclose(dp_operator(g, u).values, u)
    u = np.array([0.0, 0.0, 2.0])
    assert np.allclose(dp_operator(g, u).values, u)


def test_dp_operator_rejects_infinite():
    g = boards.path_graph(3)
    with pytest.raises(GameError):
        dp_operator(g, np.array([0.0, np.inf, 0.0, 1.0]))


def test_field_csv():
    g = boards.path_graph(2)
    body = dp_operator(g, np.array([0.0, 0.0, 1.0])).to_csv()
    assert body.splitlines()[0].startswith("state")
    assert len(body.splitlines()) == 4


_graphs = st.integers(0, 10_000).map(lambda s: boards.random_connected_graph(np.random.default_rng(s), 20, False))


@settings(max_examples=40, deadline=None)
@given(_graphs, st.integers(0, 10_000))
def test_dp_operator_monotone(g, seed):
    rng = np.random.default_rng(seed)
    u = np.where(g.terminal, g.F, rng.normal(size=g.n))
    v = u + np.where(g.terminal, 0.0, rng.random(g.n))
    assert np.all(dp_operator(g, u).values <= dp_operator(g, v).values + 1e-12)


@settings(max_examples=40, deadline=None)
@given(_graphs, st.integers(0, 10_000), st.floats(-5, 5))
def test_dp_operator_commutes_with_constants(g, seed, c):
    rng = np.random.default_rng(seed)
    u = np.where(g.terminal, g.F, rng.normal(size=g.n))
    shifted = g.with_payoffs(F=g.F + c)
    a = dp_operator(shifted, u + c).values
    b = dp_operator(g, u).values + c
    assert np.allclose(a, b, atol=1e-10)
