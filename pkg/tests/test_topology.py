import numpy as np
import pytest

from schmm_lmpc.errors import DomainError, TopologyError
from schmm_lmpc.presets import double_integrator_3d
from schmm_lmpc.topology import (AgentDynamics, Topology, build_compact, build_error_map, build_global,
                                 complete_graph, consensus_error, delta_max, load_graph,
                                 local_consensus_point, random_connected_graph, ring_graph, save_graph)

# three agents, agent 0 linked to both others (a "V" shape)
VEE = Topology.from_edges(3, [(0, 1), (0, 2)])


def scalar_agents(values):
    return [AgentDynamics([[a]], [[b]]) for a, b in values]


def test_topology_basics():
    assert VEE.neighbor_sets == ((0, 1, 2), (0, 1), (0, 2))
    assert VEE.cardinalities.tolist() == [3, 2, 2]
    assert np.all(VEE.laplacian.sum(axis=1) == 0)
    assert np.allclose(VEE.averaging_matrix.sum(axis=1), 1.0)
    assert complete_graph(4).is_complete() and not VEE.is_complete()


@pytest.mark.parametrize("adj", [
    [[0, 1], [0, 0]],                       # not symmetric
    [[1, 1], [1, 0]],                       # self loop
    [[0, 1, 0], [1, 0, 0], [0, 0, 0]],      # disconnected
    [[0, 2], [2, 0]],                       # not 0/1
])
def test_topology_rejects_invalid(adj):
    with pytest.raises(TopologyError):
        Topology(np.array(adj))


def test_graph_file_round_trip(tmp_path):
    g = ring_graph(7, [(0, 3)])
    save_graph(g, tmp_path / "g.graph")
    assert load_graph(tmp_path / "g.graph") == g
    single = Topology.from_edges(1, [])
    save_graph(single, tmp_path / "one.graph")
    assert load_graph(tmp_path / "one.graph").n_agents == 1


def test_graph_file_errors_name_line(tmp_path):
    p = tmp_path / "bad.graph"
    p.write_text("# comment\n0 1\n1 x\n")
    with pytest.raises(TopologyError, match=":3:"):
        load_graph(p)
    p.write_text("0 1\n2 3\n")
    with pytest.raises(TopologyError):
        load_graph(p)


def test_bundled_graphs(data_dir):
    assert load_graph(data_dir / "example1.graph") == complete_graph(9)
    g2 = load_graph(data_dir / "example2.graph")
    assert g2.n_agents == 7 and not g2.is_complete()


def test_build_global_block_order():
    dyn = scalar_agents([(1.0, 2.0), (3.0, 4.0), (5.0, 6.0)])
    A, B = build_global(dyn)
    assert np.array_equal(A, np.diag([1.0, 3.0, 5.0]))
    assert np.array_equal(B, np.diag([2.0, 4.0, 6.0]))
    A1, _ = build_global(dyn[:1])
    assert np.array_equal(A1, [[1.0]])
    with pytest.raises(DomainError):
        build_global([AgentDynamics(np.eye(2), np.ones((2, 1))), AgentDynamics([[1.0]], [[1.0]])])


def test_compact_zero_pattern_examples():
    dyn = scalar_agents([(1.0, 10.0), (2.0, 20.0), (3.0, 30.0)])
    A_m, B_m = build_global(dyn)
    c1 = build_compact(VEE, A_m, B_m, 1)
    assert np.array_equal(c1.A_c, np.diag([1.0, 2.0, 0.0]))
    assert np.array_equal(c1.B_c, np.diag([10.0, 20.0, 0.0]))
    c0 = build_compact(VEE, A_m, B_m, 0)
    assert np.array_equal(c0.A_c, A_m) and np.array_equal(c0.B_c, B_m)


@pytest.mark.parametrize("seed", range(20))
def test_compact_pattern_matches_neighbor_sets(seed):
    rng = np.random.default_rng(seed)
    N = int(rng.integers(2, 8))
    g = random_connected_graph(N, rng)
    A, B, tr = double_integrator_3d(0.01)
    A_m, B_m = build_global([AgentDynamics(A, B, tr)] * N)
    for i in range(N):
        c = build_compact(g, A_m, B_m, i)
        for j in range(N):
            inside = j in g.neighbor_sets[i]
            assert np.any(c.A_c[c.state_block(j)] != 0) == inside
            assert np.any(c.B_c[:, c.input_block(j)] != 0) == inside


def test_error_map_row_for_hub_agent():
    A_e = build_error_map(VEE, 0, 1, 0.99)
    assert np.allclose(A_e[0], [1 - 0.99 / 3, -0.99 / 3, -0.99 / 3])
    assert np.allclose(A_e[1], [-0.99 / 2, 1 - 0.99 / 2, 0.0])


def test_error_map_rejects_theta_bounds():
    for theta in (0.0, 1.0, -0.2):
        with pytest.raises(DomainError):
            build_error_map(VEE, 0, 2, theta)


@pytest.mark.parametrize("seed", range(30))
def test_error_map_invertible_on_random_graphs(seed):
    rng = np.random.default_rng(1000 + seed)
    g = random_connected_graph(int(rng.integers(1, 13)), rng, p_extra=float(rng.uniform(0, 0.6)))
    theta = float(rng.uniform(0.01, 0.999))
    s = np.linalg.svd(build_error_map(g, 0, 2, theta), compute_uv=False)
    assert s.min() > 0


def test_error_map_on_complete_graph_tracks_consensus_error():
    rng = np.random.default_rng(0)
    N, n, theta = 5, 3, 0.9
    X = rng.normal(size=(N, n))
    E = (build_error_map(complete_graph(N), 0, n, theta) @ X.ravel()).reshape(N, n)
    mean = X.mean(axis=0)
    for i in range(N):
        assert np.allclose(E[i], theta * (X[i] - mean) + (1 - theta) * X[i])


def test_local_consensus_point_examples():
    v = np.array([1.0, -2.0])
    assert np.allclose(local_consensus_point(v, [v, v]), v)
    assert np.allclose(local_consensus_point([0.0], [[3.0], [6.0]]), [3.0])
    assert np.allclose(local_consensus_point(v, []), v)
    assert np.allclose(consensus_error(v, v), 0.0)


def test_delta_max():
    assert delta_max([[0.0, 0.0], [3.0, 4.0]]) == pytest.approx(5.0)
    assert delta_max([[1.0, 1.0]] * 4) == 0.0
    d = np.random.default_rng(1).normal(size=(5, 6))
    assert delta_max(d, [0, 1, 2]) == delta_max(d[::-1], [0, 1, 2]) >= 0
    assert delta_max(d[:, :3]) == delta_max(d, (0, 1, 2))
