import numpy as np
import pytest

from pdgsim import topology
from pdgsim.topology import Graph, graph_preset, metropolis_weights, mixing_streams, \
    parse_edge_list, sample_mixing_matrix, spectral_data, validate_mixing_matrix, \
    validate_weight_matrix


def make_random_graph(m, rng):
    # random spanning tree plus a few extra edges
    edges = set()
    order = [int(v) for v in rng.permutation(m) + 1]
    for a, b in zip(order[:-1], order[1:]):
        edges.add((min(a, b), max(a, b)))
    for _ in range(m):
        i, j = (int(v) for v in rng.integers(1, m + 1, size=2))
        if i != j:
            edges.add((min(i, j), max(i, j)))
    return Graph(m, tuple(edges))


def test_metropolis_complete_two_agents():
    W = metropolis_weights(graph_preset("complete", 2))
    assert np.allclose(W, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)
    assert spectral_data(W).eta == pytest.approx(0.0, abs=1e-12)


def test_metropolis_path_three_exact_entries():
    # degrees (1, 2, 1): off-diagonal weights 1/3, diagonal fills to one
    W = metropolis_weights(graph_preset("path", 3))
    expected = np.array([[2, 1, 0], [1, 1, 1], [0, 1, 2]]) / 3.0
    assert np.abs(W - expected).max() < 1e-15


def test_metropolis_single_agent():
    W = metropolis_weights(graph_preset("path", 1))
    assert W.shape == (1, 1) and W[0, 0] == 1.0
    sd = spectral_data(W)
    assert sd.eta == 0.0 and sd.r == 0.0


def test_path_three_spectrum():
    # symmetric W with eigenvalues {1, 2/3, 0}: det = 0, trace = 5/3,
    # so eta = 2/3 and r = 1 - 0 = 1
    W = metropolis_weights(graph_preset("path", 3))
    sd = spectral_data(W)
    assert abs(sd.eta - 2.0 / 3.0) < 1e-12
    assert abs(sd.r - 1.0) < 1e-12


def test_complete_two_drift_norm():
    # W - I has eigenvalues 0 and -1
    W = metropolis_weights(graph_preset("complete", 2))
    assert abs(spectral_data(W).r - 1.0) < 1e-12


def test_metropolis_double_stochastic_on_random_graphs():
    rng = np.random.default_rng(0)
    for m in (2, 3, 5, 8, 13):
        graph = make_random_graph(m, rng)
        W = metropolis_weights(graph)
        assert np.abs(W.sum(axis=0) - 1).max() <= 1e-12
        assert np.abs(W.sum(axis=1) - 1).max() <= 1e-12
        assert np.abs(W - W.T).max() == 0.0
        assert spectral_data(W).eta < 1.0


def test_spectral_data_permutation_equivariant():
    rng = np.random.default_rng(1)
    graph = make_random_graph(7, rng)
    W = metropolis_weights(graph)
    base = spectral_data(W)
    for _ in range(5):
        perm = rng.permutation(7)
        Wp = W[np.ix_(perm, perm)]
        sd = spectral_data(Wp)
        assert abs(sd.eta - base.eta) < 1e-12
        assert abs(sd.r - base.r) < 1e-12


def test_disconnected_graph_rejected():
    with pytest.raises(ValueError, match="not connected"):
        Graph(4, ((1, 2), (3, 4)))


def test_graph_validation():
    with pytest.raises(ValueError, match="out of range"):
        Graph(3, ((1, 4),))
    with pytest.raises(ValueError, match="self-loop"):
        Graph(3, ((1, 1), (1, 2), (2, 3)))
    with pytest.raises(ValueError, match="duplicate"):
        Graph(3, ((1, 2), (2, 1), (2, 3)))


def test_weight_matrix_validation_rejects_bad_support():
    graph = graph_preset("path", 3)
    W = metropolis_weights(graph_preset("complete", 3))
    with pytest.raises(ValueError, match="support"):
        validate_weight_matrix(W, graph)


def test_identity_is_valid_mixing_matrix():
    graph = graph_preset("ring", 4)
    validate_mixing_matrix(np.eye(4), graph)


def test_sampled_mixing_matrix_invariants():
    graph = graph_preset("complete", 3)
    B = sample_mixing_matrix(graph, mixing_streams(3, seed=7))
    assert np.abs(B.sum(axis=0) - 1).max() <= 1e-15
    assert np.all(B > 0)  # complete graph: every entry in some neighborhood


def test_sampled_mixing_matrix_support_on_path():
    graph = graph_preset("path", 3)
    B = sample_mixing_matrix(graph, mixing_streams(3, seed=7))
    # column 1 covers agents {1, 2} only
    assert B[2, 0] == 0.0
    assert np.count_nonzero(B[:, 0]) == 2
    validate_mixing_matrix(B, graph)


def test_mixing_column_locality():
    # column j depends only on agent j's stream
    graph = graph_preset("ring", 4)
    a = sample_mixing_matrix(graph, mixing_streams(4, seed=1))
    streams = mixing_streams(4, seed=1)
    streams[0] = np.random.default_rng(999)  # corrupt another agent's stream
    b = sample_mixing_matrix(graph, streams)
    assert np.array_equal(a[:, 1], b[:, 1])
    assert not np.array_equal(a[:, 0], b[:, 0])


def test_mixing_sampling_deterministic():
    graph = graph_preset("net5")
    a = [sample_mixing_matrix(graph, s) for s in [mixing_streams(5, seed=3)] for _ in range(4)]
    b = [sample_mixing_matrix(graph, s) for s in [mixing_streams(5, seed=3)] for _ in range(4)]
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_mixing_support_never_exceeds_weight_support():
    rng = np.random.default_rng(5)
    graph = make_random_graph(6, rng)
    W = metropolis_weights(graph)
    streams = mixing_streams(6, seed=11)
    for _ in range(50):
        B = sample_mixing_matrix(graph, streams)
        assert np.all((B > 0) <= (W > 0))


def test_presets():
    assert len(graph_preset("ring", 5).edges) == 5
    assert len(graph_preset("star", 5).edges) == 4
    assert len(graph_preset("complete", 5).edges) == 10
    net5 = graph_preset("net5")
    assert net5.m == 5
    with pytest.raises(ValueError, match="unknown preset"):
        graph_preset("torus", 4)


def test_edge_list_roundtrip(tmp_path):
    text = "# demo\n1 2\n2 3\n"
    graph = parse_edge_list(text)
    assert graph.m == 3 and graph.edges == ((1, 2), (2, 3))
    path = tmp_path / "g.edges"
    path.write_text(text)
    assert topology.load_edge_list(path).edges == graph.edges
    with pytest.raises(ValueError, match="expected"):
        parse_edge_list("1 2 3\n")
    with pytest.raises(ValueError, match="empty"):
        parse_edge_list("# nothing\n")


def test_row_column_sampling_for_ab():
    graph = graph_preset("path", 3)
    streams = topology.row_column_streams(3, seed=2)
    R = topology.sample_row_stochastic(graph, streams)
    C = topology.sample_column_stochastic(graph, streams)
    assert np.abs(R.sum(axis=1) - 1).max() <= 1e-15
    assert np.abs(C.sum(axis=0) - 1).max() <= 1e-15
    assert R[0, 2] == 0.0 and C[2, 0] == 0.0
