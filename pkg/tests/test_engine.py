import numpy as np
import pytest

from pdgsim import engine, objectives, schedules, topology
from pdgsim.engine import CHANNEL_X, CHANNEL_Y, DivergenceError, replay_receiver_states, run


def sensing(m, seed=4, scale=0.3, sigma=0.3):
    return objectives.generate_sensing_instance(m, 3, 2, noise_scale=0.1, seed=seed,
                                                sigma=sigma, measurement_scale=scale)


def test_single_agent_is_plain_gradient_descent():
    graph = topology.graph_preset("path", 1)
    problem = objectives.rendezvous_problem([[1.0, -2.0]])
    sched = schedules.make_schedule("constant-homogeneous", 1, lambda_base=0.1)
    for algorithm in ("pdg-ds", "pdg-nds", "dgd"):
        trace = run(algorithm, problem, graph, sched, K=50, seed=3)
        x = trace.states[0][0].copy()
        for _ in range(50):
            x = x - 0.1 * objectives.gradient(problem, 1, x)
        assert np.abs(trace.states[-1][0] - x).max() <= 1e-10


def test_ds_mean_identity_every_round():
    graph = topology.graph_preset("net5")
    sched = schedules.make_schedule("diminishing-heterogeneous", 5, seed=2)
    trace = run("pdg-ds", sensing(5), graph, sched, K=100, seed=7)
    for k in range(100):
        lhs = trace.states[k + 1].mean(axis=0)
        rhs = trace.states[k].mean(axis=0) \
            - (trace.lambdas[k][:, None] * trace.gradients_at(k)).mean(axis=0)
        assert np.abs(lhs - rhs).max() <= 1e-12


def test_ds_stacked_equals_summed_messages():
    graph = topology.graph_preset("net5")
    sched = schedules.make_schedule("diminishing-heterogeneous", 5, seed=2)
    trace = run("pdg-ds", sensing(5), graph, sched, K=40, seed=7)
    defects = replay_receiver_states(trace)
    assert defects["defect_messages_only"] <= 1e-13


def test_ds_identity_mixing_matches_dgd():
    graph = topology.graph_preset("path", 3)
    sched = schedules.make_schedule("constant-homogeneous", 3, lambda_base=0.02)
    a = run("pdg-ds", sensing(3), graph, sched, K=100, seed=7, mixing_kind="identity")
    b = run("dgd", sensing(3), graph, sched, K=100, seed=7)
    assert np.abs(a.states - b.states).max() <= 1e-12


def test_nds_reduces_to_two_step_recursion():
    # identity mixing and a constant homogeneous stepsize: coincides with the
    # difference recursion using (2W, W^2) per coordinate
    graph = topology.graph_preset("path", 3)
    sched = schedules.make_schedule("constant-homogeneous", 3, lambda_base=0.02)
    nds = run("pdg-nds", sensing(3), graph, sched, K=200, seed=7, mixing_kind="identity")
    ext = run("extra", sensing(3), graph, sched, K=200, seed=7, extra_variant="squared")
    assert np.abs(nds.states - ext.states).max() <= 1e-10


def test_nds_tracker_mean_identity():
    graph = topology.graph_preset("net5")
    sched = schedules.make_schedule("nondiminishing-heterogeneous", 5, lambda_base=0.003, seed=2)
    trace = run("pdg-nds", sensing(5), graph, sched, K=80, seed=7)
    y = trace.tracker_states()
    for k in range(trace.K):
        ybar = y[k].mean(axis=0)
        ledger = (trace.lambdas[k][:, None] * trace.gradients_at(k)).mean(axis=0)
        assert np.abs(ybar - ledger).max() <= 1e-12
        # mean state identity
        assert np.abs(trace.states[k + 1].mean(axis=0)
                      - (trace.states[k].mean(axis=0) - ybar)).max() <= 1e-12


def test_nds_tracker_recurrence_consistency():
    graph = topology.graph_preset("net5")
    sched = schedules.make_schedule("nondiminishing-heterogeneous", 5, lambda_base=0.003, seed=2)
    trace = run("pdg-nds", sensing(5), graph, sched, K=60, seed=7)
    y = trace.tracker_states()
    W = trace.W
    for k in range(1, trace.K - 1):
        B = trace.mixing[k - 1]
        step = trace.lambdas[k][:, None] * trace.gradients_at(k) \
            - trace.lambdas[k - 1][:, None] * trace.gradients_at(k - 1)
        recurred = W @ y[k - 1] + B @ step
        assert np.abs(recurred - y[k]).max() <= 1e-10


def test_nds_receiver_replay():
    sched3 = schedules.make_schedule("nondiminishing-heterogeneous", 3, lambda_base=0.003, seed=2)
    path = run("pdg-nds", sensing(3), topology.graph_preset("path", 3), sched3, K=30, seed=7)
    defects = replay_receiver_states(path)
    # two-hop coupling through the squared weights is real on a path
    assert defects["defect_with_two_hop"] <= 1e-12
    assert defects["defect_messages_only"] > 1e-6
    complete = run("pdg-nds", sensing(3), topology.graph_preset("complete", 3), sched3,
                   K=30, seed=7)
    defects = replay_receiver_states(complete)
    # complete graph: the squared weights keep the graph support, messages suffice
    assert defects["defect_messages_only"] <= 1e-12


def test_message_counts_per_round():
    problem = sensing(3)
    graph = topology.graph_preset("path", 3)  # 4 directed edges
    const = schedules.make_schedule("constant-homogeneous", 3, lambda_base=0.01)
    dim = schedules.make_schedule("diminishing-heterogeneous", 3, seed=2)
    for algorithm, sched, per_round in (("pdg-ds", dim, 4), ("pdg-nds", const, 4),
                                        ("dgd", dim, 4), ("extra", const, 4),
                                        ("diging", const, 8), ("ab-tv", const, 8)):
        trace = run(algorithm, problem, graph, sched, K=10, seed=5)
        assert len(trace.messages) == 10 * per_round, algorithm
        for k in range(10):
            assert sum(1 for r in trace.messages if r.k == k) == per_round, algorithm
        for rec in trace.messages:
            assert rec.sender != rec.receiver
            assert (min(rec.sender, rec.receiver), max(rec.sender, rec.receiver)) in graph.edges


def test_snapshot_count_and_initial_range():
    graph = topology.graph_preset("ring", 4)
    sched = schedules.make_schedule("constant-homogeneous", 4, lambda_base=0.01)
    trace = run("dgd", sensing(4), graph, sched, K=17, seed=9)
    assert trace.states.shape == (18, 4, 2)
    assert np.all(np.abs(trace.states[0]) <= 1.0)


def test_run_deterministic():
    graph = topology.graph_preset("net5")
    sched = schedules.make_schedule("diminishing-heterogeneous", 5, seed=2)
    a = run("pdg-ds", sensing(5), graph, sched, K=30, seed=11)
    sched_b = schedules.make_schedule("diminishing-heterogeneous", 5, seed=2)
    b = run("pdg-ds", sensing(5), graph, sched_b, K=30, seed=11)
    assert np.array_equal(a.states, b.states)
    assert len(a.messages) == len(b.messages)
    for ra, rb in zip(a.messages, b.messages):
        assert (ra.k, ra.sender, ra.receiver, ra.channel) == (rb.k, rb.sender, rb.receiver, rb.channel)
        assert np.array_equal(ra.payload, rb.payload)
    c = run("pdg-ds", sensing(5), graph, sched, K=30, seed=12)
    assert not np.array_equal(a.states[1:], c.states[1:])


def test_tracking_conservation_diging_and_ab():
    # column-sum-preserving tracker updates telescope: sum_i y_i^k = sum_i g_i^k
    graph = topology.graph_preset("net5")
    sched = schedules.make_schedule("constant-homogeneous", 5, lambda_base=0.005)
    for algorithm in ("diging", "ab-tv"):
        trace = run(algorithm, sensing(5), graph, sched, K=60, seed=13)
        for k in range(61):
            lhs = trace.trackers[k].sum(axis=0)
            rhs = trace.gradients_at(k).sum(axis=0)
            assert np.abs(lhs - rhs).max() <= 1e-10, (algorithm, k)


def test_diging_first_round_tracking_message():
    graph = topology.graph_preset("path", 3)
    sched = schedules.make_schedule("constant-homogeneous", 3, lambda_base=0.02)
    trace = run("diging", sensing(3), graph, sched, K=3, seed=5)
    g1 = trace.gradients_at(1)
    for rec in trace.messages:
        if rec.k == 0 and rec.channel == CHANNEL_Y:
            expected = trace.W[rec.receiver - 1, rec.sender - 1] * g1[rec.sender - 1]
            assert np.abs(rec.payload - expected).max() <= 1e-14


def test_diging_x_channel_shares_state_in_clear():
    graph = topology.graph_preset("path", 3)
    sched = schedules.make_schedule("constant-homogeneous", 3, lambda_base=0.02)
    trace = run("diging", sensing(3), graph, sched, K=3, seed=5)
    for rec in trace.messages:
        if rec.channel == CHANNEL_X:
            assert np.array_equal(rec.payload, trace.states[rec.k][rec.sender - 1])


def test_divergence_guard_names_round():
    graph = topology.graph_preset("path", 2)
    problem = sensing(2, scale=3.0)  # steep objective
    sched = schedules.make_schedule("constant-homogeneous", 2, lambda_base=50.0)
    with pytest.raises(DivergenceError) as err:
        run("dgd", problem, graph, sched, K=500, seed=1)
    assert err.value.round_index < 500


def test_mixing_ledger_validity():
    graph = topology.graph_preset("net5")
    sched = schedules.make_schedule("diminishing-heterogeneous", 5, seed=2)
    trace = run("pdg-ds", sensing(5), graph, sched, K=25, seed=3)
    assert sorted(trace.mixing) == list(range(25))
    for B in trace.mixing.values():
        topology.validate_mixing_matrix(B, graph)
    sched2 = schedules.make_schedule("constant-homogeneous", 5, lambda_base=0.003)
    nds = run("pdg-nds", sensing(5), graph, sched2, K=25, seed=3)
    assert sorted(nds.mixing) == list(range(24))


def test_ab_ledger_contains_row_and_column_mixing():
    graph = topology.graph_preset("path", 2)
    sched = schedules.make_schedule("constant-homogeneous", 2, lambda_base=0.005)
    trace = run("ab-tv", sensing(2), graph, sched, K=10, seed=3)
    assert sorted(trace.row_mixing) == list(range(10))
    for k in range(10):
        assert np.abs(trace.row_mixing[k].sum(axis=1) - 1).max() <= 1e-12
        assert np.abs(trace.col_mixing[k].sum(axis=0) - 1).max() <= 1e-12


def test_dimension_mismatch_errors():
    graph = topology.graph_preset("path", 3)
    sched = schedules.make_schedule("constant-homogeneous", 3, lambda_base=0.01)
    with pytest.raises(ValueError, match="agents"):
        run("dgd", sensing(4), graph, sched, K=5, seed=1)
    bad_sched = schedules.make_schedule("constant-homogeneous", 4, lambda_base=0.01)
    with pytest.raises(ValueError, match="agents"):
        run("dgd", sensing(3), graph, bad_sched, K=5, seed=1)
    with pytest.raises(ValueError, match="unsupported algorithm"):
        run("push-pull", sensing(3), graph, sched, K=5, seed=1)


def test_extra_classic_variant_converges():
    graph = topology.graph_preset("path", 3)
    problem = sensing(3)
    sched = schedules.make_schedule("constant-homogeneous", 3, lambda_base=0.05)
    trace = run("extra", problem, graph, sched, K=2000, seed=5)
    opt = objectives.optimum(problem)
    assert np.linalg.norm(trace.states[-1].mean(axis=0) - opt.theta_star) <= 1e-6
