"""Synchronous round-based execution of the decentralized gradient algorithms.

Algorithms: ``pdg-ds`` (one-message privacy-preserving, diminishing stepsizes),
``pdg-nds`` (one-message privacy-preserving, non-diminishing stepsizes), and
the baselines ``dgd``, ``extra``, ``diging``, ``ab-tv``. Every run produces a
Trace holding the state snapshots, the complete message log an adversary could
observe, and a private ledger (stepsizes, mixing draws) used as ground truth
by the analysis and attack modules, never by adversary views.

Round convention: engine round k (0-based) sends the round-k messages and
produces the snapshot x^{k+1}. One message per neighbor per round on every
channel the algorithm uses; self-messages are internal and not logged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pdgsim import objectives, topology
from pdgsim.objectives import Problem
from pdgsim.schedules import StepsizeSchedule
from pdgsim.topology import Graph

ALGORITHMS = ("pdg-ds", "pdg-nds", "dgd", "extra", "diging", "ab-tv")
TWO_CHANNEL = ("diging", "ab-tv")

CHANNEL_X = "x-message"
CHANNEL_Y = "y-message"

DIVERGENCE_LIMIT = 1e12


class DivergenceError(RuntimeError):
    def __init__(self, round_index: int, magnitude: float):
        super().__init__(f"state magnitude {magnitude:.3e} exceeded {DIVERGENCE_LIMIT:.0e} "
                         f"at round {round_index}")
        self.round_index = round_index
        self.magnitude = magnitude


@dataclass(frozen=True, slots=True)
class MessageRecord:
    k: int
    sender: int
    receiver: int
    channel: str
    payload: np.ndarray


@dataclass
class Trace:
    """Full record of one run: snapshots, adversary-observable messages, private ledger."""

    algorithm: str
    graph: Graph
    W: np.ndarray
    problem: Problem
    schedule: dict
    K: int
    seed: int
    states: np.ndarray                      # (K+1, m, d), states[k] = x^k
    messages: list[MessageRecord]
    lambdas: np.ndarray                     # (K+1, m) ledger, lambdas[k] = lambda^k
    mixing: dict[int, np.ndarray] = field(default_factory=dict)      # B^k by superscript
    row_mixing: dict[int, np.ndarray] = field(default_factory=dict)  # R^k (ab-tv)
    col_mixing: dict[int, np.ndarray] = field(default_factory=dict)  # C^k (ab-tv)
    trackers: np.ndarray | None = None      # (K+1, m, d) y^k for diging/ab-tv

    @property
    def m(self) -> int:
        return self.graph.m

    @property
    def d(self) -> int:
        return self.problem.d

    def gradients_at(self, k: int) -> np.ndarray:
        return objectives.gradients(self.problem, self.states[k])

    def tracker_states(self) -> np.ndarray:
        """y^k series: stored trackers for two-channel baselines, or the
        derived diagnostic y^k = W x^k - x^{k+1} (k = 0..K-1) otherwise."""
        if self.trackers is not None:
            return self.trackers
        return np.einsum("ij,kjd->kid", self.W, self.states[:-1]) - self.states[1:]


def _directed(graph: Graph) -> list[tuple[int, int]]:
    # (sender, receiver) 0-based pairs along edges
    return [(j - 1, i - 1) for j, i in graph.directed_edges()]


def _guard(x: np.ndarray, k: int) -> None:
    mag = float(np.abs(x).max())
    if not np.isfinite(mag) or mag > DIVERGENCE_LIMIT:
        raise DivergenceError(k, mag)


def pdg_ds_step(x, grads, W, B, lam, directed, k):
    """One round of the diminishing-stepsize algorithm.

    Each sender j emits v_ij = w_ij x_j - b_ij lam_j g_j to every neighbor i;
    the receiver's next state is the sum of what it hears (self term included).
    """
    weighted = lam[:, None] * grads
    x_next = W @ x - (B * lam[None, :]) @ grads
    records = [MessageRecord(k, s + 1, r + 1, CHANNEL_X,
                             W[r, s] * x[s] - B[r, s] * weighted[s])
               for s, r in directed]
    return x_next, records


def pdg_nds_step(x_prev, x_prev2, g_prev, g_prev2, W, W2, B, lam_prev, lam_prev2, directed, k):
    """One round of the non-diminishing-stepsize algorithm (rounds k >= 1).

    Produces x^{k+1} = 2W x^k - W^2 x^{k-1} - B^{k-1}(Lam^k g^k - Lam^{k-1} g^{k-1});
    the W^2 term enters with a minus sign so the summed shares reproduce the
    stacked two-step recursion. Sender j's share to neighbor i is
    v_ij = 2 w_ij x_j^k - {W^2}_ij x_j^{k-1} - b_ij^{k-1}(lam_j^k g_j^k - lam_j^{k-1} g_j^{k-1}).
    """
    diff = lam_prev[:, None] * g_prev - lam_prev2[:, None] * g_prev2
    x_next = 2.0 * W @ x_prev - W2 @ x_prev2 - B @ diff
    records = [MessageRecord(k, s + 1, r + 1, CHANNEL_X,
                             2.0 * W[r, s] * x_prev[s] - W2[r, s] * x_prev2[s] - B[r, s] * diff[s])
               for s, r in directed]
    return x_next, records


def dgd_step(x, grads, W, lam, directed, k):
    """Conventional decentralized gradient round: consensus on shared states,
    local gradient correction. States are shared in the clear."""
    x_next = W @ x - lam[:, None] * grads
    records = [MessageRecord(k, s + 1, r + 1, CHANNEL_X, x[s].copy()) for s, r in directed]
    return x_next, records


def extra_step(x_prev, x_prev2, g_prev, g_prev2, W1, W2, lam_prev, lam_prev2, directed, k):
    """One round of the two-step difference recursion (rounds k >= 1):
    x^{k+1} = W1 x^k - W2 x^{k-1} - (Lam^k g^k - Lam^{k-1} g^{k-1}).
    With a constant homogeneous schedule this is the classic recursion."""
    x_next = W1 @ x_prev - W2 @ x_prev2 - (lam_prev[:, None] * g_prev - lam_prev2[:, None] * g_prev2)
    records = [MessageRecord(k, s + 1, r + 1, CHANNEL_X, x_prev[s].copy()) for s, r in directed]
    return x_next, records


def diging_step(x, y, grads, problem, W, lam, directed, k):
    """Gradient-tracking round: x-update, gradient at the new point, y-update.

    Senders share their state in the clear and the weighted tracking increment
    w_ij (y_j + g_j^{new} - g_j); at k=0 with y^0 = g^0 that increment equals
    w_ij g_j^1, which is what the inference attack exploits.
    """
    x_next = W @ x - lam[:, None] * y
    g_next = objectives.gradients(problem, x_next)
    incr = y + g_next - grads
    y_next = W @ incr
    records = []
    for s, r in directed:
        records.append(MessageRecord(k, s + 1, r + 1, CHANNEL_X, x[s].copy()))
        records.append(MessageRecord(k, s + 1, r + 1, CHANNEL_Y, W[r, s] * incr[s]))
    return x_next, y_next, g_next, records


def ab_step(x, y, grads, problem, R, C, lam, directed, k):
    """Gradient-tracking round with row-stochastic state mixing and
    column-stochastic tracker mixing, both freshly sampled each round."""
    x_next = R @ x - lam[:, None] * y
    g_next = objectives.gradients(problem, x_next)
    incr = y + g_next - grads
    y_next = C @ incr
    records = []
    for s, r in directed:
        records.append(MessageRecord(k, s + 1, r + 1, CHANNEL_X, x[s].copy()))
        records.append(MessageRecord(k, s + 1, r + 1, CHANNEL_Y, C[r, s] * incr[s]))
    return x_next, y_next, g_next, records


def run(algorithm: str, problem: Problem, graph: Graph, schedule: StepsizeSchedule,
        K: int, seed: int, W: np.ndarray | None = None,
        extra_variant: str = "classic", mixing_kind: str = "random") -> Trace:
    """Execute K synchronous rounds from random initial states.

    Deterministic given ``seed``: initial states, mixing draws and the schedule
    streams are all derived from fixed, disjoint per-purpose streams.
    ``mixing_kind`` selects the per-round mixing matrix for pdg-ds/pdg-nds:
    fresh random columns ("random") or the identity ("identity", which reduces
    pdg-ds to plain decentralized gradient descent under a homogeneous
    schedule and pdg-nds to the two-step difference recursion).
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unsupported algorithm {algorithm!r}; choose from {ALGORITHMS}")
    if mixing_kind not in ("random", "identity"):
        raise ValueError(f"unknown mixing kind {mixing_kind!r}")
    if K < 1:
        raise ValueError("iteration count must be at least 1")
    m, d = graph.m, problem.d
    if problem.m != m:
        raise ValueError(f"problem has {problem.m} agents but graph has {m}")
    if schedule.m != m:
        raise ValueError(f"schedule has {schedule.m} agents but graph has {m}")
    if W is None:
        W = topology.metropolis_weights(graph)
    else:
        topology.validate_weight_matrix(W, graph)
    directed = _directed(graph)
    seed = int(seed)

    init_rng = np.random.default_rng([seed & 0xFFFFFFFFFFFF, 0x1A17])
    x = init_rng.uniform(-1.0, 1.0, size=(m, d))

    states = np.empty((K + 1, m, d))
    states[0] = x
    lambdas = np.array([schedule.vector(k) for k in range(K + 1)])
    messages: list[MessageRecord] = []
    mixing: dict[int, np.ndarray] = {}
    row_mixing: dict[int, np.ndarray] = {}
    col_mixing: dict[int, np.ndarray] = {}
    trackers = None

    def draw_mixing(streams):
        if mixing_kind == "identity":
            return np.eye(m)
        return topology.sample_mixing_matrix(graph, streams)

    if algorithm == "pdg-ds":
        streams = topology.mixing_streams(m, seed)
        for k in range(K):
            B = draw_mixing(streams)
            mixing[k] = B
            grads = objectives.gradients(problem, x)
            x, records = pdg_ds_step(x, grads, W, B, lambdas[k], directed, k)
            _guard(x, k)
            messages.extend(records)
            states[k + 1] = x

    elif algorithm == "dgd":
        for k in range(K):
            grads = objectives.gradients(problem, x)
            x, records = dgd_step(x, grads, W, lambdas[k], directed, k)
            _guard(x, k)
            messages.extend(records)
            states[k + 1] = x

    elif algorithm in ("pdg-nds", "extra"):
        if algorithm == "extra":
            if extra_variant == "classic":
                W1, W2 = np.eye(m) + W, (np.eye(m) + W) / 2.0
            elif extra_variant == "squared":
                W1, W2 = 2.0 * W, W @ W
            else:
                raise ValueError(f"unknown extra variant {extra_variant!r}")
        else:
            W2 = W @ W
        streams = topology.mixing_streams(m, seed)
        g_prev2 = objectives.gradients(problem, x)
        # initialization round: states are shared in the clear once
        messages.extend(MessageRecord(0, s + 1, r + 1, CHANNEL_X, x[s].copy())
                        for s, r in directed)
        x_prev2 = x
        x = W @ x - lambdas[0][:, None] * g_prev2
        _guard(x, 0)
        states[1] = x
        g_prev = objectives.gradients(problem, x)
        x_prev = x
        for k in range(1, K):
            if algorithm == "pdg-nds":
                B = draw_mixing(streams)
                mixing[k - 1] = B
                x, records = pdg_nds_step(x_prev, x_prev2, g_prev, g_prev2, W, W2, B,
                                          lambdas[k], lambdas[k - 1], directed, k)
            else:
                x, records = extra_step(x_prev, x_prev2, g_prev, g_prev2, W1, W2,
                                        lambdas[k], lambdas[k - 1], directed, k)
            _guard(x, k)
            messages.extend(records)
            states[k + 1] = x
            x_prev2, x_prev = x_prev, x
            g_prev2, g_prev = g_prev, objectives.gradients(problem, x)

    elif algorithm == "diging":
        trackers = np.empty((K + 1, m, d))
        grads = objectives.gradients(problem, x)
        y = grads.copy()
        trackers[0] = y
        for k in range(K):
            x, y, grads, records = diging_step(x, y, grads, problem, W, lambdas[k], directed, k)
            _guard(x, k)
            messages.extend(records)
            states[k + 1] = x
            trackers[k + 1] = y

    else:  # ab-tv
        trackers = np.empty((K + 1, m, d))
        streams = topology.row_column_streams(m, seed)
        grads = objectives.gradients(problem, x)
        y = grads.copy()
        trackers[0] = y
        for k in range(K):
            R = topology.sample_row_stochastic(graph, streams)
            C = topology.sample_column_stochastic(graph, streams)
            row_mixing[k] = R
            col_mixing[k] = C
            x, y, grads, records = ab_step(x, y, grads, problem, R, C, lambdas[k], directed, k)
            _guard(x, k)
            messages.extend(records)
            states[k + 1] = x
            trackers[k + 1] = y

    return Trace(algorithm=algorithm, graph=graph, W=W, problem=problem,
                 schedule=schedule.describe(), K=K, seed=seed, states=states,
                 messages=messages, lambdas=lambdas, mixing=mixing,
                 row_mixing=row_mixing, col_mixing=col_mixing, trackers=trackers)


def replay_receiver_states(trace: Trace) -> dict[str, float]:
    """Rebuild every receiver's next state from its received messages plus its
    own internals, and report the worst absolute deviation from the trace.

    For pdg-ds the reconstruction is exact: x_i^{k+1} is the sum of received
    shares plus the receiver's own self share. For pdg-nds the squared weight
    matrix can couple agents two hops apart, where no edge (hence no message)
    exists; ``defect_with_two_hop`` adds that publicly-weighted two-hop term
    and must vanish, while ``defect_messages_only`` quantifies the gap (zero
    whenever W^2 keeps the graph support, e.g. on complete graphs).
    """
    if trace.algorithm not in ("pdg-ds", "pdg-nds"):
        raise ValueError("receiver replay is defined for pdg-ds and pdg-nds traces")
    m, d = trace.m, trace.d
    W = trace.W
    adjacency = trace.graph.adjacency() | np.eye(m, dtype=bool)
    inbox: dict[tuple[int, int], np.ndarray] = {}
    for rec in trace.messages:
        key = (rec.k, rec.receiver - 1)
        inbox.setdefault(key, np.zeros(d))
        inbox[key] = inbox[key] + rec.payload

    defect_msgs = 0.0
    defect_two_hop = 0.0
    if trace.algorithm == "pdg-ds":
        for k in range(trace.K):
            grads = trace.gradients_at(k)
            lam = trace.lambdas[k]
            B = trace.mixing[k]
            for i in range(m):
                self_share = W[i, i] * trace.states[k][i] - B[i, i] * lam[i] * grads[i]
                rebuilt = inbox.get((k, i), np.zeros(d)) + self_share
                defect_msgs = max(defect_msgs, float(np.abs(rebuilt - trace.states[k + 1][i]).max()))
        defect_two_hop = defect_msgs
    else:
        W2 = W @ W
        for k in range(1, trace.K):
            g_prev = trace.gradients_at(k)
            g_prev2 = trace.gradients_at(k - 1)
            diff = trace.lambdas[k][:, None] * g_prev - trace.lambdas[k - 1][:, None] * g_prev2
            B = trace.mixing[k - 1]
            for i in range(m):
                self_share = (2.0 * W[i, i] * trace.states[k][i]
                              - W2[i, i] * trace.states[k - 1][i] - B[i, i] * diff[i])
                rebuilt = inbox.get((k, i), np.zeros(d)) + self_share
                gap = float(np.abs(rebuilt - trace.states[k + 1][i]).max())
                defect_msgs = max(defect_msgs, gap)
                two_hop = ~adjacency[i]
                correction = -(W2[i, two_hop] @ trace.states[k - 1][two_hop])
                corrected = rebuilt + correction
                defect_two_hop = max(defect_two_hop,
                                     float(np.abs(corrected - trace.states[k + 1][i]).max()))
    return {"defect_messages_only": defect_msgs, "defect_with_two_hop": defect_two_hop}
