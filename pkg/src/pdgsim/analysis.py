"""Convergence metrics and trajectory-level contraction-inequality monitors.

The monitors evaluate, along a simulated trajectory, the per-round vector
inequalities that drive the convergence guarantees: the two-entry recursion
(mean-square error, state consensus) for the diminishing-stepsize algorithm,
and the three-entry recursion (scaled value gap, state consensus, tracker
consensus) plus its composite bound for the non-diminishing one. A negative
slack beyond rounding tolerance means the implementation or the analysis
constants are wrong, so the reports double as numerical certificates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pdgsim import objectives
from pdgsim.engine import Trace
from pdgsim.objectives import Optimum

# slack >= -SLACK_TOL * (1 + |RHS|) counts as holding, absorbing rounding
# accumulated across the many-term entry formulas
SLACK_TOL = 1e-9


@dataclass(frozen=True)
class MetricsRow:
    k: int
    mean_error: float
    consensus: float
    f_gap: float
    ybar_norm: float
    lambda_bar: float
    lambda_max: float


@dataclass(frozen=True)
class ConvergenceSummary:
    reached: bool
    round: int | None
    final_mean_error: float
    final_consensus: float


@dataclass
class LyapunovReportDS:
    """Per-round slack of the two-coordinate error recursion for pdg-ds."""

    v: np.ndarray             # (K+1, 2): mean-square error, state consensus
    entries: np.ndarray       # (K, 4) nonnegative coefficient entries A11, A12, A21, A22
    a: np.ndarray             # (K,) max entry per round
    slack: np.ndarray         # (K, 2) RHS - LHS per coordinate
    scaled_slack: np.ndarray  # slack / (1 + |RHS|)

    @property
    def min_slack(self) -> float:
        return float(self.scaled_slack.min())

    @property
    def passed(self) -> bool:
        return self.min_slack >= -SLACK_TOL

    def to_dict(self) -> dict:
        return {"passed": self.passed, "min_slack": self.min_slack,
                "slack": self.slack.tolist(), "scaled_slack": self.scaled_slack.tolist(),
                "entries": self.entries.tolist(), "a": self.a.tolist()}


@dataclass
class LyapunovReportNDS:
    """Per-round slacks of the three-coordinate recursion for pdg-nds.

    ``value``: descent bound on the scaled value gap; ``state_consensus``:
    consensus contraction; ``state_drift``: per-round movement bound;
    ``tracker_consensus``: tracker-spread contraction; ``composite``: the
    assembled three-row bound (evaluated only when delta and c are supplied).
    """

    v: np.ndarray                       # (K, 3) for k = 0..K-1
    slacks: dict[str, np.ndarray]
    scaled_slacks: dict[str, np.ndarray]
    a: np.ndarray                       # (K-1,) perturbation coefficients
    b: np.ndarray                       # (K-1,) offset coefficients
    c1: float
    gamma: np.ndarray                   # (K,) lambda_bar/L
    tau: np.ndarray                     # (K,) lambda_bar*L
    delta: float | None = None
    c: float | None = None

    @property
    def min_slack(self) -> float:
        named = ("value", "state_consensus", "state_drift", "tracker_consensus")
        return float(min(self.scaled_slacks[name].min() for name in named))

    @property
    def passed(self) -> bool:
        return self.min_slack >= -SLACK_TOL

    def to_dict(self) -> dict:
        doc = {"passed": self.passed, "min_slack": self.min_slack, "c1": self.c1,
               "slacks": {k: v.tolist() for k, v in self.slacks.items()},
               "scaled_slacks": {k: v.tolist() for k, v in self.scaled_slacks.items()}}
        if self.delta is not None:
            doc["delta"], doc["c"] = self.delta, self.c
        return doc


def _mean_and_consensus(states: np.ndarray):
    xbar = states.mean(axis=1)
    consensus = ((states - xbar[:, None, :]) ** 2).sum(axis=(1, 2))
    return xbar, consensus


def metrics(trace: Trace, opt: Optimum) -> list[MetricsRow]:
    """One row per snapshot: distance of the mean state to the optimum, state
    consensus, value gap, tracker-mean norm (pdg-nds, from the stepsize
    ledger), and the round's mean/max stepsize."""
    xbar, consensus = _mean_and_consensus(trace.states)
    mean_error = np.linalg.norm(xbar - opt.theta_star[None], axis=1)
    f_gap = objectives.global_values(trace.problem, xbar) - opt.f_star
    lam = trace.lambdas
    ybar_norm = np.full(trace.K + 1, np.nan)
    if trace.algorithm == "pdg-nds":
        for k in range(trace.K + 1):
            ybar = (lam[k][:, None] * trace.gradients_at(k)).mean(axis=0)
            ybar_norm[k] = np.linalg.norm(ybar)
    return [MetricsRow(k=k, mean_error=float(mean_error[k]), consensus=float(consensus[k]),
                       f_gap=float(f_gap[k]), ybar_norm=float(ybar_norm[k]),
                       lambda_bar=float(lam[k].mean()), lambda_max=float(lam[k].max()))
            for k in range(trace.K + 1)]


def detect_convergence(rows: list[MetricsRow], tol_mean: float, tol_cons: float) -> ConvergenceSummary:
    """First round at which both the mean error and the consensus fall below tolerance."""
    final = rows[-1]
    for row in rows:
        if row.mean_error <= tol_mean and row.consensus <= tol_cons:
            return ConvergenceSummary(True, row.k, final.mean_error, final.consensus)
    return ConvergenceSummary(False, None, final.mean_error, final.consensus)


def verify_lyapunov_ds(trace: Trace, opt: Optimum, L: float, eta: float) -> LyapunovReportDS:
    """Evaluate the two-row error recursion along a pdg-ds trajectory.

    Row one bounds the next mean-square error by the current error vector and
    the value gap; row two bounds the next consensus by a contraction plus a
    stepsize-scaled coupling. Both rows use only the trace's stepsize ledger
    and the exact optimum.
    """
    if trace.algorithm != "pdg-ds":
        raise ValueError(f"expected a pdg-ds trace, got {trace.algorithm!r}")
    m, d, K = trace.m, trace.d, trace.K
    xbar, consensus = _mean_and_consensus(trace.states)
    mean_sq = ((xbar - opt.theta_star[None]) ** 2).sum(axis=1)
    v = np.stack([mean_sq, consensus], axis=1)
    f_gap = objectives.global_values(trace.problem, xbar) - opt.f_star

    lam = trace.lambdas[:K]
    lam_norm_sq = (lam ** 2).sum(axis=1)
    lbar = lam.mean(axis=1)
    spread = np.linalg.norm(lam - lbar[:, None], axis=1)

    A11 = (L * L * lam_norm_sq + 2.0 * L * m * np.sqrt(m * d) * spread) / m \
        + 4.0 * m * d * lam_norm_sq * L * L
    A12 = 4.0 * d * lam_norm_sq * L * L
    A21 = 2.0 * m ** 5 * L * L / (1.0 - eta) * lam_norm_sq
    A22 = 2.0 * m ** 4 * L * L / (1.0 - eta) * lam_norm_sq
    entries = np.stack([A11, A12, A21, A22], axis=1)

    rhs1 = (1.0 + A11) * v[:K, 0] + (1.0 / m + A12) * v[:K, 1] - 2.0 * lbar * f_gap[:K]
    rhs2 = A21 * v[:K, 0] + (eta + A22) * v[:K, 1]
    rhs = np.stack([rhs1, rhs2], axis=1)
    slack = rhs - v[1:K + 1]
    scaled = slack / (1.0 + np.abs(rhs))
    return LyapunovReportDS(v=v, entries=entries, a=entries.max(axis=1),
                            slack=slack, scaled_slack=scaled)


def verify_lyapunov_nds(trace: Trace, opt: Optimum, L: float, eta: float, r: float,
                        delta: float | None = None, c: float | None = None) -> LyapunovReportNDS:
    """Evaluate the three-coordinate recursion along a pdg-nds trajectory.

    The tracker series is reconstructed from consecutive snapshots as
    y^k = W x^k - x^{k+1}, so all quantities derive from the trace itself.
    """
    if trace.algorithm != "pdg-nds":
        raise ValueError(f"expected a pdg-nds trace, got {trace.algorithm!r}")
    if trace.K < 2:
        raise ValueError("need at least 2 rounds to evaluate the tracker recursion")
    m, K = trace.m, trace.K
    nu = 2.0 / L
    c1 = max(4.0 * L, 4.0 / (m * L))

    xbar, cons_x = _mean_and_consensus(trace.states)
    f_gap = objectives.global_values(trace.problem, xbar) - opt.f_star
    grad_F = objectives.global_gradients(trace.problem, xbar)
    grad_F_sq = (grad_F ** 2).sum(axis=1)
    resid_sq = float((opt.residual_gradients ** 2).sum())

    y = trace.tracker_states()            # (K, m, d), k = 0..K-1
    ybar, cons_y = _mean_and_consensus(y)
    ybar_sq = (ybar ** 2).sum(axis=1)

    lam = trace.lambdas
    lbar = lam.mean(axis=1)
    lmax = lam.max(axis=1)
    spread_sq = ((lam - lbar[:, None]) ** 2).sum(axis=1)
    norm_sq = (lam ** 2).sum(axis=1)
    change_sq = ((lam[1:] - lam[:-1]) ** 2).sum(axis=1)

    v = np.stack([nu * f_gap[:K], cons_x[:K], cons_y], axis=1)

    ks = np.arange(K)     # transitions evaluated at k = 0..K-1 where possible
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_lbar = np.where(lbar[:K] > 0, 1.0 / lbar[:K], 0.0)
    tau = lbar * L

    # descent bound on the scaled value gap
    rhs_val = (nu * f_gap[:K]
               + c1 * inv_lbar * spread_sq[:K] * (nu * f_gap[:K] + resid_sq)
               + 2.0 * L / m * inv_lbar * lmax[:K] ** 2 * cons_x[:K]
               - lbar[:K] / L * grad_F_sq[:K]
               + np.where(tau[:K] > 0, (tau[:K] - 1.0) / tau[:K], 0.0) * ybar_sq)
    slack_val = rhs_val - nu * f_gap[1:K + 1]

    # consensus contraction of the states
    rhs_xc = eta * cons_x[:K] + cons_y / (1.0 - eta)
    slack_xc = rhs_xc - cons_x[1:K + 1]

    # per-round state movement bound
    drift = ((trace.states[1:] - trace.states[:-1]) ** 2).sum(axis=(1, 2))
    rhs_drift = 3.0 * r * r * cons_x[:K] + 3.0 * cons_y + 3.0 * m * ybar_sq
    slack_drift = rhs_drift - drift

    # tracker-spread contraction (needs y^{k+1}: k = 0..K-2)
    kk = K - 1
    rhs_yc = ((eta + 6.0 * m * m * L * L / (1.0 - eta) * norm_sq[1:kk + 1]) * cons_y[:kk]
              + 6.0 * m * m * r * r * L * L / (1.0 - eta)
              * (norm_sq[1:kk + 1] * cons_x[:kk] + m * norm_sq[1:kk + 1] * ybar_sq[:kk])
              + 2.0 * m * m / (1.0 - eta) * change_sq[:kk]
              * (2.0 * L * L * cons_x[:kk] + 8.0 * m * L * f_gap[:kk] + 4.0 * resid_sq))
    slack_yc = rhs_yc - cons_y[1:kk + 1]

    a = np.maximum(c1 * inv_lbar[:kk] * spread_sq[:kk],
                   8.0 * m ** 3 * L * L / (1.0 - eta) * change_sq[:kk])
    b = np.maximum(c1 * inv_lbar[:kk] * spread_sq[:kk],
                   8.0 * m * m / (1.0 - eta) * change_sq[:kk]) * resid_sq

    slacks = {"value": slack_val, "state_consensus": slack_xc,
              "state_drift": slack_drift, "tracker_consensus": slack_yc}
    rhss = {"value": rhs_val, "state_consensus": rhs_xc,
            "state_drift": rhs_drift, "tracker_consensus": rhs_yc}

    if delta is not None and c is not None:
        V = np.array([[1.0, 1.0 - eta, 0.0],
                      [0.0, eta, 1.0 / (1.0 - eta)],
                      [0.0, (1.0 - eta) ** 2 * (1.0 - c) * (1.0 - delta), c]])
        comp_rhs = np.empty((kk, 3))
        for k in range(kk):
            Ck = np.array([[lbar[k] / L, (1.0 - tau[k]) / tau[k] if tau[k] > 0 else 0.0],
                           [0.0, 0.0],
                           [0.0, -(1.0 - eta) ** 2 * (1.0 - c)]])
            u = np.array([grad_F_sq[k], ybar_sq[k]])
            comp_rhs[k] = (V + a[k] * np.ones((3, 3))) @ v[k] - Ck @ u + b[k]
        slack_comp = comp_rhs - v[1:kk + 1]
        slacks["composite"] = slack_comp
        rhss["composite"] = comp_rhs

    scaled = {name: slacks[name] / (1.0 + np.abs(rhss[name])) for name in slacks}
    return LyapunovReportNDS(v=v, slacks=slacks, scaled_slacks=scaled, a=a, b=b,
                             c1=c1, gamma=lbar[:K] / L, tau=tau[:K], delta=delta, c=c)


def metrics_to_csv(rows: list[MetricsRow]) -> str:
    """Plot-ready CSV with 17-significant-digit floats for exact replay."""
    out = ["k,mean_error,consensus,f_gap,ybar_norm,lambda_bar,lambda_max"]
    for row in rows:
        out.append("%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g"
                   % (row.k, row.mean_error, row.consensus, row.f_gap,
                      row.ybar_norm, row.lambda_bar, row.lambda_max))
    return "\n".join(out) + "\n"
