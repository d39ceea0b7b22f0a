"""Experiment configuration, orchestration and artifact emission.

A single JSON config document describes the problem instance, topology,
algorithm, stepsize schedule, analysis options and an optional adversary
action. Everything downstream is deterministic in (config, master seed):
initial states and mixing draws derive from the master seed, the schedule
from its own seed (derived from the master only when left null), and the
problem instance from its own seed, so changing the schedule seed never
changes the problem.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from pdgsim import analysis, objectives, schedules, topology
from pdgsim.adversary import CURIOUS, construct_witness, infer_ab_gradient, infer_diging_gradient, project_view
from pdgsim.engine import ALGORITHMS, Trace, run
from pdgsim.objectives import Problem
from pdgsim.schedules import StepsizeSchedule
from pdgsim.topology import Graph

FORMAT_VERSION = 1

BUNDLED_SCENARIOS = ("sensing-ds", "sensing-nds", "sensing-diging")

# families whose tail behavior matches each algorithm's convergence regime;
# a mismatch is a warning, not an error
_PREFERRED_FAMILIES = {
    "pdg-ds": ("diminishing-heterogeneous",),
    "dgd": ("diminishing-heterogeneous",),
    "pdg-nds": ("nondiminishing-heterogeneous", "constant-homogeneous", "finite-deviation"),
    "extra": ("constant-homogeneous", "finite-deviation", "nondiminishing-heterogeneous"),
    "diging": ("constant-homogeneous",),
    "ab-tv": ("constant-homogeneous", "nondiminishing-heterogeneous", "finite-deviation"),
}


class ConfigError(ValueError):
    """Invalid experiment config; the message starts with the offending key path."""


@dataclass
class ExperimentConfig:
    doc: dict
    problem: Problem
    graph: Graph
    W: np.ndarray | None
    algorithm: str
    extra_variant: str
    mixing_kind: str
    schedule: StepsizeSchedule
    iterations: int
    seed: int
    analysis_options: dict
    adversary: dict | None
    output: Path | None
    warnings: list[str] = field(default_factory=list)


@dataclass
class RunArtifacts:
    outdir: Path
    paths: dict[str, Path]
    summary: dict
    trace: Trace | None = None
    metrics_rows: list | None = None


def load_config(source) -> dict:
    """Load a config document from a path or a bundled scenario name."""
    path = Path(source)
    if path.exists():
        return json.loads(path.read_text())
    if str(source) in BUNDLED_SCENARIOS:
        text = resources.files("pdgsim").joinpath(f"scenarios/{source}.json").read_text()
        return json.loads(text)
    raise ConfigError(f"config: no such file or bundled scenario: {source}")


def _need(doc: dict, key: str, path: str):
    if key not in doc:
        raise ConfigError(f"{path}.{key}: required key is missing")
    return doc[key]


def _as_int(value, path: str, minimum: int | None = None) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}, got {value}")
    return value


def _as_number(value, path: str) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    return float(value)


def parse_config(doc: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a config document; errors name the offending key path."""
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a JSON object")
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    seed = _as_int(doc.get("seed", 0), "seed")
    iterations = _as_int(_need(doc, "iterations", "config"), "iterations", minimum=1)

    problem = _parse_problem(_need(doc, "problem", "config"), base_dir)
    graph, W = _parse_topology(_need(doc, "topology", "config"), base_dir)
    if problem.m != graph.m:
        raise ConfigError(f"problem.m: {problem.m} does not match the topology's {graph.m} agents")

    algo_doc = _need(doc, "algorithm", "config")
    if not isinstance(algo_doc, dict):
        raise ConfigError("algorithm: expected an object")
    algorithm = _need(algo_doc, "name", "algorithm")
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"algorithm.name: unknown algorithm {algorithm!r}")
    extra_variant = algo_doc.get("extra_variant", "classic")
    if extra_variant not in ("classic", "squared"):
        raise ConfigError(f"algorithm.extra_variant: unknown variant {extra_variant!r}")
    mixing_kind = algo_doc.get("mixing", "random")
    if mixing_kind not in ("random", "identity"):
        raise ConfigError(f"algorithm.mixing: unknown mixing kind {mixing_kind!r}")

    schedule = _parse_schedule(_need(doc, "schedule", "config"), graph.m, seed)

    analysis_doc = doc.get("analysis", {})
    if not isinstance(analysis_doc, dict):
        raise ConfigError("analysis: expected an object")
    options = {
        "lyapunov": bool(analysis_doc.get("lyapunov", False)),
        "check_schedule": bool(analysis_doc.get("check_schedule", False)),
        "delta": analysis_doc.get("delta"),
        "c": analysis_doc.get("c"),
        "start": _as_int(analysis_doc.get("start", 0), "analysis.start", minimum=0),
        "tol_mean": _as_number(analysis_doc.get("tol_mean", 1e-4), "analysis.tol_mean"),
        "tol_cons": _as_number(analysis_doc.get("tol_cons", 1e-6), "analysis.tol_cons"),
    }
    for key in ("delta", "c"):
        if options[key] is not None:
            options[key] = _as_number(options[key], f"analysis.{key}")
            if not 0.0 < options[key] < 1.0:
                raise ConfigError(f"analysis.{key}: must lie strictly between 0 and 1")

    adversary = doc.get("adversary")
    if adversary is not None:
        adversary = _parse_adversary(adversary, graph.m, iterations)

    output = doc.get("output")
    output = (base_dir / output) if output is not None else None

    warnings = []
    preferred = _PREFERRED_FAMILIES[algorithm]
    if schedule.family != "custom" and schedule.family not in preferred:
        warnings.append(
            f"schedule.family: {schedule.family!r} is unusual for {algorithm!r} "
            f"(typical: {', '.join(preferred)})"
        )
    return ExperimentConfig(doc=doc, problem=problem, graph=graph, W=W, algorithm=algorithm,
                            extra_variant=extra_variant, mixing_kind=mixing_kind,
                            schedule=schedule, iterations=iterations, seed=seed,
                            analysis_options=options, adversary=adversary, output=output,
                            warnings=warnings)


def _parse_problem(doc, base_dir: Path) -> Problem:
    if not isinstance(doc, dict):
        raise ConfigError("problem: expected an object")
    if "file" in doc:
        return objectives.from_json((base_dir / doc["file"]).read_text())
    kind = _need(doc, "kind", "problem")
    if kind == "quadratic-sensing":
        m = _as_int(_need(doc, "m", "problem"), "problem.m", minimum=1)
        s = _as_int(_need(doc, "s", "problem"), "problem.s", minimum=1)
        d = _as_int(_need(doc, "d", "problem"), "problem.d", minimum=1)
        noise = _as_number(doc.get("noise", 0.0), "problem.noise")
        sigma = _as_number(doc.get("sigma", 0.0), "problem.sigma")
        scale = _as_number(doc.get("measurement_scale", 1.0), "problem.measurement_scale")
        pseed = _as_int(doc.get("seed", 0), "problem.seed")
        return objectives.generate_sensing_instance(m, s, d, noise, pseed, sigma=sigma,
                                                    measurement_scale=scale)
    if kind == "rendezvous":
        positions = _need(doc, "positions", "problem")
        try:
            return objectives.rendezvous_problem(positions)
        except ValueError as exc:
            raise ConfigError(f"problem.positions: {exc}") from exc
    raise ConfigError(f"problem.kind: unknown kind {kind!r}")


def _parse_topology(doc, base_dir: Path) -> tuple[Graph, np.ndarray | None]:
    if not isinstance(doc, dict):
        raise ConfigError("topology: expected an object")
    if "preset" in doc:
        name = doc["preset"]
        try:
            graph = topology.graph_preset(name, doc.get("m"))
        except ValueError as exc:
            raise ConfigError(f"topology.preset: {exc}") from exc
    elif "edge_list" in doc:
        try:
            graph = topology.load_edge_list(base_dir / doc["edge_list"])
        except (OSError, ValueError) as exc:
            raise ConfigError(f"topology.edge_list: {exc}") from exc
    else:
        raise ConfigError("topology: needs either 'preset' or 'edge_list'")
    W = None
    if "weights" in doc:
        try:
            W = np.loadtxt(base_dir / doc["weights"], delimiter=",", ndmin=2)
            topology.validate_weight_matrix(W, graph)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"topology.weights: {exc}") from exc
    return graph, W


def _parse_schedule(doc, m: int, master_seed: int) -> StepsizeSchedule:
    if not isinstance(doc, dict):
        raise ConfigError("schedule: expected an object")
    family = _need(doc, "family", "schedule")
    seed = doc.get("seed")
    if seed is None:
        seed = master_seed + 0x5C  # derived stream; documented in the README
    try:
        return schedules.make_schedule(
            family, m, seed=_as_int(seed, "schedule.seed"),
            lambda_base=_as_number(doc.get("lambda_base", 0.0), "schedule.lambda_base"),
            deviation_scale=_as_number(doc.get("deviation_scale", 0.0), "schedule.deviation_scale"),
            deviation_rounds=_as_int(doc.get("deviation_rounds", 0), "schedule.deviation_rounds"),
        )
    except ValueError as exc:
        raise ConfigError(f"schedule.family: {exc}") from exc


def _parse_adversary(doc, m: int, iterations: int) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError("adversary: expected an object")
    if "witness" in doc:
        wdoc = doc["witness"]
        target = _as_int(_need(wdoc, "target", "adversary.witness"), "adversary.witness.target")
        if not 1 <= target <= m:
            raise ConfigError(f"adversary.witness.target: {target} out of range 1..{m}")
        zeta_doc = _need(wdoc, "zeta", "adversary.witness")
        try:
            zeta = {int(k): float(v) for k, v in zeta_doc.items()}
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"adversary.witness.zeta: {exc}") from exc
        return {"witness": {"target": target, "zeta": zeta}}
    attack = _need(doc, "attack", "adversary")
    if attack not in ("diging", "ab"):
        raise ConfigError(f"adversary.attack: unknown attack {attack!r}")
    observer = _as_int(_need(doc, "observer", "adversary"), "adversary.observer")
    target = _as_int(_need(doc, "target", "adversary"), "adversary.target")
    for name, val in (("observer", observer), ("target", target)):
        if not 1 <= val <= m:
            raise ConfigError(f"adversary.{name}: {val} out of range 1..{m}")
    horizon = _as_int(doc.get("horizon", iterations - 1), "adversary.horizon", minimum=0)
    return {"attack": attack, "observer": observer, "target": target, "horizon": horizon}


def run_experiment(config: ExperimentConfig, outdir: Path | None = None) -> RunArtifacts:
    """Run the configured experiment and write all artifacts to ``outdir``."""
    outdir = Path(outdir) if outdir is not None else config.output
    if outdir is None:
        raise ConfigError("output: no output directory given (config key or --out)")
    outdir.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    summary: dict = {"warnings": list(config.warnings)}

    _write_json(outdir / "config.json", config.doc, paths, "config")

    trace = run(config.algorithm, config.problem, config.graph, config.schedule,
                config.iterations, config.seed, W=config.W,
                extra_variant=config.extra_variant, mixing_kind=config.mixing_kind)
    _write_trace(trace, outdir, paths)

    opt = objectives.optimum(config.problem)
    rows = analysis.metrics(trace, opt)
    (outdir / "metrics.csv").write_text(analysis.metrics_to_csv(rows))
    paths["metrics"] = outdir / "metrics.csv"

    options = config.analysis_options
    conv = analysis.detect_convergence(rows, options["tol_mean"], options["tol_cons"])
    summary["convergence"] = {
        "reached": conv.reached, "round": conv.round,
        "final_mean_error": conv.final_mean_error, "final_consensus": conv.final_consensus,
    }
    summary["optimum"] = {"theta_star": opt.theta_star.tolist(), "f_star": opt.f_star}
    verification_ok = True

    spectral = topology.spectral_data(trace.W)
    L = objectives.lipschitz_bound(config.problem)
    summary["constants"] = {"L": L, "eta": spectral.eta, "r": spectral.r}

    if options["check_schedule"]:
        report = _schedule_report(config, L, spectral, summary)
        _write_json(outdir / "schedule_check.json", report.to_dict(), paths, "schedule_check")
        summary["schedule_check"] = {"regime": report.regime, "passed": report.passed,
                                     "delta": report.delta, "c": report.c}
        verification_ok = verification_ok and report.passed

    if options["lyapunov"] and config.algorithm in ("pdg-ds", "pdg-nds"):
        if config.algorithm == "pdg-ds":
            lyap = analysis.verify_lyapunov_ds(trace, opt, L, spectral.eta)
        else:
            lyap = analysis.verify_lyapunov_nds(trace, opt, L, spectral.eta, spectral.r,
                                                delta=options["delta"], c=options["c"])
        _write_json(outdir / "lyapunov.json", lyap.to_dict(), paths, "lyapunov")
        summary["lyapunov"] = {"passed": lyap.passed, "min_slack": lyap.min_slack}
        verification_ok = verification_ok and lyap.passed

    if config.adversary is not None:
        report = _adversary_report(config, trace, opt)
        _write_json(outdir / "adversary.json", report, paths, "adversary")
        summary["adversary"] = {k: report[k] for k in ("kind", "ok")}
        verification_ok = verification_ok and report["ok"]

    summary["verification_ok"] = verification_ok
    _write_json(outdir / "summary.json", summary, paths, "summary")
    return RunArtifacts(outdir=outdir, paths=paths, summary=summary, trace=trace,
                        metrics_rows=rows)


def _schedule_report(config: ExperimentConfig, L: float, spectral, summary: dict):
    # the regime follows the algorithm: its convergence guarantee dictates
    # which admissibility conditions the schedule must satisfy
    options = config.analysis_options
    if config.algorithm in ("pdg-ds", "dgd"):
        return schedules.check_diminishing(config.schedule, config.iterations)
    delta, c = options["delta"], options["c"]
    if delta is None or c is None:
        found = schedules.find_feasible_delta_c(config.schedule, L, spectral.eta, spectral.r,
                                                config.iterations, start=options["start"])
        if found is None:
            summary["schedule_search"] = "infeasible"
            delta, c = 0.5, 0.5  # report margins at a reference point
        else:
            summary["schedule_search"] = {"delta": found[0], "c": found[1]}
            delta, c = found
    return schedules.check_nondiminishing(config.schedule, L, spectral.eta, spectral.r,
                                          delta, c, config.iterations, start=options["start"])


def _adversary_report(config: ExperimentConfig, trace: Trace, opt) -> dict:
    spec = config.adversary
    if "witness" in spec:
        target = spec["witness"]["target"]
        result = construct_witness(trace, target, spec["witness"]["zeta"])
        report = result.to_dict()
        report["kind"] = "witness"
        report["ok"] = result.indistinguishable
        return report
    observer, target = spec["observer"], spec["target"]
    view = project_view(trace, CURIOUS, observer)
    if spec["attack"] == "diging":
        x1, g1 = infer_diging_gradient(view, target)
        true_x1 = trace.states[1][target - 1]
        true_g1 = objectives.gradient(trace.problem, target, true_x1)
        err_x = float(np.abs(x1 - true_x1).max())
        err_g = float(np.abs(g1 - true_g1).max())
        report = {
            "kind": "attack-diging", "observer": observer, "target": target,
            "recovered_state": x1.tolist(), "recovered_gradient": g1.tolist(),
            "true_state": true_x1.tolist(), "true_gradient": true_g1.tolist(),
            "state_error": err_x, "gradient_error": err_g,
            "ok": max(err_x, err_g) <= 1e-12,
        }
        if trace.problem.kind == "rendezvous":
            # g = 2(x - x0) at the recovered point pins the sensitive position
            recovered_pos = x1 - g1 / 2.0
            report["recovered_position"] = recovered_pos.tolist()
            report["position_error"] = float(
                np.abs(recovered_pos - trace.problem.x0[target - 1]).max())
        return report
    estimates = infer_ab_gradient(view, target, spec["horizon"])
    true_grad = opt.residual_gradients[target - 1]
    denom = max(float(np.linalg.norm(true_grad)), 1e-30)
    rel = float(np.linalg.norm(estimates[-1] - true_grad)) / denom
    return {
        "kind": "attack-ab", "observer": observer, "target": target,
        "horizon": spec["horizon"],
        "estimate": estimates[-1].tolist(),
        "true_gradient_at_optimum": true_grad.tolist(),
        "relative_error": rel,
        "estimate_series_tail": estimates[-10:].tolist(),
        "ok": bool(np.isfinite(rel)),
    }


def _write_trace(trace: Trace, outdir: Path, paths: dict) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "algorithm": trace.algorithm,
        "m": trace.m,
        "d": trace.d,
        "iterations": trace.K,
        "seed": trace.seed,
        "schedule": trace.schedule,
        "edges": [list(e) for e in trace.graph.edges],
        "W": trace.W.tolist(),
        "files": {"states": "states.csv", "messages": "messages.csv"},
    }
    _write_json(outdir / "trace.json", header, paths, "trace")

    d = trace.d
    lines = ["k,agent," + ",".join(f"x{j}" for j in range(d))]
    for k in range(trace.K + 1):
        for i in range(trace.m):
            coords = ",".join("%.17g" % v for v in trace.states[k, i])
            lines.append(f"{k},{i + 1},{coords}")
    (outdir / "states.csv").write_text("\n".join(lines) + "\n")
    paths["states"] = outdir / "states.csv"

    lines = ["k,sender,receiver,channel," + ",".join(f"payload{j}" for j in range(d))]
    for rec in trace.messages:
        coords = ",".join("%.17g" % v for v in rec.payload)
        lines.append(f"{rec.k},{rec.sender},{rec.receiver},{rec.channel},{coords}")
    (outdir / "messages.csv").write_text("\n".join(lines) + "\n")
    paths["messages"] = outdir / "messages.csv"


def _write_json(path: Path, doc: dict, paths: dict, key: str) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    paths[key] = path
