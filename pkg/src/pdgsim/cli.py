"""Command-line entry point.

Subcommands: ``run`` (full experiment), ``check-schedule`` (stepsize
admissibility only), ``attack`` (baseline run plus gradient inference),
``witness`` (privacy-preserving run plus indistinguishability replay), and
``sweep`` (independent seeded repeats, run concurrently).

Exit codes: 0 success, 1 validation error, 2 divergence, 3 failed
verification (negative contraction slack, witness discrepancy above
tolerance, or a failed schedule check).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import sys
from pathlib import Path

import numpy as np

from pdgsim import harness, objectives, schedules, topology
from pdgsim.engine import DivergenceError
from pdgsim.harness import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGENCE = 2
EXIT_VERIFICATION = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdgsim",
                                     description="decentralized gradient simulation harness")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="config file path or bundled scenario name "
                                      f"({', '.join(harness.BUNDLED_SCENARIOS)})")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--iterations", type=int, default=None, help="override the round count")
        p.add_argument("--quiet", action="store_true", help="suppress the verdict line")

    for name in ("run", "check-schedule", "attack", "witness"):
        common(sub.add_parser(name))
    sweep = sub.add_parser("sweep")
    common(sweep)
    sweep.add_argument("--seeds", required=True, help="inclusive seed range, e.g. 0..9")
    sweep.add_argument("--jobs", type=int, default=None, help="max concurrent runs")
    return parser


def _load(args) -> harness.ExperimentConfig:
    doc = harness.load_config(args.config)
    if args.seed is not None:
        doc = {**doc, "seed": args.seed}
    if args.iterations is not None:
        doc = {**doc, "iterations": args.iterations}
    base = Path(args.config).parent if Path(args.config).exists() else Path.cwd()
    return harness.parse_config(doc, base_dir=base)


def _say(args, text: str) -> None:
    if not args.quiet:
        print(text)


def _cmd_run(args) -> int:
    config = _load(args)
    artifacts = harness.run_experiment(config, outdir=args.out)
    conv = artifacts.summary["convergence"]
    status = f"converged at round {conv['round']}" if conv["reached"] else "did not converge"
    ok = artifacts.summary["verification_ok"]
    _say(args, f"run {config.algorithm}: {status}, final mean error "
               f"{conv['final_mean_error']:.3e}, verification "
               f"{'ok' if ok else 'FAILED'} -> {artifacts.outdir}")
    return EXIT_OK if ok else EXIT_VERIFICATION


def _cmd_check_schedule(args) -> int:
    config = _load(args)
    L = objectives.lipschitz_bound(config.problem)
    W = config.W if config.W is not None else topology.metropolis_weights(config.graph)
    spectral = topology.spectral_data(W)
    options = config.analysis_options
    if config.algorithm in ("pdg-ds", "dgd"):
        report = schedules.check_diminishing(config.schedule, config.iterations)
    else:
        delta, c = options["delta"], options["c"]
        if delta is None or c is None:
            found = schedules.find_feasible_delta_c(config.schedule, L, spectral.eta,
                                                    spectral.r, config.iterations,
                                                    start=options["start"])
            delta, c = found if found is not None else (0.5, 0.5)
        report = schedules.check_nondiminishing(config.schedule, L, spectral.eta, spectral.r,
                                                delta, c, config.iterations,
                                                start=options["start"])
    outdir = args.out or config.output
    if outdir is not None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "schedule_check.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    failed = [name for name, v in report.verdicts.items() if v != "pass"]
    _say(args, f"check-schedule {config.schedule.family} ({report.regime}): "
               f"{'pass' if report.passed else 'FAIL [' + ', '.join(failed) + ']'}")
    return EXIT_OK if report.passed else EXIT_VERIFICATION


def _cmd_attack(args) -> int:
    config = _load(args)
    if config.adversary is None or "attack" not in config.adversary:
        raise ConfigError("adversary.attack: the attack subcommand needs an attack block")
    artifacts = harness.run_experiment(config, outdir=args.out)
    report = json.loads(artifacts.paths["adversary"].read_text())
    if report["kind"] == "attack-diging":
        _say(args, f"attack diging: recovered target {report['target']}'s first-round "
                   f"gradient with max error {report['gradient_error']:.3e}")
    else:
        _say(args, f"attack ab: gradient estimate for target {report['target']} within "
                   f"relative {report['relative_error']:.3e} of the optimum gradient")
    return EXIT_OK


def _cmd_witness(args) -> int:
    config = _load(args)
    if config.adversary is None or "witness" not in config.adversary:
        raise ConfigError("adversary.witness: the witness subcommand needs a witness block")
    artifacts = harness.run_experiment(config, outdir=args.out)
    report = json.loads(artifacts.paths["adversary"].read_text())
    ok = report["indistinguishable"]
    _say(args, f"witness target {report['target']}: max relative message discrepancy "
               f"{report['max_rel_discrepancy']:.3e} "
               f"({'indistinguishable' if ok else 'DISTINGUISHABLE'})")
    return EXIT_OK if ok else EXIT_VERIFICATION


def _sweep_worker(payload):
    doc, config_dir, seed, outdir = payload
    doc = {**doc, "seed": seed}
    config = harness.parse_config(doc, base_dir=Path(config_dir))
    artifacts = harness.run_experiment(config, outdir=Path(outdir))
    conv = artifacts.summary["convergence"]
    return seed, conv["final_mean_error"], conv["final_consensus"], \
        artifacts.summary["verification_ok"]


def _cmd_sweep(args) -> int:
    try:
        first, last = args.seeds.split("..")
        seeds = list(range(int(first), int(last) + 1))
    except ValueError as exc:
        raise ConfigError(f"--seeds: expected a..b, got {args.seeds!r}") from exc
    if not seeds:
        raise ConfigError("--seeds: empty range")
    config = _load(args)  # validate once before spawning workers
    outdir = args.out or config.output
    if outdir is None:
        raise ConfigError("output: no output directory given (config key or --out)")
    outdir = Path(outdir)
    doc = dict(config.doc)
    if args.iterations is not None:
        doc["iterations"] = args.iterations
    config_dir = str(Path(args.config).parent if Path(args.config).exists() else Path.cwd())
    payloads = [(doc, config_dir, seed, str(outdir / f"seed-{seed}")) for seed in seeds]
    results = []
    with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
        for item in pool.map(_sweep_worker, payloads):
            results.append(item)
    results.sort()
    errors = np.array([r[1] for r in results])
    consensus = np.array([r[2] for r in results])
    all_ok = all(r[3] for r in results)
    aggregate = {
        "seeds": seeds,
        "final_mean_error": {
            "median": float(np.median(errors)),
            "iqr": [float(np.percentile(errors, 25)), float(np.percentile(errors, 75))],
        },
        "final_consensus": {
            "median": float(np.median(consensus)),
            "iqr": [float(np.percentile(consensus, 25)), float(np.percentile(consensus, 75))],
        },
        "verification_ok": all_ok,
    }
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "sweep_summary.json").write_text(json.dumps(aggregate, indent=2, sort_keys=True) + "\n")
    _say(args, f"sweep {len(seeds)} seeds: median final mean error "
               f"{aggregate['final_mean_error']['median']:.3e} "
               f"(IQR {aggregate['final_mean_error']['iqr'][0]:.3e}.."
               f"{aggregate['final_mean_error']['iqr'][1]:.3e})")
    return EXIT_OK if all_ok else EXIT_VERIFICATION


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "check-schedule": _cmd_check_schedule,
        "attack": _cmd_attack,
        "witness": _cmd_witness,
        "sweep": _cmd_sweep,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
