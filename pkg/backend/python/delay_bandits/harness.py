"""
Experiment orchestration: seeded sweeps, parallel runs, aggregation and audits
"""

import json
import logging
import math
import os
import re
from dataclasses import dataclass, field
from itertools import combinations
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import settings
from .contextual import make_context_distribution, run_reduction
from .core import generate_instance, load_instance
from .delayenv import ContextualDelayedEnv, RunRecord, read_trace, write_trace
from .elim import DiagnosticsLog, run_elimination
from .errors import ConfigError
from .linucb import run_linucb
from .models import AlgorithmName, AlgorithmSpec, ExperimentConfig, RunSummary
from .spanner import certify, compute_spanner

logger = logging.getLogger(__name__)

TRACE_DIR = "traces"
DIAGNOSTICS_DIR = "diagnostics"
AGGREGATE_FILE = "aggregate.csv"
SUMMARY_FILE = "summary.json"
CONFIG_FILE = "config.json"
AGGREGATE_COLUMNS = ["t", "algorithm", "mean_regret", "std_regret"]

# Stream tags of the per-run seed sequences
ENV_STREAM = 0
CONTEXT_STREAM = 1

STRICT_VERDICT = "strict ordering in all seeds"
MEAN_VERDICT = "ordering in mean only"
TIED_VERDICT = "tied"

_TRACE_NAME = re.compile(r"^(?P<label>.+)_seed(?P<seed>\d+)\.csv$")


def run_streams(master_seed: int, seed: int) -> Tuple[np.random.Generator, np.random.Generator]:
    """Payoff and context generators of one seed, shared by every algorithm"""
    # Keyed by seed only, not by algorithm name: every algorithm of a seed
    # faces the same payoff noise and contexts
    env = np.random.default_rng(np.random.SeedSequence([master_seed, seed, ENV_STREAM]))
    context = np.random.default_rng(np.random.SeedSequence([master_seed, seed, CONTEXT_STREAM]))
    return env, context


def trace_name(label: str, seed: int) -> str:
    return f"{label}_seed{seed}.csv"


@dataclass(frozen=True)
class RunTask:
    config: ExperimentConfig
    algorithm: AlgorithmSpec
    seed: int
    output_dir: str
    downsample: int = 1


@dataclass
class RunResult:
    summary: RunSummary
    rounds: np.ndarray
    cum_regret: np.ndarray


@dataclass
class AggregateResult:
    aggregate: pd.DataFrame
    runs: List[RunSummary]
    output_dir: Path
    config_hash: str
    table: Optional["SweepSummary"] = None


@dataclass
class SweepSummary:
    table: pd.DataFrame
    verdicts: List[Dict[str, Any]] = field(default_factory=list)


def _execute(task: RunTask, diagnostics: Optional[DiagnosticsLog]) -> RunRecord:
    config, spec = task.config, task.algorithm
    instance = generate_instance(task.seed, config.n, config.K, config.D,
                                 config.payoff_kind, config.noise_law)
    env_rng, context_rng = run_streams(config.master_seed, task.seed)

    if spec.name is AlgorithmName.LINUCB:
        return run_linucb(instance, config.T, env_rng, reg=spec.reg)

    if spec.name is AlgorithmName.CONTEXTUAL:
        distribution = make_context_distribution(config.context, config.n, config.K, context_rng)
        env = ContextualDelayedEnv(instance.theta_vector(), distribution, config.T, config.D,
                                   env_rng, noise_law=config.noise_law, context_rng=context_rng)
        return run_reduction(env, config.cover_cfg, b_mode=config.b_mode, beta=config.beta,
                             spanner_budget=config.spanner_budget, diagnostics=diagnostics)

    epsilon = spec.epsilon if spec.name is AlgorithmName.ELIM_MISSPECIFIED else 0.0
    return run_elimination(instance, config.T, env_rng, epsilon=epsilon, b_mode=config.b_mode,
                           beta=config.beta, spanner_budget=config.spanner_budget,
                           first_epoch=config.first_epoch, diagnostics=diagnostics)


def run_one(task: RunTask) -> RunResult:
    """Run one (algorithm, seed) pair and write its trace and diagnostics"""
    label = task.algorithm.label
    out = Path(task.output_dir)
    diagnostics = None
    if task.algorithm.name is not AlgorithmName.LINUCB:
        diagnostics = DiagnosticsLog(out / DIAGNOSTICS_DIR / f"{label}_seed{task.seed}.jsonl")
    try:
        record = _execute(task, diagnostics)
    finally:
        if diagnostics is not None:
            diagnostics.close()

    write_trace(record, out / TRACE_DIR / trace_name(label, task.seed), task.downsample)
    frame = record.to_frame()
    if task.downsample > 1:
        frame = frame[frame["t"] % task.downsample == 0]

    metadata = record.metadata
    rho = metadata.get("rho_max")
    summary = RunSummary(
        algorithm=label,
        seed=task.seed,
        final_regret=record.total,
        rounds=len(record.rows),
        epochs=int(metadata.get("epochs", 0)),
        eliminated=int(metadata.get("eliminated", 0)),
        rho_max=rho if rho is not None and math.isfinite(rho) else None,
        dropped_events=int(metadata.get("dropped_events", 0)),
    )
    logger.info(f"{label} seed {task.seed}: final regret {summary.final_regret:.2f}")
    return RunResult(summary=summary, rounds=frame["t"].to_numpy(), cum_regret=frame["cum_regret"].to_numpy())


def aggregate_curves(curves: Dict[str, List[Tuple[int, np.ndarray, np.ndarray]]]) -> pd.DataFrame:
    """Mean and population std of cumulative regret per algorithm and round; seeds in ascending order"""
    frames = []
    for label, runs in curves.items():
        runs = sorted(runs, key=lambda run: run[0])
        rounds = runs[0][1]
        stacked = np.vstack([run[2] for run in runs])
        frames.append(pd.DataFrame({
            "t": rounds,
            "algorithm": label,
            "mean_regret": stacked.mean(axis=0),
            "std_regret": stacked.std(axis=0, ddof=0),
        }))
    return pd.concat(frames, ignore_index=True)[AGGREGATE_COLUMNS]


def summarize(runs: List[RunSummary]) -> SweepSummary:
    """
    Final-regret table per algorithm and pairwise ordering verdicts

    A pair is in strict ordering when the better algorithm (lower mean) has
    the lower final regret on every seed the two share.
    """
    frame = pd.DataFrame([run.model_dump() for run in runs])
    grouped = frame.groupby("algorithm", sort=False)["final_regret"]
    table = pd.DataFrame({
        "mean_final": grouped.mean(),
        "std_final": grouped.std(ddof=0),
        "seeds": grouped.size(),
    }).reset_index()

    finals = {label: dict(zip(group["seed"], group["final_regret"]))
              for label, group in frame.groupby("algorithm", sort=False)}
    means = table.set_index("algorithm")["mean_final"]
    verdicts = []
    for first, second in combinations(table["algorithm"], 2):
        better, worse = (first, second) if means[first] <= means[second] else (second, first)
        shared = sorted(set(finals[better]) & set(finals[worse]))
        if means[better] == means[worse]:
            verdict = TIED_VERDICT
        elif shared and all(finals[better][s] < finals[worse][s] for s in shared):
            verdict = STRICT_VERDICT
        else:
            verdict = MEAN_VERDICT
        verdicts.append({
            "better": better,
            "worse": worse,
            "mean_better": float(means[better]),
            "mean_worse": float(means[worse]),
            "verdict": verdict,
        })
    return SweepSummary(table=table, verdicts=verdicts)


def _prepare_output(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"Cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise ConfigError(f"Output directory {path} is not writable")
    return path


def run_sweep(config: ExperimentConfig, output_dir: Optional[str] = None, jobs: Optional[int] = None,
              downsample: int = 1, progress: bool = True) -> AggregateResult:
    """
    Run every (algorithm, seed) pair of a configuration

    Parameters:
    -----------
    config : ExperimentConfig
        Validated sweep configuration
    output_dir : str, optional
        Overrides config.output_dir and DELAY_BANDITS_OUTPUT_DIR
    jobs : int, optional
        Worker processes; defaults to DELAY_BANDITS_JOBS
    downsample : int, default=1
        Keep every downsample-th round in traces and aggregates
    progress : bool, default=True
        Show a progress bar

    Returns:
    --------
    result : AggregateResult
        Aggregate frame, per-run summaries and where they were written
    """
    if downsample < 1:
        raise ConfigError(f"Downsample factor must be positive, got {downsample}")
    out = _prepare_output(Path(output_dir or config.output_dir or settings.OUTPUT_DIR))
    jobs = max(int(jobs if jobs is not None else settings.JOBS), 1)

    (out / CONFIG_FILE).write_text(config.model_dump_json(by_alias=True, indent=2), encoding="utf-8")
    tasks = [RunTask(config, spec, seed, str(out), downsample)
             for spec in config.algorithms for seed in config.seeds]
    logger.info(f"Running {len(tasks)} runs with {jobs} worker(s) into {out}")

    with tqdm(total=len(tasks), desc="runs", disable=not progress) as bar:
        if jobs > 1:
            with Pool(processes=min(jobs, len(tasks))) as pool:
                results = []
                for result in pool.imap(run_one, tasks):
                    results.append(result)
                    bar.update()
        else:
            results = []
            for task in tasks:
                results.append(run_one(task))
                bar.update()

    curves: Dict[str, List[Tuple[int, np.ndarray, np.ndarray]]] = {}
    for result in results:
        curves.setdefault(result.summary.algorithm, []).append(
            (result.summary.seed, result.rounds, result.cum_regret))
    aggregate = aggregate_curves(curves)
    aggregate.to_csv(out / AGGREGATE_FILE, index=False)

    runs = [result.summary for result in results]
    table = summarize(runs)
    config_hash = config.config_hash()
    rhos = [run.rho_max for run in runs if run.rho_max is not None]
    summary = {
        "configHash": config_hash,
        "downsample": downsample,
        "runs": [run.model_dump() for run in runs],
        "finals": table.table.to_dict(orient="records"),
        "verdicts": table.verdicts,
        "spanner": {
            "rhoMax": max(rhos) if rhos else None,
            "rhoMean": float(np.mean(rhos)) if rhos else None,
        },
    }
    (out / SUMMARY_FILE).write_text(json.dumps(summary, indent=2), encoding="utf-8")
    logger.info(f"Sweep written to {out}")
    return AggregateResult(aggregate=aggregate, runs=runs, output_dir=out,
                           config_hash=config_hash, table=table)


def load_sweep(in_dir) -> AggregateResult:
    """Reload the aggregate and per-run summaries written by run_sweep"""
    in_dir = Path(in_dir)
    summary_path = in_dir / SUMMARY_FILE
    if not summary_path.exists():
        raise FileNotFoundError(f"No {SUMMARY_FILE} in {in_dir}")
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    runs = [RunSummary.model_validate(run) for run in summary["runs"]]
    aggregate = pd.read_csv(in_dir / AGGREGATE_FILE, float_precision="round_trip")
    return AggregateResult(aggregate=aggregate, runs=runs, output_dir=in_dir,
                           config_hash=summary["configHash"], table=summarize(runs))


@dataclass
class AuditReport:
    traces: int = 0
    prefix_violations: int = 0
    monotonic_violations: int = 0
    max_aggregate_diff: float = 0.0
    problems: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems


def audit(in_dir, tolerance: float = 1e-9) -> AuditReport:
    """
    Recompute aggregates from the trace files and check every trace

    Each trace must have a non-decreasing cumulative regret that equals the
    prefix sum of its gaps (the prefix check needs undownsampled traces).
    """
    in_dir = Path(in_dir)
    summary = json.loads((in_dir / SUMMARY_FILE).read_text(encoding="utf-8"))
    full = summary.get("downsample", 1) == 1
    report = AuditReport()

    curves: Dict[str, List[Tuple[int, np.ndarray, np.ndarray]]] = {}
    for path in sorted((in_dir / TRACE_DIR).glob("*.csv")):
        match = _TRACE_NAME.match(path.name)
        if match is None:
            continue
        frame = read_trace(path)
        report.traces += 1
        cum = frame["cum_regret"].to_numpy()
        if np.any(np.diff(cum) < -tolerance):
            report.monotonic_violations += 1
            report.problems.append(f"{path.name}: cumulative regret decreases")
        if full:
            drift = np.abs(np.cumsum(frame["gap"].to_numpy()) - cum)
            if drift.size and drift.max() > tolerance * max(len(cum), 1):
                report.prefix_violations += 1
                report.problems.append(f"{path.name}: cumulative regret is not the prefix sum of gaps")
        curves.setdefault(match["label"], []).append(
            (int(match["seed"]), frame["t"].to_numpy(), cum))

    if not curves:
        report.problems.append(f"No traces under {in_dir / TRACE_DIR}")
        return report

    recomputed = aggregate_curves(curves)
    stored = pd.read_csv(in_dir / AGGREGATE_FILE, float_precision="round_trip")
    merged = stored.merge(recomputed, on=["t", "algorithm"], how="outer",
                          suffixes=("_stored", "_traces"), indicator=True)
    if (merged["_merge"] != "both").any():
        report.problems.append("Aggregate rows do not match the trace rounds")
    both = merged[merged["_merge"] == "both"]
    diffs = np.concatenate([
        np.abs(both["mean_regret_stored"] - both["mean_regret_traces"]).to_numpy(),
        np.abs(both["std_regret_stored"] - both["std_regret_traces"]).to_numpy(),
    ])
    report.max_aggregate_diff = float(diffs.max()) if diffs.size else 0.0
    if report.max_aggregate_diff > tolerance:
        report.problems.append(f"Aggregate differs from traces by {report.max_aggregate_diff:.3e}")
    return report


def spanner_check(instance_path, size_budget: Optional[int] = None) -> Dict[str, Any]:
    """Certify the spanner of a saved instance (3n members unless a budget is given)"""
    instance = load_instance(instance_path)
    actions = instance.action_matrix()
    spanner = compute_spanner(actions, size_budget if size_budget is not None else 3 * instance.n)
    decomposition = certify(actions, spanner)
    return {
        "n": instance.n,
        "K": instance.K,
        "size": spanner.size,
        "members": list(spanner.member_indices),
        "rho": decomposition.norm_factor,
        "reconstructionError": decomposition.reconstruction_error,
        "approximate": decomposition.approximate,
    }


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    return ExperimentConfig.model_validate(json.loads(path.read_text(encoding="utf-8")))
