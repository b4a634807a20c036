"""Long-horizon checks of the synthetic study; run with `pytest -m slow`"""

import json
from pathlib import Path

import numpy as np
import pytest

from delay_bandits.contextual import (
    ContextualReduction,
    MixtureContext,
    build_cover,
    expected_g,
    misspecification_level,
    run_reduction,
)
from delay_bandits.core import random_actions
from delay_bandits.delayenv import ContextualDelayedEnv, read_trace
from delay_bandits.elim import DiagnosticsLog
from delay_bandits.harness import load_config, run_sweep

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"

pytestmark = pytest.mark.slow


def _sweeps(tmp_path_factory, prefix):
    sweeps = {}
    for n in (6, 8, 10):
        config = load_config(CONFIG_DIR / f"{prefix}_n{n}.json")
        out = tmp_path_factory.mktemp(f"{prefix}_n{n}")
        sweeps[n] = run_sweep(config, output_dir=str(out), jobs=4, progress=False)
    return sweeps


def _flattened_runs(sweep, label, ratio):
    """Seeds whose regret over the last fifth is at most ratio times that of the first fifth"""
    flattened = 0
    for run in sweep.runs:
        if run.algorithm != label:
            continue
        trace = Path(sweep.output_dir) / "traces" / f"{label}_seed{run.seed}.csv"
        cum = read_trace(trace)["cum_regret"].to_numpy()
        fifth = len(cum) // 5
        early = cum[fifth - 1]
        late = cum[-1] - cum[-fifth - 1]
        flattened += late <= ratio * early
    return flattened


@pytest.fixture(scope="module")
def study_sweeps(tmp_path_factory):
    return _sweeps(tmp_path_factory, "study")


@pytest.fixture(scope="module")
def reward_sweeps(tmp_path_factory):
    return _sweeps(tmp_path_factory, "study_reward")


@pytest.mark.parametrize("n", [6, 8, 10])
def test_elimination_beats_linucb(study_sweeps, n):
    table = study_sweeps[n].table.table.set_index("algorithm")
    assert table.loc["elim-loss", "mean_final"] < table.loc["linucb", "mean_final"]


def test_elimination_regret_flattens(study_sweeps):
    assert _flattened_runs(study_sweeps[6], "elim-loss", 0.25) >= 6


@pytest.mark.parametrize("n", [6, 8, 10])
def test_reward_elimination_removes_actions(reward_sweeps, n):
    runs = [run for run in reward_sweeps[n].runs if run.algorithm == "elim-reward"]
    assert len(runs) == 8
    assert all(run.eliminated > 0 for run in runs)


@pytest.mark.parametrize("n", [6, 8, 10])
def test_reward_elimination_regret_flattens(reward_sweeps, n):
    assert _flattened_runs(reward_sweeps[n], "elim-reward", 0.5) >= 6


def test_reward_sweep_reports_ordering_verdict(reward_sweeps):
    summary = json.loads((Path(reward_sweeps[6].output_dir) / "summary.json").read_text())
    pairs = {frozenset((v["better"], v["worse"])) for v in summary["verdicts"]}
    assert frozenset(("elim-reward", "linucb")) in pairs


def test_contextual_reduction_on_distinct_action_sets(tmp_path):
    horizon, max_delay = 4096, 50.0
    cover = build_cover(2)
    for seed in range(10):
        context_rng = np.random.default_rng(100 + seed)
        action_sets = [random_actions(context_rng, 10, 2) for _ in range(2)]
        assert not np.allclose(np.sort(action_sets[0], axis=0), np.sort(action_sets[1], axis=0))
        distribution = MixtureContext(action_sets)

        env = ContextualDelayedEnv([0.6, 0.8], distribution, horizon, max_delay,
                                   np.random.default_rng(seed), context_rng=context_rng)
        path = tmp_path / f"reduction_seed{seed}.jsonl"
        with DiagnosticsLog(path) as diagnostics:
            reduction = ContextualReduction(cover, horizon, max_delay, diagnostics=diagnostics)
            record = run_reduction(env, reduction=reduction)

        levels = [misspecification_level(m, horizon, cover.size) for m in range(1, 13)]
        assert record.metadata["epsilons"] == pytest.approx(levels)

        final = reduction.estimates[-1]
        assert final.rounds == horizon // 2
        deviation = np.abs(final.vectors - expected_g(distribution, cover)).max()
        assert deviation <= 0.1

        # At this horizon the default confidence level leaves every learner without eliminations
        epochs = [json.loads(line) for line in path.read_text().splitlines()]
        assert epochs
        assert all(epoch["eliminated"] == [] for epoch in epochs)
        assert all(epoch["slack"] > 0 for epoch in epochs)
