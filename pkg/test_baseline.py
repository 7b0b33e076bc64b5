"""
Tests for the K-modes baseline
"""

import numpy as np
import pytest

from baseline import (KModes, best_restart, generate_baseline_report, kmodes, kmodes_restarts,
                      restart_ari_summary)
from conftest import make_dataset
from data import load_dataset
from models import DomainError, Partition
from summary import adjusted_rand_index


@pytest.fixture
def noisy_groups(rng):
    centers = np.array([[0, 0, 0, 0, 0, 0], [1, 1, 1, 1, 1, 1], [2, 2, 2, 0, 1, 2]])
    codes = np.repeat(centers, 12, axis=0)
    flips = rng.random(codes.shape) < 0.15
    codes = np.where(flips, (codes + 1) % 3, codes)
    return make_dataset(codes, [3] * 6), Partition(np.repeat([1, 2, 3], 12))


def test_single_cluster_takes_column_majorities(rng):
    data = make_dataset([[0, 1], [0, 2], [1, 2], [0, 2]], [2, 3])
    result = KModes(data, 1).fit(rng)
    assert result.modes.tolist() == [[0, 2]]
    assert result.cost == 2
    assert result.partition.K == 1


def test_two_groups_are_recovered(two_groups, rng):
    result = KModes(two_groups, 2).fit(rng)
    assert result.converged
    assert result.cost == 0
    assert adjusted_rand_index(result.partition, [1] * 10 + [2] * 10) == pytest.approx(1.0)


def test_cluster_count_domain(two_groups):
    with pytest.raises(DomainError):
        KModes(two_groups, 21)
    with pytest.raises(DomainError):
        KModes(two_groups, 0)


def test_cost_never_increases(noisy_groups, rng):
    data, _ = noisy_groups
    for result in kmodes_restarts(data, 4, 10, None, rng):
        history = result.cost_history
        assert all(b <= a for a, b in zip(history, history[1:]))
        assert result.cost == history[-1]


def test_labels_are_canonical(noisy_groups, rng):
    data, _ = noisy_groups
    result = kmodes(data, 3, 5, None, rng)
    labels = result.partition.labels
    assert labels[0] == 1
    _, first = np.unique(labels, return_index=True)
    assert np.all(np.diff(first) > 0)
    # modes follow the canonical label order
    model = KModes(data, 3)
    assert result.cost == model.cost(labels - 1, result.modes)


def test_restarts_are_reproducible(noisy_groups):
    data, _ = noisy_groups
    first = kmodes_restarts(data, 3, 6, None, np.random.default_rng(8))
    again = kmodes_restarts(data, 3, 6, None, np.random.default_rng(8))
    assert [r.partition for r in first] == [r.partition for r in again]
    assert [r.restart_index for r in first] == list(range(6))


def test_best_restart_prefers_earliest_on_ties(noisy_groups, rng):
    data, _ = noisy_groups
    results = kmodes_restarts(data, 3, 8, None, rng)
    best = best_restart(results)
    assert best.cost == min(r.cost for r in results)
    assert best.restart_index == min(r.restart_index for r in results if r.cost == best.cost)


def test_restart_ari_summary_and_report(noisy_groups, rng):
    data, truth = noisy_groups
    results = kmodes_restarts(data, 3, 5, None, rng)
    summary = restart_ari_summary(results, truth)
    assert summary["restarts"] == 5
    assert -1.0 <= summary["mean_ari"] <= 1.0
    assert summary["best_cost"] == best_restart(results).cost
    report = generate_baseline_report(results, truth)
    assert "K-MODES BASELINE" in report
    assert "Mean ARI" in report
    assert "Mean ARI" not in generate_baseline_report(results)


def test_too_few_distinct_rows(rng):
    data = make_dataset([[0, 0], [0, 0], [0, 0], [1, 1]], [2, 2])
    result = KModes(data, 3).fit(rng)
    assert result.partition.K == 3


@pytest.mark.zoo
@pytest.mark.slow
def test_zoo_restart_accuracy(zoo_path):
    data, truth = load_dataset(zoo_path, exclude_columns=["animal_name"], truth_column="class_type")
    results = kmodes_restarts(data, 7, 100, None, np.random.default_rng(2024))
    assert restart_ari_summary(results, truth)["mean_ari"] == pytest.approx(0.70, abs=0.05)
