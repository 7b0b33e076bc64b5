"""
Simulation study: synthetic scenarios with known clusters, fitted by the
Hamming mixture and by K-modes at K-1, K and K+1.
"""

import asyncio
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import structlog

from baseline import kmodes
from gibbs import run_chain
from hamming import sample_rows
from mixture import elicit_gamma
from models import (Alphabet, CategoricalDataset, CenteringStatistic, ConvergenceError, DomainError,
                    ModelConfig, Partition, Scenario, StudyOptions)
from numerics import spawn_generator
from summary import adjusted_rand_index, point_estimate_vi

logger = structlog.get_logger(__name__)

REPORT_COLUMNS = ["replicate", "method", "K_est", "ari", "seconds"]
MAX_CENTER_ATTEMPTS = 10000


def _cycled_modalities(p: int) -> Tuple[int, ...]:
    return tuple(3 + j % 3 for j in range(p))


SCENARIOS: Dict[int, Scenario] = {
    1: Scenario(id=1, p=15, K=3, n_k=150, sigma=0.2, modality_counts=_cycled_modalities(15)),
    2: Scenario(id=2, p=15, K=3, n_k=25, sigma=0.5, modality_counts=_cycled_modalities(15)),
    3: Scenario(id=3, p=10, K=4, n_k=75, sigma=0.5, modality_counts=_cycled_modalities(10)),
    4: Scenario(id=4, p=10, K=4, n_k=45, sigma=0.7, modality_counts=_cycled_modalities(10)),
}


def get_scenario(scenario_id: int) -> Scenario:
    if scenario_id not in SCENARIOS:
        raise DomainError(f"unknown scenario {scenario_id}; choose from {sorted(SCENARIOS)}")
    return SCENARIOS[scenario_id]


def default_min_separation(p: int) -> int:
    return int(math.ceil(p / 2))


def draw_centers(scenario: Scenario, rng: np.random.Generator, min_separation: int) -> np.ndarray:
    """Uniform centers, redrawn until every pair is at least min_separation apart"""
    m = np.asarray(scenario.modality_counts)
    upper = np.triu_indices(scenario.K, k=1)
    for _ in range(MAX_CENTER_ATTEMPTS):
        centers = rng.integers(0, m[None, :], size=(scenario.K, scenario.p))
        distances = (centers[:, None, :] != centers[None, :, :]).sum(axis=2)
        if scenario.K == 1 or distances[upper].min() >= min_separation:
            return centers
    raise ConvergenceError(f"no centers with pairwise distance >= {min_separation} after "
                           f"{MAX_CENTER_ATTEMPTS} attempts", iterations=MAX_CENTER_ATTEMPTS)


def generate_scenario(scenario_id: int, rng: np.random.Generator,
                      min_separation: Optional[int] = None) -> Tuple[CategoricalDataset, Partition]:
    """Dataset and true partition for one scenario with a common scale"""
    scenario = get_scenario(scenario_id)
    if min_separation is None:
        min_separation = default_min_separation(scenario.p)
    m = np.asarray(scenario.modality_counts, dtype=np.int64)
    centers = draw_centers(scenario, rng, min_separation)
    z = np.repeat(np.arange(scenario.K), scenario.n_k)
    scales = np.full((scenario.n, scenario.p), scenario.sigma)
    codes = sample_rows(centers[z], scales, m, rng)

    alphabets = tuple(Alphabet(tuple(str(h) for h in range(mj))) for mj in m)
    names = tuple(f"V{j + 1}" for j in range(scenario.p))
    dataset = CategoricalDataset(codes=codes, alphabets=alphabets, variable_names=names)
    return dataset, Partition(z + 1)


@lru_cache(maxsize=64)
def _elicited_gamma(n: int, lambda_: float, k_target: int, statistic: str) -> float:
    return elicit_gamma(n, lambda_, k_target, statistic)


def fit_settings(scenario: Scenario, options: StudyOptions) -> Tuple[float, float]:
    """(gamma, lambda) for a scenario; lambda defaults to the true K and gamma is
    elicited so the prior on K centers on it"""
    lambda_ = float(options.lambda_ if options.lambda_ is not None else scenario.K)
    if options.gamma is not None:
        return float(options.gamma), lambda_
    return _elicited_gamma(scenario.n, lambda_, scenario.K, options.statistic.value), lambda_


def _replicate_seed(seed: int, scenario_id: int, replicate: int) -> int:
    return int(np.random.SeedSequence([seed, scenario_id, replicate]).generate_state(1)[0])


def run_replicate(scenario_id: int, replicate: int, seed: int, options: StudyOptions,
                  record_timings: bool = True) -> List[Dict[str, Any]]:
    """One replicate: generate data, fit the mixture and K-modes, score against truth"""
    scenario = get_scenario(scenario_id)
    rng = spawn_generator(seed, scenario_id, replicate)
    data, truth = generate_scenario(scenario_id, rng, options.min_separation)
    gamma, lambda_ = fit_settings(scenario, options)
    config = ModelConfig.for_dataset(data, gamma=gamma, lambda_=lambda_)

    def _seconds(started: float) -> float:
        return time.perf_counter() - started if record_timings else float("nan")

    rows = []
    started = time.perf_counter()
    trace = run_chain(data, config, options.iters, options.burnin, options.thin,
                      seed=_replicate_seed(seed, scenario_id, replicate))
    estimate = point_estimate_vi(trace, options.max_candidates)
    rows.append({"replicate": replicate, "method": "HMM", "K_est": estimate.K,
                 "ari": adjusted_rand_index(estimate, truth), "seconds": _seconds(started)})

    for offset, label in ((-1, "K-modes(K-1)"), (0, "K-modes(K)"), (1, "K-modes(K+1)")):
        k = scenario.K + offset
        if k < 1:
            continue
        started = time.perf_counter()
        result = kmodes(data, k, options.kmodes_restarts, options.kmodes_max_iter, rng)
        rows.append({"replicate": replicate, "method": label, "K_est": result.partition.K,
                     "ari": adjusted_rand_index(result.partition, truth), "seconds": _seconds(started)})

    logger.info("replicate_finished", scenario=scenario_id, replicate=replicate,
                hmm_k=estimate.K, hmm_ari=round(rows[0]["ari"], 4))
    return rows


@dataclass
class StudyReport:
    """Per-replicate rows, quartile summary and the assumptions behind them"""
    scenario: Scenario
    rows: pd.DataFrame
    assumptions: Dict[str, Any] = field(default_factory=dict)

    @property
    def summary(self) -> pd.DataFrame:
        grouped = self.rows.groupby("method", sort=False)
        summary = grouped["ari"].quantile([0.25, 0.5, 0.75]).unstack()
        summary.columns = ["ari_q1", "ari_median", "ari_q3"]
        summary["K_est_median"] = grouped["K_est"].median()
        summary["K_est_mode"] = grouped["K_est"].agg(lambda k: int(k.mode().min()))
        return summary.reset_index()


class StudyRunner:
    """Runs simulation replicates, in a process pool when workers > 1"""

    def __init__(self, options: Optional[StudyOptions] = None, workers: int = 1,
                 record_timings: bool = True):
        self.options = options or StudyOptions()
        self.workers = max(1, int(workers))
        self.record_timings = record_timings

    def assumptions(self, scenario: Scenario) -> Dict[str, Any]:
        gamma, lambda_ = fit_settings(scenario, self.options)
        return {
            "scenario": scenario.id,
            "n": scenario.n,
            "p": scenario.p,
            "K": scenario.K,
            "sigma": scenario.sigma,
            "modality_counts": "cycled 3,4,5",
            "min_center_separation": (self.options.min_separation
                                      if self.options.min_separation is not None
                                      else default_min_separation(scenario.p)),
            "lambda": lambda_,
            "gamma": round(gamma, 6),
            "gamma_source": "fixed" if self.options.gamma is not None
                            else f"elicited ({self.options.statistic.value} of K = {scenario.K})",
            "iters": self.options.iters,
            "burnin": self.options.burnin,
            "thin": self.options.thin,
            "kmodes_restarts": self.options.kmodes_restarts,
        }

    async def run_study_async(self, scenario_id: int, replicates: int, seed: int) -> StudyReport:
        """Replicates run concurrently; rows are assembled by replicate index"""
        if replicates < 1:
            raise DomainError(f"replicates must be >= 1, got {replicates}")
        scenario = get_scenario(scenario_id)
        assumptions = self.assumptions(scenario)
        logger.info("study_started", scenario=scenario_id, replicates=replicates, seed=seed,
                    workers=self.workers)

        try:
            if self.workers <= 1:
                results = [run_replicate(scenario_id, r, seed, self.options, self.record_timings)
                           for r in range(1, replicates + 1)]
            else:
                loop = asyncio.get_running_loop()
                with ProcessPoolExecutor(max_workers=min(self.workers, replicates)) as executor:
                    tasks = [loop.run_in_executor(executor, run_replicate, scenario_id, r, seed,
                                                  self.options, self.record_timings)
                             for r in range(1, replicates + 1)]
                    results = list(await asyncio.gather(*tasks))
        except Exception as e:
            logger.error("study_failed", scenario=scenario_id, error=str(e))
            raise

        rows = pd.DataFrame([row for replicate_rows in results for row in replicate_rows],
                            columns=REPORT_COLUMNS)
        logger.info("study_finished", scenario=scenario_id, rows=len(rows))
        return StudyReport(scenario=scenario, rows=rows, assumptions=assumptions)

    def run_study(self, scenario_id: int, replicates: int, seed: int) -> StudyReport:
        return asyncio.run(self.run_study_async(scenario_id, replicates, seed))


def run_study(scenario_id: int, replicates: int, overrides: Optional[Dict[str, Any]] = None,
              seed: int = 0, workers: int = 1, record_timings: bool = True) -> StudyReport:
    """Run a simulation study with StudyOptions overrides"""
    options = StudyOptions.parse_obj(overrides or {})
    return StudyRunner(options, workers, record_timings).run_study(scenario_id, replicates, seed)


def generate_study_report(report: StudyReport) -> str:
    """Study report as delimited text: assumption header, rows, then quartiles"""
    buffer = io.StringIO()
    for key, value in report.assumptions.items():
        buffer.write(f"# {key}: {value}\n")
    report.rows.to_csv(buffer, index=False, float_format="%.6f", lineterminator="\n")
    buffer.write("\n# summary\n")
    report.summary.to_csv(buffer, index=False, float_format="%.6f", lineterminator="\n")
    return buffer.getvalue()
