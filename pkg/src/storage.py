"""
Run-directory persistence for fits: config echo, chain traces and summaries
"""
import json
import logging
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from models import (CategoricalDataset, ChainTrace, ClusterSummary, ConfigurationError, Partition,
                    SimilarityMatrix)

logger = logging.getLogger(__name__)

SCALAR_COLUMNS = ["iteration", "K", "L", "u", "shared_sigma", "acceptance_rate"]


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return None if np.isnan(value) else float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


class RunStore:
    """Reads and writes the artifacts of one run directory"""

    def __init__(self, root: Union[str, Path], create: bool = False):
        self.root = Path(root)
        if create:
            self.root.mkdir(parents=True, exist_ok=True)
        elif not self.root.is_dir():
            raise ConfigurationError(f"Run directory not found: {self.root}")

    @contextmanager
    def open_for_write(self, relative: str):
        """Write through a temporary file that replaces the target on success"""
        target = self.root / relative
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_name(target.name + ".tmp")
        handle = open(tmp, "w", encoding="utf-8", newline="")
        try:
            yield handle
            handle.close()
            os.replace(tmp, target)
        except Exception as e:
            handle.close()
            tmp.unlink(missing_ok=True)
            logger.error(f"Failed writing {target}: {e}")
            raise

    def _path(self, relative: str) -> Path:
        path = self.root / relative
        if not path.is_file():
            raise ConfigurationError(f"Missing run artifact: {path}")
        return path

    # JSON artifacts
    def save_json(self, relative: str, payload: Dict[str, Any]) -> Path:
        with self.open_for_write(relative) as handle:
            json.dump(payload, handle, indent=2, sort_keys=True, default=_jsonable)
            handle.write("\n")
        return self.root / relative

    def load_json(self, relative: str) -> Dict[str, Any]:
        return json.loads(self._path(relative).read_text(encoding="utf-8"))

    def save_config(self, echo: Dict[str, Any]) -> Path:
        return self.save_json("config.json", echo)

    def load_config(self) -> Dict[str, Any]:
        return self.load_json("config.json")

    def save_dataset(self, data: CategoricalDataset) -> Path:
        return self.save_json("dataset.json", data.describe())

    def save_summary(self, summary: Dict[str, Any]) -> Path:
        return self.save_json("summary.json", summary)

    def save_clusters(self, clusters: List[ClusterSummary]) -> Path:
        return self.save_json("clusters.json", {"clusters": [c.to_dict() for c in clusters]})

    # Chain traces
    def chain_dir(self, chain_index: int) -> str:
        return f"chain_{chain_index}"

    def chain_indices(self) -> List[int]:
        indices = sorted(int(p.name.split("_", 1)[1]) for p in self.root.glob("chain_*")
                         if p.is_dir() and p.name.split("_", 1)[1].isdigit())
        if not indices:
            raise ConfigurationError(f"No chain directories in {self.root}")
        return indices

    def save_trace(self, trace: ChainTrace, chain_index: int) -> None:
        """trace_scalar.csv, allocations.csv and meta.json for one chain"""
        nan = np.full(trace.recorded, np.nan)
        scalars = pd.DataFrame({
            "iteration": trace.iterations,
            "K": trace.k,
            "L": trace.l,
            "u": trace.u,
            "shared_sigma": trace.shared_sigma if trace.shared_sigma is not None else nan,
            "acceptance_rate": trace.acceptance_rate if trace.acceptance_rate is not None else nan,
        }, columns=SCALAR_COLUMNS)
        base = self.chain_dir(chain_index)
        with self.open_for_write(f"{base}/trace_scalar.csv") as handle:
            scalars.to_csv(handle, index=False, float_format="%.10g", lineterminator="\n")
        with self.open_for_write(f"{base}/allocations.csv") as handle:
            np.savetxt(handle, np.asarray(trace.allocations), fmt="%d", delimiter=",")
        self.save_json(f"{base}/meta.json", trace.metadata)
        logger.info(f"Saved chain {chain_index} trace ({trace.recorded} records) to {self.root / base}")

    def load_trace(self, chain_index: int) -> ChainTrace:
        """Scalar and allocation traces; parameter snapshots are not persisted"""
        base = self.chain_dir(chain_index)
        scalars = pd.read_csv(self._path(f"{base}/trace_scalar.csv"))
        if list(scalars.columns) != SCALAR_COLUMNS:
            raise ConfigurationError(f"Unexpected trace columns in {base}: {list(scalars.columns)}")
        allocations = np.loadtxt(self._path(f"{base}/allocations.csv"), delimiter=",",
                                 dtype=np.int64, ndmin=2)
        if allocations.shape[0] != len(scalars):
            raise ConfigurationError(f"{base}: {allocations.shape[0]} allocation rows for "
                                     f"{len(scalars)} scalar rows")
        shared = scalars["shared_sigma"].to_numpy(dtype=float)
        acceptance = scalars["acceptance_rate"].to_numpy(dtype=float)
        return ChainTrace(
            iterations=scalars["iteration"].to_numpy(dtype=np.int64),
            k=scalars["K"].to_numpy(dtype=np.int64),
            l=scalars["L"].to_numpy(dtype=np.int64),
            u=scalars["u"].to_numpy(dtype=float),
            allocations=allocations,
            shared_sigma=None if np.all(np.isnan(shared)) else shared,
            acceptance_rate=None if np.all(np.isnan(acceptance)) else acceptance,
            metadata=self.load_json(f"{base}/meta.json"),
        )

    def load_traces(self) -> List[ChainTrace]:
        return [self.load_trace(i) for i in self.chain_indices()]

    # Partition-level artifacts
    def save_psm(self, psm: SimilarityMatrix) -> Path:
        with self.open_for_write("psm.csv") as handle:
            np.savetxt(handle, psm.values, fmt="%.6f", delimiter=",")
        return self.root / "psm.csv"

    def load_psm(self) -> SimilarityMatrix:
        return SimilarityMatrix(values=np.loadtxt(self._path("psm.csv"), delimiter=",", ndmin=2))

    def save_partition(self, partition: Partition) -> Path:
        frame = pd.DataFrame({"index": np.arange(1, partition.n + 1), "label": partition.labels})
        with self.open_for_write("partition.csv") as handle:
            frame.to_csv(handle, index=False, lineterminator="\n")
        return self.root / "partition.csv"

    def load_partition(self) -> Partition:
        frame = pd.read_csv(self._path("partition.csv"))
        return Partition(frame["label"].to_numpy(dtype=np.int64))

    def save_k_distribution(self, frame: pd.DataFrame) -> Path:
        with self.open_for_write("k_distribution.csv") as handle:
            frame.to_csv(handle, index=False, float_format="%.10g", lineterminator="\n")
        return self.root / "k_distribution.csv"

    def load_summary(self) -> Optional[Dict[str, Any]]:
        path = self.root / "summary.json"
        return self.load_json("summary.json") if path.is_file() else None
