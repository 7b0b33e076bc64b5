"""
Data models for hammix
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, validator

from config import hig_defaults, sampler_config


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class HammixError(Exception):
    """Base class for all hammix errors"""


class InputValidationError(HammixError, ValueError):
    """Bad user input: data, arguments or configuration"""


class DataValidationError(InputValidationError):
    """Dataset parsing or encoding failure"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DomainError(InputValidationError):
    """Argument outside the domain of a function"""


class ConfigurationError(InputValidationError):
    """Inconsistent run configuration"""


class NumericalError(HammixError, ArithmeticError):
    """Numerical or sampling failure"""


class ConvergenceError(NumericalError):
    """Series or iteration failed to converge"""

    def __init__(self, message: str, partial: Optional[float] = None, iterations: Optional[int] = None):
        self.partial = partial
        self.iterations = iterations
        super().__init__(f"{message} (partial={partial}, iterations={iterations})")


class QuadratureError(NumericalError):
    """Adaptive quadrature did not reach its tolerance"""

    def __init__(self, message: str, achieved: float):
        self.achieved = achieved
        super().__init__(f"{message} (achieved tolerance {achieved:.3e})")


class PriorNormalizationError(NumericalError):
    """Prior on K failed to normalize"""

    def __init__(self, message: str, defect: float):
        self.defect = defect
        super().__init__(f"{message} (defect {defect:.3e})")


class SamplerError(NumericalError):
    """A sampler state or algorithm invariant was violated"""


# ---------------------------------------------------------------------------
# Enumerations
# ---------------------------------------------------------------------------

class CenteringStatistic(str, Enum):
    """Statistic of the prior on K matched during elicitation"""
    MEAN = "mean"
    MODE = "mode"


class ScaleDirection(str, Enum):
    """Direction of the sigma / epsilon correspondence"""
    SIGMA_TO_EPSILON = "sigma_to_epsilon"
    EPSILON_TO_SIGMA = "epsilon_to_sigma"


class CdfMethod(str, Enum):
    """Evaluation method for the HIG omega CDF"""
    QUADRATURE = "quadrature"
    BETA = "beta"
    HYPERGEOMETRIC = "hypergeometric"


class ClusteringMethod(str, Enum):
    """Methods compared in simulation studies"""
    HMM = "hmm"
    KMODES = "kmodes"


# ---------------------------------------------------------------------------
# Numerics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SignedLogValue:
    """A real number stored as (log |x|, sign)"""
    log_magnitude: float
    sign: int

    def __post_init__(self):
        if self.sign not in (-1, 0, 1):
            raise DomainError(f"sign must be -1, 0 or 1, got {self.sign}")
        if self.sign == 0 and self.log_magnitude != -np.inf:
            raise DomainError("zero value must carry log magnitude -inf")

    @classmethod
    def zero(cls) -> "SignedLogValue":
        return cls(-np.inf, 0)

    @classmethod
    def from_log(cls, log_magnitude: float, sign: int = 1) -> "SignedLogValue":
        if log_magnitude == -np.inf:
            return cls.zero()
        return cls(float(log_magnitude), sign)

    @property
    def value(self) -> float:
        if self.sign == 0:
            return 0.0
        return self.sign * float(np.exp(self.log_magnitude))


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Alphabet:
    """Ordered category labels of one variable; code h is labels[h]"""
    labels: Tuple[str, ...]

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise DataValidationError(f"Alphabet labels must be unique: {self.labels}")
        if not self.labels:
            raise DataValidationError("Alphabet must contain at least one label")

    @property
    def m(self) -> int:
        return len(self.labels)

    def code_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise DataValidationError(f"Unknown category {label!r}") from None

    def label_of(self, code: int) -> str:
        if not 0 <= code < self.m:
            raise DataValidationError(f"Code {code} outside 0..{self.m - 1}")
        return self.labels[code]


@dataclass(frozen=True)
class CategoricalDataset:
    """n x p integer-coded categorical observations"""
    codes: np.ndarray
    alphabets: Tuple[Alphabet, ...]
    variable_names: Tuple[str, ...]

    def __post_init__(self):
        codes = np.array(self.codes, dtype=np.int64, copy=True)
        if codes.ndim != 2 or codes.shape[0] < 1 or codes.shape[1] < 1:
            raise DataValidationError(f"codes must be a non-empty n x p matrix, got shape {codes.shape}")
        if len(self.alphabets) != codes.shape[1] or len(self.variable_names) != codes.shape[1]:
            raise DataValidationError("alphabets and variable_names must have one entry per column")
        m = np.array([a.m for a in self.alphabets])
        bad = (codes < 0) | (codes >= m[None, :])
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise DataValidationError(f"code {codes[i, j]} in column {j} outside 0..{m[j] - 1}")
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def p(self) -> int:
        return self.codes.shape[1]

    @property
    def modality_counts(self) -> np.ndarray:
        return np.array([a.m for a in self.alphabets], dtype=np.int64)

    def decode(self) -> np.ndarray:
        """Label matrix (object dtype) reproducing the original input"""
        out = np.empty(self.codes.shape, dtype=object)
        for j, alphabet in enumerate(self.alphabets):
            out[:, j] = np.asarray(alphabet.labels, dtype=object)[self.codes[:, j]]
        return out

    def decode_vector(self, codes: np.ndarray) -> List[str]:
        return [self.alphabets[j].label_of(int(h)) for j, h in enumerate(codes)]

    def describe(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "p": self.p,
            "variables": [
                {"name": name, "m": alphabet.m, "labels": list(alphabet.labels)}
                for name, alphabet in zip(self.variable_names, self.alphabets)
            ],
        }


# ---------------------------------------------------------------------------
# Hamming kernel and HIG prior
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HammingParams:
    """Center vector and positive scale vector of one component"""
    center: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.int64)
        scale = np.asarray(self.scale, dtype=float)
        if center.ndim != 1 or center.shape != scale.shape:
            raise DomainError("center and scale must be vectors of equal length")
        if not np.all(scale > 0):
            raise DomainError("every scale must be strictly positive")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "scale", scale)

    @property
    def p(self) -> int:
        return self.center.shape[0]

    @property
    def omega(self) -> np.ndarray:
        return np.exp(-1.0 / self.scale)


class HIGParams(BaseModel):
    """Hypergeometric inverse gamma hyperparameters tied to a modality count"""
    v: float = Field(..., gt=0)
    w: float = Field(..., ge=0)
    m: int = Field(..., ge=1)

    class Config:
        frozen = True

    @property
    def key(self) -> Tuple[float, float, int]:
        return (self.v, self.w, self.m)


def default_hig_params(m: int, overrides: Optional[Dict[int, Tuple[float, float]]] = None) -> HIGParams:
    """Default (v, w) for a modality count"""
    table = dict(hig_defaults.BY_MODALITY)
    if overrides:
        table.update({int(k): tuple(v) for k, v in overrides.items()})
    v, w = table.get(int(m), hig_defaults.FALLBACK)
    return HIGParams(v=v, w=w, m=int(m))


# ---------------------------------------------------------------------------
# Mixture
# ---------------------------------------------------------------------------

class ModelConfig(BaseModel):
    """Mixture model hyperparameters"""
    gamma: float = Field(..., gt=0)
    lambda_: float = Field(..., gt=0, alias="lambda")
    hig_priors: List[HIGParams] = Field(default_factory=list)
    shared_sigma: bool = False
    shared_sigma_prior: Tuple[float, float] = hig_defaults.SHARED_SIGMA_PRIOR
    mh_proposal_sd: float = Field(hig_defaults.MH_PROPOSAL_SD, gt=0)

    class Config:
        allow_population_by_field_name = True

    @validator("shared_sigma_prior")
    def _positive_prior(cls, value):
        if value[0] <= 0 or value[1] <= 0:
            raise ValueError("shared_sigma_prior entries must be positive")
        return value

    @property
    def equal_modalities(self) -> bool:
        return len({h.m for h in self.hig_priors}) <= 1

    def check_dataset(self, data: CategoricalDataset) -> None:
        """Raise ConfigurationError unless hig_priors match the dataset"""
        if len(self.hig_priors) != data.p:
            raise ConfigurationError(f"hig_priors has {len(self.hig_priors)} entries for p={data.p}")
        for j, (prior, m) in enumerate(zip(self.hig_priors, data.modality_counts)):
            if prior.m != m:
                raise ConfigurationError(f"hig_priors[{j}].m={prior.m} but variable has m={m}")

    def echo(self) -> Dict[str, Any]:
        return self.dict(by_alias=True)

    @classmethod
    def for_dataset(cls, data: CategoricalDataset, gamma: float, lambda_: float,
                    hig_by_modality: Optional[Dict[int, Tuple[float, float]]] = None,
                    hig_by_variable: Optional[Dict[str, Tuple[float, float]]] = None,
                    **kwargs) -> "ModelConfig":
        """Build a config with per-variable HIG priors from the defaults table"""
        priors = []
        for name, m in zip(data.variable_names, data.modality_counts):
            if hig_by_variable and name in hig_by_variable:
                v, w = hig_by_variable[name]
                priors.append(HIGParams(v=v, w=w, m=int(m)))
            else:
                priors.append(default_hig_params(int(m), hig_by_modality))
        return cls(gamma=gamma, lambda_=lambda_, hig_priors=priors, **kwargs)


@dataclass(frozen=True)
class PartitionSizes:
    """Block sizes of a partition"""
    sizes: Tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes or any(s < 1 for s in sizes):
            raise DomainError(f"sizes must be a non-empty list of positive integers, got {self.sizes}")
        object.__setattr__(self, "sizes", sizes)

    @property
    def n(self) -> int:
        return sum(self.sizes)

    @property
    def K(self) -> int:
        return len(self.sizes)


@dataclass(frozen=True)
class PriorKDistribution:
    """Prior probabilities of K = 1..n"""
    probabilities: np.ndarray
    defect: float

    @property
    def k_values(self) -> np.ndarray:
        return np.arange(1, self.probabilities.shape[0] + 1)

    @property
    def mean(self) -> float:
        return float(np.dot(self.k_values, self.probabilities))

    @property
    def mode(self) -> int:
        return int(np.argmax(self.probabilities)) + 1


# ---------------------------------------------------------------------------
# Sampler
# ---------------------------------------------------------------------------

@dataclass
class MixtureState:
    """Blocked Gibbs sampler state; labels are 0-based internally"""
    z: np.ndarray
    S: np.ndarray
    centers: np.ndarray
    scales: np.ndarray
    u: float
    K: int
    shared_sigma: Optional[np.ndarray] = None

    @property
    def L(self) -> int:
        return self.S.shape[0]

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def T(self) -> float:
        return float(self.S.sum())

    @property
    def labels(self) -> np.ndarray:
        """Allocations as 1-based labels"""
        return self.z + 1

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.z, minlength=self.K)[:self.K]

    def component(self, l: int) -> HammingParams:
        return HammingParams(center=self.centers[l].copy(), scale=self.scales[l].copy())

    def copy(self) -> "MixtureState":
        return MixtureState(
            z=self.z.copy(), S=self.S.copy(), centers=self.centers.copy(),
            scales=self.scales.copy(), u=self.u, K=self.K,
            shared_sigma=None if self.shared_sigma is None else self.shared_sigma.copy(),
        )

    def check_invariants(self) -> None:
        """Raise SamplerError if the post-relabel invariants fail"""
        L = self.L
        if not 1 <= self.K <= L:
            raise SamplerError(f"K={self.K} outside 1..L={L}")
        if self.centers.shape[0] != L or self.scales.shape[0] != L:
            raise SamplerError("component arrays do not match L")
        counts = np.bincount(self.z, minlength=L)
        if counts.shape[0] != L or np.any(counts[:self.K] == 0) or np.any(counts[self.K:] != 0):
            raise SamplerError("labels 0..K-1 must be exactly the allocated components")
        if not (self.T > 0 and np.all(self.S > 0)):
            raise SamplerError("weights must be positive")
        if not np.all(self.scales > 0):
            raise SamplerError("scales must be positive")
        if not self.u > 0:
            raise SamplerError("auxiliary u must be positive")


@dataclass
class ChainTrace:
    """Recorded post burn-in sweeps of one chain"""
    iterations: np.ndarray
    k: np.ndarray
    l: np.ndarray
    u: np.ndarray
    allocations: np.ndarray
    shared_sigma: Optional[np.ndarray] = None
    acceptance_rate: Optional[np.ndarray] = None
    centers: List[np.ndarray] = field(default_factory=list)
    scales: List[np.ndarray] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def recorded(self) -> int:
        return int(self.allocations.shape[0])

    @property
    def n(self) -> int:
        return int(self.allocations.shape[1])

    @classmethod
    def concatenate(cls, traces: List["ChainTrace"]) -> "ChainTrace":
        """Pool several chains, in chain order, for partition summaries"""
        if not traces:
            raise SamplerError("no traces to pool")

        def _cat(name):
            parts = [getattr(t, name) for t in traces]
            if any(p is None for p in parts):
                return None
            return np.concatenate(parts)

        return cls(
            iterations=_cat("iterations"), k=_cat("k"), l=_cat("l"), u=_cat("u"),
            allocations=np.vstack([t.allocations for t in traces]),
            shared_sigma=_cat("shared_sigma"), acceptance_rate=_cat("acceptance_rate"),
            centers=[c for t in traces for c in t.centers],
            scales=[s for t in traces for s in t.scales],
            metadata={"chains": [t.metadata for t in traces]},
        )


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Partition:
    """Cluster labels 1..K in canonical order of first appearance"""
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.shape[0] < 1:
            raise DataValidationError("partition labels must be a non-empty vector")
        _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
        rank = np.empty(first.shape[0], dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(first.shape[0])
        canonical = rank[inverse.reshape(-1)] + 1
        canonical.setflags(write=False)
        object.__setattr__(self, "labels", canonical)

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    @property
    def K(self) -> int:
        return int(self.labels.max())

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels)[1:]

    def key(self) -> bytes:
        return self.labels.astype(np.int32).tobytes()

    def __eq__(self, other) -> bool:
        return isinstance(other, Partition) and np.array_equal(self.labels, other.labels)

    def __hash__(self) -> int:
        return hash(self.key())


@dataclass(frozen=True)
class SimilarityMatrix:
    """Posterior co-clustering frequencies"""
    values: np.ndarray

    @property
    def n(self) -> int:
        return int(self.values.shape[0])


@dataclass
class ClusterSummary:
    """Conditional parameter summary of one cluster"""
    label: int
    size: int
    center: np.ndarray
    center_labels: List[str]
    sigma_median: np.ndarray
    epsilon_median: np.ndarray
    gini: float
    shannon: float
    silhouette_mean: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "size": self.size,
            "center": self.center_labels,
            "center_codes": [int(c) for c in self.center],
            "sigma_median": [float(s) for s in self.sigma_median],
            "epsilon_median": [float(e) for e in self.epsilon_median],
            "gini": float(self.gini),
            "shannon": float(self.shannon),
            "silhouette_mean": None if self.silhouette_mean is None else float(self.silhouette_mean),
        }


# ---------------------------------------------------------------------------
# Baseline and simulation
# ---------------------------------------------------------------------------

@dataclass
class KModesResult:
    """Outcome of one K-modes restart"""
    partition: Partition
    modes: np.ndarray
    cost: int
    iterations: int
    restart_index: int
    cost_history: List[int] = field(default_factory=list)
    converged: bool = True


@dataclass(frozen=True)
class Scenario:
    """One row of the simulation design"""
    id: int
    p: int
    K: int
    n_k: int
    sigma: float
    modality_counts: Tuple[int, ...]

    @property
    def n(self) -> int:
        return self.K * self.n_k


class StudyOptions(BaseModel):
    """Fit settings for simulation replicates; None means derived from the scenario"""
    iters: int = Field(10000, ge=1)
    burnin: int = Field(5000, ge=0)
    thin: int = Field(1, ge=1)
    lambda_: Optional[float] = Field(None, gt=0, alias="lambda")
    gamma: Optional[float] = Field(None, gt=0)
    statistic: CenteringStatistic = CenteringStatistic.MEAN
    min_separation: Optional[int] = Field(None, ge=0)
    kmodes_restarts: int = Field(10, ge=1)
    kmodes_max_iter: int = Field(sampler_config.KMODES_MAX_ITER, ge=1)
    max_candidates: Optional[int] = Field(None, ge=1)

    class Config:
        allow_population_by_field_name = True

    @validator("burnin")
    def _burnin_below_iters(cls, value, values):
        iters = values.get("iters")
        if iters is not None and value >= iters:
            raise ValueError(f"burnin ({value}) must be smaller than iters ({iters})")
        return value


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

class DatasetOptions(BaseModel):
    """Where and how to read the dataset"""
    path: Optional[str] = None
    delimiter: str = ","
    header: bool = True
    exclude_columns: List[str] = Field(default_factory=list)
    truth_column: Optional[str] = None


class ModelOptions(BaseModel):
    """Model hyperparameters before they are resolved against a dataset"""
    gamma: float = Field(1.0, gt=0)
    lambda_: float = Field(3.0, gt=0, alias="lambda")
    k_target: Optional[int] = Field(None, ge=1)
    k_statistic: CenteringStatistic = CenteringStatistic.MEAN
    shared_sigma: bool = False
    shared_sigma_prior: Tuple[float, float] = hig_defaults.SHARED_SIGMA_PRIOR
    mh_proposal_sd: float = Field(hig_defaults.MH_PROPOSAL_SD, gt=0)
    hig_by_modality: Dict[int, Tuple[float, float]] = Field(default_factory=dict)
    hig_by_variable: Dict[str, Tuple[float, float]] = Field(default_factory=dict)

    class Config:
        allow_population_by_field_name = True


class SamplerOptions(BaseModel):
    """Chain lengths, seeding and concurrency"""
    iters: int = Field(..., ge=1)
    burnin: int = Field(..., ge=0)
    thin: int = Field(1, ge=1)
    seed: int = Field(..., ge=0)
    chains: int = Field(1, ge=1)
    workers: int = Field(1, ge=1)
    summary_iters: int = Field(sampler_config.SUMMARY_EXTRA_ITERS, ge=1)

    @validator("burnin")
    def _burnin_below_iters(cls, value, values):
        iters = values.get("iters")
        if iters is not None and value >= iters:
            raise ValueError(f"burnin ({value}) must be smaller than iters ({iters})")
        return value


class RunConfig(BaseModel):
    """Resolved configuration of a fit run"""
    dataset: DatasetOptions = Field(default_factory=DatasetOptions)
    model: ModelOptions = Field(default_factory=ModelOptions)
    sampler: SamplerOptions
    output_dir: Optional[str] = None

    def echo(self) -> Dict[str, Any]:
        return self.dict(by_alias=True)
