"""
Shared pytest fixtures for hammix
"""

import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent / "src"))

from config import settings  # noqa: E402
from models import Alphabet, CategoricalDataset, ModelConfig  # noqa: E402


def make_dataset(codes, modality_counts: Optional[Sequence[int]] = None) -> CategoricalDataset:
    """Dataset with labels '0'..'m-1' and variables V1..Vp"""
    codes = np.asarray(codes, dtype=np.int64)
    if modality_counts is None:
        modality_counts = codes.max(axis=0) + 1
    alphabets = tuple(Alphabet(tuple(str(h) for h in range(int(m)))) for m in modality_counts)
    names = tuple(f"V{j + 1}" for j in range(codes.shape[1]))
    return CategoricalDataset(codes=codes, alphabets=alphabets, variable_names=names)


def zoo_location() -> Optional[Path]:
    candidates = [settings.zoo_path, Path(__file__).parent / "data" / "zoo.csv"]
    for candidate in candidates:
        if candidate and Path(candidate).is_file():
            return Path(candidate)
    return None


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def two_groups():
    """Ten copies each of two vectors that differ everywhere"""
    codes = np.vstack([np.tile([0, 0, 0, 0], (10, 1)), np.tile([1, 1, 1, 1], (10, 1))])
    return make_dataset(codes, [2, 2, 2, 2])


@pytest.fixture
def two_groups_config(two_groups):
    return ModelConfig.for_dataset(two_groups, gamma=1.0, lambda_=2.0)


@pytest.fixture
def two_groups_csv(tmp_path):
    """Delimited file with an id column, four variables and a class column"""
    lines = ["id,colour,shape,size,texture,kind"]
    for i in range(10):
        lines.append(f"a{i},red,round,big,smooth,A")
    for i in range(10):
        lines.append(f"b{i},blue,square,small,rough,B")
    path = tmp_path / "groups.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def zoo_path():
    path = zoo_location()
    if path is None:
        pytest.skip("Zoo dataset not available (set HAMMIX_ZOO_PATH or add data/zoo.csv)")
    return path
