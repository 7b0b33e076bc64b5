"""
Categorical dataset ingestion and Hamming dissimilarities.
"""

import io
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd

from models import Alphabet, CategoricalDataset, DataValidationError, Partition

logger = logging.getLogger(__name__)

Source = Union[str, Path, TextIO]


def _read_text(source: Source) -> str:
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.is_file():
            raise DataValidationError(f"Dataset not found: {source}")
        try:
            return path.read_text(encoding="utf-8")
        except UnicodeDecodeError as e:
            raise DataValidationError(f"Dataset {source} is not valid UTF-8: {e}") from e
    return source.read()


def _read_frame(text: str, delimiter: str, header: bool) -> pd.DataFrame:
    if not text.strip():
        raise DataValidationError("Dataset is empty")
    try:
        frame = pd.read_csv(
            io.StringIO(text),
            sep=delimiter,
            header=0 if header else None,
            dtype=str,
            keep_default_na=False,
            na_filter=False,
            skip_blank_lines=True,
            engine="c",
        )
    except pd.errors.EmptyDataError as e:
        raise DataValidationError("Dataset is empty") from e
    except pd.errors.ParserError as e:
        # pandas reports "Expected 2 fields in line 4, saw 3"
        raise DataValidationError(f"Ragged row: {e}") from e
    return frame


def _physical_lines(text: str, header: bool) -> List[int]:
    """1-based file line number of every data row (blank lines skipped)"""
    numbers = [i + 1 for i, line in enumerate(text.splitlines()) if line.strip()]
    return numbers[1:] if header else numbers


def _check_short_rows(frame: pd.DataFrame, text: str, delimiter: str,
                      line_numbers: Sequence[int], header: bool) -> None:
    """Short rows come back padded (NaN or empty); report them as ragged"""
    padded = frame.isna().to_numpy() | (frame.to_numpy() == "")
    lines = [line for line in text.splitlines() if line.strip()]
    if header:
        lines = lines[1:]
    for row in np.flatnonzero(padded.any(axis=1)):
        fields = lines[row].count(delimiter) + 1 if row < len(lines) else frame.shape[1]
        if fields < frame.shape[1]:
            raise DataValidationError(
                f"Ragged row: expected {frame.shape[1]} fields, saw {fields}",
                line=line_numbers[row],
            )


def _build_alphabets(frame: pd.DataFrame, line_numbers: Sequence[int]) -> Tuple[np.ndarray, List[Alphabet]]:
    codes = np.empty(frame.shape, dtype=np.int64)
    alphabets = []
    for j, column in enumerate(frame.columns):
        values = frame[column].to_numpy()
        empty = np.flatnonzero(values == "")
        if empty.size:
            raise DataValidationError(
                f"empty field in column {column!r} (missing data is not supported)",
                line=line_numbers[empty[0]],
            )
        # pd.factorize assigns codes by first appearance
        column_codes, uniques = pd.factorize(values, sort=False)
        codes[:, j] = column_codes
        alphabets.append(Alphabet(tuple(str(u) for u in uniques)))
        if len(uniques) == 1:
            logger.warning(f"Variable {column!r} is constant (m=1); it carries no information")
    return codes, alphabets


def load_dataset(source: Source, delimiter: str = ",", header: bool = True,
                 exclude_columns: Iterable[str] = (), truth_column: Optional[str] = None
                 ) -> Union[CategoricalDataset, Tuple[CategoricalDataset, Partition]]:
    """Load delimited text into an integer-coded dataset

    Alphabets are built from observed labels in order of first appearance.
    With truth_column the named column is removed from the data and returned
    as a reference Partition alongside the dataset.
    """
    text = _read_text(source)
    frame = _read_frame(text, delimiter, header)
    line_numbers = _physical_lines(text, header)

    if frame.empty:
        raise DataValidationError("Dataset has no data rows")
    _check_short_rows(frame, text, delimiter, line_numbers, header)

    if not header:
        frame.columns = [f"V{j + 1}" for j in range(frame.shape[1])]
    frame.columns = [str(c).strip() for c in frame.columns]

    truth = None
    if truth_column is not None:
        if truth_column not in frame.columns:
            raise DataValidationError(f"Truth column {truth_column!r} not found")
        truth = Partition(pd.factorize(frame[truth_column].to_numpy(), sort=False)[0])
        frame = frame.drop(columns=[truth_column])

    exclude = [c for c in exclude_columns if c != truth_column]
    missing = [c for c in exclude if c not in frame.columns]
    if missing:
        raise DataValidationError(f"Excluded columns not found: {missing}")
    frame = frame.drop(columns=list(exclude))
    if frame.shape[1] == 0:
        raise DataValidationError("No variables left after excluding columns")

    codes, alphabets = _build_alphabets(frame, line_numbers)
    dataset = CategoricalDataset(codes=codes, alphabets=tuple(alphabets),
                                 variable_names=tuple(frame.columns))
    logger.info(f"Loaded dataset with n={dataset.n}, p={dataset.p}, "
                f"m={dataset.modality_counts.tolist()}")

    if truth is not None:
        return dataset, truth
    return dataset


def load_labels(source: Source, column: Optional[str] = None, delimiter: str = ",") -> Partition:
    """Load reference labels from a one-column (or named-column) file"""
    text = _read_text(source)
    frame = _read_frame(text, delimiter, header=True)
    if column is None:
        column = frame.columns[-1]
    if column not in frame.columns:
        raise DataValidationError(f"Label column {column!r} not found")
    return Partition(pd.factorize(frame[column].to_numpy(), sort=False)[0])


def dataset_to_frame(data: CategoricalDataset) -> pd.DataFrame:
    """Decoded labels as a DataFrame with the original variable names"""
    return pd.DataFrame(data.decode(), columns=list(data.variable_names))


def hamming_distance(x: Sequence[int], y: Sequence[int]) -> int:
    """Number of coordinates at which two code vectors differ"""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape or x.ndim != 1:
        raise DataValidationError(f"Vectors must have equal length, got {x.shape} and {y.shape}")
    return int(np.count_nonzero(x != y))


def hamming_to_centers(codes: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """n x L matrix of Hamming distances between rows and centers"""
    codes = np.asarray(codes)
    centers = np.atleast_2d(centers)
    if codes.shape[1] != centers.shape[1]:
        raise DataValidationError("rows and centers must have the same number of variables")
    return (codes[:, None, :] != centers[None, :, :]).sum(axis=2)


def dissimilarity_matrix(data: Union[CategoricalDataset, np.ndarray]) -> np.ndarray:
    """n x n Hamming dissimilarity matrix"""
    codes = data.codes if isinstance(data, CategoricalDataset) else np.asarray(data)
    n = codes.shape[0]
    out = np.empty((n, n), dtype=np.int64)
    # Row blocks keep the boolean temporary bounded
    block = max(1, 2_000_000 // max(1, n * codes.shape[1]))
    for start in range(0, n, block):
        stop = min(n, start + block)
        out[start:stop] = (codes[start:stop, None, :] != codes[None, :, :]).sum(axis=2)
    return out
