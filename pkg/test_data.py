"""
Tests for dataset ingestion and Hamming dissimilarities
"""

import io
import logging

import numpy as np
import pytest

from conftest import make_dataset
from data import (dataset_to_frame, dissimilarity_matrix, hamming_distance, hamming_to_centers,
                  load_dataset, load_labels)
from models import DataValidationError, Partition


def test_alphabets_follow_first_appearance():
    data = load_dataset(io.StringIO("colour,size\nred,big\nblue,big\nred,small\ngreen,big\n"))
    assert data.n == 4 and data.p == 2
    assert data.alphabets[0].labels == ("red", "blue", "green")
    assert data.alphabets[1].labels == ("big", "small")
    assert data.codes.tolist() == [[0, 0], [1, 0], [0, 1], [2, 0]]
    assert data.modality_counts.tolist() == [3, 2]


def test_decode_reproduces_input():
    text = "a,b,c\nx,1,q\ny,2,q\nx,2,r\n"
    data = load_dataset(io.StringIO(text))
    frame = dataset_to_frame(data)
    assert list(frame.columns) == ["a", "b", "c"]
    assert frame.values.tolist() == [["x", "1", "q"], ["y", "2", "q"], ["x", "2", "r"]]


def test_codes_are_read_only():
    data = load_dataset(io.StringIO("a\nx\ny\n"))
    with pytest.raises(ValueError):
        data.codes[0, 0] = 1


def test_short_row_reports_line_number():
    with pytest.raises(DataValidationError) as info:
        load_dataset(io.StringIO("a,b\nx,y\nx\nz,w\n"))
    assert info.value.line == 3
    assert "Ragged" in str(info.value)


def test_long_row_is_ragged():
    with pytest.raises(DataValidationError, match="Ragged"):
        load_dataset(io.StringIO("a,b\nx,y\nx,y,z\n"))


def test_empty_field_is_rejected():
    with pytest.raises(DataValidationError) as info:
        load_dataset(io.StringIO("a,b\nx,y\nx,\n"))
    assert info.value.line == 3


def test_empty_dataset_is_rejected():
    with pytest.raises(DataValidationError):
        load_dataset(io.StringIO(""))
    with pytest.raises(DataValidationError):
        load_dataset(io.StringIO("a,b\n"))


def test_missing_file_is_rejected(tmp_path):
    with pytest.raises(DataValidationError, match="not found"):
        load_dataset(tmp_path / "nothing.csv")


def test_no_header_names_variables():
    data = load_dataset(io.StringIO("x;y\nz;y\n"), delimiter=";", header=False)
    assert data.variable_names == ("V1", "V2")
    assert data.n == 2


def test_truth_and_excluded_columns(two_groups_csv):
    data, truth = load_dataset(two_groups_csv, exclude_columns=["id"], truth_column="kind")
    assert data.variable_names == ("colour", "shape", "size", "texture")
    assert isinstance(truth, Partition)
    assert truth.K == 2
    assert truth.sizes.tolist() == [10, 10]


def test_unknown_excluded_column(two_groups_csv):
    with pytest.raises(DataValidationError, match="not found"):
        load_dataset(two_groups_csv, exclude_columns=["nope"])


def test_constant_column_warns(caplog):
    with caplog.at_level(logging.WARNING):
        data = load_dataset(io.StringIO("a,b\nx,1\nx,2\n"))
    assert data.modality_counts.tolist() == [1, 2]
    assert any("constant" in record.message for record in caplog.records)


def test_load_labels_uses_last_column(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("id,label\n1,cat\n2,dog\n3,cat\n", encoding="utf-8")
    assert load_labels(path).labels.tolist() == [1, 2, 1]


def test_hamming_distance():
    assert hamming_distance([0, 1, 2], [0, 2, 2]) == 1
    assert hamming_distance([0, 1, 2], [0, 1, 2]) == 0
    assert hamming_distance([1, 1], [0, 0]) == 2
    with pytest.raises(DataValidationError):
        hamming_distance([0, 1], [0, 1, 2])


def test_dissimilarity_matrix_matches_pairwise_distances():
    rng = np.random.default_rng(3)
    codes = rng.integers(0, 3, size=(25, 6))
    data = make_dataset(codes, [3] * 6)
    matrix = dissimilarity_matrix(data)
    assert matrix.shape == (25, 25)
    assert np.array_equal(matrix, matrix.T)
    assert np.all(np.diag(matrix) == 0)
    assert matrix[4, 7] == hamming_distance(codes[4], codes[7])
    assert np.array_equal(matrix, hamming_to_centers(codes, codes))


def test_hamming_to_centers_shape_check():
    with pytest.raises(DataValidationError):
        hamming_to_centers(np.zeros((3, 2), dtype=int), np.zeros((1, 3), dtype=int))
