import json
import math

import numpy as np
import pytest

from casi.dataset import (
    BatchPlan,
    DataError,
    StandardizationParams,
    ZScoreScaler,
    destandardize,
    load_csv,
    process_in_batches,
    sample_rows,
    save_csv,
    standardize,
)


def _write(tmp_path, text, name="x.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestLoadCsv:
    def test_plain_parse(self, tmp_path):
        X = load_csv(_write(tmp_path, "1,2\n3,4\n5,6"))
        assert X.tolist() == [[1, 2], [3, 4], [5, 6]]

    def test_header_skipped(self, tmp_path):
        X = load_csv(_write(tmp_path, "1,2\n3,4\n5,6"), has_header=True)
        assert X.tolist() == [[3, 4], [5, 6]]

    def test_bad_cell_names_row_and_column(self, tmp_path):
        with pytest.raises(DataError, match=r"row 2, column 1"):
            load_csv(_write(tmp_path, "1,2\nabc,4\n"))

    def test_bad_cell_row_counts_header_line(self, tmp_path):
        with pytest.raises(DataError, match=r"row 3, column 2"):
            load_csv(_write(tmp_path, "a,b\n1,2\n3,x\n"), has_header=True)

    def test_ragged(self, tmp_path):
        with pytest.raises(DataError, match="ragged"):
            load_csv(_write(tmp_path, "1,2\n3\n"))

    def test_empty(self, tmp_path):
        with pytest.raises(DataError, match="no data rows"):
            load_csv(_write(tmp_path, ""))

    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(DataError, match="nope.csv"):
            load_csv(tmp_path / "nope.csv")

    def test_non_finite_rejected(self, tmp_path):
        with pytest.raises(DataError, match="non-finite"):
            load_csv(_write(tmp_path, "1,nan\n"))

    def test_delimiter_and_columns(self, tmp_path):
        X = load_csv(_write(tmp_path, "1;2;3\n4;5;6\n"), delimiter=";", columns=[2, 0])
        assert X.tolist() == [[3, 1], [6, 4]]

    def test_blank_lines_ignored(self, tmp_path):
        assert load_csv(_write(tmp_path, "1,2\n\n3,4\n")).shape == (2, 2)

    def test_round_trip_with_save(self, tmp_path, rng):
        X = rng.normal(size=(7, 3))
        save_csv(tmp_path / "r.csv", X)
        assert np.array_equal(load_csv(tmp_path / "r.csv"), X)


class TestStandardize:
    def test_two_points(self):
        Z, params = standardize([[1.0], [3.0]])
        assert Z.tolist() == [[-1.0], [1.0]]
        assert params.means.tolist() == [2.0]
        assert params.stddevs.tolist() == [1.0]

    def test_constant_column(self):
        Z, params = standardize([[5.0], [5.0], [5.0]])
        assert Z.tolist() == [[0.0], [0.0], [0.0]]
        assert params.stddevs.tolist() == [0.0]

    def test_moments_against_direct_sums(self, rng):
        X = rng.normal(3.0, 4.0, size=(50, 3))
        Z, _ = standardize(X)
        for j in range(3):
            col = [float(v) for v in Z[:, j]]
            mean = math.fsum(col) / len(col)
            sd = math.sqrt(math.fsum((v - mean) ** 2 for v in col) / len(col))
            assert abs(mean) < 1e-9
            assert abs(sd - 1.0) < 1e-9

    def test_needs_two_rows(self):
        with pytest.raises(DataError):
            standardize([[1.0, 2.0]])

    def test_round_trip(self, rng):
        X = rng.uniform(-100, 100, size=(20, 4))
        Z, params = standardize(X)
        np.testing.assert_allclose(destandardize(Z, params), X, rtol=1e-9)

    def test_params_json(self, rng):
        _, params = standardize(rng.normal(size=(5, 2)))
        obj = json.loads(params.to_json())
        assert set(obj) == {"means", "stddevs"}
        back = StandardizationParams.from_json(params.to_json())
        assert np.array_equal(back.means, params.means)
        assert np.array_equal(back.stddevs, params.stddevs)

    def test_scaler_matches_function(self, rng):
        X = rng.normal(size=(30, 3))
        X[:, 1] = 7.0
        scaler = ZScoreScaler().fit(X)
        np.testing.assert_array_equal(scaler.transform(X), standardize(X)[0])
        np.testing.assert_allclose(scaler.inverse_transform(scaler.transform(X))[:, [0, 2]], X[:, [0, 2]])

    def test_scaler_column_mismatch(self, rng):
        scaler = ZScoreScaler().fit(rng.normal(size=(5, 2)))
        with pytest.raises(DataError):
            scaler.transform(rng.normal(size=(5, 3)))


class TestBatches:
    def test_row_count_example(self):
        X = np.zeros((10, 2))
        assert process_in_batches(X, lambda b: b.shape[0], 4) == pytest.approx(10 / 3, abs=1e-15)

    def test_single_batch(self, rng):
        X = rng.normal(size=(6, 2))
        assert process_in_batches(X, lambda b: float(b.sum()), 6) == pytest.approx(float(X.sum()))

    def test_equal_batches_mean(self, rng):
        X = rng.normal(size=(6, 2))
        assert abs(process_in_batches(X, lambda b: float(b.mean()), 3) - float(X.mean())) < 1e-12

    def test_weighted_variant(self):
        X = np.arange(10.0)[:, None]
        assert process_in_batches(X, lambda b: float(b.mean()), 4, weighted=True) == pytest.approx(4.5)

    @pytest.mark.parametrize("b", [0, 11])
    def test_bad_batch_size(self, b):
        with pytest.raises(DataError):
            process_in_batches(np.zeros((10, 1)), lambda x: 0.0, b)

    def test_plan(self):
        plan = BatchPlan.for_rows(10, 4)
        assert plan.n_batches == 3
        assert [(s.start, s.stop) for s in plan.slices(10)] == [(0, 4), (4, 8), (8, 10)]

    def test_vector_result_rejected(self):
        with pytest.raises(DataError, match="scalar"):
            process_in_batches(np.zeros((4, 2)), lambda b: b.sum(axis=0), 2)


class TestSampleRows:
    def test_full_sample_is_permutation(self, rng):
        X = rng.normal(size=(12, 3))
        S = sample_rows(X, 12, seed=3)
        assert sorted(map(tuple, S)) == sorted(map(tuple, X))

    def test_single_row(self, rng):
        X = rng.normal(size=(12, 3))
        S = sample_rows(X, 1, seed=3)
        assert S.shape == (1, 3)
        assert any(np.array_equal(S[0], r) for r in X)

    def test_deterministic(self, rng):
        X = rng.normal(size=(40, 2))
        assert np.array_equal(sample_rows(X, 10, 5), sample_rows(X, 10, 5))

    def test_too_many(self):
        with pytest.raises(DataError):
            sample_rows(np.zeros((3, 1)), 4)
