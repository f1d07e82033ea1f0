"""Dataset reading, CSV round trips, atomic writes and provenance."""

import json
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from opess import io as opio
from opess.engine import OpessProblem, mopess
from opess.harness import Histogram, StudyRow
from opess.io import (
    Provenance,
    ResultEnvelope,
    atomic_write_text,
    config_digest,
    format_float,
    histogram_to_csv,
    read_dataset,
    read_histogram_csv,
    read_metadata,
    read_rows_csv,
    rows_to_csv,
    write_result,
)
from opess.models import Dataset, GaussianModelSpec


class TestReadDataset:
    def test_comments_and_blanks(self, tmp_path):
        p = tmp_path / "y.txt"
        p.write_text("# header\n0.5\n\n-1.25  # trailing\n2\n")
        np.testing.assert_array_equal(read_dataset(p, "gaussian").y, [0.5, -1.25, 2.0])

    def test_bernoulli_rejects_fraction(self, tmp_path):
        p = tmp_path / "b.txt"
        p.write_text("1\n0\n0.5\n")
        with pytest.raises(ValueError, match=":3:"):
            read_dataset(p, "bernoulli")

    def test_regression_pairs(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("1.0, 2.0\n-1.0, 0.5\n3, 4\n")
        d = read_dataset(p, "regression")
        np.testing.assert_array_equal(d.x, [1.0, -1.0, 3.0])
        np.testing.assert_array_equal(d.y, [2.0, 0.5, 4.0])

    def test_regression_needs_pairs(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("1.0, 2.0\n5.0\n")
        with pytest.raises(ValueError, match=":2:"):
            read_dataset(p, "regression")

    def test_not_a_number(self, tmp_path):
        p = tmp_path / "y.txt"
        p.write_text("1\nabc\n")
        with pytest.raises(ValueError, match=":2: not a number"):
            read_dataset(p, "gaussian")

    def test_non_finite(self, tmp_path):
        p = tmp_path / "y.txt"
        p.write_text("nan\n")
        with pytest.raises(ValueError, match="finite"):
            read_dataset(p, "gaussian")

    def test_empty(self, tmp_path):
        p = tmp_path / "y.txt"
        p.write_text("# nothing\n")
        with pytest.raises(ValueError, match="no observations"):
            read_dataset(p, "gaussian")

    def test_unknown_family(self, tmp_path):
        with pytest.raises(ValueError):
            read_dataset(tmp_path / "y.txt", "poisson")


class TestFormatting:
    def test_twelve_significant_digits(self):
        assert format_float(1 / 3) == "0.333333333333"
        assert format_float(2.0) == "2"
        assert format_float(123456789.0123456) == "123456789.012"

    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_relative_round_trip(self, x):
        back = float(format_float(x))
        assert back == pytest.approx(x, rel=1e-11, abs=0.0)


rows_strategy = st.lists(
    st.tuples(*[st.floats(-1e6, 1e6, allow_nan=False)] * 7), min_size=0, max_size=8)


class TestRoundTrips:
    @given(rows_strategy)
    def test_rows(self, tmp_path_factory, raw):
        rows = [StudyRow(i, *vals) for i, vals in enumerate(raw)]
        path = tmp_path_factory.mktemp("rows") / "rows.csv"
        atomic_write_text(path, rows_to_csv(rows))
        back = read_rows_csv(path)
        assert len(back) == len(rows)
        for a, b in zip(rows, back):
            assert a.dataset_id == b.dataset_id
            np.testing.assert_allclose(
                [b.xstat, b.mopess, b.q05, b.q50, b.q95, b.mean_min_distance, b.boundary_fraction],
                [a.xstat, a.mopess, a.q05, a.q50, a.q95, a.mean_min_distance, a.boundary_fraction],
                rtol=1e-11)

    def test_rows_with_extra_columns(self, tmp_path):
        rows = [StudyRow(0, 1.0, 2.0, 1.0, 2.0, 3.0, 0.1, 0.0, {"beta1_gap": 0.5})]
        path = tmp_path / "r.csv"
        path.write_text(rows_to_csv(rows))
        assert read_rows_csv(path) == rows

    def test_bad_header(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError, match="header"):
            read_rows_csv(path)

    def test_histogram(self, tmp_path):
        h = Histogram(np.array([-1, 0, 3]), np.array([2, 5, 3]), np.array([0.25, 0.5, 0.25]))
        path = tmp_path / "h.csv"
        prov = Provenance.create({"a": 1}, seed=0)
        write_result(ResultEnvelope(h, prov), path)
        values, counts, theory = read_histogram_csv(path)
        np.testing.assert_array_equal(values, h.values)
        np.testing.assert_array_equal(counts, h.counts)
        np.testing.assert_allclose(theory, h.theory_pmf)
        assert "frequency" in path.read_text().splitlines()[0]

    def test_histogram_without_theory(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text(histogram_to_csv([0, 1], [1, 3]))
        _, _, theory = read_histogram_csv(path)
        assert theory is None

    def test_result(self, tmp_path, monkeypatch):
        monkeypatch.delenv("SOURCE_DATE_EPOCH", raising=False)
        res = mopess(OpessProblem(GaussianModelSpec(), Dataset(np.linspace(-1, 1, 20)), S=50))
        path = tmp_path / "out" / "r.csv"
        path.parent.mkdir()
        written = write_result(ResultEnvelope(res, Provenance.create({"x": 1}, 0, 50, res.L)),
                               path, xstat=0.0)
        assert [p.name for p in written] == ["r.csv", "r_pmf.csv", "r.csv.meta.json"]
        (row,) = read_rows_csv(path)
        assert row.mopess == pytest.approx(res.mopess, rel=1e-11)
        values, counts, _ = read_histogram_csv(tmp_path / "out" / "r_pmf.csv")
        assert counts.sum() == 50
        meta = read_metadata(path)
        assert meta["result"] == {"n": 20, "S": 50, "L": res.L, "seed": 0}
        assert meta["provenance"]["timestamp"] is None


class TestAtomicWrite:
    def test_overwrites(self, tmp_path):
        p = tmp_path / "a.txt"
        atomic_write_text(p, "one")
        atomic_write_text(p, "two")
        assert p.read_text() == "two"
        assert os.listdir(tmp_path) == ["a.txt"]

    def test_failed_rename_leaves_nothing(self, tmp_path, monkeypatch):
        def boom(src, dst):
            raise OSError("disk full")

        monkeypatch.setattr(opio.os, "replace", boom)
        with pytest.raises(OSError):
            atomic_write_text(tmp_path / "a.txt", "payload")
        assert os.listdir(tmp_path) == []

    def test_failed_rename_keeps_old_content(self, tmp_path, monkeypatch):
        p = tmp_path / "a.txt"
        p.write_text("old")
        monkeypatch.setattr(opio.os, "replace", lambda s, d: (_ for _ in ()).throw(OSError()))
        with pytest.raises(OSError):
            atomic_write_text(p, "new")
        assert p.read_text() == "old"
        assert os.listdir(tmp_path) == ["a.txt"]

    def test_missing_directory(self, tmp_path):
        with pytest.raises(OSError):
            atomic_write_text(tmp_path / "nope" / "a.txt", "x")


class TestProvenance:
    def test_digest_stable_under_key_order(self):
        assert config_digest({"a": 1, "b": [1, 2]}) == config_digest({"b": [1, 2], "a": 1})

    def test_digest_changes_with_config(self):
        assert config_digest({"a": 1}) != config_digest({"a": 2})

    def test_digest_is_sha256(self):
        d = config_digest({})
        assert len(d) == 64 and int(d, 16) >= 0

    def test_timestamp_from_source_date_epoch(self, monkeypatch):
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
        assert Provenance.create({}, 1).timestamp == "1970-01-01T00:00:00+00:00"

    def test_no_timestamp_by_default(self, monkeypatch):
        monkeypatch.delenv("SOURCE_DATE_EPOCH", raising=False)
        assert Provenance.create({}, 1).timestamp is None

    def test_sidecar_is_json(self, tmp_path):
        path = tmp_path / "rows.csv"
        write_result(ResultEnvelope([], Provenance.create({"k": "v"}, 3)), path)
        meta = json.loads((tmp_path / "rows.csv.meta.json").read_text())
        assert meta["provenance"]["seed"] == 3
        assert meta["provenance"]["config_digest"] == config_digest({"k": "v"})
