"""Ingest/repair/chunk/scale/split contracts."""

import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydrolstm.errors import DataError
from hydrolstm.pipeline import (
    CleanSegment,
    DatasetSplit,
    ScalingParams,
    TimeSeriesFrame,
    chunk,
    fit_scaler,
    impute_and_split,
    load_csv,
    read_segments_dir,
    split_by_year,
    stitch,
    write_csv,
    write_segments_dir,
)

T0 = np.datetime64("2015-06-01T00:00:00", "s")
STEP = np.timedelta64(900, "s")


def make_frame(values, channels=None, start=T0):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    channels = channels or [f"ch{i}" for i in range(values.shape[1])]
    missing = np.isnan(values)
    ts = start + np.arange(values.shape[0]) * STEP
    return TimeSeriesFrame(ts, channels, values, missing)


def make_segment(values, channels=None, start=T0, seg_id="s0"):
    frame = make_frame(values, channels, start)
    assert not frame.missing.any()
    return CleanSegment(seg_id, frame.timestamps, frame.channels, frame.values)


class TestLoadCsv:
    def test_well_formed(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(
            "timestamp,gage,discharge\n"
            "2015-01-01T00:00:00,0.0,5.0\n"
            "2015-01-01T00:15:00,1.5,5.5\n"
            "2015-01-01T00:30:00,0.0,6.0\n"
        )
        frame = load_csv(p)
        assert frame.n_steps == 3
        assert frame.channels == ["gage", "discharge"]
        assert not frame.missing.any()
        assert frame.values[1, 0] == 1.5

    def test_off_grid_row_names_row(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(
            "timestamp,gage\n"
            "2015-01-01T00:00:00,0.0\n"
            "2015-01-01T00:07:00,1.0\n"
        )
        with pytest.raises(DataError, match="row 2"):
            load_csv(p)

    def test_na_and_empty_set_mask(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(
            "timestamp,gage,discharge\n"
            "2015-01-01T00:00:00,NA,5.0\n"
            "2015-01-01T00:15:00,1.0,\n"
        )
        frame = load_csv(p)
        assert frame.missing[0, 0] and frame.missing[1, 1]
        assert not frame.missing[0, 1] and not frame.missing[1, 0]

    def test_duplicate_timestamp(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(
            "timestamp,gage\n"
            "2015-01-01T00:00:00,0.0\n"
            "2015-01-01T00:00:00,1.0\n"
        )
        with pytest.raises(DataError, match="duplicate"):
            load_csv(p)

    def test_malformed_timestamp(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("timestamp,gage\nnot-a-time,0.0\n")
        with pytest.raises(DataError, match="malformed"):
            load_csv(p)

    def test_skipped_rows_become_missing(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(
            "timestamp,gage\n"
            "2015-01-01T00:00:00,0.0\n"
            "2015-01-01T00:45:00,3.0\n"
        )
        frame = load_csv(p)
        assert frame.n_steps == 4
        assert frame.missing[1, 0] and frame.missing[2, 0]
        assert frame.values[3, 0] == 3.0

    def test_roundtrip_value_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        vals = rng.uniform(0, 100, (11, 2))
        vals[3, 0] = np.nan
        frame = make_frame(vals, ["a", "b"])
        p = tmp_path / "rt.csv"
        write_csv(frame, p)
        back = load_csv(p)
        np.testing.assert_array_equal(back.missing, frame.missing)
        np.testing.assert_array_equal(
            back.values[~back.missing], frame.values[~frame.missing]
        )
        np.testing.assert_array_equal(back.timestamps, frame.timestamps)


class TestImputeAndSplit:
    def test_gap_of_six_filled_linearly(self):
        vals = np.array([0.0] + [np.nan] * 6 + [7.0, 8.0])
        segments = impute_and_split(make_frame(vals))
        assert len(segments) == 1
        np.testing.assert_allclose(
            segments[0].values[:, 0], [0, 1, 2, 3, 4, 5, 6, 7, 8], atol=1e-12
        )
        assert segments[0].imputed == [("ch0", 1, 7)]

    def test_gap_of_seven_splits(self):
        vals = np.concatenate([np.arange(10.0), [np.nan] * 7, np.arange(5.0)])
        segments = impute_and_split(make_frame(vals))
        assert len(segments) == 2
        assert segments[0].n_steps == 10 and segments[1].n_steps == 5
        assert segments[1].source_start == 17

    def test_no_missing_identity(self):
        vals = np.arange(20.0)
        segments = impute_and_split(make_frame(vals))
        assert len(segments) == 1
        np.testing.assert_array_equal(segments[0].values[:, 0], vals)
        np.testing.assert_array_equal(segments[0].timestamps, make_frame(vals).timestamps)

    def test_long_gap_in_any_channel_splits_all(self):
        a = np.arange(30.0)
        b = np.arange(30.0)
        b[10:18] = np.nan  # 8-step gap in channel b only
        segments = impute_and_split(make_frame(np.column_stack([a, b]), ["a", "b"]))
        assert len(segments) == 2
        assert segments[0].n_steps == 10 and segments[1].n_steps == 12

    def test_leading_trailing_trimmed_not_extrapolated(self):
        vals = np.array([np.nan, np.nan, 1.0, 2.0, 3.0, np.nan])
        segments = impute_and_split(make_frame(vals))
        assert len(segments) == 1
        np.testing.assert_array_equal(segments[0].values[:, 0], [1.0, 2.0, 3.0])
        assert segments[0].source_start == 2

    def test_entirely_missing_channel_warns_no_segments(self, caplog):
        vals = np.column_stack([np.arange(5.0), np.full(5, np.nan)])
        with caplog.at_level(logging.WARNING):
            segments = impute_and_split(make_frame(vals, ["a", "b"]))
        assert segments == []
        assert any("entirely missing" in rec.message for rec in caplog.records)

    def test_imputation_never_changes_present_values(self):
        rng = np.random.default_rng(3)
        vals = rng.uniform(0, 10, (200, 3))
        mask = rng.random((200, 3)) < 0.05
        vals[mask] = np.nan
        frame = make_frame(vals, ["a", "b", "c"])
        segments = impute_and_split(frame)
        for seg in segments:
            for local in range(seg.n_steps):
                src = seg.source_start + local
                for c in range(3):
                    if not np.isnan(vals[src, c]):
                        assert seg.values[local, c] == vals[src, c]

    def test_present_points_conserved_in_retained_rows(self):
        vals = np.arange(50.0)
        vals[5:13] = np.nan  # long gap: rows dropped
        vals[20:23] = np.nan  # short gap: imputed
        frame = make_frame(vals)
        segments = impute_and_split(frame)
        kept_rows = sum(s.n_steps for s in segments)
        # 8 rows dropped at the long gap, nothing else lost
        assert kept_rows == 50 - 8
        present_before = np.count_nonzero(~np.isnan(vals))
        present_after = sum(
            np.count_nonzero(~np.isnan(vals[s.source_start : s.source_start + s.n_steps]))
            for s in segments
        )
        assert present_after == present_before

    @given(
        gap=st.integers(min_value=1, max_value=12),
        left=st.floats(-100, 100),
        right=st.floats(-100, 100),
    )
    @settings(max_examples=40, deadline=None)
    def test_interpolation_endpoints_property(self, gap, left, right):
        vals = np.concatenate([[left], [np.nan] * gap, [right, right]])
        segments = impute_and_split(make_frame(vals), max_gap_steps=6)
        if gap <= 6:
            assert len(segments) == 1
            col = segments[0].values[:, 0]
            assert col[0] == left and col[gap + 1] == right
            diffs = np.diff(col[: gap + 2])
            np.testing.assert_allclose(diffs, diffs[0], atol=1e-9)
        else:
            assert len(segments) == 1  # singleton left side dropped (length < 2)
            assert segments[0].n_steps == 2


class TestChunk:
    def test_partition_arithmetic(self):
        seg = make_segment(np.arange(5000.0))
        chunks = chunk([seg], 2048)
        assert [c.n_steps for c in chunks] == [2048, 2048, 904]

    def test_short_segment_unchanged(self):
        seg = make_segment(np.arange(100.0))
        out = chunk([seg], 2048)
        assert out == [seg]

    def test_restitch_exact(self):
        seg = make_segment(np.arange(5000.0))
        chunks = chunk([seg], 1024)
        ordered, values = stitch(chunks)
        np.testing.assert_array_equal(values[:, 0], seg.values[:, 0])
        assert all(c.parent_id == seg.segment_id for c in ordered)

    def test_remainder_of_one_rebalanced(self):
        seg = make_segment(np.arange(4097.0))
        chunks = chunk([seg], 2048)
        assert [c.n_steps for c in chunks] == [2048, 2047, 2]
        _, values = stitch(chunks)
        np.testing.assert_array_equal(values[:, 0], seg.values[:, 0])

    def test_min_len(self):
        with pytest.raises(DataError):
            chunk([], 1)


class TestScaler:
    def test_paper_mapping(self):
        seg = make_segment(np.array([2.0, 7.0, 12.0]))
        scaler = fit_scaler([seg])
        out = scaler.apply(seg.values, seg.channels)
        np.testing.assert_allclose(out[:, 0], [0.0, 0.45, 0.9], atol=1e-15)

    def test_roundtrip(self):
        rng = np.random.default_rng(1)
        seg = make_segment(rng.uniform(-5, 40, (64, 2)), ["a", "b"])
        scaler = fit_scaler([seg])
        back = scaler.invert(scaler.apply(seg.values, ["a", "b"]), ["a", "b"])
        np.testing.assert_allclose(back, seg.values, atol=1e-12)

    def test_out_of_range_not_clipped(self):
        seg = make_segment(np.array([2.0, 12.0]))
        scaler = fit_scaler([seg])
        out = scaler.apply(np.array([22.0]), seg.channels)
        assert out[0] == pytest.approx(1.8, abs=1e-15)

    def test_degenerate_channel_maps_to_zero(self):
        seg = make_segment(np.full(10, 3.0))
        scaler = fit_scaler([seg])
        out = scaler.apply(seg.values, seg.channels)
        np.testing.assert_array_equal(out, np.zeros_like(out))
        back = scaler.invert(out, seg.channels)
        np.testing.assert_array_equal(back[:, 0], seg.values[:, 0])

    def test_fit_set_lands_in_range_with_extremes_attained(self):
        rng = np.random.default_rng(7)
        segs = [make_segment(rng.uniform(0, 50, (30, 2)), ["a", "b"]) for _ in range(3)]
        scaler = fit_scaler(segs)
        stacked = np.vstack([scaler.apply(s.values, ["a", "b"]) for s in segs])
        assert stacked.min() >= 0.0 and stacked.max() <= 0.9
        assert stacked.min(axis=0) == pytest.approx([0.0, 0.0], abs=0)
        assert stacked.max(axis=0) == pytest.approx([0.9, 0.9], abs=0)

    def test_empty_fit_rejected(self):
        with pytest.raises(DataError):
            fit_scaler([])

    def test_dict_roundtrip(self):
        seg = make_segment(np.arange(5.0))
        scaler = fit_scaler([seg])
        back = ScalingParams.from_dict(scaler.to_dict())
        np.testing.assert_array_equal(back.mins, scaler.mins)
        np.testing.assert_array_equal(back.maxs, scaler.maxs)


class TestSplitByYear:
    def test_boundary_cut(self):
        start = np.datetime64("2015-12-30T00:00:00", "s")
        seg = make_segment(np.arange(4.0 * 96), start=start)  # into 2016-01-02
        split = split_by_year([seg])
        assert len(split.train) == 1 and len(split.val) == 1 and not split.test
        train, val = split.train[0], split.val[0]
        assert str(train.timestamps[-1]) == "2015-12-31T23:45:00"
        assert str(val.timestamps[0]) == "2016-01-01T00:00:00"
        assert train.n_steps + val.n_steps == seg.n_steps

    def test_all_test_year(self):
        seg = make_segment(np.arange(96.0), start=np.datetime64("2017-05-01T00:00:00", "s"))
        split = split_by_year([seg])
        assert split.test == [seg] and not split.train and not split.val

    def test_outside_years_dropped_with_warning(self, caplog):
        seg = make_segment(np.arange(96.0), start=np.datetime64("2019-05-01T00:00:00", "s"))
        with caplog.at_level(logging.WARNING):
            split = split_by_year([seg])
        assert not split.all_segments()
        assert any("outside the split years" in rec.message for rec in caplog.records)

    def test_disjoint_and_covering(self):
        start = np.datetime64("2015-12-31T00:00:00", "s")
        seg = make_segment(np.arange(5.0 * 96), start=start)
        split = split_by_year([seg])
        pieces = split.all_segments()
        stamps = np.concatenate([p.timestamps for p in pieces])
        assert stamps.size == np.unique(stamps).size  # disjoint
        np.testing.assert_array_equal(np.sort(stamps), seg.timestamps)  # covering

    def test_bad_year_order(self):
        with pytest.raises(DataError):
            split_by_year([], 2017, 2016, 2015)


class TestSegmentsDir:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        vals = rng.uniform(0, 30, (700, 2))
        vals[100:110, 0] = np.nan
        frame = make_frame(vals, ["g01", "discharge"])
        segments = impute_and_split(frame)
        chunks = chunk(segments, 256)
        write_segments_dir(chunks, tmp_path)
        back = read_segments_dir(tmp_path)
        assert [s.segment_id for s in back] == [s.segment_id for s in chunks]
        for a, b in zip(chunks, back):
            np.testing.assert_array_equal(a.values, b.values)
            np.testing.assert_array_equal(a.timestamps, b.timestamps)
            assert a.parent_id == b.parent_id and a.parent_offset == b.parent_offset

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="manifest"):
            read_segments_dir(tmp_path)
