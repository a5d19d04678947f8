import gzip

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from methodperf.traces import (
    COARSE_COLUMNS,
    FINE_COLUMNS,
    CoarseRecord,
    FineCallRecord,
    TraceFormatError,
    aggregate_repetitions,
    filter_outliers,
    iter_fine,
    log_histogram,
    read_blackbox,
    read_coarse,
    read_fine,
    summarize_fine,
    tail_count,
    to_frame,
    write_coarse,
    write_fine,
)


def fine_group(durations, cfg="c1", rep=0, method="m"):
    return [FineCallRecord(cfg, rep, method, i, d) for i, d in enumerate(durations)]


class TestFileFormats:
    def test_empty_body(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text(",".join(COARSE_COLUMNS) + "\n")
        assert read_coarse(path).empty

    def test_bad_header(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text("config_id,rep,method,total_time_ns,call_count\n")
        with pytest.raises(TraceFormatError) as info:
            read_coarse(path)
        assert info.value.line == 1

    def test_negative_duration_reports_line(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text(",".join(FINE_COLUMNS) + "\nc1,0,m,0,10\nc1,0,m,1,-5\n")
        with pytest.raises(TraceFormatError) as info:
            read_fine(path)
        assert info.value.line == 3

    def test_non_numeric(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text(",".join(COARSE_COLUMNS) + "\nc1,0,m,abc,1\n")
        with pytest.raises(TraceFormatError, match="total_time_ns"):
            read_coarse(path)

    def test_zero_calls_with_time(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text(",".join(COARSE_COLUMNS) + "\nc1,0,m,10,0\n")
        with pytest.raises(TraceFormatError):
            read_coarse(path)

    def test_duplicate_call_index(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text(",".join(FINE_COLUMNS) + "\nc1,0,m,0,10\nc1,0,m,0,11\n")
        with pytest.raises(TraceFormatError, match="duplicate"):
            read_fine(path)

    def test_comma_in_method_rejected(self, tmp_path):
        df = to_frame([CoarseRecord("c1", 0, "a,b", 1, 1)], COARSE_COLUMNS)
        with pytest.raises(TraceFormatError):
            write_coarse(df, tmp_path / "c.csv")

    def test_coarse_round_trip(self, tmp_path):
        records = [CoarseRecord("c1", 0, "p.A::f(int)", 120, 3), CoarseRecord("c2", 1, "p.B::g()", 0, 0)]
        write_coarse(records, tmp_path / "c.csv")
        back = read_coarse(tmp_path / "c.csv")
        assert [CoarseRecord(*r) for r in back.itertuples(index=False)] == records

    def test_fine_round_trip_gzip(self, tmp_path):
        records = fine_group([5, 7, 9])
        path = tmp_path / "f.csv.gz"
        write_fine(records, path)
        with gzip.open(path, "rt") as fh:
            assert fh.readline().strip() == ",".join(FINE_COLUMNS)
        assert list(iter_fine(path)) == records

    def test_args_hash_column_accepted(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text(",".join(FINE_COLUMNS) + ",args_hash\nc1,0,m,0,10,ab12\n")
        assert list(read_fine(path).columns) == FINE_COLUMNS + ["args_hash"]

    def test_blackbox(self, tmp_path):
        path = tmp_path / "b.csv"
        path.write_text("config_id,repetition,total_time_ns\nc1,0,100\nc1,1,110\n")
        assert read_blackbox(path)["total_time_ns"].tolist() == [100, 110]


class TestAggregateRepetitions:
    def test_mean(self):
        records = [CoarseRecord("c1", r, "m", t, 1) for r, t in enumerate([100, 110, 90])]
        assert aggregate_repetitions(records)["m"].time_ns.tolist() == [100.0]

    def test_single_repetition(self):
        ds = aggregate_repetitions([CoarseRecord("c1", 0, "m", 123, 4)])["m"]
        assert ds.time_ns.tolist() == [123.0]
        assert ds.call_count.tolist() == [4.0]

    def test_absent_method_is_zero(self):
        records = [CoarseRecord("c1", 0, "m", 100, 1), CoarseRecord("c2", 0, "other", 50, 1)]
        ds = aggregate_repetitions(records, ["c1", "c2"])["m"]
        assert ds.time_ns.tolist() == [100.0, 0.0]
        assert ds.call_count.tolist() == [1.0, 0.0]

    def test_missing_repetition_counts_as_zero(self):
        records = [CoarseRecord("c1", 0, "m", 100, 1), CoarseRecord("c1", 1, "x", 5, 1)]
        assert aggregate_repetitions(records)["m"].time_ns.tolist() == [50.0]

    def test_median(self):
        records = [CoarseRecord("c1", r, "m", t, 1) for r, t in enumerate([100, 110, 400])]
        assert aggregate_repetitions(records, statistic="median")["m"].time_ns.tolist() == [110.0]

    def test_encoder(self):
        records = [CoarseRecord("c1", 0, "m", 1, 1), CoarseRecord("c2", 0, "m", 2, 1)]
        ds = aggregate_repetitions(records, ["c2", "c1"], {"c1": [0.0], "c2": [1.0]}.__getitem__)["m"]
        assert ds.X.tolist() == [[1.0], [0.0]]
        assert ds.time_ns.tolist() == [2.0, 1.0]


class TestFilterOutliers:
    @pytest.mark.parametrize("n, kept", [(200, 198), (50, 49), (100, 99), (101, 99), (1, 0)])
    def test_retained_counts(self, n, kept):
        assert len(filter_outliers(fine_group(range(1, n + 1)))) == kept

    def test_zero_fraction_is_identity(self):
        calls = fine_group([3, 1, 2])
        assert len(filter_outliers(calls, 0.0)) == 3

    def test_drops_longest(self):
        out = filter_outliers(fine_group([10] * 99 + [10_000]))
        assert out["duration_ns"].max() == 10

    def test_ties_drop_higher_index(self):
        out = filter_outliers(fine_group([5] * 50))
        assert 49 not in out["call_index"].tolist()

    def test_groups_independent(self):
        calls = fine_group([1] * 50, rep=0) + fine_group([1] * 50, rep=1) + fine_group([1] * 10, method="q")
        out = filter_outliers(calls)
        assert out.groupby(["repetition", "method"]).size().to_dict() == {(0, "m"): 49, (1, "m"): 49, (0, "q"): 9}

    def test_rejects_bad_fraction(self):
        with pytest.raises(ValueError):
            filter_outliers(fine_group([1]), 0.5)


class TestSummarizeFine:
    def test_single_repetition(self):
        ds = summarize_fine(fine_group([10, 20, 30]))["m"]
        assert ds.time_ns.tolist() == [60.0]
        assert ds.call_count.tolist() == [3.0]

    def test_mean_over_repetitions(self):
        calls = fine_group([60], rep=0) + fine_group([30, 50], rep=1)
        assert summarize_fine(calls)["m"].time_ns.tolist() == [70.0]

    def test_no_calls_is_zero(self):
        calls = fine_group([10]) + fine_group([4], cfg="c2", method="other")
        ds = summarize_fine(calls, ["c1", "c2"], methods=["m"])["m"]
        assert ds.time_ns.tolist() == [10.0, 0.0]
        assert ds.call_count.tolist() == [1.0, 0.0]

    def test_histograms(self):
        ds = summarize_fine(fine_group([2_000, 3_000, 50_000_000]), histograms=True)["m"]
        assert ds.histograms.shape == (1, 64)
        assert ds.histograms.sum() == 3


def test_log_histogram_clips():
    counts = log_histogram([1, 1e3, 1e12])
    assert counts[0] == 2 and counts[-1] == 1


def test_tail_count():
    assert [tail_count(n) for n in (1, 50, 100, 101, 200)] == [1, 1, 1, 2, 2]


# -- properties ---------------------------------------------------------------

durations = st.lists(st.integers(0, 10**9), min_size=1, max_size=300)


@settings(max_examples=80, deadline=None)
@given(durations, st.sampled_from([0.0, 0.01, 0.05, 0.2]))
def test_filter_drop_counts_and_monotone_sum(values, fraction):
    calls = fine_group(values)
    once = filter_outliers(calls, fraction)
    assert once["duration_ns"].sum() <= sum(values)
    assert len(once) == len(values) - (tail_count(len(values), fraction) if fraction else 0)
    assert len(filter_outliers(once, fraction)) == len(once) - (tail_count(len(once), fraction) if fraction else 0)
    kept = sorted(values)[: len(once)]
    assert sorted(once["duration_ns"].tolist()) == kept


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 10**9), min_size=2, max_size=6), st.randoms())
def test_aggregate_is_permutation_invariant(totals, rnd):
    records = [CoarseRecord("c1", r, "m", t, 1) for r, t in enumerate(totals)]
    shuffled = list(records)
    rnd.shuffle(shuffled)
    a = aggregate_repetitions(records)["m"].time_ns
    b = aggregate_repetitions(shuffled)["m"].time_ns
    assert a.tolist() == b.tolist()


@settings(max_examples=40, deadline=None)
@given(st.lists(durations, min_size=1, max_size=4))
def test_unfiltered_summary_equals_raw_sums(reps):
    calls = [r for i, values in enumerate(reps) for r in fine_group(values, rep=i)]
    ds = summarize_fine(calls)["m"]
    assert ds.time_ns[0] == pytest.approx(np.mean([sum(v) for v in reps]), rel=1e-12)
