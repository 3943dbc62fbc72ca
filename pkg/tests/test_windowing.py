"""Normalization and segmentation: hand examples plus brute-force counting."""

import numpy as np
import pytest

from physio_bench import windowing
from physio_bench.errors import ConfigError, NoUsableSpan
from physio_bench.ingest import LabelSegment, Recording, SampledSeries


def _brute_force_count(T, W, S):
    """Enumerate window starts k*S and count those fitting inside [0, T]."""
    count = 0
    k = 0
    while k * S + W <= T + 1e-9:
        count += 1
        k += 1
    return count


class TestZNormalize:
    def test_zero_variance_collapses_to_zero(self):
        s = SampledSeries(0.0, 4.0, np.array([2.0, 2.0, 2.0]))
        out = windowing.znormalize(s, windowing.compute_stats(s))
        assert np.allclose(out.values, 0.0)

    def test_symmetric_two_point(self):
        s = SampledSeries(0.0, 4.0, np.array([0.0, 2.0]))
        out = windowing.znormalize(s, windowing.compute_stats(s))
        assert np.allclose(out.values, [-1.0, 1.0], atol=1e-7)

    def test_hand_population_moments(self):
        s = SampledSeries(0.0, 4.0, np.array([1.0, 3.0, 5.0]))
        out = windowing.znormalize(s, windowing.compute_stats(s))
        assert np.allclose(out.values, [-1.22474487, 0.0, 1.22474487], atol=1e-6)

    def test_rate_and_start_unchanged(self):
        s = SampledSeries(123.0, 32.0, np.arange(10.0))
        out = windowing.znormalize(s, windowing.compute_stats(s))
        assert out.start_epoch == 123.0 and out.rate_hz == 32.0

    def test_multiply_back_recovers_input(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            vals = rng.normal(scale=rng.uniform(0.1, 5.0), size=100)
            s = SampledSeries(0.0, 4.0, vals)
            st = windowing.compute_stats(s)
            if st.std <= 1e-6:
                continue
            out = windowing.znormalize(s, st)
            back = out.values * (st.std + st.epsilon) + st.mean
            assert np.max(np.abs(back - vals)) < 1e-9

    def test_normalized_moments(self):
        rng = np.random.default_rng(1)
        vals = rng.normal(3.0, 2.0, size=5000)
        s = SampledSeries(0.0, 4.0, vals)
        out = windowing.znormalize(s, windowing.compute_stats(s))
        assert abs(np.mean(out.values)) < 1e-9
        assert abs(np.std(out.values) - 1.0) < 1e-6


def _recording(duration_s, subject="s1", label="a", rates=(4.0, 4.0, 1.0, 32.0),
               start=1000.0):
    channels = {}
    for name, rate in zip(("EDA", "TEMP", "HR"), rates[:3]):
        n = int(duration_s * rate)
        channels[name] = SampledSeries(start, rate, np.arange(n, dtype=float))
    n = int(duration_s * rates[3])
    for axis in ("ACC_X", "ACC_Y", "ACC_Z"):
        channels[axis] = SampledSeries(start, rates[3], np.arange(n, dtype=float))
    segs = [LabelSegment(label, start, start + duration_s)]
    return Recording(subject, channels, None, segs)


class TestSegment:
    def test_paper_window_30_15(self):
        windows = windowing.segment(_recording(60), windowing.WindowPolicy(30, 15))
        assert len(windows) == 3
        assert [w.t_start - 1000.0 for w in windows] == [0.0, 15.0, 30.0]

    def test_paper_window_10_5_single(self):
        windows = windowing.segment(_recording(10), windowing.WindowPolicy(10, 5))
        assert len(windows) == 1

    def test_too_short_span_raises(self):
        with pytest.raises(NoUsableSpan):
            windowing.segment(_recording(29), windowing.WindowPolicy(30, 15))

    def test_count_formula_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            W = float(rng.uniform(1.0, 60.0))
            S = float(rng.uniform(0.1, 1.0)) * W
            T = float(rng.uniform(1.0, 8.0)) * W
            expected = _brute_force_count(T, W, S)
            assert windowing.candidate_count(T, W, S) == expected

    def test_no_samples_outside_window(self):
        rec = _recording(95)
        policy = windowing.WindowPolicy(30, 15)
        for w in windowing.segment(rec, policy):
            for ch, vals in w.samples.items():
                series = rec.channels[ch]
                # reconstruct timestamps of the slice from its position
                i0, i1 = windowing.slice_indices(series, w.t_start, w.t_end)
                ts = series.timestamps()[i0:i1]
                assert np.all(ts >= w.t_start - 1e-9)
                assert np.all(ts < w.t_end - 1e-9 + 1e-6)
                assert len(vals) == i1 - i0

    def test_partially_covered_required_channel_shrinks_span(self):
        rec = _recording(60)
        # HR channel covers only the first 20 s, so no 30-s joint span exists.
        rec.channels["HR"] = SampledSeries(1000.0, 1.0, np.arange(20.0))
        with pytest.raises(NoUsableSpan):
            windowing.segment(rec, windowing.WindowPolicy(30, 15, min_fill=0.8))

    def test_late_starting_channel_shifts_span(self):
        rec = _recording(60)
        # TEMP starts 20 s late; usable span is [1020, 1060) -> 2 windows,
        # which straddle the label segment boundary only if labels disagree.
        rec.channels["TEMP"] = SampledSeries(1020.0, 4.0, np.arange(160.0))
        windows = windowing.segment(rec, windowing.WindowPolicy(30, 15))
        assert [w.t_start for w in windows] == [1020.0]
        nominal = {"EDA": 120, "TEMP": 120, "HR": 30, "ACC_X": 960}
        for ch, n in nominal.items():
            assert len(windows[0].samples[ch]) == n

    def test_ibi_mask(self):
        from physio_bench.ingest import EventSeries

        rec = _recording(60)
        rec.ibi = EventSeries(1000.0, np.array([1.0, 16.0, 31.0, 59.0]),
                              np.array([0.8, 0.9, 0.85, 0.8]))
        windows = windowing.segment(rec, windowing.WindowPolicy(30, 15))
        assert list(windows[0].ibi_durations) == [0.8, 0.9]
        assert list(windows[1].ibi_durations) == [0.9, 0.85]

    def test_fractional_epoch_starts_keep_slices_consistent(self):
        # realistic epoch magnitudes with fractional starts: slices stay
        # inside their window and fill within one sample of nominal
        rng = np.random.default_rng(7)
        for _ in range(50):
            start = 1.6e9 + float(rng.uniform(0, 1))
            rate = float(rng.choice([1.0, 4.0, 32.0, 64.0]))
            series = SampledSeries(start, rate, np.arange(int(90 * rate)))
            t0 = start + float(rng.uniform(0, 30))
            w = float(rng.uniform(5, 30))
            i0, i1 = windowing.slice_indices(series, t0, t0 + w)
            ts = series.timestamps()[i0:i1]
            assert np.all(ts >= t0 - 1e-6)
            assert np.all(ts < t0 + w + 1e-6)
            assert abs((i1 - i0) - w * rate) <= 1.0 + 1e-6

    def test_policy_validation(self):
        with pytest.raises(ConfigError):
            windowing.WindowPolicy(30, 31)
        with pytest.raises(ConfigError):
            windowing.WindowPolicy(30, 15, min_fill=0.0)
        with pytest.raises(ConfigError):
            windowing.WindowPolicy(30, 15, label_rule="fuzzy")


class TestAssignLabel:
    SEGS = [LabelSegment("stress", 0.0, 100.0), LabelSegment("rest", 100.0, 200.0)]

    def test_fully_inside(self):
        assert windowing.assign_label(10, 40, self.SEGS, "strict") == "stress"

    def test_straddle_strict_drops(self):
        assert windowing.assign_label(90, 120, self.SEGS, "strict") is None

    def test_fifty_fifty_majority_drops(self):
        assert windowing.assign_label(85, 115, self.SEGS, "majority") is None

    def test_sixty_percent_majority_wins(self):
        segs = [LabelSegment("aerobic", 0.0, 18.0), LabelSegment("rest", 18.0, 60.0)]
        assert windowing.assign_label(0, 30, segs, "majority") == "aerobic"
