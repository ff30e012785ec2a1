"""Tests for regularity scoring, persistence pairing, region proposal,
and detection metrics.

`persistence1d` is verified against an O(n^2) minimax-path oracle: the
persistence of a local minimum m is the smallest, over all contiguous
paths from m to any strictly lower point, of (path maximum - value at m);
its paired maximum is that minimizing path's maximum. Ties use the
(value, index) order everywhere — equal values resolve toward the lower
index — matching the documented plateau rule.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convlstm_anomaly import anomaly as A
from convlstm_anomaly import network as N
from convlstm_anomaly import synth as S
from convlstm_anomaly import training as TR
from convlstm_anomaly.errors import ConfigError, DataError


def oracle_persistence_pairs(values):
    """Path-based persistence pairing (quadratic, brute force)."""
    v = np.asarray(values, dtype=np.float64)
    n = v.size

    def key(i):
        return (v[i], i)

    founders = [
        i
        for i in range(n)
        if (i == 0 or key(i - 1) > key(i)) and (i == n - 1 or key(i + 1) > key(i))
    ]
    global_min = min(range(n), key=key)
    pairs = []
    for m in founders:
        if m == global_min:
            saddle = int(np.argmax(v))  # global max, first occurrence
        else:
            best = None
            for j in range(n):
                if key(j) < key(m):
                    lo, hi = min(m, j), max(m, j)
                    s = max(range(lo, hi + 1), key=key)
                    if best is None or key(s) < key(best):
                        best = s
            saddle = best
        pairs.append(
            A.ExtremaPair(
                min_index=m,
                min_value=float(v[m]),
                max_index=saddle,
                max_value=float(v[saddle]),
            )
        )
    pairs.sort(key=lambda p: p.min_index)
    return pairs


def assert_same_pairs(got, want):
    assert len(got) == len(want)
    for g, w in zip(got, want):
        assert g.min_index == w.min_index
        assert g.max_index == w.max_index
        assert abs(g.min_value - w.min_value) <= 1e-12
        assert abs(g.max_value - w.max_value) <= 1e-12
        assert abs(g.persistence - w.persistence) <= 1e-12


def static_clip(length):
    spec = S.SceneSpec(
        frame_size=8, background=0.2,
        objects=[S.ObjectSpec(shape="square", size=3, intensity=0.6,
                              position=(2.0, 2.0), velocity=(0.0, 0.0))],
    )
    return S.generate(spec, length, seed=0)


def small_model(composite=True, seed=0):
    cfg = N.NetworkConfig(
        frame_size=8, input_len=2, output_len=2, patch_factor=2,
        filter_size=3, layer_channels=(6,), conditioned=False,
        composite=composite,
    )
    return N.init_model(cfg, seed)


class TestSlidingErrors:
    def test_series_length_is_clip_minus_window_plus_one(self):
        model = small_model()
        errors = A.sliding_errors(model, static_clip(20))
        assert errors.size == 20 - 4 + 1

    def test_minimal_clip_gives_single_window(self):
        model = small_model()
        assert A.sliding_errors(model, static_clip(4)).size == 1

    def test_five_in_five_out_leaves_last_nine_frames_unscored(self):
        cfg = N.NetworkConfig(
            frame_size=8, input_len=5, output_len=5, patch_factor=2,
            filter_size=3, layer_channels=(2,), conditioned=False,
        )
        model = N.init_model(cfg, 0)
        errors = A.sliding_errors(model, static_clip(20))
        assert errors.size == 11  # 20 - 9

    def test_too_short_clip_rejected(self):
        with pytest.raises(DataError):
            A.sliding_errors(small_model(), static_clip(3))

    def test_reconstruction_source_needs_past_decoder(self):
        baseline = small_model(composite=False)
        clip = static_clip(6)
        with pytest.raises(ConfigError):
            A.sliding_errors(baseline, clip, "reconstruction")
        with pytest.raises(ConfigError):
            A.sliding_errors(baseline, clip, "combined")
        assert A.sliding_errors(baseline, clip, "prediction").size == 3

    def test_unknown_source_rejected(self):
        with pytest.raises(ConfigError):
            A.sliding_errors(small_model(), static_clip(6), "both")

    def test_combined_is_frame_weighted_mean_of_components(self):
        model = small_model()
        clip = static_clip(8)
        rec = A.sliding_errors(model, clip, "reconstruction")
        pred = A.sliding_errors(model, clip, "prediction")
        comb = A.sliding_errors(model, clip, "combined")
        np.testing.assert_allclose(comb, 0.5 * rec + 0.5 * pred, rtol=1e-12)

    def test_threads_do_not_change_results(self):
        model = small_model()
        clip = static_clip(12)
        a = A.sliding_errors(model, clip, "combined", threads=1)
        b = A.sliding_errors(model, clip, "combined", threads=3)
        np.testing.assert_array_equal(a, b)

    def test_memorized_constant_clip_scores_near_zero(self):
        clip = static_clip(20)
        model = small_model()
        tc = TR.TrainConfig(optimizer="adam", learning_rate=1e-3,
                            max_iterations=1500, batch_size=5,
                            validation_fraction=0.0, seed=0)
        TR.train(model, [clip], tc)
        errors = A.sliding_errors(model, clip, "combined")
        assert np.all(errors < 1e-4)


class TestRegularity:
    def test_constant_series_all_ones(self):
        np.testing.assert_array_equal(A.regularity([2.0, 2.0, 2.0]), [1, 1, 1])

    def test_worked_example(self):
        g = A.regularity([2.0, 4.0, 1.0])
        np.testing.assert_allclose(g, [0.75, 0.25, 1.0])

    def test_min_error_scores_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            e = rng.uniform(0.1, 5.0, size=rng.integers(2, 40))
            g = A.regularity(e)
            assert g[np.argmin(e)] == 1.0

    def test_all_zero_degenerate(self):
        np.testing.assert_array_equal(A.regularity(np.zeros(4)), np.ones(4))

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            A.regularity([])

    @given(
        st.lists(st.floats(0.0, 1e6), min_size=1, max_size=60),
        st.integers(-8, 8),
    )
    @settings(max_examples=200, deadline=None)
    def test_power_of_two_scaling_is_bit_exact(self, errors, exp):
        e = np.asarray(errors)
        c = 2.0**exp
        assert np.array_equal(A.regularity(e), A.regularity(c * e))

    @given(st.lists(st.floats(0.001, 1e3), min_size=2, max_size=60))
    @settings(max_examples=200, deadline=None)
    def test_scaling_invariance_and_range(self, errors):
        e = np.asarray(errors)
        g = A.regularity(e)
        np.testing.assert_allclose(g, A.regularity(3.7 * e), atol=1e-12)
        assert np.all(g >= e.min() / e.max() - 1e-12)
        assert np.all(g <= 1.0)

    def test_adding_constant_keeps_ordering(self):
        rng = np.random.default_rng(1)
        e = rng.uniform(0.5, 2.0, size=30)
        g1 = A.regularity(e)
        g2 = A.regularity(e + 10.0)
        np.testing.assert_array_equal(np.argsort(g1), np.argsort(g2))


class TestPersistence1d:
    def test_monotone_series_single_pair(self):
        pairs = A.persistence1d([1.0, 2.0, 3.0, 4.0])
        assert len(pairs) == 1
        p = pairs[0]
        assert (p.min_index, p.max_index) == (0, 3)
        assert p.persistence == 3.0

    def test_worked_example(self):
        series = [1.0, 0.3, 0.8, 0.2, 0.9, 0.25, 1.0]
        pairs = {p.min_index: p for p in A.persistence1d(series)}
        assert set(pairs) == {1, 3, 5}
        assert pairs[3].persistence == pytest.approx(0.8)
        assert pairs[1].persistence == pytest.approx(0.5)
        assert pairs[1].max_value == pytest.approx(0.8)
        assert pairs[5].persistence == pytest.approx(0.65)
        assert pairs[5].max_value == pytest.approx(0.9)

    def test_exactly_one_pair_holds_global_minimum(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            v = rng.normal(size=rng.integers(1, 40))
            pairs = A.persistence1d(v)
            gmin = min(range(v.size), key=lambda i: (v[i], i))
            assert sum(p.min_index == gmin for p in pairs) == 1

    def test_pair_count_equals_strict_local_minima(self):
        v = [3.0, 1.0, 2.0, 0.5, 2.5, 2.5, 1.5, 4.0]
        assert len(A.persistence1d(v)) == 3  # minima at 1, 3, 6

    def test_matches_oracle_on_random_series(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            n = int(rng.integers(1, 51))
            v = rng.normal(size=n)
            assert_same_pairs(A.persistence1d(v), oracle_persistence_pairs(v))

    def test_matches_oracle_on_plateau_series(self):
        rng = np.random.default_rng(4)
        for _ in range(300):
            n = int(rng.integers(1, 41))
            v = rng.integers(0, 4, size=n).astype(float)  # many ties
            assert_same_pairs(A.persistence1d(v), oracle_persistence_pairs(v))

    def test_shift_invariance_scale_covariance(self):
        rng = np.random.default_rng(5)
        v = rng.normal(size=30)
        base = A.persistence1d(v)
        shifted = A.persistence1d(v + 5.0)
        scaled = A.persistence1d(v * 2.0)
        assert [p.min_index for p in base] == [p.min_index for p in shifted]
        assert [p.max_index for p in base] == [p.max_index for p in scaled]
        for b, s in zip(base, shifted):
            assert b.persistence == pytest.approx(s.persistence)
        for b, s in zip(base, scaled):
            assert s.persistence == pytest.approx(2.0 * b.persistence)

    def test_length_one(self):
        pairs = A.persistence1d([7.0])
        assert len(pairs) == 1 and pairs[0].persistence == 0.0


class TestFilterExtrema:
    SERIES = [1.0, 0.3, 0.8, 0.2, 0.9, 0.25, 1.0]

    def test_zero_threshold_keeps_all(self):
        pairs = A.persistence1d(self.SERIES)
        minima, _ = A.filter_extrema(pairs, 0.0)
        assert minima == [1, 3, 5]

    def test_above_range_keeps_only_global(self):
        pairs = A.persistence1d(self.SERIES)
        minima, maxima = A.filter_extrema(pairs, 2.0)
        assert minima == [3]
        assert maxima == [0]  # global max value 1.0 first occurs at index 0

    def test_worked_threshold(self):
        pairs = A.persistence1d(self.SERIES)
        minima, _ = A.filter_extrema(pairs, 0.55)
        assert minima == [3, 5]

    def test_negative_threshold_rejected(self):
        with pytest.raises(ConfigError):
            A.filter_extrema([], -0.1)


class TestProposeRegions:
    def test_single_minimum_window(self):
        regions = A.propose_regions([100], [], 300)
        assert [r.as_interval() for r in regions] == [(50, 150)]

    def test_merge_and_interior_maximum_precluded(self):
        regions = A.propose_regions([100, 130], [115], 300)
        assert [r.as_interval() for r in regions] == [(50, 180)]
        assert regions[0].minima == (100, 130)

    def test_midpoint_trim(self):
        regions = A.propose_regions([100], [180], 300)
        assert [r.as_interval() for r in regions] == [(50, 140)]

    def test_left_trim(self):
        regions = A.propose_regions([100], [30], 300)
        assert [r.as_interval() for r in regions] == [(65, 150)]

    def test_clamped_to_bounds(self):
        regions = A.propose_regions([10, 190], [], 200)
        ivs = [r.as_interval() for r in regions]
        assert ivs == [(0, 60), (140, 199)]

    def test_overlapping_events_merge(self):
        # 100 and 180 are separate events (gap > 50) with overlapping windows
        regions = A.propose_regions([100, 180], [], 300)
        assert [r.as_interval() for r in regions] == [(50, 230)]

    def test_unsorted_rejected(self):
        with pytest.raises(ConfigError):
            A.propose_regions([5, 2], [], 10)

    def test_out_of_bounds_rejected(self):
        with pytest.raises(ConfigError):
            A.propose_regions([12], [], 10)

    @given(
        st.lists(st.integers(0, 400), min_size=1, max_size=12),
        st.lists(st.integers(0, 400), max_size=6),
    )
    @settings(max_examples=200, deadline=None)
    def test_disjoint_sorted_and_in_bounds(self, minima, maxima):
        regions = A.propose_regions(sorted(set(minima)), sorted(set(maxima)), 401)
        for r in regions:
            assert 0 <= r.start <= r.end <= 400
        for a, b in zip(regions, regions[1:]):
            assert a.end < b.start

    @given(
        st.lists(st.integers(0, 400), min_size=1, max_size=12),
    )
    @settings(max_examples=100, deadline=None)
    def test_idempotent_under_remerge(self, minima):
        regions = A.propose_regions(sorted(set(minima)), [], 401)
        again = A.propose_regions(sorted(set(minima)), [], 401)
        assert regions == again


class TestEvaluate:
    def test_exact_match(self):
        report = A.evaluate([(10, 20)], [(10, 20)])
        assert report.precision == 1.0 and report.recall == 1.0

    def test_single_tp_for_multiple_detections(self):
        report = A.evaluate([(10, 14), (16, 20)], [(0, 30)])
        assert report.true_positives == 1
        assert report.false_positives == 0

    def test_insufficient_overlap_counts_fp_and_fn(self):
        report = A.evaluate([(0, 99)], [(80, 99)])
        assert report.true_positives == 0
        assert report.false_positives == 1
        assert report.false_negatives == 1

    def test_empty_everything_gives_unit_scores(self):
        report = A.evaluate([], [])
        assert report.precision == 1.0 and report.recall == 1.0

    def test_bad_overlap_rejected(self):
        with pytest.raises(ConfigError):
            A.evaluate([], [], overlap=0.0)

    @given(
        st.lists(
            st.tuples(st.integers(0, 200), st.integers(0, 80)).map(
                lambda t: (t[0], t[0] + t[1])
            ),
            max_size=8,
        ),
        st.lists(
            st.tuples(st.integers(0, 200), st.integers(0, 80)).map(
                lambda t: (t[0], t[0] + t[1])
            ),
            max_size=8,
        ),
    )
    @settings(max_examples=150, deadline=None)
    def test_spurious_proposals_never_raise_precision(self, props, gts):
        base = A.evaluate(props, gts)
        spurious = A.evaluate(props + [(1000, 1100)], gts)
        assert spurious.precision <= base.precision + 1e-12
        assert spurious.recall == base.recall

    def test_removing_proposals_never_raises_recall(self):
        props = [(0, 10), (50, 60), (100, 110)]
        gts = [(0, 10), (50, 60)]
        full = A.evaluate(props, gts)
        fewer = A.evaluate(props[:1], gts)
        assert fewer.recall <= full.recall


class TestSweep:
    def test_constant_scores_only_global_pair(self):
        scores = np.full(200, 0.5)
        regions = A.detect_regions(scores, threshold=0.05)
        # the always-kept global pair proposes one region around index 0
        assert [r.as_interval() for r in regions] == [(0, 50)]

    def test_sweep_rows_cover_grid(self):
        rng = np.random.default_rng(6)
        scores = rng.uniform(size=120)
        rows = A.threshold_sweep([scores], [[(30, 60)]])
        assert len(rows) == 20
        assert rows[0].threshold == 0.05 and rows[-1].threshold == 1.0

    def test_best_f1(self):
        rows = A.threshold_sweep(
            [np.concatenate([np.ones(100), np.zeros(30), np.ones(100)])],
            [[(100, 129)]],
            window=20,
            merge_distance=20,
        )
        best = A.best_f1_row(rows)
        assert best.recall == 1.0

    def test_window_labels(self):
        labels = A.window_anomaly_labels([(5, 8)], n_windows=12, window_len=4)
        want = np.zeros(12, dtype=bool)
        want[2:9] = True  # windows starting 2..8 intersect frames 5..8
        np.testing.assert_array_equal(labels, want)


class TestSeriesFiles:
    def test_regularity_csv_roundtrip(self, tmp_path):
        rng = np.random.default_rng(7)
        e = rng.uniform(size=15)
        g = A.regularity(e)
        path = tmp_path / "regularity.csv"
        A.write_regularity_csv(path, e, g)
        e2, g2 = A.read_regularity_csv(path)
        np.testing.assert_array_equal(e, e2)
        np.testing.assert_array_equal(g, g2)

    def test_report_file(self, tmp_path):
        report = A.evaluate([(0, 10)], [(0, 10)])
        rows = A.threshold_sweep([np.linspace(0, 1, 30)], [[(5, 9)]])
        path = tmp_path / "report.txt"
        A.write_report(path, report, rows)
        text = path.read_text()
        assert "precision 1.0000" in text
        assert "threshold tp fp fn precision recall f1" in text
