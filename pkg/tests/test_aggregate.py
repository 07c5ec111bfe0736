import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from salaudit import errors
from salaudit.aggregate import (
    MEAN,
    PEAK,
    ImageSaliencyStat,
    mean_artefact_saliency,
    peak_fraction,
    per_class_report,
    top_pixel_count,
    zscore_normalize,
)
from tests.conftest import make_map, make_mask


def stat(image_id, true_class, mean=0.0, peak=0.0, correct=True):
    return ImageSaliencyStat(
        image_id=image_id,
        mean_artefact=mean,
        peak_fraction=peak,
        artefact_pixels=1,
        true_class=true_class,
        predicted_class=true_class if correct else true_class + 1,
        correct=correct,
    )


class TestMeanArtefact:
    def test_constant_map(self):
        m = make_map(np.full((4, 4), 0.5))
        mask = make_mask(np.eye(4, dtype=bool))
        assert mean_artefact_saliency(m, mask) == 0.5

    def test_diagonal_pixels(self):
        m = make_map([[1.0, 2.0], [3.0, 4.0]])
        mask = make_mask([[True, False], [False, True]])
        assert mean_artefact_saliency(m, mask) == 2.5

    def test_empty_mask(self):
        with pytest.raises(errors.EmptyMask):
            mean_artefact_saliency(
                make_map(np.ones((2, 2))), make_mask(np.zeros((2, 2), bool))
            )

    def test_shape_mismatch(self):
        with pytest.raises(errors.ShapeMismatch):
            mean_artefact_saliency(
                make_map(np.ones((2, 2))), make_mask(np.ones((3, 3), bool))
            )

    @given(
        hnp.arrays(np.float64, (5, 5), elements=st.floats(-10, 10)),
        st.floats(-5, 5),
    )
    @settings(max_examples=50)
    def test_shift_equivariant_scale_covariant(self, values, delta):
        mask = make_mask(np.tri(5, dtype=bool))
        base = mean_artefact_saliency(make_map(values), mask)
        shifted = mean_artefact_saliency(make_map(values + delta), mask)
        assert shifted == pytest.approx(base + delta, abs=1e-9)
        scaled = mean_artefact_saliency(make_map(values * 3.0), mask)
        assert scaled == pytest.approx(3.0 * base, abs=1e-9)


def brute_force_peak(values, bits, percentile):
    """Independent oracle: rank every pixel explicitly."""
    flat = [(-v, i) for i, v in enumerate(np.asarray(values, float).ravel())]
    flat.sort()
    total = len(flat)
    k = max(1, math.ceil(round((100.0 - percentile) * total / 100.0, 9)))
    top = [i for _, i in flat[:k]]
    hits = sum(bool(np.asarray(bits).ravel()[i]) for i in top)
    return hits / k


class TestPeakFraction:
    def test_masked_top_pixel(self):
        m = make_map([[1.0, 2.0], [3.0, 4.0]])
        mask = make_mask([[False, False], [True, False]])
        assert peak_fraction(m, mask, 50.0) == 0.5  # top-2 = {4, 3}, 3 masked

    def test_full_mask_is_one(self):
        m = make_map(np.arange(16.0).reshape(4, 4))
        assert peak_fraction(m, make_mask(np.ones((4, 4), bool)), 75.0) == 1.0

    def test_disjoint_mask_is_zero(self):
        m = make_map([[1.0, 2.0], [3.0, 4.0]])
        mask = make_mask([[True, False], [False, False]])
        assert peak_fraction(m, mask, 50.0) == 0.0

    def test_bad_percentile(self):
        m = make_map(np.ones((2, 2)))
        mask = make_mask(np.ones((2, 2), bool))
        for p in (0.0, 100.0, -1.0, 101.0):
            with pytest.raises(errors.BadPercentile):
                peak_fraction(m, mask, p)

    def test_top_pixel_count_exact_fractions(self):
        assert top_pixel_count(400, 98.0) == 8
        assert top_pixel_count(100, 98.0) == 2
        assert top_pixel_count(10, 98.0) == 1
        assert top_pixel_count(1000, 97.5) == 25

    @given(
        hnp.arrays(np.float64, (6, 6), elements=st.floats(-100, 100)),
        hnp.arrays(np.bool_, (6, 6)),
        st.floats(1.0, 99.0),
    )
    @settings(max_examples=60)
    def test_matches_brute_force(self, values, bits, percentile):
        got = peak_fraction(make_map(values), make_mask(bits), percentile)
        assert got == pytest.approx(brute_force_peak(values, bits, percentile))

    @given(
        hnp.arrays(np.float64, (6, 6), elements=st.floats(-50, 50)),
        st.sampled_from([1e-3, 1e3, 7.0]),
    )
    @settings(max_examples=60)
    def test_scale_invariance_exact(self, values, lam):
        mask = make_mask(np.tri(6, dtype=bool))
        assert peak_fraction(make_map(values * lam), mask, 90.0) == peak_fraction(
            make_map(values), mask, 90.0
        )

    def test_random_permutation_expectation(self):
        # expected fraction equals mask coverage under a random map
        rng = np.random.default_rng(42)
        bits = np.zeros(100, dtype=bool)
        bits[:30] = True
        bits = bits.reshape(10, 10)
        mask = make_mask(bits)
        n_trials = 2000
        vals = [
            peak_fraction(make_map(rng.permutation(100).reshape(10, 10) * 1.0), mask, 90.0)
            for _ in range(n_trials)
        ]
        mean = np.mean(vals)
        # hypergeometric: k=10 draws from 100 with 30 marked
        se = math.sqrt(0.3 * 0.7 / 10 * (90 / 99)) / math.sqrt(n_trials)
        assert abs(mean - 0.3) < 3 * se


class TestZscore:
    def test_two_pixel_dataset(self):
        maps = [make_map([[0.0, 2.0]], image_id="a")]
        stats = [stat("a", 0, mean=2.0)]
        out, mu, sigma = zscore_normalize(stats, maps)
        assert (mu, sigma) == (1.0, 1.0)
        assert out[0].mean_artefact == 1.0

    def test_degenerate(self):
        maps = [make_map(np.full((2, 2), 3.0), image_id="a")]
        with pytest.raises(errors.DegenerateDistribution):
            zscore_normalize([stat("a", 0, mean=3.0)], maps)

    def test_idempotent_moments(self):
        rng = np.random.default_rng(1)
        maps = [
            make_map(rng.standard_normal((4, 4)), image_id=f"m{i}") for i in range(5)
        ]
        stats = [stat(f"m{i}", 0, mean=float(m.values.mean())) for i, m in enumerate(maps)]
        out, mu, sigma = zscore_normalize(stats, maps)
        normed_maps = [
            make_map((m.values - mu) / sigma, image_id=m.image_id) for m in maps
        ]
        _, mu2, sigma2 = zscore_normalize(out, normed_maps)
        assert mu2 == pytest.approx(0.0, abs=1e-12)
        assert sigma2 == pytest.approx(1.0, abs=1e-12)

    def test_preserves_order(self):
        rng = np.random.default_rng(2)
        maps = [make_map(rng.random((3, 3)), image_id=f"m{i}") for i in range(4)]
        stats = [stat(f"m{i}", 0, mean=float(i)) for i in range(4)]
        out, _, _ = zscore_normalize(stats, maps)
        vals = [s.mean_artefact for s in out]
        assert vals == sorted(vals)


class TestPerClassReport:
    def test_interclass_variance(self):
        stats = [stat(f"a{i}", 0, mean=1.0) for i in range(3)] + [
            stat(f"b{i}", 1, mean=3.0) for i in range(3)
        ]
        rep = per_class_report(stats, ["A", "B"], aggregation=MEAN)
        assert rep.per_class["A"].mean == 1.0
        assert rep.per_class["B"].mean == 3.0
        assert rep.interclass_variance == 1.0  # Var_pop({1, 3})

    def test_single_class_zero_variance(self):
        stats = [stat(f"a{i}", 0, mean=float(i)) for i in range(4)]
        rep = per_class_report(stats, ["A"], aggregation=MEAN)
        assert rep.interclass_variance == 0.0

    def test_n1_degenerate_ci(self):
        rep = per_class_report([stat("a0", 0, mean=2.5)], ["A"], aggregation=MEAN)
        cs = rep.per_class["A"]
        assert cs.n == 1
        assert cs.ci_low == cs.mean == cs.ci_high == 2.5

    def test_ci_brackets_mean(self):
        rng = np.random.default_rng(3)
        stats = [stat(f"a{i}", 0, mean=float(v)) for i, v in enumerate(rng.random(20))]
        rep = per_class_report(stats, ["A"], aggregation=MEAN)
        cs = rep.per_class["A"]
        assert cs.ci_low <= cs.mean <= cs.ci_high
        # hand-checked t interval
        vals = [s.mean_artefact for s in stats]
        sd = np.std(vals, ddof=1)
        from scipy import stats as sps

        half = sps.t.ppf(0.975, 19) * sd / np.sqrt(20)
        assert cs.ci_high - cs.mean == pytest.approx(half, rel=1e-9)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(4)
        stats = [
            stat(f"s{i}", int(i % 3), mean=float(v))
            for i, v in enumerate(rng.random(30))
        ]
        rep1 = per_class_report(stats, ["A", "B", "C"], aggregation=MEAN)
        rep2 = per_class_report(stats[::-1], ["A", "B", "C"], aggregation=MEAN)
        assert rep1 == rep2

    def test_peak_aggregation_selects_peak_values(self):
        stats = [stat("a0", 0, mean=9.0, peak=0.25), stat("a1", 0, mean=9.0, peak=0.75)]
        rep = per_class_report(stats, ["A"], aggregation=PEAK)
        assert rep.per_class["A"].mean == 0.5

    def test_empty_input(self):
        with pytest.raises(errors.EmptyInput):
            per_class_report([], ["A"])
