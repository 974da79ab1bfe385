"""Tests for ordering metrics, significance procedure, and template evaluation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from albumarc.core import Ordering
from albumarc.evaluation import (
    COMPARISONS,
    evaluate_templates,
    holm_bonferroni,
    levenshtein,
    paired_t_test,
    plot_rows,
    string_edit_score,
)
from albumarc.ingest import SynthConfig, synth_generate
from albumarc.spline import DEFAULT_KNOTS
from albumarc.templates import TemplateSet

KNOTS = np.array(DEFAULT_KNOTS)

short_seqs = st.lists(st.integers(min_value=0, max_value=3), max_size=8)


class TestLevenshtein:
    def test_classic_pairs(self):
        assert levenshtein("kitten", "sitting") == 3
        assert levenshtein("flaw", "lawn") == 2
        assert levenshtein("ab", "ba") == 2

    def test_empty(self):
        assert levenshtein("", "") == 0
        assert levenshtein("", "abc") == 3
        assert levenshtein("abc", "") == 3

    def test_identity(self):
        assert levenshtein("same", "same") == 0
        assert levenshtein((0, 1, 2), (0, 1, 2)) == 0

    def test_integer_sequences(self):
        assert levenshtein((0, 1, 2, 3), (3, 1, 2, 0)) == 2
        assert levenshtein((0, 1, 2), (2, 0, 1)) == 2

    @given(short_seqs, short_seqs)
    def test_symmetry_and_bounds(self, a, b):
        d = levenshtein(a, b)
        assert d == levenshtein(b, a)
        assert abs(len(a) - len(b)) <= d <= max(len(a), len(b))
        assert (d == 0) == (a == b)

    @given(short_seqs, short_seqs, short_seqs)
    @settings(max_examples=200)
    def test_triangle_inequality(self, a, b, c):
        assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


class TestStringEditScore:
    def test_exact_match_scores_one(self):
        assert string_edit_score([(0, 1, 2)], (0, 1, 2)) == 1.0

    def test_score_is_one_only_on_exact_match(self):
        rng = np.random.default_rng(0)
        truth = tuple(range(6))
        for _ in range(50):
            cands = [tuple(rng.permutation(6)) for _ in range(3)]
            score = string_edit_score(cands, truth)
            assert 0.0 < score <= 1.0
            assert (score == 1.0) == (truth in cands)

    def test_takes_best_candidate(self):
        truth = (0, 1, 2, 3)
        near = (0, 1, 3, 2)  # distance 2
        far = (3, 2, 1, 0)  # distance 4
        assert string_edit_score([far], truth) == pytest.approx(1 / 5)
        assert string_edit_score([far, near], truth) == pytest.approx(1 / 3)

    def test_accepts_ordering_objects(self):
        truth = Ordering(positions=(0, 1, 2))
        cand = Ordering(positions=(2, 1, 0))
        assert string_edit_score([cand], truth) == pytest.approx(1 / 3)
        assert string_edit_score([truth], (0, 1, 2)) == 1.0

    def test_validation(self):
        with pytest.raises(ValueError, match="at least one candidate"):
            string_edit_score([], (0, 1))
        with pytest.raises(ValueError, match="does not match truth length"):
            string_edit_score([(0, 1, 2)], (0, 1))


class TestPairedT:
    def test_matches_reference_implementation(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a = rng.random(12)
            b = rng.random(12)
            expected = stats.ttest_rel(a, b).pvalue
            assert paired_t_test(a, b) == pytest.approx(expected, rel=1e-12)

    def test_symmetric_in_sign(self):
        rng = np.random.default_rng(4)
        a, b = rng.random(10), rng.random(10)
        assert paired_t_test(a, b) == pytest.approx(paired_t_test(b, a), rel=1e-12)

    def test_all_zero_differences_degenerate(self):
        x = np.array([0.5, 0.25, 1.0])
        with pytest.raises(ValueError, match="all differences are zero"):
            paired_t_test(x, x.copy())

    def test_constant_nonzero_difference(self):
        a = np.array([1.0, 2.0, 3.0])
        assert paired_t_test(a, a - 0.5) == 0.0

    def test_validation(self):
        with pytest.raises(ValueError, match="equal-length 1-D"):
            paired_t_test(np.zeros(3), np.zeros(4))
        with pytest.raises(ValueError, match="at least 2 pairs"):
            paired_t_test(np.array([1.0]), np.array([0.0]))


class TestHolmBonferroni:
    def test_both_rejected(self):
        assert holm_bonferroni([0.01, 0.04]) == [True, True]

    def test_smallest_fails_blocks_all(self):
        assert holm_bonferroni([0.03, 0.04]) == [False, False]

    def test_step_down_stops_midway(self):
        # Sorted thresholds for m=3 are 0.05/3, 0.05/2, 0.05; 0.03 > 0.025
        # fails at the second step, so 0.04 is never tested.
        assert holm_bonferroni([0.03, 0.001, 0.04]) == [False, True, False]

    def test_results_in_original_order(self):
        assert holm_bonferroni([0.5, 0.001, 0.011]) == [False, True, True]

    def test_empty(self):
        assert holm_bonferroni([]) == []

    def test_validation(self):
        with pytest.raises(ValueError, match="outside"):
            holm_bonferroni([1.5])
        with pytest.raises(ValueError, match="alpha"):
            holm_bonferroni([0.01], alpha=0.0)

    @given(
        st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=8),
        st.floats(min_value=0.01, max_value=0.2),
    )
    def test_dominates_plain_bonferroni(self, ps, alpha):
        rejections = holm_bonferroni(ps, alpha)
        m = len(ps)
        for p, rejected in zip(ps, rejections):
            if p <= alpha / m:
                assert rejected
            if rejected:
                assert p <= alpha


def _rising_falling_templates():
    return TemplateSet(xs=KNOTS, templates=np.stack([1.0 - KNOTS, KNOTS]))


@pytest.fixture(scope="module")
def eval_setup():
    ds = synth_generate(SynthConfig(n_albums=12, length_range=(4, 9), seed=6))
    essence = ds.scalar_features["latent"]
    return ds, essence, _rising_falling_templates()


class TestEvaluateTemplates:
    def test_perfect_essence_scores_high(self, eval_setup):
        ds, essence, templates = eval_setup
        report = evaluate_templates(ds, essence, templates, seed=2)
        assert report.mean_learned == 1.0
        assert report.mean_learned > report.mean_random
        assert len(report.p_values) == len(COMPARISONS) == 2
        assert report.comparisons == COMPARISONS
        assert all(0.0 <= p <= 1.0 for p in report.p_values)

    def test_best_template_is_the_matching_shape(self, eval_setup):
        ds, _, _ = eval_setup
        # Exactly linear essence, so the rising template fits with zero
        # deviation while the peak template cannot.
        essence = {
            t.track_id: j / (len(a) - 1)
            for a in ds.albums
            for j, t in enumerate(a.tracks)
        }
        peak = 1.0 - (2.0 * KNOTS - 1.0) ** 2
        templates = TemplateSet(xs=KNOTS, templates=np.stack([peak, KNOTS]))
        report = evaluate_templates(ds, essence, templates, seed=2)
        assert all(e.best_template == 1 for e in report.albums)

    def test_report_fields_consistent(self, eval_setup):
        ds, essence, templates = eval_setup
        report = evaluate_templates(ds, essence, templates, seed=5)
        assert len(report.albums) == len(ds)
        learned = [e.learned_score for e in report.albums]
        assert report.mean_learned == pytest.approx(np.mean(learned))
        lengths = {e.album_id: e.length for e in report.albums}
        for album in ds.albums:
            assert lengths[album.album_id] == len(album)

    def test_deterministic(self, eval_setup):
        ds, essence, templates = eval_setup
        r1 = evaluate_templates(ds, essence, templates, seed=9)
        r2 = evaluate_templates(ds, essence, templates, seed=9)
        assert r1.to_dict() == r2.to_dict()

    def test_seed_changes_baselines(self, eval_setup):
        ds, essence, templates = eval_setup
        r1 = evaluate_templates(ds, essence, templates, seed=1)
        r2 = evaluate_templates(ds, essence, templates, seed=2)
        a = [e.random_score for e in r1.albums]
        b = [e.random_score for e in r2.albums]
        assert a != b

    def test_threads_do_not_change_results(self, eval_setup):
        ds, essence, templates = eval_setup
        r1 = evaluate_templates(ds, essence, templates, seed=4, threads=1)
        r2 = evaluate_templates(ds, essence, templates, seed=4, threads=3)
        assert r1.to_dict() == r2.to_dict()

    def test_missing_essence_names_track_and_album(self, eval_setup):
        ds, essence, templates = eval_setup
        broken = dict(essence)
        victim = ds.albums[0].tracks[1].track_id
        del broken[victim]
        with pytest.raises(ValueError, match=f"{victim}.*album 'synth-00000'"):
            evaluate_templates(ds, broken, templates, seed=0)

    def test_empty_dataset(self, eval_setup):
        ds, essence, templates = eval_setup
        empty = ds.subset("train").subset("test")  # train albums are not test
        with pytest.raises(ValueError, match="no albums to evaluate"):
            evaluate_templates(empty, essence, templates, seed=0)

    def test_single_album_falls_back_to_p_one(self, eval_setup):
        ds, essence, templates = eval_setup
        from dataclasses import replace

        one = replace(ds, albums=ds.albums[:1])
        report = evaluate_templates(one, essence, templates, seed=0)
        assert report.p_values == (1.0, 1.0)
        assert report.rejections == (False, False)

    def test_custom_alpha_recorded(self, eval_setup):
        ds, essence, templates = eval_setup
        report = evaluate_templates(ds, essence, templates, seed=3, alpha=0.01)
        assert report.alpha == 0.01


class TestPlotRows:
    def test_rows_match_report(self, eval_setup):
        ds, essence, templates = eval_setup
        report = evaluate_templates(ds, essence, templates, seed=7)
        rows = plot_rows(report)
        assert [name for name, _, _ in rows] == [
            "learned",
            "random_orderings",
            "shuffled_essence",
        ]
        learned = np.array([e.learned_score for e in report.albums])
        name, mean, stderr = rows[0]
        assert mean == pytest.approx(learned.mean())
        assert stderr == pytest.approx(learned.std(ddof=1) / np.sqrt(learned.size))

    def test_single_album_stderr_zero(self, eval_setup):
        ds, essence, templates = eval_setup
        from dataclasses import replace

        one = replace(ds, albums=ds.albums[:1])
        report = evaluate_templates(one, essence, templates, seed=0)
        assert all(stderr == 0.0 for _, _, stderr in plot_rows(report))
