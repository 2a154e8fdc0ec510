import numpy as np
import pytest

from divtraj.divergence import jsd
from divtraj.metrics import (
    TrajectorySeries,
    abstraction_curve,
    breakpoint_detect,
    build_minimal_pairs,
    class_breakpoint_compare,
    class_fraction_curve,
    class_fraction_rows,
    condition_class_metric,
    item_learning_curve,
    minimal_pair_curve,
    noun_trajectory_correlations,
)

from conftest import build_class_dump, build_condition_dump

CLASS_ONSET = 5
VERB_ONSET = 12


def series(values, steps=None, run_id="r", name="m", dispersions=None):
    steps = steps if steps is not None else list(range(len(values)))
    return TrajectorySeries(run_id, name, tuple(steps), tuple(values), dispersions)


# --- learning curves ---------------------------------------------------------------

def test_item_curve_zero_until_verbs_split(class_dump):
    curve = item_learning_curve(class_dump, "alpha")
    assert curve.metric_name == "item:alpha"
    assert curve.steps == class_dump.steps
    values = np.array(curve.values)
    assert np.all(values[:VERB_ONSET] == 0.0)     # identical profiles, exactly
    assert np.all(values[VERB_ONSET:] > 0.01)
    assert np.all(np.array(curve.dispersions) >= 0.0)


def test_item_curve_requires_two_verbs(tmp_path):
    dump, _ = build_class_dump(tmp_path / "d", verbs_per_class=1)
    with pytest.raises(ValueError, match="at least two"):
        item_learning_curve(dump, "alpha")


def test_class_fraction_tracks_planted_onset(class_dump):
    canonical, reverse = class_fraction_curve(class_dump, "alpha", "beta", alpha=0.05)
    assert canonical.metric_name == "class_fraction:alpha_vs_beta"
    values = np.array(canonical.values)
    # all divergences tie at zero before the classes split: never significant
    assert np.all(values[:CLASS_ONSET] == 0.0)
    # complete separation while classes differ but verbs within agree
    assert np.all(values[CLASS_ONSET:VERB_ONSET] == 1.0)
    assert np.all(np.array(reverse.values)[:VERB_ONSET] == 0.0)


def test_fraction_is_monotone_in_alpha(class_dump):
    strict, _ = class_fraction_curve(class_dump, "alpha", "beta", alpha=1e-6)
    lax, _ = class_fraction_curve(class_dump, "alpha", "beta", alpha=0.2)
    assert all(s <= l for s, l in zip(strict.values, lax.values))


def test_fraction_rows_expose_per_verb_tests(class_dump):
    rows = class_fraction_rows(class_dump, "alpha", "beta")
    verbs = set(class_dump.verbs_in_class("alpha")) | set(class_dump.verbs_in_class("beta"))
    one_step = [r for r in rows if r.step == class_dump.steps[CLASS_ONSET]]
    assert {r.verb_id for r in one_step} == verbs
    for r in one_step:
        assert r.p_canonical < r.p_reversed  # separation is in the expected direction


def test_fraction_curve_reuses_precomputed_rows(class_dump):
    rows = class_fraction_rows(class_dump, "alpha", "beta")
    direct = class_fraction_curve(class_dump, "alpha", "beta", alpha=0.05)
    reused = class_fraction_curve(class_dump, "alpha", "beta", alpha=0.05, rows=rows)
    assert direct == reused


def test_overlapping_classes_rejected(class_dump):
    with pytest.raises(ValueError):
        class_fraction_rows(class_dump, "alpha", "alpha")


# --- minimal pairs -------------------------------------------------------------------

def test_build_minimal_pairs_matches_by_base(condition_dump):
    pairs = build_minimal_pairs(condition_dump, ("gap", "no_gap"))
    assert len(pairs) == 6  # one per verb
    for pair_id, first, second in pairs:
        assert first == f"{pair_id}|gap"
        assert second == f"{pair_id}|nogap"


def test_minimal_pair_curve_tracks_condition_split(condition_dump):
    curve = minimal_pair_curve(condition_dump, ("gap", "no_gap"))
    values = np.array(curve.values)
    assert np.all(values[:8] == 0.0)          # members identical before any onset
    assert np.all(values[12:] > 0.02)         # both classes split by here
    single = minimal_pair_curve(condition_dump, ("gap", "no_gap"), verb_id="alpha_v1")
    step = condition_dump.steps[-1]
    expected = jsd(
        condition_dump.row(step, "alpha_v1x|gap"),
        condition_dump.row(step, "alpha_v1x|nogap"),
    )
    assert single.values[-1] == pytest.approx(expected, abs=1e-15)


def test_one_sided_pair_is_an_error(tmp_path):
    dump, _ = build_condition_dump(tmp_path / "d")
    # every group has members under "gap" only; the error names the pair
    with pytest.raises(ValueError, match="lacks a member"):
        build_minimal_pairs(dump, ("gap", "missing_condition"))
    with pytest.raises(ValueError, match="no minimal pairs"):
        build_minimal_pairs(dump, ("gap", "no_gap"), verb_id="not_a_verb")


def test_condition_metric_fraction_bounds(condition_dump):
    verbs = sorted(condition_dump.verbs())
    cat_a = [(v, "gap") for v in verbs]
    cat_b = [(v, "no_gap") for v in verbs]
    curve = condition_class_metric(condition_dump, cat_a, cat_b, alpha=0.05, names=("gap", "nogap"))
    values = np.array(curve.values)
    assert curve.metric_name == "condition_fraction:gap_vs_nogap"
    assert np.all((0.0 <= values) & (values <= 1.0))
    # before any onset both conditions are identical: no label separates
    assert np.all(values[:8] == 0.0)
    with pytest.raises(ValueError):
        condition_class_metric(condition_dump, cat_a[:1], cat_b, alpha=0.05)


# --- onset detection ----------------------------------------------------------------

def test_breakpoint_simple_step():
    values = [0.0] * 30 + [0.02] * 10
    res = breakpoint_detect(series(values))
    assert res.breakpoint_index == 30
    assert res.breakpoint_step == 30
    assert res.baseline_mean == 0.0
    assert res.threshold == pytest.approx(0.01)


def test_breakpoint_spike_inside_baseline_window_raises_threshold():
    values = [0.0] * 30 + [0.05] * 10
    values[5] = 0.5
    res = breakpoint_detect(series(values))
    # baseline mean is 0.5/30; post-window values still clear it by 0.01
    assert res.baseline_mean == pytest.approx(0.5 / 30)
    assert res.breakpoint_index == 30


def test_breakpoint_ignores_isolated_transient_after_window():
    values = [0.0] * 5 + [0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0] + [0.05] * 8
    res = breakpoint_detect(series(values), baseline_window=5)
    assert res.breakpoint_index == 13  # first index after the last sub-threshold value


def test_breakpoint_cannot_precede_baseline_window():
    # the series clears the threshold at index 2, inside the baseline window;
    # the reported onset still starts after the window
    values = [0.0, 0.0] + [0.05] * 10
    res = breakpoint_detect(series(values), baseline_window=5)
    assert res.baseline_mean == pytest.approx(0.15 / 5)
    assert res.breakpoint_index == 5


def test_breakpoint_none_when_series_never_settles():
    values = [0.0] * 8 + [0.05, 0.0]
    assert breakpoint_detect(series(values), baseline_window=4).breakpoint_index is None


def test_breakpoint_invariances():
    values = [0.0] * 6 + [0.05] * 6
    base = breakpoint_detect(series(values), baseline_window=4)
    extended = breakpoint_detect(series(values + [0.06, 0.07]), baseline_window=4)
    assert base.breakpoint_index == extended.breakpoint_index == 6
    relabeled = breakpoint_detect(
        series(values, steps=[100 * (i + 7) for i in range(len(values))]), baseline_window=4
    )
    assert relabeled.breakpoint_index == base.breakpoint_index
    assert relabeled.breakpoint_step == 100 * (6 + 7)


def test_breakpoint_threshold_uses_at_least_semantics():
    # a value exactly delta above baseline counts as settled
    values = [0.0] * 4 + [0.01] * 4
    res = breakpoint_detect(series(values), delta=0.01, baseline_window=4)
    assert res.breakpoint_index == 4


def test_class_breakpoint_compare_on_planted_onsets(tmp_path):
    dump, steps = build_condition_dump(tmp_path / "d")
    cmp = class_breakpoint_compare(dump, "alpha", "beta", baseline_window=5)
    assert cmp.median_a == steps[8]
    assert cmp.median_b == steps[12]
    assert set(cmp.breakpoints) == set(dump.verbs())
    assert not cmp.excluded
    # identical onsets within each class leave the t test undefined
    assert cmp.t_statistic is None
    assert "t-test unavailable" in cmp.note


def test_class_breakpoint_compare_with_injected_series(tmp_path):
    dump, steps = build_condition_dump(tmp_path / "d")
    onsets = {"alpha_v0": 8, "alpha_v1": 9, "alpha_v2": 10, "beta_v0": 12, "beta_v1": 13, "beta_v2": 14}

    def builder(d, verb):
        values = [0.0] * onsets[verb] + [0.05] * (len(steps) - onsets[verb])
        return series(values, steps=steps, run_id=d.run_id, name=f"pair:{verb}")

    cmp = class_breakpoint_compare(dump, "alpha", "beta", pair_builder=builder, baseline_window=5)
    assert cmp.median_a == steps[9]
    assert cmp.median_b == steps[13]
    assert cmp.t_statistic < 0  # earlier class first
    assert 0.0 < cmp.p_value < 0.05


def test_class_breakpoint_compare_reports_exclusions(tmp_path):
    dump, steps = build_condition_dump(tmp_path / "d")

    def builder(d, verb):
        if verb == "alpha_v0":
            raise ValueError("no usable pairs")
        values = [0.0] * 10 + [0.05] * (len(steps) - 10)
        return series(values, steps=steps)

    cmp = class_breakpoint_compare(dump, "alpha", "beta", pair_builder=builder, baseline_window=5)
    assert "alpha_v0" in cmp.excluded
    assert "alpha_v0" not in cmp.breakpoints


# --- noun trajectories ----------------------------------------------------------------

def test_noun_correlations_separate_planted_classes(tmp_path):
    dump, _ = build_class_dump(tmp_path / "d", n_steps=24, verb_onset=8, class_onset=4)
    # pick tokens that load on each class direction: the class profiles differ
    # most where the planted direction puts mass
    alpha_profile = dump.row(dump.steps[-1], "alpha_v0_p0")
    beta_profile = dump.row(dump.steps[-1], "beta_v0_p0")
    nouns = {
        "alpha_heavy": int(np.argmax(alpha_profile - beta_profile)),
        "beta_heavy": int(np.argmax(beta_profile - alpha_profile)),
    }
    summaries = noun_trajectory_correlations(dump, nouns)
    assert [s.noun for s in summaries] == sorted(nouns)
    for s in summaries:
        assert s.n_within == 2 * 6      # C(4,2) pairs per class, two classes
        assert s.n_between == 16        # 4x4 cross-class pairs
        assert s.within_mean > s.between_mean
        assert set(s.per_class_within) == {"alpha", "beta"}


def test_noun_correlations_exclude_constant_trajectories(tmp_path):
    # no signal ever: every trajectory is constant, every pair undefined
    dump, _ = build_class_dump(tmp_path / "d", n_steps=5, class_onset=99, verb_onset=99)
    summaries = noun_trajectory_correlations(dump, {"any": 3})
    (summary,) = summaries
    assert summary.excluded_pairs == 28  # all C(8,2) pairs
    assert summary.within_mean is None
    assert summary.between_mean is None


def test_noun_correlations_validate_inputs(class_dump):
    with pytest.raises(ValueError):
        noun_trajectory_correlations(class_dump, {"bad": 10**9})
    with pytest.raises(ValueError):
        noun_trajectory_correlations(class_dump, {})


# --- abstraction curves -----------------------------------------------------------------

def test_abstraction_condition_pair_matches_minimal_pairs(condition_dump):
    spec = {"name": "rc", "conditions": ["gap", "no_gap"]}
    curve = abstraction_curve(condition_dump, "condition_pair", spec)
    direct = minimal_pair_curve(condition_dump, ("gap", "no_gap"))
    assert curve.metric_name == "abstraction:rc"
    assert curve.values == direct.values


def test_abstraction_class_pair_is_mean_cross_class_divergence(class_dump):
    spec = {"name": "classes", "classes": ["alpha", "beta"]}
    curve = abstraction_curve(class_dump, "class_pair", spec)
    assert curve.metric_name == "abstraction:classes"
    values = np.array(curve.values)
    assert np.all(values[:CLASS_ONSET] == 0.0)
    assert np.all(values[CLASS_ONSET:] > 0.0)
    with pytest.raises(ValueError):
        abstraction_curve(class_dump, "unknown_kind", spec)


def test_parallel_jobs_match_serial(class_dump):
    serial = item_learning_curve(class_dump, "alpha", jobs=1)
    parallel = item_learning_curve(class_dump, "alpha", jobs=4)
    assert serial == parallel
    c1, r1 = class_fraction_curve(class_dump, "alpha", "beta", jobs=1)
    c2, r2 = class_fraction_curve(class_dump, "alpha", "beta", jobs=3)
    assert (c1, r1) == (c2, r2)
