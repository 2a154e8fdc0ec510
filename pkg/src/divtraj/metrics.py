"""Learning-trajectory metrics over distribution dumps.

Two families of measurements run per checkpoint step:

* item-level: mean pairwise divergence within a class, or mean divergence
  between the two members of each minimal pair;
* class-level: for each verb, a one-tailed Mann-Whitney test of whether its
  divergences to the opposite class exceed its divergences within its own
  class, summarized as the fraction of verbs significant at ``alpha``.

Breakpoints mark the earliest step from which a series stays at least
``delta`` above the mean of its first ``baseline_window`` points.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import stats
from .dist_store import DistributionDump, mean_distribution, normalize_row
from .divergence import GridLabel, grid_from_profiles, jsd, split_in_between

DEFAULT_ALPHA = 1e-3
DEFAULT_DELTA = 0.01
DEFAULT_BASELINE_WINDOW = 30


@dataclass(frozen=True)
class TrajectorySeries:
    """A per-step metric series with an optional dispersion band."""

    run_id: str
    metric_name: str
    steps: tuple[int, ...]
    values: tuple[float, ...]
    dispersions: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if len(self.steps) != len(self.values):
            raise ValueError("steps and values must have equal length")
        if any(b <= a for a, b in zip(self.steps, self.steps[1:])):
            raise ValueError("series steps must be strictly increasing")
        if self.dispersions is not None:
            if len(self.dispersions) != len(self.values):
                raise ValueError("dispersions must match values in length")
            if any(d < 0 for d in self.dispersions):
                raise ValueError("dispersions must be non-negative")

    def __len__(self) -> int:
        return len(self.steps)

    def points(self) -> list[tuple[int, float, float | None]]:
        disp = self.dispersions or (None,) * len(self.values)
        return list(zip(self.steps, self.values, disp))


@dataclass(frozen=True)
class BreakpointResult:
    verb_id: str
    breakpoint_step: int | None
    breakpoint_index: int | None
    baseline_mean: float
    threshold: float


@dataclass
class BreakpointComparison:
    class_a: str
    class_b: str
    breakpoints: dict[str, BreakpointResult]
    verb_classes: dict[str, str]
    excluded: dict[str, str]
    median_a: float | None
    median_b: float | None
    t_statistic: float | None
    p_value: float | None
    note: str | None = None


def _map_steps(steps: Sequence[int], fn: Callable[[int], object], jobs: int = 1) -> list:
    """Apply ``fn`` per step, optionally with a worker pool; results keep step order."""
    if jobs <= 1:
        return [fn(s) for s in steps]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, steps))


def _class_profiles(
    dump: DistributionDump, step: int, verbs: Sequence[str], condition: str | None
) -> np.ndarray:
    matrix = dump.step_matrix(step, cache=False)
    rows_by_verb = []
    for verb in verbs:
        recs = dump.prefixes_for(verb, condition)
        if not recs:
            raise ValueError(f"verb {verb!r} has no prefixes under condition filter {condition!r}")
        idx = [dump.prefix_rows[r.prefix_id] for r in recs]
        rows = np.stack([normalize_row(matrix[i], step=step, prefix_id=recs[k].prefix_id)
                         for k, i in enumerate(idx)])
        rows_by_verb.append(mean_distribution(rows))
    return np.stack(rows_by_verb)


def item_learning_curve(
    dump: DistributionDump,
    class_id: str,
    condition: str | None = None,
    jobs: int = 1,
) -> TrajectorySeries:
    """Per step: mean and standard deviation of within-class pairwise divergence."""
    verbs = dump.verbs_in_class(class_id)
    if len(verbs) < 2:
        raise ValueError(f"class {class_id!r} has {len(verbs)} verb(s); need at least two")

    def one_step(step: int) -> tuple[float, float]:
        profiles = _class_profiles(dump, step, verbs, condition)
        vals = [
            jsd(profiles[i], profiles[j])
            for i in range(len(verbs))
            for j in range(i + 1, len(verbs))
        ]
        arr = np.asarray(vals)
        return float(arr.mean()), float(arr.std())

    results = _map_steps(dump.steps, one_step, jobs)
    name = f"item:{class_id}" + (f"@{condition}" if condition else "")
    return TrajectorySeries(
        run_id=dump.run_id,
        metric_name=name,
        steps=dump.steps,
        values=tuple(r[0] for r in results),
        dispersions=tuple(r[1] for r in results),
    )


@dataclass(frozen=True)
class VerbTestRow:
    step: int
    verb_id: str
    class_id: str
    p_canonical: float
    p_reversed: float


def class_fraction_rows(
    dump: DistributionDump,
    class_a: str,
    class_b: str,
    condition: str | None = None,
    jobs: int = 1,
) -> list[VerbTestRow]:
    """Per (step, verb): one-tailed U-test p-values in both directions.

    ``p_canonical`` tests H1 "divergence to the other class exceeds divergence
    within the verb's own class"; ``p_reversed`` tests the opposite direction.
    """
    verbs_a = dump.verbs_in_class(class_a)
    verbs_b = dump.verbs_in_class(class_b)
    if len(verbs_a) < 2 or len(verbs_b) < 2:
        raise ValueError(
            f"both classes need at least two verbs ({class_a}={len(verbs_a)}, "
            f"{class_b}={len(verbs_b)})"
        )
    if set(verbs_a) & set(verbs_b):
        raise ValueError(f"classes {class_a!r} and {class_b!r} share verbs")
    labels = [GridLabel(v, class_a) for v in verbs_a] + [GridLabel(v, class_b) for v in verbs_b]
    verbs = verbs_a + verbs_b
    classes = [class_a] * len(verbs_a) + [class_b] * len(verbs_b)

    def one_step(step: int) -> list[VerbTestRow]:
        profiles = _class_profiles(dump, step, verbs, condition)
        grid = grid_from_profiles(step, labels, profiles)
        rows = []
        for verb, cls in zip(verbs, classes):
            own, other = (class_a, class_b) if cls == class_a else (class_b, class_a)
            within, between = split_in_between(grid, verb, own, other)
            p_canon = stats.mann_whitney_one_tailed(between, within).p_value
            p_rev = stats.mann_whitney_one_tailed(within, between).p_value
            rows.append(VerbTestRow(step, verb, cls, p_canon, p_rev))
        return rows

    per_step = _map_steps(dump.steps, one_step, jobs)
    return [row for chunk in per_step for row in chunk]


def class_fraction_curve(
    dump: DistributionDump,
    class_a: str,
    class_b: str,
    alpha: float = DEFAULT_ALPHA,
    condition: str | None = None,
    jobs: int = 1,
    rows: list[VerbTestRow] | None = None,
) -> tuple[TrajectorySeries, TrajectorySeries]:
    """Fractions of verbs (both classes pooled) with significant separation.

    Returns ``(canonical, reversed)``: the fraction significant in the
    expected direction (other-class divergences greater) and in the opposite
    direction. Degenerate tests report p == 1.0 and count as non-significant.
    """
    if rows is None:
        rows = class_fraction_rows(dump, class_a, class_b, condition=condition, jobs=jobs)
    by_step: dict[int, list[VerbTestRow]] = {}
    for row in rows:
        by_step.setdefault(row.step, []).append(row)
    steps = tuple(sorted(by_step))
    canon, rev = [], []
    for step in steps:
        chunk = by_step[step]
        canon.append(sum(r.p_canonical < alpha for r in chunk) / len(chunk))
        rev.append(sum(r.p_reversed < alpha for r in chunk) / len(chunk))
    base = f"{class_a}_vs_{class_b}" + (f"@{condition}" if condition else "")
    return (
        TrajectorySeries(dump.run_id, f"class_fraction:{base}", steps, tuple(canon)),
        TrajectorySeries(dump.run_id, f"class_fraction_reversed:{base}", steps, tuple(rev)),
    )


# --- minimal pairs -----------------------------------------------------------

def pair_base(prefix_id: str) -> str:
    """Default pair key: the prefix_id segment before the first '|'."""
    return prefix_id.split("|", 1)[0]


def build_minimal_pairs(
    dump: DistributionDump,
    condition_pair: tuple[str, str],
    key: Callable[[str], str] = pair_base,
    verb_id: str | None = None,
) -> list[tuple[str, str, str]]:
    """(pair_id, prefix_id_first, prefix_id_second) for every minimal pair.

    Prefixes sharing a pair key are matched across the two conditions; a key
    with members on only one side is an error naming the pair id.
    """
    first, second = condition_pair
    groups: dict[str, tuple[list[str], list[str]]] = {}
    for rec in dump.prefixes:
        if rec.condition_id not in condition_pair:
            continue
        if verb_id is not None and rec.verb_id != verb_id:
            continue
        sides = groups.setdefault(key(rec.prefix_id), ([], []))
        sides[0 if rec.condition_id == first else 1].append(rec.prefix_id)
    pairs = []
    for base in sorted(groups):
        lhs, rhs = groups[base]
        if not lhs or not rhs:
            raise ValueError(
                f"pair {base!r} lacks a member for one of conditions {condition_pair}"
            )
        for a in sorted(lhs):
            for b in sorted(rhs):
                pairs.append((base, a, b))
    if not pairs:
        raise ValueError(
            f"no minimal pairs found for conditions {condition_pair}"
            + (f" and verb {verb_id!r}" if verb_id else "")
        )
    return pairs


def minimal_pair_curve(
    dump: DistributionDump,
    condition_pair: tuple[str, str],
    key: Callable[[str], str] = pair_base,
    verb_id: str | None = None,
    jobs: int = 1,
) -> TrajectorySeries:
    """Per step: mean divergence between the two members of each minimal pair."""
    pairs = build_minimal_pairs(dump, condition_pair, key=key, verb_id=verb_id)

    def one_step(step: int) -> tuple[float, float]:
        matrix = dump.step_matrix(step, cache=False)
        vals = []
        for _, pid_a, pid_b in pairs:
            row_a = normalize_row(matrix[dump.prefix_rows[pid_a]], step=step, prefix_id=pid_a)
            row_b = normalize_row(matrix[dump.prefix_rows[pid_b]], step=step, prefix_id=pid_b)
            vals.append(jsd(row_a, row_b))
        arr = np.asarray(vals)
        return float(arr.mean()), float(arr.std())

    results = _map_steps(dump.steps, one_step, jobs)
    name = f"pair:{condition_pair[0]}~{condition_pair[1]}" + (f":{verb_id}" if verb_id else "")
    return TrajectorySeries(
        run_id=dump.run_id,
        metric_name=name,
        steps=dump.steps,
        values=tuple(r[0] for r in results),
        dispersions=tuple(r[1] for r in results),
    )


def condition_class_metric(
    dump: DistributionDump,
    category_a: Sequence[tuple[str, str]],
    category_b: Sequence[tuple[str, str]],
    alpha: float = DEFAULT_ALPHA,
    names: tuple[str, str] = ("A", "B"),
    jobs: int = 1,
) -> TrajectorySeries:
    """Significant fraction over (verb, condition) labels split into two
    categories; per label, cross-category divergences are tested against
    same-category ones.
    """
    if len(category_a) < 2 or len(category_b) < 2:
        raise ValueError("each category needs at least two (verb, condition) labels")
    labels = [GridLabel(v, names[0], c) for v, c in category_a] + [
        GridLabel(v, names[1], c) for v, c in category_b
    ]
    if len({lab.key for lab in labels}) != len(labels):
        raise ValueError("duplicate (verb, condition) labels across categories")

    def one_step(step: int) -> float:
        matrix = dump.step_matrix(step, cache=False)
        profiles = []
        for lab in labels:
            recs = dump.prefixes_for(lab.verb_id, lab.condition_id)
            if not recs:
                raise ValueError(
                    f"verb {lab.verb_id!r} has no prefixes under condition filter "
                    f"{lab.condition_id!r}"
                )
            rows = np.stack(
                [
                    normalize_row(matrix[dump.prefix_rows[r.prefix_id]], step=step, prefix_id=r.prefix_id)
                    for r in recs
                ]
            )
            profiles.append(mean_distribution(rows))
        grid = grid_from_profiles(step, labels, np.stack(profiles))
        hits = 0
        for i, lab in enumerate(labels):
            same = [j for j, other in enumerate(grid.labels) if other.class_id == lab.class_id and j != i]
            cross = [j for j, other in enumerate(grid.labels) if other.class_id != lab.class_id]
            p = stats.mann_whitney_one_tailed(grid.values[i, cross], grid.values[i, same]).p_value
            hits += p < alpha
        return hits / len(labels)

    values = _map_steps(dump.steps, one_step, jobs)
    return TrajectorySeries(
        run_id=dump.run_id,
        metric_name=f"condition_fraction:{names[0]}_vs_{names[1]}",
        steps=dump.steps,
        values=tuple(float(v) for v in values),
    )


# --- noun trajectories -------------------------------------------------------

@dataclass
class NounCorrelationSummary:
    noun: str
    token_id: int
    n_steps: int
    within_mean: float | None
    within_ci: tuple[float, float] | None
    n_within: int
    between_mean: float | None
    between_ci: tuple[float, float] | None
    n_between: int
    per_class_within: dict[str, float]
    excluded_pairs: int


def _mean_ci(values: list[float]) -> tuple[float | None, tuple[float, float] | None]:
    if not values:
        return None, None
    arr = np.asarray(values)
    mean = float(arr.mean())
    if arr.size < 2:
        return mean, None
    half = 1.959963984540054 * float(arr.std(ddof=1)) / math.sqrt(arr.size)
    return mean, (mean - half, mean + half)


def noun_trajectory_correlations(
    dump: DistributionDump,
    noun_token_ids: dict[str, int],
    verb_ids: Sequence[str] | None = None,
    condition: str | None = None,
    jobs: int = 1,
) -> list[NounCorrelationSummary]:
    """Spearman correlations of per-noun probability trajectories across verbs.

    For each noun token, every verb contributes the trajectory of its profile
    probability at that token over steps; verb pairs are correlated and
    grouped into within-class and between-class sets (normal-approximation
    95% CIs). Constant trajectories make a pair undefined; such pairs are
    excluded and counted.
    """
    if len(dump.steps) < 3:
        raise ValueError("noun trajectories need at least three steps")
    if not noun_token_ids:
        raise ValueError("no noun tokens given")
    for noun, tok in noun_token_ids.items():
        if not (0 <= int(tok) < dump.vocab_size):
            raise ValueError(f"noun {noun!r} token id {tok} outside vocab of size {dump.vocab_size}")
    verbs = sorted(verb_ids) if verb_ids is not None else dump.verbs()
    if len(verbs) < 2:
        raise ValueError("need at least two verbs for pairwise correlations")
    classes = {v: dump.class_of(v) for v in verbs}
    nouns = sorted(noun_token_ids)
    cols = np.asarray([int(noun_token_ids[n]) for n in nouns])

    def one_step(step: int) -> np.ndarray:
        profiles = _class_profiles(dump, step, verbs, condition)
        return profiles[:, cols]  # (n_verbs, n_nouns)

    per_step = _map_steps(dump.steps, one_step, jobs)
    traj = np.stack(per_step)  # (n_steps, n_verbs, n_nouns)

    summaries = []
    for k, noun in enumerate(nouns):
        within: list[float] = []
        between: list[float] = []
        per_class: dict[str, list[float]] = {}
        excluded = 0
        for i in range(len(verbs)):
            for j in range(i + 1, len(verbs)):
                try:
                    rho = stats.spearman(traj[:, i, k], traj[:, j, k])
                except stats.UndefinedCorrelationError:
                    excluded += 1
                    continue
                if classes[verbs[i]] == classes[verbs[j]]:
                    within.append(rho)
                    per_class.setdefault(classes[verbs[i]], []).append(rho)
                else:
                    between.append(rho)
        w_mean, w_ci = _mean_ci(within)
        b_mean, b_ci = _mean_ci(between)
        summaries.append(
            NounCorrelationSummary(
                noun=noun,
                token_id=int(noun_token_ids[noun]),
                n_steps=len(dump.steps),
                within_mean=w_mean,
                within_ci=w_ci,
                n_within=len(within),
                between_mean=b_mean,
                between_ci=b_ci,
                n_between=len(between),
                per_class_within={c: float(np.mean(v)) for c, v in sorted(per_class.items())},
                excluded_pairs=excluded,
            )
        )
    return summaries


# --- breakpoints -------------------------------------------------------------

def breakpoint_detect(
    series: TrajectorySeries,
    delta: float = DEFAULT_DELTA,
    baseline_window: int = DEFAULT_BASELINE_WINDOW,
    verb_id: str | None = None,
) -> BreakpointResult:
    """Earliest step from which every value stays at least ``delta`` above the
    mean of the first ``baseline_window`` values.

    The search starts after the baseline window, so a reported breakpoint is
    always beyond it; ``breakpoint_step`` is None when the series never
    settles above the threshold.
    """
    if len(series) <= baseline_window:
        raise ValueError(
            f"series of length {len(series)} is too short for a "
            f"{baseline_window}-step baseline"
        )
    values = np.asarray(series.values)
    baseline = float(values[:baseline_window].mean())
    threshold = baseline + delta
    label = verb_id if verb_id is not None else series.metric_name
    below = np.nonzero(values < threshold)[0]
    start = int(below[-1]) + 1 if below.size else 0
    idx = max(start, baseline_window)
    if idx >= len(values):
        return BreakpointResult(label, None, None, baseline, threshold)
    return BreakpointResult(label, int(series.steps[idx]), idx, baseline, threshold)


def class_breakpoint_compare(
    dump: DistributionDump,
    class_a: str,
    class_b: str,
    pair_builder: Callable[[DistributionDump, str], TrajectorySeries] | None = None,
    condition_pair: tuple[str, str] = ("gap", "no_gap"),
    delta: float = DEFAULT_DELTA,
    baseline_window: int = DEFAULT_BASELINE_WINDOW,
    jobs: int = 1,
) -> BreakpointComparison:
    """Per-verb breakpoints of minimal-pair divergence series, compared across
    two classes (medians plus a two-sided Welch t-test on breakpoint steps).

    Verbs whose series never crosses the threshold are excluded and reported.
    """
    if pair_builder is None:
        def pair_builder(d: DistributionDump, verb: str) -> TrajectorySeries:
            return minimal_pair_curve(d, condition_pair, verb_id=verb, jobs=jobs)

    breakpoints: dict[str, BreakpointResult] = {}
    verb_classes: dict[str, str] = {}
    excluded: dict[str, str] = {}
    steps_by_class: dict[str, list[int]] = {class_a: [], class_b: []}
    for class_id in (class_a, class_b):
        verbs = dump.verbs_in_class(class_id)
        if not verbs:
            raise ValueError(f"class {class_id!r} has no verbs in dump {dump.run_id!r}")
        for verb in verbs:
            try:
                series = pair_builder(dump, verb)
            except ValueError as exc:
                excluded[verb] = f"no series: {exc}"
                continue
            result = breakpoint_detect(series, delta=delta, baseline_window=baseline_window, verb_id=verb)
            if result.breakpoint_step is None:
                excluded[verb] = "no breakpoint: series never settles above threshold"
                continue
            breakpoints[verb] = result
            verb_classes[verb] = class_id
            steps_by_class[class_id].append(result.breakpoint_step)

    median_a = float(np.median(steps_by_class[class_a])) if steps_by_class[class_a] else None
    median_b = float(np.median(steps_by_class[class_b])) if steps_by_class[class_b] else None
    t_stat = p_value = None
    note = None
    try:
        res = stats.unpaired_t_test(steps_by_class[class_a], steps_by_class[class_b])
        t_stat, p_value = res.statistic, res.p_value
    except stats.DegenerateSamplesError as exc:
        note = f"t-test unavailable: {exc}"
    return BreakpointComparison(
        class_a=class_a,
        class_b=class_b,
        breakpoints=breakpoints,
        verb_classes=verb_classes,
        excluded=excluded,
        median_a=median_a,
        median_b=median_b,
        t_statistic=t_stat,
        p_value=p_value,
        note=note,
    )


def abstraction_curve(
    dump: DistributionDump,
    kind: str,
    spec: dict,
    jobs: int = 1,
) -> TrajectorySeries:
    """One summary learning curve per (run, abstraction) for multi-run overlays.

    ``kind`` is "class_pair" (mean pairwise divergence over all verbs of the
    two classes) or "condition_pair" (minimal-pair mean divergence).
    """
    if kind == "condition_pair":
        series = minimal_pair_curve(dump, tuple(spec["conditions"]), jobs=jobs)
        return TrajectorySeries(
            dump.run_id, f"abstraction:{spec['name']}", series.steps, series.values, series.dispersions
        )
    if kind == "class_pair":
        class_a, class_b = spec["classes"]
        verbs = dump.verbs_in_class(class_a) + dump.verbs_in_class(class_b)

        def one_step(step: int) -> tuple[float, float]:
            profiles = _class_profiles(dump, step, verbs, spec.get("condition"))
            vals = [
                jsd(profiles[i], profiles[j])
                for i in range(len(verbs))
                for j in range(i + 1, len(verbs))
            ]
            arr = np.asarray(vals)
            return float(arr.mean()), float(arr.std())

        results = _map_steps(dump.steps, one_step, jobs)
        return TrajectorySeries(
            dump.run_id,
            f"abstraction:{spec['name']}",
            dump.steps,
            tuple(r[0] for r in results),
            tuple(r[1] for r in results),
        )
    raise ValueError(f"unknown abstraction kind {kind!r}")
