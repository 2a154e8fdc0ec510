"""Count-based exemplar baseline over raw token streams.

For every lexicon verb, a co-occurrence vector is accumulated from a short
unidirectional window after each matched frame position, skipping stop-word
token ids. Snapshots of all vectors are emitted when the cumulative token
count crosses schedule thresholds; add-k smoothed vectors are then compared
with the same divergence used for model trajectories. Snapshots depend only
on global token positions, so re-sharding a corpus never changes them.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .divergence import DivergenceGrid, GridLabel, jsd
from .metrics import TrajectorySeries, _mean_ci

STREAM_MANIFEST = "stream.json"
MATCH_INDEX = "matches.json"
PAPER_SCALE_TOKENS = 60_000_000


def default_snapshot_schedule(
    limit: int = PAPER_SCALE_TOKENS, points: int = 11, factor: float = 2.0
) -> tuple[int, ...]:
    """Geometrically spaced thresholds ending at ``limit`` (doubling by default)."""
    if points < 1 or limit < 1:
        raise ValueError("need at least one snapshot point and a positive limit")
    out = [int(round(limit / factor**k)) for k in range(points - 1, -1, -1)]
    dedup = sorted(set(out))
    return tuple(dedup)


def load_default_stopword_ids() -> frozenset[int]:
    """Bundled stop-word token ids (GPT-2 BPE punctuation and determiner forms)."""
    with resources.files("divtraj.data").joinpath("stopword_token_ids.json").open() as fh:
        payload = json.load(fh)
    return frozenset(int(i) for i, _ in payload["token_ids"])


@dataclass(frozen=True)
class BaselineConfig:
    vocab_size: int
    window: int = 10
    smoothing_k: float = 0.5
    stopword_ids: frozenset[int] = frozenset()
    include_match_token: bool = False
    snapshot_schedule: tuple[int, ...] = default_snapshot_schedule()

    def __post_init__(self) -> None:
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be at least 2")
        if self.window < 1:
            raise ValueError("window must be positive")
        if self.smoothing_k <= 0:
            raise ValueError("smoothing_k must be positive")
        sched = tuple(int(t) for t in self.snapshot_schedule)
        if not sched or any(b <= a for a, b in zip(sched, sched[1:])) or sched[0] < 1:
            raise ValueError("snapshot_schedule must be positive and strictly increasing")
        object.__setattr__(self, "snapshot_schedule", sched)


class TokenStream:
    """Sharded int32 token stream plus a verb -> global match positions index.

    Windows may cross shard boundaries; positions are always global.
    """

    def __init__(self, shards: Sequence[np.ndarray], matches: dict[str, Sequence[int]],
                 shard_names: Sequence[str] | None = None):
        self.shards = [np.asarray(s, dtype=np.int32) for s in shards]
        self.shard_names = list(shard_names) if shard_names else [
            f"shard_{i:03d}.i32" for i in range(len(self.shards))
        ]
        sizes = [s.size for s in self.shards]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.total_tokens = int(self.offsets[-1])
        self.verb_ids = sorted(matches)
        self.matches: list[tuple[int, str]] = []
        for verb, positions in matches.items():
            for pos in positions:
                pos = int(pos)
                if not (0 <= pos < self.total_tokens):
                    raise ValueError(
                        f"match for verb {verb!r} at position {pos} beyond stream "
                        f"of {self.total_tokens} tokens"
                    )
                self.matches.append((pos, verb))
        self.matches.sort()

    @classmethod
    def from_dir(cls, path: str | Path) -> "TokenStream":
        root = Path(path)
        with open(root / STREAM_MANIFEST, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        shards = [np.fromfile(root / name, dtype="<i4") for name in manifest["shards"]]
        with open(root / MATCH_INDEX, "r", encoding="utf-8") as fh:
            raw = json.load(fh)["matches"]
        name_offsets = {}
        offset = 0
        for name, shard in zip(manifest["shards"], shards):
            name_offsets[name] = offset
            offset += shard.size
        matches: dict[str, list[int]] = {}
        for verb, by_shard in raw.items():
            positions = []
            for shard_name, local in by_shard.items():
                if shard_name not in name_offsets:
                    raise ValueError(f"match index references unknown shard {shard_name!r}")
                positions.extend(name_offsets[shard_name] + int(p) for p in local)
            matches[verb] = positions
        return cls(shards, matches, shard_names=list(manifest["shards"]))

    def save(self, out_dir: str | Path, vocab_size: int | None = None) -> Path:
        root = Path(out_dir)
        root.mkdir(parents=True, exist_ok=True)
        for name, shard in zip(self.shard_names, self.shards):
            shard.astype("<i4").tofile(root / name)
        manifest = {"shards": self.shard_names}
        if vocab_size is not None:
            manifest["vocab_size"] = int(vocab_size)
        with open(root / STREAM_MANIFEST, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
        by_verb: dict[str, dict[str, list[int]]] = {v: {} for v in self.verb_ids}
        for pos, verb in self.matches:
            shard_idx = int(np.searchsorted(self.offsets, pos, side="right")) - 1
            local = pos - int(self.offsets[shard_idx])
            by_verb[verb].setdefault(self.shard_names[shard_idx], []).append(local)
        with open(root / MATCH_INDEX, "w", encoding="utf-8") as fh:
            json.dump({"matches": by_verb}, fh, indent=2)
        return root

    def window(self, start: int, length: int) -> np.ndarray:
        """Tokens [start, start+length), truncated at the end of the stream."""
        start = max(0, start)
        end = min(start + length, self.total_tokens)
        if start >= end:
            return np.empty(0, dtype=np.int32)
        parts = []
        pos = start
        while pos < end:
            shard_idx = int(np.searchsorted(self.offsets, pos, side="right")) - 1
            local = pos - int(self.offsets[shard_idx])
            take = min(end - pos, self.shards[shard_idx].size - local)
            parts.append(self.shards[shard_idx][local : local + take])
            pos += take
        return np.concatenate(parts) if len(parts) > 1 else parts[0]


@dataclass
class BaselineSnapshot:
    tokens_seen: int
    counts: dict[str, np.ndarray]  # verb -> int64 count vector


def merge_counts(a: dict[str, np.ndarray], b: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Elementwise sum of two count-vector maps (associative and commutative)."""
    out = {v: c.copy() for v, c in a.items()}
    for verb, vec in b.items():
        if verb in out:
            out[verb] = out[verb] + vec
        else:
            out[verb] = vec.copy()
    return out


def _window_ids(stream: TokenStream, pos: int, config: BaselineConfig) -> np.ndarray:
    start = pos if config.include_match_token else pos + 1
    ids = stream.window(start, config.window)
    if config.stopword_ids:
        keep = ~np.isin(ids, list(config.stopword_ids))
        ids = ids[keep]
    bad = ids[(ids < 0) | (ids >= config.vocab_size)]
    if bad.size:
        raise ValueError(f"token id {int(bad[0])} outside vocab of size {config.vocab_size}")
    return ids


def stream_count(stream: TokenStream, config: BaselineConfig, jobs: int = 1) -> list[BaselineSnapshot]:
    """Accumulate per-verb window counts, snapshotting at schedule thresholds.

    A match contributes to a snapshot at threshold T iff its global position
    is < T (its window may extend past T). Overlapping windows count
    independently; thresholds beyond the stream length emit nothing.
    """
    thresholds = [t for t in config.snapshot_schedule if t <= stream.total_tokens]
    if not thresholds:
        raise ValueError(
            f"no snapshot threshold within stream of {stream.total_tokens} tokens"
        )
    if jobs > 1 and len(stream.shards) > 1:
        return _stream_count_sharded(stream, config, thresholds, jobs)
    counts = {v: np.zeros(config.vocab_size, dtype=np.int64) for v in stream.verb_ids}
    snapshots: list[BaselineSnapshot] = []
    ti = 0
    for pos, verb in stream.matches:
        while ti < len(thresholds) and thresholds[ti] <= pos:
            snapshots.append(BaselineSnapshot(thresholds[ti], {v: c.copy() for v, c in counts.items()}))
            ti += 1
        ids = _window_ids(stream, pos, config)
        np.add.at(counts[verb], ids, 1)
    while ti < len(thresholds):
        snapshots.append(BaselineSnapshot(thresholds[ti], {v: c.copy() for v, c in counts.items()}))
        ti += 1
    return snapshots


def _stream_count_sharded(
    stream: TokenStream, config: BaselineConfig, thresholds: list[int], jobs: int
) -> list[BaselineSnapshot]:
    """Shard-parallel counting with a deterministic merge per threshold."""
    bounds = [(int(stream.offsets[i]), int(stream.offsets[i + 1])) for i in range(len(stream.shards))]

    def one_shard(span: tuple[int, int]) -> list[dict[str, np.ndarray]]:
        lo, hi = span
        partial = {v: np.zeros(config.vocab_size, dtype=np.int64) for v in stream.verb_ids}
        out: list[dict[str, np.ndarray]] = []
        ti = 0
        for pos, verb in stream.matches:
            if pos < lo or pos >= hi:
                continue
            while ti < len(thresholds) and thresholds[ti] <= pos:
                out.append({v: c.copy() for v, c in partial.items()})
                ti += 1
            ids = _window_ids(stream, pos, config)
            np.add.at(partial[verb], ids, 1)
        while ti < len(thresholds):
            out.append({v: c.copy() for v, c in partial.items()})
            ti += 1
        return out

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        per_shard = list(pool.map(one_shard, bounds))
    snapshots = []
    for k, threshold in enumerate(thresholds):
        merged = per_shard[0][k]
        for other in per_shard[1:]:
            merged = merge_counts(merged, other[k])
        snapshots.append(BaselineSnapshot(threshold, merged))
    return snapshots


def smooth_normalize(counts: np.ndarray, k: float, vocab_size: int | None = None) -> np.ndarray:
    """Add-k smoothed probability vector: (c_i + k) / (sum(c) + k * V)."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 1:
        raise ValueError("counts must be a vector")
    if counts.min() < 0:
        raise ValueError("counts must be non-negative")
    if k <= 0:
        raise ValueError("smoothing k must be positive")
    v = counts.size if vocab_size is None else int(vocab_size)
    if v != counts.size:
        raise ValueError(f"vocab_size {v} does not match vector length {counts.size}")
    return (counts + k) / (counts.sum() + k * v)


@dataclass
class BaselineCurves:
    within: dict[str, TrajectorySeries]  # class_id -> series over tokens_seen
    between: TrajectorySeries
    grids: list[DivergenceGrid]  # one per snapshot; step == tokens_seen


def baseline_divergence_curves(
    snapshots: Sequence[BaselineSnapshot],
    verb_classes: dict[str, str],
    config: BaselineConfig,
    run_id: str = "baseline",
) -> BaselineCurves:
    """Within-class and between-class mean divergence per snapshot (95% CI
    half-widths as dispersion), plus the full per-snapshot divergence grids.
    """
    if not snapshots:
        raise ValueError("need at least one snapshot")
    class_ids = sorted(set(verb_classes.values()))
    if len(class_ids) < 2:
        raise ValueError("need at least two classes for between-class curves")
    for c in class_ids:
        n_verbs = sum(1 for cls in verb_classes.values() if cls == c)
        if n_verbs < 2:
            raise ValueError(f"class {c!r} has {n_verbs} verb(s); need at least two")
    labels = tuple(
        GridLabel(verb, verb_classes[verb])
        for verb in sorted(verb_classes)
    )
    missing = [lab.verb_id for lab in labels if lab.verb_id not in snapshots[0].counts]
    if missing:
        raise ValueError(f"verbs missing from snapshot counts: {missing}")

    grids: list[DivergenceGrid] = []
    within_vals: dict[str, list[tuple[float, float]]] = {c: [] for c in class_ids}
    between_vals: list[tuple[float, float]] = []
    for snap in snapshots:
        dists = {
            lab.verb_id: smooth_normalize(snap.counts[lab.verb_id], config.smoothing_k)
            for lab in labels
        }
        n = len(labels)
        values = np.zeros((n, n))
        within_groups: dict[str, list[float]] = {c: [] for c in class_ids}
        between: list[float] = []
        for i in range(n):
            for j in range(i + 1, n):
                d = jsd(dists[labels[i].verb_id], dists[labels[j].verb_id])
                values[i, j] = values[j, i] = d
                if labels[i].class_id == labels[j].class_id:
                    within_groups[labels[i].class_id].append(d)
                else:
                    between.append(d)
        grids.append(DivergenceGrid(step=snap.tokens_seen, labels=labels, values=values))
        for c in class_ids:
            mean, ci = _mean_ci(within_groups[c])
            half = 0.0 if ci is None else (ci[1] - ci[0]) / 2.0
            within_vals[c].append((float(mean), half))
        mean, ci = _mean_ci(between)
        half = 0.0 if ci is None else (ci[1] - ci[0]) / 2.0
        between_vals.append((float(mean), half))

    steps = tuple(s.tokens_seen for s in snapshots)
    within_series = {
        c: TrajectorySeries(
            run_id,
            f"baseline_within:{c}",
            steps,
            tuple(v for v, _ in within_vals[c]),
            tuple(h for _, h in within_vals[c]),
        )
        for c in class_ids
    }
    between_series = TrajectorySeries(
        run_id,
        "baseline_between:" + "_".join(class_ids),
        steps,
        tuple(v for v, _ in between_vals),
        tuple(h for _, h in between_vals),
    )
    return BaselineCurves(within=within_series, between=between_series, grids=grids)
