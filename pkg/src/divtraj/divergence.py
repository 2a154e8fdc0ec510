"""Jensen-Shannon divergence in bits and pairwise divergence grids.

The divergence between two verbs at a checkpoint is computed between their
profile distributions (uniform-weight means over prefix rows). Grids are
symmetric with a zero diagonal and keep the caller's label order, so
class-contiguous label lists yield visible block structure in heatmaps.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dist_store import DistributionDump, verb_profile


def jsd(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence in bits (base-2 logs, 0*log0 == 0).

    Inputs are renormalized, so count vectors work too. Symmetric by
    construction, 0.0 exactly for identical inputs, and clamped to [0, 1]
    against float rounding at the boundaries.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError(f"distributions must be equal-length vectors, got {p.shape} vs {q.shape}")
    if p.min() < 0.0 or q.min() < 0.0:
        raise ValueError("distributions must be non-negative")
    ps, qs = p.sum(), q.sum()
    if ps <= 0.0 or qs <= 0.0:
        raise ValueError("distributions must have positive mass")
    p = p / ps
    q = q / qs
    m = 0.5 * (p + q)
    d = 0.5 * (_kl_bits(p, m) + _kl_bits(q, m))
    return min(max(d, 0.0), 1.0)


def _kl_bits(p: np.ndarray, m: np.ndarray) -> float:
    mask = p > 0.0
    pm = p[mask]
    return float(np.sum(pm * np.log2(pm / m[mask])))


@dataclass(frozen=True)
class GridLabel:
    """One row/column of a divergence grid: a verb under an optional condition."""

    verb_id: str
    class_id: str
    condition_id: str | None = None

    @property
    def key(self) -> str:
        if self.condition_id is None:
            return self.verb_id
        return f"{self.verb_id}@{self.condition_id}"


@dataclass
class DivergenceGrid:
    step: int
    labels: tuple[GridLabel, ...]
    values: np.ndarray  # (n, n) float64, symmetric, zero diagonal

    def value(self, key_a: str, key_b: str) -> float:
        idx = {lab.key: i for i, lab in enumerate(self.labels)}
        return float(self.values[idx[key_a], idx[key_b]])

    def rows_for_class(self, class_id: str) -> list[int]:
        return [i for i, lab in enumerate(self.labels) if lab.class_id == class_id]


def class_labels(dump: DistributionDump, class_ids: Sequence[str]) -> list[GridLabel]:
    """Class-contiguous label list over all verbs of the given classes."""
    labels = []
    for class_id in class_ids:
        verbs = dump.verbs_in_class(class_id)
        if not verbs:
            raise ValueError(f"class {class_id!r} has no verbs in dump {dump.run_id!r}")
        labels.extend(GridLabel(v, class_id) for v in verbs)
    return labels


def pairwise_grid(
    dump: DistributionDump,
    step: int,
    labels: Sequence[GridLabel],
    condition: str | None = None,
    cache: bool = True,
) -> DivergenceGrid:
    """Symmetric grid of profile divergences; each unordered pair computed once.

    A label's own ``condition_id`` wins over the grid-level ``condition``
    filter, which applies to labels that leave it unset.
    """
    labels = tuple(labels)
    if len(labels) < 2:
        raise ValueError("a divergence grid needs at least two labels")
    if len({lab.key for lab in labels}) != len(labels):
        raise ValueError("grid labels must be unique")
    profiles = np.stack(
        [
            verb_profile(
                dump,
                lab.verb_id,
                step,
                condition=lab.condition_id if lab.condition_id is not None else condition,
                cache=cache,
            )
            for lab in labels
        ]
    )
    return grid_from_profiles(step, labels, profiles)


def grid_from_profiles(
    step: int, labels: Sequence[GridLabel], profiles: np.ndarray
) -> DivergenceGrid:
    n = len(labels)
    values = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            d = jsd(profiles[i], profiles[j])
            values[i, j] = d
            values[j, i] = d
    return DivergenceGrid(step=step, labels=tuple(labels), values=values)


def split_in_between(
    grid: DivergenceGrid, focal_verb: str, class_a: str, class_b: str
) -> tuple[np.ndarray, np.ndarray]:
    """Divergences from a focal verb to its own class (self excluded) and to
    the other class.

    Returns ``(within, between)`` where ``within`` pairs the focal verb with
    the remaining ``class_a`` labels and ``between`` with ``class_b`` labels.
    """
    focal_idx = [
        i
        for i, lab in enumerate(grid.labels)
        if lab.verb_id == focal_verb and lab.class_id == class_a
    ]
    if not focal_idx:
        raise ValueError(f"focal verb {focal_verb!r} not in grid under class {class_a!r}")
    i = focal_idx[0]
    same = [j for j in grid.rows_for_class(class_a) if j != i]
    other = grid.rows_for_class(class_b)
    if not same or not other:
        raise ValueError(
            f"split for verb {focal_verb!r} needs non-empty groups "
            f"(same={len(same)}, other={len(other)})"
        )
    return grid.values[i, same], grid.values[i, other]


def write_grid(grid: DivergenceGrid, csv_path: str | Path) -> tuple[Path, Path]:
    """Write a grid as CSV (label header row/column) plus a JSON sidecar."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    keys = [lab.key for lab in grid.labels]
    tmp = csv_path.with_name(csv_path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + keys)
        for i, key in enumerate(keys):
            writer.writerow([key] + [repr(float(v)) for v in grid.values[i]])
    tmp.replace(csv_path)

    sidecar = csv_path.with_suffix(".json")
    payload = {
        "step": grid.step,
        "units": "bits",
        "labels": [
            {
                "verb_id": lab.verb_id,
                "class_id": lab.class_id,
                "condition_id": lab.condition_id,
            }
            for lab in grid.labels
        ],
    }
    tmp = sidecar.with_name(sidecar.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    tmp.replace(sidecar)
    return csv_path, sidecar


def read_grid(csv_path: str | Path) -> DivergenceGrid:
    """Load a grid written by :func:`write_grid` (CSV + JSON sidecar)."""
    csv_path = Path(csv_path)
    with open(csv_path, "r", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0][1:]
    values = np.array([[float(x) for x in row[1:]] for row in rows[1:]], dtype=np.float64)
    with open(csv_path.with_suffix(".json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    labels = tuple(
        GridLabel(d["verb_id"], d["class_id"], d.get("condition_id")) for d in meta["labels"]
    )
    if [lab.key for lab in labels] != header:
        raise ValueError(f"sidecar labels do not match CSV header in {csv_path}")
    return DivergenceGrid(step=int(meta["step"]), labels=labels, values=values)
