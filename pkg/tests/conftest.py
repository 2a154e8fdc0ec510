"""Shared builders for synthetic distribution dumps.

The generators plant signals at known step indices (class-level separation at
one index, verb-level separation at a later one) so tests can assert where
curves move without reference values from any external source.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from divtraj.dist_store import PrefixRecord, load_dump, write_dump


def _normalize(v: np.ndarray) -> np.ndarray:
    return v / v.sum()


def build_class_dump(
    out_dir: Path,
    run_id: str = "synth",
    class_ids: tuple[str, ...] = ("alpha", "beta"),
    verbs_per_class: int = 4,
    n_steps: int = 20,
    vocab: int = 50,
    class_onset: int = 5,
    verb_onset: int = 12,
    step_stride: int = 10,
    seed: int = 0,
    strength: float = 0.6,
):
    """Dump where all verbs share one distribution, then classes split at
    ``class_onset``, then individual verbs split at ``verb_onset``.

    Before ``verb_onset`` every verb of a class has an identical profile, so
    within-class divergences are exactly zero.
    """
    rng = np.random.default_rng(seed)
    class_dirs = {c: rng.dirichlet(np.full(vocab, 0.3)) for c in class_ids}
    records = []
    verb_dirs = {}
    for c in class_ids:
        for k in range(verbs_per_class):
            verb = f"{c}_v{k}"
            verb_dirs[verb] = rng.dirichlet(np.full(vocab, 0.3))
            records.append(
                PrefixRecord(
                    prefix_id=f"{verb}_p0",
                    text=f"... {verb} to the",
                    verb_id=verb,
                    class_id=c,
                    condition_id=None,
                    target_offset=4,
                )
            )
    base = np.full(vocab, 1.0 / vocab)
    steps = [step_stride * (i + 1) for i in range(n_steps)]
    matrices = {}
    for i, step in enumerate(steps):
        rows = []
        for rec in records:
            row = base.copy()
            if i >= class_onset:
                row = row + strength * class_dirs[rec.class_id]
            if i >= verb_onset:
                row = row + strength * verb_dirs[rec.verb_id]
            rows.append(_normalize(row))
        matrices[step] = np.stack(rows)
    write_dump(out_dir, run_id, vocab, records, matrices)
    return load_dump(out_dir), steps


def build_condition_dump(
    out_dir: Path,
    run_id: str = "conds",
    onsets: dict[str, int] | None = None,
    verbs_per_class: int = 3,
    n_steps: int = 25,
    vocab: int = 30,
    step_stride: int = 100,
    seed: int = 1,
    conditions: tuple[str, str] = ("gap", "no_gap"),
):
    """Dump of per-verb minimal pairs whose two members stay identical until a
    class-specific onset index, then diverge and stay apart."""
    onsets = onsets or {"alpha": 8, "beta": 12}
    rng = np.random.default_rng(seed)
    records = []
    base_by_verb = {}
    shift_by_verb = {}
    for c in onsets:
        for k in range(verbs_per_class):
            verb = f"{c}_v{k}"
            base_by_verb[verb] = rng.dirichlet(np.full(vocab, 0.5))
            shift_by_verb[verb] = rng.dirichlet(np.full(vocab, 0.5))
            for cond, tag in zip(conditions, ("gap", "nogap")):
                records.append(
                    PrefixRecord(
                        prefix_id=f"{verb}x|{tag}",
                        text=f"... {verb} ({cond})",
                        verb_id=verb,
                        class_id=c,
                        condition_id=cond,
                        target_offset=3,
                    )
                )
    steps = [step_stride * (i + 1) for i in range(n_steps)]
    matrices = {}
    class_of = {f"{c}_v{k}": c for c in onsets for k in range(verbs_per_class)}
    for i, step in enumerate(steps):
        rows = []
        for rec in records:
            row = base_by_verb[rec.verb_id].copy()
            if rec.condition_id == conditions[1] and i >= onsets[class_of[rec.verb_id]]:
                row = _normalize(row + 0.8 * shift_by_verb[rec.verb_id])
            rows.append(row)
        matrices[step] = np.stack(rows)
    write_dump(out_dir, run_id, vocab, records, matrices)
    return load_dump(out_dir), steps


@pytest.fixture
def class_dump(tmp_path):
    dump, steps = build_class_dump(tmp_path / "dump")
    return dump


@pytest.fixture
def condition_dump(tmp_path):
    dump, steps = build_condition_dump(tmp_path / "dump")
    return dump
