"""Checkpoint distribution dumps: a manifest plus one float32 matrix per step.

A dump directory holds ``manifest.json`` (vocab size, run id, step list, prefix
table) and one ``step_<n>.f32`` file per checkpoint containing a
``num_prefixes x vocab_size`` float32 little-endian row-major matrix. Rows are
next-token distributions; they are stored in single precision and renormalized
in double precision when materialized.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ROW_SUM_TOL = 1e-4
MANIFEST_NAME = "manifest.json"


class DumpError(Exception):
    """A dump directory is unreadable or structurally inconsistent."""


@dataclass(frozen=True)
class PrefixRecord:
    """One prompt whose next-token distribution is tracked across checkpoints.

    ``target_offset`` is the index one past the last prefix token (the
    next-token slot) under the tokenization that produced ``text``.
    """

    prefix_id: str
    text: str
    verb_id: str
    class_id: str
    condition_id: str | None
    target_offset: int


@dataclass(frozen=True)
class CheckpointIndex:
    run_id: str
    steps: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.steps:
            raise DumpError("checkpoint index has no steps")
        if any(b <= a for a, b in zip(self.steps, self.steps[1:])):
            raise DumpError("checkpoint steps must be strictly increasing")


@dataclass(frozen=True)
class Violation:
    kind: str
    step: int | None
    prefix_id: str | None
    detail: str


@dataclass
class ValidationReport:
    fatal: list[str]
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.fatal and not self.violations

    def summary(self) -> str:
        if self.ok:
            return "ok"
        lines = [f"fatal: {msg}" for msg in self.fatal]
        lines += [
            f"{v.kind} step={v.step} prefix={v.prefix_id}: {v.detail}"
            for v in self.violations
        ]
        return "\n".join(lines)


def step_file_name(step: int) -> str:
    return f"step_{step}.f32"


def _read_manifest(path: Path) -> dict:
    manifest_path = path / MANIFEST_NAME
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DumpError(f"unreadable manifest at {manifest_path}: {exc}") from exc
    for key in ("vocab_size", "run_id", "steps", "prefixes"):
        if key not in manifest:
            raise DumpError(f"manifest at {manifest_path} missing key {key!r}")
    return manifest


def _records_from_manifest(manifest: dict) -> tuple[PrefixRecord, ...]:
    records = []
    for raw in manifest["prefixes"]:
        try:
            records.append(
                PrefixRecord(
                    prefix_id=raw["prefix_id"],
                    text=raw["text"],
                    verb_id=raw["verb_id"],
                    class_id=raw["class_id"],
                    condition_id=raw.get("condition_id"),
                    target_offset=int(raw["target_offset"]),
                )
            )
        except (KeyError, TypeError) as exc:
            raise DumpError(f"malformed prefix record {raw!r}: {exc}") from exc
    ids = [r.prefix_id for r in records]
    if len(set(ids)) != len(ids):
        raise DumpError("duplicate prefix_id values in manifest")
    if not records:
        raise DumpError("manifest declares no prefixes")
    return tuple(records)


class DistributionDump:
    """Lazy, read-only view of a dump directory.

    Per-step matrices are loaded on first access and cached unless
    ``cache=False`` is passed; instances are safe to read from multiple
    threads.
    """

    def __init__(
        self,
        path: Path,
        vocab_size: int,
        index: CheckpointIndex,
        prefixes: tuple[PrefixRecord, ...],
    ):
        self.path = Path(path)
        self.vocab_size = int(vocab_size)
        self.index = index
        self.prefixes = prefixes
        self.prefix_rows = {rec.prefix_id: i for i, rec in enumerate(prefixes)}
        self._matrices: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()

    @property
    def run_id(self) -> str:
        return self.index.run_id

    @property
    def steps(self) -> tuple[int, ...]:
        return self.index.steps

    def verbs(self) -> list[str]:
        return sorted({rec.verb_id for rec in self.prefixes})

    def class_of(self, verb_id: str) -> str:
        classes = {r.class_id for r in self.prefixes if r.verb_id == verb_id}
        if not classes:
            raise KeyError(f"verb {verb_id!r} not present in dump")
        if len(classes) > 1:
            raise DumpError(f"verb {verb_id!r} appears under multiple classes: {sorted(classes)}")
        return classes.pop()

    def verbs_in_class(self, class_id: str) -> list[str]:
        return sorted({r.verb_id for r in self.prefixes if r.class_id == class_id})

    def prefixes_for(self, verb_id: str, condition: str | None = None) -> list[PrefixRecord]:
        return [
            r
            for r in self.prefixes
            if r.verb_id == verb_id and (condition is None or r.condition_id == condition)
        ]

    def _step_path(self, step: int) -> Path:
        return self.path / step_file_name(step)

    def step_matrix(self, step: int, cache: bool = True) -> np.ndarray:
        """Raw float32 matrix for ``step`` (num_prefixes x vocab_size)."""
        if step not in self.index.steps:
            raise KeyError(f"step {step} not in checkpoint index for run {self.run_id!r}")
        with self._lock:
            cached = self._matrices.get(step)
        if cached is not None:
            return cached
        raw = np.fromfile(self._step_path(step), dtype="<f4")
        expected = len(self.prefixes) * self.vocab_size
        if raw.size != expected:
            raise DumpError(
                f"{self._step_path(step)}: expected {expected} float32 values, found {raw.size}"
            )
        matrix = raw.reshape(len(self.prefixes), self.vocab_size)
        if cache:
            with self._lock:
                self._matrices[step] = matrix
        return matrix

    def row(self, step: int, prefix_id: str, cache: bool = True) -> np.ndarray:
        """Renormalized float64 distribution for one prefix at one step."""
        try:
            i = self.prefix_rows[prefix_id]
        except KeyError:
            raise KeyError(f"prefix {prefix_id!r} not in dump") from None
        raw = self.step_matrix(step, cache=cache)[i]
        return normalize_row(raw, step=step, prefix_id=prefix_id)

    def rows(self, step: int, prefix_ids: Sequence[str], cache: bool = True) -> np.ndarray:
        matrix = self.step_matrix(step, cache=cache)
        out = np.empty((len(prefix_ids), self.vocab_size), dtype=np.float64)
        for k, pid in enumerate(prefix_ids):
            try:
                i = self.prefix_rows[pid]
            except KeyError:
                raise KeyError(f"prefix {pid!r} not in dump") from None
            out[k] = normalize_row(matrix[i], step=step, prefix_id=pid)
        return out

    def save(self, out_dir: str | Path) -> Path:
        """Re-serialize the dump; matrix payloads are byte-identical."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out, self.run_id, self.vocab_size, self.steps, self.prefixes)
        for step in self.steps:
            matrix = self.step_matrix(step, cache=False)
            matrix.astype("<f4", copy=False).tofile(out / step_file_name(step))
        return out


def normalize_row(raw: np.ndarray, step: int | None = None, prefix_id: str | None = None) -> np.ndarray:
    """Promote a stored row to float64 and renormalize it to sum exactly 1."""
    row = np.asarray(raw, dtype=np.float64)
    total = row.sum()
    if not (1.0 - ROW_SUM_TOL <= total <= 1.0 + ROW_SUM_TOL):
        raise ValueError(
            f"row sum {total!r} outside tolerance {ROW_SUM_TOL} "
            f"(step={step}, prefix={prefix_id})"
        )
    if row.min() < 0.0:
        raise ValueError(f"negative probability in row (step={step}, prefix={prefix_id})")
    return row / total


def load_dump(path: str | Path) -> DistributionDump:
    """Open a dump directory, failing fast on structural problems."""
    root = Path(path)
    if not root.is_dir():
        raise DumpError(f"dump directory not found: {root}")
    manifest = _read_manifest(root)
    records = _records_from_manifest(manifest)
    index = CheckpointIndex(run_id=str(manifest["run_id"]), steps=tuple(int(s) for s in manifest["steps"]))
    vocab_size = int(manifest["vocab_size"])
    if vocab_size < 2:
        raise DumpError(f"vocab_size must be at least 2, got {vocab_size}")
    expected_bytes = len(records) * vocab_size * 4
    for step in index.steps:
        step_path = root / step_file_name(step)
        if not step_path.exists():
            raise DumpError(f"manifest declares step {step} but {step_path} is missing")
        size = step_path.stat().st_size
        if size != expected_bytes:
            raise DumpError(
                f"{step_path}: size {size} does not match "
                f"{len(records)} prefixes x {vocab_size} vocab x 4 bytes"
            )
    return DistributionDump(root, vocab_size, index, records)


def validate_dump(path: str | Path) -> ValidationReport:
    """Full scan of a dump: shapes, row sums, negative entries, missing files.

    Unreadable manifests raise :class:`DumpError`; everything else is
    reported. An empty report means the dump is loadable and clean.
    """
    root = Path(path)
    fatal: list[str] = []
    violations: list[Violation] = []
    manifest = _read_manifest(root)  # raises DumpError when unreadable
    try:
        records = _records_from_manifest(manifest)
        index = CheckpointIndex(str(manifest["run_id"]), tuple(int(s) for s in manifest["steps"]))
    except DumpError as exc:
        return ValidationReport(fatal=[str(exc)], violations=[])
    vocab_size = int(manifest["vocab_size"])
    expected = len(records) * vocab_size
    for step in index.steps:
        step_path = root / step_file_name(step)
        if not step_path.exists():
            fatal.append(f"missing matrix file {step_path}")
            continue
        raw = np.fromfile(step_path, dtype="<f4")
        if raw.size != expected:
            fatal.append(
                f"{step_path}: expected {expected} float32 values, found {raw.size}"
            )
            continue
        matrix = raw.reshape(len(records), vocab_size).astype(np.float64)
        sums = matrix.sum(axis=1)
        bad_rows = np.nonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)[0]
        for i in bad_rows:
            violations.append(
                Violation("row-sum", step, records[i].prefix_id, f"sum={sums[i]!r}")
            )
        neg_rows = np.nonzero(matrix.min(axis=1) < 0.0)[0]
        for i in neg_rows:
            violations.append(
                Violation("negative-entry", step, records[i].prefix_id, f"min={matrix[i].min()!r}")
            )
    return ValidationReport(fatal=fatal, violations=violations)


def mean_distribution(rows: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """Uniform arithmetic mean of distributions, renormalized in float64."""
    stack = np.asarray(rows, dtype=np.float64)
    if stack.ndim == 1:
        stack = stack[None, :]
    if stack.ndim != 2 or stack.shape[0] == 0:
        raise ValueError("mean_distribution requires a non-empty list of equal-length rows")
    mean = stack.mean(axis=0)
    total = mean.sum()
    if total <= 0:
        raise ValueError("mean distribution has non-positive mass")
    return mean / total


def verb_profile(
    dump: DistributionDump,
    verb_id: str,
    step: int,
    condition: str | None = None,
    cache: bool = True,
) -> np.ndarray:
    """Mean next-token distribution over all prefixes of one verb at one step.

    Inflections are pooled because the prefix table stores lemma-level
    ``verb_id`` values; every prefix contributes with uniform weight.
    """
    records = dump.prefixes_for(verb_id, condition)
    if not records:
        raise ValueError(
            f"verb {verb_id!r} has no prefixes under condition filter {condition!r}"
        )
    rows = dump.rows(step, [r.prefix_id for r in records], cache=cache)
    return mean_distribution(rows)


def write_manifest(
    out_dir: str | Path,
    run_id: str,
    vocab_size: int,
    steps: Iterable[int],
    prefixes: Iterable[PrefixRecord],
    extra: dict | None = None,
) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "vocab_size": int(vocab_size),
        "run_id": run_id,
        "steps": [int(s) for s in steps],
        "prefixes": [asdict(rec) for rec in prefixes],
    }
    if extra:
        manifest.update(extra)
    path = out / MANIFEST_NAME
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    tmp.replace(path)
    return path


def write_dump(
    out_dir: str | Path,
    run_id: str,
    vocab_size: int,
    prefixes: Sequence[PrefixRecord],
    matrices: dict[int, np.ndarray],
) -> Path:
    """Write a complete dump directory from in-memory matrices (float32 cast)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    steps = sorted(matrices)
    write_manifest(out, run_id, vocab_size, steps, prefixes)
    for step in steps:
        matrix = np.asarray(matrices[step])
        if matrix.shape != (len(prefixes), vocab_size):
            raise ValueError(
                f"matrix for step {step} has shape {matrix.shape}, "
                f"expected {(len(prefixes), vocab_size)}"
            )
        matrix.astype("<f4").tofile(out / step_file_name(step))
    return out


def load_prefix_table(path: str | Path) -> list[PrefixRecord]:
    """Read a PrefixRecord table (JSON list, same schema as the manifest)."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not raw:
        return []
    return list(_records_from_manifest({"prefixes": raw, "vocab_size": 0, "run_id": "", "steps": []}))


def write_prefix_table(records: Sequence[PrefixRecord], path: str | Path) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump([asdict(r) for r in records], fh, indent=2)
        fh.write("\n")
    tmp.replace(out)
    return out
