"""Analysis outputs: tidy series tables, run manifests, and schema validation.

All writers are deterministic (no timestamps, floats via ``repr``) and atomic
(temp file + rename), so reruns with the same inputs produce byte-identical
files.
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Mapping, Sequence

from .divergence import read_grid
from .metrics import TrajectorySeries

SERIES_FIELDS = ["run_id", "metric", "step", "value", "dispersion"]
MANIFEST_FILE = "run_manifest.json"


def fmt_float(x: float) -> str:
    """Shortest round-tripping decimal form of a float."""
    return repr(float(x))


def atomic_write_text(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)
    return path


def write_json(path: str | Path, obj) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def config_hash(config: Mapping) -> str:
    """Hash of the canonical JSON form of a configuration mapping."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# --- tidy series tables ---------------------------------------------------------

def write_series_csv(series: Sequence[TrajectorySeries], path: str | Path) -> Path:
    """Write trajectory series as one long-format table.

    Columns: run_id, metric, step, value, dispersion (empty when the series
    carries none).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SERIES_FIELDS)
        for s in series:
            disp = s.dispersions if s.dispersions is not None else [None] * len(s.steps)
            for step, value, d in zip(s.steps, s.values, disp):
                writer.writerow(
                    [s.run_id, s.metric_name, step, fmt_float(value), "" if d is None else fmt_float(d)]
                )
    tmp.replace(path)
    return path


def read_series_csv(path: str | Path) -> list[TrajectorySeries]:
    """Load a long-format series table back into series, grouped in file order."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != SERIES_FIELDS:
            raise ValueError(f"unexpected series header in {path}: {header}")
        grouped: dict[tuple[str, str], list[tuple[int, float, float | None]]] = {}
        order: list[tuple[str, str]] = []
        for row in reader:
            run_id, metric, step, value, disp = row
            key = (run_id, metric)
            if key not in grouped:
                grouped[key] = []
                order.append(key)
            grouped[key].append((int(step), float(value), float(disp) if disp else None))
    out = []
    for run_id, metric in order:
        rows = grouped[(run_id, metric)]
        disps = [d for _, _, d in rows]
        has_disp = [d is not None for d in disps]
        if any(has_disp) and not all(has_disp):
            raise ValueError(f"series {metric!r} in {path} mixes present and missing dispersions")
        out.append(
            TrajectorySeries(
                run_id=run_id,
                metric_name=metric,
                steps=tuple(s for s, _, _ in rows),
                values=tuple(v for _, v, _ in rows),
                dispersions=tuple(disps) if all(has_disp) else None,
            )
        )
    return out


def validate_series_csv(path: str | Path) -> list[str]:
    """Schema problems in a long-format series table (empty list when clean)."""
    problems: list[str] = []
    path = Path(path)
    try:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != SERIES_FIELDS:
                return [f"{path.name}: header {header} != {SERIES_FIELDS}"]
            last_step: dict[tuple[str, str], int] = {}
            for line_no, row in enumerate(reader, 2):
                if len(row) != len(SERIES_FIELDS):
                    problems.append(f"{path.name}:{line_no}: expected {len(SERIES_FIELDS)} fields")
                    continue
                run_id, metric, step, value, disp = row
                try:
                    step_i = int(step)
                except ValueError:
                    problems.append(f"{path.name}:{line_no}: step {step!r} is not an integer")
                    continue
                for name, cell in (("value", value), ("dispersion", disp)):
                    if name == "dispersion" and cell == "":
                        continue
                    try:
                        x = float(cell)
                    except ValueError:
                        problems.append(f"{path.name}:{line_no}: {name} {cell!r} is not a float")
                        continue
                    if x != x:
                        problems.append(f"{path.name}:{line_no}: {name} is NaN")
                key = (run_id, metric)
                if key in last_step and step_i <= last_step[key]:
                    problems.append(
                        f"{path.name}:{line_no}: steps for {metric!r} not strictly increasing"
                    )
                last_step[key] = step_i
    except OSError as exc:
        problems.append(f"{path.name}: unreadable ({exc})")
    return problems


# --- run manifest and directory validation ---------------------------------------

def write_run_manifest(
    out_dir: str | Path,
    config: Mapping,
    inputs: Mapping[str, str | Path],
    outputs: Sequence[str | Path],
) -> Path:
    """Record what produced a result directory: config hash, input and output digests.

    Deliberately contains nothing volatile (no timestamps, no host details),
    so a rerun over identical inputs writes an identical manifest.
    """
    out_dir = Path(out_dir)
    manifest = {
        "config": dict(config),
        "config_sha256": config_hash(config),
        "inputs": {
            name: {"path": str(p), "sha256": sha256_file(p)} for name, p in sorted(inputs.items())
        },
        "outputs": {
            str(Path(p).relative_to(out_dir)): sha256_file(p) for p in sorted(Path(p) for p in outputs)
        },
    }
    return write_json(out_dir / MANIFEST_FILE, manifest)


def _is_grid_csv(path: Path) -> bool:
    sidecar = path.with_suffix(".json")
    if not sidecar.exists():
        return False
    try:
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return False
    return isinstance(meta, dict) and {"step", "units", "labels"} <= set(meta)


def validate_output_dir(out_dir: str | Path) -> list[str]:
    """Check every table in a result directory against its schema.

    CSV files with a grid sidecar must load as square divergence grids; all
    other CSVs must be long-format series tables. When a run manifest is
    present, recorded output digests must match the files on disk.
    """
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        return [f"{out_dir} is not a directory"]
    problems: list[str] = []
    for path in sorted(out_dir.rglob("*.csv")):
        if _is_grid_csv(path):
            try:
                grid = read_grid(path)
            except Exception as exc:  # surface any structural defect as a finding
                problems.append(f"{path.relative_to(out_dir)}: bad grid ({exc})")
                continue
            n = len(grid.labels)
            if grid.values.shape != (n, n):
                problems.append(f"{path.relative_to(out_dir)}: grid is not {n}x{n}")
        else:
            problems.extend(validate_series_csv(path))
    manifest_path = out_dir / MANIFEST_FILE
    if manifest_path.exists():
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            return problems + [f"{MANIFEST_FILE}: invalid JSON ({exc})"]
        for rel, digest in manifest.get("outputs", {}).items():
            target = out_dir / rel
            if not target.exists():
                problems.append(f"{MANIFEST_FILE}: recorded output {rel} is missing")
            elif sha256_file(target) != digest:
                problems.append(f"{MANIFEST_FILE}: digest mismatch for {rel}")
    return problems
