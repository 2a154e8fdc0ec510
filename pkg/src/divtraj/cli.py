"""Command-line entry point.

Subcommands cover the pipeline end to end: ``validate`` (dump integrity or
result-directory schema), ``filter``/``pairs`` (building prefix tables from
parsed corpora or benchmark files), ``analyze``/``nouns``/``breakpoints``/
``baseline`` (tables only), and ``report`` (the full analysis with figures
rendered next to the tables).

Exit codes: 0 success, 1 validation findings or a failed run, 2 usage errors.

Configuration is a JSON file; relative paths inside it resolve against the
config file's directory. Keys:

    dumps            {run name: dump directory}            (required for analysis)
    class_pairs      [[class_a, class_b], ...]
    condition_pairs  [[cond_first, cond_second], ...]
    grid_steps       [step, ...]          pairwise grids to materialize
    alpha, delta, baseline_window         test and onset parameters
    nouns            {noun name: token id}
    baseline         {stream_dir, verb_classes, vocab_size?, window?,
                      smoothing_k?, schedule?, grids?}
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import corpus, exemplar, figures, metrics, output
from .dist_store import DumpError, load_dump, validate_dump, write_prefix_table
from .divergence import class_labels, pairwise_grid, write_grid
from .metrics import (
    DEFAULT_ALPHA,
    DEFAULT_BASELINE_WINDOW,
    DEFAULT_DELTA,
    TrajectorySeries,
)

SERIES_TABLE = "series.csv"


def _load_config(path: str | Path) -> tuple[dict, Path]:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise ValueError(f"config {path} must hold a JSON object")
    return config, path.parent


def _resolve(base: Path, p: str | Path) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _dedupe(series: list[TrajectorySeries]) -> list[TrajectorySeries]:
    seen: set[tuple[str, str]] = set()
    out = []
    for s in series:
        key = (s.run_id, s.metric_name)
        if key not in seen:
            seen.add(key)
            out.append(s)
    return out


# --- validate -------------------------------------------------------------------

def cmd_validate(args: argparse.Namespace) -> int:
    if args.dump:
        report = validate_dump(args.dump)
        print(report.summary())
        return 0 if report.ok else 1
    problems = output.validate_output_dir(args.outputs)
    if problems:
        for p in problems:
            print(p)
        return 1
    print(f"{args.outputs}: all tables conform")
    return 0


# --- corpus commands --------------------------------------------------------------

def cmd_filter(args: argparse.Namespace) -> int:
    lexicon = (
        corpus.VerbLexicon.from_tsv(args.lexicon) if args.lexicon else corpus.VerbLexicon.default()
    )
    classes = args.classes.split(",") if args.classes else None
    if classes:
        pattern = corpus.FramePattern.for_classes(classes)
    else:
        pattern = corpus.FramePattern(pattern_id=f"{args.preposition}-frame", preposition=args.preposition)
    sentences, diagnostics = corpus.load_conllu(args.conllu)
    result = corpus.filter_frames(sentences, lexicon, pattern, classes=classes)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = list(result.records)
    if args.decisions:
        decisions = corpus.read_review_decisions(args.decisions)
        merged, merge_diag = corpus.merge_reviewed(result.queue, decisions)
        records.extend(merged)
        diagnostics.update(merge_diag)
    else:
        corpus.write_review_queue(result.queue, out_dir / "review_queue.tsv")
    write_prefix_table(records, out_dir / "prefixes.json")
    diagnostics.update(result.diagnostics)
    for key in sorted(diagnostics):
        print(f"{key}: {diagnostics[key]}")
    print(f"wrote {len(records)} prefix records to {out_dir / 'prefixes.json'}")
    return 0


def cmd_pairs(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.benchmark:
        result = corpus.load_benchmark_pairs(args.benchmark)
        records, counter = result.records, result.skipped
    else:
        lexicon = (
            corpus.VerbLexicon.from_tsv(args.lexicon) if args.lexicon else corpus.VerbLexicon.default()
        )
        sentences, _ = corpus.load_conllu(args.conllu)
        embedding = tuple(args.embedding_verbs.split(",")) if args.embedding_verbs else ("thinks",)
        result = corpus.generate_rc_pairs(sentences, lexicon, embedding_verbs=embedding)
        records, counter = result.records, result.discarded
    write_prefix_table(records, out_dir / "prefixes.json")
    for key in sorted(counter):
        print(f"{key}: {counter[key]}")
    print(f"wrote {len(records)} prefix records to {out_dir / 'prefixes.json'}")
    return 0


# --- analysis commands -------------------------------------------------------------

def _analysis_series(config: dict, base: Path, alpha: float, jobs: int) -> tuple[list[TrajectorySeries], dict, dict]:
    dumps = {}
    inputs = {}
    for run_name, dump_path in config.get("dumps", {}).items():
        path = _resolve(base, dump_path)
        dumps[run_name] = load_dump(path)
        inputs[f"dump:{run_name}"] = path / "manifest.json"
    if not dumps:
        raise ValueError("config lists no dumps")
    series: list[TrajectorySeries] = []
    for run_name, dump in dumps.items():
        for pair in config.get("class_pairs", []):
            a, b = pair
            series.append(metrics.item_learning_curve(dump, a, jobs=jobs))
            series.append(metrics.item_learning_curve(dump, b, jobs=jobs))
            canonical, reverse = metrics.class_fraction_curve(dump, a, b, alpha=alpha, jobs=jobs)
            series.extend([canonical, reverse])
        for pair in config.get("condition_pairs", []):
            series.append(metrics.minimal_pair_curve(dump, tuple(pair), jobs=jobs))
    return _dedupe(series), dumps, inputs


def _write_grids(config: dict, dumps: dict, out_dir: Path) -> list[Path]:
    written: list[Path] = []
    steps = config.get("grid_steps", [])
    classes = sorted({c for pair in config.get("class_pairs", []) for c in pair})
    if not steps or not classes:
        return written
    for run_name, dump in dumps.items():
        labels = class_labels(dump, classes)
        for step in steps:
            grid = pairwise_grid(dump, int(step), labels, cache=False)
            csv_path, sidecar = write_grid(grid, out_dir / f"grid_{run_name}_step{step}.csv")
            written.extend([csv_path, sidecar])
    return written


def cmd_analyze(args: argparse.Namespace) -> int:
    config, base = _load_config(args.config)
    alpha = args.alpha if args.alpha is not None else config.get("alpha", DEFAULT_ALPHA)
    out_dir = Path(args.out)
    series, dumps, inputs = _analysis_series(config, base, alpha, args.jobs)
    outputs = [output.write_series_csv(series, out_dir / SERIES_TABLE)]
    outputs += _write_grids(config, dumps, out_dir)
    output.write_run_manifest(out_dir, config, inputs, outputs)
    print(f"wrote {len(outputs)} tables to {out_dir}")
    return 0


def _noun_payload(summaries: list[metrics.NounCorrelationSummary]) -> list[dict]:
    return [
        {
            "noun": s.noun,
            "token_id": s.token_id,
            "n_steps": s.n_steps,
            "within_mean": s.within_mean,
            "within_ci": list(s.within_ci) if s.within_ci else None,
            "n_within": s.n_within,
            "between_mean": s.between_mean,
            "between_ci": list(s.between_ci) if s.between_ci else None,
            "n_between": s.n_between,
            "per_class_within": s.per_class_within,
            "excluded_pairs": s.excluded_pairs,
        }
        for s in summaries
    ]


def cmd_nouns(args: argparse.Namespace) -> int:
    config, base = _load_config(args.config)
    nouns = config.get("nouns")
    if not nouns:
        raise ValueError("config has no 'nouns' mapping")
    out_dir = Path(args.out)
    payload = {}
    inputs = {}
    for run_name, dump_path in config.get("dumps", {}).items():
        path = _resolve(base, dump_path)
        dump = load_dump(path)
        inputs[f"dump:{run_name}"] = path / "manifest.json"
        summaries = metrics.noun_trajectory_correlations(
            dump, {str(k): int(v) for k, v in nouns.items()}, jobs=args.jobs
        )
        payload[dump.run_id] = _noun_payload(summaries)
    if not payload:
        raise ValueError("config lists no dumps")
    target = output.write_json(out_dir / "noun_correlations.json", payload)
    output.write_run_manifest(out_dir, config, inputs, [target])
    print(f"wrote {target}")
    return 0


def cmd_breakpoints(args: argparse.Namespace) -> int:
    config, base = _load_config(args.config)
    delta = args.delta if args.delta is not None else config.get("delta", DEFAULT_DELTA)
    window = args.window if args.window is not None else config.get("baseline_window", DEFAULT_BASELINE_WINDOW)
    class_pairs = config.get("class_pairs", [])
    condition_pairs = config.get("condition_pairs", [])
    if not class_pairs or not condition_pairs:
        raise ValueError("breakpoints need class_pairs and condition_pairs in the config")
    condition_pair = tuple(condition_pairs[0])
    out_dir = Path(args.out)
    payload = {}
    inputs = {}
    for run_name, dump_path in config.get("dumps", {}).items():
        path = _resolve(base, dump_path)
        dump = load_dump(path)
        inputs[f"dump:{run_name}"] = path / "manifest.json"
        for a, b in class_pairs:
            cmp = metrics.class_breakpoint_compare(
                dump, a, b, condition_pair=condition_pair, delta=delta,
                baseline_window=window, jobs=args.jobs,
            )
            payload[f"{dump.run_id}:{a}_vs_{b}"] = {
                "class_a": cmp.class_a,
                "class_b": cmp.class_b,
                "median_a": cmp.median_a,
                "median_b": cmp.median_b,
                "t_statistic": cmp.t_statistic,
                "p_value": cmp.p_value,
                "note": cmp.note,
                "breakpoints": {v: r.breakpoint_step for v, r in sorted(cmp.breakpoints.items())},
                "excluded": dict(sorted(cmp.excluded.items())),
            }
    if not payload:
        raise ValueError("config lists no dumps")
    target = output.write_json(out_dir / "breakpoints.json", payload)
    output.write_run_manifest(out_dir, config, inputs, [target])
    print(f"wrote {target}")
    return 0


def _run_baseline(config: dict, base: Path, smoothing_k: float | None, jobs: int) -> tuple[exemplar.BaselineCurves, Path]:
    spec = config.get("baseline")
    if not spec:
        raise ValueError("config has no 'baseline' section")
    stream_dir = _resolve(base, spec["stream_dir"])
    stream = exemplar.TokenStream.from_dir(stream_dir)
    with open(stream_dir / exemplar.STREAM_MANIFEST, "r", encoding="utf-8") as fh:
        stream_meta = json.load(fh)
    vocab_size = spec.get("vocab_size", stream_meta.get("vocab_size"))
    if vocab_size is None:
        raise ValueError("baseline needs vocab_size (config or stream manifest)")
    verb_classes = spec.get("verb_classes")
    if not verb_classes:
        raise ValueError("baseline needs a verb_classes mapping")
    schedule = tuple(spec["schedule"]) if "schedule" in spec else exemplar.default_snapshot_schedule(
        min(exemplar.PAPER_SCALE_TOKENS, stream.total_tokens)
    )
    cfg = exemplar.BaselineConfig(
        vocab_size=int(vocab_size),
        window=int(spec.get("window", 10)),
        smoothing_k=float(smoothing_k if smoothing_k is not None else spec.get("smoothing_k", 0.5)),
        stopword_ids=(
            frozenset(int(i) for i in spec["stopword_ids"])
            if "stopword_ids" in spec
            else exemplar.load_default_stopword_ids()
        ),
        snapshot_schedule=schedule,
    )
    snapshots = exemplar.stream_count(stream, cfg, jobs=jobs)
    curves = exemplar.baseline_divergence_curves(snapshots, dict(verb_classes), cfg)
    return curves, stream_dir


def cmd_baseline(args: argparse.Namespace) -> int:
    config, base = _load_config(args.config)
    out_dir = Path(args.out)
    curves, stream_dir = _run_baseline(config, base, args.smoothing_k, args.jobs)
    series = list(curves.within.values()) + [curves.between]
    outputs = [output.write_series_csv(series, out_dir / "baseline_series.csv")]
    if config.get("baseline", {}).get("grids"):
        for grid in curves.grids:
            csv_path, sidecar = write_grid(grid, out_dir / f"baseline_grid_{grid.step}.csv")
            outputs.extend([csv_path, sidecar])
    inputs = {"stream": stream_dir / exemplar.STREAM_MANIFEST, "matches": stream_dir / exemplar.MATCH_INDEX}
    output.write_run_manifest(out_dir, config, inputs, outputs)
    print(f"wrote {len(outputs)} tables to {out_dir}")
    return 0


# --- report ------------------------------------------------------------------------

def cmd_report(args: argparse.Namespace) -> int:
    """Full pipeline over one config: every table the subcommands produce,
    plus rendered figures, plus the run manifest."""
    config, base = _load_config(args.config)
    alpha = args.alpha if args.alpha is not None else config.get("alpha", DEFAULT_ALPHA)
    delta = args.delta if args.delta is not None else config.get("delta", DEFAULT_DELTA)
    window = args.window if args.window is not None else config.get("baseline_window", DEFAULT_BASELINE_WINDOW)
    out_dir = Path(args.out)
    fig_dir = out_dir / "figures"
    outputs: list[Path] = []

    series, dumps, inputs = _analysis_series(config, base, alpha, args.jobs)
    outputs.append(output.write_series_csv(series, out_dir / SERIES_TABLE))
    outputs += _write_grids(config, dumps, out_dir)

    by_kind: dict[str, list[TrajectorySeries]] = {}
    for s in series:
        by_kind.setdefault(s.metric_name.split(":", 1)[0], []).append(s)
    for kind, group in sorted(by_kind.items()):
        ylabel = "fraction of verbs" if kind.startswith("class_fraction") else "divergence (bits)"
        outputs.append(
            figures.save_series_figure(group, fig_dir / f"{kind}.png", title=kind, ylabel=ylabel)
        )
    for run_name, dump in dumps.items():
        classes = sorted({c for pair in config.get("class_pairs", []) for c in pair})
        for step in config.get("grid_steps", []):
            grid = pairwise_grid(dump, int(step), class_labels(dump, classes), cache=False)
            outputs.append(
                figures.save_grid_heatmap(grid, fig_dir / f"grid_{run_name}_step{step}.png")
            )

    if config.get("nouns"):
        payload = {}
        for run_name, dump in dumps.items():
            summaries = metrics.noun_trajectory_correlations(
                dump, {str(k): int(v) for k, v in config["nouns"].items()}, jobs=args.jobs
            )
            payload[dump.run_id] = _noun_payload(summaries)
            outputs.append(
                figures.save_noun_summary_figure(summaries, fig_dir / f"nouns_{run_name}.png")
            )
        outputs.append(output.write_json(out_dir / "noun_correlations.json", payload))

    if config.get("class_pairs") and config.get("condition_pairs"):
        condition_pair = tuple(config["condition_pairs"][0])
        payload = {}
        for run_name, dump in dumps.items():
            for a, b in config["class_pairs"]:
                try:
                    cmp = metrics.class_breakpoint_compare(
                        dump, a, b, condition_pair=condition_pair, delta=delta,
                        baseline_window=window, jobs=args.jobs,
                    )
                except ValueError:
                    continue  # e.g. the dump has no per-condition pairs for these classes
                payload[f"{dump.run_id}:{a}_vs_{b}"] = {
                    "median_a": cmp.median_a,
                    "median_b": cmp.median_b,
                    "t_statistic": cmp.t_statistic,
                    "p_value": cmp.p_value,
                    "note": cmp.note,
                    "breakpoints": {v: r.breakpoint_step for v, r in sorted(cmp.breakpoints.items())},
                    "excluded": dict(sorted(cmp.excluded.items())),
                }
                outputs.append(
                    figures.save_breakpoint_figure(cmp, fig_dir / f"breakpoints_{run_name}_{a}_vs_{b}.png")
                )
        if payload:
            outputs.append(output.write_json(out_dir / "breakpoints.json", payload))

    if config.get("baseline"):
        curves, stream_dir = _run_baseline(config, base, None, args.jobs)
        baseline_series = list(curves.within.values()) + [curves.between]
        outputs.append(output.write_series_csv(baseline_series, out_dir / "baseline_series.csv"))
        outputs.append(
            figures.save_series_figure(
                baseline_series, fig_dir / "baseline.png", title="count baseline", logx=True,
            )
        )
        inputs["stream"] = stream_dir / exemplar.STREAM_MANIFEST

    output.write_run_manifest(out_dir, config, inputs, outputs)
    print(f"report complete: {len(outputs)} artifacts in {out_dir}")
    return 0


# --- wiring -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="divtraj", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a dump or a result directory")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--dump", help="distribution dump directory")
    group.add_argument("--outputs", help="analysis result directory")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("filter", help="frame-filter a parsed corpus into a prefix table")
    p.add_argument("--conllu", required=True)
    p.add_argument("--classes", help="comma-separated class ids (default: all for the preposition)")
    p.add_argument("--preposition", default="to", help="used when --classes is omitted")
    p.add_argument("--lexicon", help="TSV overriding the bundled verb lexicon")
    p.add_argument("--decisions", help="review-decision TSV from an earlier pass")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("pairs", help="build minimal-pair prefix tables")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--conllu", help="templated pairs from parsed sentences")
    source.add_argument("--benchmark", help="line-delimited JSON benchmark pairs")
    p.add_argument("--embedding-verbs", help="comma-separated (default: thinks)")
    p.add_argument("--lexicon")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pairs)

    def analysis_parser(name: str, help_text: str):
        q = sub.add_parser(name, help=help_text)
        q.add_argument("--config", required=True)
        q.add_argument("--out", required=True)
        q.add_argument("--jobs", type=int, default=1)
        return q

    p = analysis_parser("analyze", "learning curves, class-fraction curves, grids")
    p.add_argument("--alpha", type=float, default=None)
    p.set_defaults(func=cmd_analyze)

    p = analysis_parser("nouns", "noun trajectory correlation summary")
    p.set_defaults(func=cmd_nouns)

    p = analysis_parser("breakpoints", "per-verb onsets and class comparison")
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--window", type=int, default=None)
    p.set_defaults(func=cmd_breakpoints)

    p = analysis_parser("baseline", "exemplar count-baseline curves")
    p.add_argument("--smoothing-k", type=float, default=None)
    p.set_defaults(func=cmd_baseline)

    p = analysis_parser("report", "full pipeline: tables, figures, manifest")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--window", type=int, default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DumpError as exc:  # input data failed validation
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
