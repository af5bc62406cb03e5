"""Command-line entry point.

Subcommands: ``sgrid build`` composes grid images, ``fuse`` runs the
classical fusion baselines, ``rerank`` runs candidate assembly plus
list-wise reranking, ``eval`` scores a run file, ``sweep`` repeats an
experiment along one ablation axis.  Exit codes: 0 success, 1 partial
or runtime failure, 2 usage or configuration error.  Logs go to
standard error; standard output carries data only when a subcommand
produces a single document.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import re
import sys
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Sequence

from .core import (
    ConfigError,
    FormatError,
    RankedList,
    RunEntry,
    VicError,
    load_manifest,
    load_run_file,
    write_run_file,
)
from .evaluation import (
    ExperimentConfig,
    SourceSpec,
    assemble_for_query,
    combined_csv,
    dedup_ranked,
    emit_report,
    fingerprint_of,
    load_sources,
    render_table,
    report_from_run,
    run_experiment,
    strip_timing,
)
from .fusion import FusionWeights, RrfConfig, comb_mnz, comb_sum, rrf
from .reranker import (
    BackendConfig,
    TranscriptWriter,
    apply,
    build_prompt,
    gold_relevance,
    make_backend,
    rerank_many,
)
from .sgrid import GridSpec, GridStore, compose_grid, load_frames, save_sgrid

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


# ---------------------------------------------------------------------------
# Small parsers for flag values
# ---------------------------------------------------------------------------


def _parse_canvas(text: str) -> tuple[int, int]:
    """``1024`` means square; ``1024x768`` means height x width."""
    match = re.fullmatch(r"(\d+)(?:x(\d+))?", text.strip())
    if not match:
        raise ConfigError(f"canvas must be SIZE or HxW, got {text!r}")
    h = int(match.group(1))
    w = int(match.group(2)) if match.group(2) else h
    return h, w


def _parse_weights(text: str) -> dict[str, float]:
    weights: dict[str, float] = {}
    for part in text.split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise ConfigError(f"weights must be tag=value pairs, got {part!r}")
        tag, _, value = part.partition("=")
        try:
            weights[tag.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"bad weight value in {part!r}") from None
    if not weights:
        raise ConfigError("empty weights")
    return weights


def _parse_ints(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise ConfigError(f"expected comma-separated integers, got {text!r}")
    return values


def _apply_override(raw: dict, assignment: str) -> None:
    """Apply one dotted-path override like ``assembly.keep_duplicates=false``.

    Values parse as JSON when possible, otherwise as plain strings.
    """
    if "=" not in assignment:
        raise ConfigError(f"--set expects dotted.path=value, got {assignment!r}")
    path, _, text = assignment.partition("=")
    keys = [k for k in path.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"--set expects dotted.path=value, got {assignment!r}")
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    node = raw
    for key in keys[:-1]:
        child = node.get(key)
        if not isinstance(child, dict):
            child = {}
            node[key] = child
        node = child
    node[keys[-1]] = value


def _load_config_file(path: str) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return raw


def _source_specs(runs: Sequence[str] | None, scores: Sequence[str] | None) -> list[SourceSpec]:
    specs = [SourceSpec(path=p, kind="run") for p in runs or []]
    specs += [SourceSpec(path=p, kind="scores") for p in scores or []]
    if not specs:
        raise ConfigError("at least one --runs or --scores source is required")
    return specs


# ---------------------------------------------------------------------------
# sgrid
# ---------------------------------------------------------------------------


def cmd_sgrid(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    h, w = _parse_canvas(args.canvas)
    try:
        spec = GridSpec(s=args.grid_size, canvas_h=h, canvas_w=w)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    items = sorted(manifest.videos)

    def build_one(item: str) -> None:
        entry = manifest.videos[item]
        src = load_frames(entry.frames_path, item=item)
        grid = compose_grid(src, spec, subtitle=entry.subtitle)
        save_sgrid(grid, out, quality=args.quality)

    built = 0
    failures = 0
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        futures = {pool.submit(build_one, item): item for item in items}
        for future in as_completed(futures):
            exc = future.exception()
            if exc is None:
                built += 1
                continue
            failures += 1
            print(f"failed {futures[future]}: {exc}", file=sys.stderr)
            if not args.keep_going:
                for pending in futures:
                    pending.cancel()
                break
    print(f"built {built} grids, {failures} failures", file=sys.stderr)
    return EXIT_RUNTIME if failures else EXIT_OK


# ---------------------------------------------------------------------------
# fuse
# ---------------------------------------------------------------------------


def cmd_fuse(args: argparse.Namespace) -> int:
    if args.method == "vic":
        print(
            "error: 'vic' is list-wise reranking, not a score formula; use the rerank subcommand",
            file=sys.stderr,
        )
        return EXIT_USAGE
    sources = load_sources(_source_specs(args.runs, args.scores))
    universes = [s.queries for s in sources]
    queries = sorted(set.intersection(*universes))
    skipped = len(set.union(*universes)) - len(queries)
    if skipped:
        print(
            f"note: {skipped} queries absent from some source; fusing the intersection",
            file=sys.stderr,
        )
    if not queries:
        print("error: no query appears in every source", file=sys.stderr)
        return EXIT_RUNTIME
    weights = (
        FusionWeights(_parse_weights(args.weights))
        if args.weights
        else FusionWeights.uniform([s.tag for s in sources])
    )
    uncovered = [s.tag for s in sources if s.tag not in weights.weights]
    if uncovered:
        raise ConfigError(f"weights missing for sources: {uncovered}")
    out_run: dict[str, RankedList] = {}
    if args.method == "rrf":
        cfg = RrfConfig(k=args.rrf_k)
        for query in queries:
            lists = [s.ranked(query, args.depth_pool) for s in sources]
            out_run[query] = rrf(lists, cfg, depth=args.depth)
    else:
        matrices = [s.matrix() for s in sources]
        for query in queries:
            if args.method == "combsum":
                out_run[query] = comb_sum(matrices, weights, query, depth=args.depth)
            else:
                out_run[query] = comb_mnz(
                    matrices, weights, query, depth=args.depth, depth_pool=args.depth_pool
                )
    write_run_file(out_run, args.out)
    print(f"wrote {len(out_run)} fused queries to {args.out}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# rerank
# ---------------------------------------------------------------------------


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    """Merge config file, --set overrides, then explicit flags (flags win)."""
    raw = _load_config_file(args.config) if args.config else {}
    for assignment in args.set or []:
        _apply_override(raw, assignment)
    raw["method"] = "vic"
    if args.direction:
        raw["direction"] = args.direction
    if args.K is not None:
        raw["K"] = args.K
    if args.runs or args.scores:
        raw["sources"] = [s.to_dict() for s in _source_specs(args.runs, args.scores)]
    if args.backend:
        raw["backend_kind"] = args.backend
    if args.no_duplicates:
        raw.setdefault("assembly", {})
        raw["assembly"]["keep_duplicates"] = False
    if args.priority:
        raw.setdefault("assembly", {})
        raw["assembly"]["priority_order"] = [t for t in args.priority.split(",") if t]
    if args.jobs is not None:
        raw["jobs"] = args.jobs
    if args.template:
        raw["template"] = args.template
    backend_flags = {
        "endpoint_url": args.endpoint,
        "model_id": args.model,
        "timeout_s": args.timeout,
        "max_retries": args.max_retries,
        "temperature": args.temperature,
    }
    set_flags = {k: v for k, v in backend_flags.items() if v is not None}
    if set_flags:
        backend = dict(raw.get("backend") or {})
        backend.update(set_flags)
        raw["backend"] = backend
    if args.grid_size is not None or args.canvas is not None:
        grid = dict(raw.get("grid") or {})
        if args.grid_size is not None:
            grid["s"] = args.grid_size
        if args.canvas is not None:
            grid["canvas_h"], grid["canvas_w"] = _parse_canvas(args.canvas)
        raw["grid"] = grid
    return ExperimentConfig.from_dict(raw)


def cmd_rerank(args: argparse.Namespace) -> int:
    cfg = _experiment_config(args)
    manifest = load_manifest(args.manifest)
    sources = load_sources(cfg.sources)
    all_tags = {s.tag for s in sources}
    if cfg.assembly.priority_order is not None:
        missing = all_tags - set(cfg.assembly.priority_order)
        if missing:
            raise ConfigError(f"priority order omits source tags: {sorted(missing)}")
    relevance = gold_relevance(manifest) if cfg.backend_kind == "mock" else None
    backend = make_backend(cfg.backend_kind, relevance)
    grids = GridStore(manifest, cfg.grid, args.grids)
    queries = sorted(set.union(*[s.queries for s in sources]))

    bundles = {}
    sequences = {}
    prompt_failures = 0
    for query in queries:
        seq = assemble_for_query(cfg, sources, query)
        sequences[query] = seq
        try:
            bundles[query] = build_prompt(
                query, seq, manifest, grids, cfg.direction, template=cfg.template
            )
        except (VicError, KeyError, OSError) as exc:
            prompt_failures += 1
            print(f"query {query}: prompt build failed: {exc}", file=sys.stderr)

    transcript = TranscriptWriter(args.log_transcripts) if args.log_transcripts else None
    results = rerank_many(
        bundles, backend, cfg.backend or BackendConfig(), jobs=cfg.jobs, transcript=transcript
    )

    out_run: dict[str, RankedList] = {}
    backend_failures = 0
    for query in queries:
        seq = sequences[query]
        result = results.get(query)
        if result is None:
            ordered = dedup_ranked(seq.items)
        else:
            if result.raw_reply.startswith("<error:"):
                backend_failures += 1
                print(f"query {query}: backend failed: {result.raw_reply}", file=sys.stderr)
            ordered = dedup_ranked(apply(seq, result.permutation))
        out_run[query] = RankedList(
            retriever_tag="vic",
            query=query,
            entries=tuple(RunEntry(item, 1.0 / rank) for rank, item in enumerate(ordered, 1)),
        )
    write_run_file(out_run, args.out)
    print(
        f"reranked {len(queries)} queries to {args.out}"
        f" ({prompt_failures} prompt failures, {backend_failures} backend failures)",
        file=sys.stderr,
    )
    return EXIT_RUNTIME if prompt_failures or backend_failures else EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args: argparse.Namespace) -> int:
    run = load_run_file(args.run)
    manifest = load_manifest(args.manifest)
    if not manifest.gold:
        raise ConfigError(f"{args.manifest}: manifest has no gold labels")
    cutoffs = _parse_ints(args.cutoffs)
    unknown = sorted(set(run) - set(manifest.gold))
    for query in unknown:
        print(f"run query {query} has no gold labels; ignored", file=sys.stderr)
    label = args.label or Path(args.run).stem
    fingerprint = fingerprint_of(
        {"run": Path(args.run).name, "cutoffs": list(cutoffs), "label": label}
    )
    report = report_from_run(
        run,
        manifest,
        cutoffs,
        label=label,
        fingerprint=fingerprint,
        timestamps=not args.no_timestamps,
    )
    sys.stdout.write(emit_report(report, args.format))
    if args.out:
        base = Path(args.out)
        base.parent.mkdir(parents=True, exist_ok=True)
        Path(f"{base}.report.json").write_text(emit_report(report, "json"), encoding="utf-8")
        Path(f"{base}.report.csv").write_text(emit_report(report, "csv"), encoding="utf-8")
    return EXIT_RUNTIME if unknown else EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def _apply_axis(base: ExperimentConfig, axis: str, value: str) -> ExperimentConfig:
    try:
        if axis == "grid-size":
            grid = GridSpec(s=int(value), canvas_h=base.grid.canvas_h, canvas_w=base.grid.canvas_w)
            return dataclasses.replace(base, grid=grid)
        if axis == "K":
            k = int(value)
            assembly = dataclasses.replace(base.assembly, K=k)
            return dataclasses.replace(base, K=k, assembly=assembly)
        backend = base.backend or BackendConfig()
        return dataclasses.replace(base, backend=dataclasses.replace(backend, model_id=value))
    except ValueError as exc:
        raise ConfigError(f"bad value {value!r} for axis {axis}: {exc}") from None


def cmd_sweep(args: argparse.Namespace) -> int:
    raw = _load_config_file(args.config)
    for assignment in args.set or []:
        _apply_override(raw, assignment)
    base = ExperimentConfig.from_dict(raw)
    manifest = load_manifest(args.manifest)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("sweep needs at least one axis value")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for value in values:
        cfg = _apply_axis(base, args.axis, value)
        label = f"{args.axis}={value}"
        print(f"running {label}", file=sys.stderr)
        report = run_experiment(
            cfg, manifest, grids_dir=args.grids, label=label, timestamps=not args.no_timestamps
        )
        if args.no_timestamps:
            report = strip_timing(report)
        reports.append(report)
        safe = re.sub(r"[^A-Za-z0-9_.=-]+", "_", label)
        (out / f"{safe}.report.json").write_text(emit_report(report, "json"), encoding="utf-8")
        (out / f"{safe}.report.csv").write_text(emit_report(report, "csv"), encoding="utf-8")
    (out / "sweep.csv").write_text(combined_csv(reports), encoding="utf-8")
    sys.stdout.write(render_table(reports))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--no-timestamps",
        action="store_true",
        help="zero wall-clock fields so repeated runs compare byte for byte",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vic",
        description="Candidate assembly, grid serialization, list-wise reranking and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sgrid", help="compose grid images from video frames")
    p.add_argument("action", choices=["build"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid-size", type=int, default=3)
    p.add_argument("--canvas", default="1024", help="SIZE or HxW pixels")
    p.add_argument("--quality", type=int, default=90)
    p.add_argument("--jobs", type=int, default=4)
    p.add_argument("--keep-going", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_sgrid)

    p = sub.add_parser("fuse", help="fuse ranked lists or score matrices")
    p.add_argument("--method", required=True, choices=["rrf", "combsum", "combmnz", "vic"])
    p.add_argument("--runs", nargs="+", default=None)
    p.add_argument("--scores", nargs="+", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--rrf-k", type=float, default=60.0)
    p.add_argument("--weights", default=None, help="tag=w,tag=w (default uniform)")
    p.add_argument("--depth", type=int, default=100, help="output depth per query")
    p.add_argument("--depth-pool", type=int, default=100, help="per-source pool depth")
    _add_common(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("rerank", help="assemble candidates and rerank list-wise")
    p.add_argument("--config", default=None, help="experiment config JSON")
    p.add_argument("--set", action="append", metavar="PATH=VALUE", default=None)
    p.add_argument("--direction", choices=["t2v", "v2t"], default=None)
    p.add_argument("--K", type=int, default=None)
    p.add_argument("--runs", nargs="+", default=None)
    p.add_argument("--scores", nargs="+", default=None)
    p.add_argument("--manifest", required=True)
    p.add_argument("--grids", default=None, help="directory of prebuilt grids")
    p.add_argument("--backend", choices=["mock", "identity", "http"], default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--no-duplicates", action="store_true")
    p.add_argument("--priority", default=None, help="comma-separated tag order")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--template", default=None)
    p.add_argument("--endpoint", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--timeout", type=float, default=None)
    p.add_argument("--max-retries", type=int, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--grid-size", type=int, default=None)
    p.add_argument("--canvas", default=None)
    p.add_argument("--log-transcripts", default=None, metavar="PATH")
    _add_common(p)
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("eval", help="score a run file against gold labels")
    p.add_argument("--run", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--cutoffs", default="1,5,10")
    p.add_argument("--format", choices=["table", "json", "csv"], default="table")
    p.add_argument("--out", default=None, help="base path for .report.json/.report.csv")
    p.add_argument("--label", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="repeat an experiment along one axis")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", metavar="PATH=VALUE", default=None)
    p.add_argument("--manifest", required=True)
    p.add_argument("--grids", default=None)
    p.add_argument("--axis", required=True, choices=["grid-size", "K", "backend-model"])
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--out", default="sweep")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, FormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
