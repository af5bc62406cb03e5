"""Duplicate-aware recall evaluation and experiment orchestration.

An experiment runs one retrieval method over every query that has gold
labels: pass-through of a single first-stage list, one of the score or
rank fusion baselines, or list-wise reranking of an assembled candidate
sequence.  Rankings are deduplicated (highest-ranked instance of each
item kept) before Recall@K is computed.  Per-query failures score as a
miss and are flagged; they never abort the run.
"""

from __future__ import annotations

import dataclasses
import datetime as _dt
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

from .assembly import AssemblyConfig, per_list_depth, round_robin
from .core import (
    ConfigError,
    CorpusManifest,
    ItemId,
    QueryId,
    RankedList,
    ScoreMatrix,
    Slot,
    VicError,
    load_run_file,
    load_score_matrix,
    ranked_from_scores,
    score_matrix_from_runs,
)
from .fusion import (
    DEFAULT_DEPTH_POOL,
    DEFAULT_RRF_K,
    FusionWeights,
    RrfConfig,
    comb_mnz,
    comb_sum,
    rrf,
)
from .reranker import (
    Backend,
    BackendConfig,
    apply,
    build_prompt,
    gold_relevance,
    make_backend,
    rerank_many,
)
from .sgrid import GridSpec, GridStore

log = logging.getLogger(__name__)

METHODS = ("none", "rrf", "combsum", "combmnz", "vic")

STATUS_OK = "ok"
STATUS_MISSING = "missing"
STATUS_ERROR = "error"


def fingerprint_of(payload: Mapping) -> str:
    """sha256 hex digest of the canonical JSON form of a mapping."""
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Sources
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SourceSpec:
    """One first-stage source: a run file or a score-matrix JSON file.

    ``tag`` defaults to whatever the file carries (run files name their
    retriever; score files fall back to the file stem); ``kind`` is
    inferred from the extension (.json means scores) unless given.
    """

    path: str
    tag: str = ""
    kind: str = ""

    def __post_init__(self) -> None:
        kind = self.kind or ("scores" if Path(self.path).suffix == ".json" else "run")
        if kind not in ("run", "scores"):
            raise ConfigError(f"source kind must be 'run' or 'scores', got {kind!r}")
        object.__setattr__(self, "kind", kind)

    def to_dict(self) -> dict:
        return {"path": self.path, "tag": self.tag, "kind": self.kind}

    @classmethod
    def from_value(cls, value) -> "SourceSpec":
        if isinstance(value, str):
            return cls(path=value)
        if isinstance(value, Mapping):
            unknown = set(value) - {"path", "tag", "kind"}
            if unknown:
                raise ConfigError(f"unknown source keys: {sorted(unknown)}")
            if "path" not in value:
                raise ConfigError("source needs a path")
            return cls(
                path=str(value["path"]),
                tag=str(value.get("tag", "")),
                kind=str(value.get("kind", "")),
            )
        raise ConfigError(f"source must be a path or an object, got {type(value).__name__}")


class RetrieverSource:
    """A loaded source, viewable as ranked lists or as a score matrix."""

    def __init__(self, tag: str, run: dict[QueryId, RankedList] | None, matrix: ScoreMatrix | None):
        if (run is None) == (matrix is None):
            raise ValueError("exactly one of run or matrix must be given")
        self.tag = tag
        self._run = run
        self._matrix = matrix

    @classmethod
    def load(cls, spec: SourceSpec) -> "RetrieverSource":
        if spec.kind == "scores":
            matrix = load_score_matrix(spec.path, tag=spec.tag or None)
            return cls(matrix.retriever_tag, None, matrix)
        run = load_run_file(spec.path)  # rejects empty files itself
        tag = spec.tag or next(iter(run.values())).retriever_tag
        if spec.tag:
            run = {
                q: dataclasses.replace(lst, retriever_tag=spec.tag)
                for q, lst in run.items()
            }
        return cls(tag, run, None)

    @property
    def queries(self) -> set[QueryId]:
        if self._run is not None:
            return set(self._run)
        return set(self._matrix.rows)

    def ranked(self, query: QueryId, depth: int) -> RankedList | None:
        """Top-``depth`` list for one query, or None if the query is absent."""
        if self._run is not None:
            lst = self._run.get(query)
            if lst is None:
                return None
            return dataclasses.replace(lst, entries=lst.entries[:depth])
        if query not in self._matrix.rows:
            return None
        return ranked_from_scores(self._matrix, query, depth)

    def matrix(self) -> ScoreMatrix:
        if self._matrix is None:
            self._matrix = score_matrix_from_runs(self._run, tag=self.tag)
        return self._matrix


def load_sources(specs: Sequence[SourceSpec]) -> list[RetrieverSource]:
    """Load all sources and reject duplicate tags."""
    sources = [RetrieverSource.load(spec) for spec in specs]
    tags = [s.tag for s in sources]
    if len(set(tags)) != len(tags):
        raise ConfigError(f"duplicate source tags: {tags}")
    return sources


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to run one retrieval experiment.

    ``to_dict`` deliberately omits the backend api_key so fingerprints
    and saved configs never carry credentials.
    """

    direction: str
    K: int
    sources: tuple[SourceSpec, ...]
    method: str = "vic"
    assembly: AssemblyConfig | None = None
    backend: BackendConfig | None = None
    backend_kind: str = ""
    grid: GridSpec = GridSpec()
    recall_cutoffs: tuple[int, ...] = (1, 5, 10)
    rrf_k: float = DEFAULT_RRF_K
    weights: tuple[tuple[str, float], ...] | None = None
    depth_pool: int = DEFAULT_DEPTH_POOL
    template: str = "v1"
    jobs: int = 4

    def __post_init__(self) -> None:
        if self.direction not in ("t2v", "v2t"):
            raise ConfigError(f"direction must be 't2v' or 'v2t', got {self.direction!r}")
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.sources:
            raise ConfigError("at least one source is required")
        if self.method == "none" and len(self.sources) != 1:
            raise ConfigError("method 'none' takes exactly one source")
        object.__setattr__(self, "sources", tuple(self.sources))
        if self.assembly is None:
            object.__setattr__(self, "assembly", AssemblyConfig(K=self.K))
        elif self.assembly.K != self.K:
            raise ConfigError(
                f"assembly.K ({self.assembly.K}) must equal K ({self.K})"
            )
        if self.method == "vic" and not self.backend_kind:
            raise ConfigError("method 'vic' needs backend_kind (mock, identity or http)")
        if self.backend_kind and self.backend_kind not in ("mock", "identity", "http"):
            raise ConfigError(f"unknown backend_kind {self.backend_kind!r}")
        cutoffs = tuple(self.recall_cutoffs)
        if not cutoffs or any(c < 1 for c in cutoffs) or list(cutoffs) != sorted(set(cutoffs)):
            raise ConfigError(
                f"recall_cutoffs must be distinct positive integers ascending, got {cutoffs}"
            )
        object.__setattr__(self, "recall_cutoffs", cutoffs)
        if self.weights is not None:
            object.__setattr__(
                self, "weights", tuple((str(t), float(w)) for t, w in self.weights)
            )
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")

    def to_dict(self) -> dict:
        backend = None
        if self.backend is not None:
            backend = {
                "endpoint_url": self.backend.endpoint_url,
                "model_id": self.backend.model_id,
                "timeout_s": self.backend.timeout_s,
                "max_retries": self.backend.max_retries,
                "temperature": self.backend.temperature,
            }
        return {
            "direction": self.direction,
            "K": self.K,
            "method": self.method,
            "sources": [s.to_dict() for s in self.sources],
            "assembly": {
                "K": self.assembly.K,
                "keep_duplicates": self.assembly.keep_duplicates,
                "priority_order": list(self.assembly.priority_order)
                if self.assembly.priority_order
                else None,
            },
            "backend": backend,
            "backend_kind": self.backend_kind,
            "grid": {"s": self.grid.s, "canvas_h": self.grid.canvas_h, "canvas_w": self.grid.canvas_w},
            "recall_cutoffs": list(self.recall_cutoffs),
            "rrf_k": self.rrf_k,
            "weights": dict(self.weights) if self.weights is not None else None,
            "depth_pool": self.depth_pool,
            "template": self.template,
            "jobs": self.jobs,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ExperimentConfig":
        known = {
            "direction", "K", "method", "sources", "assembly", "backend",
            "backend_kind", "grid", "recall_cutoffs", "rrf_k", "weights",
            "depth_pool", "template", "jobs",
        }
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("direction", "K", "sources"):
            if key not in raw:
                raise ConfigError(f"config needs {key!r}")
        kwargs: dict = {
            "direction": raw["direction"],
            "K": int(raw["K"]),
            "sources": tuple(SourceSpec.from_value(v) for v in raw["sources"]),
        }
        if "method" in raw:
            kwargs["method"] = raw["method"]
        asm = raw.get("assembly")
        if asm is not None:
            unknown = set(asm) - {"K", "keep_duplicates", "priority_order"}
            if unknown:
                raise ConfigError(f"unknown assembly keys: {sorted(unknown)}")
            prio = asm.get("priority_order")
            kwargs["assembly"] = AssemblyConfig(
                K=int(asm.get("K", raw["K"])),
                keep_duplicates=bool(asm.get("keep_duplicates", True)),
                priority_order=tuple(prio) if prio else None,
            )
        back = raw.get("backend")
        if back is not None:
            unknown = set(back) - {
                "endpoint_url", "model_id", "timeout_s", "max_retries", "temperature", "api_key",
            }
            if unknown:
                raise ConfigError(f"unknown backend keys: {sorted(unknown)}")
            kwargs["backend"] = BackendConfig(
                endpoint_url=str(back.get("endpoint_url", "")),
                model_id=str(back.get("model_id", "")),
                timeout_s=float(back.get("timeout_s", 120.0)),
                max_retries=int(back.get("max_retries", 2)),
                temperature=float(back.get("temperature", 0.0)),
                api_key=back.get("api_key"),
            )
        if "backend_kind" in raw:
            kwargs["backend_kind"] = raw["backend_kind"]
        grid = raw.get("grid")
        if grid is not None:
            unknown = set(grid) - {"s", "canvas_h", "canvas_w"}
            if unknown:
                raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
            kwargs["grid"] = GridSpec(
                s=int(grid.get("s", 3)),
                canvas_h=int(grid.get("canvas_h", 1024)),
                canvas_w=int(grid.get("canvas_w", 1024)),
            )
        if raw.get("recall_cutoffs") is not None:
            kwargs["recall_cutoffs"] = tuple(int(c) for c in raw["recall_cutoffs"])
        if "rrf_k" in raw:
            kwargs["rrf_k"] = float(raw["rrf_k"])
        if raw.get("weights") is not None:
            kwargs["weights"] = tuple(sorted(raw["weights"].items()))
        if "depth_pool" in raw:
            kwargs["depth_pool"] = int(raw["depth_pool"])
        if "template" in raw:
            kwargs["template"] = str(raw["template"])
        if "jobs" in raw:
            kwargs["jobs"] = int(raw["jobs"])
        try:
            return cls(**kwargs)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None

    def fingerprint(self) -> str:
        return fingerprint_of(self.to_dict())


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


class QueryOutcome(NamedTuple):
    hit_rank: int | None
    latency_ms: float
    status: str


def dedup_ranked(slots: Iterable[Slot]) -> list[ItemId]:
    """Collapse a ranked slot sequence to the highest-ranked instance of
    each item, order preserved."""
    seen: set[ItemId] = set()
    out: list[ItemId] = []
    for slot in slots:
        if slot.item not in seen:
            seen.add(slot.item)
            out.append(slot.item)
    return out


def first_hit_rank(ranked: Sequence[ItemId], gold: Iterable[ItemId]) -> int | None:
    """1-based position of the first gold item, or None if absent."""
    relevant = set(gold)
    for pos, item in enumerate(ranked, 1):
        if item in relevant:
            return pos
    return None


def recall_at(
    ranked: Sequence[ItemId], gold: Iterable[ItemId], cutoffs: Sequence[int]
) -> dict[int, int]:
    """Per-query hit indicator at each cutoff: 1 if any of the first c
    items is gold, else 0."""
    relevant = set(gold)
    if not relevant:
        raise ValueError("gold set must be non-empty")
    hit = first_hit_rank(ranked, relevant)
    return {c: int(hit is not None and hit <= c) for c in cutoffs}


def _percentile(values: Sequence[float], q: float) -> float:
    if not values:
        return 0.0
    data = sorted(values)
    rank = max(1, math.ceil(q * len(data)))
    return data[rank - 1]


@dataclass(frozen=True)
class EvalReport:
    """Per-query outcomes plus aggregate recall and latency statistics."""

    label: str
    config_fingerprint: str
    cutoffs: tuple[int, ...]
    per_query: dict[QueryId, QueryOutcome]
    aggregate: dict[int, float]
    mean_latency_ms: float
    latency_p50_ms: float
    latency_p95_ms: float
    created_at: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "cutoffs", tuple(self.cutoffs))
        if list(self.cutoffs) != sorted(set(self.cutoffs)) or not self.cutoffs:
            raise ValueError(f"cutoffs must be distinct and ascending, got {self.cutoffs}")
        if set(self.aggregate) != set(self.cutoffs):
            raise ValueError("aggregate keys must match cutoffs")
        last = 0.0
        for c in self.cutoffs:
            value = self.aggregate[c]
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"recall@{c} out of [0,1]: {value}")
            if value < last:
                raise ValueError("recall must be non-decreasing in the cutoff")
            last = value

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "config_fingerprint": self.config_fingerprint,
            "created_at": self.created_at,
            "cutoffs": list(self.cutoffs),
            "aggregate": {str(c): self.aggregate[c] for c in self.cutoffs},
            "mean_latency_ms": self.mean_latency_ms,
            "latency_p50_ms": self.latency_p50_ms,
            "latency_p95_ms": self.latency_p95_ms,
            "per_query": {
                q: {
                    "hit_rank": o.hit_rank,
                    "latency_ms": o.latency_ms,
                    "status": o.status,
                }
                for q, o in sorted(self.per_query.items())
            },
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "EvalReport":
        per_query = {
            q: QueryOutcome(
                hit_rank=o["hit_rank"],
                latency_ms=float(o["latency_ms"]),
                status=str(o["status"]),
            )
            for q, o in raw["per_query"].items()
        }
        return cls(
            label=str(raw["label"]),
            config_fingerprint=str(raw["config_fingerprint"]),
            cutoffs=tuple(int(c) for c in raw["cutoffs"]),
            per_query=per_query,
            aggregate={int(c): float(v) for c, v in raw["aggregate"].items()},
            mean_latency_ms=float(raw["mean_latency_ms"]),
            latency_p50_ms=float(raw["latency_p50_ms"]),
            latency_p95_ms=float(raw["latency_p95_ms"]),
            created_at=str(raw.get("created_at", "")),
        )


def build_report(
    label: str,
    fingerprint: str,
    cutoffs: Sequence[int],
    per_query: Mapping[QueryId, QueryOutcome],
    latencies_ms: Sequence[float],
    timestamps: bool = True,
) -> EvalReport:
    """Aggregate per-query outcomes into a report."""
    n = len(per_query)
    aggregate = {
        c: (
            sum(1 for o in per_query.values() if o.hit_rank is not None and o.hit_rank <= c) / n
            if n
            else 0.0
        )
        for c in cutoffs
    }
    mean = sum(latencies_ms) / len(latencies_ms) if latencies_ms else 0.0
    created = (
        _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        if timestamps
        else ""
    )
    return EvalReport(
        label=label,
        config_fingerprint=fingerprint,
        cutoffs=tuple(cutoffs),
        per_query=dict(per_query),
        aggregate=aggregate,
        mean_latency_ms=mean,
        latency_p50_ms=_percentile(latencies_ms, 0.50),
        latency_p95_ms=_percentile(latencies_ms, 0.95),
        created_at=created,
    )


def strip_timing(report: EvalReport) -> EvalReport:
    """Zero every wall-clock field so two runs compare byte for byte."""
    per_query = {
        q: QueryOutcome(o.hit_rank, 0.0, o.status) for q, o in report.per_query.items()
    }
    return dataclasses.replace(
        report,
        per_query=per_query,
        mean_latency_ms=0.0,
        latency_p50_ms=0.0,
        latency_p95_ms=0.0,
        created_at="",
    )


# ---------------------------------------------------------------------------
# Experiment driver
# ---------------------------------------------------------------------------


def _rank_items(cfg: ExperimentConfig, sources: Sequence[RetrieverSource], query: QueryId) -> list[ItemId] | None:
    """Ranked item ids for one query under a non-vic method, or None when
    the query is absent from every source."""
    if cfg.method == "none":
        lst = sources[0].ranked(query, cfg.K)
        return None if lst is None else lst.items()
    if cfg.method == "rrf":
        lists = [l for l in (s.ranked(query, cfg.depth_pool) for s in sources) if l]
        if not lists:
            return None
        return rrf(lists, RrfConfig(k=cfg.rrf_k), depth=cfg.K).items()
    matrices = [s.matrix() for s in sources if query in s.queries]
    if not matrices:
        return None
    weights = (
        FusionWeights(dict(cfg.weights))
        if cfg.weights is not None
        else FusionWeights.uniform([m.retriever_tag for m in matrices])
    )
    if cfg.method == "combsum":
        return comb_sum(matrices, weights, query, depth=cfg.K).items()
    return comb_mnz(matrices, weights, query, depth=cfg.K, depth_pool=cfg.depth_pool).items()


def assemble_for_query(
    cfg: ExperimentConfig, sources: Sequence[RetrieverSource], query: QueryId
):
    """Build the candidate sequence for one query from the sources that
    know it; returns None when no source does."""
    present = [s for s in sources if query in s.queries]
    if not present:
        return None
    k_max = per_list_depth(cfg.K, len(present))
    lists = [s.ranked(query, k_max) for s in present]
    acfg = cfg.assembly
    if acfg.priority_order is not None:
        tags = {s.tag for s in present}
        kept = tuple(t for t in acfg.priority_order if t in tags)
        acfg = dataclasses.replace(acfg, priority_order=kept or None)
    return round_robin(lists, acfg)


def run_experiment(
    cfg: ExperimentConfig,
    manifest: CorpusManifest,
    grids_dir: str | os.PathLike | None = None,
    backend: Backend | None = None,
    label: str | None = None,
    timestamps: bool = True,
) -> EvalReport:
    """Run one experiment over every query in the manifest's gold map."""
    sources = load_sources(cfg.sources)
    if cfg.weights is not None and cfg.method in ("combsum", "combmnz"):
        missing = [s.tag for s in sources if s.tag not in dict(cfg.weights)]
        if missing:
            raise ConfigError(f"weights missing for sources: {missing}")
    queries = sorted(manifest.gold)
    per_query: dict[QueryId, QueryOutcome] = {}
    latencies: list[float] = []

    if cfg.method != "vic":
        for query in queries:
            try:
                ranked = _rank_items(cfg, sources, query)
            except VicError as exc:
                log.warning("query %s failed: %s", query, exc)
                per_query[query] = QueryOutcome(None, 0.0, STATUS_ERROR)
                continue
            if ranked is None:
                log.warning("query %s missing from all sources", query)
                per_query[query] = QueryOutcome(None, 0.0, STATUS_MISSING)
                continue
            hit = first_hit_rank(ranked, manifest.gold[query])
            per_query[query] = QueryOutcome(hit, 0.0, STATUS_OK)
    else:
        if backend is None:
            relevance = gold_relevance(manifest) if cfg.backend_kind == "mock" else None
            backend = make_backend(cfg.backend_kind, relevance)
        grids = GridStore(manifest, cfg.grid, grids_dir)
        bundles = {}
        sequences = {}
        for query in queries:
            try:
                seq = assemble_for_query(cfg, sources, query)
            except VicError as exc:
                log.warning("query %s failed during assembly: %s", query, exc)
                per_query[query] = QueryOutcome(None, 0.0, STATUS_ERROR)
                continue
            if seq is None:
                log.warning("query %s missing from all sources", query)
                per_query[query] = QueryOutcome(None, 0.0, STATUS_MISSING)
                continue
            try:
                bundles[query] = build_prompt(
                    query, seq, manifest, grids, cfg.direction, template=cfg.template
                )
            except (VicError, KeyError, OSError) as exc:
                log.warning("query %s failed during prompt build: %s", query, exc)
                per_query[query] = QueryOutcome(None, 0.0, STATUS_ERROR)
                continue
            sequences[query] = seq
        results = rerank_many(bundles, backend, cfg.backend or BackendConfig(), jobs=cfg.jobs)
        for query, result in results.items():
            ranked = dedup_ranked(apply(sequences[query], result.permutation))
            hit = first_hit_rank(ranked, manifest.gold[query])
            latency_ms = result.latency_s * 1000.0
            latencies.append(latency_ms)
            per_query[query] = QueryOutcome(hit, latency_ms, result.permutation.status)

    return build_report(
        label=label if label is not None else cfg.method,
        fingerprint=cfg.fingerprint(),
        cutoffs=cfg.recall_cutoffs,
        per_query=per_query,
        latencies_ms=latencies,
        timestamps=timestamps,
    )


def report_from_run(
    run: Mapping[QueryId, RankedList],
    manifest: CorpusManifest,
    cutoffs: Sequence[int],
    label: str = "run",
    fingerprint: str = "",
    timestamps: bool = True,
) -> EvalReport:
    """Score an already-ranked run file against the manifest's gold map."""
    per_query: dict[QueryId, QueryOutcome] = {}
    for query in sorted(manifest.gold):
        lst = run.get(query)
        if lst is None:
            per_query[query] = QueryOutcome(None, 0.0, STATUS_MISSING)
            continue
        hit = first_hit_rank(lst.items(), manifest.gold[query])
        per_query[query] = QueryOutcome(hit, 0.0, STATUS_OK)
    return build_report(label, fingerprint, cutoffs, per_query, [], timestamps=timestamps)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def emit_report(report: EvalReport, format: str = "table") -> str:
    """Render a report as an aggregate table, loss-free JSON, or a CSV of
    per-query rows (columns: query_id, hit_rank, status, latency_ms)."""
    if format == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if format == "csv":
        lines = ["query_id,hit_rank,status,latency_ms"]
        for query, o in sorted(report.per_query.items()):
            hit = "" if o.hit_rank is None else str(o.hit_rank)
            lines.append(f"{query},{hit},{o.status},{o.latency_ms:.3f}")
        return "\n".join(lines) + "\n"
    if format == "table":
        return render_table([report])
    raise ValueError(f"unknown report format {format!r}")


def render_table(reports: Sequence[EvalReport]) -> str:
    """Aggregate table, one row per report: recall per cutoff + latency."""
    if not reports:
        return ""
    cutoffs = reports[0].cutoffs
    for r in reports[1:]:
        if r.cutoffs != cutoffs:
            raise ValueError("reports disagree on cutoffs")
    headers = ["label"] + [f"R@{c}" for c in cutoffs] + [
        "queries", "mean_ms", "p50_ms", "p95_ms",
    ]
    rows = []
    for r in reports:
        rows.append(
            [r.label]
            + [f"{r.aggregate[c]:.4f}" for c in cutoffs]
            + [
                str(len(r.per_query)),
                f"{r.mean_latency_ms:.1f}",
                f"{r.latency_p50_ms:.1f}",
                f"{r.latency_p95_ms:.1f}",
            ]
        )
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(headers)]
    def fmt(cells: Sequence[str]) -> str:
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines.extend(fmt(row) for row in rows)
    return "\n".join(lines) + "\n"


def combined_csv(reports: Sequence[EvalReport]) -> str:
    """One aggregate CSV row per report (sweep summary)."""
    if not reports:
        return ""
    cutoffs = reports[0].cutoffs
    for r in reports[1:]:
        if r.cutoffs != cutoffs:
            raise ValueError("reports disagree on cutoffs")
    header = ["label"] + [f"recall_at_{c}" for c in cutoffs] + [
        "queries", "mean_latency_ms", "p50_latency_ms", "p95_latency_ms", "fingerprint",
    ]
    lines = [",".join(header)]
    for r in reports:
        row = [r.label] + [f"{r.aggregate[c]:.6f}" for c in cutoffs] + [
            str(len(r.per_query)),
            f"{r.mean_latency_ms:.3f}",
            f"{r.latency_p50_ms:.3f}",
            f"{r.latency_p95_ms:.3f}",
            r.config_fingerprint,
        ]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
