"""Domain types and file ingestion shared by every pipeline stage.

Identifiers are opaque non-empty strings without whitespace.  Three file
formats live here:

* run files: whitespace-separated 6-column TREC lines
  ``query_id Q0 item_id rank score tag`` (rank 1-based, UTF-8);
* score matrices: a JSON object ``{query_id: {item_id: score}}``;
* corpus manifests: a JSON document with ``videos``, ``captions`` and
  ``gold`` sections.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, NamedTuple

ItemId = str
QueryId = str

PERM_CLEAN = "clean"
PERM_REPAIRED = "repaired"
PERM_IDENTITY_FALLBACK = "identity_fallback"
_PERM_STATUSES = (PERM_CLEAN, PERM_REPAIRED, PERM_IDENTITY_FALLBACK)


class VicError(Exception):
    """Base class for errors raised by this package."""


class FormatError(VicError):
    """A file or payload does not match its expected format."""


class ConfigError(VicError):
    """An invalid configuration value or combination."""


def check_id(value: str, what: str = "identifier") -> str:
    """Validate an ItemId/QueryId: non-empty, no whitespace."""
    if not isinstance(value, str) or not value:
        raise ValueError(f"{what} must be a non-empty string, got {value!r}")
    if any(c.isspace() for c in value):
        raise ValueError(f"{what} must not contain whitespace: {value!r}")
    return value


class RunEntry(NamedTuple):
    item: ItemId
    score: float | None


@dataclass(frozen=True)
class RankedList:
    """One retriever's ordered candidates for one query.

    Entries are rank-ordered, items are unique, and scores are either
    present on every entry or on none; present scores must be
    non-increasing with position.
    """

    retriever_tag: str
    query: QueryId
    entries: tuple[RunEntry, ...]

    def __post_init__(self) -> None:
        check_id(self.retriever_tag, "retriever_tag")
        check_id(self.query, "query id")
        object.__setattr__(
            self, "entries", tuple(RunEntry(e[0], e[1]) for e in self.entries)
        )
        seen: set[ItemId] = set()
        for entry in self.entries:
            check_id(entry.item, "item id")
            if entry.item in seen:
                raise ValueError(
                    f"duplicate item {entry.item!r} in list {self.retriever_tag!r}"
                    f" for query {self.query!r}"
                )
            seen.add(entry.item)
        scored = [e.score is not None for e in self.entries]
        if any(scored) and not all(scored):
            raise ValueError("either all entries carry a score or none do")
        if all(scored):
            for a, b in zip(self.entries, self.entries[1:]):
                if a.score < b.score:  # type: ignore[operator]
                    raise ValueError(
                        f"scores must be non-increasing with rank, got "
                        f"{a.score} before {b.score}"
                    )

    def items(self) -> list[ItemId]:
        return [e.item for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class ScoreMatrix:
    """Per-query score rows for one retriever; every score finite."""

    retriever_tag: str
    rows: Mapping[QueryId, Mapping[ItemId, float]]

    def __post_init__(self) -> None:
        check_id(self.retriever_tag, "retriever_tag")
        for query, row in self.rows.items():
            check_id(query, "query id")
            if not row:
                raise ValueError(f"empty score row for query {query!r}")
            for item, score in row.items():
                check_id(item, "item id")
                if not math.isfinite(score):
                    raise ValueError(
                        f"non-finite score {score!r} for ({query!r}, {item!r})"
                    )

    def row(self, query: QueryId) -> Mapping[ItemId, float]:
        try:
            return self.rows[query]
        except KeyError:
            raise KeyError(f"unknown query {query!r} in matrix {self.retriever_tag!r}")


class Slot(NamedTuple):
    item: ItemId
    source_tag: str
    source_rank: int


@dataclass(frozen=True)
class CandidateSequence:
    """The interleaved candidate sequence fed to the reranker.

    Each slot carries provenance (source list tag and 1-based rank in
    that list); duplicates across sources are preserved by design.
    """

    query: QueryId
    items: tuple[Slot, ...]

    def __post_init__(self) -> None:
        check_id(self.query, "query id")
        object.__setattr__(self, "items", tuple(Slot(*s) for s in self.items))
        last_rank: dict[str, int] = {}
        for slot in self.items:
            check_id(slot.item, "item id")
            check_id(slot.source_tag, "source_tag")
            if slot.source_rank < 1:
                raise ValueError(f"source_rank must be >= 1, got {slot.source_rank}")
            prev = last_rank.get(slot.source_tag)
            if prev is not None and slot.source_rank <= prev:
                raise ValueError(
                    f"source_rank not strictly increasing for tag "
                    f"{slot.source_tag!r}: {prev} then {slot.source_rank}"
                )
            last_rank[slot.source_tag] = slot.source_rank

    def item_ids(self) -> list[ItemId]:
        return [s.item for s in self.items]

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class Permutation:
    """A bijection on {1..K}; construction rejects anything else."""

    order: tuple[int, ...]
    status: str = PERM_CLEAN

    def __post_init__(self) -> None:
        object.__setattr__(self, "order", tuple(int(i) for i in self.order))
        if sorted(self.order) != list(range(1, len(self.order) + 1)):
            raise ValueError(
                f"order must be a bijection on 1..{len(self.order)}, got {self.order}"
            )
        if self.status not in _PERM_STATUSES:
            raise ValueError(f"unknown permutation status {self.status!r}")

    @property
    def size(self) -> int:
        return len(self.order)

    @classmethod
    def identity(cls, size: int, status: str = PERM_CLEAN) -> "Permutation":
        return cls(tuple(range(1, size + 1)), status)


class VideoEntry(NamedTuple):
    frames_path: Path
    subtitle: str | None


@dataclass(frozen=True)
class CorpusManifest:
    """Videos (frame dirs plus optional subtitle), captions and gold sets."""

    videos: Mapping[ItemId, VideoEntry]
    captions: Mapping[ItemId, str]
    gold: Mapping[QueryId, frozenset[ItemId]]

    def __post_init__(self) -> None:
        overlap = set(self.videos) & set(self.captions)
        if overlap:
            raise ValueError(f"ids used for both videos and captions: {sorted(overlap)!r}")
        for ident in list(self.videos) + list(self.captions):
            check_id(ident, "item id")
        for query, relevant in self.gold.items():
            check_id(query, "query id")
            if not relevant:
                raise ValueError(f"empty gold set for query {query!r}")

    def subtitle(self, item: ItemId) -> str | None:
        entry = self.videos.get(item)
        return entry.subtitle if entry else None


# ---------------------------------------------------------------------------
# Run files
# ---------------------------------------------------------------------------


def load_run_file(path: str | os.PathLike) -> dict[QueryId, RankedList]:
    """Parse a TREC run file into per-query ranked lists.

    Lists are ordered by the rank column; the tag column must be uniform
    across the file.  Raises :class:`FormatError` on malformed lines
    (with the line number), duplicate (query, item) pairs, or mixed tags.
    """
    path = Path(path)
    tag: str | None = None
    rows: dict[QueryId, list[tuple[int, ItemId, float]]] = {}
    seen: set[tuple[QueryId, ItemId]] = set()
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise FormatError(
                    f"{path}:{lineno}: expected 6 columns, got {len(parts)}"
                )
            query, _q0, item, rank_s, score_s, line_tag = parts
            try:
                rank = int(rank_s)
                score = float(score_s)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad rank or score") from None
            if rank < 1:
                raise FormatError(f"{path}:{lineno}: rank must be >= 1, got {rank}")
            if not math.isfinite(score):
                raise FormatError(f"{path}:{lineno}: non-finite score {score_s!r}")
            if tag is None:
                tag = line_tag
            elif line_tag != tag:
                raise FormatError(
                    f"{path}:{lineno}: non-uniform tag {line_tag!r} (file tag {tag!r})"
                )
            if (query, item) in seen:
                raise FormatError(
                    f"{path}:{lineno}: duplicate item {item!r} in list for {query!r}"
                )
            seen.add((query, item))
            rows.setdefault(query, []).append((rank, item, score))
    if tag is None:
        raise FormatError(f"{path}: empty run file")
    out: dict[QueryId, RankedList] = {}
    for query, entries in rows.items():
        entries.sort(key=lambda t: t[0])
        try:
            out[query] = RankedList(
                retriever_tag=tag,
                query=query,
                entries=tuple(RunEntry(item, score) for _, item, score in entries),
            )
        except ValueError as exc:
            raise FormatError(f"{path}: query {query!r}: {exc}") from None
    return out


def write_run_file(run: Mapping[QueryId, RankedList], path: str | os.PathLike) -> None:
    """Write per-query ranked lists in the 6-column run format.

    Queries are emitted in ascending order, entries by rank.  Scoreless
    lists get synthetic descending scores 1/rank so the output stays a
    valid run file.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for query in sorted(run):
            ranked = run[query]
            for rank, entry in enumerate(ranked.entries, 1):
                score = entry.score if entry.score is not None else 1.0 / rank
                handle.write(
                    f"{query} Q0 {entry.item} {rank} {score!r} {ranked.retriever_tag}\n"
                )


# ---------------------------------------------------------------------------
# Score matrices
# ---------------------------------------------------------------------------


def load_score_matrix(path: str | os.PathLike, tag: str | None = None) -> ScoreMatrix:
    """Load a JSON score matrix; the tag defaults to the file stem.

    Raises :class:`FormatError` on empty rows or non-finite scores
    (including string values such as ``"NaN"``).
    """
    path = Path(path)
    with path.open(encoding="utf-8") as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise FormatError(f"{path}: expected a JSON object at top level")
    rows: dict[QueryId, dict[ItemId, float]] = {}
    for query, row in raw.items():
        if not isinstance(row, dict) or not row:
            raise FormatError(f"{path}: empty row for query {query!r}")
        parsed: dict[ItemId, float] = {}
        for item, value in row.items():
            try:
                score = float(value)
            except (TypeError, ValueError):
                raise FormatError(
                    f"{path}: non-numeric score {value!r} for ({query!r}, {item!r})"
                ) from None
            if not math.isfinite(score):
                raise FormatError(
                    f"{path}: non-finite score for ({query!r}, {item!r})"
                )
            parsed[item] = score
        rows[query] = parsed
    try:
        return ScoreMatrix(retriever_tag=tag or path.stem, rows=rows)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def ranked_from_scores(
    matrix: ScoreMatrix, query: QueryId, depth: int
) -> RankedList:
    """Top-``depth`` items of one matrix row, score-descending.

    Ties break by ascending item id; the list is shorter than ``depth``
    when the row holds fewer items.
    """
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    row = matrix.row(query)
    ordered = sorted(row.items(), key=lambda kv: (-kv[1], kv[0]))[:depth]
    return RankedList(
        retriever_tag=matrix.retriever_tag,
        query=query,
        entries=tuple(RunEntry(item, score) for item, score in ordered),
    )


def score_matrix_from_runs(
    run: Mapping[QueryId, RankedList], tag: str | None = None
) -> ScoreMatrix:
    """View a loaded run file as a sparse score matrix."""
    rows: dict[QueryId, dict[ItemId, float]] = {}
    file_tag = tag
    for query, ranked in run.items():
        if file_tag is None:
            file_tag = ranked.retriever_tag
        row = {}
        for rank, entry in enumerate(ranked.entries, 1):
            row[entry.item] = entry.score if entry.score is not None else 1.0 / rank
        rows[query] = row
    if file_tag is None:
        raise ValueError("cannot derive a tag from an empty run")
    return ScoreMatrix(retriever_tag=file_tag, rows=rows)


# ---------------------------------------------------------------------------
# Corpus manifest
# ---------------------------------------------------------------------------


def load_manifest(path: str | os.PathLike) -> CorpusManifest:
    """Load a corpus manifest; frame paths are resolved relative to the
    manifest file and must exist, otherwise the load fails."""
    path = Path(path)
    with path.open(encoding="utf-8") as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise FormatError(f"{path}: expected a JSON object at top level")
    base = path.parent
    videos: dict[ItemId, VideoEntry] = {}
    for item, entry in (raw.get("videos") or {}).items():
        if not isinstance(entry, dict) or "frames_path" not in entry:
            raise FormatError(f"{path}: video {item!r} needs a frames_path")
        frames_path = Path(entry["frames_path"])
        if not frames_path.is_absolute():
            frames_path = base / frames_path
        if not frames_path.exists():
            raise FormatError(
                f"{path}: frames path does not exist for video {item!r}: {frames_path}"
            )
        subtitle = entry.get("subtitle")
        if subtitle is not None and not isinstance(subtitle, str):
            raise FormatError(f"{path}: subtitle for {item!r} must be a string")
        videos[item] = VideoEntry(frames_path=frames_path, subtitle=subtitle)
    captions: dict[ItemId, str] = {}
    for item, text in (raw.get("captions") or {}).items():
        if not isinstance(text, str):
            raise FormatError(f"{path}: caption for {item!r} must be a string")
        captions[item] = text
    gold: dict[QueryId, frozenset[ItemId]] = {}
    for query, relevant in (raw.get("gold") or {}).items():
        if isinstance(relevant, str):
            relevant = [relevant]
        if not isinstance(relevant, list) or not relevant:
            raise FormatError(f"{path}: gold set for {query!r} must be non-empty")
        gold[query] = frozenset(relevant)
    try:
        return CorpusManifest(videos=videos, captions=captions, gold=gold)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
