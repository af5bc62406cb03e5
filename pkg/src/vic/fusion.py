"""Classical fusion baselines over ranked lists and score matrices.

Three fused orderings are provided:

* ``comb_sum``: weighted sum of per-query min-max-normalized scores;
* ``comb_mnz``: the CombSUM score multiplied by the number of sources
  that retrieved the item (membership judged on each source's
  top-``depth_pool`` list, so dense matrices do not make the multiplier
  trivially constant);
* ``rrf``: reciprocal rank fusion, sum over lists of 1/(k + rank).

Items missing from a source contribute 0, never a penalty.  All ties
break by ascending item id so output is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .core import ItemId, QueryId, RankedList, RunEntry, ScoreMatrix

DEFAULT_RRF_K = 60.0
DEFAULT_DEPTH_POOL = 100


@dataclass(frozen=True)
class FusionWeights:
    """Non-negative per-source weights; at least one must be positive."""

    weights: Mapping[str, float]

    def __post_init__(self) -> None:
        if not self.weights:
            raise ValueError("weights must not be empty")
        for tag, w in self.weights.items():
            if w < 0:
                raise ValueError(f"weight for {tag!r} must be >= 0, got {w}")
        if not any(w > 0 for w in self.weights.values()):
            raise ValueError("at least one weight must be > 0")

    @classmethod
    def uniform(cls, tags: Sequence[str]) -> "FusionWeights":
        return cls({tag: 1.0 for tag in tags})

    def get(self, tag: str) -> float:
        try:
            return self.weights[tag]
        except KeyError:
            raise KeyError(f"missing weight for source {tag!r}")


@dataclass(frozen=True)
class RrfConfig:
    """Reciprocal rank fusion smoothing constant (commonly 60)."""

    k: float = DEFAULT_RRF_K

    def __post_init__(self) -> None:
        if not self.k > 0:
            raise ValueError(f"rrf k must be > 0, got {self.k}")


def minmax_normalize(row: Mapping[ItemId, float]) -> dict[ItemId, float]:
    """Map scores to (s - min) / (max - min); a constant row maps to all
    zeros rather than dividing by zero."""
    if not row:
        raise ValueError("cannot normalize an empty row")
    lo = min(row.values())
    hi = max(row.values())
    if hi == lo:
        return {item: 0.0 for item in row}
    span = hi - lo
    return {item: (score - lo) / span for item, score in row.items()}


def _top_depth(fused: Mapping[ItemId, float], depth: int) -> list[tuple[ItemId, float]]:
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    return sorted(fused.items(), key=lambda kv: (-kv[1], kv[0]))[:depth]


def _check_sources(
    matrices: Sequence[ScoreMatrix], weights: FusionWeights, query: QueryId
) -> None:
    if not matrices:
        raise ValueError("need at least one score matrix")
    for m in matrices:
        weights.get(m.retriever_tag)
        m.row(query)  # raises KeyError on unknown query


def comb_sum_scores(
    matrices: Sequence[ScoreMatrix], weights: FusionWeights, query: QueryId
) -> dict[ItemId, float]:
    """Fused CombSUM score per item over the union of all rows."""
    _check_sources(matrices, weights, query)
    fused: dict[ItemId, float] = {}
    for m in matrices:
        w = weights.get(m.retriever_tag)
        for item, score in minmax_normalize(m.row(query)).items():
            fused[item] = fused.get(item, 0.0) + w * score
    return fused


def comb_sum(
    matrices: Sequence[ScoreMatrix],
    weights: FusionWeights,
    query: QueryId,
    depth: int,
) -> RankedList:
    """Soft voting: weighted sum of min-max-normalized rows, top-``depth``."""
    top = _top_depth(comb_sum_scores(matrices, weights, query), depth)
    return RankedList(
        retriever_tag="combsum",
        query=query,
        entries=tuple(RunEntry(item, score) for item, score in top),
    )


def comb_mnz(
    matrices: Sequence[ScoreMatrix],
    weights: FusionWeights,
    query: QueryId,
    depth: int,
    depth_pool: int = DEFAULT_DEPTH_POOL,
) -> RankedList:
    """CombMNZ: CombSUM score times the number of sources retrieving the
    item, where "retrieving" means appearing in that source's
    top-``depth_pool`` list for the query."""
    if depth_pool < 1:
        raise ValueError(f"depth_pool must be >= 1, got {depth_pool}")
    base = comb_sum_scores(matrices, weights, query)
    hits: dict[ItemId, int] = {item: 0 for item in base}
    for m in matrices:
        row = m.row(query)
        pool = sorted(row.items(), key=lambda kv: (-kv[1], kv[0]))[:depth_pool]
        for item, _ in pool:
            hits[item] += 1
    fused = {item: score * hits[item] for item, score in base.items()}
    top = _top_depth(fused, depth)
    return RankedList(
        retriever_tag="combmnz",
        query=query,
        entries=tuple(RunEntry(item, score) for item, score in top),
    )


def rrf(
    lists: Sequence[RankedList],
    cfg: RrfConfig,
    depth: int,
) -> RankedList:
    """Reciprocal rank fusion over 1-based list positions."""
    if not lists:
        raise ValueError("need at least one ranked list")
    query = lists[0].query
    for lst in lists[1:]:
        if lst.query != query:
            raise ValueError(f"mixed query ids: {query!r} and {lst.query!r}")
    fused: dict[ItemId, float] = {}
    for lst in lists:
        for rank, entry in enumerate(lst.entries, 1):
            fused[entry.item] = fused.get(entry.item, 0.0) + 1.0 / (cfg.k + rank)
    top = _top_depth(fused, depth)
    return RankedList(
        retriever_tag="rrf",
        query=query,
        entries=tuple(RunEntry(item, score) for item, score in top),
    )
