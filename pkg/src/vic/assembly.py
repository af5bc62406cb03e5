"""Candidate sequence assembly: truncation, round-robin interleaving,
optional dedup and priority reordering.

Assembly is rank-only by design; entry scores are ignored.  All
functions are pure and safe to call concurrently per query.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .core import CandidateSequence, ItemId, RankedList, Slot


@dataclass(frozen=True)
class AssemblyConfig:
    """Controls for building the candidate sequence.

    ``priority_order``, when set, changes the order lists are visited
    within each interleaving round (it must be a permutation of the
    input tags); ``keep_duplicates=False`` drops later occurrences of
    an item and backfills from the remaining interleaved supply.
    """

    K: int
    keep_duplicates: bool = True
    priority_order: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.priority_order is not None:
            object.__setattr__(self, "priority_order", tuple(self.priority_order))


def per_list_depth(K: int, M: int) -> int:
    """Per-list truncation depth: ceil(K / M)."""
    if K < 1 or M < 1:
        raise ValueError(f"K and M must be >= 1, got K={K}, M={M}")
    return math.ceil(K / M)


def _interleave(lists: Sequence[RankedList], k_max: int) -> list[Slot]:
    """Materialize the full round-robin interleaving of the truncated
    lists, visiting them in the given order and skipping exhausted ones."""
    truncated = [lst.entries[:k_max] for lst in lists]
    out: list[Slot] = []
    for round_idx in range(k_max):
        for lst, entries in zip(lists, truncated):
            if round_idx < len(entries):
                out.append(Slot(entries[round_idx].item, lst.retriever_tag, round_idx + 1))
    return out


def round_robin(lists: Sequence[RankedList], cfg: AssemblyConfig) -> CandidateSequence:
    """Build the candidate sequence from M ranked lists.

    Each list is truncated to depth ceil(K/M), the truncations are
    round-robin interleaved with duplicates preserved, and the result is
    cut to length K (shorter when supply runs out).  With
    ``keep_duplicates=False`` the first occurrence of each item wins and
    the sequence is refilled from the remaining interleaved items.
    """
    if not lists:
        raise ValueError("round_robin needs at least one ranked list")
    query = lists[0].query
    for lst in lists[1:]:
        if lst.query != query:
            raise ValueError(
                f"mixed query ids: {query!r} and {lst.query!r}"
            )
    tags = [lst.retriever_tag for lst in lists]
    if len(set(tags)) != len(tags):
        raise ValueError(f"duplicate retriever tags: {tags!r}")

    ordered = list(lists)
    if cfg.priority_order is not None:
        if sorted(cfg.priority_order) != sorted(tags):
            raise ValueError(
                f"priority_order {cfg.priority_order!r} is not a permutation "
                f"of the input tags {sorted(tags)!r}"
            )
        by_tag = {lst.retriever_tag: lst for lst in lists}
        ordered = [by_tag[tag] for tag in cfg.priority_order]

    k_max = per_list_depth(cfg.K, len(ordered))
    slots = _interleave(ordered, k_max)
    if not cfg.keep_duplicates:
        seen: set[ItemId] = set()
        unique: list[Slot] = []
        for slot in slots:
            if slot.item not in seen:
                seen.add(slot.item)
                unique.append(slot)
        slots = unique
    return CandidateSequence(query=query, items=tuple(slots[: cfg.K]))


def multiplicity(seq: CandidateSequence, item: ItemId) -> int:
    """Number of slots in the sequence holding ``item``."""
    return sum(1 for slot in seq.items if slot.item == item)
