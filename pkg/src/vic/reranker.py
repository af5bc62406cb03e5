"""List-wise reranking through a pluggable chat-completion backend.

The query and the candidate sequence are serialized into one multimodal
prompt (text query over grid candidates, or grid query over caption
candidates), sent to a backend in a single list-wise request, and the
reply is parsed into a permutation of the candidate labels.  Parsing is
total: any reply yields a valid permutation, with the status recording
whether it was clean, repaired, or an identity fallback.  A run is never
aborted by one bad reply.
"""

from __future__ import annotations

import base64
import json
import os
import re
import threading
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, NamedTuple, Protocol

import requests

from .core import (
    CandidateSequence,
    CorpusManifest,
    ItemId,
    PERM_CLEAN,
    PERM_IDENTITY_FALLBACK,
    PERM_REPAIRED,
    Permutation,
    QueryId,
    Slot,
    VicError,
)
from .sgrid import SGrid, to_jpeg_bytes

T2V = "t2v"
V2T = "v2t"

ENDPOINT_ENV = "VIC_ENDPOINT"
API_KEY_ENV = "VIC_API_KEY"

_BACKOFF_START_S = 1.0


class BackendError(VicError):
    """The backend rejected the request; retrying will not help."""


class TransportError(BackendError):
    """The request did not complete (connection, timeout, server error)."""


class CandidatePart(NamedTuple):
    label: int
    item: ItemId
    content: "SGrid | str"


@dataclass(frozen=True)
class PromptBundle:
    """One query plus its K serialized candidates, labeled 1..K in
    sequence order.  Duplicate items keep their own slots and labels."""

    direction: str
    query: QueryId
    query_text: str | None
    query_image: SGrid | None
    candidates: tuple[CandidatePart, ...]
    instruction: str = "v1"

    def __post_init__(self) -> None:
        if self.direction not in (T2V, V2T):
            raise ValueError(f"direction must be {T2V!r} or {V2T!r}")
        if [p.label for p in self.candidates] != list(range(1, len(self.candidates) + 1)):
            raise ValueError("candidate labels must be 1..K in order")
        if self.direction == T2V:
            if self.query_text is None:
                raise ValueError("t2v prompt needs query_text")
            bad = [p.label for p in self.candidates if not isinstance(p.content, SGrid)]
        else:
            if self.query_image is None:
                raise ValueError("v2t prompt needs query_image")
            bad = [p.label for p in self.candidates if not isinstance(p.content, str)]
        if bad:
            raise ValueError(f"candidate content does not match direction: labels {bad}")

    @property
    def size(self) -> int:
        return len(self.candidates)


@dataclass(frozen=True)
class BackendConfig:
    """Connection settings for a chat-completion backend.

    ``endpoint_url`` and ``api_key`` fall back to the VIC_ENDPOINT and
    VIC_API_KEY environment variables; explicit config wins over env.
    """

    endpoint_url: str = ""
    model_id: str = ""
    timeout_s: float = 120.0
    max_retries: int = 2
    temperature: float = 0.0
    api_key: str | None = None

    def __post_init__(self) -> None:
        if not self.timeout_s > 0:
            raise ValueError(f"timeout must be > 0, got {self.timeout_s}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {self.max_retries}")

    def resolved_endpoint(self) -> str:
        return self.endpoint_url or os.environ.get(ENDPOINT_ENV, "")

    def resolved_api_key(self) -> str | None:
        return self.api_key or os.environ.get(API_KEY_ENV) or None


@dataclass(frozen=True)
class RerankResult:
    permutation: Permutation
    raw_reply: str
    latency_s: float
    backend_tag: str


# ---------------------------------------------------------------------------
# Prompt construction
# ---------------------------------------------------------------------------


def load_template(template_id: str, direction: str) -> str:
    """Read the instruction text asset for a template id and direction."""
    name = f"{template_id}_{direction}.txt"
    ref = resources.files(__package__) / "templates" / name
    try:
        return ref.read_text(encoding="utf-8").strip()
    except FileNotFoundError:
        raise VicError(f"unknown prompt template {template_id!r} for {direction}") from None


def build_prompt(
    query: QueryId,
    seq: CandidateSequence,
    manifest: CorpusManifest,
    grids: Mapping[ItemId, SGrid] | None,
    direction: str,
    template: str = "v1",
) -> PromptBundle:
    """Serialize a candidate sequence into a prompt bundle.

    t2v: the query is the caption text and every candidate is that
    video's grid (carrying its subtitle when present).  v2t: the query
    is the video's grid and every candidate is a caption string.
    """
    if direction == T2V:
        if query not in manifest.captions:
            raise KeyError(f"no caption text for query {query!r}")
        query_text, query_image = manifest.captions[query], None
    elif direction == V2T:
        if grids is None or query not in grids:
            raise KeyError(f"no grid for video query {query!r}")
        query_text, query_image = None, grids[query]
    else:
        raise ValueError(f"direction must be {T2V!r} or {V2T!r}")

    parts: list[CandidatePart] = []
    for label, slot in enumerate(seq.items, 1):
        if direction == T2V:
            if grids is None or slot.item not in grids:
                raise KeyError(f"no grid for candidate {slot.item!r}")
            content: SGrid | str = grids[slot.item]
        else:
            if slot.item not in manifest.captions:
                raise KeyError(f"no caption for candidate {slot.item!r}")
            content = manifest.captions[slot.item]
        parts.append(CandidatePart(label, slot.item, content))
    return PromptBundle(
        direction=direction,
        query=query,
        query_text=query_text,
        query_image=query_image,
        candidates=tuple(parts),
        instruction=template,
    )


def _image_part(grid: SGrid) -> dict:
    payload = base64.b64encode(to_jpeg_bytes(grid)).decode("ascii")
    return {"type": "image_url", "image_url": {"url": f"data:image/jpeg;base64,{payload}"}}


def render_content(bundle: PromptBundle) -> list[dict]:
    """Interleaved text and inline-image parts for the user message."""
    instruction = load_template(bundle.instruction, bundle.direction)
    parts: list[dict] = [{"type": "text", "text": instruction.format(k=bundle.size)}]
    if bundle.direction == T2V:
        parts.append({"type": "text", "text": f"Query: {bundle.query_text}"})
        for cand in bundle.candidates:
            grid = cand.content
            parts.append({"type": "text", "text": f"Candidate {cand.label}:"})
            parts.append(_image_part(grid))
            if grid.subtitle:
                parts.append(
                    {"type": "text", "text": f"Candidate {cand.label} subtitle: {grid.subtitle}"}
                )
    else:
        parts.append({"type": "text", "text": "Query video:"})
        parts.append(_image_part(bundle.query_image))
        if bundle.query_image.subtitle:
            parts.append(
                {"type": "text", "text": f"Query subtitle: {bundle.query_image.subtitle}"}
            )
        for cand in bundle.candidates:
            parts.append({"type": "text", "text": f"Candidate {cand.label}: {cand.content}"})
    return parts


def render_messages(bundle: PromptBundle) -> list[dict]:
    return [{"role": "user", "content": render_content(bundle)}]


# ---------------------------------------------------------------------------
# Reply parsing
# ---------------------------------------------------------------------------

_BRACKETED_ARRAY = re.compile(r"\[\s*\d+(?:[\s,;]+\d+)*\s*\]")
_INTEGER = re.compile(r"\d+")


def parse_permutation(reply: str, k: int) -> Permutation:
    """Parse untrusted reply text into a bijection on {1..K}.

    The first bracketed integer array wins; failing that, integer tokens
    are scanned in order across the whole reply.  Out-of-range values
    are dropped, repeats keep their first occurrence, and missing labels
    are appended in ascending order.  Status is ``clean`` only when the
    bracketed array already was exactly the 1..K bijection; any fixing
    (or a non-bracketed source) yields ``repaired``; no usable integer
    at all yields the identity with status ``identity_fallback``.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    match = _BRACKETED_ARRAY.search(reply)
    from_bracket = match is not None
    tokens = _INTEGER.findall(match.group(0) if match else reply)
    raw = [int(t) for t in tokens]
    order: list[int] = []
    seen: set[int] = set()
    for value in raw:
        if 1 <= value <= k and value not in seen:
            seen.add(value)
            order.append(value)
    if not order:
        return Permutation.identity(k, status=PERM_IDENTITY_FALLBACK)
    repaired = len(order) != len(raw) or len(order) != k
    if repaired:
        order.extend(i for i in range(1, k + 1) if i not in seen)
    status = PERM_CLEAN if from_bracket and not repaired else PERM_REPAIRED
    return Permutation(tuple(order), status=status)


def render_permutation(perm: Permutation) -> str:
    """The bracketed-array reply form, e.g. ``[2, 1, 3]``."""
    return "[" + ", ".join(str(i) for i in perm.order) + "]"


def apply(seq: CandidateSequence, perm: Permutation) -> list[Slot]:
    """Reorder the sequence slots by the permutation (provenance kept)."""
    if len(seq) != perm.size:
        raise ValueError(f"sequence length {len(seq)} != permutation size {perm.size}")
    return [seq.items[i - 1] for i in perm.order]


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


class Backend(Protocol):
    tag: str

    def complete(self, bundle: PromptBundle, cfg: BackendConfig) -> str:
        """Return the raw reply text for one list-wise request."""
        ...


def mock_oracle(
    bundle: PromptBundle, relevance: Mapping[tuple[QueryId, ItemId], float]
) -> str:
    """Deterministic oracle reply: labels sorted by descending relevance
    of their items, ties (and duplicate slots) by ascending label."""
    ranked = sorted(
        bundle.candidates,
        key=lambda part: (-relevance.get((bundle.query, part.item), 0.0), part.label),
    )
    return "[" + ", ".join(str(part.label) for part in ranked) + "]"


def gold_relevance(manifest: CorpusManifest) -> dict[tuple[QueryId, ItemId], float]:
    """Relevance table assigning 1.0 to every (query, gold item) pair."""
    table: dict[tuple[QueryId, ItemId], float] = {}
    for query, relevant in manifest.gold.items():
        for item in relevant:
            table[(query, item)] = 1.0
    return table


class MockOracleBackend:
    """Offline test double ranking by a fixed relevance table."""

    tag = "mock"

    def __init__(self, relevance: Mapping[tuple[QueryId, ItemId], float]):
        self._relevance = dict(relevance)

    def complete(self, bundle: PromptBundle, cfg: BackendConfig) -> str:
        return mock_oracle(bundle, self._relevance)


class IdentityBackend:
    """Always returns the candidate order unchanged."""

    tag = "identity"

    def complete(self, bundle: PromptBundle, cfg: BackendConfig) -> str:
        return render_permutation(Permutation.identity(bundle.size))


class HttpChatBackend:
    """Chat-completion client posting one multimodal user message.

    Request body carries ``model``, ``temperature`` and ``messages``;
    the reply is the first choice's message content.  Connection
    problems, timeouts and HTTP 5xx raise :class:`TransportError`
    (retryable); HTTP 4xx raises :class:`BackendError` (a malformed
    request is a bug, not transient).
    """

    tag = "http"

    def __init__(self, session: requests.Session | None = None):
        self._session = session or requests.Session()

    def complete(self, bundle: PromptBundle, cfg: BackendConfig) -> str:
        url = cfg.resolved_endpoint()
        if not url:
            raise BackendError(
                f"no endpoint configured (set endpoint_url or {ENDPOINT_ENV})"
            )
        headers = {"Content-Type": "application/json"}
        api_key = cfg.resolved_api_key()
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": cfg.model_id,
            "temperature": cfg.temperature,
            "messages": render_messages(bundle),
        }
        try:
            resp = self._session.post(
                url, json=payload, headers=headers, timeout=cfg.timeout_s
            )
        except requests.RequestException as exc:
            raise TransportError(f"request failed: {exc}") from exc
        if resp.status_code >= 500:
            raise TransportError(f"server error HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:500]}")
        try:
            data = resp.json()
            content = data["choices"][0]["message"]["content"]
        except (ValueError, LookupError, TypeError) as exc:
            raise BackendError(f"unexpected reply shape: {exc}") from exc
        if isinstance(content, list):  # some servers return content parts
            content = "".join(
                part.get("text", "") for part in content if isinstance(part, dict)
            )
        return str(content)


def make_backend(
    kind: str,
    relevance: Mapping[tuple[QueryId, ItemId], float] | None = None,
) -> Backend:
    if kind == "mock":
        return MockOracleBackend(relevance or {})
    if kind == "identity":
        return IdentityBackend()
    if kind == "http":
        return HttpChatBackend()
    raise VicError(f"unknown backend kind {kind!r}")


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def rerank(
    bundle: PromptBundle,
    backend: Backend,
    cfg: BackendConfig,
    sleep: Callable[[float], None] = time.sleep,
) -> RerankResult:
    """Send one list-wise request and parse the reply.

    Transport failures retry up to ``cfg.max_retries`` with exponential
    backoff from 1 s; after exhaustion (or any non-retryable failure)
    the identity fallback is returned with the error as the raw reply.
    Never raises: degradation is encoded in the permutation status.
    """
    start = time.perf_counter()
    reply: str | None = None
    error: str | None = None
    delay = _BACKOFF_START_S
    for attempt in range(cfg.max_retries + 1):
        try:
            reply = backend.complete(bundle, cfg)
            break
        except TransportError as exc:
            error = str(exc)
            if attempt < cfg.max_retries:
                sleep(delay)
                delay *= 2
        except Exception as exc:  # noqa: BLE001 - a run must never abort
            error = str(exc)
            break
    latency = time.perf_counter() - start
    if reply is None:
        return RerankResult(
            permutation=Permutation.identity(bundle.size, status=PERM_IDENTITY_FALLBACK),
            raw_reply=f"<error: {error}>",
            latency_s=latency,
            backend_tag=backend.tag,
        )
    return RerankResult(
        permutation=parse_permutation(reply, bundle.size),
        raw_reply=reply,
        latency_s=latency,
        backend_tag=backend.tag,
    )


class TranscriptWriter:
    """Thread-safe JSON-lines log of request/reply transcripts."""

    def __init__(self, path: str | os.PathLike):
        self._path = Path(path)
        self._lock = threading.Lock()
        self._path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, bundle: PromptBundle, cfg: BackendConfig, result: RerankResult) -> None:
        record = {
            "query": bundle.query,
            "direction": bundle.direction,
            "k": bundle.size,
            "backend": result.backend_tag,
            "model": cfg.model_id,
            "status": result.permutation.status,
            "latency_ms": result.latency_s * 1000.0,
            "order": list(result.permutation.order),
            "reply": result.raw_reply,
            "request": render_messages(bundle),
        }
        line = json.dumps(record, sort_keys=True)
        with self._lock:
            with self._path.open("a", encoding="utf-8") as handle:
                handle.write(line + "\n")


def rerank_many(
    bundles: Mapping[QueryId, PromptBundle],
    backend: Backend,
    cfg: BackendConfig,
    jobs: int = 4,
    transcript: TranscriptWriter | None = None,
) -> dict[QueryId, RerankResult]:
    """Rerank many queries with up to ``jobs`` in-flight requests."""
    from concurrent.futures import ThreadPoolExecutor

    results: dict[QueryId, RerankResult] = {}
    if not bundles:
        return results
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        futures = {
            query: pool.submit(rerank, bundle, backend, cfg)
            for query, bundle in bundles.items()
        }
        for query, future in futures.items():
            result = future.result()
            results[query] = result
            if transcript is not None:
                transcript.write(bundles[query], cfg, result)
    return results
