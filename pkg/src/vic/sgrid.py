"""Serialize a video into a single composite canvas image.

``s**2`` frame indices are sampled uniformly from the video, each frame
is resized to the cell size floor(H/s) x floor(W/s) (bilinear) and the
cells are tiled row-major.  Canvases trim any remainder pixels so both
axes stay divisible by ``s``.  Frame extraction from raw containers is
out of scope: this module consumes a directory of decoded frame images
per video.
"""

from __future__ import annotations

import io
import json
import os
import re
from dataclasses import dataclass
from pathlib import Path

from PIL import Image

from .core import FormatError, ItemId, check_id

FRAME_EXTENSIONS = {".jpg", ".jpeg", ".png", ".bmp", ".webp"}
DEFAULT_JPEG_QUALITY = 90

# Pillow renamed resampling constants in 9.1; accept both.
try:
    _BILINEAR = Image.Resampling.BILINEAR
except AttributeError:  # pragma: no cover
    _BILINEAR = Image.BILINEAR


@dataclass(frozen=True)
class GridSpec:
    """Grid dimension and target canvas size in pixels."""

    s: int = 3
    canvas_h: int = 1024
    canvas_w: int = 1024

    def __post_init__(self) -> None:
        if self.s < 1:
            raise ValueError(f"grid dimension must be >= 1, got {self.s}")
        if self.canvas_h < self.s or self.canvas_w < self.s:
            raise ValueError(
                f"canvas {self.canvas_h}x{self.canvas_w} too small for s={self.s}"
            )

    @property
    def cell_h(self) -> int:
        return self.canvas_h // self.s

    @property
    def cell_w(self) -> int:
        return self.canvas_w // self.s


@dataclass(frozen=True)
class FrameSource:
    """Decoded RGB frames of one video, in temporal order."""

    item: ItemId
    frames: tuple[Image.Image, ...]

    def __post_init__(self) -> None:
        check_id(self.item, "item id")
        if not self.frames:
            raise ValueError(f"video {self.item!r} has no frames")

    @property
    def frame_count(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class SGrid:
    """Composite canvas plus the optional subtitle and chosen indices."""

    item: ItemId
    canvas: Image.Image
    subtitle: str | None
    indices: tuple[int, ...]
    frame_count: int

    def __post_init__(self) -> None:
        s = int(round(len(self.indices) ** 0.5))
        if s * s != len(self.indices):
            raise ValueError(f"{len(self.indices)} indices do not form a square grid")
        if list(self.indices) != sorted(self.indices):
            raise ValueError("indices must be non-decreasing")
        if self.indices and not (0 <= self.indices[0] and self.indices[-1] < self.frame_count):
            raise ValueError(
                f"indices must lie in [0, {self.frame_count - 1}], got {self.indices}"
            )
        if self.canvas.width % s or self.canvas.height % s:
            raise ValueError(
                f"canvas {self.canvas.width}x{self.canvas.height} not divisible by s={s}"
            )


def select_indices(frame_count: int, s: int) -> list[int]:
    """Uniformly spaced zero-based frame indices for an s x s grid.

    For s >= 2 the i-th index (1-based i) is floor((i-1) * F / (s^2 - 1))
    clamped into [0, F-1]; the raw value at i = s^2 equals F and the
    clamp is the minimal correction.  For s = 1 the single middle frame
    floor(F/2) is used.
    """
    if frame_count < 1 or s < 1:
        raise ValueError(f"need frame_count >= 1 and s >= 1, got {frame_count}, {s}")
    if s == 1:
        return [frame_count // 2]
    cells = s * s
    raw = [(i - 1) * frame_count // (cells - 1) for i in range(1, cells + 1)]
    return [min(max(t, 0), frame_count - 1) for t in raw]


def compose_grid(
    src: FrameSource, spec: GridSpec, subtitle: str | None = None
) -> SGrid:
    """Tile the selected frames row-major onto one canvas.

    The canvas is exactly s*cell_h x s*cell_w, so non-divisible target
    sizes are trimmed rather than padded.  Composition is deterministic:
    identical inputs produce bit-identical canvases.
    """
    cell_w, cell_h = spec.cell_w, spec.cell_h
    if cell_w < 1 or cell_h < 1:
        raise ValueError(f"zero-area cell for spec {spec!r}")
    indices = select_indices(src.frame_count, spec.s)
    canvas = Image.new("RGB", (spec.s * cell_w, spec.s * cell_h))
    for i, frame_idx in enumerate(indices):
        frame = src.frames[frame_idx]
        if frame.mode != "RGB":
            frame = frame.convert("RGB")
        cell = frame.resize((cell_w, cell_h), _BILINEAR)
        row, col = divmod(i, spec.s)
        canvas.paste(cell, (col * cell_w, row * cell_h))
    return SGrid(
        item=src.item,
        canvas=canvas,
        subtitle=subtitle,
        indices=tuple(indices),
        frame_count=src.frame_count,
    )


def _natural_key(name: str) -> tuple:
    """Sort key treating embedded integers numerically (f_2 before f_10)."""
    parts = re.split(r"(\d+)", name)
    return tuple(int(p) if p.isdigit() else p for p in parts)


def load_frames(directory: str | os.PathLike, item: ItemId | None = None) -> FrameSource:
    """Load every frame image in a directory, ordered naturally by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FormatError(f"not a directory: {directory}")
    names = sorted(
        (p for p in directory.iterdir() if p.suffix.lower() in FRAME_EXTENSIONS),
        key=lambda p: _natural_key(p.name),
    )
    if not names:
        raise FormatError(f"no frame images in {directory}")
    frames = []
    for p in names:
        try:
            with Image.open(p) as img:
                frames.append(img.convert("RGB"))
        except OSError as exc:
            raise FormatError(f"undecodable frame {p}: {exc}") from None
    return FrameSource(item=item or directory.name, frames=tuple(frames))


def to_jpeg_bytes(grid: SGrid, quality: int = DEFAULT_JPEG_QUALITY) -> bytes:
    """Encode the canvas as JPEG, e.g. for inline transmission."""
    buf = io.BytesIO()
    grid.canvas.save(buf, format="JPEG", quality=quality)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# On-disk grids: <item>.sgrid.jpg + <item>.sgrid.json sidecar
# ---------------------------------------------------------------------------


def save_sgrid(
    grid: SGrid, out_dir: str | os.PathLike, quality: int = DEFAULT_JPEG_QUALITY
) -> Path:
    """Write the canvas as JPEG plus a JSON sidecar describing it."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jpg = out_dir / f"{grid.item}.sgrid.jpg"
    grid.canvas.save(jpg, format="JPEG", quality=quality)
    sidecar = {
        "item": grid.item,
        "s": int(round(len(grid.indices) ** 0.5)),
        "frame_count": grid.frame_count,
        "indices": list(grid.indices),
        "canvas_w": grid.canvas.width,
        "canvas_h": grid.canvas.height,
        "subtitle": grid.subtitle,
    }
    (out_dir / f"{grid.item}.sgrid.json").write_text(
        json.dumps(sidecar, sort_keys=True) + "\n", encoding="utf-8"
    )
    return jpg


def load_sgrid(directory: str | os.PathLike, item: ItemId) -> SGrid:
    """Load a previously saved grid (canvas plus sidecar) for one item."""
    directory = Path(directory)
    jpg = directory / f"{item}.sgrid.jpg"
    sidecar_path = directory / f"{item}.sgrid.json"
    if not jpg.exists() or not sidecar_path.exists():
        raise FormatError(f"no saved grid for {item!r} in {directory}")
    sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    with Image.open(jpg) as img:
        canvas = img.convert("RGB")
    return SGrid(
        item=item,
        canvas=canvas,
        subtitle=sidecar.get("subtitle"),
        indices=tuple(sidecar.get("indices") or ()),
        frame_count=int(sidecar.get("frame_count", 0)),
    )


class GridStore:
    """Resolves item ids to grids, preferring prebuilt ones on disk and
    composing (then caching) from manifest frame directories otherwise."""

    def __init__(self, manifest, spec: GridSpec, grids_dir: str | os.PathLike | None = None):
        self._manifest = manifest
        self._spec = spec
        self._dir = Path(grids_dir) if grids_dir else None
        self._cache: dict[ItemId, SGrid] = {}

    def get(self, item: ItemId) -> SGrid:
        if item in self._cache:
            return self._cache[item]
        grid: SGrid | None = None
        if self._dir is not None:
            try:
                grid = load_sgrid(self._dir, item)
            except FormatError:
                grid = None
        if grid is None:
            entry = self._manifest.videos.get(item)
            if entry is None:
                raise KeyError(f"no video {item!r} in manifest")
            src = load_frames(entry.frames_path, item=item)
            grid = compose_grid(src, self._spec, subtitle=entry.subtitle)
        self._cache[item] = grid
        return grid

    def __getitem__(self, item: ItemId) -> SGrid:
        return self.get(item)

    def __contains__(self, item: ItemId) -> bool:
        if item in self._cache or item in self._manifest.videos:
            return True
        return self._dir is not None and (self._dir / f"{item}.sgrid.jpg").exists()
