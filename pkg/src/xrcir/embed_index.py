"""Candidate catalog: captions and unit embeddings for every image, plus persistence.

On-disk layout (all integers little-endian)::

    b"XRCAT"  version:u16  dim:u32  n:u64  embedder:str
    n x ( id:str  uri:str  caption:str  image_vec:f32[dim]  caption_vec:f32[dim] )

where ``str`` is a u32 byte length followed by UTF-8 bytes.
"""

from __future__ import annotations

import enum
import logging
import struct
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .domain import Caption, CaptionSource, ImageHandle
from .errors import (
    CatalogBuildError,
    DimensionMismatch,
    FormatError,
    InputError,
    IoError,
    StateError,
    XRError,
)

log = logging.getLogger(__name__)

MAGIC = b"XRCAT"
VERSION = 1
NORM_TOL = 1e-6


class Side(str, enum.Enum):
    CAPTION_VECTORS = "caption_vectors"
    IMAGE_VECTORS = "image_vectors"


@dataclass(frozen=True, eq=False)
class Catalog:
    """Candidate images with captions and float32 unit vectors, in insertion order."""

    images: tuple[ImageHandle, ...]
    captions: Mapping[str, Caption] = field(default_factory=dict)
    image_vectors: Mapping[str, np.ndarray] = field(default_factory=dict)
    caption_vectors: Mapping[str, np.ndarray] = field(default_factory=dict)
    dim: int = 0
    embedder: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "images", tuple(self.images))
        if not self.images:
            raise InputError("a catalog needs at least one image")
        ids = [im.id for im in self.images]
        if len(set(ids)) != len(ids):
            raise InputError("catalog image ids must be unique")
        for name in ("image_vectors", "caption_vectors"):
            vectors = getattr(self, name)
            converted = {}
            for key, vec in vectors.items():
                arr = np.asarray(vec, dtype="<f4")
                if arr.shape != (self.dim,):
                    raise DimensionMismatch(f"{name}[{key}] has shape {arr.shape}, expected ({self.dim},)")
                arr.setflags(write=False)
                converted[key] = arr
            object.__setattr__(self, name, converted)

    def __len__(self) -> int:
        return len(self.images)

    @property
    def ids(self) -> list[str]:
        return [im.id for im in self.images]

    @cached_property
    def index_of(self) -> dict[str, int]:
        return {im.id: i for i, im in enumerate(self.images)}

    @property
    def is_complete(self) -> bool:
        keys = set(self.ids)
        return (
            self.dim > 0
            and set(self.captions) == keys
            and set(self.image_vectors) == keys
            and set(self.caption_vectors) == keys
        )

    def matrix(self, side: Side | str) -> np.ndarray:
        """N x dim float64 matrix of one vector side, rows in catalog order."""
        side = Side(side)
        cache = self.__dict__.setdefault("_matrices", {})
        if side in cache:
            return cache[side]
        vectors = getattr(self, side.value)
        missing = [i for i in self.ids if i not in vectors]
        if missing:
            raise StateError(f"catalog {side.value} missing for {len(missing)} image(s), e.g. {missing[0]!r}")
        mat = np.stack([vectors[i] for i in self.ids]).astype(np.float64)
        mat.setflags(write=False)
        cache[side] = mat
        return mat

    def caption_of(self, image_id: str) -> Caption:
        try:
            return self.captions[image_id]
        except KeyError:
            raise StateError(f"no caption for image {image_id!r}") from None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Catalog):
            return NotImplemented
        if (self.images, self.dim, self.embedder) != (other.images, other.dim, other.embedder):
            return False
        if dict(self.captions) != dict(other.captions):
            return False
        for name in ("image_vectors", "caption_vectors"):
            a, b = getattr(self, name), getattr(other, name)
            if a.keys() != b.keys() or any(a[k].tobytes() != b[k].tobytes() for k in a):
                return False
        return True

    __hash__ = None  # type: ignore[assignment]


def build_catalog(images: Sequence[ImageHandle], caption_agent, embedder) -> Catalog:
    """Caption and embed every candidate image (the one-off catalog pass).

    ``caption_agent`` needs ``caption(image)``; ``embedder`` needs
    ``embed_text`` and ``embed_image``. Both are usually the same ``Agents``
    object, whose response cache makes rebuilding a partially built catalog
    skip the finished items. Failed items are collected and reported together.
    """
    images = list(images)
    if not images:
        raise InputError("cannot build a catalog from zero images")
    seen: set[str] = set()
    for im in images:
        if im.id in seen:
            raise InputError(f"duplicate image id {im.id!r}")
        seen.add(im.id)

    captions: dict[str, Caption] = {}
    image_vectors: dict[str, np.ndarray] = {}
    caption_vectors: dict[str, np.ndarray] = {}
    failures: dict[str, str] = {}
    dim = 0
    for im in images:
        try:
            caption = caption_agent.caption(im, CaptionSource.CANDIDATE)
            cap_vec = embedder.embed_text(caption.text)
            img_vec = embedder.embed_image(im)
        except XRError as exc:
            failures[im.id] = f"{type(exc).__name__}: {exc}"
            log.warning("catalog item %s failed: %s", im.id, exc)
            continue
        if dim and (cap_vec.size != dim or img_vec.size != dim):
            raise DimensionMismatch(f"image {im.id!r}: embedding dimension changed mid-build")
        dim = cap_vec.size
        if img_vec.size != dim:
            raise DimensionMismatch(f"image {im.id!r}: text and image embeddings differ in dimension")
        captions[im.id] = caption
        caption_vectors[im.id] = cap_vec
        image_vectors[im.id] = img_vec
    if failures:
        raise CatalogBuildError(failures)
    return Catalog(
        images,
        captions,
        image_vectors,
        caption_vectors,
        dim=dim,
        embedder=getattr(embedder, "identity", ""),
    )


def cosine(u, v) -> float:
    """Dot product of two unit vectors, clamped to [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionMismatch(f"cannot compare vectors of shapes {u.shape} and {v.shape}")
    return float(min(1.0, max(-1.0, float(np.dot(u, v)))))


def batch_similarity(query_vec, catalog: Catalog, side: Side | str) -> np.ndarray:
    q = np.asarray(query_vec, dtype=np.float64)
    if q.ndim != 1 or q.size != catalog.dim:
        raise DimensionMismatch(f"query has dimension {q.size}, catalog has {catalog.dim}")
    return np.clip(catalog.matrix(side) @ q, -1.0, 1.0)


# -- persistence --------------------------------------------------------------

_HEADER = struct.Struct("<HIQ")


def _pack_str(out: list[bytes], text: str) -> None:
    raw = text.encode("utf-8")
    out.append(struct.pack("<I", len(raw)))
    out.append(raw)


def save_catalog(catalog: Catalog, path: str | Path) -> None:
    if not catalog.is_complete:
        raise StateError("refusing to save an incomplete catalog")
    chunks: list[bytes] = [MAGIC, _HEADER.pack(VERSION, catalog.dim, len(catalog))]
    _pack_str(chunks, catalog.embedder)
    for im in catalog.images:
        _pack_str(chunks, im.id)
        _pack_str(chunks, im.uri)
        _pack_str(chunks, catalog.captions[im.id].text)
        chunks.append(np.asarray(catalog.image_vectors[im.id], dtype="<f4").tobytes())
        chunks.append(np.asarray(catalog.caption_vectors[im.id], dtype="<f4").tobytes())
    try:
        Path(path).write_bytes(b"".join(chunks))
    except OSError as exc:
        raise IoError(f"cannot write catalog {path}: {exc}") from exc


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"catalog {self.path} is truncated at byte {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def string(self) -> str:
        (length,) = struct.unpack("<I", self.take(4))
        try:
            return self.take(length).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"catalog {self.path} holds invalid UTF-8 at byte {self.pos}") from exc


def load_catalog(path: str | Path) -> Catalog:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read catalog {path}: {exc}") from exc
    r = _Reader(data, str(path))
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path} is not a catalog file (bad magic)")
    version, dim, n = _HEADER.unpack(r.take(_HEADER.size))
    if version != VERSION:
        raise FormatError(f"unsupported catalog version {version} (expected {VERSION})")
    if dim == 0 or n == 0:
        raise FormatError(f"catalog {path} declares dim={dim}, n={n}")
    embedder = r.string()
    images, captions, image_vectors, caption_vectors = [], {}, {}, {}
    for _ in range(n):
        image_id, uri, text = r.string(), r.string(), r.string()
        try:
            images.append(ImageHandle(image_id, uri))
            captions[image_id] = Caption(text, CaptionSource.CANDIDATE)
        except InputError as exc:
            raise FormatError(f"catalog {path}: {exc}") from exc
        image_vectors[image_id] = np.frombuffer(r.take(4 * dim), dtype="<f4")
        caption_vectors[image_id] = np.frombuffer(r.take(4 * dim), dtype="<f4")
    if r.pos != len(data):
        raise FormatError(f"catalog {path} has {len(data) - r.pos} trailing bytes")
    try:
        return Catalog(images, captions, image_vectors, caption_vectors, dim=dim, embedder=embedder)
    except InputError as exc:
        raise FormatError(f"catalog {path}: {exc}") from exc
