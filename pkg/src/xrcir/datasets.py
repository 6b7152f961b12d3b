"""Benchmark manifests and converters from upstream annotation layouts.

A manifest is line-delimited JSON with two record kinds::

    {"kind": "image", "id": ..., "uri": ...}
    {"kind": "query", "id": ..., "ref": ..., "text": ..., "targets": [...], "subset": [...]}

``subset`` is optional. ``targets`` may be empty for splits whose ground
truth is held by an evaluation server (CIRR and CIRCO test); such queries are
ranked but not scored.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from .domain import ImageHandle, Query
from .errors import FormatError, InputError, MissingFile, ReferentialError, SchemaDrift
from .metrics import GroundTruth

log = logging.getLogger(__name__)


class DatasetKind(str, enum.Enum):
    CIRR = "cirr"
    CIRCO = "circo"
    FASHIONIQ_SHIRT = "fashioniq_shirt"
    FASHIONIQ_DRESS = "fashioniq_dress"
    FASHIONIQ_TOPTEE = "fashioniq_toptee"
    CUSTOM = "custom"

    @property
    def is_fashioniq(self) -> bool:
        return self.value.startswith("fashioniq_")


@dataclass(frozen=True)
class ManifestQuery:
    query_id: str
    ref: str
    text: str
    targets: tuple[str, ...] = ()
    subset: tuple[str, ...] | None = None

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "kind": "query",
            "id": self.query_id,
            "ref": self.ref,
            "text": self.text,
            "targets": list(self.targets),
        }
        if self.subset is not None:
            out["subset"] = list(self.subset)
        return out


@dataclass(frozen=True)
class Manifest:
    dataset: DatasetKind
    queries: tuple[ManifestQuery, ...]
    images: tuple[ImageHandle, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "dataset", DatasetKind(self.dataset))
        object.__setattr__(self, "queries", tuple(self.queries))
        object.__setattr__(self, "images", tuple(self.images))

    def image(self, image_id: str) -> ImageHandle:
        return self._by_id[image_id]

    @property
    def _by_id(self) -> dict[str, ImageHandle]:
        cache = self.__dict__.get("_image_index")
        if cache is None:
            cache = {im.id: im for im in self.images}
            self.__dict__["_image_index"] = cache
        return cache

    def query(self, mq: ManifestQuery) -> Query:
        return Query(mq.query_id, self.image(mq.ref), mq.text)

    def ground_truth(self, mq: ManifestQuery) -> GroundTruth | None:
        if not mq.targets:
            return None
        return GroundTruth(mq.query_id, frozenset(mq.targets), frozenset(mq.subset) if mq.subset else None)

    def dumps(self) -> str:
        lines = [json.dumps({"kind": "dataset", "dataset": self.dataset.value})]
        lines += [
            json.dumps({"kind": "image", "id": im.id, "uri": im.uri}, ensure_ascii=False)
            for im in self.images
        ]
        lines += [json.dumps(q.to_json(), ensure_ascii=False) for q in self.queries]
        return "\n".join(lines) + "\n"


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    Path(path).write_text(manifest.dumps(), encoding="utf-8")


def _str_list(raw: dict, key: str, lineno: int) -> tuple[str, ...]:
    value = raw.get(key)
    if not isinstance(value, list) or not all(isinstance(v, str) and v for v in value):
        raise FormatError(f"field {key!r} must be a list of non-empty strings", lineno)
    return tuple(value)


def load_manifest(path: str | Path, dataset: DatasetKind | str | None = None) -> Manifest:
    """Read and validate a manifest.

    Referential checks run after the whole file is read, so records may come
    in any order; errors still carry the offending line number.
    """
    path = Path(path)
    try:
        fh = path.open("r", encoding="utf-8")
    except OSError as exc:
        raise MissingFile(f"cannot open manifest {path}: {exc}") from exc
    kind = DatasetKind(dataset) if dataset else None
    images: list[ImageHandle] = []
    image_lines: dict[str, int] = {}
    queries: list[tuple[int, ManifestQuery]] = []
    query_ids: set[str] = set()
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", lineno) from None
            if not isinstance(raw, dict):
                raise FormatError("record is not a JSON object", lineno)
            record_kind = raw.get("kind")
            if record_kind == "dataset":
                if kind is None:
                    try:
                        kind = DatasetKind(raw.get("dataset"))
                    except ValueError:
                        raise FormatError(f"unknown dataset {raw.get('dataset')!r}", lineno) from None
            elif record_kind == "image":
                image_id, uri = raw.get("id"), raw.get("uri")
                if not isinstance(image_id, str) or not isinstance(uri, str):
                    raise FormatError("image record needs string 'id' and 'uri'", lineno)
                if image_id in image_lines:
                    raise FormatError(f"duplicate image id {image_id!r}", lineno)
                try:
                    images.append(ImageHandle(image_id, uri))
                except InputError as exc:
                    raise FormatError(str(exc), lineno) from None
                image_lines[image_id] = lineno
            elif record_kind == "query":
                qid, ref, text = raw.get("id"), raw.get("ref"), raw.get("text")
                if not all(isinstance(v, str) and v for v in (qid, ref)):
                    raise FormatError("query record needs string 'id' and 'ref'", lineno)
                if not isinstance(text, str) or not text.strip():
                    raise FormatError(f"query {qid!r} has empty modification text", lineno)
                if qid in query_ids:
                    raise FormatError(f"duplicate query id {qid!r}", lineno)
                query_ids.add(qid)
                targets = _str_list(raw, "targets", lineno) if "targets" in raw else ()
                subset = _str_list(raw, "subset", lineno) if raw.get("subset") is not None else None
                queries.append((lineno, ManifestQuery(qid, ref, text, targets, subset)))
            else:
                raise FormatError(f"unknown record kind {record_kind!r}", lineno)

    for lineno, q in queries:
        for image_id in (q.ref, *q.targets, *(q.subset or ())):
            if image_id not in image_lines:
                raise ReferentialError(f"query {q.query_id!r} references unknown image {image_id!r}", lineno)
        if q.subset is not None and q.targets and not set(q.targets) & set(q.subset):
            raise ReferentialError(f"query {q.query_id!r}: no target lies in its subset", lineno)
    manifest = Manifest(kind or DatasetKind.CUSTOM, tuple(q for _, q in queries), tuple(images))
    log.info("loaded %s manifest: %d queries, %d images", manifest.dataset.value, len(manifest.queries), len(manifest.images))
    return manifest


# -- upstream adapters ----------------------------------------------------------


def _read_json(path: Path) -> Any:
    if not path.is_file():
        raise MissingFile(f"expected upstream file {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaDrift(f"{path} is not valid JSON: {exc}") from exc


def _field(record: dict, key: str, where: str) -> Any:
    if not isinstance(record, dict) or key not in record:
        raise SchemaDrift(f"{where}: upstream field {key!r} is missing")
    return record[key]


def _uri(root: Path, rel: str) -> str:
    return (root / rel).as_posix()


def adapt_cirr(raw_dir: Path, split: str = "test1", image_root: Path | None = None) -> Manifest:
    """CIRR layout: ``captions/cap.rc2.<split>.json``, ``image_splits/split.rc2.<split>.json``.

    The subset for each query is its ``img_set.members`` minus the reference
    image, following the benchmark's subset protocol.
    """
    captions = _read_json(raw_dir / "captions" / f"cap.rc2.{split}.json")
    splits = _read_json(raw_dir / "image_splits" / f"split.rc2.{split}.json")
    if not isinstance(captions, list) or not isinstance(splits, dict):
        raise SchemaDrift("CIRR caption file must be a list and split file a mapping")
    root = image_root or raw_dir / "img_raw"
    images = [ImageHandle(name, _uri(root, rel)) for name, rel in splits.items()]
    queries = []
    for i, rec in enumerate(captions):
        where = f"cap.rc2.{split}.json[{i}]"
        ref = _field(rec, "reference", where)
        members = _field(_field(rec, "img_set", where), "members", where)
        target = rec.get("target_hard")
        queries.append(
            ManifestQuery(
                str(_field(rec, "pairid", where)),
                ref,
                str(_field(rec, "caption", where)).strip(),
                (target,) if target else (),
                tuple(m for m in members if m != ref),
            )
        )
    return Manifest(DatasetKind.CIRR, tuple(queries), tuple(images))


def adapt_circo(raw_dir: Path, split: str = "test", image_root: Path | None = None) -> Manifest:
    """CIRCO layout: ``annotations/<split>.json`` plus the COCO 2017 unlabeled
    image list ``COCO2017_unlabeled/annotations/image_info_unlabeled2017.json``."""
    annotations = _read_json(raw_dir / "annotations" / f"{split}.json")
    info = _read_json(raw_dir / "COCO2017_unlabeled" / "annotations" / "image_info_unlabeled2017.json")
    root = image_root or raw_dir / "COCO2017_unlabeled" / "unlabeled2017"
    images = []
    for i, rec in enumerate(_field(info, "images", "image_info_unlabeled2017.json")):
        where = f"image_info_unlabeled2017.json images[{i}]"
        images.append(ImageHandle(str(_field(rec, "id", where)), _uri(root, _field(rec, "file_name", where))))
    queries = []
    for i, rec in enumerate(annotations):
        where = f"{split}.json[{i}]"
        gt = rec.get("gt_img_ids") or ([rec["target_img_id"]] if rec.get("target_img_id") is not None else [])
        queries.append(
            ManifestQuery(
                str(_field(rec, "id", where)),
                str(_field(rec, "reference_img_id", where)),
                str(_field(rec, "relative_caption", where)).strip(),
                tuple(dict.fromkeys(str(t) for t in gt)),
            )
        )
    return Manifest(DatasetKind.CIRCO, tuple(queries), tuple(images))


def adapt_fashioniq(
    raw_dir: Path, category: str, split: str = "val", image_root: Path | None = None
) -> Manifest:
    """FashionIQ layout: ``captions/cap.<cat>.<split>.json`` and
    ``image_splits/split.<cat>.<split>.json``. The two crowd captions of each
    query are joined with " and "."""
    captions = _read_json(raw_dir / "captions" / f"cap.{category}.{split}.json")
    names = _read_json(raw_dir / "image_splits" / f"split.{category}.{split}.json")
    root = image_root or raw_dir / "images"
    images = [ImageHandle(name, _uri(root, f"{name}.png")) for name in names]
    queries = []
    for i, rec in enumerate(captions):
        where = f"cap.{category}.{split}.json[{i}]"
        texts = [t.strip() for t in _field(rec, "captions", where) if t and t.strip()]
        if not texts:
            raise SchemaDrift(f"{where}: no usable captions")
        queries.append(
            ManifestQuery(
                f"{category}-{split}-{i}",
                _field(rec, "candidate", where),
                " and ".join(texts),
                (_field(rec, "target", where),),
            )
        )
    return Manifest(DatasetKind(f"fashioniq_{category}"), tuple(queries), tuple(images))


def adapt_upstream(
    dataset_kind: DatasetKind | str,
    raw_dir: str | Path,
    out_path: str | Path | None = None,
    *,
    split: str | None = None,
    image_root: str | Path | None = None,
) -> Manifest:
    """Convert one benchmark's published annotations into a canonical manifest.

    Referential integrity is checked by re-loading the written manifest.
    """
    kind = DatasetKind(dataset_kind)
    raw_dir = Path(raw_dir)
    if not raw_dir.is_dir() or not any(raw_dir.iterdir()):
        raise MissingFile(f"raw directory {raw_dir} is missing or empty")
    root = Path(image_root) if image_root else None
    if kind is DatasetKind.CIRR:
        manifest = adapt_cirr(raw_dir, split or "test1", root)
    elif kind is DatasetKind.CIRCO:
        manifest = adapt_circo(raw_dir, split or "test", root)
    elif kind.is_fashioniq:
        manifest = adapt_fashioniq(raw_dir, kind.value.split("_", 1)[1], split or "val", root)
    else:
        raise InputError("custom datasets are written as manifests directly; nothing to adapt")
    if out_path is not None:
        save_manifest(manifest, out_path)
        return load_manifest(out_path)
    _check_references(manifest)
    return manifest


def _check_references(manifest: Manifest) -> None:
    known = {im.id for im in manifest.images}
    for q in manifest.queries:
        for image_id in (q.ref, *q.targets, *(q.subset or ())):
            if image_id not in known:
                raise ReferentialError(f"query {q.query_id!r} references unknown image {image_id!r}")


def manifest_counts(manifest: Manifest) -> dict[str, int]:
    return {"queries": len(manifest.queries), "images": len(manifest.images)}


def iter_scored(manifest: Manifest) -> Iterable[ManifestQuery]:
    return (q for q in manifest.queries if q.targets)
