"""Tiny synthetic copies of the upstream annotation layouts."""

from __future__ import annotations

import json
from pathlib import Path


def _dump(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data), encoding="utf-8")


def write_cirr(root: Path, split: str = "val") -> Path:
    images = {f"img-{i}": f"./{split}/img-{i}.png" for i in range(6)}
    caps = [
        {
            "pairid": 10 + i,
            "reference": f"img-{i}",
            "target_hard": f"img-{i + 1}",
            "caption": f" make it number {i + 1} ",
            "img_set": {"id": i, "members": [f"img-{i}", f"img-{i + 1}", f"img-{i + 2}"]},
        }
        for i in range(3)
    ]
    _dump(root / "captions" / f"cap.rc2.{split}.json", caps)
    _dump(root / "image_splits" / f"split.rc2.{split}.json", images)
    return root


def write_circo(root: Path, split: str = "val") -> Path:
    info = {"images": [{"id": 100 + i, "file_name": f"{100 + i:012d}.jpg"} for i in range(5)]}
    ann = [
        {
            "id": 0,
            "reference_img_id": 100,
            "target_img_id": 101,
            "relative_caption": "has two dogs",
            "gt_img_ids": [101, 102, 101],
        },
        {"id": 1, "reference_img_id": 103, "target_img_id": 104, "relative_caption": "at night", "gt_img_ids": [104]},
    ]
    _dump(root / "annotations" / f"{split}.json", ann)
    _dump(root / "COCO2017_unlabeled" / "annotations" / "image_info_unlabeled2017.json", info)
    return root


def write_fashioniq(root: Path, category: str = "dress", split: str = "val") -> Path:
    names = [f"B00{i}" for i in range(4)]
    caps = [
        {"candidate": "B000", "target": "B001", "captions": ["is shorter", "has no sleeves"]},
        {"candidate": "B002", "target": "B003", "captions": ["is red", ""]},
    ]
    _dump(root / "captions" / f"cap.{category}.{split}.json", caps)
    _dump(root / "image_splits" / f"split.{category}.{split}.json", names)
    return root
