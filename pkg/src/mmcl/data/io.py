"""On-disk dataset layout.

A dataset directory holds::

    manifest.json    sidecar: file names, schema digest, generator config
    images.bmcl      b"BMCL1" + little-endian u32 N, C, H, W + float32 pixels
    tabular.csv      header = schema names, empty cell = missing
    labels.csv       row_index,label,split
    schema.yaml

Instead of ``images.bmcl`` the manifest may name an image manifest CSV
(columns ``image_path,row_index``) pointing at PNG files.
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from mmcl.data.dataset import PairedDataset
from mmcl.data.schema import TabularSchema
from mmcl.data.tabular import load_tabular, save_tabular
from mmcl.errors import IntegrityError, ParseError, SchemaError

MAGIC = b"BMCL1"
_HEADER = struct.Struct("<5sIIII")


def write_image_container(path: str | Path, images: np.ndarray) -> None:
    images = np.ascontiguousarray(images, dtype="<f4")
    n, c, h, w = images.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, n, c, h, w))
        fh.write(images.tobytes())


def read_image_container(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise IntegrityError(f"{path}: truncated header")
    magic, n, c, h, w = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise IntegrityError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 4 * n * c * h * w
    if len(raw) != expected:
        raise IntegrityError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    return data.reshape(n, c, h, w).astype(np.float32)


def read_png_manifest(path: str | Path, n_rows: int) -> np.ndarray:
    from PIL import Image

    path = Path(path)
    entries: dict[int, Path] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"image_path", "row_index"} - set(reader.fieldnames):
            raise SchemaError(f"{path}: image manifest needs image_path,row_index columns")
        for line, rec in enumerate(reader):
            try:
                entries[int(rec["row_index"])] = path.parent / rec["image_path"]
            except ValueError:
                raise ParseError(f"{path}: bad row_index on line {line + 2}", row=line) from None
    if sorted(entries) != list(range(n_rows)):
        raise SchemaError(f"{path}: row indices must cover 0..{n_rows - 1} exactly once")
    imgs = []
    for i in range(n_rows):
        arr = np.asarray(Image.open(entries[i]).convert("RGB"), dtype=np.float32) / 255.0
        imgs.append(arr.transpose(2, 0, 1))
    return np.stack(imgs)


def save_dataset(dataset: PairedDataset, out_dir: str | Path, extra: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_image_container(out / "images.bmcl", dataset.images)
    save_tabular(out / "tabular.csv", dataset.tabular, dataset.schema)
    with open(out / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row_index", "label", "split"])
        for i, (y, s) in enumerate(zip(dataset.labels, dataset.splits)):
            w.writerow([i, int(y), s])
    dataset.schema.save(out / "schema.yaml")
    manifest = {
        "format": "BMCL1",
        "images": "images.bmcl",
        "tabular": "tabular.csv",
        "labels": "labels.csv",
        "schema": "schema.yaml",
        "schema_digest": dataset.schema.digest(),
        "n_samples": len(dataset),
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out


def load_dataset(data_dir: str | Path) -> PairedDataset:
    root = Path(data_dir)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise SchemaError(f"{root}: no manifest.json")
    manifest = json.loads(mpath.read_text())
    schema = TabularSchema.load(root / manifest.get("schema", "schema.yaml"))
    tab = load_tabular(root / manifest.get("tabular", "tabular.csv"), schema)

    labels, splits = [], []
    with open(root / manifest.get("labels", "labels.csv"), newline="") as fh:
        for i, rec in enumerate(csv.DictReader(fh)):
            if int(rec["row_index"]) != i:
                raise ParseError(f"labels.csv: row_index out of order at line {i + 2}", row=i)
            labels.append(int(rec["label"]))
            splits.append(rec["split"])

    if "image_manifest" in manifest:
        images = read_png_manifest(root / manifest["image_manifest"], len(labels))
    else:
        images = read_image_container(root / manifest.get("images", "images.bmcl"))
    if len(images) != len(labels):
        raise IntegrityError(f"{root}: {len(images)} images but {len(labels)} labels")
    return PairedDataset(images, tab, np.array(labels), np.array(splits), schema)
