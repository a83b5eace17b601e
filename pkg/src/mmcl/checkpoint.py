"""Checkpoint directory: manifest.json + params.bin (little-endian float32)."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from mmcl.data.schema import TabularSchema
from mmcl.errors import CheckpointMismatchError, IntegrityError
from mmcl.model import ContrastiveModel, ModelConfig

FORMAT = "mmcl-checkpoint/1"


def state_digest(module: torch.nn.Module) -> str:
    """SHA-256 over every tensor in the state dict (names, shapes, raw bytes)."""
    h = hashlib.sha256()
    for name, t in module.state_dict().items():
        h.update(name.encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


@dataclass
class Checkpoint:
    model: ContrastiveModel
    manifest: dict = field(default_factory=dict)

    @property
    def schema(self) -> TabularSchema:
        return TabularSchema.from_dict(self.manifest["schema"])

    def check_compatible(self, dataset) -> None:
        """Refuse datasets whose schema matches neither the pretraining column
        set nor the schema it was derived from."""
        ok = {self.manifest.get("schema_digest"), self.manifest.get("base_schema_digest")}
        got = dataset.schema.digest()
        if got not in ok and dataset.base_schema_digest not in ok:
            raise CheckpointMismatchError(
                f"dataset schema digest {got} does not match checkpoint "
                f"({self.manifest.get('schema_digest')}, base {self.manifest.get('base_schema_digest')})"
            )


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    tensors, chunks, offset = [], [], 0
    for name, t in ckpt.model.state_dict().items():
        arr = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset,
                        "count": int(arr.size), "dtype": str(t.dtype).replace("torch.", "")})
        chunks.append(arr.tobytes())
        offset += arr.size
    blob = b"".join(chunks)
    (out / "params.bin").write_bytes(blob)
    manifest = dict(ckpt.manifest)
    manifest.update(
        format=FORMAT,
        model_config=ckpt.model.cfg.to_dict(),
        mode=ckpt.model.mode,
        tabular_in=ckpt.model.tabular_in,
        tensors=tensors,
        params_sha256=hashlib.sha256(blob).hexdigest(),
        params_digest=state_digest(ckpt.model),
    )
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    ckpt.manifest = manifest
    return out


def load_checkpoint(path: str | Path, dataset=None) -> Checkpoint:
    root = Path(path)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
        blob = (root / "params.bin").read_bytes()
    except FileNotFoundError as e:
        raise IntegrityError(f"{root}: incomplete checkpoint ({e.filename} missing)") from None
    except json.JSONDecodeError as e:
        raise IntegrityError(f"{root}: unreadable manifest ({e})") from None
    if manifest.get("format") != FORMAT:
        raise IntegrityError(f"{root}: unknown checkpoint format {manifest.get('format')!r}")
    expected = 4 * sum(t["count"] for t in manifest["tensors"])
    if len(blob) != expected:
        raise IntegrityError(f"{root}: params.bin has {len(blob)} bytes, expected {expected}")
    if hashlib.sha256(blob).hexdigest() != manifest["params_sha256"]:
        raise IntegrityError(f"{root}: params.bin checksum mismatch")

    flat = np.frombuffer(blob, dtype="<f4")
    model = ContrastiveModel(
        ModelConfig.from_dict(manifest["model_config"]), manifest["tabular_in"], manifest["mode"]
    )
    state = {}
    for t in manifest["tensors"]:
        arr = flat[t["offset"]:t["offset"] + t["count"]].reshape(t["shape"])
        state[t["name"]] = torch.from_numpy(arr.copy()).to(getattr(torch, t["dtype"]))
    model.load_state_dict(state)
    ckpt = Checkpoint(model, manifest)
    if dataset is not None:
        ckpt.check_compatible(dataset)
    return ckpt
