from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal

import yaml

from mmcl.errors import SchemaError

Kind = Literal["continuous", "categorical"]


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: Kind
    categories: tuple[int, ...] = ()
    morphometric: bool = False

    def __post_init__(self):
        if self.kind not in ("continuous", "categorical"):
            raise SchemaError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            cats = tuple(int(c) for c in self.categories)
            if not cats:
                raise SchemaError(f"categorical feature {self.name!r} has no categories")
            if list(cats) != sorted(set(cats)):
                raise SchemaError(
                    f"categories of {self.name!r} must be sorted and duplicate-free"
                )
            object.__setattr__(self, "categories", cats)
        elif self.categories:
            raise SchemaError(f"continuous feature {self.name!r} cannot list categories")

    @property
    def is_categorical(self) -> bool:
        return self.kind == "categorical"

    @property
    def width(self) -> int:
        """Number of columns after one-hot encoding."""
        return len(self.categories) if self.is_categorical else 1


@dataclass(frozen=True)
class TabularSchema:
    features: tuple[FeatureSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate feature names: {dupes}")

    def __len__(self) -> int:
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"no feature named {name!r}") from None

    @property
    def encoded_width(self) -> int:
        return sum(f.width for f in self.features)

    def encoded_slices(self) -> list[slice]:
        """Column range of every raw feature inside the one-hot encoding."""
        out, start = [], 0
        for f in self.features:
            out.append(slice(start, start + f.width))
            start += f.width
        return out

    def select(self, names: Iterable[str]) -> "TabularSchema":
        keep = set(names)
        return TabularSchema(tuple(f for f in self.features if f.name in keep))

    def to_dict(self) -> dict:
        return {
            "features": [
                {
                    "name": f.name,
                    "kind": f.kind,
                    "categories": list(f.categories),
                    "morphometric": f.morphometric,
                }
                for f in self.features
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TabularSchema":
        try:
            feats = [
                FeatureSpec(
                    name=str(f["name"]),
                    kind=f["kind"],
                    categories=tuple(f.get("categories") or ()),
                    morphometric=bool(f.get("morphometric", False)),
                )
                for f in d["features"]
            ]
        except (KeyError, TypeError) as e:
            raise SchemaError(f"malformed schema document: {e}") from None
        return cls(tuple(feats))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def load(cls, path: str | Path) -> "TabularSchema":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))
