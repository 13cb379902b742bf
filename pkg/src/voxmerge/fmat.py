"""Feature matrices: named column blocks over edge rows, persisted as FMAT1."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .volume import read_header

MAGIC = "FMAT1"


@dataclass
class FeatureMatrix:
    """``values`` has one row per edge; ``blocks`` lists ``(name, length)`` in column order."""

    values: np.ndarray
    blocks: list
    dataset_hash: str = ""
    config_hash: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            self.values = self.values.reshape(self.values.shape[0] if self.values.ndim else 0, -1)
        self.blocks = [(str(n), int(k)) for n, k in self.blocks]
        names = [n for n, _ in self.blocks]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate block names in {names}")
        if sum(k for _, k in self.blocks) != self.values.shape[1]:
            raise ValueError(f"block lengths sum to {sum(k for _, k in self.blocks)}, "
                             f"matrix has {self.values.shape[1]} columns")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.blocks]

    def offsets(self) -> dict:
        out, pos = {}, 0
        for n, k in self.blocks:
            out[n] = (pos, pos + k)
            pos += k
        return out

    def block(self, name: str) -> np.ndarray:
        lo, hi = self.offsets()[name]
        return self.values[:, lo:hi]

    def select(self, names) -> "FeatureMatrix":
        names = list(names)
        missing = [n for n in names if n not in self.names]
        if missing:
            raise KeyError(f"blocks not present: {missing}")
        lens = dict(self.blocks)
        vals = np.hstack([self.block(n) for n in names]) if names else np.zeros((self.rows, 0), np.float32)
        return FeatureMatrix(vals, [(n, lens[n]) for n in names], self.dataset_hash, self.config_hash)

    def save(self, path) -> None:
        header = {
            "magic": MAGIC, "rows": self.rows, "blocks": [{"name": n, "len": k} for n, k in self.blocks],
            "dataset_hash": self.dataset_hash, "config_hash": self.config_hash,
        }
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
            fh.write(np.ascontiguousarray(self.values, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "FeatureMatrix":
        header, payload = read_header(Path(path).read_bytes(), MAGIC)
        try:
            rows = int(header["rows"])
            blocks = [(b["name"], int(b["len"])) for b in header["blocks"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed FMAT1 header: {exc}") from None
        cols = sum(k for _, k in blocks)
        if len(payload) != 4 * rows * cols:
            raise FormatError(f"FMAT1 payload has {len(payload)} bytes, expected {4 * rows * cols}")
        vals = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float32)
        return cls(vals, blocks, header.get("dataset_hash", ""), header.get("config_hash", ""))


def hstack(mats, config_hash: str = "") -> FeatureMatrix:
    """Concatenate matrices over the same rows and dataset."""
    mats = list(mats)
    if not mats:
        raise ValueError("nothing to stack")
    ds = {m.dataset_hash for m in mats}
    if len(ds) != 1:
        raise ValueError(f"matrices come from different datasets: {sorted(ds)}")
    if len({m.rows for m in mats}) != 1:
        raise ValueError("matrices have different row counts")
    return FeatureMatrix(np.hstack([m.values for m in mats]), [b for m in mats for b in m.blocks],
                         mats[0].dataset_hash, config_hash)
