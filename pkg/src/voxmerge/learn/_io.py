"""JSON-header + little-endian f32 payload files (CODEBOOK1, DICT1, MODEL1, FMAT1)."""
import json
from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..volume import read_header


def write_blob(path, header: dict, arrays) -> None:
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_blob(path, magic: str) -> tuple[dict, np.ndarray]:
    header, payload = read_header(Path(path).read_bytes(), magic)
    if len(payload) % 4:
        raise FormatError(f"payload of {len(payload)} bytes is not a whole number of f32 values")
    return header, np.frombuffer(payload, dtype="<f4").astype(np.float32)


def expect_size(values: np.ndarray, n: int, what: str) -> None:
    if values.size != n:
        raise FormatError(f"{what}: expected {n} values ({4 * n} bytes), got {values.size} ({4 * values.size} bytes)")
