"""FVRF binary tensors, datasets on disk, and provenance manifests.

Binary layout (all little-endian)::

    b"FVRF" | u32 version=1 | u32 ndim | ndim x u64 dims | f64 payload (row-major)

1D datasets are stored with ``K = n_unique + 1`` columns: the periodic endpoint
is appended as a copy of node 0 on write and dropped on read.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import Grid, Grid1D, grid_from_shape, restrict_values, restriction_factor

MAGIC = b"FVRF"
VERSION = 1


class FormatError(ValueError):
    pass


def encode_tensor(array: np.ndarray) -> bytes:
    array = np.ascontiguousarray(array, dtype="<f8")
    header = MAGIC + struct.pack("<II", VERSION, array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    return header + array.tobytes(order="C")


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise FormatError("not an FVRF tensor (bad magic)")
    version, ndim = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported FVRF version {version}")
    dims = struct.unpack_from(f"<{ndim}Q", buf, 12)
    offset = 12 + 8 * ndim
    count = int(np.prod(dims)) if ndim else 1
    if len(buf) - offset != 8 * count:
        raise FormatError(f"payload size {len(buf) - offset} does not match dims {dims}")
    return np.frombuffer(buf, dtype="<f8", count=count, offset=offset).reshape(dims).astype(float)


def write_tensor(path, array: np.ndarray) -> str:
    """Write ``array`` and return the sha256 digest of the file bytes."""
    data = encode_tensor(array)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def dump_json(path, obj) -> str:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    Path(path).write_text(text)
    return hashlib.sha256(text.encode()).hexdigest()


def to_external(grid: Grid, values: np.ndarray) -> np.ndarray:
    if grid.ndim == 1:
        return np.concatenate([values, values[..., :1]], axis=-1)
    return values


def from_external(values: np.ndarray) -> tuple[Grid, np.ndarray]:
    grid = grid_from_shape(values.shape[1:], external=True)
    if grid.ndim == 1:
        return grid, np.ascontiguousarray(values[..., :-1])
    return grid, values


@dataclass
class Dataset:
    """``n`` input/output field pairs on a common grid plus a provenance manifest."""

    grid: Grid
    inputs: np.ndarray
    outputs: np.ndarray
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = self.grid.shape
        for name in ("inputs", "outputs"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != len(expected) + 1 or arr.shape[1:] != expected:
                raise ValueError(f"{name} shape {arr.shape} does not match grid {self.grid}")
            setattr(self, name, arr)
        if len(self.inputs) != len(self.outputs):
            raise ValueError("inputs and outputs differ in sample count")

    @property
    def n(self) -> int:
        return len(self.inputs)

    def __len__(self) -> int:
        return self.n

    def subset(self, index) -> "Dataset":
        idx = np.arange(self.n)[index]
        man = dict(self.manifest, n=int(len(idx)))
        return Dataset(self.grid, self.inputs[idx], self.outputs[idx], man)

    def restrict(self, factor: int) -> "Dataset":
        coarse, a = restrict_values(self.grid, self.inputs, factor)
        _, y = restrict_values(self.grid, self.outputs, factor)
        man = dict(self.manifest)
        man.update(_resolution_fields(coarse))
        man["restricted_from"] = _resolution_fields(self.grid)
        return Dataset(coarse, a, y, man)

    def restrict_to(self, grid: Grid) -> "Dataset":
        return self.restrict(restriction_factor(self.grid, grid))

    def save(self, directory) -> dict[str, str]:
        """Write ``inputs.bin``, ``outputs.bin``, ``manifest.json``; returns file digests."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        digests = {
            "inputs.bin": write_tensor(d / "inputs.bin", to_external(self.grid, self.inputs)),
            "outputs.bin": write_tensor(d / "outputs.bin", to_external(self.grid, self.outputs)),
        }
        man = dict(self.manifest)
        man.update(_resolution_fields(self.grid))
        man["n"] = self.n
        man["files"] = digests
        digests["manifest.json"] = dump_json(d / "manifest.json", man)
        self.manifest = man
        return digests

    @classmethod
    def load(cls, directory, *, verify: bool = True) -> "Dataset":
        d = Path(directory)
        if not (d / "manifest.json").exists():
            raise FileNotFoundError(f"no dataset manifest in {d}")
        man = json.loads((d / "manifest.json").read_text())
        if verify:
            for name, digest in man.get("files", {}).items():
                if file_digest(d / name) != digest:
                    raise FormatError(f"digest mismatch for {d / name}")
        grid, a = from_external(read_tensor(d / "inputs.bin"))
        grid_y, y = from_external(read_tensor(d / "outputs.bin"))
        if grid_y != grid:
            raise FormatError("inputs and outputs live on different grids")
        return cls(grid, a, y, man)


def manifest_digest(directory) -> str:
    return file_digest(Path(directory) / "manifest.json")


def _resolution_fields(grid: Grid) -> dict:
    if isinstance(grid, Grid1D):
        return {"K": grid.K}
    return {"r": grid.r, "K": grid.K}
