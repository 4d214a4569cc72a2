"""Function-pair datasets and their binary file format.

A dataset is N pairs (u_i, v_i) sampled on one shared grid, each tagged with a
train/validation/test split. Files use a little-endian layout that round-trips
bit-exactly:

    magic  b"GQDS"
    u32    version (1)
    u32    n_samples
    u32    grid_n
    f64    domain_start
    f64    domain_end
    u8     periodic flag
    then per sample: u8 split tag, grid_n f64 (u), grid_n f64 (v)
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .fields import Grid1D

MAGIC = b"GQDS"
VERSION = 1
TRAIN, VAL, TEST = 0, 1, 2

_HEADER = struct.Struct("<4sIIIddB")


def split_counts(n):
    """Sizes (train, val, test) = (0.6, 0.2, rest) rounded to nearest.

    The fractional parts of 0.6*n and 0.2*n are multiples of 0.2, so
    round-to-nearest is never ambiguous.
    """
    n_train = int(np.floor(0.6 * n + 0.5))
    n_val = int(np.floor(0.2 * n + 0.5))
    return n_train, n_val, n - n_train - n_val


def assign_splits(n, seed):
    """Split tags from a seeded permutation: first block train, then val, test."""
    order = np.random.default_rng(seed).permutation(n)
    n_train, n_val, _ = split_counts(n)
    tags = np.empty(n, dtype=np.uint8)
    tags[order[:n_train]] = TRAIN
    tags[order[n_train : n_train + n_val]] = VAL
    tags[order[n_train + n_val :]] = TEST
    return tags


@dataclass
class FunctionPairDataset:
    grid: Grid1D
    u: np.ndarray  # (N, grid_n)
    v: np.ndarray  # (N, grid_n)
    split: np.ndarray  # (N,) uint8 tags
    seed: int | None = None  # generation seed (not serialized)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.u = np.ascontiguousarray(self.u, dtype=np.float64)
        self.v = np.ascontiguousarray(self.v, dtype=np.float64)
        self.split = np.ascontiguousarray(self.split, dtype=np.uint8)
        n, g = self.u.shape
        if self.v.shape != (n, g) or self.split.shape != (n,):
            raise ValueError("inconsistent dataset arrays")
        if g != self.grid.n:
            raise ValueError("arrays do not match the grid")

    def __len__(self):
        return self.u.shape[0]

    def indices(self, tag):
        return np.nonzero(self.split == tag)[0]

    def subset(self, tag):
        idx = self.indices(tag)
        return self.u[idx], self.v[idx]


def _sample_dtype(grid_n):
    return np.dtype([("tag", "u1"), ("u", "<f8", (grid_n,)), ("v", "<f8", (grid_n,))])


def save_gqds(path, ds):
    header = _HEADER.pack(
        MAGIC, VERSION, len(ds), ds.grid.n, ds.grid.start, ds.grid.end, int(ds.grid.periodic)
    )
    rec = np.empty(len(ds), dtype=_sample_dtype(ds.grid.n))
    rec["tag"] = ds.split
    rec["u"] = ds.u
    rec["v"] = ds.v
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rec.tobytes())


def load_gqds(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size or raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a GQDS file")
    magic, version, n, grid_n, start, end, periodic = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    dtype = _sample_dtype(grid_n)
    expected = _HEADER.size + n * dtype.itemsize
    if len(raw) != expected:
        raise ValueError(f"{path}: truncated or oversized payload")
    rec = np.frombuffer(raw, dtype=dtype, count=n, offset=_HEADER.size)
    grid = Grid1D(n=grid_n, start=start, end=end, periodic=bool(periodic))
    return FunctionPairDataset(
        grid=grid,
        u=rec["u"].copy(),
        v=rec["v"].copy(),
        split=rec["tag"].copy(),
    )
