"""Exact flat-scan nearest-neighbour retrieval and the stratified-random baseline.

Vector files (``AREV``) are little-endian: magic, u16 version, u32 count,
u32 dim, then per record a u32-length-prefixed UTF-8 id, a u32-length-prefixed
UTF-8 label (length 0 means no label) and ``dim`` float32 values.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

log = logging.getLogger(__name__)

METRICS = ("cosine", "dot", "euclidean")
MAGIC = b"AREV"
VERSION = 1


class IndexError_(ValueError):
    """Invalid index input (dimension mismatch, bad metric, empty store)."""


class VectorFileError(ValueError):
    pass


class BadMagic(VectorFileError):
    pass


class TruncatedPayload(VectorFileError):
    pass


class VersionMismatch(VectorFileError):
    pass


@dataclass(frozen=True, eq=False)
class VectorRecord:
    id: str
    vector: np.ndarray
    label: Optional[str] = None


@dataclass(frozen=True, eq=False)
class VectorIndex:
    dim: int
    metric: str
    ids: tuple[str, ...]
    labels: tuple[Optional[str], ...]
    matrix: np.ndarray
    rejected: tuple[str, ...] = ()
    position: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class RetrievalResult:
    ids: tuple[str, ...]
    scores: tuple[float, ...]


def build_index(records: Sequence[VectorRecord], metric: str = "cosine") -> VectorIndex:
    """Stack record vectors into a read-only matrix.

    Cosine indexes store normalised copies; records with a zero vector are
    rejected (listed in ``rejected``) rather than aborting the build.
    """
    if metric not in METRICS:
        raise IndexError_(f"metric must be one of {METRICS}")
    if not records:
        raise IndexError_("cannot index an empty store")
    dim = len(records[0].vector)
    seen = set()
    ids, labels, rows, rejected = [], [], [], []
    for r in records:
        v = np.asarray(r.vector, dtype=np.float64)
        if v.ndim != 1 or len(v) != dim:
            raise IndexError_(f"record {r.id!r} has dim {v.shape[-1] if v.ndim else 0}, expected {dim}")
        if r.id in seen:
            raise IndexError_(f"duplicate record id {r.id!r}")
        if not np.isfinite(v).all():
            raise IndexError_(f"record {r.id!r} has a non-finite value")
        seen.add(r.id)
        if metric == "cosine":
            norm = np.linalg.norm(v)
            if norm == 0:
                log.warning("rejecting zero vector %s under cosine metric", r.id)
                rejected.append(r.id)
                continue
            v = v / norm
        else:
            v = v.copy()
        ids.append(r.id)
        labels.append(r.label)
        rows.append(v)
    matrix = np.stack(rows) if rows else np.zeros((0, dim))
    matrix.setflags(write=False)
    return VectorIndex(dim, metric, tuple(ids), tuple(labels), matrix, tuple(rejected),
                       {i: n for n, i in enumerate(ids)})


def _scores(index: VectorIndex, query: np.ndarray) -> np.ndarray:
    if index.metric == "euclidean":
        return np.sqrt(((index.matrix - query) ** 2).sum(axis=1))
    if index.metric == "cosine":
        norm = np.linalg.norm(query)
        query = query / norm if norm > 0 else query
    return index.matrix @ query


def knn(index: VectorIndex, query, k: int = 10, exclude: Iterable[str] = ()) -> RetrievalResult:
    """Exact top-k. Similarity metrics sort descending, euclidean distance ascending.

    Equal scores keep insertion order.
    """
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (index.dim,):
        raise IndexError_(f"query has shape {q.shape}, index dim is {index.dim}")
    if k < 1:
        raise IndexError_("k must be >= 1")
    s = _scores(index, q)
    key = s if index.metric == "euclidean" else -s
    order = np.argsort(key, kind="stable")
    skip = set(exclude)
    picked = [i for i in order if index.ids[i] not in skip][:k]
    return RetrievalResult(tuple(index.ids[i] for i in picked), tuple(float(s[i]) for i in picked))


def stratified_random(records: Sequence[VectorRecord], k: int, rng_seed=0) -> list[str]:
    """Round-robin over labels (sorted) drawing without replacement inside each label."""
    if not records:
        raise IndexError_("empty store")
    if k < 1:
        raise IndexError_("k must be >= 1")
    rng = np.random.default_rng(rng_seed)
    groups: dict[str, list[str]] = {}
    for r in records:
        groups.setdefault("" if r.label is None else r.label, []).append(r.id)
    queues = {lab: [ids[i] for i in rng.permutation(len(ids))] for lab, ids in sorted(groups.items())}
    out: list[str] = []
    while len(out) < k and any(queues.values()):
        for lab in sorted(queues):
            if queues[lab] and len(out) < k:
                out.append(queues[lab].pop(0))
    return out


def save_vectors(path: Union[str, Path], records: Sequence[VectorRecord]) -> None:
    dim = len(records[0].vector) if records else 0
    parts = [MAGIC, struct.pack("<HII", VERSION, len(records), dim)]
    for r in records:
        v = np.asarray(r.vector)
        if v.shape != (dim,):
            raise IndexError_(f"record {r.id!r} has dim {v.shape}, expected {dim}")
        rid = r.id.encode("utf-8")
        lab = (r.label or "").encode("utf-8")
        parts += [struct.pack("<I", len(rid)), rid, struct.pack("<I", len(lab)), lab,
                  v.astype("<f4").tobytes()]
    Path(path).write_bytes(b"".join(parts))


def read_header(path: Union[str, Path]) -> tuple[int, int, int]:
    """(version, count, dim) of a vector file."""
    with open(path, "rb") as fh:
        head = fh.read(14)
    if head[:4] != MAGIC:
        raise BadMagic(f"{path}: bad magic")
    if len(head) < 14:
        raise TruncatedPayload(f"{path}: truncated payload")
    return struct.unpack_from("<HII", head, 4)


def load_vectors(path: Union[str, Path]) -> list[VectorRecord]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise BadMagic(f"{path}: bad magic")
    if len(data) < 14:
        raise TruncatedPayload(f"{path}: truncated payload")
    version, count, dim = struct.unpack_from("<HII", data, 4)
    if version != VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {VERSION}")
    off = 14

    def need(n: int) -> None:
        if off + n > len(data):
            raise TruncatedPayload(f"{path}: truncated payload")

    def string() -> str:
        nonlocal off
        need(4)
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        need(n)
        s = data[off:off + n].decode("utf-8")
        off += n
        return s

    out = []
    for _ in range(count):
        rid = string()
        lab = string()
        need(4 * dim)
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=off).copy()
        off += 4 * dim
        out.append(VectorRecord(rid, vec, lab or None))
    return out
