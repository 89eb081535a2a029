"""Immutable unit-norm embedding stores with exact cosine top-k search.

File format ("REMB", little-endian):

    bytes 0-3    magic ASCII "REMB"
    byte  4      version, currently 1
    bytes 5-7    reserved (zero on save; readers must not reject nonzero,
                 the projection cache stores a content tag here)
    bytes 8-15   u64 row count
    bytes 16-19  u32 dimension
    then         count x dim float32, row-major

Each embedding file has a JSON Lines sidecar at ``<path>.meta.jsonl`` with
one record per row, in row order:

    {"row": <int>, "id": "<str>", "label": <str|null>, "caption": <str|null>}

Records with ``row < 0`` are comment records (e.g. an extractor noting its
encoder id) and are skipped.

All similarity math accumulates in float64; reported scores are rounded to
float32 and ranking happens on the rounded value, ties broken by ascending
row index, so the tie rule is observable on the returned scores.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    BadMagic,
    DimMismatch,
    EmptyCandidateSet,
    MetaMismatch,
    NormViolation,
    TruncatedFile,
    VersionUnsupported,
    ZeroVector,
)

MAGIC = b"REMB"
VERSION = 1
HEADER_SIZE = 20
NORM_TOL = 1e-5

_HEADER = struct.Struct("<4sB3sQI")


@dataclass(frozen=True)
class RowMeta:
    """Per-row metadata record."""

    id: str
    label: str | None = None
    caption: str | None = None


class RetrievalEntry(NamedTuple):
    row: int
    score: float


@dataclass(frozen=True)
class RetrievalResult:
    """Ranked search hits: scores non-increasing, ties by ascending row."""

    entries: tuple[RetrievalEntry, ...]

    def rows(self) -> list[int]:
        return [e.row for e in self.entries]

    def scores(self) -> list[float]:
        return [e.score for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class EmbeddingStore:
    """Immutable matrix of unit-norm float32 rows plus per-row metadata."""

    vectors: np.ndarray
    meta: tuple[RowMeta, ...] = field(default=())

    def __post_init__(self):
        vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise DimMismatch(f"expected a 2-D matrix, got ndim={vectors.ndim}")
        if vectors.shape[1] < 1:
            raise DimMismatch("embedding dim must be >= 1")
        meta = tuple(self.meta)
        if not meta:
            meta = tuple(RowMeta(id=f"row-{i}") for i in range(vectors.shape[0]))
        if len(meta) != vectors.shape[0]:
            raise MetaMismatch(
                f"meta has {len(meta)} records for {vectors.shape[0]} rows"
            )
        seen: set[str] = set()
        for m in meta:
            if m.id in seen:
                raise MetaMismatch(f"duplicate id {m.id!r}")
            seen.add(m.id)
        validate_unit_rows(vectors)
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "meta", meta)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def id_of(self, row: int) -> str:
        return self.meta[row].id


def validate_unit_rows(vectors: np.ndarray, tol: float = NORM_TOL) -> None:
    """Raise NormViolation (with the offending row) unless all rows are unit."""
    if vectors.shape[0] == 0:
        return
    norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
    bad = np.nonzero(np.abs(norms - 1.0) > tol)[0]
    if bad.size:
        row = int(bad[0])
        raise NormViolation(row, float(norms[row]))


def normalize(v: np.ndarray) -> np.ndarray:
    """Scale ``v`` to unit L2 norm (float64). Raises ZeroVector on zero input."""
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ZeroVector("cannot normalize the zero vector")
    return v / n


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit vectors, accumulated in float64, rounded to float32."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimMismatch(f"shapes {a.shape} and {b.shape} differ")
    return float(np.float32(np.dot(a, b)))


def _scores_f32(vectors: np.ndarray, query: np.ndarray, threads: int = 1) -> np.ndarray:
    """Float32-rounded cosine scores of every row against ``query``.

    Row-sharded when threads > 1; each row's dot product is independent, so
    the concatenated result is bitwise identical to the sequential scan.
    """
    mat = vectors.astype(np.float64)
    q = query.astype(np.float64)
    n = mat.shape[0]
    if threads <= 1 or n < 2 * threads:
        return (mat @ q).astype(np.float32)
    bounds = np.linspace(0, n, threads + 1, dtype=int)
    chunks = [(int(bounds[i]), int(bounds[i + 1])) for i in range(threads)]
    out = np.empty(n, dtype=np.float32)

    def run(span):
        lo, hi = span
        out[lo:hi] = (mat[lo:hi] @ q).astype(np.float32)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(run, chunks))
    return out


def top_k(
    store: EmbeddingStore,
    query: np.ndarray,
    k: int,
    exclude: Sequence[int] | set[int] | None = None,
    threads: int = 1,
) -> RetrievalResult:
    """Exact top-k rows by cosine similarity.

    Returns the ``k`` highest-scoring rows not in ``exclude`` (fewer if the
    store is smaller). Ranking is on float32-rounded scores with ties broken
    by ascending row index, deterministically.
    """
    query = np.asarray(query, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if query.shape != (store.dim,):
        raise DimMismatch(
            f"query shape {query.shape} does not match store dim {store.dim}"
        )
    scores = _scores_f32(store.vectors, query, threads=threads)
    n_excluded = 0
    if exclude:
        idx = np.fromiter(set(int(r) for r in exclude), dtype=np.int64)
        scores = scores.copy()
        scores[idx] = -np.inf
        n_excluded = idx.size
    n_candidates = store.count - n_excluded
    if n_candidates <= 0:
        raise EmptyCandidateSet("all rows excluded from search")
    order = np.lexsort((np.arange(store.count), -scores))[: min(k, n_candidates)]
    entries = tuple(RetrievalEntry(int(r), float(scores[r])) for r in order)
    return RetrievalResult(entries=entries)


def _sidecar_path(path: Path | str) -> Path:
    return Path(str(path) + ".meta.jsonl")


def _meta_line(row: int, m: RowMeta) -> str:
    return json.dumps(
        {"row": row, "id": m.id, "label": m.label, "caption": m.caption},
        ensure_ascii=False,
        separators=(",", ":"),
    )


def write_matrix(path: Path | str, vectors: np.ndarray, reserved: bytes = b"\x00\x00\x00") -> None:
    """Write a bare REMB file (no sidecar)."""
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    if len(reserved) != 3:
        raise ValueError("reserved tag must be exactly 3 bytes")
    header = _HEADER.pack(MAGIC, VERSION, reserved, vectors.shape[0], vectors.shape[1])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(vectors.tobytes(order="C"))


def read_matrix(path: Path | str) -> tuple[np.ndarray, bytes]:
    """Read a bare REMB file; returns (float32 matrix, reserved bytes)."""
    data = Path(path).read_bytes()
    if len(data) < HEADER_SIZE:
        if data[:4] != MAGIC:
            raise BadMagic(f"{path}: expected magic {MAGIC!r}, got {data[:4]!r}")
        raise TruncatedFile(f"{path}: {len(data)} bytes is shorter than the header")
    magic, version, reserved, count, dim = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagic(f"{path}: expected magic {MAGIC!r}, got {magic!r}")
    if version != VERSION:
        raise VersionUnsupported(f"{path}: version {version} not supported")
    if dim < 1:
        raise TruncatedFile(f"{path}: header dim must be >= 1")
    expected = HEADER_SIZE + count * dim * 4
    if len(data) != expected:
        raise TruncatedFile(
            f"{path}: expected {expected} bytes for {count}x{dim}, got {len(data)}"
        )
    vectors = np.frombuffer(data, dtype="<f4", count=count * dim, offset=HEADER_SIZE)
    return vectors.reshape(count, dim).copy(), reserved


def save_store(store: EmbeddingStore, path: Path | str, reserved: bytes = b"\x00\x00\x00") -> None:
    """Persist store + sidecar. load_store(save_store(s)) is bit-for-bit s."""
    write_matrix(path, store.vectors, reserved=reserved)
    lines = [_meta_line(i, m) for i, m in enumerate(store.meta)]
    _sidecar_path(path).write_text(
        "".join(line + "\n" for line in lines), encoding="utf-8"
    )


def _read_sidecar(path: Path, count: int) -> tuple[RowMeta, ...]:
    meta: list[RowMeta] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MetaMismatch(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            row = rec.get("row")
            if isinstance(row, int) and row < 0:
                continue  # comment record (e.g. extractor encoder id)
            if row != len(meta):
                raise MetaMismatch(
                    f"{path}:{lineno}: row {row!r} out of order (expected {len(meta)})"
                )
            if "id" not in rec or not isinstance(rec["id"], str):
                raise MetaMismatch(f"{path}:{lineno}: missing string field 'id'")
            meta.append(
                RowMeta(id=rec["id"], label=rec.get("label"), caption=rec.get("caption"))
            )
    if len(meta) != count:
        raise MetaMismatch(
            f"{path}: sidecar has {len(meta)} rows, embedding file has {count}"
        )
    return tuple(meta)


def load_store(path: Path | str) -> EmbeddingStore:
    """Load and validate an embedding store (rows re-checked for unit norm)."""
    vectors, _ = read_matrix(path)
    meta = _read_sidecar(_sidecar_path(path), vectors.shape[0])
    return EmbeddingStore(vectors=vectors, meta=meta)
