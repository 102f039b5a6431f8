"""Token-embedding providers: a deterministic hash encoder and EMB1 file stores.

Both providers emit the same shape contract: an L' x d float32 matrix where
L' = max(L, L_MIN) and rows past the real tokens are zero padding. L_MIN = 16
guarantees every kernel-size channel (2, 3, 5) produces at least one output
after conv -> pool -> conv.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import TokenizedText
from .errors import BadMagic, CorruptRecord, DimensionMismatch, UnknownId

L_MIN = 16
MAX_TOKENS = 512
DEFAULT_DIM = 512

EMB1_MAGIC = b"EMB1"


@dataclass(frozen=True)
class EmbeddedSequence:
    """Token embeddings for one text: values is (length x dim) float32."""

    values: np.ndarray
    source_id: str = ""

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def _pad_rows(matrix: np.ndarray, min_rows: int) -> np.ndarray:
    if matrix.shape[0] >= min_rows:
        return matrix
    pad = np.zeros((min_rows - matrix.shape[0], matrix.shape[1]), dtype=matrix.dtype)
    return np.concatenate([matrix, pad], axis=0)


def hash_token_vector(token: str, d: int, seed: int = 0) -> np.ndarray:
    """Unit vector derived from a seeded 64-bit hash of the token.

    blake2b(seed || token) seeds a PCG64 stream, so the result is identical
    across processes and platforms.
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    digest = hashlib.blake2b(
        seed.to_bytes(8, "little", signed=True) + token.encode("utf-8"),
        digest_size=8,
    ).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
    vec = rng.standard_normal(d)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:  # unreachable in practice; keep the contract total
        vec = np.zeros(d)
        vec[0] = 1.0
        norm = 1.0
    return (vec / norm).astype(np.float32)


class HashEmbeddingProvider:
    """Deterministic stand-in for contextual encoders; one vector per token."""

    mode = "hash-encoder"

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0, l_min: int = L_MIN):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.seed = seed
        self.l_min = l_min
        self._cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            vec = hash_token_vector(token, self.dim, self.seed)
            self._cache[token] = vec
        return vec

    def embed(self, text: TokenizedText | Sequence[str], source_id: str = "") -> EmbeddedSequence:
        tokens = text.tokens if isinstance(text, TokenizedText) else tuple(text)
        tokens = tokens[:MAX_TOKENS]
        if tokens:
            matrix = np.stack([self._token_vector(t) for t in tokens])
        else:
            matrix = np.zeros((0, self.dim), dtype=np.float32)
        return EmbeddedSequence(values=_pad_rows(matrix, self.l_min), source_id=source_id)


class EmbeddingStore:
    """Read-only view of an EMB1 file, fully validated at open time."""

    def __init__(self, dim: int, records: dict[str, np.ndarray]):
        self.dim = dim
        self._records = records

    @property
    def count(self) -> int:
        return len(self._records)

    def ids(self) -> list[str]:
        return list(self._records.keys())

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._records

    def get(self, record_id: str) -> np.ndarray:
        try:
            return self._records[record_id]
        except KeyError:
            raise UnknownId(f"id {record_id!r} not present in embedding store") from None


def open_embedding_store(path: str) -> EmbeddingStore:
    """Parse an EMB1 file, checking magic, header, and record framing."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != EMB1_MAGIC:
        raise BadMagic(f"{path}: not an EMB1 file")
    newline = blob.find(b"\n", 4)
    if newline < 0:
        raise CorruptRecord(f"{path}: missing header line")
    try:
        header = json.loads(blob[4:newline].decode("utf-8"))
        dim = int(header["dim"])
        count = int(header["count"])
        dtype = header["dtype"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptRecord(f"{path}: bad header: {exc}") from exc
    if dtype != "f32le":
        raise CorruptRecord(f"{path}: unsupported dtype {dtype!r}")
    if dim < 1 or count < 0:
        raise CorruptRecord(f"{path}: nonsensical header values")

    records: dict[str, np.ndarray] = {}
    offset = newline + 1
    for _ in range(count):
        if offset + 4 > len(blob):
            raise CorruptRecord(f"{path}: truncated before id length")
        (id_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        if offset + id_len > len(blob):
            raise CorruptRecord(f"{path}: truncated inside id bytes")
        record_id = blob[offset : offset + id_len].decode("utf-8")
        offset += id_len
        if offset + 4 > len(blob):
            raise CorruptRecord(f"{path}: truncated before token count")
        (token_count,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        body = 4 * token_count * dim
        if offset + body > len(blob):
            raise CorruptRecord(
                f"{path}: record {record_id!r} claims {token_count} tokens "
                f"but the file ends early"
            )
        if record_id in records:
            raise CorruptRecord(f"{path}: duplicate id {record_id!r}")
        matrix = np.frombuffer(blob, dtype="<f4", count=token_count * dim, offset=offset)
        records[record_id] = matrix.reshape(token_count, dim).copy()
        offset += body
    if offset != len(blob):
        raise CorruptRecord(f"{path}: {len(blob) - offset} trailing bytes")
    return EmbeddingStore(dim=dim, records=records)


def write_embedding_store(path: str, dim: int, items: Iterable[tuple[str, np.ndarray]]) -> None:
    """Write an EMB1 file. Matrices are cast to float32 little-endian."""
    payload = bytearray()
    count = 0
    for record_id, matrix in items:
        matrix = np.asarray(matrix, dtype="<f4")
        if matrix.ndim != 2 or matrix.shape[1] != dim:
            raise DimensionMismatch(
                f"record {record_id!r} has shape {matrix.shape}, expected (*, {dim})"
            )
        id_bytes = record_id.encode("utf-8")
        payload += struct.pack("<I", len(id_bytes))
        payload += id_bytes
        payload += struct.pack("<I", matrix.shape[0])
        payload += matrix.tobytes(order="C")
        count += 1
    header = json.dumps({"dim": dim, "count": count, "dtype": "f32le"}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(EMB1_MAGIC)
        f.write(header)
        f.write(b"\n")
        f.write(bytes(payload))


class FileEmbeddingProvider:
    """Serves precomputed embeddings (e.g. transformer outputs) by record id."""

    mode = "file-backed"

    def __init__(self, store: EmbeddingStore, dim: int | None = None, l_min: int = L_MIN):
        if dim is not None and dim != store.dim:
            raise DimensionMismatch(f"store dim {store.dim} != requested dim {dim}")
        self.store = store
        self.dim = store.dim
        self.l_min = l_min

    @classmethod
    def open(cls, path: str, dim: int | None = None) -> "FileEmbeddingProvider":
        return cls(open_embedding_store(path), dim=dim)

    def embed(self, record_id: str, source_id: str = "") -> EmbeddedSequence:
        matrix = self.store.get(record_id)[:MAX_TOKENS]
        return EmbeddedSequence(
            values=_pad_rows(matrix.astype(np.float32, copy=False), self.l_min),
            source_id=source_id or record_id,
        )
