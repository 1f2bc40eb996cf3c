"""Sentence embeddings via an external HTTP service, plus a binary vector store.

The service contract: POST {"input": [texts], "model": tag} and get back
{"data": [{"index": i, "embedding": [...]}]} where entries may arrive in any
order. Auth is a bearer token read from BENCHGAP_EMBED_KEY.
"""

from __future__ import annotations

import logging
import os
import random
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import requests

from .errors import EmbedError, StoreError
from .records import sha256_text

log = logging.getLogger(__name__)

MAGIC = b"BGEM"
VERSION = 1

TRANSIENT_STATUS = frozenset({429, 500, 502, 503, 504})


@dataclass
class EmbeddingMatrix:
    ids: list[str]
    vectors: np.ndarray  # N x d float32
    encoder_tag: str

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=np.float32)
        if vec.ndim != 2:
            raise EmbedError(f"vectors must be 2-D, got shape {vec.shape}")
        if not np.isfinite(vec).all():
            raise EmbedError("vectors contain non-finite entries")
        if len(self.ids) != vec.shape[0]:
            raise EmbedError("ids must align with vector rows")
        if len(set(self.ids)) != len(self.ids):
            raise EmbedError("ids must be unique")
        self.vectors = vec

    @property
    def dimension(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return int(self.vectors.shape[0])

    def content_digest(self) -> str:
        return sha256_text(
            "\n".join(self.ids) + "|" + self.encoder_tag + "|" + self.vectors.tobytes().hex()
        )


@dataclass
class EmbeddingClient:
    url: str
    encoder_tag: str
    timeout: float = 30.0
    max_attempts: int = 5
    backoff_base: float = 0.5
    max_in_flight: int = 4
    api_key_env: str = "BENCHGAP_EMBED_KEY"

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers


def _post_with_retries(client: EmbeddingClient, payload: dict) -> dict:
    last_error = None
    for attempt in range(client.max_attempts):
        if attempt:
            delay = client.backoff_base * (2 ** (attempt - 1))
            time.sleep(delay * (1.0 + 0.25 * random.random()))
        try:
            resp = requests.post(
                client.url, json=payload, headers=client._headers(), timeout=client.timeout
            )
        except requests.RequestException as exc:
            last_error = f"request failed: {exc}"
            log.warning("embedding request attempt %d failed: %s", attempt + 1, exc)
            continue
        if resp.status_code in TRANSIENT_STATUS:
            last_error = f"transient HTTP {resp.status_code}"
            log.warning("embedding request attempt %d got HTTP %d", attempt + 1, resp.status_code)
            continue
        if resp.status_code != 200:
            raise EmbedError(f"embedding endpoint returned HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise EmbedError(f"embedding endpoint returned invalid JSON: {exc}") from exc
    raise EmbedError(f"embedding request failed after {client.max_attempts} attempts: {last_error}")


def _fetch_batch(client: EmbeddingClient, texts: list[str]) -> list[list[float]]:
    body = _post_with_retries(client, {"input": texts, "model": client.encoder_tag})
    data = body.get("data")
    if not isinstance(data, list) or len(data) != len(texts):
        raise EmbedError(
            f"embedding response has {len(data) if isinstance(data, list) else 'no'} entries "
            f"for a batch of {len(texts)}"
        )
    by_index: dict[int, list[float]] = {}
    for entry in data:
        idx = entry.get("index")
        vec = entry.get("embedding")
        if not isinstance(idx, int) or idx in by_index or not (0 <= idx < len(texts)):
            raise EmbedError(f"embedding response has a bad or duplicate index: {idx!r}")
        if not isinstance(vec, list) or not vec:
            raise EmbedError(f"empty embedding vector at index {idx}")
        by_index[idx] = vec
    return [by_index[i] for i in range(len(texts))]


def fetch_embeddings(
    statements: Sequence[str],
    client: EmbeddingClient,
    batch_size: int = 64,
    ids: Sequence[str] | None = None,
) -> EmbeddingMatrix:
    """Embed all statements, order preserved, batched with bounded concurrency."""
    if batch_size < 1:
        raise EmbedError("batch_size must be >= 1")
    texts = list(statements)
    row_ids = list(ids) if ids is not None else [str(i) for i in range(len(texts))]
    if len(row_ids) != len(texts):
        raise EmbedError("ids must align with statements")
    if not texts:
        return EmbeddingMatrix(ids=[], vectors=np.zeros((0, 0), dtype=np.float32), encoder_tag=client.encoder_tag)

    batches = [texts[i : i + batch_size] for i in range(0, len(texts), batch_size)]
    results: list[list[list[float]] | None] = [None] * len(batches)
    workers = max(1, min(client.max_in_flight, len(batches)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(_fetch_batch, client, batch): i for i, batch in enumerate(batches)}
        for future, i in futures.items():
            results[i] = future.result()

    dim = len(results[0][0])
    rows: list[list[float]] = []
    for batch_vecs in results:
        for vec in batch_vecs:
            if len(vec) != dim:
                raise EmbedError(f"dimension mismatch across batches: got {len(vec)}, expected {dim}")
            rows.append(vec)
    return EmbeddingMatrix(
        ids=row_ids,
        vectors=np.asarray(rows, dtype=np.float32),
        encoder_tag=client.encoder_tag,
    )


# ---------------------------------------------------------------------------
# Vector store: magic, version, N, d, encoder tag, ids, then row-major float32


def save_embeddings(matrix: EmbeddingMatrix, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tag = matrix.encoder_tag.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQI", VERSION, len(matrix), matrix.dimension))
        fh.write(struct.pack("<I", len(tag)))
        fh.write(tag)
        for pid in matrix.ids:
            raw = pid.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(np.ascontiguousarray(matrix.vectors, dtype="<f4").tobytes())


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise StoreError(f"truncated store while reading {what}: expected {count} bytes, found {len(data)}")
    return data


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    path = Path(path)
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise StoreError(f"{path}: not a vector store (bad magic)")
        version, n, d = struct.unpack("<IQI", _read_exact(fh, 16, "header"))
        if version != VERSION:
            raise StoreError(f"{path}: unsupported store version {version}")
        (tag_len,) = struct.unpack("<I", _read_exact(fh, 4, "tag length"))
        tag = _read_exact(fh, tag_len, "encoder tag").decode("utf-8")
        ids = []
        for i in range(n):
            (id_len,) = struct.unpack("<I", _read_exact(fh, 4, f"id length {i}"))
            ids.append(_read_exact(fh, id_len, f"id {i}").decode("utf-8"))
        payload = _read_exact(fh, n * d * 4, "vector block")
        trailing = fh.read(1)
        if trailing:
            raise StoreError(f"{path}: unexpected trailing bytes after vector block")
    vectors = np.frombuffer(payload, dtype="<f4").reshape(n, d).copy()
    return EmbeddingMatrix(ids=ids, vectors=vectors, encoder_tag=tag)
