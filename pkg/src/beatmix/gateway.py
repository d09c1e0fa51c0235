"""Embedding and classifier-posterior transport.

This is the only module that talks to embedding providers; everything in
``metrics`` is pure given its outputs. Vectors are L2-normalized at the
boundary, so a dot product downstream is always a cosine similarity.

Two on-disk formats are supported:

* binary (preferred, bit-exact): header ``magic, u32 dim, u32 count``, then
  per record ``u16 id_len, id bytes (UTF-8), dim x f32 little-endian``.
  Magic is ``EMB1`` for embeddings, ``POS1`` for posteriors.
* CSV fallback: one record per line, ``id, v1, ..., vD``.

A small HTTP client covers live providers: POST ``<endpoint>/embed/audio``
with WAV bytes, or ``<endpoint>/embed/text`` with UTF-8 text; the response
is JSON ``{"dim": D, "vector": [...]}``.
"""

import csv
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import requests

from .dsp import Waveform
from .errors import (
    BadStatus,
    DimMismatch,
    DuplicateId,
    NotAProbability,
    SchemaError,
    Timeout,
    ZeroNorm,
)
from .wavio import wav_bytes

EMB_MAGIC = b"EMB1"
POS_MAGIC = b"POS1"


@dataclass
class Embedding:
    vector: np.ndarray
    modality: str = "audio"  # "audio" | "text"
    id: str = ""

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.ndim != 1:
            raise ValueError("embedding vector must be 1-D")


@dataclass
class ClassPosterior:
    probs: np.ndarray
    id: str = ""

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)


def normalize(emb: Embedding) -> Embedding:
    """Scale to unit L2 norm. Raises ZeroNorm on a zero vector."""
    norm = float(np.linalg.norm(emb.vector))
    if norm <= 0.0 or not np.isfinite(norm):
        raise ZeroNorm(f"embedding {emb.id!r} has no direction")
    return Embedding(emb.vector / norm, emb.modality, emb.id)


# --- file transport ---------------------------------------------------------

def _write_records(path, magic: bytes, records: list[tuple[str, np.ndarray]], dim: int):
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<II", dim, len(records)))
        for rec_id, vec in records:
            id_bytes = rec_id.encode("utf-8")
            if len(id_bytes) > 0xFFFF:
                raise ValueError(f"id too long: {rec_id!r}")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(np.asarray(vec, dtype="<f4").tobytes())


def _read_records(path, magic: bytes) -> tuple[int, list[tuple[str, np.ndarray]]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12:
        raise SchemaError(f"{path}: too small for a header")
    if data[:4] != magic:
        raise SchemaError(f"{path}: bad magic {data[:4]!r}, expected {magic!r}")
    dim, count = struct.unpack_from("<II", data, 4)
    if dim == 0:
        raise SchemaError(f"{path}: header declares dim 0")
    pos = 12
    records = []
    for _ in range(count):
        if pos + 2 > len(data):
            raise SchemaError(f"{path}: truncated record header")
        (id_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        if pos + id_len + 4 * dim > len(data):
            raise DimMismatch(
                f"{path}: record for dim {dim} runs past end of file (truncated row?)"
            )
        rec_id = data[pos : pos + id_len].decode("utf-8")
        pos += id_len
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=pos).astype(np.float64)
        pos += 4 * dim
        records.append((rec_id, vec))
    if pos != len(data):
        raise SchemaError(f"{path}: {len(data) - pos} trailing bytes after last record")
    return dim, records


def _read_csv(path) -> tuple[int, list[tuple[str, np.ndarray]]]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = list(enumerate(csv.reader(fh), start=1))
    except (UnicodeDecodeError, csv.Error) as exc:
        raise SchemaError(f"{path}: neither a known binary set nor CSV ({exc})") from exc
    records = []
    dim = None
    for line_no, row in rows:
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        rec_id, *vals = row
        if dim is None:
            dim = len(vals)
            if dim == 0:
                raise SchemaError(f"{path}:{line_no}: row has no values")
        if len(vals) != dim:
            raise DimMismatch(
                f"{path}:{line_no}: row has {len(vals)} values, expected {dim}"
            )
        try:
            vec = np.array([float(v) for v in vals])
        except ValueError as exc:
            raise SchemaError(f"{path}:{line_no}: non-numeric value ({exc})") from exc
        records.append((rec_id.strip(), vec))
    if dim is None:
        raise SchemaError(f"{path}: no records")
    return dim, records


def _is_csv(path) -> bool:
    if str(path).lower().endswith(".csv"):
        return True
    with open(path, "rb") as fh:
        head = fh.read(4)
    return head not in (EMB_MAGIC, POS_MAGIC)


def save_embedding_set(path, embeddings: dict[str, Embedding]) -> None:
    items = sorted(embeddings.items())
    if not items:
        raise ValueError("refusing to write an empty embedding set")
    dim = items[0][1].vector.size
    for rec_id, emb in items:
        if emb.vector.size != dim:
            raise DimMismatch(f"embedding {rec_id!r} has dim {emb.vector.size}, set has {dim}")
    _write_records(path, EMB_MAGIC, [(rid, e.vector) for rid, e in items], dim)


def load_embedding_set(path, modality: str = "audio") -> dict[str, Embedding]:
    """Load and normalize a whole embedding set; duplicate ids are rejected."""
    dim, records = _read_csv(path) if _is_csv(path) else _read_records(path, EMB_MAGIC)
    out: dict[str, Embedding] = {}
    for rec_id, vec in records:
        if rec_id in out:
            raise DuplicateId(f"{path}: id {rec_id!r} appears twice")
        out[rec_id] = normalize(Embedding(vec, modality, rec_id))
    return out


def save_posterior_set(path, posteriors: dict[str, ClassPosterior]) -> None:
    items = sorted(posteriors.items())
    if not items:
        raise ValueError("refusing to write an empty posterior set")
    dim = items[0][1].probs.size
    _write_records(path, POS_MAGIC, [(rid, p.probs) for rid, p in items], dim)


def load_posterior_set(path) -> dict[str, ClassPosterior]:
    """Load classifier posteriors; rows must sum to 1 within 1%, and are
    renormalized to sum exactly 1."""
    dim, records = _read_csv(path) if _is_csv(path) else _read_records(path, POS_MAGIC)
    out: dict[str, ClassPosterior] = {}
    for rec_id, vec in records:
        if rec_id in out:
            raise DuplicateId(f"{path}: id {rec_id!r} appears twice")
        if np.any(vec < 0) or not np.all(np.isfinite(vec)):
            raise NotAProbability(f"{path}: row {rec_id!r} has negative or non-finite entries")
        total = float(vec.sum())
        if not (0.99 <= total <= 1.01):
            raise NotAProbability(f"{path}: row {rec_id!r} sums to {total:.4f}, not ~1")
        out[rec_id] = ClassPosterior(vec / total, rec_id)
    return out


# --- HTTP client ------------------------------------------------------------

class EmbeddingClient:
    """Client for a remote embedding service with bounded retries.

    Retries cover timeouts, connection errors, and 5xx responses, with
    exponential backoff; 4xx responses fail immediately. ``last_attempts``
    reports how many requests the most recent call used.
    """

    def __init__(
        self,
        endpoint: str,
        expected_dim: int | None = None,
        timeout: float = 10.0,
        retries: int = 3,
        backoff: float = 0.25,
        session=None,
        sleep=time.sleep,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.expected_dim = expected_dim
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.session = session or requests.Session()
        self.last_attempts = 0
        self._sleep = sleep

    def embed_audio(self, wave: Waveform, rec_id: str = "") -> Embedding:
        body = wav_bytes(wave)
        return self._post("/embed/audio", body, "audio/wav", "audio", rec_id)

    def embed_text(self, text: str, rec_id: str = "") -> Embedding:
        return self._post(
            "/embed/text", text.encode("utf-8"), "text/plain; charset=utf-8", "text", rec_id
        )

    def embed_many(self, items, max_inflight: int = 8) -> dict[str, Embedding]:
        """Fetch embeddings for ``{id: Waveform | str}`` with bounded
        parallelism. No ordering guarantees between requests; the result is
        keyed by id. ``last_attempts`` is only meaningful for sequential
        calls, not across a parallel batch."""

        def one(pair):
            rec_id, payload = pair
            if isinstance(payload, Waveform):
                return rec_id, self.embed_audio(payload, rec_id)
            return rec_id, self.embed_text(str(payload), rec_id)

        with ThreadPoolExecutor(max_workers=max(1, max_inflight)) as pool:
            return dict(pool.map(one, sorted(items.items())))

    def _post(self, route, body, content_type, modality, rec_id) -> Embedding:
        url = self.endpoint + route
        self.last_attempts = 0
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            self.last_attempts += 1
            try:
                resp = self.session.post(
                    url, data=body, headers={"Content-Type": content_type},
                    timeout=self.timeout,
                )
            except requests.Timeout as exc:
                last_error = Timeout(f"{url}: no answer within {self.timeout}s")
                last_error.__cause__ = exc
                continue
            except requests.ConnectionError as exc:
                last_error = Timeout(f"{url}: connection failed ({exc})")
                continue
            if 500 <= resp.status_code < 600:
                last_error = BadStatus(f"{url}: HTTP {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise BadStatus(f"{url}: HTTP {resp.status_code}")
            return self._parse(resp, modality, rec_id, url)
        raise last_error if last_error is not None else Timeout(f"{url}: no attempts made")

    def _parse(self, resp, modality, rec_id, url) -> Embedding:
        try:
            payload = resp.json()
        except ValueError as exc:
            raise SchemaError(f"{url}: response is not JSON") from exc
        if not isinstance(payload, dict) or "dim" not in payload or "vector" not in payload:
            raise SchemaError(f"{url}: response must be an object with 'dim' and 'vector'")
        vector = np.asarray(payload["vector"], dtype=np.float64)
        if vector.ndim != 1 or vector.size != payload["dim"]:
            raise SchemaError(
                f"{url}: vector length {vector.size} disagrees with dim {payload['dim']}"
            )
        if self.expected_dim is not None and vector.size != self.expected_dim:
            raise DimMismatch(
                f"{url}: provider returned dim {vector.size}, expected {self.expected_dim}"
            )
        return normalize(Embedding(vector, modality, rec_id))
