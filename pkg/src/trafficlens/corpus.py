"""Chunking of the four evidence modalities, embedding, and session-scoped storage.

Chunks from protocol logs (per uid), the enriched report (per section), flow
narratives (per block), and the packet view (semantic segments) are embedded
and persisted in flat per-session directories: chunks.jsonl + vectors.bin +
manifest.json. A small index file keeps at most the three most recently used
sessions; re-ingesting unchanged inputs only repoints the latest-session
pointer.
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import re
import shutil
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .capture import ProtocolEvent
from .errors import EmbedderUnavailable, EmptyText, SessionNotFound

MODALITIES = ("ProtocolLog", "Report", "FlowSummary", "PacketView")
DEFAULT_DIMS = 256
DEFAULT_BREAKPOINT_PCT = 95.0
DEFAULT_MAX_CHUNK_LINES = 40
MAX_SESSIONS = 3
SCHEMA_VERSION = 1

INDEX_FILE = "session_index.json"


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    text: str
    modality: str  # ProtocolLog | Report | FlowSummary | PacketView
    level: str  # Session | Section | Flow | Segment
    source_uid: Optional[str] = None
    seq: int = 0


def normalize_text(text: str) -> str:
    """LF line endings, trailing whitespace trimmed per line."""
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    return "\n".join(line.rstrip() for line in text.split("\n"))


def chunk_id_for(text: str, modality: str) -> str:
    return hashlib.sha256((modality + "\n" + normalize_text(text)).encode("utf-8")).hexdigest()


def make_chunk(text: str, modality: str, level: str, source_uid=None, seq: int = 0) -> Chunk:
    norm = normalize_text(text).strip("\n")
    return Chunk(chunk_id=chunk_id_for(norm, modality), text=norm, modality=modality,
                 level=level, source_uid=source_uid, seq=seq)


# --- embedders ---

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class HashingEmbedder:
    """Deterministic local embedder: each token lands in 2 signed buckets."""

    name = "hashing"

    def __init__(self, dims: int = DEFAULT_DIMS):
        self.dims = dims

    def token_buckets(self, token: str):
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        b1 = int.from_bytes(digest[0:4], "big") % self.dims
        s1 = 1.0 if digest[4] & 1 else -1.0
        b2 = int.from_bytes(digest[5:9], "big") % self.dims
        s2 = 1.0 if digest[9] & 1 else -1.0
        return (b1, s1), (b2, s2)

    def embed(self, text: str) -> np.ndarray:
        tokens = _TOKEN_RE.findall(text.lower())
        if not tokens:
            raise EmptyText("no tokens to embed")
        vec = np.zeros(self.dims, dtype=np.float64)
        for token in tokens:
            (b1, s1), (b2, s2) = self.token_buckets(token)
            vec[b1] += s1
            vec[b2] += s2
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:  # pathological full cancellation
            vec[self.token_buckets(tokens[0])[0][0]] = 1.0
            norm = 1.0
        return (vec / norm).astype(np.float32)


class RemoteEmbedder:
    """HTTP embedder client: POST {endpoint}/embed {"text"} -> {"vector"}."""

    name = "remote"

    def __init__(self, endpoint: str, timeout: float = 10.0, session=None):
        import requests

        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self._session = session or requests.Session()
        self.dims = self._probe_dims()

    def _probe_dims(self) -> int:
        try:
            resp = self._session.get(f"{self.endpoint}/info", timeout=self.timeout)
            resp.raise_for_status()
            return int(resp.json()["dims"])
        except Exception as exc:
            raise EmbedderUnavailable(str(exc)) from exc

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            raise EmptyText("no tokens to embed")
        try:
            resp = self._session.post(f"{self.endpoint}/embed", json={"text": text},
                                      timeout=self.timeout)
            resp.raise_for_status()
            vec = np.asarray(resp.json()["vector"], dtype=np.float64)
        except EmptyText:
            raise
        except Exception as exc:
            raise EmbedderUnavailable(str(exc)) from exc
        if vec.shape != (self.dims,):
            raise EmbedderUnavailable(f"bad vector shape {vec.shape}")
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise EmbedderUnavailable("zero vector from remote embedder")
        return (vec / norm).astype(np.float32)


def embed(text: str, embedder) -> np.ndarray:
    """Unit-norm embedding of one text with the given pluggable embedder."""
    return embedder.embed(text)


# --- chunkers ---

def chunk_protocol_logs(events) -> list:
    """One chunk per uid, all that uid's events across log kinds, ts-ordered."""
    by_uid = {}
    first_ts = {}
    for ev in events:
        by_uid.setdefault(ev.uid, []).append(ev)
        first_ts[ev.uid] = min(first_ts.get(ev.uid, ev.ts), ev.ts)
    chunks = []
    for seq, uid in enumerate(sorted(by_uid, key=lambda u: (first_ts[u], u))):
        ordered = sorted(by_uid[uid], key=lambda e: (e.ts, e.log_kind))
        text = "\n".join(json.dumps(e.to_json_obj(), ensure_ascii=False) for e in ordered)
        chunks.append(make_chunk(text, "ProtocolLog", "Session", source_uid=uid, seq=seq))
    return chunks


def chunk_report(report) -> list:
    """One chunk per report section: global stats, narratives, metadata subsections."""
    chunks = []
    for seq, (kind, label, text) in enumerate(report.sections()):
        chunks.append(make_chunk(text, "Report", "Section", seq=seq))
    return chunks


def split_report_sections(text: str) -> list:
    """Recover a rendered report's sections (blank-line separated)."""
    return [part.strip("\n") for part in text.split("\n\n") if part.strip()]


def chunk_flows(narrative_text: str) -> list:
    """One chunk per flow block plus one for the trailing global summary block."""
    blocks = [b for b in narrative_text.split("\n\n") if b.strip()]
    chunks = []
    for seq, block in enumerate(blocks):
        uid = None
        first = block.splitlines()[0]
        if first.startswith("Flow ") and ":" in first:
            uid = first[len("Flow "):].split(":", 1)[0]
        chunks.append(make_chunk(block, "FlowSummary", "Flow", source_uid=uid, seq=seq))
    return chunks


def chunk_packets_semantic(packet_lines, embedder, breakpoint_pct: float = DEFAULT_BREAKPOINT_PCT,
                           max_chunk_lines: int = DEFAULT_MAX_CHUNK_LINES) -> list:
    """Split consecutive packet lines where embedding cosine distance spikes.

    Split points are distances strictly above the breakpoint percentile; a hard
    split caps every chunk at max_chunk_lines.
    """
    lines = [line for line in packet_lines if line.strip()]
    if not lines:
        return []
    if len(lines) == 1:
        return [make_chunk(lines[0], "PacketView", "Segment", seq=0)]
    vectors = [embedder.embed(line) for line in lines]
    distances = np.array([1.0 - float(np.dot(vectors[i], vectors[i + 1]))
                          for i in range(len(lines) - 1)])
    threshold = float(np.percentile(distances, breakpoint_pct))
    groups = []
    current = [lines[0]]
    for i in range(1, len(lines)):
        if distances[i - 1] > threshold or len(current) >= max_chunk_lines:
            groups.append(current)
            current = []
        current.append(lines[i])
    groups.append(current)
    return [make_chunk("\n".join(group), "PacketView", "Segment", seq=seq)
            for seq, group in enumerate(groups)]


# --- session store ---

@dataclass
class SessionStore:
    session_id: str
    created_at: float
    input_hashes: frozenset
    directory: Path
    chunks: list  # Chunk, in stored order
    matrix: np.ndarray  # float32 (n, dims), unit rows
    dims: int

    def __len__(self):
        return len(self.chunks)

    def by_id(self, chunk_id: str) -> Optional[Chunk]:
        for chunk in self.chunks:
            if chunk.chunk_id == chunk_id:
                return chunk
        return None


@dataclass(frozen=True)
class ArtifactPaths:
    """The four evidence files one capture produces."""

    protocol_logs: Path
    report: Path
    flows: Path
    packets: Path

    def all(self):
        return (self.protocol_logs, self.report, self.flows, self.packets)


@dataclass(frozen=True)
class IngestResult:
    session_id: str
    reused: bool


def _file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def load_protocol_events(path) -> list:
    events = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            fields = {k: v for k, v in obj.items() if k not in ("ts", "uid", "log")}
            events.append(ProtocolEvent(uid=obj["uid"], ts=obj["ts"], log_kind=obj["log"],
                                        fields=fields))
    return events


def _read_index(root: Path) -> dict:
    path = root / INDEX_FILE
    if not path.is_file():
        return {"entries": [], "latest": None}
    return json.loads(path.read_text())


def _write_index(root: Path, index: dict) -> None:
    tmp = root / (INDEX_FILE + ".tmp")
    tmp.write_text(json.dumps(index, indent=2))
    tmp.replace(root / INDEX_FILE)


def list_sessions(root) -> list:
    return _read_index(Path(root))["entries"]


def latest_session(root) -> Optional[str]:
    return _read_index(Path(root))["latest"]


def load_session(root, session_id: str) -> SessionStore:
    root = Path(root)
    directory = root / session_id
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise SessionNotFound(session_id)
    manifest = json.loads(manifest_path.read_text())
    chunks = []
    with open(directory / "chunks.jsonl", encoding="utf-8") as fh:
        for line in fh:
            obj = json.loads(line)
            chunks.append(Chunk(chunk_id=obj["chunk_id"], text=obj["text"],
                                modality=obj["modality"], level=obj["level"],
                                source_uid=obj.get("source_uid"), seq=obj["seq"]))
    dims = manifest["dims"]
    raw = np.fromfile(directory / "vectors.bin", dtype="<f4")
    matrix = raw.reshape(len(chunks), dims) if len(chunks) else raw.reshape(0, dims)
    return SessionStore(session_id=session_id, created_at=manifest["created_at"],
                        input_hashes=frozenset(manifest["input_hashes"]),
                        directory=directory, chunks=chunks, matrix=matrix, dims=dims)


def chunk_artifacts(artifacts: ArtifactPaths, embedder,
                    breakpoint_pct: float = DEFAULT_BREAKPOINT_PCT) -> list:
    """All four modalities chunked from their files, deduplicated by chunk_id."""
    chunks = []
    chunks.extend(chunk_protocol_logs(load_protocol_events(artifacts.protocol_logs)))
    report_text = Path(artifacts.report).read_text(encoding="utf-8")
    for seq, section in enumerate(split_report_sections(report_text)):
        chunks.append(make_chunk(section, "Report", "Section", seq=seq))
    chunks.extend(chunk_flows(Path(artifacts.flows).read_text(encoding="utf-8")))
    packet_lines = Path(artifacts.packets).read_text(encoding="utf-8").splitlines()
    chunks.extend(chunk_packets_semantic(packet_lines, embedder, breakpoint_pct))
    seen = set()
    unique = []
    for chunk in chunks:
        if chunk.chunk_id in seen:
            continue
        seen.add(chunk.chunk_id)
        unique.append(chunk)
    return unique


def ingest(artifacts: ArtifactPaths, root, embedder, capture_hash: str,
           breakpoint_pct: float = DEFAULT_BREAKPOINT_PCT, now=time.time) -> IngestResult:
    """Embed and persist one capture's artifacts, or reuse an identical session.

    If the input hash set matches any retained session, nothing is chunked or
    embedded; the latest pointer is repointed and recency refreshed. Otherwise
    a new session directory is built atomically and LRU eviction keeps at most
    three sessions. A failed ingest leaves the index and directories untouched.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    input_hashes = frozenset(_file_hash(p) for p in artifacts.all())

    with open(root / ".lock", "w") as lock:
        fcntl.flock(lock, fcntl.LOCK_EX)
        try:
            index = _read_index(root)

            for entry in index["entries"]:
                manifest_path = root / entry["session_id"] / "manifest.json"
                if not manifest_path.is_file():
                    continue
                manifest = json.loads(manifest_path.read_text())
                if frozenset(manifest["input_hashes"]) == input_hashes:
                    index["entries"] = [e for e in index["entries"] if e is not entry] + [entry]
                    index["latest"] = entry["session_id"]
                    _write_index(root, index)
                    return IngestResult(session_id=entry["session_id"], reused=True)

            created_at = now()
            stamp = time.strftime("%Y%m%dT%H%M%SZ", time.gmtime(created_at))
            session_id = f"{stamp}-{capture_hash[:8]}"
            n = 2
            while (root / session_id).exists():
                session_id = f"{stamp}-{capture_hash[:8]}-{n}"
                n += 1

            tmp_dir = root / f".tmp-{session_id}"
            try:
                tmp_dir.mkdir(parents=True)
                chunks = chunk_artifacts(artifacts, embedder, breakpoint_pct)
                vectors = np.stack([embedder.embed(c.text) for c in chunks]) if chunks \
                    else np.zeros((0, embedder.dims), dtype=np.float32)
                with open(tmp_dir / "chunks.jsonl", "w", encoding="utf-8") as fh:
                    for chunk in chunks:
                        fh.write(json.dumps({
                            "chunk_id": chunk.chunk_id, "modality": chunk.modality,
                            "level": chunk.level, "source_uid": chunk.source_uid,
                            "seq": chunk.seq, "text": chunk.text,
                        }, ensure_ascii=False) + "\n")
                vectors.astype("<f4").tofile(tmp_dir / "vectors.bin")
                (tmp_dir / "manifest.json").write_text(json.dumps({
                    "schema_version": SCHEMA_VERSION,
                    "session_id": session_id,
                    "created_at": created_at,
                    "capture_hash": capture_hash,
                    "input_hashes": sorted(input_hashes),
                    "dims": embedder.dims,
                    "count": len(chunks),
                    "embedder": embedder.name,
                }, indent=2))
            except Exception:
                shutil.rmtree(tmp_dir, ignore_errors=True)
                raise
            tmp_dir.replace(root / session_id)

            index["entries"].append({"capture_hash": capture_hash,
                                     "session_id": session_id,
                                     "created_at": created_at})
            while len(index["entries"]) > MAX_SESSIONS:
                evicted = index["entries"].pop(0)
                shutil.rmtree(root / evicted["session_id"], ignore_errors=True)
            index["latest"] = session_id
            _write_index(root, index)
            return IngestResult(session_id=session_id, reused=False)
        finally:
            fcntl.flock(lock, fcntl.LOCK_UN)
