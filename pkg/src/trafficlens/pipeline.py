"""End-to-end orchestration: pcap -> artifacts -> session, and session -> answer.

A ServiceConfig decides between fixture/local clients (offline) and remote
endpoints; offline mode never needs a network. Heavy per-capture processing is
guarded by the capture's content hash so re-processing an unchanged pcap only
repoints the corpus session.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import capture as cap
from . import corpus, flows as flowmod, features as feat, intel as intelmod
from .agent import AgentConfig, AnswerRecord, AuditLog, FixtureChat, FixtureSearch, RemoteChat, RemoteSearch, answer
from .errors import AllProvidersFailed, NoFixtureForIp, SessionNotFound
from .corpus import ArtifactPaths, HashingEmbedder, RemoteEmbedder
from .features import ReferenceRules, RemoteModel
from .retrieval import LexicalReranker, RemoteCrossEncoder, RetrievalConfig, retrieve

ARTIFACT_MARKER = "artifacts.json"


@dataclass
class ServiceConfig:
    data_dir: Path
    offline: bool = True
    listen: str = "127.0.0.1:8800"
    embedder_endpoint: Optional[str] = None
    chat_endpoint: Optional[str] = None
    reranker_endpoint: Optional[str] = None
    search_endpoint: Optional[str] = None
    classifier_endpoint: Optional[str] = None
    intel_fixture_dir: Optional[Path] = None
    search_fixture_path: Optional[Path] = None
    oui_table_path: Optional[Path] = None
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    upload_cap_bytes: int = 256 * 1024 * 1024

    def __post_init__(self):
        self.data_dir = Path(self.data_dir)

    @property
    def store_root(self) -> Path:
        return self.data_dir / "store"

    @property
    def artifacts_root(self) -> Path:
        return self.data_dir / "artifacts"


@dataclass
class Clients:
    embedder: object
    chat: object
    search: object
    reranker: object
    classifier: object
    intel: intelmod.IntelLookup
    audit: AuditLog


def build_clients(config: ServiceConfig) -> Clients:
    """Offline forces fixture/local clients; endpoints enable remote ones."""
    if config.offline:
        embedder = HashingEmbedder()
        chat = FixtureChat()
        search = FixtureSearch(path=config.search_fixture_path) \
            if config.search_fixture_path else None
        reranker = LexicalReranker()
        classifier = ReferenceRules()
        intel = intelmod.IntelLookup(mode="fixture", fixture_dir=config.intel_fixture_dir)
    else:
        embedder = RemoteEmbedder(config.embedder_endpoint) \
            if config.embedder_endpoint else HashingEmbedder()
        chat = RemoteChat(config.chat_endpoint) if config.chat_endpoint else FixtureChat()
        if config.search_endpoint:
            search = RemoteSearch(config.search_endpoint)
        elif config.search_fixture_path:
            search = FixtureSearch(path=config.search_fixture_path)
        else:
            search = None
        reranker = RemoteCrossEncoder(config.reranker_endpoint) \
            if config.reranker_endpoint else LexicalReranker()
        classifier = RemoteModel(config.classifier_endpoint) \
            if config.classifier_endpoint else ReferenceRules()
        intel = intelmod.IntelLookup(mode="live", cache_dir=config.data_dir / "intel_cache")
    config.data_dir.mkdir(parents=True, exist_ok=True)
    audit = AuditLog(path=config.data_dir / "audit.jsonl")
    return Clients(embedder=embedder, chat=chat, search=search, reranker=reranker,
                   classifier=classifier, intel=intel, audit=audit)


@dataclass
class ProcessResult:
    capture: cap.RawCapture
    session_id: str
    session_reused: bool
    artifacts: ArtifactPaths
    artifacts_reused: bool


def _flow_reputation(flows, intel: intelmod.IntelLookup) -> dict:
    """Abuse-confidence tags for the public endpoints seen in flows."""
    tags = {}
    for ip in sorted(intelmod.public_ips_in_flows(flows)):
        try:
            record = intel.lookup(ip)
        except (NoFixtureForIp, AllProvidersFailed, ValueError):
            continue
        if record.abuse_confidence is not None:
            tags[ip] = flowmod.ReputationTag.from_confidence(record.abuse_confidence)
    return tags


def write_artifacts(raw: cap.RawCapture, records, out_dir: Path, clients: Clients,
                    oui_table: Optional[dict] = None) -> ArtifactPaths:
    """Run flows, classification, reporting, enrichment; write the four files."""
    out_dir.mkdir(parents=True, exist_ok=True)
    logs = cap.generate_protocol_logs(records)
    logs_path = out_dir / "protocol_logs.jsonl"
    with open(logs_path, "w", encoding="utf-8") as fh:
        for kind in cap.LOG_KINDS:
            for event in logs[kind]:
                fh.write(json.dumps(event.to_json_obj(), ensure_ascii=False) + "\n")

    flow_list = flowmod.assemble_flows(records)
    reputation = _flow_reputation(flow_list, clients.intel)
    flows_path = out_dir / "flows.txt"
    flows_path.write_text(flowmod.render_all_narratives(
        flow_list, records, oui_table=oui_table, reputation=reputation), encoding="utf-8")

    rows = feat.extract_features(records, flow_list)
    classified = feat.classify_rows(rows, clients.classifier)
    report = feat.build_report(classified, records, flow_list)
    enriched = intelmod.enrich_report(report, clients.intel, flow_list)
    report_path = out_dir / "report.txt"
    report_path.write_text(enriched.render(), encoding="utf-8")
    (out_dir / "predictions.csv").write_text(feat.predictions_csv(classified), encoding="utf-8")

    packets_path = out_dir / "packets.jsonl"
    with open(packets_path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(cap.packet_to_json_obj(rec), ensure_ascii=False) + "\n")

    (out_dir / ARTIFACT_MARKER).write_text(json.dumps({
        "capture_hash": raw.content_hash,
        "frame_count": raw.frame_count,
        "parse_warnings": raw.parse_warnings,
        "written_at": time.time(),
    }, indent=2))
    return ArtifactPaths(protocol_logs=logs_path, report=report_path,
                         flows=flows_path, packets=packets_path)


def process_capture(pcap_path, config: ServiceConfig, clients: Optional[Clients] = None) -> ProcessResult:
    """Full ingest path with the content-hash skip guard in front of heavy work."""
    clients = clients or build_clients(config)
    content_hash = cap.capture_hash(pcap_path)
    out_dir = config.artifacts_root / content_hash

    raw, records = cap.parse_capture(pcap_path)
    artifacts_reused = (out_dir / ARTIFACT_MARKER).is_file()
    if artifacts_reused:
        artifacts = ArtifactPaths(protocol_logs=out_dir / "protocol_logs.jsonl",
                                  report=out_dir / "report.txt",
                                  flows=out_dir / "flows.txt",
                                  packets=out_dir / "packets.jsonl")
    else:
        oui_table = flowmod.load_oui_table(config.oui_table_path) \
            if config.oui_table_path else None
        artifacts = write_artifacts(raw, records, out_dir, clients, oui_table=oui_table)

    result = corpus.ingest(artifacts, config.store_root, clients.embedder, content_hash)
    return ProcessResult(capture=raw, session_id=result.session_id,
                         session_reused=result.reused, artifacts=artifacts,
                         artifacts_reused=artifacts_reused)


def resolve_session(config: ServiceConfig, session_id: str) -> str:
    if session_id == "latest":
        latest = corpus.latest_session(config.store_root)
        if latest is None:
            raise SessionNotFound("latest")
        return latest
    return session_id


def query_session(session_id: str, question: str, config: ServiceConfig,
                  clients: Optional[Clients] = None, mode: Optional[str] = None):
    """Answer one question; returns (AnswerRecord, EvidenceBundle for display)."""
    clients = clients or build_clients(config)
    sid = resolve_session(config, session_id)
    store = corpus.load_session(config.store_root, sid)
    retrieval_cfg = config.retrieval
    if mode is not None:
        retrieval_cfg = RetrievalConfig(
            alpha=retrieval_cfg.alpha, k_dense=retrieval_cfg.k_dense,
            k_sparse=retrieval_cfg.k_sparse, top_k=retrieval_cfg.top_k,
            mode=mode, rerank=retrieval_cfg.rerank,
            bm25_k1=retrieval_cfg.bm25_k1, bm25_b=retrieval_cfg.bm25_b)
    bundle = retrieve(question, store, retrieval_cfg, clients.embedder, clients.reranker)
    record = answer(question, store, config.agent, retrieval_cfg, clients.embedder,
                    clients.chat, search=clients.search, reranker=clients.reranker,
                    audit=clients.audit)
    return record, bundle


def report_text(session_id: str, config: ServiceConfig) -> str:
    sid = resolve_session(config, session_id)
    store = corpus.load_session(config.store_root, sid)
    manifest = json.loads((store.directory / "manifest.json").read_text())
    report_path = config.artifacts_root / manifest["capture_hash"] / "report.txt"
    if not report_path.is_file():
        raise FileNotFoundError(report_path)
    return report_path.read_text(encoding="utf-8")
