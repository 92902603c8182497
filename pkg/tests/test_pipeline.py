import json
from pathlib import Path

import pytest

from trafficlens.corpus import list_sessions, load_session
from trafficlens.errors import SessionNotFound
from trafficlens.pipeline import (
    ServiceConfig,
    build_clients,
    process_capture,
    query_session,
    report_text,
)

from pcap_builder import frame_tcp, pcap_bytes

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def config(tmp_path):
    return ServiceConfig(data_dir=tmp_path / "data", offline=True)


def test_process_capture_writes_artifacts_and_session(config):
    result = process_capture(FIXTURES / "handshake.pcap", config)
    assert not result.session_reused
    assert not result.artifacts_reused
    for path in result.artifacts.all():
        assert Path(path).is_file()
    store = load_session(config.store_root, result.session_id)
    assert {c.modality for c in store.chunks} >= {"ProtocolLog", "Report", "FlowSummary",
                                                  "PacketView"}
    report = Path(result.artifacts.report).read_text()
    assert "=== Interpretation Report ===" in report
    assert "== Class: Normal ==" in report


def test_process_capture_skip_guard(config):
    first = process_capture(FIXTURES / "handshake.pcap", config)
    second = process_capture(FIXTURES / "handshake.pcap", config)
    assert second.artifacts_reused
    assert second.session_reused
    assert second.session_id == first.session_id
    assert len(list_sessions(config.store_root)) == 1


def test_query_session_capture_grounded(config):
    result = process_capture(FIXTURES / "handshake.pcap", config)
    record, bundle = query_session(result.session_id,
                                   "how many flows are in this capture?", config)
    assert record.source_class == "CaptureGrounded"
    assert record.cited_chunk_ids
    assert bundle.ranked
    bundle_ids = set(bundle.chunk_ids())
    assert set(record.cited_chunk_ids) <= bundle_ids


def test_query_session_latest_alias(config):
    process_capture(FIXTURES / "handshake.pcap", config)
    record, _ = query_session("latest", "how many packets were captured?", config)
    assert record.source_class in ("CaptureGrounded", "Insufficient")


def test_query_unknown_session(config):
    process_capture(FIXTURES / "handshake.pcap", config)
    with pytest.raises(SessionNotFound):
        query_session("missing-session", "x", config)


def test_report_text_roundtrip(config):
    result = process_capture(FIXTURES / "handshake.pcap", config)
    text = report_text(result.session_id, config)
    assert text.startswith("=== Interpretation Report ===")


def test_flow_reputation_annotation(tmp_path):
    # capture talking to a public IP, with an abuse fixture for it
    intel_dir = tmp_path / "intel" / "abuseipdb"
    intel_dir.mkdir(parents=True)
    (intel_dir / "52.0.0.1.json").write_text(json.dumps({"abuse_confidence": 90}))
    pcap = tmp_path / "public.pcap"
    pcap.write_bytes(pcap_bytes([
        (1700000000.0, frame_tcp("10.0.0.2", "52.0.0.1", 50000, 80, "S")),
        (1700000000.1, frame_tcp("52.0.0.1", "10.0.0.2", 80, 50000, "SA")),
        (1700000000.2, frame_tcp("10.0.0.2", "52.0.0.1", 50000, 80, "A")),
    ]))
    config = ServiceConfig(data_dir=tmp_path / "data", offline=True,
                           intel_fixture_dir=tmp_path / "intel")
    result = process_capture(pcap, config)
    flows_text = Path(result.artifacts.flows).read_text()
    assert "Reputation: dst abuse-confidence 90 (Malicious)" in flows_text


def test_oui_table_annotation(tmp_path):
    oui = tmp_path / "oui.csv"
    oui.write_text("b8:27:eb,Raspberry Pi Foundation\ndc:a6:32,Raspberry Pi Trading\n")
    config = ServiceConfig(data_dir=tmp_path / "data", offline=True, oui_table_path=oui)
    result = process_capture(FIXTURES / "handshake.pcap", config)
    flows_text = Path(result.artifacts.flows).read_text()
    assert "Raspberry Pi Foundation" in flows_text


def test_offline_clients_are_fixtures(config):
    clients = build_clients(config)
    assert type(clients.embedder).__name__ == "HashingEmbedder"
    assert type(clients.chat).__name__ == "FixtureChat"
    assert type(clients.classifier).__name__ == "ReferenceRules"
    assert clients.intel.mode == "fixture"


def test_audit_log_written(config):
    result = process_capture(FIXTURES / "handshake.pcap", config)
    clients = build_clients(config)
    query_session(result.session_id, "how many flows are in this capture?", config,
                  clients=clients)
    audit_path = config.data_dir / "audit.jsonl"
    assert audit_path.is_file()
    entries = [json.loads(line) for line in audit_path.read_text().splitlines()]
    assert entries
    assert all(set(e) == {"ts", "session", "step", "tool", "input_digest", "outcome"}
               for e in entries)
