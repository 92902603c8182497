import random
import struct
from dataclasses import replace
from pathlib import Path

import pytest

from trafficlens.capture import (
    AppFields,
    PacketRecord,
    capture_hash,
    canonical_5tuple,
    clean_packet,
    generate_protocol_logs,
    packet_to_json_obj,
    parse_capture,
)
from trafficlens.errors import NotAPcap, TruncatedCapture

from pcap_builder import (
    frame_tcp,
    handshake_frames,
    pcap_bytes,
    random_capture,
)

FIXTURES = Path(__file__).parent / "fixtures"

# digests frozen after computing them once with an external checksum pass
HANDSHAKE_SHA256 = "e80d4f331248e6c5c39ee582ce34a3473e65dda036a4eaeaa7222a72a337a48e"
SHA256_EMPTY = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


def write_pcap(tmp_path, frames, **kwargs):
    path = tmp_path / "cap.pcap"
    path.write_bytes(pcap_bytes(frames, **kwargs))
    return path


def test_empty_capture(tmp_path):
    path = write_pcap(tmp_path, [])
    raw, records = parse_capture(path)
    assert records == []
    assert raw.frame_count == 0
    assert raw.byte_len == 24


def test_handshake_fixture_records():
    raw, records = parse_capture(FIXTURES / "handshake.pcap")
    assert raw.frame_count == 3  # frame conservation vs the hand-assembled fixture
    assert [r.tcp_flags for r in records] == [
        frozenset({"SYN"}),
        frozenset({"SYN", "ACK"}),
        frozenset({"ACK"}),
    ]
    assert records[0].ip_src == "10.0.0.2"
    assert records[0].src_port == 49152
    assert records[0].dst_port == 80
    assert records[1].src_port == 80
    assert [r.frame_no for r in records] == [1, 2, 3]
    assert all(a.ts <= b.ts for a, b in zip(records, records[1:]))


def test_dns_fixture_records():
    _, records = parse_capture(FIXTURES / "dns_query.pcap")
    assert len(records) == 2
    first = records[0]
    assert first.transport == "udp"
    assert first.app.kind == "dns"
    assert first.app.dns_qname == "sensor.local"
    assert first.app.dns_qtype == "A"


def test_not_a_pcap(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"\x00\x01\x02\x03" + b"\x00" * 32)
    with pytest.raises(NotAPcap):
        parse_capture(path)


def test_pcapng_named(tmp_path):
    path = tmp_path / "x.pcapng"
    path.write_bytes(b"\x0a\x0d\x0d\x0a" + b"\x00" * 32)
    with pytest.raises(NotAPcap) as err:
        parse_capture(path)
    assert err.value.detected == "pcapng"


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        parse_capture("/nonexistent/cap.pcap")


def test_truncated_global_header(tmp_path):
    path = tmp_path / "short.pcap"
    path.write_bytes(struct.pack("<I", 0xA1B2C3D4) + b"\x00" * 8)
    with pytest.raises(TruncatedCapture):
        parse_capture(path)


def test_truncated_frame_stops_at_last_whole_frame(tmp_path):
    data = pcap_bytes(handshake_frames())
    path = tmp_path / "cut.pcap"
    path.write_bytes(data[:-10])  # cut inside the last frame
    raw, records = parse_capture(path)
    assert raw.frame_count == 2
    assert raw.truncated
    assert raw.parse_warnings == 1


@pytest.mark.parametrize("endian,nano", [("<", False), (">", False), ("<", True), (">", True)])
def test_endianness_and_nano_variants(tmp_path, endian, nano):
    path = write_pcap(tmp_path, handshake_frames(), endian=endian, nano=nano)
    _, records = parse_capture(path)
    assert len(records) == 3
    assert records[0].ts == pytest.approx(1700000000.0, abs=1e-6)
    assert records[1].tcp_flags == frozenset({"SYN", "ACK"})


def test_unknown_ethertype_degrades(tmp_path):
    frame = bytes(6) + bytes(6) + struct.pack(">H", 0x9999) + b"\x00" * 20
    path = write_pcap(tmp_path, [(1.0, frame)])
    _, records = parse_capture(path)
    assert len(records) == 1
    assert records[0].transport == "none"
    assert records[0].eth_src is not None
    assert records[0].src_port is None


def test_ipv6_addressing_and_flows(tmp_path):
    from pcap_builder import frame_tcp6
    from trafficlens.flows import assemble_flows

    frames = [
        (1.0, frame_tcp6("2001:db8::2", "2001:db8::1", 50000, 80, "S")),
        (1.1, frame_tcp6("2001:db8::1", "2001:db8::2", 80, 50000, "SA")),
    ]
    path = write_pcap(tmp_path, frames)
    _, records = parse_capture(path)
    assert records[0].ip_src == "2001:db8::2"
    assert records[0].transport == "tcp"
    assert records[0].src_port == 50000
    assert records[0].ip_ttl == 64  # hop limit
    flows = assemble_flows(records)
    assert len(flows) == 1
    assert flows[0].pkt_count == 2


def test_rawip_linktype(tmp_path):
    from pcap_builder import ipv4, tcp

    frame = ipv4("10.0.0.3", "10.0.0.4", 6, tcp(1111, 2222, "S"))
    path = tmp_path / "raw.pcap"
    path.write_bytes(pcap_bytes([(1.0, frame)], linktype=101))
    raw, records = parse_capture(path)
    assert raw.link_type == "rawip"
    assert records[0].eth_src is None
    assert records[0].ip_src == "10.0.0.3"
    assert records[0].tcp_flags == frozenset({"SYN"})


def test_vlan_tagged_frame(tmp_path):
    from pcap_builder import frame_vlan_tcp

    path = write_pcap(tmp_path, [(1.0, frame_vlan_tcp("10.0.0.7", "10.0.0.8", 1234, 80, "S"))])
    _, records = parse_capture(path)
    assert records[0].transport == "tcp"
    assert records[0].ip_src == "10.0.0.7"
    assert records[0].dst_port == 80


def test_unknown_linktype(tmp_path):
    path = tmp_path / "odd.pcap"
    path.write_bytes(pcap_bytes([(1.0, b"\x01\x02\x03\x04")], linktype=147))
    raw, records = parse_capture(path)
    assert raw.link_type == "other"
    assert raw.link_code == 147
    assert records[0].transport == "none"


# --- cleaning ---

def test_clean_packet_strips_payload():
    rec = PacketRecord(frame_no=1, ts=1.0, frame_len=600, ip_src="10.0.0.1",
                       ip_dst="10.0.0.2", transport="tcp", src_port=1, dst_port=2,
                       tcp_flags=frozenset({"ACK"}), tcp_seq=5, tcp_ack=6,
                       payload=b"\x80" * 512)
    cleaned = clean_packet(rec)
    assert cleaned.payload is None
    assert replace(rec, payload=None) == cleaned


def test_clean_packet_fixed_point():
    rec = PacketRecord(frame_no=1, ts=1.0, frame_len=60)
    assert clean_packet(rec) == rec


def test_clean_packet_strips_tls_random():
    app = AppFields(kind="tls", tls_version="TLS 1.2", tls_sni="hub.example",
                    tls_random=b"\x01" * 32)
    rec = PacketRecord(frame_no=1, ts=1.0, frame_len=200, transport="tcp",
                       src_port=50000, dst_port=443, tcp_flags=frozenset({"ACK"}), app=app)
    cleaned = clean_packet(rec)
    assert cleaned.app.tls_random is None
    assert cleaned.app.tls_version == "TLS 1.2"
    assert cleaned.app.tls_sni == "hub.example"


def test_clean_packet_idempotent_on_random_records():
    rng = random.Random(7)
    for _ in range(200):
        rec = PacketRecord(
            frame_no=rng.randint(1, 1000),
            ts=rng.random() * 1e9,
            frame_len=rng.randint(20, 1500),
            ip_src=f"10.0.0.{rng.randint(1, 254)}",
            ip_dst=f"10.0.1.{rng.randint(1, 254)}",
            transport=rng.choice(["tcp", "udp", "icmp", "none"]),
            payload=rng.choice([None, bytes(rng.getrandbits(8) for _ in range(rng.randint(1, 64)))]),
        )
        once = clean_packet(rec)
        assert clean_packet(once) == once


def test_parse_capture_records_already_cleaned(tmp_path):
    frames = [(1.0, frame_tcp("10.0.0.2", "10.0.0.1", 40000, 9000, "PA", payload=b"q" * 128))]
    path = write_pcap(tmp_path, frames)
    _, records = parse_capture(path)
    assert records[0].payload is None


# --- protocol logs ---

def test_handshake_logs():
    _, records = parse_capture(FIXTURES / "handshake.pcap")
    logs = generate_protocol_logs(records)
    assert len(logs["conn"]) == 1
    assert logs["dns"] == []
    assert logs["http"] == []
    conn = logs["conn"][0]
    assert conn.fields["id.orig_h"] == "10.0.0.2"
    assert conn.fields["id.resp_p"] == 80
    assert conn.fields["proto"] == "tcp"


def test_dns_logs_share_uid():
    _, records = parse_capture(FIXTURES / "dns_query.pcap")
    logs = generate_protocol_logs(records)
    assert len(logs["conn"]) == 1
    assert len(logs["dns"]) == 1
    dns = logs["dns"][0]
    assert dns.fields["query"] == "sensor.local"
    assert dns.uid == logs["conn"][0].uid


def test_empty_packets_empty_logs():
    logs = generate_protocol_logs([])
    assert all(events == [] for events in logs.values())


def test_uid_stability():
    _, records = parse_capture(FIXTURES / "dns_query.pcap")
    first = generate_protocol_logs(records)
    second = generate_protocol_logs(records)
    for kind in first:
        assert [e.uid for e in first[kind]] == [e.uid for e in second[kind]]


def test_session_soundness_random_captures(tmp_path):
    rng = random.Random(21)
    for i in range(5):
        data, _ = random_capture(rng, max_packets=120)
        path = tmp_path / f"r{i}.pcap"
        path.write_bytes(data)
        _, records = parse_capture(path)
        logs = generate_protocol_logs(records)
        tuples = {canonical_5tuple(r) for r in records if r.transport in ("tcp", "udp")}
        for events in logs.values():
            for ev in events:
                key = canonical_5tuple(PacketRecord(
                    frame_no=1, ts=ev.ts, frame_len=0,
                    ip_src=ev.fields["id.orig_h"], ip_dst=ev.fields["id.resp_h"],
                    transport=ev.fields["proto"],
                    src_port=ev.fields["id.orig_p"], dst_port=ev.fields["id.resp_p"]))
                assert key in tuples


def test_frame_conservation_random_captures(tmp_path):
    rng = random.Random(5)
    for i in range(10):
        data, truth = random_capture(rng, max_packets=200)
        path = tmp_path / f"c{i}.pcap"
        path.write_bytes(data)
        raw, records = parse_capture(path)
        assert raw.frame_count == len(truth)
        for rec, want in zip(records, truth):
            assert rec.transport == want["transport"]
            assert rec.frame_len == want["frame_len"]
            assert rec.ip_src == want["src"]


# --- hashing ---

def test_capture_hash_deterministic(tmp_path):
    path = write_pcap(tmp_path, handshake_frames())
    assert capture_hash(path) == capture_hash(path)


def test_capture_hash_empty_file(tmp_path):
    path = tmp_path / "empty"
    path.write_bytes(b"")
    assert capture_hash(path) == SHA256_EMPTY


def test_capture_hash_handshake_frozen():
    assert capture_hash(FIXTURES / "handshake.pcap") == HANDSHAKE_SHA256


def test_capture_hash_missing_file():
    with pytest.raises(FileNotFoundError):
        capture_hash("/nonexistent/file.pcap")


# --- serialization ---

def test_packet_json_port_fields_iff_tcp_udp(tmp_path):
    rng = random.Random(3)
    data, _ = random_capture(rng, max_packets=150)
    path = tmp_path / "s.pcap"
    path.write_bytes(data)
    _, records = parse_capture(path)
    for rec in records:
        obj = packet_to_json_obj(rec)
        has_ports = "src_port" in obj and "dst_port" in obj
        assert has_ports == (rec.transport in ("tcp", "udp"))


def test_packet_json_canonical_order():
    _, records = parse_capture(FIXTURES / "handshake.pcap")
    obj = packet_to_json_obj(records[0])
    keys = list(obj)
    assert keys.index("frame_no") < keys.index("ts") < keys.index("transport")
    assert keys.index("ip_src") < keys.index("src_port")
