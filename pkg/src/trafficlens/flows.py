"""Bidirectional flow reconstruction, connection-state signatures, and narrative blocks.

A flow is the session between two endpoints sharing a transport and port
pairing; one capture is one flow epoch (no idle-timeout splitting). Assembly
is a pure fold over packet records; vendor and reputation annotation is
injected afterwards so assembly stays offline-testable.
"""

from __future__ import annotations

import csv
import ipaddress
from dataclasses import dataclass, replace
from typing import Optional

from .capture import PacketRecord, TCP_FLAG_ORDER, flow_uid
from .errors import MalformedMac

# connection signatures
COMPLETE_HANDSHAKE = "CompleteHandshake"
HANDSHAKE_IN_PROGRESS = "HandshakeInProgress"
MIDSTREAM_RESET = "MidstreamReset"
PREMATURE_TERMINATION = "PrematureTermination"
REJECTED_ON_CONNECT = "RejectedOnConnect"
GRACEFUL_CLOSE = "GracefulClose"
NO_HANDSHAKE_OBSERVED = "NoHandshakeObserved"
UDP_SIGNATURE = "Udp"

LOCALLY_ADMINISTERED = "Locally Administered"
UNKNOWN_VENDOR = "Unknown"


@dataclass(frozen=True)
class FlowKey:
    """Canonical direction-free flow identity: ep_a <= ep_b by (ip bytes, port)."""

    ep_a: tuple  # (ip, port)
    ep_b: tuple
    transport: str  # tcp | udp

    @classmethod
    def from_packet(cls, rec: PacketRecord) -> "FlowKey":
        a = (ipaddress.ip_address(rec.ip_src).packed, rec.src_port, (rec.ip_src, rec.src_port))
        b = (ipaddress.ip_address(rec.ip_dst).packed, rec.dst_port, (rec.ip_dst, rec.dst_port))
        lo, hi = sorted([a, b])[0][2], sorted([a, b])[1][2]
        return cls(ep_a=lo, ep_b=hi, transport=rec.transport)


@dataclass(frozen=True)
class ReputationTag:
    source: str  # AbuseIPDB | None
    abuse_confidence: int
    verdict: str  # Benign | Suspicious | Malicious

    @classmethod
    def from_confidence(cls, confidence: int, source: str = "AbuseIPDB") -> "ReputationTag":
        return cls(source=source, abuse_confidence=confidence, verdict=verdict_for(confidence))


def verdict_for(confidence: int) -> str:
    """Documented thresholds: <25 Benign, 25-74 Suspicious, >=75 Malicious."""
    if confidence < 25:
        return "Benign"
    if confidence < 75:
        return "Suspicious"
    return "Malicious"


@dataclass(frozen=True)
class FlowRecord:
    key: FlowKey
    initiator: str  # "a" | "b": which endpoint sent the first packet
    pkt_count: int
    byte_count: int
    first_ts: float
    last_ts: float
    duration: float
    flag_seq: tuple  # ordered flag sets, TCP only
    app_cues: tuple
    ttl_min: int
    ttl_max: int
    mac_vendor_a: Optional[str] = None
    mac_vendor_b: Optional[str] = None
    reputation_a: Optional[ReputationTag] = None
    reputation_b: Optional[ReputationTag] = None

    @property
    def uid(self) -> str:
        return flow_uid(self.key.ep_a[0], self.key.ep_a[1],
                        self.key.ep_b[0], self.key.ep_b[1],
                        self.key.transport, self.first_ts)

    def initiator_endpoint(self) -> tuple:
        return self.key.ep_a if self.initiator == "a" else self.key.ep_b

    def responder_endpoint(self) -> tuple:
        return self.key.ep_b if self.initiator == "a" else self.key.ep_a


def app_cue(rec: PacketRecord) -> Optional[str]:
    """Short human-readable summary of a packet's application fields."""
    app = rec.app
    if app is None:
        return None
    if app.kind == "dns" and app.dns_qname:
        return f"DNS query {app.dns_qname} ({app.dns_qtype or '?'})"
    if app.kind == "http":
        if app.http_method:
            return f"HTTP {app.http_method} {app.http_path or '/'}"
        if app.http_status:
            return f"HTTP status {app.http_status}"
    if app.kind == "mqtt" and app.mqtt_control_type:
        if app.mqtt_topic:
            return f"MQTT {app.mqtt_control_type} topic {app.mqtt_topic}"
        return f"MQTT {app.mqtt_control_type}"
    if app.kind == "modbus":
        return f"Modbus function {app.modbus_function} unit {app.modbus_unit_id}"
    if app.kind == "tls":
        parts = ["TLS", app.tls_version or "handshake"]
        if app.tls_sni:
            parts.append(f"SNI {app.tls_sni}")
        return " ".join(parts)
    return None


def assemble_flows(packets) -> list:
    """Fold packets into bidirectional flows, ordered by first_ts.

    Non-TCP/UDP packets are ignored; count them with skipped_packets().
    """
    buckets = {}
    order = []
    for rec in packets:
        if rec.transport not in ("tcp", "udp"):
            continue
        key = FlowKey.from_packet(rec)
        if key not in buckets:
            buckets[key] = []
            order.append(key)
        buckets[key].append(rec)

    flows = []
    for key in order:
        pkts = buckets[key]
        first = pkts[0]
        ttls = [p.ip_ttl for p in pkts if p.ip_ttl is not None]
        cues = []
        for p in pkts:
            cue = app_cue(p)
            if cue is not None and cue not in cues:
                cues.append(cue)
        flows.append(FlowRecord(
            key=key,
            initiator="a" if (first.ip_src, first.src_port) == key.ep_a else "b",
            pkt_count=len(pkts),
            byte_count=sum(p.frame_len for p in pkts),
            first_ts=first.ts,
            last_ts=pkts[-1].ts,
            duration=round(pkts[-1].ts - first.ts, 6),
            flag_seq=tuple(p.tcp_flags for p in pkts) if key.transport == "tcp" else (),
            app_cues=tuple(cues),
            ttl_min=min(ttls) if ttls else 0,
            ttl_max=max(ttls) if ttls else 0,
        ))
    flows.sort(key=lambda f: f.first_ts)
    return flows


def skipped_packets(packets) -> int:
    """Packets that flow assembly ignores (not TCP or UDP)."""
    return sum(1 for p in packets if p.transport not in ("tcp", "udp"))


def decode_flag_sequence(flag_seq) -> str:
    """Map a TCP flow's ordered flag sets to one connection signature.

    Decision table, in priority order; only flags at or after the first SYN
    participate:
      1. RST in the SYN packet or the following two -> RejectedOnConnect
      2. RST after a completed handshake           -> MidstreamReset
      3. FIN before completion, or RST while the handshake never completed
         (outside the connect window)              -> PrematureTermination
      4. completed handshake then two or more FIN
         packets (both directions closing)         -> GracefulClose
      5. completed handshake otherwise             -> CompleteHandshake
      6. SYN seen, incomplete, no RST/FIN          -> HandshakeInProgress
      7. no SYN anywhere                           -> NoHandshakeObserved
    Completion means SYN, then SYN+ACK, then a bare ACK, in order.
    """
    seq = [frozenset(s) for s in flag_seq]
    syn_i = next((i for i, s in enumerate(seq) if "SYN" in s), None)
    if syn_i is None:
        return NO_HANDSHAKE_OBSERVED

    complete_at = None
    synack_at = None
    for i in range(syn_i + 1, len(seq)):
        if synack_at is None:
            if {"SYN", "ACK"} <= seq[i]:
                synack_at = i
        elif "ACK" in seq[i] and "SYN" not in seq[i]:
            complete_at = i
            break

    rst_first = next((i for i in range(syn_i, len(seq)) if "RST" in seq[i]), None)
    fin_first = next((i for i in range(syn_i, len(seq)) if "FIN" in seq[i]), None)

    if rst_first is not None and rst_first <= syn_i + 2:
        return REJECTED_ON_CONNECT
    if complete_at is not None and rst_first is not None and rst_first > complete_at:
        return MIDSTREAM_RESET
    if complete_at is None and (fin_first is not None or rst_first is not None):
        return PREMATURE_TERMINATION
    if complete_at is not None and fin_first is not None and fin_first < complete_at:
        return PREMATURE_TERMINATION
    if complete_at is not None:
        fins = sum(1 for i in range(complete_at + 1, len(seq)) if "FIN" in seq[i])
        if fins >= 2:
            return GRACEFUL_CLOSE
        return COMPLETE_HANDSHAKE
    return HANDSHAKE_IN_PROGRESS


def signature_for(flow: FlowRecord) -> str:
    if flow.key.transport == "udp":
        return UDP_SIGNATURE
    return decode_flag_sequence(flow.flag_seq)


# --- vendor resolution ---

def load_oui_table(path) -> dict:
    """Load the `prefix,vendor` CSV; prefixes are lowercase colon-separated 3 octets."""
    table = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if len(row) >= 2 and row[0].strip():
                table[row[0].strip().lower()] = row[1].strip()
    return table


def resolve_vendor(mac: str, oui_table: dict) -> str:
    """24-bit OUI prefix lookup; locally-administered MACs short-circuit."""
    parts = (mac or "").lower().split(":")
    if len(parts) != 6 or not all(len(p) == 2 for p in parts):
        raise MalformedMac(mac)
    try:
        first = int(parts[0], 16)
    except ValueError:
        raise MalformedMac(mac) from None
    if first & 0x03 == 0x02:  # U/L bit, unicast only
        return LOCALLY_ADMINISTERED
    return oui_table.get(":".join(parts[:3]), UNKNOWN_VENDOR)


def annotate_flow(flow: FlowRecord, oui_table: Optional[dict] = None,
                  reputation: Optional[dict] = None, mac_by_ip: Optional[dict] = None) -> FlowRecord:
    """Attach vendor names and injected reputation tags; assembly itself stays pure."""
    updates = {}
    if oui_table is not None and mac_by_ip:
        for side, ep in (("a", flow.key.ep_a), ("b", flow.key.ep_b)):
            mac = mac_by_ip.get(ep[0])
            if mac:
                try:
                    updates[f"mac_vendor_{side}"] = resolve_vendor(mac, oui_table)
                except MalformedMac:
                    pass
    if reputation:
        if flow.key.ep_a[0] in reputation:
            updates["reputation_a"] = reputation[flow.key.ep_a[0]]
        if flow.key.ep_b[0] in reputation:
            updates["reputation_b"] = reputation[flow.key.ep_b[0]]
    return replace(flow, **updates) if updates else flow


def mac_addresses_by_ip(packets) -> dict:
    """First source MAC observed for each source IP."""
    seen = {}
    for p in packets:
        if p.ip_src and p.eth_src and p.ip_src not in seen:
            seen[p.ip_src] = p.eth_src
    return seen


# --- narrative rendering ---

def _fmt_flags(flags) -> str:
    return "+".join(f for f in TCP_FLAG_ORDER if f in flags) or "none"


def render_narrative(flow: FlowRecord, sig: str) -> str:
    """Deterministic multi-line block for one flow, terminated by one blank line."""
    init_ip, init_port = flow.initiator_endpoint()
    resp_ip, resp_port = flow.responder_endpoint()
    init_vendor = flow.mac_vendor_a if flow.initiator == "a" else flow.mac_vendor_b
    resp_vendor = flow.mac_vendor_b if flow.initiator == "a" else flow.mac_vendor_a
    lines = [
        f"Flow {flow.uid}: {init_ip}:{init_port} <-> {resp_ip}:{resp_port} ({flow.key.transport.upper()})",
        f"Vendors: {init_vendor or UNKNOWN_VENDOR} <-> {resp_vendor or UNKNOWN_VENDOR}",
        f"Packets: {flow.pkt_count} | Bytes: {flow.byte_count}",
        f"First seen: {flow.first_ts:.6f} | Last seen: {flow.last_ts:.6f} | Duration: {flow.duration:.6f}s",
        f"TTL range: {flow.ttl_min}-{flow.ttl_max}",
        f"Signature: {sig}",
    ]
    if flow.flag_seq:
        lines.append("Flags: " + " ".join(_fmt_flags(s) for s in flow.flag_seq[:16]))
    lines.append("App cues: " + ("; ".join(flow.app_cues) if flow.app_cues else "none"))
    rep_parts = []
    init_rep = flow.reputation_a if flow.initiator == "a" else flow.reputation_b
    resp_rep = flow.reputation_b if flow.initiator == "a" else flow.reputation_a
    if init_rep is not None:
        rep_parts.append(f"src abuse-confidence {init_rep.abuse_confidence} ({init_rep.verdict})")
    if resp_rep is not None:
        rep_parts.append(f"dst abuse-confidence {resp_rep.abuse_confidence} ({resp_rep.verdict})")
    if rep_parts:
        lines.append("Reputation: " + "; ".join(rep_parts))
    return "\n".join(lines) + "\n\n"


def render_global_summary(flows, packets) -> str:
    """One capture-wide block: traffic distribution across devices and protocols."""
    tcp_flows = sum(1 for f in flows if f.key.transport == "tcp")
    udp_flows = len(flows) - tcp_flows
    talkers = {}
    for p in packets:
        if p.ip_src:
            talkers[p.ip_src] = talkers.get(p.ip_src, 0) + 1
    top = sorted(talkers.items(), key=lambda kv: (-kv[1], kv[0]))[:5]
    app_kinds = {}
    for p in packets:
        if p.app is not None:
            app_kinds[p.app.kind] = app_kinds.get(p.app.kind, 0) + 1
    lines = [
        "Capture summary:",
        f"Flows: {len(flows)} (tcp {tcp_flows}, udp {udp_flows}) | "
        f"Packets: {len(list(packets))} | Non-flow packets: {skipped_packets(packets)}",
        "Top talkers: " + ("; ".join(f"{ip} ({n} pkts)" for ip, n in top) if top else "none"),
        "Application protocols: " + ("; ".join(
            f"{k} {v}" for k, v in sorted(app_kinds.items())) if app_kinds else "none"),
    ]
    return "\n".join(lines) + "\n\n"


def render_all_narratives(flows, packets, oui_table=None, reputation=None) -> str:
    """Full narrative text: one block per flow plus the global summary block."""
    mac_by_ip = mac_addresses_by_ip(packets)
    blocks = []
    for flow in flows:
        annotated = annotate_flow(flow, oui_table=oui_table, reputation=reputation,
                                  mac_by_ip=mac_by_ip)
        blocks.append(render_narrative(annotated, signature_for(annotated)))
    blocks.append(render_global_summary(flows, packets))
    return "".join(blocks)
