"""Model-ready features, feature:value textualization, classification, and the
narrative interpretation report.

Two frozen schemas (24 feature names total): packet rows use dotted
tshark-style names, flow rows use bare aggregate names. High-cardinality
identifiers (URIs, hostnames, raw addresses) stay out of the schemas; labels
and targets are never feature columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .errors import ModelUnavailable

CLASS_LABELS = (
    "Normal", "MITM", "Fingerprinting", "Ransomware", "Uploading",
    "SQL_Injection", "DDoS_HTTP", "DDoS_TCP", "Password", "Port_Scanning",
    "Vul_Scanner", "Backdoor", "XSS", "DDoS_UDP", "DDoS_ICMP",
)

PACKET_SCHEMA = (
    "frame.len", "ip.ttl", "ip.proto",
    "tcp.srcport", "tcp.dstport",
    "tcp.flags.syn", "tcp.flags.ack", "tcp.flags.rst", "tcp.flags.fin", "tcp.flags.psh",
    "udp.srcport", "udp.dstport",
    "icmp.type", "dns.qry.type", "mqtt.msgtype", "modbus.func_code",
)
FLOW_SCHEMA = (
    "pkt_count", "byte_count", "duration", "transport",
    "syn_count", "ack_ratio", "distinct_dst_ports", "pkt_rate",
)
_CATEGORICAL = {"ip.proto", "transport", "dns.qry.type", "mqtt.msgtype"}


@dataclass(frozen=True)
class FeatureRow:
    values: tuple  # ordered (name, value) pairs in schema order
    row_kind: str  # Packet | Flow
    row_id: str
    frame_no: Optional[int] = None  # provenance for packet rows
    flow_index: Optional[int] = None  # provenance for flow rows

    def get(self, name: str) -> Optional[str]:
        for key, value in self.values:
            if key == name:
                return value
        return None


def _num(value) -> str:
    if value is None:
        return "0"
    return f"{value:g}" if isinstance(value, float) else str(value)


def _flag(flags, name) -> str:
    return "1" if flags is not None and name in flags else "0"


def extract_features(packets, flows) -> list:
    """One row per packet and one per flow, each in frozen schema order."""
    rows = []
    packets = list(packets)
    for rec in packets:
        values = (
            ("frame.len", _num(rec.frame_len)),
            ("ip.ttl", _num(rec.ip_ttl)),
            ("ip.proto", rec.transport if rec.transport != "none" else ""),
            ("tcp.srcport", _num(rec.src_port if rec.transport == "tcp" else None)),
            ("tcp.dstport", _num(rec.dst_port if rec.transport == "tcp" else None)),
            ("tcp.flags.syn", _flag(rec.tcp_flags, "SYN")),
            ("tcp.flags.ack", _flag(rec.tcp_flags, "ACK")),
            ("tcp.flags.rst", _flag(rec.tcp_flags, "RST")),
            ("tcp.flags.fin", _flag(rec.tcp_flags, "FIN")),
            ("tcp.flags.psh", _flag(rec.tcp_flags, "PSH")),
            ("udp.srcport", _num(rec.src_port if rec.transport == "udp" else None)),
            ("udp.dstport", _num(rec.dst_port if rec.transport == "udp" else None)),
            ("icmp.type", _num(rec.transport_code if rec.transport == "icmp" else None)),
            ("dns.qry.type", (rec.app.dns_qtype or "") if rec.app and rec.app.kind == "dns" else ""),
            ("mqtt.msgtype", (rec.app.mqtt_control_type or "") if rec.app and rec.app.kind == "mqtt" else ""),
            ("modbus.func_code", _num(rec.app.modbus_function if rec.app and rec.app.kind == "modbus" else None)),
        )
        rows.append(FeatureRow(values=values, row_kind="Packet",
                               row_id=f"pkt-{rec.frame_no}", frame_no=rec.frame_no))

    # destination ports contacted by each source IP, capture-wide
    ports_by_src = {}
    for rec in packets:
        if rec.transport in ("tcp", "udp") and rec.ip_src is not None:
            ports_by_src.setdefault(rec.ip_src, set()).add(rec.dst_port)

    for i, flow in enumerate(flows):
        init_ip = flow.initiator_endpoint()[0]
        syn_count = sum(1 for s in flow.flag_seq if "SYN" in s)
        ack_count = sum(1 for s in flow.flag_seq if "ACK" in s)
        ack_ratio = ack_count / flow.pkt_count if flow.flag_seq else 0.0
        pkt_rate = flow.pkt_count / flow.duration if flow.duration > 0 else float(flow.pkt_count)
        values = (
            ("pkt_count", _num(flow.pkt_count)),
            ("byte_count", _num(flow.byte_count)),
            ("duration", _num(round(flow.duration, 6))),
            ("transport", flow.key.transport),
            ("syn_count", _num(syn_count)),
            ("ack_ratio", _num(round(ack_ratio, 4))),
            ("distinct_dst_ports", _num(len(ports_by_src.get(init_ip, ())))),
            ("pkt_rate", _num(round(pkt_rate, 4))),
        )
        rows.append(FeatureRow(values=values, row_kind="Flow",
                               row_id=f"flow-{i}", flow_index=i))
    return rows


# --- textualization ---

def _escape(value: str) -> str:
    return value.replace("\\", "\\\\").replace(":", "\\:").replace(" ", "\\_")


def _unescape(value: str) -> str:
    out = []
    i = 0
    while i < len(value):
        ch = value[i]
        if ch == "\\" and i + 1 < len(value):
            nxt = value[i + 1]
            out.append(" " if nxt == "_" else nxt)
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def textualize(row: FeatureRow) -> str:
    """`name:value` pairs joined by single spaces, canonical order, no trailing space."""
    return " ".join(f"{name}:{_escape(value)}" for name, value in row.values)


def parse_feature_text(text: str) -> dict:
    """Inverse of textualize for rule evaluation; unknown names pass through."""
    out = {}
    for token in text.split(" "):
        if not token:
            continue
        # the name never contains escapes; split at the first unescaped colon
        idx = -1
        i = 0
        while i < len(token):
            if token[i] == "\\":
                i += 2
                continue
            if token[i] == ":":
                idx = i
                break
            i += 1
        if idx < 0:
            continue
        out[token[:idx]] = _unescape(token[idx + 1:])
    return out


# --- classification ---

class ReferenceRules:
    """Deterministic ordered rule table covering 5 of the 15 labels.

    Rules fire on parsed feature:value text; a condition referencing an absent
    feature is false. Confidence is 0.95 on a rule hit, 0.60 for the default.
    """

    RULES = (
        ("DDoS_TCP", ("syn_count", ">=", 100.0), ("ack_ratio", "<=", 0.1)),
        ("Port_Scanning", ("distinct_dst_ports", ">=", 20.0)),
        ("DDoS_UDP", ("transport", "==", "udp"), ("pkt_count", ">=", 200.0)),
        ("DDoS_ICMP", ("ip.proto", "==", "icmp"), ("icmp.type", "==", 8.0),
         ("frame.len", ">=", 500.0)),
    )

    def classify(self, text: str):
        feats = parse_feature_text(text)
        for rule in self.RULES:
            label, conditions = rule[0], rule[1:]
            if all(self._check(feats, *cond) for cond in conditions):
                return label, 0.95
        return "Normal", 0.60

    @staticmethod
    def _check(feats, name, op, want):
        raw = feats.get(name)
        if raw is None or raw == "":
            return False
        if isinstance(want, str):
            return (raw == want) if op == "==" else False
        try:
            value = float(raw)
        except ValueError:
            return False
        if op == ">=":
            return value >= want
        if op == "<=":
            return value <= want
        return value == want


class RemoteModel:
    """HTTP classifier client: POST {endpoint}/classify {"text"} -> {"label","confidence"}."""

    def __init__(self, endpoint: str, timeout: float = 5.0, session=None):
        import requests

        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self._session = session or requests.Session()

    def classify(self, text: str):
        try:
            resp = self._session.post(f"{self.endpoint}/classify", json={"text": text},
                                      timeout=self.timeout)
            resp.raise_for_status()
            body = resp.json()
            label, confidence = body["label"], float(body["confidence"])
        except Exception as exc:
            raise ModelUnavailable(str(exc)) from exc
        if label not in CLASS_LABELS:
            raise ModelUnavailable(f"unknown label from remote model: {label!r}")
        return label, confidence


def classify(text: str, clf):
    """Classify one textualized row with the given pluggable classifier."""
    return clf.classify(text)


def classify_rows(rows, clf, fallback_rules: bool = True) -> list:
    """(row, label, confidence) per row; optional fallback when the remote dies."""
    out = []
    rules = ReferenceRules()
    for row in rows:
        text = textualize(row)
        try:
            label, confidence = clf.classify(text)
        except ModelUnavailable:
            if not fallback_rules:
                raise
            label, confidence = rules.classify(text)
        out.append((row, label, confidence))
    return out


# --- interpretation report ---

@dataclass
class AttackMetadata:
    ip_pairs: set = field(default_factory=set)
    mqtt_topics: set = field(default_factory=set)
    dns_queries: set = field(default_factory=set)
    modbus_unit_ids: set = field(default_factory=set)
    http_methods_paths: set = field(default_factory=set)


@dataclass
class InterpretationReport:
    global_summary: str
    per_attack: dict  # label -> (narrative, guidance), labels with counts > 0
    metadata: dict  # attack label -> AttackMetadata
    counts: dict  # label -> row count

    def sections(self) -> list:
        """Ordered (kind, label, text) sections; the chunkable report structure."""
        out = [("global", None, self.global_summary)]
        for label in CLASS_LABELS:
            if label in self.per_attack:
                narrative, guidance = self.per_attack[label]
                out.append(("narrative", label,
                            f"== Class: {label} ==\n{narrative}\nGuidance: {guidance}"))
        for label in CLASS_LABELS:
            if label in self.metadata:
                out.append(("metadata", label, render_metadata_section(label, self.metadata[label])))
        return out

    def render(self) -> str:
        return "\n\n".join(text for _, _, text in self.sections()) + "\n"


_NARRATIVES = {
    "Normal": "Traffic in this group matches ordinary request/response behavior with "
              "no threshold rule or model flag raised.",
    "MITM": "Rows in this group show interception indicators consistent with a "
            "man-in-the-middle position between devices.",
    "Fingerprinting": "Probing in this group enumerates device characteristics, "
                      "suggesting reconnaissance of exposed services.",
    "Ransomware": "Rows in this group match communication patterns associated with "
                  "ransomware staging or command traffic.",
    "Uploading": "Large outbound transfers in this group indicate possible data "
                 "exfiltration from the observed devices.",
    "SQL_Injection": "Requests in this group carry query patterns consistent with "
                     "SQL injection attempts against exposed services.",
    "DDoS_HTTP": "Request volume in this group indicates an HTTP flood aimed at "
                 "exhausting an application endpoint.",
    "DDoS_TCP": "Connection attempts in this group show a SYN flood profile: many "
                "handshake openers with almost no completions.",
    "Password": "Repeated authentication attempts in this group suggest password "
                "guessing against device services.",
    "Port_Scanning": "A single source in this group contacts many distinct ports, "
                     "the classic signature of a port sweep.",
    "Vul_Scanner": "Traffic in this group matches automated vulnerability-scanner "
                   "probing across services.",
    "Backdoor": "Sessions in this group indicate persistent unauthorized access "
                "channels to the affected devices.",
    "XSS": "Requests in this group embed script payload patterns consistent with "
           "cross-site scripting attempts.",
    "DDoS_UDP": "Datagram volume in this group indicates a UDP flood directed at "
                "the targeted endpoints.",
    "DDoS_ICMP": "Oversized echo requests in this group indicate an ICMP flood "
                 "against the targeted hosts.",
}
_GUIDANCE = {
    "Normal": "No action required; keep baseline monitoring in place.",
    "MITM": "Verify ARP/DNS integrity on the segment and isolate the suspected relay.",
    "Fingerprinting": "Review exposed services on the probed hosts and restrict discovery traffic.",
    "Ransomware": "Isolate affected hosts immediately and review recent file and share activity.",
    "Uploading": "Inspect the destination endpoints and confirm whether the transfer was sanctioned.",
    "SQL_Injection": "Audit the targeted service's input handling and review database logs.",
    "DDoS_HTTP": "Apply rate limits on the targeted endpoint and consider upstream filtering.",
    "DDoS_TCP": "Enable SYN cookies or rate-limit new connections from the offending sources.",
    "Password": "Lock out the offending sources and enforce stronger authentication.",
    "Port_Scanning": "Block or quarantine the scanning source and audit the ports it reached.",
    "Vul_Scanner": "Patch the probed services and restrict scanner access at the perimeter.",
    "Backdoor": "Quarantine the device, rotate its credentials, and reimage if persistence is confirmed.",
    "XSS": "Sanitize inputs on the targeted web service and review served content.",
    "DDoS_UDP": "Rate-limit UDP toward the target and filter the source addresses upstream.",
    "DDoS_ICMP": "Rate-limit ICMP echo traffic and drop oversized echo requests at the edge.",
}


def _fmt_set(values) -> str:
    return "; ".join(sorted(values)) if values else "none"


def render_metadata_section(label: str, meta: AttackMetadata) -> str:
    lines = [
        f"-- Metadata: {label} --",
        "IP pairs: " + ("; ".join(f"{a} -> {b}" for a, b in sorted(meta.ip_pairs))
                        if meta.ip_pairs else "none"),
        "DNS queries: " + _fmt_set(meta.dns_queries),
        "MQTT topics: " + _fmt_set(meta.mqtt_topics),
        "Modbus unit ids: " + _fmt_set([str(u) for u in sorted(meta.modbus_unit_ids)]),
        "HTTP methods/paths: " + _fmt_set(meta.http_methods_paths),
    ]
    return "\n".join(lines)


def build_report(classified_rows, packets, flows) -> InterpretationReport:
    """Aggregate classified rows into the deterministic interpretation report."""
    counts = {}
    for _, label, _ in classified_rows:
        counts[label] = counts.get(label, 0) + 1
    total = len(classified_rows)
    packet_rows = sum(1 for row, _, _ in classified_rows if row.row_kind == "Packet")

    dist = "; ".join(
        f"{label} {counts[label]} ({100.0 * counts[label] / total:.1f}%)"
        for label in CLASS_LABELS if label in counts
    ) if total else "none"
    dominant = max(counts, key=lambda l: (counts[l], -CLASS_LABELS.index(l))) if counts else "none"
    global_summary = "\n".join([
        "=== Interpretation Report ===",
        f"Rows classified: {total} (packets {packet_rows}, flows {total - packet_rows})",
        f"Class distribution: {dist}",
        f"Dominant class: {dominant}",
    ])

    by_frame = {p.frame_no: p for p in packets}
    flow_list = list(flows)

    per_attack = {}
    metadata = {}
    for label in counts:
        narrative = _NARRATIVES[label].replace(
            "this group", f"this group ({counts[label]} rows)", 1)
        per_attack[label] = (narrative, _GUIDANCE[label])
        if label == "Normal":
            continue
        meta = AttackMetadata()
        for row, row_label, _ in classified_rows:
            if row_label != label:
                continue
            contributing = []
            if row.row_kind == "Packet" and row.frame_no in by_frame:
                contributing.append(by_frame[row.frame_no])
            elif row.row_kind == "Flow" and row.flow_index is not None and row.flow_index < len(flow_list):
                flow = flow_list[row.flow_index]
                eps = {flow.key.ep_a, flow.key.ep_b}
                contributing.extend(
                    p for p in packets
                    if p.transport == flow.key.transport
                    and (p.ip_src, p.src_port) in eps and (p.ip_dst, p.dst_port) in eps)
            for p in contributing:
                if p.ip_src and p.ip_dst:
                    meta.ip_pairs.add((p.ip_src, p.ip_dst))
                if p.app is not None:
                    if p.app.kind == "dns" and p.app.dns_qname:
                        meta.dns_queries.add(p.app.dns_qname)
                    if p.app.kind == "mqtt" and p.app.mqtt_topic:
                        meta.mqtt_topics.add(p.app.mqtt_topic)
                    if p.app.kind == "modbus" and p.app.modbus_unit_id is not None:
                        meta.modbus_unit_ids.add(p.app.modbus_unit_id)
                    if p.app.kind == "http" and p.app.http_method:
                        meta.http_methods_paths.add(f"{p.app.http_method} {p.app.http_path or '/'}")
        metadata[label] = meta
    return InterpretationReport(global_summary=global_summary, per_attack=per_attack,
                                metadata=metadata, counts=counts)


def predictions_csv(classified_rows) -> str:
    """CSV of (row_id, label, confidence) mirroring the structured predictions output."""
    lines = ["row_id,label,confidence"]
    for row, label, confidence in classified_rows:
        lines.append(f"{row.row_id},{label},{confidence:g}")
    return "\n".join(lines) + "\n"
