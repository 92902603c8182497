"""Native classic-pcap parsing into cleaned packet records and per-protocol event logs.

The parser is a single sequential pass over the file: link layer (Ethernet or
raw IP), IPv4/IPv6, TCP/UDP/ICMP, and a port-triggered application dissection
for DNS, HTTP, MQTT, Modbus and TLS. Unparseable layers degrade instead of
aborting; malformed frames are skipped and counted.
"""

from __future__ import annotations

import hashlib
import ipaddress
import struct
from dataclasses import dataclass, field, replace
from typing import Optional

from .errors import NotAPcap, TruncatedCapture

# pcap magic numbers (read big-endian from the first 4 bytes)
_MAGIC_MICRO_BE = 0xA1B2C3D4
_MAGIC_MICRO_LE = 0xD4C3B2A1
_MAGIC_NANO_BE = 0xA1B23C4D
_MAGIC_NANO_LE = 0x4D3CB2A1
_PCAPNG_MAGIC = 0x0A0D0D0A

_LINKTYPE_ETHERNET = 1
_LINKTYPE_RAW_IP = 101

TCP_FLAG_ORDER = ("FIN", "SYN", "RST", "PSH", "ACK", "URG")
_TCP_FLAG_BITS = {"FIN": 0x01, "SYN": 0x02, "RST": 0x04, "PSH": 0x08, "ACK": 0x10, "URG": 0x20}

_DNS_QTYPE_NAMES = {
    1: "A", 2: "NS", 5: "CNAME", 6: "SOA", 12: "PTR", 15: "MX", 16: "TXT",
    28: "AAAA", 33: "SRV", 255: "ANY",
}
_MQTT_CONTROL_NAMES = {
    1: "CONNECT", 2: "CONNACK", 3: "PUBLISH", 4: "PUBACK", 5: "PUBREC",
    6: "PUBREL", 7: "PUBCOMP", 8: "SUBSCRIBE", 9: "SUBACK", 10: "UNSUBSCRIBE",
    11: "UNSUBACK", 12: "PINGREQ", 13: "PINGRESP", 14: "DISCONNECT",
}
_TLS_VERSION_NAMES = {0x0300: "SSL 3.0", 0x0301: "TLS 1.0", 0x0302: "TLS 1.1",
                      0x0303: "TLS 1.2", 0x0304: "TLS 1.3"}
_HTTP_METHODS = (b"GET ", b"POST ", b"PUT ", b"DELETE ", b"HEAD ", b"OPTIONS ", b"PATCH ")

# dissection trigger ports
DNS_PORT = 53
HTTP_PORTS = (80, 8080)
MQTT_PORT = 1883
MODBUS_PORT = 502
TLS_PORT = 443

LOG_KINDS = ("conn", "dns", "http", "mqtt", "modbus", "tls")


@dataclass(frozen=True)
class AppFields:
    """Application-layer fields; only the ones matching `kind` are populated."""

    kind: str  # dns | http | mqtt | modbus | tls | other
    dns_opcode: Optional[int] = None
    dns_qname: Optional[str] = None
    dns_qtype: Optional[str] = None
    dns_id: Optional[int] = None
    dns_qr: Optional[bool] = None
    http_method: Optional[str] = None
    http_path: Optional[str] = None
    http_status: Optional[int] = None
    mqtt_control_type: Optional[str] = None
    mqtt_topic: Optional[str] = None
    modbus_function: Optional[int] = None
    modbus_unit_id: Optional[int] = None
    modbus_transaction: Optional[int] = None
    tls_version: Optional[str] = None
    tls_sni: Optional[str] = None
    tls_handshake: Optional[str] = None
    tls_random: Optional[bytes] = None  # opaque; removed by clean_packet


@dataclass(frozen=True)
class PacketRecord:
    """One cleaned, layered view of a single captured frame."""

    frame_no: int
    ts: float
    frame_len: int
    eth_src: Optional[str] = None
    eth_dst: Optional[str] = None
    ip_src: Optional[str] = None
    ip_dst: Optional[str] = None
    ip_ttl: Optional[int] = None
    transport: str = "none"  # tcp | udp | icmp | other | none
    transport_code: Optional[int] = None  # IP protocol number when transport == other
    src_port: Optional[int] = None
    dst_port: Optional[int] = None
    tcp_flags: Optional[frozenset] = None
    tcp_seq: Optional[int] = None
    tcp_ack: Optional[int] = None
    app: Optional[AppFields] = None
    payload: Optional[bytes] = None  # raw transport payload; removed by clean_packet


@dataclass(frozen=True)
class RawCapture:
    """Identity and parse digest of one capture file."""

    path: str
    byte_len: int
    content_hash: str
    link_type: str  # ethernet | rawip | other
    link_code: int = 0
    frame_count: int = 0
    parse_warnings: int = 0
    truncated: bool = False


@dataclass
class ProtocolEvent:
    """One uid-keyed protocol log event in a Zeek-compatible JSON subset."""

    uid: str
    ts: float
    log_kind: str
    fields: dict = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        obj = {"ts": round(self.ts, 6), "uid": self.uid, "log": self.log_kind}
        obj.update(self.fields)
        return obj


def capture_hash(path) -> str:
    """SHA-256 of the raw file bytes, lowercase hex."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def flow_uid(ip_a: str, port_a: int, ip_b: str, port_b: int, proto: str, first_ts: float) -> str:
    """Deterministic 12-char base-36 session id from the canonical 5-tuple and first ts."""
    (la, pa), (lb, pb) = sorted(
        [(ipaddress.ip_address(ip_a).packed, port_a), (ipaddress.ip_address(ip_b).packed, port_b)]
    )
    key = b"%s,%d,%s,%d,%s,%.6f" % (la, pa, lb, pb, proto.encode(), first_ts)
    n = int.from_bytes(hashlib.sha256(key).digest(), "big") % (36 ** 12)
    digits = "0123456789abcdefghijklmnopqrstuvwxyz"
    out = []
    for _ in range(12):
        n, r = divmod(n, 36)
        out.append(digits[r])
    return "".join(reversed(out))


def canonical_5tuple(rec: PacketRecord):
    """Direction-free (ip, port, ip, port, proto) key for a TCP/UDP packet."""
    a = (ipaddress.ip_address(rec.ip_src).packed, rec.src_port, rec.ip_src)
    b = (ipaddress.ip_address(rec.ip_dst).packed, rec.dst_port, rec.ip_dst)
    lo, hi = sorted([a, b])
    return (lo[2], lo[1], hi[2], hi[1], rec.transport)


# ---------------------------------------------------------------- parsing

def parse_capture(path):
    """Parse a classic pcap into (RawCapture, list of cleaned PacketRecords)."""
    with open(path, "rb") as fh:
        data = fh.read()

    if len(data) >= 4:
        magic = struct.unpack(">I", data[:4])[0]
        if magic == _PCAPNG_MAGIC:
            raise NotAPcap("pcapng")
        if magic not in (_MAGIC_MICRO_BE, _MAGIC_MICRO_LE, _MAGIC_NANO_BE, _MAGIC_NANO_LE):
            raise NotAPcap()
    else:
        raise NotAPcap()
    if len(data) < 24:
        raise TruncatedCapture("file ends inside the pcap global header")

    endian = ">" if magic in (_MAGIC_MICRO_BE, _MAGIC_NANO_BE) else "<"
    nano = magic in (_MAGIC_NANO_BE, _MAGIC_NANO_LE)
    link_code = struct.unpack(endian + "I", data[20:24])[0]
    link_type = {_LINKTYPE_ETHERNET: "ethernet", _LINKTYPE_RAW_IP: "rawip"}.get(link_code, "other")

    records = []
    warnings = 0
    truncated = False
    offset = 24
    frame_no = 0
    rec_hdr = struct.Struct(endian + "IIII")
    while offset < len(data):
        if offset + 16 > len(data):
            truncated = True
            warnings += 1
            break
        ts_sec, ts_frac, incl_len, _orig_len = rec_hdr.unpack_from(data, offset)
        offset += 16
        if offset + incl_len > len(data):
            truncated = True
            warnings += 1
            break
        frame = data[offset:offset + incl_len]
        offset += incl_len
        frame_no += 1
        if nano:
            ts_frac //= 1000  # truncate to microseconds
        ts = ts_sec + ts_frac / 1e6
        try:
            rec = _parse_frame(frame_no, ts, frame, link_type)
        except Exception:
            warnings += 1
            continue
        records.append(clean_packet(rec))

    raw = RawCapture(
        path=str(path),
        byte_len=len(data),
        content_hash=hashlib.sha256(data).hexdigest(),
        link_type=link_type,
        link_code=link_code,
        frame_count=len(records),
        parse_warnings=warnings,
        truncated=truncated,
    )
    return raw, records


def _fmt_mac(raw: bytes) -> str:
    return ":".join(f"{b:02x}" for b in raw)


def _parse_frame(frame_no: int, ts: float, frame: bytes, link_type: str) -> PacketRecord:
    rec = PacketRecord(frame_no=frame_no, ts=ts, frame_len=len(frame))
    if link_type == "ethernet":
        if len(frame) < 14:
            return rec
        rec = replace(rec, eth_dst=_fmt_mac(frame[0:6]), eth_src=_fmt_mac(frame[6:12]))
        ethertype = struct.unpack(">H", frame[12:14])[0]
        off = 14
        while ethertype in (0x8100, 0x88A8) and len(frame) >= off + 4:  # VLAN tags
            ethertype = struct.unpack(">H", frame[off + 2:off + 4])[0]
            off += 4
        if ethertype == 0x0800:
            return _parse_ipv4(rec, frame[off:])
        if ethertype == 0x86DD:
            return _parse_ipv6(rec, frame[off:])
        return rec
    if link_type == "rawip":
        if frame and frame[0] >> 4 == 4:
            return _parse_ipv4(rec, frame)
        if frame and frame[0] >> 4 == 6:
            return _parse_ipv6(rec, frame)
        return rec
    return rec


def _parse_ipv4(rec: PacketRecord, data: bytes) -> PacketRecord:
    if len(data) < 20 or data[0] >> 4 != 4:
        return rec
    ihl = (data[0] & 0x0F) * 4
    if ihl < 20 or len(data) < ihl:
        return rec
    total_len = struct.unpack(">H", data[2:4])[0]
    frag = struct.unpack(">H", data[6:8])[0]
    proto = data[9]
    rec = replace(
        rec,
        ip_src=str(ipaddress.IPv4Address(data[12:16])),
        ip_dst=str(ipaddress.IPv4Address(data[16:20])),
        ip_ttl=data[8],
    )
    payload = data[ihl:total_len] if 20 <= total_len <= len(data) else data[ihl:]
    if frag & 0x1FFF:  # non-first fragment: no transport header present
        return replace(rec, transport="other", transport_code=proto)
    return _parse_transport(rec, proto, payload)


def _parse_ipv6(rec: PacketRecord, data: bytes) -> PacketRecord:
    if len(data) < 40 or data[0] >> 4 != 6:
        return rec
    next_hdr = data[6]
    rec = replace(
        rec,
        ip_src=str(ipaddress.IPv6Address(data[8:24])),
        ip_dst=str(ipaddress.IPv6Address(data[24:40])),
        ip_ttl=data[7],
    )
    payload = data[40:]
    # walk common extension headers
    for _ in range(8):
        if next_hdr in (0, 43, 60) and len(payload) >= 8:
            ext_len = (payload[1] + 1) * 8
            next_hdr, payload = payload[0], payload[ext_len:]
        elif next_hdr == 44 and len(payload) >= 8:  # fragment
            if struct.unpack(">H", payload[2:4])[0] & 0xFFF8:
                return replace(rec, transport="other", transport_code=next_hdr)
            next_hdr, payload = payload[0], payload[8:]
        else:
            break
    return _parse_transport(rec, next_hdr, payload)


def _parse_transport(rec: PacketRecord, proto: int, payload: bytes) -> PacketRecord:
    if proto == 6 and len(payload) >= 20:
        sport, dport = struct.unpack(">HH", payload[0:4])
        seq, ack = struct.unpack(">II", payload[4:12])
        data_off = (payload[12] >> 4) * 4
        bits = payload[13]
        flags = frozenset(name for name, bit in _TCP_FLAG_BITS.items() if bits & bit)
        seg = payload[data_off:] if data_off >= 20 else b""
        rec = replace(rec, transport="tcp", src_port=sport, dst_port=dport,
                      tcp_flags=flags, tcp_seq=seq, tcp_ack=ack,
                      payload=seg or None)
        return replace(rec, app=_dissect_app(rec.transport, sport, dport, seg))
    if proto == 17 and len(payload) >= 8:
        sport, dport = struct.unpack(">HH", payload[0:4])
        seg = payload[8:]
        rec = replace(rec, transport="udp", src_port=sport, dst_port=dport, payload=seg or None)
        return replace(rec, app=_dissect_app(rec.transport, sport, dport, seg))
    if proto in (1, 58):
        return replace(rec, transport="icmp", payload=payload[4:] or None,
                       transport_code=payload[0] if payload else None)
    return replace(rec, transport="other", transport_code=proto)


# ------------------------------------------------------ application layer

def _dissect_app(transport: str, sport: int, dport: int, seg: bytes) -> Optional[AppFields]:
    if not seg:
        return None
    try:
        if DNS_PORT in (sport, dport):
            if transport == "tcp" and len(seg) > 2:
                seg = seg[2:]  # DNS-over-TCP length prefix
            return _parse_dns(seg)
        if transport == "tcp" and (sport in HTTP_PORTS or dport in HTTP_PORTS):
            return _parse_http(seg)
        if transport == "tcp" and MQTT_PORT in (sport, dport):
            return _parse_mqtt(seg)
        if transport == "tcp" and MODBUS_PORT in (sport, dport):
            return _parse_modbus(seg)
        if transport == "tcp" and TLS_PORT in (sport, dport):
            return _parse_tls(seg)
    except Exception:
        return None
    return None


def _parse_dns(seg: bytes) -> Optional[AppFields]:
    if len(seg) < 12:
        return None
    dns_id, flags, qdcount = struct.unpack(">HHH", seg[0:6])
    qr = bool(flags >> 15)
    opcode = (flags >> 11) & 0xF
    qname = None
    qtype = None
    if qdcount >= 1:
        labels = []
        pos = 12
        while pos < len(seg):
            n = seg[pos]
            if n == 0:
                pos += 1
                break
            if n & 0xC0:  # compression pointer; question names are stored plain
                pos += 2
                break
            labels.append(seg[pos + 1:pos + 1 + n].decode("ascii", "replace"))
            pos += 1 + n
        qname = ".".join(labels) if labels else None
        if pos + 2 <= len(seg):
            qt = struct.unpack(">H", seg[pos:pos + 2])[0]
            qtype = _DNS_QTYPE_NAMES.get(qt, str(qt))
    return AppFields(kind="dns", dns_opcode=opcode, dns_qname=qname, dns_qtype=qtype,
                     dns_id=dns_id, dns_qr=qr)


def _parse_http(seg: bytes) -> Optional[AppFields]:
    for method in _HTTP_METHODS:
        if seg.startswith(method):
            line = seg.split(b"\r\n", 1)[0].split(b"\n", 1)[0]
            parts = line.split(b" ")
            path = parts[1].decode("ascii", "replace") if len(parts) > 1 else None
            return AppFields(kind="http", http_method=method.strip().decode(), http_path=path)
    if seg.startswith(b"HTTP/1."):
        parts = seg.split(b"\r\n", 1)[0].split(b" ")
        if len(parts) > 1 and parts[1].isdigit():
            return AppFields(kind="http", http_status=int(parts[1]))
    return None


def _mqtt_remaining_length(seg: bytes, pos: int):
    value, shift = 0, 0
    while pos < len(seg) and shift <= 21:
        b = seg[pos]
        value |= (b & 0x7F) << shift
        pos += 1
        if not b & 0x80:
            return value, pos
        shift += 7
    return None, pos


def _parse_mqtt(seg: bytes) -> Optional[AppFields]:
    ctype = seg[0] >> 4
    name = _MQTT_CONTROL_NAMES.get(ctype)
    if name is None:
        return None
    _, pos = _mqtt_remaining_length(seg, 1)
    topic = None
    if name == "CONNECT":
        # confirm the protocol-name magic before trusting the port heuristic
        if b"MQTT" not in seg[:16] and b"MQIsdp" not in seg[:16]:
            return None
    elif name == "PUBLISH" and pos + 2 <= len(seg):
        tlen = struct.unpack(">H", seg[pos:pos + 2])[0]
        if pos + 2 + tlen <= len(seg):
            topic = seg[pos + 2:pos + 2 + tlen].decode("utf-8", "replace")
    elif name in ("SUBSCRIBE", "UNSUBSCRIBE") and pos + 4 <= len(seg):
        tlen = struct.unpack(">H", seg[pos + 2:pos + 4])[0]
        if pos + 4 + tlen <= len(seg):
            topic = seg[pos + 4:pos + 4 + tlen].decode("utf-8", "replace")
    return AppFields(kind="mqtt", mqtt_control_type=name, mqtt_topic=topic)


def _parse_modbus(seg: bytes) -> Optional[AppFields]:
    if len(seg) < 8:
        return None
    trans_id, proto_id, length = struct.unpack(">HHH", seg[0:6])
    if proto_id != 0 or length < 2:  # MBAP protocol id must be zero
        return None
    return AppFields(kind="modbus", modbus_function=seg[7], modbus_unit_id=seg[6],
                     modbus_transaction=trans_id)


def _parse_tls(seg: bytes) -> Optional[AppFields]:
    if len(seg) < 6 or seg[0] != 0x16 or seg[1] != 0x03:
        return None
    hs_type = seg[5]
    if hs_type not in (1, 2):
        return None
    pos = 9  # record header (5) + handshake type (1) + length (3)
    if pos + 34 > len(seg):
        return None
    version = _TLS_VERSION_NAMES.get(struct.unpack(">H", seg[pos:pos + 2])[0])
    random = seg[pos + 2:pos + 34]
    pos += 34
    sni = None
    if hs_type == 1:
        sni = _client_hello_sni(seg, pos)
    return AppFields(kind="tls", tls_version=version, tls_sni=sni,
                     tls_handshake="client_hello" if hs_type == 1 else "server_hello",
                     tls_random=random)


def _client_hello_sni(seg: bytes, pos: int) -> Optional[str]:
    if pos >= len(seg):
        return None
    sid_len = seg[pos]
    pos += 1 + sid_len
    if pos + 2 > len(seg):
        return None
    cs_len = struct.unpack(">H", seg[pos:pos + 2])[0]
    pos += 2 + cs_len
    if pos + 1 > len(seg):
        return None
    pos += 1 + seg[pos]  # compression methods
    if pos + 2 > len(seg):
        return None
    ext_total = struct.unpack(">H", seg[pos:pos + 2])[0]
    pos += 2
    end = min(len(seg), pos + ext_total)
    while pos + 4 <= end:
        etype, elen = struct.unpack(">HH", seg[pos:pos + 4])
        pos += 4
        if etype == 0 and pos + 5 <= end:  # server_name
            nlen = struct.unpack(">H", seg[pos + 3:pos + 5])[0]
            return seg[pos + 5:pos + 5 + nlen].decode("ascii", "replace")
        pos += elen
    return None


# --------------------------------------------------------------- cleaning

def clean_packet(rec: PacketRecord) -> PacketRecord:
    """Drop opaque payload bytes (raw transport segment, TLS random); keep semantics."""
    out = rec
    if out.payload is not None:
        out = replace(out, payload=None)
    if out.app is not None and out.app.tls_random is not None:
        out = replace(out, app=replace(out.app, tls_random=None))
    return out


# ----------------------------------------------------------- protocol logs

def generate_protocol_logs(packets) -> dict:
    """Group one capture's packets into uid-keyed per-protocol event logs."""
    logs = {kind: [] for kind in LOG_KINDS}
    sessions = {}  # canonical 5-tuple -> list of packets, in order
    order = []
    for rec in packets:
        if rec.transport not in ("tcp", "udp"):
            continue
        key = canonical_5tuple(rec)
        if key not in sessions:
            sessions[key] = []
            order.append(key)
        sessions[key].append(rec)

    for key in order:
        pkts = sessions[key]
        first = pkts[0]
        uid = flow_uid(key[0], key[1], key[2], key[3], key[4], first.ts)
        orig = (first.ip_src, first.src_port)
        resp = (first.ip_dst, first.dst_port)
        ident = {
            "id.orig_h": orig[0], "id.orig_p": orig[1],
            "id.resp_h": resp[0], "id.resp_p": resp[1],
            "proto": key[4],
        }
        services = sorted({p.app.kind for p in pkts if p.app is not None})
        conn_fields = dict(ident)
        conn_fields.update({
            "service": ",".join(services),
            "duration": round(pkts[-1].ts - first.ts, 6),
            "orig_pkts": sum(1 for p in pkts if (p.ip_src, p.src_port) == orig),
            "resp_pkts": sum(1 for p in pkts if (p.ip_src, p.src_port) != orig),
            "total_bytes": sum(p.frame_len for p in pkts),
        })
        logs["conn"].append(ProtocolEvent(uid=uid, ts=first.ts, log_kind="conn", fields=conn_fields))

        logs["dns"].extend(_dns_events(uid, ident, pkts))
        logs["http"].extend(_http_events(uid, ident, pkts))
        logs["mqtt"].extend(_mqtt_events(uid, ident, pkts))
        logs["modbus"].extend(_modbus_events(uid, ident, pkts))
        logs["tls"].extend(_tls_events(uid, ident, pkts))

    for kind in LOG_KINDS:
        logs[kind].sort(key=lambda e: e.ts)
    return logs


def _app_packets(pkts, kind):
    return [p for p in pkts if p.app is not None and p.app.kind == kind]


def _dns_events(uid, ident, pkts):
    events = []
    answered = set()
    dns_pkts = _app_packets(pkts, "dns")
    for p in dns_pkts:
        if p.app.dns_qr:
            continue
        matched = any(
            r.app.dns_qr and r.app.dns_id == p.app.dns_id and r.ts >= p.ts
            for r in dns_pkts
        )
        if matched:
            answered.add(p.app.dns_id)
        fields = dict(ident)
        fields.update({
            "query": p.app.dns_qname or "",
            "qtype": p.app.dns_qtype or "",
            "opcode": p.app.dns_opcode if p.app.dns_opcode is not None else 0,
            "answered": matched,
        })
        events.append(ProtocolEvent(uid=uid, ts=p.ts, log_kind="dns", fields=fields))
    for p in dns_pkts:  # responses that never had a visible query
        if p.app.dns_qr and p.app.dns_id not in answered:
            fields = dict(ident)
            fields.update({
                "query": p.app.dns_qname or "",
                "qtype": p.app.dns_qtype or "",
                "opcode": p.app.dns_opcode if p.app.dns_opcode is not None else 0,
                "answered": True,
            })
            events.append(ProtocolEvent(uid=uid, ts=p.ts, log_kind="dns", fields=fields))
    return events


def _http_events(uid, ident, pkts):
    events = []
    pending = []
    for p in _app_packets(pkts, "http"):
        if p.app.http_method is not None:
            pending.append([p, None])
        elif p.app.http_status is not None:
            for pair in pending:
                if pair[1] is None:
                    pair[1] = p.app.http_status
                    break
            else:
                fields = dict(ident)
                fields.update({"method": "", "uri": "", "status_code": p.app.http_status})
                events.append(ProtocolEvent(uid=uid, ts=p.ts, log_kind="http", fields=fields))
    for req, status in pending:
        fields = dict(ident)
        fields.update({
            "method": req.app.http_method or "",
            "uri": req.app.http_path or "",
            "status_code": status if status is not None else 0,
        })
        events.append(ProtocolEvent(uid=uid, ts=req.ts, log_kind="http", fields=fields))
    return events


def _mqtt_events(uid, ident, pkts):
    events = []
    for p in _app_packets(pkts, "mqtt"):
        fields = dict(ident)
        fields.update({"msg_type": p.app.mqtt_control_type or "",
                       "topic": p.app.mqtt_topic or ""})
        events.append(ProtocolEvent(uid=uid, ts=p.ts, log_kind="mqtt", fields=fields))
    return events


def _modbus_events(uid, ident, pkts):
    events = []
    seen_requests = set()
    for p in _app_packets(pkts, "modbus"):
        is_request = p.dst_port == MODBUS_PORT
        if not is_request and p.app.modbus_transaction in seen_requests:
            continue  # response merged into its request's event
        if is_request:
            seen_requests.add(p.app.modbus_transaction)
        fields = dict(ident)
        fields.update({
            "func": p.app.modbus_function if p.app.modbus_function is not None else 0,
            "unit_id": p.app.modbus_unit_id if p.app.modbus_unit_id is not None else 0,
        })
        events.append(ProtocolEvent(uid=uid, ts=p.ts, log_kind="modbus", fields=fields))
    return events


def _tls_events(uid, ident, pkts):
    events = []
    for p in _app_packets(pkts, "tls"):
        fields = dict(ident)
        fields.update({"version": p.app.tls_version or "",
                       "server_name": p.app.tls_sni or "",
                       "handshake": p.app.tls_handshake or ""})
        events.append(ProtocolEvent(uid=uid, ts=p.ts, log_kind="tls", fields=fields))
    return events


# ------------------------------------------------------------ serialization

def packet_to_json_obj(rec: PacketRecord) -> dict:
    """Canonical-order JSON object for one packet; absent fields omitted."""
    obj = {"frame_no": rec.frame_no, "ts": round(rec.ts, 6), "frame_len": rec.frame_len}
    if rec.eth_src is not None:
        obj["eth_src"] = rec.eth_src
    if rec.eth_dst is not None:
        obj["eth_dst"] = rec.eth_dst
    if rec.ip_src is not None:
        obj["ip_src"] = rec.ip_src
    if rec.ip_dst is not None:
        obj["ip_dst"] = rec.ip_dst
    if rec.ip_ttl is not None:
        obj["ip_ttl"] = rec.ip_ttl
    obj["transport"] = rec.transport
    if rec.transport_code is not None:
        obj["transport_code"] = rec.transport_code
    if rec.src_port is not None:
        obj["src_port"] = rec.src_port
    if rec.dst_port is not None:
        obj["dst_port"] = rec.dst_port
    if rec.tcp_flags is not None:
        obj["tcp_flags"] = [f for f in TCP_FLAG_ORDER if f in rec.tcp_flags]
    if rec.tcp_seq is not None:
        obj["tcp_seq"] = rec.tcp_seq
    if rec.tcp_ack is not None:
        obj["tcp_ack"] = rec.tcp_ack
    if rec.app is not None:
        app = {"kind": rec.app.kind}
        for name in ("dns_opcode", "dns_qname", "dns_qtype", "http_method", "http_path",
                     "http_status", "mqtt_control_type", "mqtt_topic", "modbus_function",
                     "modbus_unit_id", "tls_version", "tls_sni"):
            value = getattr(rec.app, name)
            if value is not None:
                app[name] = value
        obj["app"] = app
    return obj
