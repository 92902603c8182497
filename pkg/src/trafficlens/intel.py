"""Threat-intelligence enrichment for public IPs seen in the report and flows.

Lookups go to Shodan InternetDB (keyless), VirusTotal and AbuseIPDB (keys via
VT_API_KEY / ABUSEIPDB_API_KEY). Fixture mode reads one JSON file per IP per
provider and never opens a network connection. Lookups are refused outright
for anything that is not a confirmed public address.
"""

from __future__ import annotations

import ipaddress
import json
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .errors import AllProvidersFailed, NoFixtureForIp
from .features import CLASS_LABELS, InterpretationReport
from .flows import verdict_for

PROVIDERS = ("shodan", "virustotal", "abuseipdb")

RETRIES = 1
BACKOFF_BASE_S = 0.5
TIMEOUT_S = 5.0
BUCKET_CAPACITY = 4  # requests per minute per provider
BUCKET_WINDOW_S = 60.0


@dataclass
class IntelRecord:
    ip: str
    vt_malicious_count: Optional[int] = None
    shodan_ports: frozenset = frozenset()  # of (port, transport)
    shodan_tags: frozenset = frozenset()
    shodan_cves: frozenset = frozenset()
    abuse_confidence: Optional[int] = None
    fetched_at: float = 0.0
    provider_errors: list = field(default_factory=list)

    def has_provider_data(self) -> bool:
        return (self.vt_malicious_count is not None
                or bool(self.shodan_ports or self.shodan_tags or self.shodan_cves)
                or self.abuse_confidence is not None)


def is_public_ip(ip: str) -> bool:
    """True only for globally routable unicast addresses.

    Excludes RFC1918, loopback, link-local, multicast, broadcast, unspecified,
    CGNAT 100.64/10, and the documentation ranges (all non-global per the IANA
    special registries), keeping external queries away from internal hosts.
    """
    try:
        addr = ipaddress.ip_address(ip)
    except ValueError:
        return False
    return addr.is_global and not addr.is_multicast


def find_public_ips(report: InterpretationReport, flows=()) -> dict:
    """Public IPs per attack label, from the report's metadata IP pairs."""
    out = {}
    for label, meta in report.metadata.items():
        found = set()
        for src, dst in meta.ip_pairs:
            for ip in (src, dst):
                if is_public_ip(ip):
                    found.add(ip)
        if found:
            out[label] = found
    return out


def public_ips_in_flows(flows) -> set:
    """Public endpoint addresses across flows, for narrative reputation tagging."""
    out = set()
    for flow in flows:
        for ep in (flow.key.ep_a, flow.key.ep_b):
            if is_public_ip(ep[0]):
                out.add(ep[0])
    return out


# --- rate limiting ---

class TokenBucket:
    """Fixed-window token bucket; take() returns the wait in seconds."""

    def __init__(self, capacity: int = BUCKET_CAPACITY, window_s: float = BUCKET_WINDOW_S,
                 clock=time.monotonic):
        self.capacity = capacity
        self.window_s = window_s
        self.clock = clock
        self._stamps = []

    def take(self) -> float:
        now = self.clock()
        self._stamps = [t for t in self._stamps if now - t < self.window_s]
        if len(self._stamps) < self.capacity:
            self._stamps.append(now)
            return 0.0
        wait = self.window_s - (now - self._stamps[0])
        self._stamps = self._stamps[1:] + [now + wait]
        return max(wait, 0.0)


# --- provider clients ---

def _default_transport(url: str, headers: dict, timeout: float):
    import requests

    resp = requests.get(url, headers=headers, timeout=timeout)
    return resp.status_code, resp.json() if resp.content else {}


def _fetch_shodan(ip, transport, api_keys):
    status, body = transport(f"https://internetdb.shodan.io/{ip}", {}, TIMEOUT_S)
    if status == 404:  # InternetDB has nothing on this IP
        return {"ports": [], "tags": [], "vulns": []}
    if status != 200:
        raise RuntimeError(f"shodan status {status}")
    # InternetDB reports bare port numbers; transport defaults to tcp
    return {
        "ports": [[int(p), "tcp"] for p in body.get("ports", [])],
        "tags": list(body.get("tags", [])),
        "vulns": list(body.get("vulns", [])),
    }


def _fetch_virustotal(ip, transport, api_keys):
    key = api_keys.get("virustotal")
    if not key:
        raise RuntimeError("VT_API_KEY not set")
    status, body = transport(f"https://www.virustotal.com/api/v3/ip_addresses/{ip}",
                             {"x-apikey": key}, TIMEOUT_S)
    if status != 200:
        raise RuntimeError(f"virustotal status {status}")
    stats = body.get("data", {}).get("attributes", {}).get("last_analysis_stats", {})
    return {"malicious_count": int(stats.get("malicious", 0))}


def _fetch_abuseipdb(ip, transport, api_keys):
    key = api_keys.get("abuseipdb")
    if not key:
        raise RuntimeError("ABUSEIPDB_API_KEY not set")
    status, body = transport(f"https://api.abuseipdb.com/api/v2/check?ipAddress={ip}",
                             {"Key": key, "Accept": "application/json"}, TIMEOUT_S)
    if status != 200:
        raise RuntimeError(f"abuseipdb status {status}")
    return {"abuse_confidence": int(body.get("data", {}).get("abuseConfidenceScore", 0))}


_FETCHERS = {"shodan": _fetch_shodan, "virustotal": _fetch_virustotal,
             "abuseipdb": _fetch_abuseipdb}


def _merge_fragment(record: IntelRecord, provider: str, fragment: dict) -> IntelRecord:
    if provider == "shodan":
        return replace(
            record,
            shodan_ports=frozenset((int(p), str(t)) for p, t in fragment.get("ports", [])),
            shodan_tags=frozenset(fragment.get("tags", [])),
            shodan_cves=frozenset(fragment.get("vulns", [])),
        )
    if provider == "virustotal":
        return replace(record, vt_malicious_count=fragment.get("malicious_count"))
    if provider == "abuseipdb":
        return replace(record, abuse_confidence=fragment.get("abuse_confidence"))
    return record


class IntelLookup:
    """Provider-merging lookup with retry, rate limiting, and a per-day disk cache."""

    def __init__(self, mode: str = "fixture", fixture_dir=None, cache_dir=None,
                 transport=None, api_keys: Optional[dict] = None, sleep=time.sleep,
                 clock=time.monotonic, now=time.time):
        self.mode = mode
        self.fixture_dir = Path(fixture_dir) if fixture_dir else None
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.transport = transport or _default_transport
        self.api_keys = api_keys if api_keys is not None else {
            "virustotal": os.environ.get("VT_API_KEY", ""),
            "abuseipdb": os.environ.get("ABUSEIPDB_API_KEY", ""),
        }
        self.sleep = sleep
        self.now = now
        self._buckets = {p: TokenBucket(clock=clock) for p in PROVIDERS}

    def lookup(self, ip: str, providers=PROVIDERS) -> IntelRecord:
        if not is_public_ip(ip):
            raise ValueError(f"refusing intel lookup for non-public address {ip}")
        if self.mode == "fixture":
            return self._lookup_fixture(ip, providers)
        return self._lookup_live(ip, providers)

    def _lookup_fixture(self, ip, providers) -> IntelRecord:
        record = IntelRecord(ip=ip, fetched_at=self.now())
        hits = 0
        for provider in providers:
            path = (self.fixture_dir or Path(".")) / provider / f"{ip}.json"
            if not path.is_file():
                record.provider_errors.append(f"{provider}: no fixture")
                continue
            record = _merge_fragment(record, provider, json.loads(path.read_text()))
            hits += 1
        if hits == 0:
            raise NoFixtureForIp(ip)
        return record

    def _lookup_live(self, ip, providers) -> IntelRecord:
        record = IntelRecord(ip=ip, fetched_at=self.now())
        succeeded = 0
        for provider in providers:
            cached = self._cache_read(provider, ip)
            if cached is not None:
                record = _merge_fragment(record, provider, cached)
                succeeded += 1
                continue
            try:
                fragment = self._fetch_with_retry(provider, ip)
            except Exception as exc:
                record.provider_errors.append(f"{provider}: {exc}")
                continue
            self._cache_write(provider, ip, fragment)
            record = _merge_fragment(record, provider, fragment)
            succeeded += 1
        if succeeded == 0:
            raise AllProvidersFailed(ip)
        return record

    def _fetch_with_retry(self, provider, ip):
        wait = self._buckets[provider].take()
        if wait > 0:
            self.sleep(wait)
        last = None
        for attempt in range(RETRIES + 1):
            try:
                return _FETCHERS[provider](ip, self.transport, self.api_keys)
            except Exception as exc:
                last = exc
                if attempt < RETRIES:
                    self.sleep(BACKOFF_BASE_S * (2 ** attempt))
        raise last

    def _cache_path(self, provider, ip) -> Optional[Path]:
        if self.cache_dir is None:
            return None
        day = time.strftime("%Y%m%d", time.gmtime(self.now()))
        return self.cache_dir / provider / f"{ip}-{day}.json"

    def _cache_read(self, provider, ip):
        path = self._cache_path(provider, ip)
        if path is not None and path.is_file():
            return json.loads(path.read_text())
        return None

    def _cache_write(self, provider, ip, fragment):
        path = self._cache_path(provider, ip)
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(fragment))
        tmp.replace(path)


def lookup_intel(ip: str, providers=PROVIDERS, mode: str = "fixture", **kwargs) -> IntelRecord:
    """One-shot lookup; see IntelLookup for the reusable client."""
    return IntelLookup(mode=mode, **kwargs).lookup(ip, providers)


# --- report annotation ---

def intel_block(record: IntelRecord) -> str:
    """One 'Threat intelligence:' block for a single public IP."""
    lines = [f"Threat intelligence: {record.ip}"]
    if record.vt_malicious_count is not None:
        lines.append(f"  flagged malicious by {record.vt_malicious_count} engines")
    if record.shodan_ports:
        ports = ", ".join(f"{p}/{t}" for p, t in sorted(record.shodan_ports))
        lines.append(f"  open ports: {ports}")
    if record.shodan_tags:
        lines.append("  tags: " + ", ".join(sorted(record.shodan_tags)))
    if record.shodan_cves:
        lines.append("  known CVEs: " + ", ".join(sorted(record.shodan_cves)))
    if record.abuse_confidence is not None:
        lines.append(f"  abuse-confidence {record.abuse_confidence} "
                     f"({verdict_for(record.abuse_confidence)})")
    if record.provider_errors:
        lines.append("  provider errors: " + "; ".join(record.provider_errors))
    return "\n".join(lines)


@dataclass
class EnrichedReport:
    """Interpretation report plus per-label intel blocks inside metadata sections."""

    base: InterpretationReport
    intel: dict  # label -> list of IntelRecord

    def sections(self) -> list:
        out = []
        for kind, label, text in self.base.sections():
            if kind == "metadata" and label in self.intel and self.intel[label]:
                blocks = [intel_block(r) for r in
                          sorted(self.intel[label], key=lambda r: r.ip)]
                text = text + "\n" + "\n".join(blocks)
            out.append((kind, label, text))
        return out

    def render(self) -> str:
        return "\n\n".join(text for _, _, text in self.sections()) + "\n"


def annotate_report(report: InterpretationReport, intel: dict) -> EnrichedReport:
    """Insert intel summaries; a report without public-IP intel is unchanged."""
    return EnrichedReport(base=report, intel={k: list(v) for k, v in intel.items() if v})


def enrich_report(report: InterpretationReport, lookup: IntelLookup, flows=()) -> EnrichedReport:
    """Find public IPs per label, look each up once, and annotate the report."""
    per_label_ips = find_public_ips(report, flows)
    records = {}
    intel = {}
    for label in sorted(per_label_ips, key=CLASS_LABELS.index):
        rows = []
        for ip in sorted(per_label_ips[label]):
            if ip not in records:
                try:
                    records[ip] = lookup.lookup(ip)
                except (NoFixtureForIp, AllProvidersFailed) as exc:
                    records[ip] = IntelRecord(ip=ip, provider_errors=[f"lookup failed: {exc}"])
            rows.append(records[ip])
        intel[label] = rows
    return annotate_report(report, intel)
