"""Acceptance suite: one test per release criterion, each printing a PASS line
with its elapsed time and enforcing the stated runtime bound and tolerances."""

import itertools
import json
import math
import random
import time
from pathlib import Path

import numpy as np
import pytest

from trafficlens.agent import AgentConfig, AnswerRecord, ChatResult, FaithfulnessVerdict, FixtureChat, answer
from trafficlens.bench import ProfileReport, QAPair, default_arm_configs, run_benchmark
from trafficlens.capture import parse_capture
from trafficlens.corpus import HashingEmbedder, ingest, latest_session, list_sessions
from trafficlens.errors import EmbedderUnavailable
from trafficlens.flows import assemble_flows, decode_flag_sequence, skipped_packets
from trafficlens.metrics import bertscore, bleu, meteor, rouge
from trafficlens.pipeline import ServiceConfig, process_capture, query_session
from trafficlens.retrieval import BM25Index, RetrievalConfig, retrieve, tokenize

from pcap_builder import random_capture
from store_helpers import EMBEDDER, make_store
from test_corpus import CountingEmbedder, make_artifacts
from test_flows import ALL_SUBSETS, signature_oracle
from test_retrieval import bm25_reference

FIXTURES = Path(__file__).parent / "fixtures"


class _Timer:
    def __init__(self, name, bound_s):
        self.name = name
        self.bound_s = bound_s

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.t0
        if exc_type is None:
            assert elapsed < self.bound_s, \
                f"{self.name}: {elapsed:.2f}s exceeded the {self.bound_s}s bound"
            print(f"ACCEPTANCE {self.name}: PASS ({elapsed:.2f}s < {self.bound_s}s)")
        else:
            print(f"ACCEPTANCE {self.name}: FAIL after {elapsed:.2f}s")
        return False


def test_metric_oracles():
    with _Timer("metric-oracles", 10):
        # hand-worked examples, 1e-4 on the 0-100 scale
        assert bleu("the cat sat", ["the cat sat down"]) == \
            pytest.approx(100.0 * math.exp(1.0 - 4.0 / 3.0), abs=1e-4)
        assert bleu("x y z", ["x y z"]) == pytest.approx(100.0, abs=1e-4)
        long_miss = " ".join(f"tok{i}" for i in range(60))
        assert bleu(long_miss, ["entirely different reference words"]) < 1.0

        r1, r2, rl = rouge("a b c", "a c")
        assert (r1, r2, rl) == (pytest.approx(80.0, abs=1e-4), pytest.approx(0.0, abs=1e-4),
                                pytest.approx(80.0, abs=1e-4))
        assert rouge("q w e", "q w e") == (pytest.approx(100.0, abs=1e-4),) * 3
        assert rouge("aa bb", "cc dd") == (0.0, 0.0, 0.0)

        assert meteor("the cat sat down", "the cat sat down") == pytest.approx(99.21875, abs=1e-4)
        assert meteor("device resets", "device reset") == pytest.approx(93.75, abs=1e-4)
        assert meteor("aa bb", "cc dd") == 0.0

        p, r, f = bertscore("dns query observed", "dns query observed", EMBEDDER)
        assert f == pytest.approx(100.0, abs=1e-4)
        p, _, f = bertscore("alpha beta", "alpha beta gamma", EMBEDDER)
        assert p == pytest.approx(100.0, abs=1e-4) and f < p

        # identity is maximal on 1,000 random strings
        rng = random.Random(71)
        vocab = ["dns", "mqtt", "flow", "reset", "packet", "sensor", "port", "tcp",
                 "udp", "bytes", "device", "query", "topic", "publish", "scan", "coil"]
        for _ in range(1000):
            tokens = rng.choices(vocab, k=rng.randint(2, 10))
            text = " ".join(tokens)
            assert bleu(text, [text]) == pytest.approx(100.0, abs=1e-4)
            r1, r2, rl = rouge(text, text)
            assert r1 == pytest.approx(100.0, abs=1e-4)
            assert rl == pytest.approx(100.0, abs=1e-4)
            m = len(tokens)
            assert meteor(text, text) == pytest.approx(100.0 * (1 - 0.5 / m ** 3), abs=1e-4)
            mutated = " ".join(tokens[:-1] + [rng.choice(vocab)])
            assert meteor(mutated, text) <= meteor(text, text) + 1e-9
            _, _, f = bertscore(text, text, EMBEDDER)
            assert f == pytest.approx(100.0, abs=1e-4)


def test_bm25_brute_force_equivalence():
    with _Timer("bm25-equivalence", 30):
        rng = random.Random(73)
        vocab = [f"w{i}" for i in range(40)] + ["10.0.0.2", "tcp.dstport:442", "dns",
                                                "sensor.local", "1883"]
        for _ in range(100):
            n_docs = rng.randint(1, 50)
            texts = [" ".join(rng.choices(vocab, k=rng.randint(1, 30)))
                     for _ in range(n_docs)]
            index = BM25Index([c for c in make_store(texts).chunks])
            query_tokens = rng.choices(vocab, k=rng.randint(1, 5))
            expected = bm25_reference(query_tokens, index.docs)
            for i in range(n_docs):
                got = index.score(query_tokens, i)
                assert abs(got - expected[i]) <= 1e-9


def _synthetic_identifier_corpus(rng):
    """200 chunks of confusable log-like text; 50 carry one unique IP each.

    Every octet, port and count is drawn from one shared pool, so the hashing
    embedder (which splits identifiers into pieces) sees near-identical token
    bags everywhere; only the full dotted IP token distinguishes a gold chunk.
    """
    pool = list(range(1, 26))
    common = ["session", "established", "gateway", "exchange", "observed",
              "window", "transferred", "normally", "upstream", "burst"]

    def chunk_text(tag, a, b):
        port = rng.choice(pool)
        count = rng.choice(pool)
        words = " ".join(rng.sample(common, k=5))
        return (f"log entry {tag}: address 172.16.{a}.{b} port {port} "
                f"count {count} {words}")

    pairs = [(a, b) for a in pool for b in pool]
    rng.shuffle(pairs)
    gold_pairs = pairs[:50]
    decoy_pairs = pairs[50:]

    texts = []
    gold = []
    for i in range(150):
        a, b = rng.choice(decoy_pairs)
        texts.append(chunk_text(f"d{i}", a, b))
    for i, (a, b) in enumerate(gold_pairs):
        ip = f"172.16.{a}.{b}"
        text = chunk_text(f"g{i}", a, b)
        texts.append(text)
        gold.append((ip, text))
    rng.shuffle(texts)
    return texts, gold


def test_directional_hybrid_over_dense():
    with _Timer("hybrid-over-dense", 60):
        rng = random.Random(79)
        texts, gold = _synthetic_identifier_corpus(rng)
        store = make_store(texts)
        # construction check: each gold IP occurs in exactly one chunk
        for ip, _ in gold:
            assert sum(1 for t in texts if ip in tokenize(t)) == 1

        hits = {"DenseOnly": 0, "Hybrid": 0}
        for mode in hits:
            cfg = RetrievalConfig(mode=mode, top_k=5)
            for ip, gold_text in gold:
                query = f"details for address {ip}"
                bundle = retrieve(query, store, cfg, EMBEDDER)
                if gold_text in [chunk.text for _, chunk in bundle.ranked]:
                    hits[mode] += 1
        hybrid_recall = hits["Hybrid"] / len(gold)
        dense_recall = hits["DenseOnly"] / len(gold)
        print(f"  recall@5 hybrid={hybrid_recall:.2f} dense={dense_recall:.2f}")
        assert hybrid_recall >= 0.9
        assert hybrid_recall > dense_recall


def test_flow_reconstruction_equivalence(tmp_path):
    with _Timer("flow-equivalence", 30):
        rng = random.Random(83)
        for i in range(50):
            data, truth = random_capture(rng, max_packets=1000)
            path = tmp_path / f"cap{i}.pcap"
            path.write_bytes(data)
            _, records = parse_capture(path)
            flows = assemble_flows(records)

            groups = {}
            for t in truth:
                if t["transport"] not in ("tcp", "udp"):
                    continue
                a = (tuple(int(x) for x in t["src"].split(".")), t["sport"], t["src"])
                b = (tuple(int(x) for x in t["dst"].split(".")), t["dport"], t["dst"])
                lo, hi = sorted([a, b])
                key = ((lo[2], lo[1]), (hi[2], hi[1]), t["transport"])
                groups.setdefault(key, []).append(t)

            assert len(flows) == len(groups)
            for flow in flows:
                group = groups[(flow.key.ep_a, flow.key.ep_b, flow.key.transport)]
                assert flow.pkt_count == len(group)
                assert flow.byte_count == sum(t["frame_len"] for t in group)
            assert sum(f.pkt_count for f in flows) + skipped_packets(records) == len(records)


def test_connection_signature_table():
    with _Timer("signature-table", 10):
        # the 6-flag alphabet, exhaustively to length 4
        singles = [frozenset({f}) for f in ("FIN", "SYN", "RST", "PSH", "ACK", "URG")]
        for length in range(5):
            for seq in itertools.product(singles, repeat=length):
                assert decode_flag_sequence(seq) == signature_oracle(seq)
        # beyond the letter of the bound: every flag-set combination to length 3
        for length in range(4):
            for seq in itertools.product(ALL_SUBSETS, repeat=length):
                assert decode_flag_sequence(seq) == signature_oracle(seq)
        # realistic composite-flag alphabet to length 4
        realistic = [frozenset(s) for s in ({"SYN"}, {"SYN", "ACK"}, {"ACK"},
                                            {"PSH", "ACK"}, {"FIN"}, {"FIN", "ACK"},
                                            {"RST"}, {"RST", "ACK"})]
        for length in range(5):
            for seq in itertools.product(realistic, repeat=length):
                assert decode_flag_sequence(seq) == signature_oracle(seq)


def test_session_lifecycle(tmp_path):
    with _Timer("session-lifecycle", 20):
        root = tmp_path / "store"
        embedder = CountingEmbedder()
        sids = {}
        for i, tag in enumerate("ABCD"):
            arts = make_artifacts(tmp_path / tag.lower(), tag)
            sids[tag] = ingest(arts, root, embedder, tag.lower() * 64,
                               now=lambda i=i: 1700000000.0 + 60 * i).session_id
        retained = [e["session_id"] for e in list_sessions(root)]
        assert retained == [sids["B"], sids["C"], sids["D"]]
        assert not (root / sids["A"]).exists()

        # re-ingest of unchanged inputs: zero embed calls, latest repointed
        embedder.calls = 0
        again = ingest(make_artifacts(tmp_path / "b", "B"), root, embedder, "b" * 64,
                       now=lambda: 1700000400.0)
        assert again.reused and again.session_id == sids["B"]
        assert embedder.calls == 0
        assert latest_session(root) == sids["B"]

        # fault injection: failed ingest leaves the index byte-identical
        index_before = (root / "session_index.json").read_text()
        dirs_before = {p.name for p in root.iterdir() if p.is_dir()}

        class Bomb(HashingEmbedder):
            def embed(self, text):
                raise EmbedderUnavailable("injected")

        with pytest.raises(EmbedderUnavailable):
            ingest(make_artifacts(tmp_path / "e", "E"), root, Bomb(), "e" * 64,
                   now=lambda: 1700000500.0)
        assert (root / "session_index.json").read_text() == index_before
        assert {p.name for p in root.iterdir() if p.is_dir()} == dirs_before


def test_agent_bounds_and_integrity():
    with _Timer("agent-bounds", 20):
        corpus_texts = [
            "Flow ab12cd34ef56: 10.0.0.2:49152 <-> 10.0.0.1:80 (TCP)\n"
            "Packets: 3 | Bytes: 162\nSignature: CompleteHandshake",
            "Capture summary:\nFlows: 1 (tcp 1, udp 0) | Packets: 3 | Non-flow packets: 0",
        ]
        store = make_store(corpus_texts)

        class AlwaysUnfaithful:
            def complete(self, system, user):
                return ChatResult(text="Device 9.9.9.9 exfiltrated 999999 bytes.")

        for max_steps in (1, 2, 3, 5, 8):
            record = answer("how many flows are in this capture?", store,
                            AgentConfig(max_steps=max_steps), RetrievalConfig(top_k=3),
                            EMBEDDER, AlwaysUnfaithful())
            assert record.steps_used <= max_steps
            assert record.source_class == "Insufficient"  # identifier demotion

        with pytest.raises(ValueError):
            AnswerRecord(text="x", cited_chunk_ids=[], source_class="CaptureGrounded",
                         web_citations=[], steps_used=1,
                         faithfulness=FaithfulnessVerdict([], True))

        good = answer("how many flows are in this capture?", store, AgentConfig(),
                      RetrievalConfig(top_k=3), EMBEDDER, FixtureChat())
        assert good.source_class == "CaptureGrounded" and good.cited_chunk_ids


def test_hermetic_end_to_end(tmp_path, socket_recorder):
    with _Timer("hermetic-e2e", 120):
        config = ServiceConfig(data_dir=tmp_path / "data", offline=True)
        result = process_capture(FIXTURES / "handshake.pcap", config)
        record, bundle = query_session(result.session_id,
                                       "how many flows are in this capture?", config)
        assert record.source_class == "CaptureGrounded"

        qa = [QAPair(question="how many flows are in this capture?",
                     reference_answer=record.text,
                     source_modality="FlowSummary", pcap_id="handshake")]
        from trafficlens.corpus import load_session
        store = load_session(config.store_root, result.session_id)
        bench = run_benchmark(qa, store, default_arm_configs(), AgentConfig(),
                              EMBEDDER, FixtureChat())
        assert bench.rows
        assert socket_recorder == [], f"non-loopback traffic: {socket_recorder}"


def test_profiler_fields(tmp_path):
    with _Timer("profiler-fields", 20):
        store = make_store([
            "Capture summary:\nFlows: 1 (tcp 1, udp 0) | Packets: 3 | Non-flow packets: 0"])
        qa = [QAPair(question="how many flows are in this capture?",
                     reference_answer="Flows: 1", source_modality="FlowSummary",
                     pcap_id="x")]
        result = run_benchmark(qa, store, default_arm_configs(), AgentConfig(),
                               EMBEDDER, FixtureChat())
        assert len(result.rows) == 2
        for row in result.rows:
            prof = row.profile.as_dict()
            assert set(prof) == set(ProfileReport.FIELDS)  # all six resource fields
            assert all(v >= 0 for v in prof.values())
            assert prof["avg_response_bytes"] == len(row.answer_text.encode("utf-8"))
