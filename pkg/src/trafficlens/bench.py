"""Two-arm retrieval benchmark (dense-only vs hybrid) with per-query profiling.

Arms run sequentially so resource numbers stay honest. Token counts come from
the chat client when it reports them, whitespace tokens otherwise; GPU memory
comes from an optional probe and reads 0 without a device.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from typing import Optional

import psutil

from .agent import AgentConfig, AnswerRecord, answer
from .metrics import MetricReport, compute_metrics
from .retrieval import RetrievalConfig


@dataclass(frozen=True)
class QAPair:
    question: str
    reference_answer: str
    source_modality: str
    pcap_id: str

    def __post_init__(self):
        if not self.question or not self.reference_answer:
            raise ValueError("QA pair needs a non-empty question and reference")


def load_qa_set(path) -> list:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            pairs.append(QAPair(question=obj["question"],
                                reference_answer=obj["reference_answer"],
                                source_modality=obj.get("source_modality", ""),
                                pcap_id=obj.get("pcap_id", "")))
    return pairs


@dataclass
class ProfileReport:
    exec_time_s: float
    mem_mb: float
    cpu_pct: float
    gpu_mem_mb: float
    avg_tokens: float
    avg_response_bytes: float

    FIELDS = ("exec_time_s", "mem_mb", "cpu_pct", "gpu_mem_mb",
              "avg_tokens", "avg_response_bytes")

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.FIELDS}


class _TokenRecordingChat:
    """Wraps a chat client to remember the last reported token count."""

    def __init__(self, inner):
        self.inner = inner
        self.last_tokens = None

    def complete(self, system, user):
        result = self.inner.complete(system, user)
        self.last_tokens = result.tokens
        return result


def profile_call(fn, gpu_probe=None):
    """Run fn() and measure wall time, resident-memory delta, and CPU share."""
    proc = psutil.Process()
    rss_before = proc.memory_info().rss
    cpu_before = proc.cpu_times()
    t0 = time.perf_counter()
    result = fn()
    wall = time.perf_counter() - t0
    cpu_after = proc.cpu_times()
    rss_after = proc.memory_info().rss
    cpu_delta = (cpu_after.user - cpu_before.user) + (cpu_after.system - cpu_before.system)
    cores = psutil.cpu_count(logical=True) or 1
    cpu_pct = 100.0 * cpu_delta / wall / cores if wall > 0 else 0.0
    return result, {
        "exec_time_s": max(wall, 1e-9),
        "mem_mb": max(rss_after - rss_before, 0) / (1024.0 * 1024.0),
        "cpu_pct": max(cpu_pct, 0.0),
        "gpu_mem_mb": float(gpu_probe()) if gpu_probe is not None else 0.0,
    }


@dataclass
class BenchRow:
    pcap_id: str
    question: str
    arm: str
    answer_text: str
    record: AnswerRecord
    metrics: MetricReport
    profile: ProfileReport


@dataclass
class BenchmarkResult:
    rows: list = field(default_factory=list)

    def arms(self) -> list:
        seen = []
        for row in self.rows:
            if row.arm not in seen:
                seen.append(row.arm)
        return seen

    def arm_rows(self, arm: str) -> list:
        return [row for row in self.rows if row.arm == arm]

    def metric_means(self, arm: str) -> dict:
        rows = self.arm_rows(arm)
        if not rows:
            return {}
        keys = rows[0].metrics.as_dict().keys()
        return {k: sum(r.metrics.as_dict()[k] for r in rows) / len(rows) for k in keys}

    def profile_means(self, arm: str) -> dict:
        rows = self.arm_rows(arm)
        if not rows:
            return {}
        return {name: sum(getattr(r.profile, name) for r in rows) / len(rows)
                for name in ProfileReport.FIELDS}

    def to_markdown(self) -> str:
        arms = self.arms()
        lines = ["| Metric | " + " | ".join(arms) + " |",
                 "|---" * (len(arms) + 1) + "|"]
        means = {arm: self.metric_means(arm) for arm in arms}

        def row(label, fmt):
            lines.append(f"| {label} | " + " | ".join(fmt(means[a]) for a in arms) + " |")

        row("BERT (p/r/f)", lambda m: f"{m['bert_p']:.2f} / {m['bert_r']:.2f} / {m['bert_f']:.2f}")
        row("ROUGE (r1/r2/rL)", lambda m: f"{m['rouge1']:.2f} / {m['rouge2']:.2f} / {m['rougeL']:.2f}")
        row("BLEU", lambda m: f"{m['bleu']:.2f}")
        row("METEOR", lambda m: f"{m['meteor']:.2f}")

        lines.append("")
        lines.append("| Resource | " + " | ".join(arms) + " |")
        lines.append("|---" * (len(arms) + 1) + "|")
        profiles = {arm: self.profile_means(arm) for arm in arms}
        resource_labels = (
            ("Execution Time (s)", "exec_time_s", "{:.4f}"),
            ("Memory Usage (MB)", "mem_mb", "{:.4f}"),
            ("GPU Memory Used (MB)", "gpu_mem_mb", "{:.4f}"),
            ("CPU Utilization (%)", "cpu_pct", "{:.4f}"),
            ("Avg. number of tokens", "avg_tokens", "{:.4f}"),
            ("Avg. Response size (bytes)", "avg_response_bytes", "{:.4f}"),
        )
        for label, key, fmt in resource_labels:
            lines.append(f"| {label} | " + " | ".join(
                fmt.format(profiles[a][key]) for a in arms) + " |")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["pcap_id", "question", "arm", "bleu", "rouge1", "rouge2",
                         "rougeL", "meteor", "bert_p", "bert_r", "bert_f",
                         "exec_time_s", "mem_mb", "cpu_pct", "gpu_mem_mb",
                         "avg_tokens", "avg_response_bytes", "source_class"])
        for row in self.rows:
            m = row.metrics.as_dict()
            p = row.profile.as_dict()
            writer.writerow([row.pcap_id, row.question, row.arm,
                             *(f"{m[k]:.6f}" for k in ("bleu", "rouge1", "rouge2", "rougeL",
                                                       "meteor", "bert_p", "bert_r", "bert_f")),
                             *(f"{p[k]:.6f}" for k in ProfileReport.FIELDS),
                             row.record.source_class])
        return buf.getvalue()


def default_arm_configs(base: Optional[RetrievalConfig] = None) -> dict:
    base = base or RetrievalConfig()
    dense = RetrievalConfig(alpha=base.alpha, k_dense=base.k_dense, k_sparse=base.k_sparse,
                            top_k=base.top_k, mode="DenseOnly", rerank=base.rerank,
                            bm25_k1=base.bm25_k1, bm25_b=base.bm25_b)
    hybrid = RetrievalConfig(alpha=base.alpha, k_dense=base.k_dense, k_sparse=base.k_sparse,
                             top_k=base.top_k, mode="Hybrid", rerank=base.rerank,
                             bm25_k1=base.bm25_k1, bm25_b=base.bm25_b)
    return {"DenseOnly": dense, "Hybrid": hybrid}


def run_benchmark(qa_set, store, arm_configs: dict, agent_cfg: AgentConfig, embedder,
                  chat, search=None, reranker=None, gpu_probe=None, audit=None) -> BenchmarkResult:
    """Answer every QA pair under every arm; collect metrics and a profile per run."""
    result = BenchmarkResult()
    for arm, retrieval_cfg in arm_configs.items():
        for pair in qa_set:
            recording_chat = _TokenRecordingChat(chat)
            record, prof = profile_call(
                lambda: answer(pair.question, store, agent_cfg, retrieval_cfg,
                               embedder, recording_chat, search=search,
                               reranker=reranker, audit=audit),
                gpu_probe=gpu_probe)
            text = record.text
            tokens = recording_chat.last_tokens
            profile = ProfileReport(
                exec_time_s=prof["exec_time_s"],
                mem_mb=prof["mem_mb"],
                cpu_pct=prof["cpu_pct"],
                gpu_mem_mb=prof["gpu_mem_mb"],
                avg_tokens=float(tokens if tokens is not None else len(text.split())),
                avg_response_bytes=float(len(text.encode("utf-8"))),
            )
            metrics = compute_metrics(text, pair.reference_answer, embedder)
            result.rows.append(BenchRow(pcap_id=pair.pcap_id, question=pair.question,
                                        arm=arm, answer_text=text, record=record,
                                        metrics=metrics, profile=profile))
    return result
