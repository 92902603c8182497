// Pure HTML-string renderers; the DOM layer in main.ts only assigns innerHTML.

import type { AnswerRecord, EvidenceBundle, RankedChunk, SessionEntry, SourceClass } from "./types.js";
import type { TranscriptEntry } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

const BADGE_CLASS: Record<SourceClass, string> = {
  CaptureGrounded: "badge badge-capture",
  WebSourced: "badge badge-web",
  Mixed: "badge badge-mixed",
  Insufficient: "badge badge-insufficient",
};

const BADGE_LABEL: Record<SourceClass, string> = {
  CaptureGrounded: "capture-grounded",
  WebSourced: "web",
  Mixed: "mixed",
  Insufficient: "insufficient",
};

export function renderSourceBadge(sourceClass: SourceClass): string {
  return `<span class="${BADGE_CLASS[sourceClass]}">${BADGE_LABEL[sourceClass]}</span>`;
}

function fmtScore(value: number | null): string {
  return value === null ? "n/a" : value.toFixed(3);
}

export function shortId(chunkId: string): string {
  return chunkId.slice(0, 12);
}

export function renderEvidenceCard(chunk: RankedChunk, cited: boolean): string {
  const scores = [
    `dense ${fmtScore(chunk.dense_score)}`,
    `bm25 ${fmtScore(chunk.sparse_score)}`,
    `fused ${fmtScore(chunk.fused_score)}`,
    `rerank ${fmtScore(chunk.rerank_score)}`,
    chunk.keyword_hit ? "keyword hit" : "no keyword hit",
  ].join(" · ");
  const citedClass = cited ? " evidence-cited" : "";
  return [
    `<article class="evidence-card${citedClass}" id="chunk-${chunk.chunk_id}">`,
    `<header><code>${shortId(chunk.chunk_id)}</code>` +
    `<span class="modality">${escapeHtml(chunk.modality)}/${escapeHtml(chunk.level)}</span>` +
    (cited ? `<span class="cited-mark">cited</span>` : "") + `</header>`,
    `<p class="scores">${escapeHtml(scores)}</p>`,
    `<pre class="chunk-text">${escapeHtml(chunk.text)}</pre>`,
    `</article>`,
  ].join("");
}

export function renderEvidencePanel(bundle: EvidenceBundle, citedIds: string[]): string {
  const cited = new Set(citedIds);
  const cards = bundle.ranked.map((chunk) => renderEvidenceCard(chunk, cited.has(chunk.chunk_id)));
  const degraded = bundle.degraded
    ? `<p class="degraded">reranker unavailable; fused order shown</p>` : "";
  return `<section class="evidence-panel" data-mode="${bundle.mode}">${degraded}${cards.join("")}</section>`;
}

export function renderAnswerBubble(answer: AnswerRecord, bundle: EvidenceBundle): string {
  // citations render only for chunks actually present in the bundle
  const bundleIds = new Set(bundle.ranked.map((r) => r.chunk_id));
  const citations = answer.cited_chunk_ids
    .filter((id) => bundleIds.has(id))
    .map((id) => `<a class="citation" href="#chunk-${id}"><code>${shortId(id)}</code></a>`)
    .join(" ");
  const webLinks = answer.web_citations
    .map((c) => `<a class="web-citation" href="${escapeHtml(c.url)}">${escapeHtml(c.url)}</a>`)
    .join(" ");
  return [
    `<div class="answer-bubble source-${answer.source_class.toLowerCase()}">`,
    renderSourceBadge(answer.source_class),
    `<p class="answer-text">${escapeHtml(answer.text)}</p>`,
    citations ? `<p class="citations">Evidence: ${citations}</p>` : "",
    webLinks ? `<p class="web-citations">Sources: ${webLinks}</p>` : "",
    `</div>`,
  ].join("");
}

export function renderTranscript(entries: readonly TranscriptEntry[]): string {
  return entries
    .map((entry) => [
      `<div class="turn">`,
      `<div class="question-bubble">${escapeHtml(entry.question)}</div>`,
      renderAnswerBubble(entry.response.answer, entry.response.bundle),
      `</div>`,
    ].join(""))
    .join("");
}

export function renderSessionPicker(sessions: SessionEntry[], active: string | null): string {
  const options = sessions
    .map((s) => {
      const selected = s.session_id === active ? " selected" : "";
      return `<option value="${escapeHtml(s.session_id)}"${selected}>` +
        `${escapeHtml(s.session_id)} (${escapeHtml(s.capture_hash.slice(0, 12))})</option>`;
    })
    .join("");
  return options || `<option value="" disabled selected>no sessions yet</option>`;
}

export function renderProfilePanel(entries: readonly TranscriptEntry[]): string {
  if (entries.length === 0) {
    return `<p class="muted">no queries yet</p>`;
  }
  const rows = entries
    .map((e, i) => `<tr><td>${i + 1}</td><td>${e.stats.mode}</td>` +
      `<td>${e.stats.latencyMs.toFixed(1)}</td><td>${e.stats.responseBytes}</td>` +
      `<td>${e.stats.stepsUsed}</td><td>${e.stats.evidenceCount}</td></tr>`)
    .join("");
  return [
    `<table class="profile-table">`,
    `<thead><tr><th>#</th><th>mode</th><th>latency (ms)</th>` +
    `<th>response (bytes)</th><th>steps</th><th>evidence</th></tr></thead>`,
    `<tbody>${rows}</tbody>`,
    `</table>`,
  ].join("");
}

export function renderReportPanel(text: string): string {
  return `<pre class="report-text">${escapeHtml(text)}</pre>`;
}

export function renderErrors(errors: readonly string[]): string {
  return errors
    .map((e) => `<p class="error-banner">${escapeHtml(e)}</p>`)
    .join("");
}
