// Console state: session list, per-session append-only transcripts, mode
// toggle, pending flag, and inline notices/errors that never clear history.

import type {
  CaptureResponse,
  QueryResponse,
  QueryStats,
  RetrievalMode,
  SessionEntry,
  SessionsResponse,
} from "./types.js";

export interface TranscriptEntry {
  question: string;
  response: QueryResponse;
  stats: QueryStats;
}

export class EvidenceFidelityError extends Error {}

export class ConsoleState {
  sessions: SessionEntry[] = [];
  activeSession: string | null = null;
  mode: RetrievalMode = "hybrid";
  pending = false;
  notice: string | null = null;
  errors: string[] = [];
  private transcripts = new Map<string, TranscriptEntry[]>();

  transcript(): readonly TranscriptEntry[] {
    if (this.activeSession === null) {
      return [];
    }
    return this.transcripts.get(this.activeSession) ?? [];
  }

  setSessions(resp: SessionsResponse): void {
    this.sessions = resp.sessions;
    if (this.activeSession === null && resp.latest !== null) {
      this.activeSession = resp.latest;
    }
  }

  selectSession(sessionId: string): void {
    this.activeSession = sessionId;
    this.notice = null;
  }

  toggleMode(): RetrievalMode {
    this.mode = this.mode === "hybrid" ? "dense" : "hybrid";
    return this.mode;
  }

  beginRequest(): void {
    this.pending = true;
    this.notice = null;
  }

  endRequest(): void {
    this.pending = false;
  }

  recordUpload(resp: CaptureResponse): string {
    this.activeSession = resp.session_id;
    this.notice = resp.skipped
      ? `already indexed (session ${resp.session_id})`
      : `indexed as session ${resp.session_id}`;
    return this.notice;
  }

  appendAnswer(question: string, response: QueryResponse, stats: QueryStats): TranscriptEntry {
    // evidence fidelity: every citation must point at a chunk in its bundle
    const bundleIds = new Set(response.bundle.ranked.map((r) => r.chunk_id));
    for (const cited of response.answer.cited_chunk_ids) {
      if (!bundleIds.has(cited)) {
        throw new EvidenceFidelityError(
          `citation ${cited} is not present in the evidence bundle`);
      }
    }
    const sessionId = this.activeSession ?? response.bundle.session_id;
    const entry: TranscriptEntry = { question, response, stats };
    const list = this.transcripts.get(sessionId) ?? [];
    list.push(entry); // append-only; nothing ever removes or rewrites entries
    this.transcripts.set(sessionId, list);
    return entry;
  }

  recordError(message: string): void {
    this.errors.push(message); // transcript stays intact
  }
}
