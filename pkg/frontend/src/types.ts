// Payload shapes of the capture-analysis HTTP API (docs/schemas in the backend repo).

export interface SessionEntry {
  capture_hash: string;
  session_id: string;
  created_at: number;
}

export interface SessionsResponse {
  sessions: SessionEntry[];
  latest: string | null;
}

export interface CaptureResponse {
  session_id: string;
  skipped: boolean;
}

export interface WebCitation {
  url: string;
  snippet: string;
}

export interface SentenceCheck {
  sentence: string;
  supported: boolean;
  best_chunk_id: string | null;
  overlap: number;
}

export interface Faithfulness {
  passed: boolean;
  per_sentence: SentenceCheck[];
}

export type SourceClass = "CaptureGrounded" | "WebSourced" | "Mixed" | "Insufficient";

export interface AnswerRecord {
  text: string;
  cited_chunk_ids: string[];
  source_class: SourceClass;
  web_citations: WebCitation[];
  steps_used: number;
  faithfulness: Faithfulness;
}

export interface RankedChunk {
  chunk_id: string;
  dense_score: number | null;
  sparse_score: number | null;
  keyword_hit: boolean;
  fused_score: number | null;
  rerank_score: number | null;
  modality: string;
  level: string;
  seq: number;
  source_uid: string | null;
  text: string;
}

export interface EvidenceBundle {
  query: string;
  mode: "DenseOnly" | "Hybrid";
  session_id: string;
  degraded: boolean;
  ranked: RankedChunk[];
}

export interface QueryResponse {
  answer: AnswerRecord;
  bundle: EvidenceBundle;
}

export type RetrievalMode = "dense" | "hybrid";

// client-measured per-question stats for the profiling panel
export interface QueryStats {
  latencyMs: number;
  responseBytes: number;
  stepsUsed: number;
  evidenceCount: number;
  mode: RetrievalMode;
}
