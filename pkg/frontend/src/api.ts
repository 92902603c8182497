// Thin fetch client for the documented HTTP API; only the read/query/upload
// calls the console is allowed to make.

import type {
  CaptureResponse,
  QueryResponse,
  RetrievalMode,
  SessionsResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

async function errorFrom(resp: Response): Promise<ApiError> {
  let detail = resp.statusText || `HTTP ${resp.status}`;
  try {
    const body = await resp.json();
    if (body && typeof body.detail === "string") {
      detail = body.detail;
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(resp.status, detail);
}

export class ApiClient {
  constructor(private baseUrl: string = "") {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async uploadCapture(file: Blob, name = "capture.pcap"): Promise<CaptureResponse> {
    const form = new FormData();
    form.append("file", file, name);
    const resp = await fetch(this.url("/captures"), { method: "POST", body: form });
    if (!resp.ok) {
      throw await errorFrom(resp);
    }
    return (await resp.json()) as CaptureResponse;
  }

  async sessions(): Promise<SessionsResponse> {
    const resp = await fetch(this.url("/sessions"));
    if (!resp.ok) {
      throw await errorFrom(resp);
    }
    return (await resp.json()) as SessionsResponse;
  }

  async query(sessionId: string, question: string, mode: RetrievalMode): Promise<QueryResponse> {
    const resp = await fetch(this.url(`/sessions/${encodeURIComponent(sessionId)}/query`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ question, mode }),
    });
    if (!resp.ok) {
      throw await errorFrom(resp);
    }
    return (await resp.json()) as QueryResponse;
  }

  async report(sessionId: string): Promise<string> {
    const resp = await fetch(this.url(`/sessions/${encodeURIComponent(sessionId)}/report`));
    if (!resp.ok) {
      throw await errorFrom(resp);
    }
    return resp.text();
  }

  async healthy(): Promise<boolean> {
    try {
      const resp = await fetch(this.url("/healthz"));
      return resp.ok;
    } catch {
      return false;
    }
  }
}
