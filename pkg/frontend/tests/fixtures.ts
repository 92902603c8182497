// Recorded payloads captured from the real backend service, frozen as fixtures
// so the console builds and tests without the backend running.

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import type { CaptureResponse, QueryResponse, SessionsResponse } from "../src/types.js";

const here = dirname(fileURLToPath(import.meta.url));

function load<T>(name: string): T {
  return JSON.parse(readFileSync(join(here, "fixtures", name), "utf-8")) as T;
}

export const uploadFirst = load<CaptureResponse>("upload_first.json");
export const uploadDuplicate = load<CaptureResponse>("upload_duplicate.json");
export const sessionsResponse = load<SessionsResponse>("sessions.json");
export const queryFlows = load<QueryResponse>("query_flows.json");
export const queryWeb = load<QueryResponse>("query_web.json");
export const query404 = load<{ status: number; body: { detail: string } }>("query_404.json");
export const upload400 = load<{ status: number; body: { detail: string } }>("upload_400.json");
export const reportText = readFileSync(join(here, "fixtures", "report.txt"), "utf-8");

export function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export function textResponse(body: string, status = 200): Response {
  return new Response(body, { status, headers: { "Content-Type": "text/plain" } });
}

/**
 * A fetch implementation speaking the recorded wire protocol of the backend:
 * first upload indexes, repeat uploads skip, queries answer from the capture
 * or the web fixture depending on the question.
 */
export function fixtureBackedService(): typeof fetch {
  let uploads = 0;
  return async (input: RequestInfo | URL, init?: RequestInit): Promise<Response> => {
    const url = typeof input === "string" ? input : input.toString();
    const method = init?.method ?? "GET";

    if (url.endsWith("/captures") && method === "POST") {
      uploads += 1;
      return jsonResponse(uploads === 1 ? uploadFirst : uploadDuplicate);
    }
    if (url.endsWith("/sessions") && method === "GET") {
      return jsonResponse(sessionsResponse);
    }
    if (url.includes("/sessions/") && url.endsWith("/query") && method === "POST") {
      const sessionId = decodeURIComponent(url.split("/sessions/")[1].split("/query")[0]);
      if (sessionId !== uploadFirst.session_id) {
        return jsonResponse(query404.body, query404.status);
      }
      const body = JSON.parse(String(init?.body ?? "{}")) as { question: string };
      if (body.question.toLowerCase().includes("mqtt")) {
        return jsonResponse(queryWeb);
      }
      return jsonResponse(queryFlows);
    }
    if (url.includes("/sessions/") && url.endsWith("/report") && method === "GET") {
      return textResponse(reportText);
    }
    if (url.endsWith("/healthz")) {
      return jsonResponse({ status: "ok" });
    }
    return jsonResponse({ detail: "not found" }, 404);
  };
}
