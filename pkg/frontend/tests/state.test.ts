import { describe, expect, it } from "vitest";

import { ConsoleState, EvidenceFidelityError } from "../src/state.js";
import type { QueryResponse, QueryStats } from "../src/types.js";
import { queryFlows, sessionsResponse, uploadDuplicate, uploadFirst } from "./fixtures.js";

const STATS: QueryStats = {
  latencyMs: 12.5, responseBytes: 100, stepsUsed: 1, evidenceCount: 3, mode: "hybrid",
};


describe("ConsoleState", () => {
  it("selects the latest session from the index", () => {
    const state = new ConsoleState();
    state.setSessions(sessionsResponse);
    expect(state.activeSession).toBe(sessionsResponse.latest);
    expect(state.sessions.length).toBe(sessionsResponse.sessions.length);
  });

  it("upload notice distinguishes new from already indexed", () => {
    const state = new ConsoleState();
    expect(state.recordUpload(uploadFirst)).toContain("indexed as session");
    expect(state.recordUpload(uploadDuplicate)).toContain("already indexed");
    expect(state.activeSession).toBe(uploadDuplicate.session_id);
  });

  it("transcript is append-only per session", () => {
    const state = new ConsoleState();
    state.recordUpload(uploadFirst);
    state.appendAnswer("q1", queryFlows, STATS);
    state.appendAnswer("q2", queryFlows, STATS);
    expect(state.transcript().map((e) => e.question)).toEqual(["q1", "q2"]);

    state.selectSession("another-session");
    expect(state.transcript()).toEqual([]);
    state.selectSession(uploadFirst.session_id);
    expect(state.transcript().length).toBe(2);
  });

  it("mode toggle flips between hybrid and dense", () => {
    const state = new ConsoleState();
    expect(state.mode).toBe("hybrid");
    expect(state.toggleMode()).toBe("dense");
    expect(state.toggleMode()).toBe("hybrid");
  });

  it("rejects citations that are absent from the bundle", () => {
    const state = new ConsoleState();
    state.recordUpload(uploadFirst);
    const tampered: QueryResponse = JSON.parse(JSON.stringify(queryFlows));
    tampered.answer.cited_chunk_ids = ["f".repeat(64)];
    expect(() => state.appendAnswer("q", tampered, STATS))
      .toThrow(EvidenceFidelityError);
  });

  it("errors never clear the transcript", () => {
    const state = new ConsoleState();
    state.recordUpload(uploadFirst);
    state.appendAnswer("q1", queryFlows, STATS);
    state.recordError("503: chat unavailable");
    expect(state.errors).toEqual(["503: chat unavailable"]);
    expect(state.transcript().length).toBe(1);
  });

  it("pending flag follows request lifecycle", () => {
    const state = new ConsoleState();
    state.beginRequest();
    expect(state.pending).toBe(true);
    state.endRequest();
    expect(state.pending).toBe(false);
  });
});
