// DOM wiring: one ConsoleState instance drives the panels after every action.

import { ApiClient, ApiError } from "./api.js";
import { ConsoleState } from "./state.js";
import {
  renderErrors,
  renderProfilePanel,
  renderReportPanel,
  renderSessionPicker,
  renderTranscript,
} from "./render.js";
import type { RetrievalMode } from "./types.js";

const api = new ApiClient("");
const state = new ConsoleState();

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function redraw(): void {
  el("session-picker").innerHTML = renderSessionPicker(state.sessions, state.activeSession);
  el("transcript").innerHTML = renderTranscript(state.transcript());
  el("profile-panel").innerHTML = renderProfilePanel(state.transcript());
  el("errors").innerHTML = renderErrors(state.errors);
  el("notice").textContent = state.notice ?? "";
  el<HTMLButtonElement>("ask-button").disabled = state.pending || state.activeSession === null;
  el("mode-label").textContent = state.mode;
  const latest = state.transcript().at(-1);
  if (latest) {
    const bundle = latest.response.bundle;
    const cited = latest.response.answer.cited_chunk_ids;
    import("./render.js").then((r) => {
      el("evidence-panel").innerHTML = r.renderEvidencePanel(bundle, cited);
    });
  }
}

async function refreshSessions(): Promise<void> {
  try {
    state.setSessions(await api.sessions());
  } catch (err) {
    state.recordError(`could not list sessions: ${(err as Error).message}`);
  }
  redraw();
}

async function onUpload(): Promise<void> {
  const input = el<HTMLInputElement>("file-input");
  const file = input.files?.[0];
  if (!file) {
    return;
  }
  state.beginRequest();
  redraw();
  try {
    const resp = await api.uploadCapture(file, file.name);
    state.recordUpload(resp);
    await refreshSessions();
  } catch (err) {
    const message = err instanceof ApiError ? `${err.status}: ${err.message}` : String(err);
    state.recordError(`upload failed: ${message}`);
  } finally {
    state.endRequest();
    redraw();
  }
}

async function onAsk(): Promise<void> {
  const input = el<HTMLInputElement>("question-input");
  const question = input.value.trim();
  if (!question || state.activeSession === null || state.pending) {
    return;
  }
  const mode: RetrievalMode = state.mode;
  state.beginRequest();
  redraw();
  const t0 = performance.now();
  try {
    const response = await api.query(state.activeSession, question, mode);
    state.appendAnswer(question, response, {
      latencyMs: performance.now() - t0,
      responseBytes: new TextEncoder().encode(response.answer.text).length,
      stepsUsed: response.answer.steps_used,
      evidenceCount: response.bundle.ranked.length,
      mode,
    });
    input.value = "";
  } catch (err) {
    const message = err instanceof ApiError ? `${err.status}: ${err.message}` : String(err);
    state.recordError(`query failed: ${message}`);
  } finally {
    state.endRequest();
    redraw();
  }
}

async function onShowReport(): Promise<void> {
  if (state.activeSession === null) {
    return;
  }
  try {
    el("report-panel").innerHTML = renderReportPanel(await api.report(state.activeSession));
  } catch (err) {
    state.recordError(`report failed: ${(err as Error).message}`);
    redraw();
  }
}

function bind(): void {
  el("upload-button").addEventListener("click", () => void onUpload());
  el("ask-button").addEventListener("click", () => void onAsk());
  el("question-input").addEventListener("keydown", (event) => {
    if ((event as KeyboardEvent).key === "Enter") {
      void onAsk();
    }
  });
  el<HTMLSelectElement>("session-picker").addEventListener("change", (event) => {
    state.selectSession((event.target as HTMLSelectElement).value);
    redraw();
  });
  el("mode-toggle").addEventListener("change", () => {
    state.toggleMode();
    redraw();
  });
  el("report-button").addEventListener("click", () => void onShowReport());
  void refreshSessions();
}

document.addEventListener("DOMContentLoaded", bind);
