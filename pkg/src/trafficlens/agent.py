"""Bounded question-answering loop over one ingested session.

Planning is a rule-based policy (scores and vocabulary membership), not a
model call: the chat client only drafts answers. Exactly two tools exist, the
retrieval-and-answer tool and the web-lookup tool; neither mutates state, and
every invocation lands in the audit log. Faithfulness is a per-sentence
token-overlap check plus verbatim presence of numbers and dotted identifiers.
"""

from __future__ import annotations

import hashlib
import json
import re
import time
from dataclasses import dataclass, field
from typing import Optional

from .errors import ChatUnavailable, SearchUnavailable
from .retrieval import (
    STOPWORDS,
    EvidenceBundle,
    RetrievalConfig,
    corpus_vocabulary,
    retrieve,
    tokenize,
)

UNAVAILABLE_TEXT = ("No supporting evidence is available in the indexed capture "
                    "for this question.")

DEFAULT_INSTRUCTIONS = """You are a network traffic analyst answering questions about one processed capture.
(i) Treat the retrieved context below as the primary evidence and never speculate beyond it.
(ii) Answer capture-specific questions using only that context, and state plainly when the capture does not contain the requested information.
(iii) For clearly general IoT questions, stable time-insensitive knowledge such as protocol semantics and standard ports may be used.
(iv) For time-varying or source-dependent facts, rely on a web lookup and cite the source briefly.
(v) Keep answers plain-text, technically precise, and concise, and finish only after checking every claim against the evidence."""

PROTOCOL_TOKENS = frozenset({"tcp", "udp", "icmp", "dns", "http", "https", "mqtt",
                             "modbus", "tls", "arp"})

# query-term expansions used when refining retrieval
SYNONYMS = {
    "reset": ("RST", "reset"),
    "resets": ("RST", "reset"),
    "handshake": ("SYN", "ACK", "handshake"),
    "handshakes": ("SYN", "ACK", "handshake"),
    "scan": ("Port_Scanning", "scan"),
    "scanning": ("Port_Scanning", "scanning"),
    "scans": ("Port_Scanning", "scan"),
    "flood": ("DDoS", "flood"),
    "floods": ("DDoS", "flood"),
    "exfiltration": ("Uploading", "exfiltration"),
}

# fixture-chat aliases between prose words and log field abbreviations
_ALIASES = {"packets": "pkt", "packet": "pkt", "bytes": "byte", "flows": "flow",
            "connections": "conn", "connection": "conn", "messages": "msg",
    "resets": "rst", "reset": "rst"}

_IP_RE = re.compile(r"\d+(\.\d+){3}(:\d+)?$")
_NUMERIC_ID_RE = re.compile(r"\d+(\.\d+)*(:\d+)?$")
_UID_RE = re.compile(r"[a-z0-9]{12}$")


@dataclass
class AgentConfig:
    max_steps: int = 3
    rerank_floor: float = 0.15  # minimum top score before answering directly
    faithfulness_floor: float = 0.25  # per-sentence token-overlap fraction
    instructions: str = DEFAULT_INSTRUCTIONS


@dataclass
class Action:
    kind: str  # Answer | RefineRetrieval | WebLookup
    terms: tuple = ()
    reason: str = ""


@dataclass
class FaithfulnessVerdict:
    per_sentence: list  # (sentence, supported, best_chunk_id, overlap)
    passed: bool

    def to_json_obj(self) -> dict:
        return {"passed": self.passed,
                "per_sentence": [
                    {"sentence": s, "supported": ok, "best_chunk_id": cid,
                     "overlap": round(overlap, 4)}
                    for s, ok, cid, overlap in self.per_sentence]}


SOURCE_CAPTURE = "CaptureGrounded"
SOURCE_WEB = "WebSourced"
SOURCE_MIXED = "Mixed"
SOURCE_INSUFFICIENT = "Insufficient"


@dataclass
class AnswerRecord:
    text: str
    cited_chunk_ids: list
    source_class: str
    web_citations: list  # (url, snippet)
    steps_used: int
    faithfulness: FaithfulnessVerdict

    def __post_init__(self):
        if self.source_class == SOURCE_CAPTURE and not self.cited_chunk_ids:
            raise ValueError("capture-grounded answer must cite chunks")
        if self.source_class == SOURCE_WEB and not self.web_citations:
            raise ValueError("web-sourced answer must carry citations")
        if self.source_class == SOURCE_INSUFFICIENT and UNAVAILABLE_TEXT not in self.text:
            raise ValueError("insufficient answer must state unavailability")

    def to_json_obj(self) -> dict:
        return {
            "text": self.text,
            "cited_chunk_ids": list(self.cited_chunk_ids),
            "source_class": self.source_class,
            "web_citations": [{"url": u, "snippet": s} for u, s in self.web_citations],
            "steps_used": self.steps_used,
            "faithfulness": self.faithfulness.to_json_obj(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), ensure_ascii=False)


@dataclass
class ChatResult:
    text: str
    tokens: Optional[int] = None


# --- chat clients ---

class RemoteChat:
    """HTTP chat client: POST {endpoint}/chat {"system","user"} -> {"text"}."""

    def __init__(self, endpoint: str, timeout: float = 60.0, session=None):
        import requests

        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self._session = session or requests.Session()

    def complete(self, system: str, user: str) -> ChatResult:
        try:
            resp = self._session.post(f"{self.endpoint}/chat",
                                      json={"system": system, "user": user},
                                      timeout=self.timeout)
            resp.raise_for_status()
            body = resp.json()
            return ChatResult(text=body["text"], tokens=body.get("tokens"))
        except Exception as exc:
            raise ChatUnavailable(str(exc)) from exc


_CHUNK_MARKER_RE = re.compile(r"^\[([0-9a-f]{64})\]$")
_LINE_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _expand_question_tokens(question: str) -> set:
    out = set()
    for token in _LINE_TOKEN_RE.findall(question.lower()):
        if len(token) < 3 or token in STOPWORDS:
            continue
        out.add(token)
        if token.endswith("s"):
            out.add(token[:-1])
        if token in _ALIASES:
            out.add(_ALIASES[token])
    return out


class FixtureChat:
    """Deterministic drafting template used in tests and offline mode.

    The draft stitches, in rank order, chunk lines containing a question
    token (with plural stripping and a small prose/field alias table), capped
    at max_lines; with no matching line it returns the unavailability sentence.
    """

    def __init__(self, max_lines: int = 4):
        self.max_lines = max_lines

    def complete(self, system: str, user: str) -> ChatResult:
        chunks, question = self._parse_prompt(user)
        wanted = _expand_question_tokens(question)
        selected = []
        for _, text in chunks:
            for line in text.splitlines():
                line_tokens = set(_LINE_TOKEN_RE.findall(line.lower()))
                if wanted & line_tokens and line not in selected:
                    selected.append(line)
                if len(selected) >= self.max_lines:
                    break
            if len(selected) >= self.max_lines:
                break
        if not selected:
            return ChatResult(text=UNAVAILABLE_TEXT)
        return ChatResult(text="\n".join(selected))

    @staticmethod
    def _parse_prompt(user: str):
        chunks = []
        question = ""
        current_id = None
        current_lines = []
        in_context = False
        for line in user.splitlines():
            if line == "CONTEXT:":
                in_context = True
                continue
            if line.startswith("QUESTION: "):
                if current_id is not None:
                    chunks.append((current_id, "\n".join(current_lines).strip("\n")))
                question = line[len("QUESTION: "):]
                break
            if in_context:
                marker = _CHUNK_MARKER_RE.match(line)
                if marker:
                    if current_id is not None:
                        chunks.append((current_id, "\n".join(current_lines).strip("\n")))
                    current_id = marker.group(1)
                    current_lines = []
                elif current_id is not None:
                    current_lines.append(line)
        return chunks, question


# --- search clients ---

class RemoteSearch:
    """HTTP search client: GET {endpoint}/search?q=... -> {"results":[{url,snippet}]}."""

    def __init__(self, endpoint: str, timeout: float = 15.0, session=None):
        import requests

        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self._session = session or requests.Session()

    def search(self, query: str) -> list:
        try:
            resp = self._session.get(f"{self.endpoint}/search", params={"q": query},
                                     timeout=self.timeout)
            resp.raise_for_status()
            return [(r["url"], r["snippet"]) for r in resp.json()["results"]]
        except Exception as exc:
            raise SearchUnavailable(str(exc)) from exc


class FixtureSearch:
    """Search results from a recorded query->results map; unknown queries fail."""

    def __init__(self, fixtures: dict = None, path=None):
        if path is not None:
            fixtures = json.loads(open(path, encoding="utf-8").read())
        self.fixtures = {self._norm(k): v for k, v in (fixtures or {}).items()}

    @staticmethod
    def _norm(query: str) -> str:
        return " ".join(query.lower().split())

    def search(self, query: str) -> list:
        key = self._norm(query)
        if key not in self.fixtures:
            raise SearchUnavailable(f"no fixture for query: {query!r}")
        return [(r["url"], r["snippet"]) for r in self.fixtures[key]]


# --- audit log ---

class AuditLog:
    """JSON Lines audit of every tool invocation."""

    def __init__(self, path=None, clock=time.time):
        self.path = path
        self.clock = clock
        self.entries = []

    def append(self, session: str, step: int, tool: str, input_text: str, outcome: str):
        entry = {
            "ts": round(self.clock(), 6),
            "session": session,
            "step": step,
            "tool": tool,
            "input_digest": hashlib.sha256(input_text.encode("utf-8")).hexdigest()[:16],
            "outcome": outcome,
        }
        self.entries.append(entry)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry) + "\n")


# --- planning policy ---

def _capture_scoped_tokens(query: str, vocabulary: frozenset) -> list:
    """Identifier-class query tokens (IP, port, uid, protocol) present in the corpus."""
    expanded = set(vocabulary)
    for token in vocabulary:
        if ":" in token:
            expanded.update(token.split(":"))
    found = []
    for token in tokenize(query):
        is_identifier = bool(
            _IP_RE.fullmatch(token)
            or (token.isdigit() and len(token) <= 5)
            or token in PROTOCOL_TOKENS
            or (_UID_RE.fullmatch(token) and any(ch.isdigit() for ch in token))
        )
        if is_identifier and token in expanded and token not in found:
            found.append(token)
    return found


def plan(query: str, bundle: EvidenceBundle, cfg: AgentConfig,
         vocabulary: frozenset = frozenset()) -> Action:
    """Deterministic policy: answer on strong evidence, refine capture-scoped
    queries with discriminative terms, send general-IoT queries to the web."""
    top = bundle.top_score()
    if top is not None and top >= cfg.rerank_floor:
        return Action(kind="Answer")
    scoped = _capture_scoped_tokens(query, vocabulary)
    if scoped:
        terms = []
        for token in tokenize(query):
            for term in SYNONYMS.get(token, ()):
                if term not in terms:
                    terms.append(term)
        for token in scoped:
            if token not in terms:
                terms.append(token)
        return Action(kind="RefineRetrieval", terms=tuple(terms))
    return Action(kind="WebLookup",
                  reason="no capture-scoped identifier matched the corpus vocabulary")


# --- tools ---

def assemble_prompt(instructions: str, bundle: EvidenceBundle, query: str) -> str:
    parts = [instructions, "", "CONTEXT:"]
    for _, chunk in bundle.ranked:
        parts.append(f"[{chunk.chunk_id}]")
        parts.append(chunk.text)
        parts.append("")
    parts.append(f"QUESTION: {query}")
    return "\n".join(parts)


def retrieval_answer_tool(query: str, bundle: EvidenceBundle, chat, cfg: AgentConfig) -> ChatResult:
    """Draft an answer from the top-k context; empty bundles short-circuit."""
    if not bundle.ranked:
        return ChatResult(text=UNAVAILABLE_TEXT)
    return chat.complete(system=cfg.instructions,
                         user=assemble_prompt(cfg.instructions, bundle, query))


def web_lookup_tool(query: str, search) -> list:
    """Up to 3 (url, snippet) results, snippets cut at 500 chars on a word boundary."""
    results = search.search(query)[:3]
    out = []
    for url, snippet in results:
        if len(snippet) > 500:
            snippet = snippet[:500].rsplit(" ", 1)[0]
        out.append((url, snippet))
    return out


# --- faithfulness ---

def _sentences(text: str) -> list:
    out = []
    for line in text.splitlines():
        for sentence in re.split(r"(?<=[.!?])\s+", line):
            if sentence.strip():
                out.append(sentence.strip())
    return out


def _content_tokens(text: str) -> set:
    return {t for t in tokenize(text) if len(t) >= 3 and t not in STOPWORDS}


def _identifiers(text: str) -> set:
    return {t for t in tokenize(text) if _NUMERIC_ID_RE.fullmatch(t)}


def faithfulness_check(draft: str, bundle: EvidenceBundle, cfg: AgentConfig,
                       evidence_texts: Optional[list] = None) -> FaithfulnessVerdict:
    """Per-sentence support: content-token overlap >= floor, and every number or
    dotted identifier in the sentence appears verbatim in some evidence text."""
    if evidence_texts is None:
        evidence = [(chunk.chunk_id, chunk.text) for _, chunk in bundle.ranked]
    else:
        evidence = list(evidence_texts)
    chunk_tokens = []
    all_identifier_tokens = set()
    for cid, text in evidence:
        tokens = set(tokenize(text))
        expanded = set(tokens)
        for token in tokens:
            if ":" in token:
                expanded.update(token.split(":"))
        chunk_tokens.append((cid, expanded))
        all_identifier_tokens.update(expanded)

    per_sentence = []
    passed = True
    for sentence in _sentences(draft):
        if sentence == UNAVAILABLE_TEXT or sentence.startswith("Sources:"):
            continue  # boilerplate

        tokens = _content_tokens(sentence)
        best_id, best_overlap = None, 0.0
        for cid, ctoks in chunk_tokens:
            if not tokens:
                continue
            overlap = len(tokens & ctoks) / len(tokens)
            if overlap > best_overlap or best_id is None:
                best_id, best_overlap = cid, overlap
        ids_ok = all(ident in all_identifier_tokens for ident in _identifiers(sentence))
        supported = bool(tokens) and best_overlap >= cfg.faithfulness_floor and ids_ok
        per_sentence.append((sentence, supported, best_id, best_overlap))
        passed = passed and supported
    return FaithfulnessVerdict(per_sentence=per_sentence, passed=passed)


# --- the loop ---

def _insufficient(steps: int, faith: FaithfulnessVerdict = None, detail: str = "") -> AnswerRecord:
    text = UNAVAILABLE_TEXT + (f" ({detail})" if detail else "")
    return AnswerRecord(text=text, cited_chunk_ids=[], source_class=SOURCE_INSUFFICIENT,
                        web_citations=[], steps_used=steps,
                        faithfulness=faith or FaithfulnessVerdict(per_sentence=[], passed=True))


def answer(query: str, store, cfg: AgentConfig, retrieval_cfg: RetrievalConfig,
           embedder, chat, search=None, reranker=None, audit: Optional[AuditLog] = None) -> AnswerRecord:
    """Run the perceive-reason-act loop until an adequately supported answer,
    a web-sourced answer, or the strict step bound."""
    audit = audit or AuditLog()
    vocabulary = corpus_vocabulary(store)
    steps = 0
    current_query = query
    refined = False
    revised = False
    last_faith = None

    while steps < cfg.max_steps:
        bundle = retrieve(current_query, store, retrieval_cfg, embedder, reranker)
        action = plan(current_query, bundle, cfg, vocabulary)

        if action.kind == "RefineRetrieval" and not refined:
            refined = True
            current_query = query + " " + " ".join(action.terms)
            continue

        if action.kind == "WebLookup":
            steps += 1
            try:
                results = web_lookup_tool(query, search) if search is not None else []
                outcome = f"{len(results)} results"
            except SearchUnavailable as exc:
                audit.append(store.session_id, steps, "web_lookup", query, "unavailable")
                return _insufficient(steps, detail=str(exc))
            audit.append(store.session_id, steps, "web_lookup", query, outcome)
            if not results:
                return _insufficient(steps, detail="web lookup returned nothing")
            snippets = " ".join(snippet for _, snippet in results)
            text = (f"According to external sources: {snippets}\n"
                    + "Sources: " + "; ".join(url for url, _ in results))
            faith = faithfulness_check(text, bundle, cfg,
                                       evidence_texts=[(url, s) for url, s in results])
            return AnswerRecord(text=text, cited_chunk_ids=[], source_class=SOURCE_WEB,
                                web_citations=results, steps_used=steps, faithfulness=faith)

        # Answer action: invoke the retrieval-and-answer tool
        steps += 1
        result = retrieval_answer_tool(current_query, bundle, chat, cfg)
        audit.append(store.session_id, steps, "retrieval_answer", current_query,
                     "draft" if result.text != UNAVAILABLE_TEXT else "unavailable")
        draft = result.text
        if not draft.strip() or draft == UNAVAILABLE_TEXT:
            return _insufficient(steps)
        faith = faithfulness_check(draft, bundle, cfg)
        last_faith = faith
        if faith.passed and faith.per_sentence:
            cited = []
            for _, supported, cid, _ in faith.per_sentence:
                if supported and cid is not None and cid not in cited:
                    cited.append(cid)
            if not cited:
                cited = bundle.chunk_ids()[:1]
            return AnswerRecord(text=draft, cited_chunk_ids=cited,
                                source_class=SOURCE_CAPTURE, web_citations=[],
                                steps_used=steps, faithfulness=faith)
        if not revised and steps < cfg.max_steps:
            # one revision cycle: retry retrieval with vocabulary-matched terms
            revised = True
            extra = []
            for sentence, supported, _, _ in faith.per_sentence:
                if supported:
                    continue
                for token in _content_tokens(sentence):
                    if token in vocabulary and token not in extra:
                        extra.append(token)
            current_query = query + (" " + " ".join(sorted(extra)) if extra else "")
            continue
        return _insufficient(steps, faith)

    return _insufficient(steps, last_faith)
