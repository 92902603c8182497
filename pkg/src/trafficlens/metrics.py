"""Text-quality metrics implemented in-repo: BLEU, ROUGE-1/2/L, METEOR, BERTScore.

All scores are on a 0-100 scale. Variant choices, fixed here so results are
reproducible: BLEU-4 with uniform weights, epsilon smoothing 1/(2*count_n) for
zero precisions, and order reduction when the candidate has no n-grams of an
order; ROUGE F-measures with beta=1; METEOR with alpha=0.9, gamma=0.5, beta=3,
exact-then-stemmed matching and no synonym stage; BERTScore by greedy token
matching under any embedder honoring the embed contract.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass

from .errors import EmptyReference

_PUNCT_RE = re.compile(r"([^\w\s])")
_HAS_ALNUM_RE = re.compile(r"[a-z0-9]")

METEOR_ALPHA = 0.9
METEOR_GAMMA = 0.5
METEOR_BETA = 3.0


def metric_tokenize(text: str) -> list:
    """Lowercase, separate punctuation, split on whitespace."""
    return _PUNCT_RE.sub(r" \1 ", text.lower()).split()


@dataclass
class MetricReport:
    bleu: float
    rouge1: float
    rouge2: float
    rougeL: float
    meteor: float
    bert_p: float
    bert_r: float
    bert_f: float

    def as_dict(self) -> dict:
        return {"bleu": self.bleu, "rouge1": self.rouge1, "rouge2": self.rouge2,
                "rougeL": self.rougeL, "meteor": self.meteor,
                "bert_p": self.bert_p, "bert_r": self.bert_r, "bert_f": self.bert_f}


def _ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def _check_reference(tokens):
    if not tokens:
        raise EmptyReference("reference has no tokens")


# --- BLEU ---

def bleu(candidate: str, references) -> float:
    """BLEU-4, uniform weights, clipped precision, brevity penalty exp(1-r/c)."""
    if isinstance(references, str):
        references = [references]
    ref_tokens = [metric_tokenize(r) for r in references]
    ref_tokens = [r for r in ref_tokens if r]
    if not ref_tokens:
        raise EmptyReference("no non-empty reference")
    c_tokens = metric_tokenize(candidate)
    c = len(c_tokens)
    if c == 0:
        return 0.0

    log_sum = 0.0
    orders = 0
    for n in range(1, 5):
        grams = _ngrams(c_tokens, n)
        if not grams:
            continue  # order reduction for short candidates
        counts = Counter(grams)
        max_ref = Counter()
        for r in ref_tokens:
            for gram, k in Counter(_ngrams(r, n)).items():
                max_ref[gram] = max(max_ref[gram], k)
        matches = sum(min(k, max_ref.get(gram, 0)) for gram, k in counts.items())
        p = matches / len(grams) if matches else 1.0 / (2 * len(grams))
        log_sum += math.log(p)
        orders += 1

    # effective reference length: closest to the candidate, shorter on ties
    r = min((abs(len(t) - c), len(t)) for t in ref_tokens)[1]
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_sum / orders)


# --- ROUGE ---

def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _rouge_n(c_tokens, r_tokens, n) -> float:
    c_grams, r_grams = _ngrams(c_tokens, n), _ngrams(r_tokens, n)
    if not c_grams or not r_grams:
        return 0.0
    c_counts, r_counts = Counter(c_grams), Counter(r_grams)
    overlap = sum(min(k, r_counts.get(g, 0)) for g, k in c_counts.items())
    return _f1(overlap / len(c_grams), overlap / len(r_grams))


def _lcs_len(a, b) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0]
        for j, y in enumerate(b, 1):
            curr.append(prev[j - 1] + 1 if x == y else max(prev[j], curr[j - 1]))
        prev = curr
    return prev[-1]


def rouge(candidate: str, reference: str):
    """(ROUGE-1, ROUGE-2, ROUGE-L) F-measures."""
    r_tokens = metric_tokenize(reference)
    _check_reference(r_tokens)
    c_tokens = metric_tokenize(candidate)
    r1 = 100.0 * _rouge_n(c_tokens, r_tokens, 1)
    r2 = 100.0 * _rouge_n(c_tokens, r_tokens, 2)
    if not c_tokens:
        return r1, r2, 0.0
    lcs = _lcs_len(c_tokens, r_tokens)
    rl = 100.0 * _f1(lcs / len(c_tokens), lcs / len(r_tokens))
    return r1, r2, rl


# --- METEOR ---

def light_stem(word: str) -> str:
    """Suffix stripper for the METEOR stemmed stage: ing/es/ed/s with length guards."""
    if word.endswith("ing") and len(word) >= 6:
        return word[:-3]
    if word.endswith("es") and len(word) >= 5:
        return word[:-2]
    if word.endswith("ed") and len(word) >= 5:
        return word[:-2]
    if word.endswith("s") and len(word) >= 4 and not word.endswith("ss"):
        return word[:-1]
    return word


def _align(c_tokens, r_tokens):
    """(cand_idx, ref_idx) pairs: exact stage then stemmed, preferring the
    reference position that continues the previous match (fewer chunks)."""
    pairs = []
    used_ref = set()

    def stage(match_fn):
        prev_ref = -2
        for i, tok in enumerate(c_tokens):
            if any(ci == i for ci, _ in pairs):
                continue
            options = [j for j, r in enumerate(r_tokens)
                       if j not in used_ref and match_fn(tok, r)]
            if not options:
                continue
            j = prev_ref + 1 if prev_ref + 1 in options else options[0]
            pairs.append((i, j))
            used_ref.add(j)
            prev_ref = j

    stage(lambda a, b: a == b)
    stage(lambda a, b: light_stem(a) == light_stem(b))
    pairs.sort()
    return pairs


def meteor(candidate: str, reference: str) -> float:
    r_tokens = metric_tokenize(reference)
    _check_reference(r_tokens)
    c_tokens = metric_tokenize(candidate)
    if not c_tokens:
        return 0.0
    pairs = _align(c_tokens, r_tokens)
    m = len(pairs)
    if m == 0:
        return 0.0
    chunks = 1
    for (ci, ri), (cj, rj) in zip(pairs, pairs[1:]):
        if cj != ci + 1 or rj != ri + 1:
            chunks += 1
    p = m / len(c_tokens)
    r = m / len(r_tokens)
    f_mean = p * r / (METEOR_ALPHA * p + (1 - METEOR_ALPHA) * r)
    penalty = METEOR_GAMMA * (chunks / m) ** METEOR_BETA
    return 100.0 * f_mean * (1.0 - penalty)


# --- BERTScore ---

def bertscore(candidate: str, reference: str, embedder):
    """(precision, recall, F) from greedy max-cosine token matching."""
    r_tokens = [t for t in metric_tokenize(reference) if _HAS_ALNUM_RE.search(t)]
    _check_reference(r_tokens)
    c_tokens = [t for t in metric_tokenize(candidate) if _HAS_ALNUM_RE.search(t)]
    if not c_tokens:
        return 0.0, 0.0, 0.0
    cache = {}

    def vec(token):
        if token not in cache:
            cache[token] = embedder.embed(token)
        return cache[token]

    c_vecs = [vec(t) for t in c_tokens]
    r_vecs = [vec(t) for t in r_tokens]
    sim = [[float(cv @ rv) for rv in r_vecs] for cv in c_vecs]
    p = sum(max(row) for row in sim) / len(c_vecs)
    r = sum(max(sim[i][j] for i in range(len(c_vecs))) for j in range(len(r_vecs))) / len(r_vecs)
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return 100.0 * p, 100.0 * r, 100.0 * f


def compute_metrics(candidate: str, reference: str, embedder) -> MetricReport:
    """All four metric families for one candidate against one reference."""
    r1, r2, rl = rouge(candidate, reference)
    bp, br, bf = bertscore(candidate, reference, embedder)
    return MetricReport(bleu=bleu(candidate, [reference]), rouge1=r1, rouge2=r2,
                        rougeL=rl, meteor=meteor(candidate, reference),
                        bert_p=bp, bert_r=br, bert_f=bf)
