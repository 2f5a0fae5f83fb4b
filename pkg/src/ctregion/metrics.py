"""Text-overlap metrics for generated reports.

All three metrics are implemented here rather than pulled from an NLP
package so the scoring pipeline has no heavyweight dependencies and the
exact tokenization and smoothing behavior is pinned down by our own
tests. Tokenization is shared: lowercase alphanumeric runs.

meteor_lite is the METEOR harmonic-mean score with exact plus
Porter-stem matching and the standard fragmentation penalty, with one
defined exception: a single contiguous alignment carries no penalty, so
identical texts score exactly 1.0.
"""

from __future__ import annotations

import csv
import json
import math
import re
from collections import Counter
from dataclasses import dataclass

from .container import atomic_write_bytes
from .errors import SchemaViolation

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


# ---------------------------------------------------------------------------
# Porter stemmer (1980 rule set, longest-match-wins within each step)

_VOWELS = frozenset("aeiou")


def _is_consonant(word: str, i: int) -> bool:
    ch = word[i]
    if ch in _VOWELS:
        return False
    if ch == "y":
        return i == 0 or not _is_consonant(word, i - 1)
    return True


def _measure(stem: str) -> int:
    # number of vowel-to-consonant transitions: [C](VC)^m[V]
    m = 0
    prev_vowel = False
    for i in range(len(stem)):
        if _is_consonant(stem, i):
            if prev_vowel:
                m += 1
            prev_vowel = False
        else:
            prev_vowel = True
    return m


def _has_vowel(stem: str) -> bool:
    return any(not _is_consonant(stem, i) for i in range(len(stem)))


def _ends_double_consonant(word: str) -> bool:
    return len(word) >= 2 and word[-1] == word[-2] and _is_consonant(word, len(word) - 1)


def _ends_cvc(word: str) -> bool:
    if len(word) < 3:
        return False
    n = len(word)
    return (
        _is_consonant(word, n - 3)
        and not _is_consonant(word, n - 2)
        and _is_consonant(word, n - 1)
        and word[-1] not in "wxy"
    )


# (suffix, replacement) in longest-suffix-first order; the longest matching
# suffix selects the rule, and a failed measure condition ends the step.
_STEP2 = (
    ("ational", "ate"), ("ization", "ize"), ("iveness", "ive"), ("fulness", "ful"),
    ("ousness", "ous"), ("tional", "tion"), ("biliti", "ble"), ("entli", "ent"),
    ("ousli", "ous"), ("ation", "ate"), ("alism", "al"), ("aliti", "al"),
    ("iviti", "ive"), ("enci", "ence"), ("anci", "ance"), ("izer", "ize"),
    ("abli", "able"), ("alli", "al"), ("ator", "ate"), ("eli", "e"),
)

_STEP3 = (
    ("icate", "ic"), ("ative", ""), ("alize", "al"), ("iciti", "ic"),
    ("ical", "ic"), ("ness", ""), ("ful", ""),
)

_STEP4 = (
    "ement", "ance", "ence", "able", "ible", "ment", "ant", "ent", "ion",
    "ism", "ate", "iti", "ous", "ive", "ize", "al", "er", "ic", "ou",
)


def _longest_suffix(word: str, suffixes) -> str | None:
    best = None
    for suf in suffixes:
        s = suf[0] if isinstance(suf, tuple) else suf
        if word.endswith(s) and (best is None or len(s) > len(best)):
            best = s
    return best


def porter_stem(word: str) -> str:
    w = word.lower()
    if len(w) <= 2:
        return w

    # step 1a
    if w.endswith("sses"):
        w = w[:-2]
    elif w.endswith("ies"):
        w = w[:-2]
    elif w.endswith("ss"):
        pass
    elif w.endswith("s"):
        w = w[:-1]

    # step 1b
    if w.endswith("eed"):
        if _measure(w[:-3]) > 0:
            w = w[:-1]
    else:
        stripped = False
        if w.endswith("ed") and _has_vowel(w[:-2]):
            w = w[:-2]
            stripped = True
        elif w.endswith("ing") and _has_vowel(w[:-3]):
            w = w[:-3]
            stripped = True
        if stripped:
            if w.endswith(("at", "bl", "iz")):
                w += "e"
            elif _ends_double_consonant(w) and w[-1] not in "lsz":
                w = w[:-1]
            elif _measure(w) == 1 and _ends_cvc(w):
                w += "e"

    # step 1c
    if w.endswith("y") and _has_vowel(w[:-1]):
        w = w[:-1] + "i"

    # step 2
    suf = _longest_suffix(w, _STEP2)
    if suf is not None:
        repl = dict(_STEP2)[suf]
        if _measure(w[: -len(suf)]) > 0:
            w = w[: -len(suf)] + repl

    # step 3
    suf = _longest_suffix(w, _STEP3)
    if suf is not None:
        repl = dict(_STEP3)[suf]
        if _measure(w[: -len(suf)]) > 0:
            w = w[: -len(suf)] + repl

    # step 4
    suf = _longest_suffix(w, _STEP4)
    if suf is not None:
        stem = w[: -len(suf)]
        if _measure(stem) > 1 and (suf != "ion" or (stem and stem[-1] in "st")):
            w = stem

    # step 5a
    if w.endswith("e"):
        stem = w[:-1]
        m = _measure(stem)
        if m > 1 or (m == 1 and not _ends_cvc(stem)):
            w = stem

    # step 5b
    if _measure(w) > 1 and _ends_double_consonant(w) and w.endswith("l"):
        w = w[:-1]

    return w


# ---------------------------------------------------------------------------
# BLEU-4

def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidate: str, reference: str, eps: float = 1e-9) -> float:
    """Sentence BLEU with n=1..4, clipped precisions, and brevity penalty.

    A zero or undefined precision contributes eps instead, so short
    candidates degrade smoothly instead of zeroing the score. An empty
    candidate scores 0.
    """
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        cg = _ngram_counts(cand, n)
        rg = _ngram_counts(ref, n)
        total = sum(cg.values())
        clipped = sum(min(count, rg[gram]) for gram, count in cg.items())
        p = clipped / total if clipped else eps
        log_sum += math.log(p)
    bp = min(1.0, math.exp(1.0 - len(ref) / len(cand)))
    return bp * math.exp(log_sum / 4.0)


# ---------------------------------------------------------------------------
# ROUGE-L

def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for tok in a:
        cur = [0] * (len(b) + 1)
        for j, btok in enumerate(b, start=1):
            if tok == btok:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str, beta: float = 1.2) -> float:
    """LCS-based F score with recall weighted by beta."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand and not ref:
        return 1.0
    if not cand or not ref:
        return 0.0
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(cand)
    r = lcs / len(ref)
    b2 = beta * beta
    return (1.0 + b2) * p * r / (r + b2 * p)


# ---------------------------------------------------------------------------
# METEOR (exact + stem matching, greedy by position)

def _greedy_matches(cand: list[str], ref: list[str]) -> list[tuple[int, int]]:
    matches: list[tuple[int, int]] = []
    taken_c = [False] * len(cand)
    taken_r = [False] * len(ref)
    for ci, tok in enumerate(cand):
        for ri, rtok in enumerate(ref):
            if not taken_r[ri] and rtok == tok:
                matches.append((ci, ri))
                taken_c[ci] = True
                taken_r[ri] = True
                break
    cstems = [porter_stem(t) for t in cand]
    rstems = [porter_stem(t) for t in ref]
    for ci in range(len(cand)):
        if taken_c[ci]:
            continue
        for ri in range(len(ref)):
            if not taken_r[ri] and rstems[ri] == cstems[ci]:
                matches.append((ci, ri))
                taken_c[ci] = True
                taken_r[ri] = True
                break
    return sorted(matches)


def _chunk_count(matches: list[tuple[int, int]]) -> int:
    chunks = 0
    prev: tuple[int, int] | None = None
    for ci, ri in matches:
        if prev is None or ci != prev[0] + 1 or ri != prev[1] + 1:
            chunks += 1
        prev = (ci, ri)
    return chunks


def meteor_lite(
    candidate: str,
    reference: str,
    alpha: float = 0.9,
    beta: float = 3.0,
    gamma: float = 0.5,
) -> float:
    """Unigram F-mean with a fragmentation penalty.

    Matching runs in two greedy passes (exact, then Porter stems), both
    left to right against the first free reference token. The penalty is
    gamma * (chunks / matches)^beta, defined as zero when the alignment
    is one contiguous chunk so that identical texts score exactly 1.0.
    """
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand and not ref:
        return 1.0
    if not cand or not ref:
        return 0.0
    matches = _greedy_matches(cand, ref)
    m = len(matches)
    if m == 0:
        return 0.0
    p = m / len(cand)
    r = m / len(ref)
    f = p * r / (alpha * p + (1.0 - alpha) * r)
    chunks = _chunk_count(matches)
    penalty = 0.0 if chunks == 1 else gamma * (chunks / m) ** beta
    return f * (1.0 - penalty)


# ---------------------------------------------------------------------------
# corpus scoring

@dataclass
class PairScore:
    index: int
    bleu4: float
    rouge_l: float
    meteor: float
    study: str | None = None
    region_id: int | None = None


@dataclass
class MetricSummary:
    count: int
    bleu4: float
    rouge_l: float
    meteor: float

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "bleu4": self.bleu4,
            "rouge_l": self.rouge_l,
            "meteor": self.meteor,
        }


def score_pair(index: int, candidate: str, reference: str, **meta) -> PairScore:
    return PairScore(
        index=index,
        bleu4=bleu4(candidate, reference),
        rouge_l=rouge_l(candidate, reference),
        meteor=meteor_lite(candidate, reference),
        study=meta.get("study"),
        region_id=meta.get("region_id"),
    )


def evaluate_pairs(pairs: list[dict]) -> tuple[list[PairScore], MetricSummary]:
    """pairs: dicts with candidate/reference and optional study/region_id."""
    rows = [
        score_pair(i, p["candidate"], p["reference"], study=p.get("study"), region_id=p.get("region_id"))
        for i, p in enumerate(pairs)
    ]
    if rows:
        summary = MetricSummary(
            count=len(rows),
            bleu4=sum(r.bleu4 for r in rows) / len(rows),
            rouge_l=sum(r.rouge_l for r in rows) / len(rows),
            meteor=sum(r.meteor for r in rows) / len(rows),
        )
    else:
        summary = MetricSummary(count=0, bleu4=0.0, rouge_l=0.0, meteor=0.0)
    return rows, summary


def read_pairs_jsonl(path) -> list[dict]:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"{path}:{lineno}: bad JSON: {exc}") from exc
            if not isinstance(obj, dict) or "candidate" not in obj or "reference" not in obj:
                raise SchemaViolation(f"{path}:{lineno}: need candidate and reference keys")
            pairs.append(obj)
    return pairs


def write_scores_csv(rows: list[PairScore], summary: MetricSummary, path) -> None:
    """Per-pair scores plus a trailing mean row, written atomically."""
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["index", "study", "region_id", "bleu4", "rouge_l", "meteor"])
    for r in rows:
        writer.writerow(
            [
                r.index,
                r.study or "",
                r.region_id if r.region_id is not None else "",
                f"{r.bleu4:.6f}",
                f"{r.rouge_l:.6f}",
                f"{r.meteor:.6f}",
            ]
        )
    writer.writerow(
        ["mean", "", "", f"{summary.bleu4:.6f}", f"{summary.rouge_l:.6f}", f"{summary.meteor:.6f}"]
    )
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))
