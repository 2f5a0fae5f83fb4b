"""Report structuring: free text to per-region sections and back.

Training data pairs every study with one narrative report, but generation
happens one region at a time, so reports have to be split into region
sections. Two routes exist and are kept separate on purpose: when
per-sentence region labels are available they are authoritative; without
labels a keyword lexicon assigns each sentence to the region whose
vocabulary it hits most often.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources

from .errors import LabelCountMismatch, SchemaViolation, ValidationError
from .regions import REGION_IDS, region_header

UNREMARKABLE = "Unremarkable."

# Tokens that end with a period without ending a sentence. Checked against
# the last whitespace-delimited token before a candidate boundary.
_ABBREVIATIONS = frozenset(
    {"e.g", "i.e", "vs", "approx", "no", "fig", "figs", "dr", "mr", "mrs", "st", "ca", "etc"}
)

_BOUNDARY = re.compile(r"\.\s+")


@dataclass
class StructuredReport:
    """Sentences grouped by region id. Regions may be absent."""

    sections: dict[int, list[str]] = field(default_factory=dict)
    study: str | None = None

    def validate(self) -> None:
        for rid in self.sections:
            if rid not in REGION_IDS:
                raise SchemaViolation(f"unknown region id {rid} in report sections")

    def text_for(self, region_id: int) -> str:
        return " ".join(self.sections.get(region_id, []))

    def sentence_count(self) -> int:
        return sum(len(v) for v in self.sections.values())


def split_sentences(text: str) -> list[str]:
    """Split on period-plus-whitespace, guarding known abbreviations and
    single-letter initials. Periods stay attached to their sentence."""
    out: list[str] = []
    start = 0
    for m in _BOUNDARY.finditer(text):
        chunk = text[start : m.start()]
        tokens = chunk.split()
        if tokens:
            last = tokens[-1].lower()
            if last in _ABBREVIATIONS or (len(last) == 1 and last.isalpha()):
                continue
        sentence = text[start : m.start() + 1].strip()
        if sentence:
            out.append(sentence)
        start = m.end()
    rest = text[start:].strip()
    if rest:
        out.append(rest)
    return out


def load_region_lexicon() -> dict[int, list[str]]:
    raw = resources.files("ctregion.data").joinpath("region_lexicon.json").read_text("utf-8")
    data = json.loads(raw)
    lexicon = {int(k): [w.lower() for w in v] for k, v in data.items()}
    if sorted(lexicon) != list(REGION_IDS):
        raise SchemaViolation("region lexicon must cover exactly regions 1..6")
    return lexicon


def _compile_lexicon(lexicon: dict[int, list[str]]) -> dict[int, re.Pattern]:
    # \b<kw>\w* so "lung" also hits "lungs"; keywords are stems.
    return {
        rid: re.compile(r"\b(?:" + "|".join(re.escape(w) for w in words) + r")\w*")
        for rid, words in lexicon.items()
    }


def assign_sentence_region(
    sentence: str,
    patterns: dict[int, re.Pattern],
    previous: int | None,
) -> int:
    """Region with the most keyword hits; ties go to the lower region id.

    A sentence with no hits continues the previous sentence's region, and
    region 1 when there is no previous sentence.
    """
    lowered = sentence.lower()
    best_rid = 0
    best_hits = 0
    for rid in sorted(patterns):
        hits = len(patterns[rid].findall(lowered))
        if hits > best_hits:
            best_hits = hits
            best_rid = rid
    if best_hits == 0:
        return previous if previous is not None else 1
    return best_rid


def split_report(
    text: str,
    region_labels: list[int] | None = None,
    lexicon: dict[int, list[str]] | None = None,
    study: str | None = None,
) -> StructuredReport:
    """Structure a narrative report into per-region sentence lists.

    With region_labels (one id per sentence) the labels are used directly;
    a length mismatch raises LabelCountMismatch. Without labels each
    sentence is routed through the keyword lexicon.
    """
    sentences = split_sentences(text)
    sections: dict[int, list[str]] = {}
    if region_labels is not None:
        if len(region_labels) != len(sentences):
            raise LabelCountMismatch(
                f"{len(region_labels)} labels for {len(sentences)} sentences"
            )
        for rid in region_labels:
            if rid not in REGION_IDS:
                raise ValidationError(f"region label {rid} out of range")
        for sent, rid in zip(sentences, region_labels):
            sections.setdefault(rid, []).append(sent)
    else:
        patterns = _compile_lexicon(lexicon if lexicon is not None else load_region_lexicon())
        previous: int | None = None
        for sent in sentences:
            rid = assign_sentence_region(sent, patterns, previous)
            sections.setdefault(rid, []).append(sent)
            previous = rid
    report = StructuredReport(sections=sections, study=study)
    report.validate()
    return report


def merge_reports(report: StructuredReport, complete: bool = False) -> str:
    """Render sections under canonical headers, one region per line, in
    region-id order. With complete=True every region appears; empty ones
    read "Unremarkable."."""
    report.validate()
    lines = []
    for rid in REGION_IDS:
        sentences = report.sections.get(rid, [])
        if sentences:
            lines.append(f"{region_header(rid)} {' '.join(sentences)}")
        elif complete:
            lines.append(f"{region_header(rid)} {UNREMARKABLE}")
    return "\n".join(lines)


def report_to_json_dict(report: StructuredReport) -> dict:
    report.validate()
    out: dict = {"sections": {str(rid): report.sections[rid] for rid in sorted(report.sections)}}
    if report.study is not None:
        out["study"] = report.study
    return out


def report_from_json_dict(obj: dict) -> StructuredReport:
    try:
        sections = {int(k): [str(s) for s in v] for k, v in obj.get("sections", {}).items()}
    except (TypeError, ValueError) as exc:
        raise SchemaViolation(f"bad structured report: {exc}") from exc
    report = StructuredReport(sections=sections, study=obj.get("study"))
    report.validate()
    return report


def parse_merged_report(text: str, study: str | None = None) -> StructuredReport:
    """Inverse of merge_reports. "Unremarkable." sections parse to empty.

    Lines that do not start with a canonical header raise SchemaViolation;
    the merged format is strict by design so corruption is caught early.
    """
    headers = {region_header(rid): rid for rid in REGION_IDS}
    sections: dict[int, list[str]] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        for header, rid in headers.items():
            if line.startswith(header):
                body = line[len(header) :].strip()
                if rid in sections:
                    raise SchemaViolation(f"duplicate section for region {rid}")
                sections[rid] = [] if body == UNREMARKABLE or not body else split_sentences(body)
                break
        else:
            raise SchemaViolation(f"line has no region header: {line!r}")
    return StructuredReport(sections=sections, study=study)
