"""Attribute-report rendering and multimodal prompt assembly.

A prompt bundle is an ordered list of segments: instruction text, one
visual-token block, six region labels each followed by its two
segmentation-token slots, the attribute report, and a region-specific
instruction. The segment layout is identical for every study regardless
of which masks are positive, so downstream consumers always see tokens in
the same positions.

Token placeholders use a greppable textual encoding: `<img:k>` for visual
tokens and `<seg:r:m>` / `<seg:r:s>` for a region's mask and spatial
token.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .attributes import LesionStats, PatientAttributes
from .container import atomic_write_bytes
from .errors import BudgetExceeded, SchemaViolation, StudyMismatch, ValidationError
from .pooling import TokenSequence
from .regions import REGION_IDS, region_name
from .segtokens import SegmentationTokenSet

MAX_SEQUENCE_TOKENS = 2048

PREAMBLE = (
    "You are a radiology assistant reviewing a chest CT volume. "
    "Use the visual tokens, the per-region segmentation tokens, and the "
    "patient attributes below."
)


@dataclass
class PromptSegment:
    kind: str  # text | vision_tokens | seg_token
    payload: str
    region_id: int | None = None


@dataclass
class PromptBundle:
    segments: list[PromptSegment]
    region_id: int
    instruction: str
    attr_text: str
    study: str | None = None

    def kinds(self) -> list[str]:
        return [s.kind for s in self.segments]


def _fmt(value: float) -> str:
    return f"{value:.1f}"  # one decimal, round-half-even


def render_attribute_report(attrs: PatientAttributes) -> str:
    """Deterministic text rendering of the extracted attributes.

    Organ and lesion entries are emitted in sorted-name order with one
    decimal place. Empty maps render as "none reported".
    """
    unit = "mm" if attrs.units == "mm" else "voxels"
    lines = []
    if attrs.organ_volumes:
        lines.append("Organ volumes:")
        for name in sorted(attrs.organ_volumes):
            lines.append(f"{name}: {_fmt(attrs.organ_volumes[name])} mL")
    else:
        lines.append("Organ volumes: none reported.")
    if attrs.lesion_stats:
        lines.append("Lesions:")
        for name in sorted(attrs.lesion_stats):
            stats = attrs.lesion_stats[name]
            if stats.count:
                diam = "/".join(_fmt(d) for d in stats.diameters)
                lines.append(
                    f"{name} — count {stats.count}, diameters {diam} {unit}, location {stats.location}"
                )
            else:
                lines.append(f"{name} — count 0, diameters none, location {stats.location}")
    else:
        lines.append("Lesions: none reported.")
    return "\n".join(lines)


_ORGAN_LINE = re.compile(r"^(?P<name>[^:]+): (?P<value>-?\d+\.\d) mL$")
_LESION_LINE = re.compile(
    r"^(?P<name>.+) — count (?P<count>\d+), "
    r"diameters (?:none|(?P<diam>[\d./]+) (?P<unit>mm|voxels)), "
    r"location (?P<loc>.+)$"
)


def parse_attribute_report(text: str) -> PatientAttributes:
    """Inverse of render_attribute_report, up to formatting precision."""
    organ_volumes: dict[str, float] = {}
    lesion_stats: dict[str, LesionStats] = {}
    units = "mm"
    section = None
    for line in text.splitlines():
        if line.startswith("Organ volumes"):
            section = "organs"
            continue
        if line.startswith("Lesions"):
            section = "lesions"
            continue
        if section == "organs":
            m = _ORGAN_LINE.match(line)
            if not m:
                raise SchemaViolation(f"unparseable organ line: {line!r}")
            organ_volumes[m.group("name")] = float(m.group("value"))
        elif section == "lesions":
            m = _LESION_LINE.match(line)
            if not m:
                raise SchemaViolation(f"unparseable lesion line: {line!r}")
            if m.group("unit") == "voxels":
                units = "voxel"
            diam = m.group("diam")
            diameters = [] if diam is None else [float(d) for d in diam.split("/")]
            lesion_stats[m.group("name")] = LesionStats(
                count=int(m.group("count")),
                diameters=diameters,
                location=m.group("loc"),
            )
        else:
            raise SchemaViolation(f"unexpected report line: {line!r}")
    return PatientAttributes(
        organ_volumes=organ_volumes,
        lesion_stats=lesion_stats,
        spacing_mm=(1.0, 1.0, 1.0),
        units=units,
    )


def _text_tokens(text: str) -> int:
    return len(text.split())


def build_prompt(
    tokens: TokenSequence,
    segtoks: SegmentationTokenSet,
    attr_text: str,
    region_id: int,
) -> PromptBundle:
    """Assemble the fixed-layout prompt for one target region.

    Raises StudyMismatch when the token sequence and segmentation tokens
    carry different study ids, and BudgetExceeded when the placeholder and
    text token count would exceed the sequence budget.
    """
    if region_id not in REGION_IDS:
        raise ValidationError(f"region_id must be 1..6, got {region_id}")
    if tokens.study is not None and segtoks.study is not None and tokens.study != segtoks.study:
        raise StudyMismatch(f"tokens from {tokens.study!r}, seg tokens from {segtoks.study!r}")
    segtoks.validate()

    vision_payload = "".join(f"<img:{k}>" for k in range(tokens.count))
    instruction = f"Describe findings for {region_name(region_id)}."

    segments = [PromptSegment(kind="text", payload=PREAMBLE)]
    segments.append(PromptSegment(kind="vision_tokens", payload=vision_payload))
    for entry in segtoks.entries:
        rid = entry.region_id
        segments.append(PromptSegment(kind="text", payload=f"<region {rid}>", region_id=rid))
        segments.append(PromptSegment(kind="seg_token", payload=f"<seg:{rid}:m>", region_id=rid))
        segments.append(PromptSegment(kind="seg_token", payload=f"<seg:{rid}:s>", region_id=rid))
    segments.append(PromptSegment(kind="text", payload=attr_text))
    segments.append(PromptSegment(kind="text", payload=instruction, region_id=region_id))

    budget = tokens.count + 2 * len(segtoks.entries)
    budget += sum(_text_tokens(s.payload) for s in segments if s.kind == "text")
    if budget > MAX_SEQUENCE_TOKENS:
        raise BudgetExceeded(f"prompt needs {budget} tokens, budget is {MAX_SEQUENCE_TOKENS}")

    return PromptBundle(
        segments=segments,
        region_id=region_id,
        instruction=instruction,
        attr_text=attr_text,
        study=tokens.study or segtoks.study,
    )


def count_budget_tokens(bundle: PromptBundle) -> int:
    """Tokens the bundle occupies: one per placeholder, one per text word."""
    total = 0
    for s in bundle.segments:
        if s.kind == "vision_tokens":
            total += s.payload.count("<img:")
        elif s.kind == "seg_token":
            total += 1
        else:
            total += _text_tokens(s.payload)
    return total


def render_prompt_text(bundle: PromptBundle) -> str:
    """Flatten a bundle to plain text, placeholders included."""
    return "\n".join(s.payload for s in bundle.segments)


def bundle_to_jsonl(bundle: PromptBundle) -> str:
    """One JSON object per segment; the final segment carries the target
    region id so a bundle file is self-describing."""
    lines = []
    for i, seg in enumerate(bundle.segments):
        obj = {"kind": seg.kind, "payload": seg.payload}
        if seg.region_id is not None:
            obj["region_id"] = seg.region_id
        if i == len(bundle.segments) - 1:
            obj["target_region"] = bundle.region_id
            if bundle.study is not None:
                obj["study"] = bundle.study
        lines.append(json.dumps(obj, sort_keys=True, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def write_prompt_bundle(bundle: PromptBundle, path) -> None:
    atomic_write_bytes(path, bundle_to_jsonl(bundle).encode("utf-8"))


def read_prompt_bundle(path) -> PromptBundle:
    segments = []
    region_id = None
    study = None
    attr_text = ""
    instruction = ""
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            segments.append(
                PromptSegment(kind=obj["kind"], payload=obj["payload"], region_id=obj.get("region_id"))
            )
            if "target_region" in obj:
                region_id = obj["target_region"]
                instruction = obj["payload"]
                study = obj.get("study")
    if region_id is None:
        raise SchemaViolation(f"{path}: no segment carries target_region")
    texts = [s.payload for s in segments if s.kind == "text"]
    if len(texts) >= 2:
        attr_text = texts[-2]
    return PromptBundle(
        segments=segments,
        region_id=region_id,
        instruction=instruction,
        attr_text=attr_text,
        study=study,
    )
