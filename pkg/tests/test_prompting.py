import numpy as np
import pytest

from ctregion.attributes import LesionStats, PatientAttributes
from ctregion.errors import BudgetExceeded, SchemaViolation, StudyMismatch, ValidationError
from ctregion.pooling import build_token_sequence, select_region_slices
from ctregion.prompting import (
    MAX_SEQUENCE_TOKENS,
    build_prompt,
    count_budget_tokens,
    parse_attribute_report,
    read_prompt_bundle,
    render_attribute_report,
    render_prompt_text,
    write_prompt_bundle,
)
from ctregion.segtokens import make_projection_weights, segmentation_tokens

from helpers import make_mask_set, make_stack


def _attrs(organs=None, lesions=None, units="mm"):
    return PatientAttributes(
        organ_volumes=organs or {},
        lesion_stats=lesions or {},
        spacing_mm=(1.0, 1.0, 1.0),
        units=units,
    )


def _prompt_inputs(seed=80, study="case-1"):
    rng = np.random.default_rng(seed)
    stack = make_stack(rng, D=4, grid=(2, 3), C=5, level_ids=(3, 6))
    masks = make_mask_set(rng, dims=(4, 8, 8), p=0.3)
    selection = select_region_slices(masks)
    weights = make_projection_weights(5, (3, 6), spatial_grid=(2, 4, 4), seed=7)
    tokens = build_token_sequence(stack, masks, study=study)
    segtoks = segmentation_tokens(masks, stack, selection, weights, study=study)
    return tokens, segtoks


class TestAttributeReport:
    def test_golden_rendering(self):
        attrs = _attrs(
            organs={"liver": 1500.0, "heart": 620.25},
            lesions={
                "nodule": LesionStats(count=2, diameters=[4.0, 7.5], location="lung"),
                "cyst": LesionStats(count=0, diameters=[], location="upper abdomen"),
            },
        )
        assert render_attribute_report(attrs) == (
            "Organ volumes:\n"
            "heart: 620.2 mL\n"
            "liver: 1500.0 mL\n"
            "Lesions:\n"
            "cyst — count 0, diameters none, location upper abdomen\n"
            "nodule — count 2, diameters 4.0/7.5 mm, location lung"
        )

    def test_rounding_is_half_even(self):
        attrs = _attrs(organs={"a": 2.25, "b": 2.75})
        text = render_attribute_report(attrs)
        assert "a: 2.2 mL" in text  # exact halves round to even
        assert "b: 2.8 mL" in text

    def test_empty_sections(self):
        assert render_attribute_report(_attrs()) == (
            "Organ volumes: none reported.\nLesions: none reported."
        )

    def test_voxel_units_rendering(self):
        attrs = _attrs(
            lesions={"blob": LesionStats(count=1, diameters=[3.0], location="lung")},
            units="voxel",
        )
        assert "diameters 3.0 voxels," in render_attribute_report(attrs)

    def test_numeric_roundtrip(self):
        rng = np.random.default_rng(81)
        for _ in range(50):
            organs = {f"organ{i}": float(rng.uniform(0, 5000)) for i in range(3)}
            lesions = {
                f"lesion{i}": LesionStats(
                    count=int(n := rng.integers(0, 4)),
                    diameters=[float(rng.uniform(0.1, 90)) for _ in range(int(n))],
                    location="lung",
                )
                for i in range(2)
            }
            attrs = _attrs(organs=organs, lesions=lesions)
            back = parse_attribute_report(render_attribute_report(attrs))
            for name, v in organs.items():
                assert back.organ_volumes[name] == float(f"{v:.1f}")
            for name, stats in lesions.items():
                assert back.lesion_stats[name].count == stats.count
                assert back.lesion_stats[name].diameters == [
                    float(f"{d:.1f}") for d in stats.diameters
                ]
                assert back.lesion_stats[name].location == stats.location

    def test_parse_detects_voxel_units(self):
        attrs = _attrs(
            lesions={"blob": LesionStats(count=1, diameters=[3.0], location="lung")},
            units="voxel",
        )
        assert parse_attribute_report(render_attribute_report(attrs)).units == "voxel"

    def test_parse_none_reported(self):
        back = parse_attribute_report("Organ volumes: none reported.\nLesions: none reported.")
        assert back.organ_volumes == {}
        assert back.lesion_stats == {}

    def test_parse_rejects_garbage(self):
        with pytest.raises(SchemaViolation):
            parse_attribute_report("hello world")


class TestBuildPrompt:
    def test_segment_layout(self):
        tokens, segtoks = _prompt_inputs()
        bundle = build_prompt(tokens, segtoks, "Lesions: none reported.", 1)
        want = ["text", "vision_tokens"]
        for _ in range(6):
            want += ["text", "seg_token", "seg_token"]
        want += ["text", "text"]
        assert bundle.kinds() == want
        assert bundle.region_id == 1
        assert bundle.study == "case-1"
        assert bundle.instruction == "Describe findings for lung."

    def test_layout_is_positivity_independent(self):
        tokens, segtoks = _prompt_inputs()
        for entry in segtoks.entries:
            entry.positive = False
        again = build_prompt(tokens, segtoks, "x", 3)
        reference = build_prompt(*_prompt_inputs(), "x", 3)
        assert again.kinds() == reference.kinds()
        assert [s.payload for s in again.segments[:2]] == [
            s.payload for s in reference.segments[:2]
        ]

    def test_placeholder_counts(self):
        tokens, segtoks = _prompt_inputs()
        bundle = build_prompt(tokens, segtoks, "x", 2)
        text = render_prompt_text(bundle)
        assert text.count("<img:") == tokens.count
        assert text.count("<seg:") == 12
        for rid in range(1, 7):
            assert f"<seg:{rid}:m>" in text
            assert f"<seg:{rid}:s>" in text
            assert f"<region {rid}>" in text

    def test_instruction_names_target_region(self):
        tokens, segtoks = _prompt_inputs()
        for rid, name in [(2, "large airways"), (6, "upper abdomen")]:
            bundle = build_prompt(tokens, segtoks, "x", rid)
            assert bundle.segments[-1].payload == f"Describe findings for {name}."

    def test_bad_region_rejected(self):
        tokens, segtoks = _prompt_inputs()
        for rid in (0, 7, -1):
            with pytest.raises(ValidationError):
                build_prompt(tokens, segtoks, "x", rid)

    def test_study_mismatch(self):
        tokens, _ = _prompt_inputs(study="case-1")
        _, segtoks = _prompt_inputs(study="case-2")
        with pytest.raises(StudyMismatch):
            build_prompt(tokens, segtoks, "x", 1)

    def test_missing_study_on_one_side_is_fine(self):
        tokens, _ = _prompt_inputs(study=None)
        _, segtoks = _prompt_inputs(study="case-2")
        assert build_prompt(tokens, segtoks, "x", 1).study == "case-2"

    def test_budget_enforced(self):
        tokens, segtoks = _prompt_inputs()
        words = " ".join("w" for _ in range(MAX_SEQUENCE_TOKENS))
        with pytest.raises(BudgetExceeded):
            build_prompt(tokens, segtoks, words, 1)

    def test_budget_count_decomposition(self):
        tokens, segtoks = _prompt_inputs()
        attr_text = "Organ volumes: none reported.\nLesions: none reported."
        bundle = build_prompt(tokens, segtoks, attr_text, 4)
        text_words = sum(
            len(s.payload.split()) for s in bundle.segments if s.kind == "text"
        )
        assert count_budget_tokens(bundle) == tokens.count + 12 + text_words
        assert count_budget_tokens(bundle) <= MAX_SEQUENCE_TOKENS


class TestBundleIO:
    def test_jsonl_roundtrip(self, tmp_path):
        tokens, segtoks = _prompt_inputs()
        attr_text = "Organ volumes: none reported.\nLesions: none reported."
        bundle = build_prompt(tokens, segtoks, attr_text, 5)
        path = tmp_path / "prompt.jsonl"
        write_prompt_bundle(bundle, path)
        loaded = read_prompt_bundle(path)
        assert loaded.kinds() == bundle.kinds()
        assert [s.payload for s in loaded.segments] == [s.payload for s in bundle.segments]
        assert [s.region_id for s in loaded.segments] == [s.region_id for s in bundle.segments]
        assert loaded.region_id == 5
        assert loaded.study == "case-1"
        assert loaded.instruction == bundle.instruction
        assert loaded.attr_text == attr_text

    def test_rewrite_is_byte_identical(self, tmp_path):
        tokens, segtoks = _prompt_inputs()
        bundle = build_prompt(tokens, segtoks, "x", 1)
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_prompt_bundle(bundle, a)
        write_prompt_bundle(bundle, b)
        assert a.read_bytes() == b.read_bytes()

    def test_bundle_without_target_region_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"kind":"text","payload":"hi"}\n')
        with pytest.raises(SchemaViolation):
            read_prompt_bundle(path)
