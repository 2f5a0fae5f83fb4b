import numpy as np
import pytest

from ctregion.errors import LabelCountMismatch, SchemaViolation, ValidationError
from ctregion.reports import (
    StructuredReport,
    assign_sentence_region,
    load_region_lexicon,
    merge_reports,
    parse_merged_report,
    report_from_json_dict,
    report_to_json_dict,
    split_report,
    split_sentences,
)

from helpers import random_report


class TestSentenceSplit:
    def test_basic(self):
        assert split_sentences("One here. Two there. Three.") == [
            "One here.",
            "Two there.",
            "Three.",
        ]

    def test_abbreviations_do_not_split(self):
        text = "Nodule is small, e.g. under 4 mm. Stable vs. prior."
        assert split_sentences(text) == [
            "Nodule is small, e.g. under 4 mm.",
            "Stable vs. prior.",
        ]

    def test_single_letter_initial(self):
        assert split_sentences("Reviewed by J. Smith today. Agreed.") == [
            "Reviewed by J. Smith today.",
            "Agreed.",
        ]

    def test_decimal_numbers_stay_whole(self):
        assert split_sentences("Measures 4.5 mm today. Stable.") == [
            "Measures 4.5 mm today.",
            "Stable.",
        ]

    def test_trailing_text_without_period(self):
        assert split_sentences("Done. pending review") == ["Done.", "pending review"]

    def test_empty_and_whitespace(self):
        assert split_sentences("") == []
        assert split_sentences("   ") == []

    def test_multiple_spaces_and_newlines(self):
        assert split_sentences("First.  Second.\nThird.") == ["First.", "Second.", "Third."]


@pytest.fixture(scope="module")
def patterns():
    from ctregion.reports import _compile_lexicon

    return _compile_lexicon(load_region_lexicon())


class TestLexiconRouting:
    def test_lexicon_covers_all_regions(self):
        assert sorted(load_region_lexicon()) == [1, 2, 3, 4, 5, 6]

    def test_stem_matching_extends_keywords(self, patterns):
        assert assign_sentence_region("Scattered pulmonary nodules.", patterns, None) == 1
        assert assign_sentence_region("The trachea is patent.", patterns, None) == 2
        assert assign_sentence_region("No mediastinal mass.", patterns, None) == 3
        assert assign_sentence_region("Coronary calcifications noted.", patterns, None) == 4
        assert assign_sentence_region("Degenerative vertebral changes.", patterns, None) == 5
        assert assign_sentence_region("The liver is unremarkable.", patterns, None) == 6

    def test_most_hits_wins(self, patterns):
        sent = "Lung bases clear, liver and spleen and kidneys normal."
        assert assign_sentence_region(sent, patterns, None) == 6

    def test_tie_takes_lower_region(self, patterns):
        assert assign_sentence_region("Lung and trachea reviewed.", patterns, None) == 1

    def test_no_hits_carries_previous(self, patterns):
        assert assign_sentence_region("Unchanged from prior.", patterns, 4) == 4

    def test_no_hits_without_previous_is_region_one(self, patterns):
        assert assign_sentence_region("Unchanged from prior.", patterns, None) == 1

    def test_carry_over_in_split(self):
        text = "Small pleural effusion. Stable since last year. Liver is normal."
        report = split_report(text)
        assert report.sections[1] == ["Small pleural effusion.", "Stable since last year."]
        assert report.sections[6] == ["Liver is normal."]


class TestLabeledSplit:
    def test_labels_are_authoritative(self):
        text = "The liver is fine. The lungs are clear."
        report = split_report(text, region_labels=[4, 4])
        assert report.sections == {4: ["The liver is fine.", "The lungs are clear."]}

    def test_label_count_mismatch(self):
        with pytest.raises(LabelCountMismatch):
            split_report("One. Two. Three.", region_labels=[1, 2])

    def test_out_of_range_label(self):
        with pytest.raises(ValidationError):
            split_report("One sentence.", region_labels=[9])

    def test_study_is_carried(self):
        report = split_report("Lungs clear.", region_labels=[1], study="s9")
        assert report.study == "s9"


class TestMergeAndParse:
    def test_merge_renders_in_region_order(self):
        report = StructuredReport(sections={6: ["Liver normal."], 1: ["Lungs clear."]})
        assert merge_reports(report) == "Lungs: Lungs clear.\nUpper abdomen: Liver normal."

    def test_complete_fills_unremarkable(self):
        report = StructuredReport(sections={2: ["Airways patent."]})
        text = merge_reports(report, complete=True)
        lines = text.splitlines()
        assert len(lines) == 6
        assert lines[1] == "Large airways: Airways patent."
        assert lines[0] == "Lungs: Unremarkable."
        assert lines[5] == "Upper abdomen: Unremarkable."

    def test_empty_report_renders_empty(self):
        assert merge_reports(StructuredReport(sections={})) == ""

    def test_parse_inverts_merge(self):
        report = StructuredReport(
            sections={1: ["Lungs clear.", "No nodule."], 5: ["No fracture."]}
        )
        back = parse_merged_report(merge_reports(report))
        assert back.sections == report.sections

    def test_parse_unremarkable_gives_empty_section(self):
        back = parse_merged_report("Mediastinum: Unremarkable.")
        assert back.sections == {3: []}

    def test_parse_rejects_duplicate_sections(self):
        with pytest.raises(SchemaViolation):
            parse_merged_report("Lungs: A.\nLungs: B.")

    def test_parse_rejects_unheadered_line(self):
        with pytest.raises(SchemaViolation):
            parse_merged_report("No header here.")

    def test_unknown_region_id_rejected(self):
        with pytest.raises(SchemaViolation):
            merge_reports(StructuredReport(sections={7: ["x."]}))


class TestRoundTrips:
    def test_split_merge_preserves_sentences_random(self):
        rng = np.random.default_rng(90)
        for _ in range(100):
            text, labels = random_report(rng, n_sentences=int(rng.integers(1, 12)))
            report = split_report(text, region_labels=labels)
            merged = merge_reports(report)
            back = parse_merged_report(merged)
            assert back.sections == report.sections
            got = sorted(s for sents in back.sections.values() for s in sents)
            want = sorted(split_sentences(text))
            assert got == want

    def test_json_roundtrip(self):
        report = StructuredReport(sections={1: ["A."], 3: ["B.", "C."]}, study="s1")
        back = report_from_json_dict(report_to_json_dict(report))
        assert back.sections == report.sections
        assert back.study == "s1"

    def test_json_rejects_bad_keys(self):
        with pytest.raises(SchemaViolation):
            report_from_json_dict({"sections": {"seven": ["x."]}})
