import pytest

from mmie.metrics import (
    bio_to_spans,
    is_valid_bio,
    micro_prf,
    micro_prf_labels,
    ner_report,
    re_report,
    spans_to_bio,
)


# --- span codec --------------------------------------------------------------

def test_bio_to_spans_basics():
    assert bio_to_spans(["O", "O", "O"]) == set()
    assert bio_to_spans(["B-PER", "I-PER", "O"]) == {(0, 2, "PER")}
    assert bio_to_spans(["B-PER", "B-PER"]) == {(0, 1, "PER"), (1, 2, "PER")}
    assert bio_to_spans(["O", "B-LOC"]) == {(1, 2, "LOC")}
    assert bio_to_spans([]) == set()


def test_bio_to_spans_is_lenient_about_dangling_inside_tags():
    # an I-X with no open X span starts a new span rather than erroring
    assert bio_to_spans(["I-LOC", "B-LOC"]) == {(0, 1, "LOC"), (1, 2, "LOC")}
    assert bio_to_spans(["O", "I-PER", "I-PER"]) == {(1, 3, "PER")}
    assert bio_to_spans(["B-PER", "I-LOC"]) == {(0, 1, "PER"), (1, 2, "LOC")}


def test_bio_rejects_malformed_tags():
    with pytest.raises(ValueError):
        bio_to_spans(["B-PER", "X-PER"])
    with pytest.raises(ValueError):
        bio_to_spans(["B"])
    with pytest.raises(ValueError):
        is_valid_bio(["b-PER"])


def test_is_valid_bio():
    assert is_valid_bio(["O", "B-X", "I-X", "O"])
    assert is_valid_bio(["B-X", "B-X"])
    assert not is_valid_bio(["I-X"])
    assert not is_valid_bio(["B-X", "O", "I-X"])
    assert not is_valid_bio(["B-X", "I-Y"])


def test_spans_round_trip(rng):
    for _ in range(25):
        n = int(rng.integers(1, 12))
        spans = set()
        pos = 0
        while pos < n:
            if rng.random() < 0.5:
                end = min(n, pos + int(rng.integers(1, 4)))
                spans.add((pos, end, f"T{int(rng.integers(3))}"))
                pos = end
            else:
                pos += 1
        tags = spans_to_bio(spans, n)
        assert is_valid_bio(tags)
        assert bio_to_spans(tags) == spans


def test_spans_to_bio_rejects_overlap_and_bounds():
    with pytest.raises(ValueError, match="overlap"):
        spans_to_bio({(0, 2, "A"), (1, 3, "B")}, 4)
    with pytest.raises(ValueError, match="range"):
        spans_to_bio({(0, 5, "A")}, 4)


# --- micro scores ------------------------------------------------------------

def test_micro_prf_counts():
    gold = [{(0, 1, "A"), (2, 3, "B")}, {(1, 2, "A")}]
    pred = [{(0, 1, "A"), (3, 4, "B")}, set()]
    p, r, f1 = micro_prf(gold, pred)
    assert p == 0.5          # 1 of 2 predictions correct
    assert r == pytest.approx(1 / 3)
    assert f1 == pytest.approx(2 * 0.5 * (1 / 3) / (0.5 + 1 / 3))


def test_micro_prf_zero_denominators():
    assert micro_prf([set()], [set()]) == (0.0, 0.0, 0.0)
    assert micro_prf([{(0, 1, "A")}], [set()]) == (0.0, 0.0, 0.0)
    assert micro_prf([set()], [{(0, 1, "A")}]) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        micro_prf([set()], [set(), set()])


def test_micro_prf_is_order_invariant():
    gold = [{(0, 1, "A")}, {(0, 2, "B")}, set()]
    pred = [{(0, 1, "A")}, set(), {(1, 2, "A")}]
    fwd = micro_prf(gold, pred)
    rev = micro_prf(gold[::-1], pred[::-1])
    assert fwd == rev


def test_micro_labels_without_exclusion_is_accuracy():
    gold = ["a", "b", "a", "c"]
    pred = ["a", "b", "c", "c"]
    p, r, f1 = micro_prf_labels(gold, pred)
    assert p == r == f1 == 0.75


def test_micro_labels_exclusion_semantics():
    gold = ["none", "r1", "r2", "r1"]
    pred = ["r1", "r1", "none", "r1"]
    p, r, f1 = micro_prf_labels(gold, pred, exclude="none")
    # predictions counted: r1 (wrong), r1 (right), r1 (right) -> P = 2/3
    # gold positives: r1, r2, r1 -> R = 2/3
    assert p == pytest.approx(2 / 3)
    assert r == pytest.approx(2 / 3)
    assert f1 == pytest.approx(2 / 3)


# --- reports -----------------------------------------------------------------

def test_ner_report_shape_and_values():
    gold = [["B-T0", "I-T0", "O"], ["B-T1", "O", "O"]]
    pred = [["B-T0", "I-T0", "O"], ["O", "B-T1", "O"]]
    rep = ner_report(gold, pred)
    assert set(rep) == {"precision", "recall", "f1", "per_type"}
    assert rep["precision"] == 0.5 and rep["recall"] == 0.5
    assert set(rep["per_type"]) == {"T0", "T1"}
    assert rep["per_type"]["T0"]["f1"] == 1.0
    assert rep["per_type"]["T0"]["support"] == 1
    assert rep["per_type"]["T1"]["f1"] == 0.0


def test_re_report_with_int_labels():
    names = ["R0", "R1", "R2"]
    rep = re_report([0, 1, 2, 1], [0, 1, 1, 1], names)
    assert rep["f1"] == 0.75
    assert rep["per_type"]["R1"]["support"] == 2
    assert rep["per_type"]["R1"]["recall"] == 1.0
    assert rep["per_type"]["R1"]["precision"] == pytest.approx(2 / 3)
    assert rep["per_type"]["R2"]["f1"] == 0.0


def test_re_report_exclude_drops_negative_class():
    names = ["none", "R1"]
    rep = re_report([0, 1, 0], [1, 1, 0], names, exclude="none")
    assert "none" not in rep["per_type"]
    assert rep["precision"] == 0.5
    assert rep["recall"] == 1.0
