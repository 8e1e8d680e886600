import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from sedkit.events import Event, read_events_tsv, write_events_tsv
from sedkit.evaluation import (
    ClassReport,
    EvalReport,
    MatchConfig,
    evaluate_corpus,
    event_matches,
    f_score,
    format_report,
    match_clip,
    write_report_csv,
)

CFG = MatchConfig()


def ev(label, onset, offset):
    return Event(label, onset, offset)


# -- event_matches ------------------------------------------------------------


def test_collar_rule_examples():
    # onset diff 0.15 <= 0.2; offset collar max(0.2, 0.2*2.0) = 0.4 >= 0.30
    assert event_matches(ev("a", 1.00, 3.00), ev("a", 1.15, 3.30), CFG)
    # onset diff 0.25 > 0.2
    assert not event_matches(ev("a", 1.00, 3.00), ev("a", 1.25, 3.00), CFG)
    assert event_matches(ev("a", 1.00, 3.00), ev("a", 1.00, 3.00), CFG)


def test_offset_collar_uses_absolute_branch_for_short_events():
    # event length 0.5 -> ratio collar 0.1 < absolute 0.2
    assert event_matches(ev("a", 1.0, 1.5), ev("a", 1.0, 1.69), CFG)
    assert not event_matches(ev("a", 1.0, 1.5), ev("a", 1.0, 1.71), CFG)


# -- match_clip -----------------------------------------------------------------


def test_exact_predictions_all_true_positive():
    events = [ev("a", 0.5, 1.5), ev("a", 3.0, 4.0), ev("b", 2.0, 6.0)]
    counts = match_clip(events, list(events), CFG)
    assert counts == {"a": (2, 0, 0), "b": (1, 0, 0)}


def test_near_miss_double_penalty():
    ref = [ev("a", 1.0, 3.0)]
    pred = [ev("a", 1.5, 3.5)]  # onset off by 0.5 s
    assert match_clip(ref, pred, CFG) == {"a": (0, 1, 1)}


def test_one_to_one_constraint():
    ref = [ev("a", 1.0, 3.0)]
    pred = [ev("a", 1.0, 3.0), ev("a", 1.05, 3.05)]
    assert match_clip(ref, pred, CFG) == {"a": (1, 1, 0)}


def test_unsorted_input_rejected():
    bad = [ev("a", 2.0, 3.0), ev("a", 0.5, 1.0)]
    with pytest.raises(ValueError, match="sorted"):
        match_clip(bad, [], CFG)
    with pytest.raises(ValueError, match="sorted"):
        match_clip([], bad, CFG)


# -- f_score ----------------------------------------------------------------------


def test_f_score_values():
    assert f_score(2, 1, 1) == pytest.approx(2 / 3, abs=5e-5)
    assert f_score(5, 0, 0) == 1.0
    assert f_score(0, 3, 2) == 0.0


def test_f_score_rejects_negative_counts():
    with pytest.raises(ValueError):
        f_score(-1, 0, 0)


# -- macro averaging ----------------------------------------------------------------


def test_macro_average_of_two_classes():
    report = EvalReport(
        {
            "a": ClassReport("a", tp=1, fp=1, fn=2),  # F = 2/5 = 0.4
            "b": ClassReport("b", tp=2, fp=1, fn=0),  # F = 4/5 = 0.8
        }
    )
    assert report.macro_f == pytest.approx(0.6)


def test_macro_single_class():
    report = EvalReport({"a": ClassReport("a", tp=3, fp=1, fn=1)})
    assert report.macro_f == pytest.approx(f_score(3, 1, 1))


def test_empty_class_excluded_from_macro():
    ref = {"x.wav": [ev("a", 1.0, 2.0)], "y.wav": [ev("b", 1.0, 2.0)]}
    pred = {"x.wav": [ev("a", 1.0, 2.0)], "y.wav": [ev("b", 1.0, 2.0)]}
    report = evaluate_corpus(ref, pred)
    assert set(report.classes) == {"a", "b"}
    assert report.macro_f == 1.0
    # including an absent class as zero would drag the mean down; document the difference
    including_as_zero = (report.classes["a"].f_score + report.classes["b"].f_score + 0.0) / 3
    assert report.macro_f > including_as_zero


def test_empty_evaluation_raises():
    with pytest.raises(ValueError, match="empty evaluation"):
        evaluate_corpus({"x.wav": []}, {"x.wav": []})


def test_missing_prediction_file_counts_as_zero_predictions():
    ref = {"x.wav": [ev("a", 1.0, 2.0)], "y.wav": [ev("a", 3.0, 4.0)]}
    pred = {"x.wav": [ev("a", 1.0, 2.0)]}
    report = evaluate_corpus(ref, pred)
    assert (report.classes["a"].tp, report.classes["a"].fp, report.classes["a"].fn) == (1, 0, 1)


def test_counts_accumulate_before_f():
    # per-clip F then averaging would give a different number; counts first
    ref = {"x.wav": [ev("a", 1.0, 2.0)], "y.wav": [ev("a", 3.0, 4.0), ev("a", 5.0, 6.0)]}
    pred = {"x.wav": [], "y.wav": [ev("a", 3.0, 4.0), ev("a", 5.0, 6.0)]}
    report = evaluate_corpus(ref, pred)
    assert report.macro_f == pytest.approx(f_score(2, 0, 1))


# -- oracles ---------------------------------------------------------------------


def brute_force_greedy(ref_events, pred_events, config):
    """Independent re-derivation of the same greedy rule, set-based."""
    labels = {e.label for e in ref_events} | {e.label for e in pred_events}
    out = {}
    for label in labels:
        refs = sorted((e for e in ref_events if e.label == label), key=lambda e: (e.onset, e.offset))
        preds = sorted((e for e in pred_events if e.label == label), key=lambda e: (e.onset, e.offset))
        available = set(range(len(refs)))
        tp = 0
        for p in preds:
            candidates = [i for i in sorted(available) if event_matches(refs[i], p, config)]
            if candidates:
                available.discard(candidates[0])
                tp += 1
        out[label] = (tp, len(preds) - tp, len(refs) - tp)
    return out


def optimal_tp(ref_events, pred_events, config):
    """Maximum bipartite matching size via the assignment problem."""
    total = 0
    labels = {e.label for e in ref_events} | {e.label for e in pred_events}
    for label in labels:
        refs = [e for e in ref_events if e.label == label]
        preds = [e for e in pred_events if e.label == label]
        if not refs or not preds:
            continue
        cost = np.zeros((len(preds), len(refs)))
        for i, p in enumerate(preds):
            for j, r in enumerate(refs):
                cost[i, j] = -1.0 if event_matches(r, p, config) else 0.0
        rows, cols = linear_sum_assignment(cost)
        total += int(-cost[rows, cols].sum())
    return total


def random_instance(rng):
    labels = ["a", "b", "c"]
    def events():
        out = {}
        for label in labels:
            n = rng.integers(0, 7)
            starts = np.sort(rng.uniform(0, 10, size=n))
            evs = []
            t = 0.0
            for s in starts:
                onset = max(s, t)
                length = rng.uniform(0.05, 2.0)
                if onset + length > 12:
                    continue
                evs.append(Event(label, float(onset), float(onset + length)))
                t = onset + length + 1e-3
            out[label] = evs
        return [e for evs in out.values() for e in evs]
    return sorted(events(), key=lambda e: e.onset), sorted(events(), key=lambda e: e.onset)


def test_greedy_matcher_vs_brute_force_1000_instances():
    rng = np.random.default_rng(424242)
    for _ in range(1000):
        ref, pred = random_instance(rng)
        fast = match_clip(ref, pred, CFG)
        slow = brute_force_greedy(ref, pred, CFG)
        assert fast == slow
        # conservation laws per class
        for label, (tp, fp, fn) in fast.items():
            assert tp + fn == sum(e.label == label for e in ref)
            assert tp + fp == sum(e.label == label for e in pred)


def test_greedy_tp_bounded_by_optimal_matching():
    rng = np.random.default_rng(5150)
    for _ in range(300):
        ref, pred = random_instance(rng)
        greedy = sum(tp for tp, _, _ in match_clip(ref, pred, CFG).values())
        assert greedy <= optimal_tp(ref, pred, CFG)


def test_shift_invariance():
    rng = np.random.default_rng(99)
    for _ in range(50):
        ref, pred = random_instance(rng)
        shift = 3.7
        ref2 = sorted((Event(e.label, e.onset + shift, e.offset + shift) for e in ref), key=lambda e: e.onset)
        pred2 = sorted((Event(e.label, e.onset + shift, e.offset + shift) for e in pred), key=lambda e: e.onset)
        assert match_clip(ref, pred, CFG) == match_clip(ref2, pred2, CFG)


def test_clip_order_permutation_invariance(rng):
    ref = {
        "a.wav": [ev("a", 1.0, 2.0)],
        "b.wav": [ev("a", 3.0, 4.0), ev("b", 1.0, 5.0)],
        "c.wav": [ev("b", 0.5, 0.9)],
    }
    pred = {
        "a.wav": [ev("a", 1.05, 2.1)],
        "b.wav": [ev("b", 1.1, 5.2)],
        "c.wav": [ev("b", 0.5, 0.95), ev("a", 2.0, 3.0)],
    }
    r1 = evaluate_corpus(ref, pred)
    r2 = evaluate_corpus(dict(reversed(ref.items())), dict(reversed(pred.items())))
    for label in r1.classes:
        a, b = r1.classes[label], r2.classes[label]
        assert (a.tp, a.fp, a.fn) == (b.tp, b.fp, b.fn)


# -- I/O ------------------------------------------------------------------------


def test_events_tsv_roundtrip(tmp_path):
    clips = {
        "clip_001.wav": [ev("tone_low", 0.5, 1.25), ev("chirp_up", 2.0, 4.5)],
        "clip_002.wav": [ev("tone_low", 1.0, 9.999)],
    }
    path = tmp_path / "ref.tsv"
    write_events_tsv(path, clips)
    text = path.read_text()
    assert "clip_001.wav\t0.500\t1.250\ttone_low" in text
    loaded = read_events_tsv(path)
    assert loaded["clip_002.wav"][0].offset == pytest.approx(9.999)
    assert [e.label for e in loaded["clip_001.wav"]] == ["tone_low", "chirp_up"]


def test_report_outputs(tmp_path):
    ref = {"x.wav": [ev("a", 1.0, 2.0), ev("b", 2.0, 3.0)]}
    pred = {"x.wav": [ev("a", 1.0, 2.0)]}
    report = evaluate_corpus(ref, pred)
    text = format_report(report)
    assert "macro F: 50.00%" in text
    csv_path = tmp_path / "report.csv"
    write_report_csv(csv_path, report)
    rows = csv_path.read_text().strip().splitlines()
    assert rows[0] == "class,tp,fp,fn,f_percent"
    assert rows[-1].startswith("macro")
