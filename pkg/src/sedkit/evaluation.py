"""Event-based F-score with onset/offset collars and macro averaging.

A predicted event is correct when its onset lies within a fixed collar of
the reference onset and its offset within the larger of the absolute
collar and a fraction of the reference event's length. Matching is
one-to-one and greedy in onset order; unmatched predictions count as
false positives and unmatched references as false negatives, so a
near-miss is penalized twice.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field


@dataclass
class MatchConfig:
    onset_collar: float = 0.200
    offset_collar_abs: float = 0.200
    offset_collar_ratio: float = 0.20

    def __post_init__(self):
        if min(self.onset_collar, self.offset_collar_abs, self.offset_collar_ratio) <= 0:
            raise ValueError("all collar parameters must be positive")


@dataclass
class ClassReport:
    label: str
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def f_score(self):
        return f_score(self.tp, self.fp, self.fn)

    @property
    def defined(self):
        return 2 * self.tp + self.fp + self.fn > 0


@dataclass
class EvalReport:
    classes: dict = field(default_factory=dict)  # label -> ClassReport

    @property
    def macro_f(self):
        defined = [c.f_score for c in self.classes.values() if c.defined]
        if not defined:
            raise ValueError("empty evaluation: no class has any reference or predicted event")
        return sum(defined) / len(defined)


def event_matches(ref, pred, config):
    """Collar rule for two same-class events."""
    if abs(pred.onset - ref.onset) > config.onset_collar:
        return False
    offset_collar = max(config.offset_collar_abs, config.offset_collar_ratio * (ref.offset - ref.onset))
    return abs(pred.offset - ref.offset) <= offset_collar


def match_clip(ref_events, pred_events, config):
    """Greedy one-to-one matching for one clip.

    Both lists must be sorted by onset within each class. Each predicted
    event, in onset order, matches the earliest still-unmatched reference
    event that satisfies the collar rule.

    Returns:
        dict label -> (tp, fp, fn).
    """
    _check_sorted(ref_events, "reference")
    _check_sorted(pred_events, "predicted")
    labels = {e.label for e in ref_events} | {e.label for e in pred_events}
    counts = {}
    for label in labels:
        refs = [e for e in ref_events if e.label == label]
        preds = [e for e in pred_events if e.label == label]
        matched = [False] * len(refs)
        tp = 0
        for p in preds:
            for i, r in enumerate(refs):
                if not matched[i] and event_matches(r, p, config):
                    matched[i] = True
                    tp += 1
                    break
        counts[label] = (tp, len(preds) - tp, len(refs) - tp)
    return counts


def _check_sorted(events, name):
    by_class = {}
    for e in events:
        by_class.setdefault(e.label, []).append(e)
    for evs in by_class.values():
        if any(b.onset < a.onset for a, b in zip(evs, evs[1:])):
            raise ValueError(f"{name} events are not sorted by onset")


def f_score(tp, fp, fn):
    """F = 2TP / (2TP + FP + FN); counts must be non-negative."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def evaluate_corpus(reference, predictions, config=None):
    """Accumulate per-class counts over all clips, then score.

    Args:
        reference: filename -> list of Event.
        predictions: filename -> list of Event; a clip missing from the
            mapping counts as zero predictions.
        config: MatchConfig (defaults to the standard collars).

    Returns:
        EvalReport with one ClassReport per class seen anywhere; classes
        absent from both sides everywhere stay out of the macro mean.
    """
    config = config or MatchConfig()
    report = EvalReport()
    filenames = sorted(set(reference) | set(predictions))
    for filename in filenames:
        clip_counts = match_clip(reference.get(filename, []), predictions.get(filename, []), config)
        for label, (tp, fp, fn) in clip_counts.items():
            cls = report.classes.setdefault(label, ClassReport(label))
            cls.tp += tp
            cls.fp += fp
            cls.fn += fn
    if not any(c.defined for c in report.classes.values()):
        raise ValueError("empty evaluation: no class has any reference or predicted event")
    return report


def format_report(report):
    lines = [f"{'class':<16s} {'TP':>6s} {'FP':>6s} {'FN':>6s} {'F%':>8s}"]
    for label in sorted(report.classes):
        c = report.classes[label]
        f_cell = f"{100.0 * c.f_score:8.2f}" if c.defined else "       -"
        lines.append(f"{label:<16s} {c.tp:6d} {c.fp:6d} {c.fn:6d} {f_cell}")
    lines.append(f"macro F: {100.0 * report.macro_f:.2f}%")
    return "\n".join(lines) + "\n"


def write_report_csv(path, report):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class", "tp", "fp", "fn", "f_percent"])
        for label in sorted(report.classes):
            c = report.classes[label]
            f_cell = f"{100.0 * c.f_score:.4f}" if c.defined else ""
            writer.writerow([label, c.tp, c.fp, c.fn, f_cell])
        writer.writerow(["macro", "", "", "", f"{100.0 * report.macro_f:.4f}"])
