"""Timestamped sound events and the TSV formats that carry them.

Strong labels / predictions: one event per line,
``filename<TAB>onset<TAB>offset<TAB>event_label`` with 3-decimal times.
Weak labels: ``filename<TAB>label1,label2,...``.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Event:
    label: str
    onset: float
    offset: float

    def __post_init__(self):
        if not self.onset < self.offset:
            raise ValueError(f"event onset must precede offset, got ({self.onset}, {self.offset})")
        if self.onset < 0:
            raise ValueError(f"event onset must be >= 0, got {self.onset}")


def validate_event_list(events):
    """Enforce the per-clip invariants: per class, sorted by onset and
    non-overlapping."""
    by_class = {}
    for e in events:
        by_class.setdefault(e.label, []).append(e)
    for label, evs in by_class.items():
        for a, b in zip(evs, evs[1:]):
            if b.onset < a.onset:
                raise ValueError(f"events of class '{label}' are not sorted by onset")
            if b.onset < a.offset:
                raise ValueError(f"events of class '{label}' overlap at {b.onset:.3f}")
    return events


def sort_events(events):
    return sorted(events, key=lambda e: (e.onset, e.offset, e.label))


def write_events_tsv(path, clips):
    """clips: mapping filename -> list of Event (clips with no events are
    written as no lines; they still exist via the audio files)."""
    with open(path, "w") as f:
        for filename in sorted(clips):
            for e in sort_events(clips[filename]):
                f.write(f"{filename}\t{e.onset:.3f}\t{e.offset:.3f}\t{e.label}\n")


def read_events_tsv(path):
    clips = {}
    with open(path) as f:
        for line_no, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{line_no}: expected 4 tab-separated fields")
            filename, onset, offset, label = parts
            clips.setdefault(filename, []).append(Event(label, float(onset), float(offset)))
    for filename in clips:
        clips[filename] = sort_events(clips[filename])
    return clips


def write_weak_tsv(path, clips):
    """clips: mapping filename -> iterable of labels."""
    with open(path, "w") as f:
        for filename in sorted(clips):
            f.write(f"{filename}\t{','.join(sorted(set(clips[filename])))}\n")


def read_weak_tsv(path):
    clips = {}
    with open(path) as f:
        for line_no, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{line_no}: expected 2 tab-separated fields")
            filename, labels = parts
            clips[filename] = set(labels.split(",")) if labels else set()
    return clips
