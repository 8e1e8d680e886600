"""Posterior grids -> timestamped events.

Frame probabilities are binarized (gated by the clip-level probability),
median-filtered per class, and maximal runs of active frames become
events."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import Event


@dataclass
class DecodeConfig:
    frame_threshold: float = 0.5
    clip_threshold: float = 0.5
    median_window: int = 9

    def __post_init__(self):
        if not (0 < self.frame_threshold < 1 and 0 < self.clip_threshold < 1):
            raise ValueError("decode thresholds must lie in (0, 1)")
        if self.median_window < 1 or self.median_window % 2 == 0:
            raise ValueError(f"median_window must be odd and >= 1, got {self.median_window}")


def binarize(grid, config):
    """(frames, classes) binary activity: a cell is active iff its frame
    probability reaches the frame threshold AND the clip-level gate for
    that class reaches the clip threshold."""
    frame_active = grid.frame_probs >= config.frame_threshold
    clip_active = grid.clip_probs >= config.clip_threshold
    return (frame_active & clip_active[None, :]).astype(np.uint8)


def median_filter(sequence, window):
    """Sliding binary median with edge replication; window must be odd."""
    sequence = np.asarray(sequence)
    if window % 2 == 0:
        raise ValueError(f"median window must be odd, got {window}")
    if window > sequence.shape[0]:
        raise ValueError(f"median window {window} exceeds sequence length {sequence.shape[0]}")
    if window == 1:
        return sequence.copy()
    half = window // 2
    padded = np.pad(sequence.astype(np.int32), (half, half), mode="edge")
    counts = np.convolve(padded, np.ones(window, dtype=np.int32), mode="valid")
    return (counts * 2 > window).astype(sequence.dtype)


def median_filter_grid(binary_grid, window):
    out = np.empty_like(binary_grid)
    for c in range(binary_grid.shape[1]):
        out[:, c] = median_filter(binary_grid[:, c], window)
    return out


def frames_to_events(binary_grid, frame_duration, class_labels):
    """Each maximal run of active frames [i..j] in class c becomes the
    event (c, i*d, (j+1)*d); the result is sorted by onset."""
    events = []
    for c, label in enumerate(class_labels):
        col = np.asarray(binary_grid[:, c], dtype=bool)
        edges = np.flatnonzero(np.diff(np.concatenate([[False], col, [False]])))
        for start, end in zip(edges[::2], edges[1::2]):
            events.append(Event(label, start * frame_duration, end * frame_duration))
    return sorted(events, key=lambda e: (e.onset, e.offset, e.label))


def decode_grid(grid, config, class_labels):
    """Full decoding chain for one clip's PosteriorGrid."""
    binary = binarize(grid, config)
    filtered = median_filter_grid(binary, config.median_window)
    return frames_to_events(filtered, grid.frame_duration_seconds, class_labels)


def rasterize_events(events, frame_duration, n_frames, class_labels):
    """Inverse of frames_to_events at frame resolution (for round-trip
    checks and strong-label grids)."""
    index = {label: i for i, label in enumerate(class_labels)}
    grid = np.zeros((n_frames, len(class_labels)), dtype=np.uint8)
    for e in events:
        start = int(round(e.onset / frame_duration))
        end = int(round(e.offset / frame_duration))
        grid[start : max(end, start + 1), index[e.label]] = 1
    return grid
