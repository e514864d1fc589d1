"""Helpers for inside/outside/begin label sequences."""
from __future__ import annotations

from typing import Sequence


def is_valid_iob(labels: Sequence[str]) -> bool:
    """True when every I-X continues a B-X or I-X of the same type."""
    prev_type: str | None = None
    for label in labels:
        if label == "O":
            prev_type = None
        elif label.startswith("B-"):
            prev_type = label[2:]
        elif label.startswith("I-"):
            if prev_type != label[2:]:
                return False
        else:
            return False
    return True


def concept_spans(labels: Sequence[str]) -> list[tuple[int, int, str]]:
    """Non-O spans as (start, end, type), in order."""
    spans: list[tuple[int, int, str]] = []
    start = None
    kind = None
    for i, label in enumerate(labels):
        if label.startswith("B-"):
            if start is not None:
                spans.append((start, i, kind))
            start, kind = i, label[2:]
        elif label.startswith("I-") and start is not None and label[2:] == kind:
            continue
        else:
            if start is not None:
                spans.append((start, i, kind))
                start, kind = None, None
    if start is not None:
        spans.append((start, len(labels), kind))
    return spans


def segment_spans(labels: Sequence[str]) -> list[tuple[int, int, str]]:
    """All spans including maximal O runs (type "O"), covering every token."""
    spans: list[tuple[int, int, str]] = []
    concepts = concept_spans(labels)
    pos = 0
    for start, end, kind in concepts:
        if pos < start:
            spans.append((pos, start, "O"))
        spans.append((start, end, kind))
        pos = end
    if pos < len(labels):
        spans.append((pos, len(labels), "O"))
    return spans
