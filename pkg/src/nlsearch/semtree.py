"""Semantic trees: one root entity plus filter nodes, and relative time.

A tagged query becomes a shallow tree whose root names the record type
searched and whose children each constrain it. A boolean-filter word
that sits directly before a time phrase and names one of the entity's
date selectors is folded into the time filter instead of standing
alone, so "closed in the last 3 quarters" scopes the date rather than
filtering on the closed flag.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from datetime import date, timedelta
from typing import Sequence

from .pretag import MaskedQuery, PreTagSpan, detokenize
from .schema import OrgFixture, UserContext, concept_visible
from .iob import concept_spans
from .tagger import TagSequence

UNITS = ("day", "week", "month", "quarter", "year")

_UNIT_ALIASES = {u: u for u in UNITS} | {u + "s": u for u in UNITS}

_DIRECTIONS = ("LAST", "THIS", "NEXT")


class TimeParseError(ValueError):
    """Raised when a TIME span does not spell a supported expression."""


@dataclass(frozen=True)
class Span:
    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start < 0 or self.end <= self.start:
            raise ValueError("empty or negative span")


@dataclass(frozen=True)
class TimeExpr:
    """A resolved relative time window [start, end)."""

    direction: str
    quantity: int
    unit: str
    start: date
    end: date


@dataclass(frozen=True)
class OwnerFilter:
    span: Span


@dataclass(frozen=True)
class BoolFilter:
    word: str
    span: Span


@dataclass(frozen=True)
class PicklistFilter:
    entity: str
    field: str
    value: str
    span: Span


@dataclass(frozen=True)
class LocationFilter:
    kind: str  # CITY | STATE | COUNTRY
    text: str
    span: Span


@dataclass(frozen=True)
class RelatedRef:
    kind: str  # ORG | PERSON
    text: str
    span: Span


@dataclass(frozen=True)
class TimeFilter:
    expr: TimeExpr
    span: Span
    date_selector: str | None = None


FilterNode = OwnerFilter | BoolFilter | PicklistFilter | LocationFilter | RelatedRef | TimeFilter


@dataclass(frozen=True)
class SemanticTree:
    entity: str
    object_span: Span
    children: tuple[FilterNode, ...]
    tags: TagSequence

    def span_text(self, span: Span) -> str:
        return detokenize(self.tags.tokens[span.start : span.end])

    def object_text(self) -> str:
        return self.span_text(self.object_span)


def _unit_floor(day: date, unit: str) -> date:
    if unit == "day":
        return day
    if unit == "week":
        return day - timedelta(days=day.weekday())
    if unit == "month":
        return day.replace(day=1)
    if unit == "quarter":
        month = ((day.month - 1) // 3) * 3 + 1
        return day.replace(month=month, day=1)
    if unit == "year":
        return day.replace(month=1, day=1)
    raise TimeParseError(f"unknown unit {unit!r}")


def _unit_add(day: date, unit: str, k: int) -> date:
    if unit == "day":
        return day + timedelta(days=k)
    if unit == "week":
        return day + timedelta(weeks=k)
    if unit in ("month", "quarter"):
        step = 1 if unit == "month" else 3
        total = (day.year * 12 + day.month - 1) + k * step
        return day.replace(year=total // 12, month=total % 12 + 1)
    if unit == "year":
        return day.replace(year=day.year + k)
    raise TimeParseError(f"unknown unit {unit!r}")


def parse_time(tokens: Sequence[str], reference: date) -> TimeExpr:
    """Parse a time phrase into a half-open calendar window.

    Supported: an optional "in the" lead-in, then "last", "next", or
    "this" with an optional count and a unit word, or one of today,
    yesterday, tomorrow. "last n units" means the n whole calendar
    units strictly before the one containing the reference date;
    "next" mirrors it forward. Quarters start in January, April, July,
    and October; weeks start on Monday.
    """
    toks = [t.lower() for t in tokens]
    if toks[:2] == ["in", "the"]:
        toks = toks[2:]
    elif toks[:1] == ["in"] or toks[:1] == ["the"]:
        toks = toks[1:]
    if not toks:
        raise TimeParseError("empty time phrase")
    word = toks[0]
    if word in ("today", "yesterday", "tomorrow"):
        if len(toks) > 1:
            raise TimeParseError(f"unexpected words after {word!r}")
        shift = {"today": 0, "yesterday": -1, "tomorrow": 1}[word]
        start = reference + timedelta(days=shift)
        direction = {"today": "THIS", "yesterday": "LAST", "tomorrow": "NEXT"}[word]
        return TimeExpr(direction=direction, quantity=1, unit="day", start=start, end=start + timedelta(days=1))
    direction = {"last": "LAST", "next": "NEXT", "this": "THIS"}.get(word)
    if direction is None:
        raise TimeParseError(f"unsupported time phrase start {word!r}")
    rest = toks[1:]
    quantity = 1
    if rest and rest[0].isdigit():
        quantity = int(rest[0])
        if quantity < 1:
            raise TimeParseError("time count must be at least 1")
        if direction == "THIS":
            raise TimeParseError("'this' does not take a count")
        rest = rest[1:]
    if len(rest) != 1:
        raise TimeParseError(f"expected a unit word, got {rest!r}")
    unit = _UNIT_ALIASES.get(rest[0])
    if unit is None:
        raise TimeParseError(f"unknown time unit {rest[0]!r}")
    anchor = _unit_floor(reference, unit)
    if direction == "THIS":
        start, end = anchor, _unit_add(anchor, unit, 1)
    elif direction == "LAST":
        start, end = _unit_add(anchor, unit, -quantity), anchor
    else:
        start, end = _unit_add(anchor, unit, 1), _unit_add(anchor, unit, 1 + quantity)
    return TimeExpr(direction=direction, quantity=quantity, unit=unit, start=start, end=end)


def _object_entity(
    span: tuple[int, int], masked: MaskedQuery, ctx: UserContext, fixture: OrgFixture
) -> str | None:
    """Resolve an OBJECT span to an entity api name.

    A pre-tagged span carries the entity directly; otherwise the span
    text must equal a visible entity's display form.
    """
    start, end = span
    for pre in masked.spans:
        if pre.start == start and pre.end == end and pre.kind == "OBJECT_NAME":
            return pre.payload[0]
    text = " ".join(masked.original[start:end]).lower()
    perm = fixture.permission(ctx.user_id)
    for name in sorted(fixture.entities):
        if name not in perm.visible_entities:
            continue
        if text in fixture.entities[name].display_forms:
            return name
    return None


def _pickval_payload(span: tuple[int, int], masked: MaskedQuery) -> tuple[str, str, str] | None:
    for pre in masked.spans:
        if pre.start == span[0] and pre.end == span[1] and pre.kind == "PICKVAL":
            return pre.payload  # (entity, field, value)
    return None


def build_trees(
    candidates: Sequence[TagSequence],
    masked: MaskedQuery,
    ctx: UserContext,
    fixture: OrgFixture,
) -> list[SemanticTree]:
    """Build a tree per candidate labeling, dropping candidates that
    cannot be grounded (unknown object, unparsable time, picklist or
    number spans with no schema backing). Order is preserved."""
    reference = ctx.metadata.reference_date()
    trees: list[SemanticTree] = []
    for cand in candidates:
        spans = concept_spans(cand.labels)
        object_spans = [s for s in spans if s[2] == "OBJECT"]
        if len(object_spans) != 1:
            continue
        entity = _object_entity(object_spans[0][:2], masked, ctx, fixture)
        if entity is None:
            continue
        children: list[FilterNode] = []
        ok = True
        for start, end, kind in spans:
            span = Span(start, end)
            text = " ".join(masked.original[start:end])
            if kind == "OBJECT":
                continue
            if kind == "OWNER":
                children.append(OwnerFilter(span=span))
            elif kind == "BOOLFILTER":
                children.append(BoolFilter(word=text, span=span))
            elif kind == "PICKVAL":
                payload = _pickval_payload((start, end), masked)
                if payload is None:
                    ok = False
                    break
                children.append(PicklistFilter(entity=payload[0], field=payload[1], value=payload[2], span=span))
            elif kind in ("CITY", "STATE", "COUNTRY"):
                children.append(LocationFilter(kind=kind, text=text, span=span))
            elif kind in ("ORG", "PERSON"):
                children.append(RelatedRef(kind=kind, text=text, span=span))
            elif kind == "TIME":
                try:
                    expr = parse_time(masked.original[start:end], reference)
                except TimeParseError:
                    ok = False
                    break
                children.append(TimeFilter(expr=expr, span=span))
            else:
                ok = False
                break
        if not ok:
            continue
        children = _attach_date_selectors(children, fixture.entities[entity].date_lexicon)
        trees.append(
            SemanticTree(
                entity=entity,
                object_span=Span(*object_spans[0][:2]),
                children=tuple(children),
                tags=cand,
            )
        )
    return trees


def _attach_date_selectors(
    children: Sequence[FilterNode], date_lexicon
) -> list[FilterNode]:
    """Fold a boolean-filter word into the time filter it directly
    precedes when the word is one of the entity's date selectors. The
    word then scopes the date window and never doubles as a root
    filter."""
    out = list(children)
    for i, node in enumerate(out):
        if not isinstance(node, TimeFilter) or node.date_selector is not None:
            continue
        for j, prev in enumerate(out):
            if (
                isinstance(prev, BoolFilter)
                and prev.span.end == node.span.start
                and prev.word.lower() in date_lexicon
            ):
                out[i] = replace(node, date_selector=prev.word.lower())
                out[j] = None  # type: ignore[call-overload]
                break
    return [n for n in out if n is not None]
