"""Tokenization, schema-driven pre-tagging, and masking.

Before the statistical tagger sees a query, spans that the org schema
already explains (picklist values, entity display forms) are found
deterministically and replaced with fixed mask tokens, as are raw
numbers and record-id shaped tokens. The tagger is trained on these
mask tokens, so masking doubles as normalization.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .schema import OrgFixture, UserContext, concept_visible

MASK_PICKVAL = "⟨PICKVAL⟩"
MASK_OBJECT = "⟨OBJECT⟩"
MASK_NUM = "⟨NUM⟩"
MASK_ID = "⟨ID⟩"

MASK_TOKENS = (MASK_PICKVAL, MASK_OBJECT, MASK_NUM, MASK_ID)

_TOKEN_RE = re.compile(r"'s\b|[A-Za-z0-9⟨⟩]+|[^\sA-Za-z0-9]")


class SpanOverlapError(ValueError):
    """Raised when mask() is handed overlapping spans."""


def tokenize(query: str, lowercase: bool = True) -> tuple[str, ...]:
    """Split a query into word, possessive, and punctuation tokens.

    "jane's accounts" becomes (jane, 's, accounts); hyphens and other
    punctuation stay as single tokens so multi-word picklist values like
    "Closed - Lost to Competition" survive round trips.
    """
    text = query.lower() if lowercase else query
    return tuple(_TOKEN_RE.findall(text))


@dataclass(frozen=True)
class PreTagSpan:
    """A [start, end) token span explained by the schema.

    kind is PICKVAL or OBJECT_NAME. payload carries what matched:
    PICKVAL -> (entity, field, canonical value); OBJECT_NAME -> entity.
    """

    start: int
    end: int
    kind: str
    payload: tuple[str, ...]


@dataclass(frozen=True)
class MaskedQuery:
    """A query after masking, with enough alignment to undo it."""

    original: tuple[str, ...]
    masked: tuple[str, ...]
    spans: tuple[PreTagSpan, ...]
    alignment: tuple[tuple[int, int], ...]  # per masked token: [start, end) in original

    def span_at(self, masked_index: int) -> PreTagSpan | None:
        start, end = self.alignment[masked_index]
        for span in self.spans:
            if span.start == start and span.end == end:
                return span
        return None

    def expand_labels(self, labels: Sequence[str]) -> tuple[str, ...]:
        """Map masked-space labels back onto the original tokens.

        A span mask labeled B-X fans out to B-X I-X ... across the span
        it replaced; one-to-one positions copy through.
        """
        if len(labels) != len(self.masked):
            raise ValueError("label count does not match masked token count")
        out: list[str] = []
        for label, (start, end) in zip(labels, self.alignment):
            out.append(label)
            for _ in range(end - start - 1):
                out.append("I-" + label[2:] if label.startswith("B-") else label)
        return tuple(out)


def _match_values(
    tokens: Sequence[str], catalog: Iterable[tuple[tuple[str, ...], str, tuple[str, ...]]]
) -> list[PreTagSpan]:
    """Find all occurrences of the catalog's token sequences.

    catalog rows are (value tokens, kind, payload). Overlaps are kept;
    merge_spans resolves them.
    """
    found: list[PreTagSpan] = []
    n = len(tokens)
    for value_tokens, kind, payload in catalog:
        m = len(value_tokens)
        if m == 0 or m > n:
            continue
        for i in range(n - m + 1):
            if tuple(tokens[i : i + m]) == value_tokens:
                found.append(PreTagSpan(start=i, end=i + m, kind=kind, payload=payload))
    return found


def pretag_picklists(tokens: Sequence[str], ctx: UserContext, fixture: OrgFixture) -> list[PreTagSpan]:
    """Mark spans that equal a picklist value visible to this user."""
    catalog = []
    perm = fixture.permission(ctx.user_id)
    for name in sorted(fixture.entities):
        if name not in perm.visible_entities:
            continue
        ent = fixture.entities[name]
        for fdef in ent.fields:
            if fdef.kind != "picklist" or not concept_visible(fixture, ctx, name, fdef.api_name):
                continue
            for value in fdef.picklist_values:
                catalog.append((tokenize(value), "PICKVAL", (name, fdef.api_name, value)))
    return merge_spans(_match_values(tokens, catalog))


def pretag_entity_names(tokens: Sequence[str], ctx: UserContext, fixture: OrgFixture) -> list[PreTagSpan]:
    """Mark spans that equal a visible entity's display form (renames included)."""
    catalog = []
    perm = fixture.permission(ctx.user_id)
    for name in sorted(fixture.entities):
        if name not in perm.visible_entities:
            continue
        for form in fixture.entities[name].display_forms:
            catalog.append((tokenize(form), "OBJECT_NAME", (name,)))
    return merge_spans(_match_values(tokens, catalog))


def merge_spans(spans: Iterable[PreTagSpan]) -> list[PreTagSpan]:
    """Resolve overlaps: longest match wins, then leftmost, then kind order.

    The survivors are mutually disjoint and sorted by start.
    """
    ordered = sorted(spans, key=lambda s: (-(s.end - s.start), s.start, s.kind, s.payload))
    taken: list[PreTagSpan] = []
    occupied: set[int] = set()
    for span in ordered:
        positions = range(span.start, span.end)
        if any(p in occupied for p in positions):
            continue
        taken.append(span)
        occupied.update(positions)
    return sorted(taken, key=lambda s: s.start)


def _mask_token_for(kind: str) -> str:
    return MASK_PICKVAL if kind == "PICKVAL" else MASK_OBJECT


def mask(tokens: Sequence[str], spans: Sequence[PreTagSpan]) -> MaskedQuery:
    """Replace pre-tagged spans and number/id shaped tokens with masks.

    Span masks: PICKVAL and OBJECT_NAME spans collapse to one token.
    Token masks: digit runs become the number mask; 15 to 18 character
    alphanumeric tokens (record-id shaped) become the id mask.
    """
    ordered = sorted(spans, key=lambda s: s.start)
    occupied: set[int] = set()
    for span in ordered:
        for p in range(span.start, span.end):
            if p in occupied:
                raise SpanOverlapError(f"overlapping span at token {p}")
            occupied.add(p)
        if span.end > len(tokens):
            raise ValueError("span exceeds token count")
    masked: list[str] = []
    alignment: list[tuple[int, int]] = []
    starts = {s.start: s for s in ordered}
    i = 0
    n = len(tokens)
    while i < n:
        span = starts.get(i)
        if span is not None:
            masked.append(_mask_token_for(span.kind))
            alignment.append((span.start, span.end))
            i = span.end
            continue
        tok = tokens[i]
        if tok.isdigit():
            masked.append(MASK_NUM)
        elif 15 <= len(tok) <= 18 and tok.isalnum():
            masked.append(MASK_ID)
        else:
            masked.append(tok)
        alignment.append((i, i + 1))
        i += 1
    return MaskedQuery(
        original=tuple(tokens),
        masked=tuple(masked),
        spans=tuple(ordered),
        alignment=tuple(alignment),
    )


def pretag_all(tokens: Sequence[str], ctx: UserContext, fixture: OrgFixture) -> list[PreTagSpan]:
    """Both pre-tagging passes with cross-pass overlaps resolved."""
    return merge_spans(
        list(pretag_picklists(tokens, ctx, fixture)) + list(pretag_entity_names(tokens, ctx, fixture))
    )


def detokenize(tokens: Iterable[str]) -> str:
    """Join tokens into the surface string a user would type."""
    out = " ".join(tokens)
    return out.replace(" 's", "'s")
