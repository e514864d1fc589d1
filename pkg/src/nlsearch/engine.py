"""Query interpretation: semantic trees to logical forms to records.

The flow is tokenize, pre-tag, mask, tag (grammar path first, then the
statistical tagger's k-best), build candidate trees, validate them
against the requesting user's permissions, and execute the best valid
interpretation. Queries that produce no valid interpretation fall back
to a keyword search over record names, and every natural-language
response keeps the keyword fallback one call away.

Logical forms are conjunctive and serialize canonically: conditions
are sorted and deduplicated, so two equal interpretations always print
the same string. Ownership stays symbolic ($me) until execution, which
makes the form cacheable across users.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date
from typing import Any, Mapping, Sequence

from .pretag import MaskedQuery, mask, pretag_all, tokenize
from .schema import (
    EntityDef,
    OrgFixture,
    Record,
    UserContext,
    concept_visible,
)
from .semtree import (
    BoolFilter,
    LocationFilter,
    OwnerFilter,
    PicklistFilter,
    RelatedRef,
    SemanticTree,
    TimeFilter,
    build_trees,
)
from .suggest import SuggestionDag, grammar_tag
from .tagger import (
    NerModel,
    TagSequence,
    rank_candidates,
    structural_filter,
    viterbi_kbest,
)

ME_SENTINEL = "$me"

KEYWORD_RESULT_CAP = 100

# kind strings used on annotations, stable across releases
ANNOT_OBJECT = "object"
ANNOT_OWNER = "owner"
ANNOT_BOOLEAN = "boolean"
ANNOT_PICKLIST = "picklist"
ANNOT_LOCATION = "location"
ANNOT_RELATED_ORG = "related_org"
ANNOT_RELATED_PERSON = "related_person"
ANNOT_TIME = "time"

_REMEDIABLE_KINDS = (ANNOT_RELATED_ORG, ANNOT_RELATED_PERSON)


class PinError(ValueError):
    """A remediation pin names a record that is not a listed candidate."""


class RemediationError(ValueError):
    """The remediation request does not apply to the current interpretation."""


@dataclass(frozen=True)
class Condition:
    field: str
    op: str  # EQ or IN_RANGE
    value: Any

    def serialized_value(self) -> str:
        v = self.value
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, tuple):
            start, end = v
            return f"[{start.isoformat()},{end.isoformat()})"
        if v == ME_SENTINEL:
            return ME_SENTINEL
        text = str(v).replace("\\", "\\\\").replace("'", "\\'")
        return f"'{text}'"

    def serialize(self) -> str:
        return f"{self.field} {self.op} {self.serialized_value()}"


@dataclass(frozen=True)
class LogicalForm:
    entity: str
    conditions: tuple[Condition, ...]

    def serialize(self) -> str:
        if not self.conditions:
            return f"FIND {self.entity}"
        parts = " AND ".join(c.serialize() for c in self.conditions)
        return f"FIND {self.entity} WHERE {parts}"


def make_logical_form(entity: str, conditions: Sequence[Condition]) -> LogicalForm:
    """Canonical order: sort by field, operator, and printed value, and
    drop exact duplicates."""
    uniq: dict[tuple[str, str, str], Condition] = {}
    for c in conditions:
        uniq.setdefault((c.field, c.op, c.serialized_value()), c)
    ordered = tuple(uniq[key] for key in sorted(uniq))
    return LogicalForm(entity=entity, conditions=ordered)


@dataclass(frozen=True)
class Validity:
    ok: bool
    reason: str | None = None
    detail: str | None = None

    @staticmethod
    def valid() -> "Validity":
        return Validity(ok=True)

    @staticmethod
    def invalid(reason: str, detail: str) -> "Validity":
        return Validity(ok=False, reason=reason, detail=detail)


@dataclass(frozen=True)
class Resolution:
    """Ranked record candidates for a name mention."""

    candidates: tuple[tuple[str, str], ...]  # (record id, display name)

    @property
    def chosen(self) -> str | None:
        return self.candidates[0][0] if self.candidates else None


@dataclass(frozen=True)
class Annotation:
    span: tuple[int, int]
    kind: str
    text: str
    explanation: str
    chosen: str | None = None
    alternatives: tuple[tuple[str, str], ...] = ()
    pinned: bool = False


@dataclass(frozen=True)
class Interpretation:
    tree: SemanticTree
    logical_form: LogicalForm
    annotations: tuple[Annotation, ...]
    score: float


@dataclass(frozen=True)
class InterpretResponse:
    query: str
    intent: str  # "NLS" or "KEYWORD"
    interpretations: tuple[Interpretation, ...]
    results: tuple[dict, ...]
    fallback_available: bool
    trace: Mapping[str, Any] = field(default_factory=dict)


# possessive clitic; part of the mention span but never part of a name
_CLITICS = frozenset(("'s", "'"))


def _name_tokens(text: str) -> tuple[str, ...]:
    return tuple(t for t in tokenize(text, lowercase=True) if t not in _CLITICS)


def _owned_ids_and_refs(fixture: OrgFixture, ctx: UserContext) -> tuple[set[str], set[str]]:
    """Record ids owned by the user, and ids referenced from those records."""
    owned: set[str] = set()
    referenced: set[str] = set()
    for ent in fixture.entities.values():
        owner_field = ent.bindings.get("OWNER")
        if owner_field is None:
            continue
        ref_fields = [f.api_name for f in ent.fields if f.kind == "reference"]
        for rec in fixture.records_of(ent.api_name):
            if rec.values.get(owner_field) != ctx.user_id:
                continue
            owned.add(rec.id)
            for rf in ref_fields:
                val = rec.values.get(rf)
                if isinstance(val, str) and val:
                    referenced.add(val)
    return owned, referenced


def _reference_pools(
    fixture: OrgFixture, ctx: UserContext, kind: str, entity: EntityDef | None
) -> list[str]:
    """Entities whose records a name of this kind may denote.

    Scoped to one root entity when given (its own reference bindings),
    otherwise any visible entity's bindings. Targets must be visible
    and have a visible NAME field.
    """
    roles = ("RELATED_ORG",) if kind == "ORG" else ("RELATED_PERSON", "OWNER")
    sources = [entity] if entity is not None else list(fixture.entities.values())
    targets: list[str] = []
    for src in sources:
        if not concept_visible(fixture, ctx, src.api_name):
            continue
        for role in roles:
            fname = src.bindings.get(role)
            if fname is None or not concept_visible(fixture, ctx, src.api_name, fname):
                continue
            fdef = src.field_def(fname)
            if fdef is None or not fdef.reference_target:
                continue
            target = fdef.reference_target
            if target in targets or not concept_visible(fixture, ctx, target):
                continue
            tdef = fixture.entities[target]
            name_field = tdef.bindings.get("NAME")
            if name_field is None or not concept_visible(fixture, ctx, target, name_field):
                continue
            targets.append(target)
    return targets


def resolve_ref(
    text: str,
    kind: str,
    ctx: UserContext,
    fixture: OrgFixture,
    entity: EntityDef | None = None,
) -> Resolution:
    """Rank records whose name contains every word of the mention.

    Records the user owns outrank records referenced from records they
    own, which outrank the rest; ties break by recency then id. `kind`
    is ORG or PERSON; `entity` narrows the search to records reachable
    from that entity's reference fields.
    """
    if kind not in ("ORG", "PERSON"):
        raise ValueError(f"unknown reference kind {kind!r}")
    query_tokens = set(_name_tokens(text))
    if not query_tokens:
        return Resolution(candidates=())
    owned, referenced = _owned_ids_and_refs(fixture, ctx)
    scored: list[tuple[int, int, str, str]] = []
    for target in _reference_pools(fixture, ctx, kind, entity):
        name_field = fixture.entities[target].bindings["NAME"]
        for rec in fixture.records_of(target):
            name = rec.values.get(name_field)
            if not isinstance(name, str) or not name:
                continue
            if not query_tokens <= set(_name_tokens(name)):
                continue
            if rec.id in owned:
                tier = 3
            elif rec.id in referenced:
                tier = 2
            else:
                tier = 1
            scored.append((-tier, -rec.modified_at.toordinal(), rec.id, name))
    scored.sort()
    return Resolution(candidates=tuple((rid, name) for _, _, rid, name in scored))


def _canonical_location(fixture: OrgFixture, entity: EntityDef, fname: str, text: str) -> str:
    """Prefer the casing stored on records over the query's casing."""
    lowered = text.lower()
    for rec in fixture.records_of(entity.api_name):
        val = rec.values.get(fname)
        if isinstance(val, str) and val.lower() == lowered:
            return val
    return text.title()


def _join_field(entity: EntityDef, kind: str, record_entity: str) -> str | None:
    """Reference field on `entity` that points at records of `record_entity`."""
    roles = ("RELATED_ORG",) if kind == "ORG" else ("RELATED_PERSON", "OWNER")
    for role in roles:
        fname = entity.bindings.get(role)
        if fname is None:
            continue
        fdef = entity.field_def(fname)
        if fdef is not None and fdef.reference_target == record_entity:
            return fname
    return None


def _ground(
    tree: SemanticTree,
    ctx: UserContext,
    fixture: OrgFixture,
    pins: Mapping[tuple[str, str], str],
) -> tuple[Validity, Interpretation | None]:
    """Check a tree against schema and permissions and, when it holds,
    produce its logical form and annotations in one pass."""
    entity = fixture.entities.get(tree.entity)
    if entity is None or not concept_visible(fixture, ctx, tree.entity):
        return Validity.invalid("entity_not_visible", tree.entity), None

    def visible(fname: str) -> bool:
        return concept_visible(fixture, ctx, entity.api_name, fname)

    conditions: list[Condition] = []
    annotations: list[Annotation] = [
        Annotation(
            span=(tree.object_span.start, tree.object_span.end),
            kind=ANNOT_OBJECT,
            text=tree.object_text(),
            explanation=f"search {entity.api_name} records",
        )
    ]
    max_alts = ctx.metadata.max_alternatives
    for node in tree.children:
        if isinstance(node, OwnerFilter):
            fname = entity.bindings.get("OWNER")
            if fname is None or not visible(fname):
                return Validity.invalid("owner_unbound", entity.api_name), None
            conditions.append(Condition(field=fname, op="EQ", value=ME_SENTINEL))
            annotations.append(
                Annotation(
                    span=(node.span.start, node.span.end),
                    kind=ANNOT_OWNER,
                    text=tree.span_text(node.span),
                    explanation=f"{fname} is the requesting user",
                )
            )
        elif isinstance(node, BoolFilter):
            bound = entity.filter_lexicon.get(node.word)
            if bound is None:
                return Validity.invalid("unknown_filter_word", node.word), None
            fname, value = bound
            if not visible(fname):
                return Validity.invalid("field_not_visible", f"{entity.api_name}.{fname}"), None
            conditions.append(Condition(field=fname, op="EQ", value=value))
            annotations.append(
                Annotation(
                    span=(node.span.start, node.span.end),
                    kind=ANNOT_BOOLEAN,
                    text=node.word,
                    explanation=f"'{node.word}' means {fname} is {'true' if value else 'false'}",
                )
            )
        elif isinstance(node, PicklistFilter):
            if node.entity != entity.api_name:
                return Validity.invalid(
                    "picklist_entity_mismatch", f"{node.entity} vs {entity.api_name}"
                ), None
            if not visible(node.field):
                return Validity.invalid(
                    "field_not_visible", f"{entity.api_name}.{node.field}"
                ), None
            conditions.append(Condition(field=node.field, op="EQ", value=node.value))
            annotations.append(
                Annotation(
                    span=(node.span.start, node.span.end),
                    kind=ANNOT_PICKLIST,
                    text=tree.span_text(node.span),
                    explanation=f"{node.field} equals '{node.value}'",
                )
            )
        elif isinstance(node, LocationFilter):
            fname = entity.bindings.get(node.kind)
            if fname is None:
                return Validity.invalid(
                    "location_unbound", f"{entity.api_name} has no {node.kind} field"
                ), None
            if not visible(fname):
                return Validity.invalid("field_not_visible", f"{entity.api_name}.{fname}"), None
            canonical = _canonical_location(fixture, entity, fname, node.text)
            conditions.append(Condition(field=fname, op="EQ", value=canonical))
            annotations.append(
                Annotation(
                    span=(node.span.start, node.span.end),
                    kind=ANNOT_LOCATION,
                    text=node.text,
                    explanation=f"{fname} is '{canonical}'",
                )
            )
        elif isinstance(node, RelatedRef):
            resolution = resolve_ref(node.text, node.kind, ctx, fixture, entity=entity)
            if not resolution.candidates:
                return Validity.invalid("unresolved_reference", node.text), None
            pin = pins.get((node.kind, node.text.lower()))
            if pin is not None:
                if pin not in {rid for rid, _ in resolution.candidates}:
                    raise PinError(f"record {pin!r} is not a candidate for {node.text!r}")
                chosen_id = pin
            else:
                chosen_id = resolution.candidates[0][0]
            chosen_rec = fixture.record_by_id(chosen_id)
            fname = _join_field(entity, node.kind, chosen_rec.entity)
            if fname is None or not visible(fname):
                return Validity.invalid(
                    "reference_unbound", f"{entity.api_name} cannot join {chosen_rec.entity}"
                ), None
            conditions.append(Condition(field=fname, op="EQ", value=chosen_id))
            chosen_name = dict(resolution.candidates)[chosen_id]
            annotations.append(
                Annotation(
                    span=(node.span.start, node.span.end),
                    kind=ANNOT_RELATED_ORG if node.kind == "ORG" else ANNOT_RELATED_PERSON,
                    text=node.text,
                    explanation=f"{fname} is {chosen_name} ({chosen_id})",
                    chosen=chosen_id,
                    alternatives=resolution.candidates[:max_alts],
                    pinned=pin is not None,
                )
            )
        elif isinstance(node, TimeFilter):
            if node.date_selector is None:
                return Validity.invalid("time_filter_unbound", tree.span_text(node.span)), None
            fname = entity.date_lexicon.get(node.date_selector)
            if fname is None:
                return Validity.invalid("time_filter_unbound", node.date_selector), None
            if not visible(fname):
                return Validity.invalid("field_not_visible", f"{entity.api_name}.{fname}"), None
            conditions.append(
                Condition(field=fname, op="IN_RANGE", value=(node.expr.start, node.expr.end))
            )
            annotations.append(
                Annotation(
                    span=(node.span.start, node.span.end),
                    kind=ANNOT_TIME,
                    text=tree.span_text(node.span),
                    explanation=(
                        f"{fname} on or after {node.expr.start.isoformat()}"
                        f" and before {node.expr.end.isoformat()}"
                    ),
                )
            )
        else:
            return Validity.invalid("unsupported_node", type(node).__name__), None
    lf = make_logical_form(entity.api_name, conditions)
    root = annotations[0]
    rest = sorted(annotations[1:], key=lambda a: a.span)
    interp = Interpretation(
        tree=tree,
        logical_form=lf,
        annotations=(root, *rest),
        score=tree.tags.score,
    )
    return Validity.valid(), interp


def validate(tree: SemanticTree, ctx: UserContext, fixture: OrgFixture) -> Validity:
    try:
        verdict, _ = _ground(tree, ctx, fixture, pins={})
    except PinError:  # pins are empty; defensive
        raise
    return verdict


def to_logical_form(
    tree: SemanticTree,
    ctx: UserContext,
    fixture: OrgFixture,
    pins: Mapping[tuple[str, str], str] | None = None,
) -> LogicalForm:
    verdict, interp = _ground(tree, ctx, fixture, pins or {})
    if not verdict.ok or interp is None:
        raise ValueError(f"invalid tree: {verdict.reason} ({verdict.detail})")
    return interp.logical_form


def _condition_holds(
    cond: Condition, rec: Record, entity: EntityDef, ctx: UserContext
) -> bool:
    actual = rec.values.get(cond.field)
    if cond.op == "IN_RANGE":
        start, end = cond.value
        return isinstance(actual, date) and start <= actual < end
    expected = ctx.user_id if cond.value == ME_SENTINEL else cond.value
    if isinstance(expected, bool):
        return actual is expected
    if isinstance(expected, str) and isinstance(actual, str):
        fdef = entity.field_def(cond.field)
        if fdef is not None and fdef.kind == "reference":
            return actual == expected
        return actual.lower() == expected.lower()
    return actual == expected


def execute(lf: LogicalForm, ctx: UserContext, fixture: OrgFixture) -> tuple[Record, ...]:
    """Records matching every condition, most recently modified first,
    capped at 100. $me becomes the requesting user here."""
    entity = fixture.entities.get(lf.entity)
    if entity is None or not concept_visible(fixture, ctx, lf.entity):
        return ()
    hits = [
        rec
        for rec in fixture.records_of(lf.entity)
        if all(_condition_holds(c, rec, entity, ctx) for c in lf.conditions)
    ]
    hits.sort(key=lambda r: (-r.modified_at.toordinal(), r.id))
    return tuple(hits[:KEYWORD_RESULT_CAP])


def record_summary(rec: Record, ctx: UserContext, fixture: OrgFixture) -> dict:
    """JSON-safe view of a record with hidden fields stripped."""
    entity = fixture.entities[rec.entity]
    name_field = entity.bindings.get("NAME")
    name = None
    if name_field is not None and concept_visible(fixture, ctx, rec.entity, name_field):
        name = rec.values.get(name_field)
    values = {}
    for fdef in entity.fields:
        if not concept_visible(fixture, ctx, rec.entity, fdef.api_name):
            continue
        val = rec.values.get(fdef.api_name)
        values[fdef.api_name] = val.isoformat() if isinstance(val, date) else val
    return {
        "id": rec.id,
        "entity": rec.entity,
        "name": name,
        "modified_at": rec.modified_at.isoformat(),
        "values": values,
    }


def keyword_search(query: str, ctx: UserContext, fixture: OrgFixture) -> tuple[dict, ...]:
    """Substring match over visible record names, newest first."""
    needle = query.strip().lower()
    if not needle:
        return ()
    hits: list[Record] = []
    for entity in fixture.entities.values():
        if not concept_visible(fixture, ctx, entity.api_name):
            continue
        name_field = entity.bindings.get("NAME")
        if name_field is None or not concept_visible(fixture, ctx, entity.api_name, name_field):
            continue
        for rec in fixture.records_of(entity.api_name):
            name = rec.values.get(name_field)
            if isinstance(name, str) and needle in name.lower():
                hits.append(rec)
    hits.sort(key=lambda r: (-r.modified_at.toordinal(), r.id))
    return tuple(record_summary(r, ctx, fixture) for r in hits[:KEYWORD_RESULT_CAP])


def _keyword_response(
    query: str, ctx: UserContext, fixture: OrgFixture, trace: dict
) -> InterpretResponse:
    return InterpretResponse(
        query=query,
        intent="KEYWORD",
        interpretations=(),
        results=keyword_search(query, ctx, fixture),
        fallback_available=False,
        trace=trace,
    )


def interpret(
    query: str,
    ctx: UserContext,
    fixture: OrgFixture,
    model: NerModel,
    dag: SuggestionDag | None = None,
    pins: Mapping[tuple[str, str], str] | None = None,
    force_keyword: bool = False,
) -> InterpretResponse:
    """Full pipeline for one query.

    The grammar path runs first: a query that exactly matches a
    suggestion is tagged deterministically. Otherwise the statistical
    tagger proposes k-best labelings, structurally filtered and ranked.
    Candidate trees are validated in rank order; the first valid ones
    (up to the interpretation limit) are kept, and records are fetched
    for the best. No valid interpretation means keyword fallback.
    """
    pins = pins or {}
    md = ctx.metadata
    trace: dict[str, Any] = {
        "tagger": None,
        "experiment_variant": md.experiment_variant,
    }
    tokens = tokenize(query, lowercase=md.lowercase_enabled)
    if force_keyword or not tokens:
        trace["forced_keyword"] = bool(force_keyword)
        return _keyword_response(query, ctx, fixture, trace)

    spans = pretag_all(tokens, ctx, fixture)
    masked = mask(tokens, spans)
    trace["masked"] = list(masked.masked)
    trace["pretag_spans"] = [
        {"start": s.start, "end": s.end, "kind": s.kind} for s in spans
    ]

    candidates: list[TagSequence] = []
    if dag is not None:
        tagged = grammar_tag(dag, query)
        if tagged is not None and len(tagged.labels) == len(tokens):
            candidates = structural_filter(
                [TagSequence(tokens=tuple(tokens), labels=tagged.labels, score=tagged.score)]
            )
            if candidates:
                trace["tagger"] = "grammar"

    interpretations: list[Interpretation] = []

    def try_candidates(cands: list[TagSequence]) -> None:
        for tree in build_trees(cands, masked, ctx, fixture):
            verdict, interp = _ground(tree, ctx, fixture, pins)
            if verdict.ok and interp is not None:
                if all(i.logical_form != interp.logical_form for i in interpretations):
                    interpretations.append(interp)
            if len(interpretations) >= md.interpretation_limit:
                return

    try_candidates(candidates)

    if not interpretations:
        kbest = viterbi_kbest(model, masked.masked, md.kbest_k)
        kept = rank_candidates(structural_filter(kbest))
        trace["ner_candidates"] = len(kept)
        expanded = [
            TagSequence(
                tokens=tuple(tokens),
                labels=masked.expand_labels(c.labels),
                score=c.score,
            )
            for c in kept
        ]
        try_candidates(expanded)
        if interpretations:
            trace["tagger"] = "ner"

    if not interpretations:
        trace["tagger"] = None
        return _keyword_response(query, ctx, fixture, trace)

    results = tuple(
        record_summary(r, ctx, fixture)
        for r in execute(interpretations[0].logical_form, ctx, fixture)
    )
    return InterpretResponse(
        query=query,
        intent="NLS",
        interpretations=tuple(interpretations[: md.interpretation_limit]),
        results=results,
        fallback_available=True,
        trace=trace,
    )


def remediate(
    query: str,
    ctx: UserContext,
    fixture: OrgFixture,
    model: NerModel,
    dag: SuggestionDag | None,
    annotation_index: int,
    record_id: str,
) -> InterpretResponse:
    """Re-run a query with one name pinned to a chosen record.

    The annotation must belong to the current top interpretation, be a
    record reference, and list the record among its alternatives. The
    pinned annotation is marked so callers can render the override.
    """
    base = interpret(query, ctx, fixture, model, dag)
    if base.intent != "NLS" or not base.interpretations:
        raise RemediationError("query has no interpretation to remediate")
    top = base.interpretations[0]
    if not 0 <= annotation_index < len(top.annotations):
        raise RemediationError(f"annotation index {annotation_index} out of range")
    ann = top.annotations[annotation_index]
    if ann.kind not in _REMEDIABLE_KINDS:
        raise RemediationError(f"annotation {annotation_index} ({ann.kind}) is not a record reference")
    if record_id not in {rid for rid, _ in ann.alternatives}:
        raise RemediationError(f"record {record_id!r} is not an alternative of {ann.text!r}")
    kind = "ORG" if ann.kind == ANNOT_RELATED_ORG else "PERSON"
    pins = {(kind, ann.text.lower()): record_id}
    return interpret(query, ctx, fixture, model, dag, pins=pins)


def annotation_to_dict(ann: Annotation) -> dict:
    return {
        "span": [ann.span[0], ann.span[1]],
        "kind": ann.kind,
        "text": ann.text,
        "explanation": ann.explanation,
        "chosen": ann.chosen,
        "alternatives": [[rid, name] for rid, name in ann.alternatives],
        "pinned": ann.pinned,
    }


def interpretation_to_dict(interp: Interpretation) -> dict:
    return {
        "entity": interp.tree.entity,
        "logical_form": interp.logical_form.serialize(),
        "tags": list(interp.tree.tags.labels),
        "tokens": list(interp.tree.tags.tokens),
        "score": interp.score,
        "annotations": [annotation_to_dict(a) for a in interp.annotations],
    }


def response_to_dict(resp: InterpretResponse) -> dict:
    return {
        "query": resp.query,
        "intent": resp.intent,
        "interpretations": [interpretation_to_dict(i) for i in resp.interpretations],
        "results": [dict(r) for r in resp.results],
        "fallback_available": resp.fallback_available,
        "trace": dict(resp.trace),
    }
