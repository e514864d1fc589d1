"""Per-user query suggestions from a narrow grammar, built at query time.

The suggestion grammar is compiled against one user's view of one org:
object slots expand to visible entity names (renames included), filter
and date slots to the entity's own lexicon words, picklist slots to
visible picklist values, and record-name slots to names of records the
user owns. Every path therefore names only concepts the user may see
and parses back into a valid interpretation.

The compiled structure is a token-labeled acyclic graph. It answers
prefix completion and also acts as a second, deterministic tagger: a
query that exactly matches a path is tagged by that path with no
ambiguity.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Mapping, Sequence

from .grammar import GrammarError, Literal, NonTerminal, Pcfg, Slot
from .pretag import detokenize, tokenize
from .schema import EntityDef, OrgFixture, UserContext, concept_visible
from .tagger import TagSequence

RESERVED_SLOTS = (
    "OBJECT",
    "OWNER_WORD",
    "BOOLWORD",
    "DATEWORD",
    "PICKVAL",
    "ORG_NAME",
    "PERSON_NAME",
)

OWNED_RECORD_CAP = 50


@dataclass(frozen=True)
class Edge:
    token: str
    label: str
    prob: float
    target: int


@dataclass(frozen=True)
class Suggestion:
    text: str
    score: float
    labels: tuple[str, ...]


class SuggestionDag:
    def __init__(self) -> None:
        self.edges: list[list[Edge]] = [[]]
        self.accepting: set[int] = set()

    @property
    def start(self) -> int:
        return 0

    def new_node(self) -> int:
        self.edges.append([])
        return len(self.edges) - 1

    def add_edge(self, source: int, token: str, label: str, prob: float, target: int) -> None:
        self.edges[source].append(Edge(token=token, label=label, prob=prob, target=target))

    def node_count(self) -> int:
        return len(self.edges)


def _owned_names(
    fixture: OrgFixture, ctx: UserContext, target: str
) -> list[tuple[tuple[str, ...], float]]:
    """Names of up to 50 records of `target` owned by the user, most
    recently modified first. Requires a visible NAME field."""
    ent = fixture.entities[target]
    name_field = ent.bindings.get("NAME")
    owner_field = ent.bindings.get("OWNER")
    if name_field is None or owner_field is None:
        return []
    if not concept_visible(fixture, ctx, target) or not concept_visible(fixture, ctx, target, name_field):
        return []
    owned = [
        r
        for r in fixture.records_of(target)
        if r.values.get(owner_field) == ctx.user_id and r.values.get(name_field)
    ]
    owned.sort(key=lambda r: (-r.modified_at.toordinal(), r.id))
    out = []
    for r in owned[:OWNED_RECORD_CAP]:
        tokens = tokenize(str(r.values[name_field]), lowercase=True)
        if tokens:
            out.append((tokens, 1.0))
    return out


def _dynamic_lexicons(
    entity: EntityDef, ctx: UserContext, fixture: OrgFixture
) -> dict[str, list[tuple[tuple[str, ...], float]]]:
    """Expansions for the reserved slots, scoped to one entity and
    pruned to what the user may see. Display forms are weighted by
    position so the preferred form ranks first."""
    name = entity.api_name
    lex: dict[str, list[tuple[tuple[str, ...], float]]] = {}
    lex["OBJECT"] = [
        (tokenize(form, lowercase=True), 1.0 / (i + 1))
        for i, form in enumerate(entity.display_forms)
    ]
    owner_field = entity.bindings.get("OWNER")
    lex["OWNER_WORD"] = (
        [(("my",), 1.0)]
        if owner_field is not None and concept_visible(fixture, ctx, name, owner_field)
        else []
    )
    lex["BOOLWORD"] = [
        ((word,), 1.0)
        for word, (field, _val) in sorted(entity.filter_lexicon.items())
        if concept_visible(fixture, ctx, name, field)
    ]
    lex["DATEWORD"] = [
        ((word,), 1.0)
        for word, field in sorted(entity.date_lexicon.items())
        if concept_visible(fixture, ctx, name, field)
    ]
    pickvals: list[tuple[tuple[str, ...], float]] = []
    for fdef in entity.fields:
        if fdef.kind == "picklist" and concept_visible(fixture, ctx, name, fdef.api_name):
            for value in fdef.picklist_values:
                toks = tokenize(value, lowercase=True)
                if toks:
                    pickvals.append((toks, 1.0))
    lex["PICKVAL"] = pickvals
    for slot, role in (("ORG_NAME", "RELATED_ORG"), ("PERSON_NAME", "RELATED_PERSON")):
        names: list[tuple[tuple[str, ...], float]] = []
        ref_field = entity.bindings.get(role)
        if ref_field is not None and concept_visible(fixture, ctx, name, ref_field):
            fdef = entity.field_def(ref_field)
            if fdef is not None and fdef.reference_target:
                target = fdef.reference_target
                if concept_visible(fixture, ctx, target):
                    names = _owned_names(fixture, ctx, target)
        lex[slot] = names
    return lex


def build_dag(grammar: Pcfg, ctx: UserContext, fixture: OrgFixture) -> SuggestionDag:
    """Compile the grammar into a token graph for this user and org.

    The grammar is instantiated once per visible entity so that filter
    words, picklist values, and record names always belong to the
    entity being suggested; a path can never mix concepts from two
    record types. Recursive grammars are rejected: suggestion paths
    must be finitely enumerable.
    """
    dag = SuggestionDag()
    perm = fixture.permission(ctx.user_id)
    visible = [name for name in sorted(fixture.entities) if name in perm.visible_entities]
    if not visible:
        return dag
    entity_scale = 1.0 / len(visible)

    def emit_literal(
        sym: Literal, sources: list[tuple[int, str | None]], scale: float
    ) -> list[tuple[int, str | None]]:
        groups: dict[str, list[int]] = {}
        for node, ptag in sources:
            if sym.tag == "O":
                first = "O"
            elif ptag == sym.tag:
                first = "I-" + sym.tag
            else:
                first = "B-" + sym.tag
            groups.setdefault(first, []).append(node)
        ends: list[tuple[int, str | None]] = []
        end_tag = sym.tag if sym.tag != "O" else None
        for first_label, nodes in sorted(groups.items()):
            chain = [dag.new_node() for _ in sym.tokens]
            for node in nodes:
                dag.add_edge(node, sym.tokens[0], first_label, scale, chain[0])
            for j in range(1, len(sym.tokens)):
                label = "O" if sym.tag == "O" else "I-" + sym.tag
                dag.add_edge(chain[j - 1], sym.tokens[j], label, 1.0, chain[j])
            ends.append((chain[-1], end_tag))
        return ends

    def emit_slot(
        sym: Slot,
        sources: list[tuple[int, str | None]],
        scale: float,
        lexicons: Mapping[str, list[tuple[tuple[str, ...], float]]],
    ) -> list[tuple[int, str | None]]:
        if sym.lexicon not in lexicons:
            raise GrammarError(
                f"slot ${sym.lexicon} is not a reserved suggestion slot {RESERVED_SLOTS}"
            )
        entries = lexicons[sym.lexicon]
        if not entries:
            return []
        total = sum(w for _, w in entries)
        nodes = [node for node, _ in sources]
        ends: list[tuple[int, str | None]] = []
        for tokens, weight in entries:
            chain = [dag.new_node() for _ in tokens]
            for node in nodes:
                dag.add_edge(node, tokens[0], "B-" + sym.tag, scale * weight / total, chain[0])
            for j in range(1, len(tokens)):
                dag.add_edge(chain[j - 1], tokens[j], "I-" + sym.tag, 1.0, chain[j])
            # same continuation rule as the training generator: a literal
            # with this tag directly after the slot extends the span
            ends.append((chain[-1], sym.tag))
        return ends

    def emit_nonterminal(
        name: str,
        sources: list[tuple[int, str | None]],
        scale: float,
        lexicons: Mapping[str, list[tuple[tuple[str, ...], float]]],
        stack: tuple[str, ...],
    ) -> list[tuple[int, str | None]]:
        if name in stack:
            raise GrammarError(f"rule {name} is recursive; suggestions need a finite grammar")
        ends: list[tuple[int, str | None]] = []
        for rule in grammar.rules_for(name):
            pairs = sources
            rule_scale = scale * rule.weight
            for j, sym in enumerate(rule.rhs):
                s = rule_scale if j == 0 else 1.0
                if isinstance(sym, Literal):
                    pairs = emit_literal(sym, pairs, s)
                elif isinstance(sym, Slot):
                    pairs = emit_slot(sym, pairs, s, lexicons)
                else:
                    pairs = emit_nonterminal(sym.name, pairs, s, lexicons, stack + (name,))
                if not pairs:
                    break
            ends.extend(pairs)
        return ends

    for entity_name in visible:
        lexicons = _dynamic_lexicons(fixture.entities[entity_name], ctx, fixture)
        finals = emit_nonterminal(grammar.start, [(dag.start, None)], entity_scale, lexicons, ())
        for node, _ in finals:
            dag.accepting.add(node)
    return dag


def _walk_exact(dag: SuggestionDag, tokens: Sequence[str]) -> list[tuple[int, float, tuple[str, ...]]]:
    """All states reachable by consuming the tokens exactly."""
    states: list[tuple[int, float, tuple[str, ...]]] = [(dag.start, 1.0, ())]
    for tok in tokens:
        nxt: list[tuple[int, float, tuple[str, ...]]] = []
        for node, prob, labels in states:
            for edge in dag.edges[node]:
                if edge.token == tok:
                    nxt.append((edge.target, prob * edge.prob, labels + (edge.label,)))
        states = nxt
        if not states:
            break
    return states


def complete(dag: SuggestionDag, prefix: str, k: int) -> list[Suggestion]:
    """Top-k completions of the prefix, best first.

    Matching is token-level; the final token may be a partial word and
    matches case-insensitively as a string prefix. Scores are path
    probabilities; ties order lexicographically by text.
    """
    if k < 1:
        return []
    tokens = list(tokenize(prefix, lowercase=True))
    partial: str | None = None
    if prefix and not prefix[-1].isspace() and tokens:
        partial = tokens[-1]
        tokens = tokens[:-1]
    states = _walk_exact(dag, tokens)
    frontier: list[tuple[float, tuple[str, ...], int, tuple[str, ...]]] = []
    seeds: list[tuple[int, float, tuple[str, ...], tuple[str, ...]]] = []
    if partial is None:
        seeds = [(node, prob, tuple(tokens), labels) for node, prob, labels in states]
    else:
        for node, prob, labels in states:
            for edge in dag.edges[node]:
                if edge.token.startswith(partial):
                    seeds.append(
                        (
                            edge.target,
                            prob * edge.prob,
                            tuple(tokens) + (edge.token,),
                            labels + (edge.label,),
                        )
                    )
    for node, prob, toks, labels in seeds:
        heapq.heappush(frontier, (-prob, toks, node, labels))
    out: list[Suggestion] = []
    seen: set[str] = set()
    while frontier and len(out) < k:
        neg, toks, node, labels = heapq.heappop(frontier)
        if node in dag.accepting:
            text = detokenize(toks)
            if text not in seen:
                seen.add(text)
                out.append(Suggestion(text=text, score=-neg, labels=labels))
            continue
        for edge in dag.edges[node]:
            heapq.heappush(
                frontier,
                (neg * edge.prob, toks + (edge.token,), edge.target, labels + (edge.label,)),
            )
    return out


def grammar_tag(dag: SuggestionDag, query: str) -> TagSequence | None:
    """Tag a query that is exactly one suggestion path; none otherwise.

    When several paths spell the same tokens, the most probable one
    wins (ties to the lexicographically smaller labeling), so the
    result is always a single parse.
    """
    tokens = tokenize(query, lowercase=True)
    if not tokens:
        return None
    matches = [
        (prob, labels)
        for node, prob, labels in _walk_exact(dag, tokens)
        if node in dag.accepting
    ]
    if not matches:
        return None
    matches.sort(key=lambda m: (-m[0], m[1]))
    prob, labels = matches[0]
    return TagSequence(tokens=tuple(tokens), labels=labels, score=prob)
