"""Weighted grammar over query shapes, and synthetic training data.

The grammar is a small PCFG whose terminals are literal tokens or slots
naming a lexicon. Sampling a derivation gives a query skeleton; filling
slots from lexicons gives a labeled token sequence ready for tagger
training. A reorder step adds controlled word-order noise.
"""
from __future__ import annotations

import random
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .iob import is_valid_iob, segment_spans


class GrammarError(Exception):
    """Raised for unparsable grammar files or unusable grammars."""


@dataclass(frozen=True)
class Literal:
    """One or more fixed tokens, all carrying the same tag (O by default)."""

    tokens: tuple[str, ...]
    tag: str = "O"


@dataclass(frozen=True)
class Slot:
    """A placeholder filled from the named lexicon, labeled with tag."""

    lexicon: str
    tag: str


@dataclass(frozen=True)
class NonTerminal:
    name: str


Symbol = Literal | Slot | NonTerminal


@dataclass(frozen=True)
class Rule:
    lhs: str
    rhs: tuple[Symbol, ...]
    weight: float


class Pcfg:
    """A validated grammar with per-head normalized rule weights."""

    def __init__(self, rules: Sequence[Rule], start: str | None = None):
        if not rules:
            raise GrammarError("grammar has no rules")
        self.start = start or rules[0].lhs
        by_lhs: dict[str, list[Rule]] = {}
        for rule in rules:
            if not rule.rhs:
                raise GrammarError(f"{rule.lhs}: empty production")
            if rule.weight <= 0:
                raise GrammarError(f"{rule.lhs}: rule weight must be positive")
            by_lhs.setdefault(rule.lhs, []).append(rule)
        normalized: dict[str, tuple[Rule, ...]] = {}
        for lhs, group in by_lhs.items():
            total = sum(r.weight for r in group)
            normalized[lhs] = tuple(Rule(r.lhs, r.rhs, r.weight / total) for r in group)
        self.rules_by_lhs = normalized
        if self.start not in self.rules_by_lhs:
            raise GrammarError(f"start symbol {self.start!r} has no rules")
        for lhs, group in self.rules_by_lhs.items():
            for rule in group:
                for sym in rule.rhs:
                    if isinstance(sym, NonTerminal) and sym.name not in self.rules_by_lhs:
                        raise GrammarError(f"{lhs}: undefined nonterminal {sym.name!r}")
        self.min_height = self._probe_heights()

    def rules_for(self, lhs: str) -> tuple[Rule, ...]:
        return self.rules_by_lhs[lhs]

    def nonterminals(self) -> tuple[str, ...]:
        return tuple(self.rules_by_lhs)

    def slot_names(self) -> tuple[str, ...]:
        names: list[str] = []
        for group in self.rules_by_lhs.values():
            for rule in group:
                for sym in rule.rhs:
                    if isinstance(sym, Slot) and sym.lexicon not in names:
                        names.append(sym.lexicon)
        return tuple(names)

    def _probe_heights(self) -> dict[str, int]:
        """Minimal derivation-tree height per nonterminal.

        A nonterminal that cannot reach a finite height can never finish
        a derivation, which makes sampling diverge; that is a grammar
        error, not a runtime surprise.
        """
        inf = float("inf")
        height: dict[str, float] = {name: inf for name in self.rules_by_lhs}
        changed = True
        while changed:
            changed = False
            for name, group in self.rules_by_lhs.items():
                for rule in group:
                    parts = [height[s.name] for s in rule.rhs if isinstance(s, NonTerminal)]
                    candidate = 1 + (max(parts) if parts else 0)
                    if candidate < height[name]:
                        height[name] = candidate
                        changed = True
        stuck = sorted(name for name, h in height.items() if h == inf)
        if stuck:
            raise GrammarError(f"no finite derivation for {', '.join(stuck)}")
        return {name: int(h) for name, h in height.items()}

    def _rule_height(self, rule: Rule) -> int:
        parts = [self.min_height[s.name] for s in rule.rhs if isinstance(s, NonTerminal)]
        return 1 + (max(parts) if parts else 0)

    def cheapest_rule(self, lhs: str) -> Rule:
        group = self.rules_for(lhs)
        return min(group, key=self._rule_height)


_SYMBOL_RE = re.compile(
    r'"(?P<lit>[^"]*)"(?::(?P<lit_tag>[A-Z_]+))?'
    r"|\$(?P<slot>[A-Za-z_][A-Za-z0-9_]*)(?::(?P<slot_tag>[A-Z_]+))?"
    r"|(?P<nt>[A-Za-z_][A-Za-z0-9_]*)"
    r"|\[(?P<weight>[0-9.eE+\-]+)\]"
    r"|(?P<bar>\|)"
    r"|(?P<junk>\S)"
)


def _parse_alternative(lhs: str, chunks: list[tuple[str, str]], lineno: int) -> Rule:
    symbols: list[Symbol] = []
    weight = 1.0
    for kind, value in chunks:
        if kind == "weight":
            try:
                weight = float(value)
            except ValueError as exc:
                raise GrammarError(f"line {lineno}: bad weight {value!r}") from exc
        elif kind == "lit":
            text, _, tag = value.partition("\x00")
            tokens = tuple(text.split())
            if not tokens:
                raise GrammarError(f"line {lineno}: empty literal")
            symbols.append(Literal(tokens=tokens, tag=tag or "O"))
        elif kind == "slot":
            name, _, tag = value.partition("\x00")
            if not tag:
                raise GrammarError(f"line {lineno}: slot ${name} needs a :TAG")
            symbols.append(Slot(lexicon=name, tag=tag))
        elif kind == "nt":
            symbols.append(NonTerminal(value))
    if not symbols:
        raise GrammarError(f"line {lineno}: {lhs}: empty production")
    return Rule(lhs=lhs, rhs=tuple(symbols), weight=weight)


def grammar_from_text(text: str) -> Pcfg:
    rules: list[Rule] = []
    start: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip() if not raw.strip().startswith("#") else ""
        if not line:
            continue
        if "->" not in line:
            raise GrammarError(f"line {lineno}: expected 'LHS -> ...'")
        lhs, _, rest = line.partition("->")
        lhs = lhs.strip()
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", lhs):
            raise GrammarError(f"line {lineno}: bad rule head {lhs!r}")
        if start is None:
            start = lhs
        alternatives: list[list[tuple[str, str]]] = [[]]
        for m in _SYMBOL_RE.finditer(rest):
            if m.group("bar"):
                alternatives.append([])
            elif m.group("junk"):
                raise GrammarError(f"line {lineno}: unexpected {m.group('junk')!r}")
            elif m.group("weight") is not None:
                alternatives[-1].append(("weight", m.group("weight")))
            elif m.group("lit") is not None:
                alternatives[-1].append(("lit", m.group("lit") + "\x00" + (m.group("lit_tag") or "")))
            elif m.group("slot") is not None:
                alternatives[-1].append(("slot", m.group("slot") + "\x00" + (m.group("slot_tag") or "")))
            elif m.group("nt") is not None:
                alternatives[-1].append(("nt", m.group("nt")))
        for chunks in alternatives:
            rules.append(_parse_alternative(lhs, chunks, lineno))
    return Pcfg(rules, start=start)


def parse_grammar(path: str) -> Pcfg:
    """Parse a grammar file. One rule per line; alternatives split on |;
    weights in square brackets default to 1 and are normalized per head."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return grammar_from_text(fh.read())
    except OSError as exc:
        raise GrammarError(f"cannot read grammar {path}: {exc}") from exc


@dataclass(frozen=True)
class Lexicon:
    """Weighted surface strings for one slot. Entries are pre-tokenized."""

    name: str
    entries: tuple[tuple[tuple[str, ...], float], ...]

    def total_weight(self) -> float:
        return sum(w for _, w in self.entries)


def lexicon_from_lines(name: str, lines: Iterable[str]) -> Lexicon:
    entries: list[tuple[tuple[str, ...], float]] = []
    for raw in lines:
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        text, _, w = line.partition("\t")
        weight = float(w) if w else 1.0
        if weight <= 0:
            raise GrammarError(f"lexicon {name}: non-positive weight on {text!r}")
        tokens = tuple(text.split())
        if tokens:
            entries.append((tokens, weight))
    if not entries:
        raise GrammarError(f"lexicon {name} is empty")
    return Lexicon(name=name, entries=tuple(entries))


def load_lexicon(path: str) -> Lexicon:
    import os

    name = os.path.splitext(os.path.basename(path))[0]
    with open(path, "r", encoding="utf-8") as fh:
        return lexicon_from_lines(name, fh)


def load_lexicon_dir(path: str) -> dict[str, Lexicon]:
    import os

    out: dict[str, Lexicon] = {}
    for fname in sorted(os.listdir(path)):
        if fname.endswith(".txt"):
            lex = load_lexicon(os.path.join(path, fname))
            out[lex.name] = lex
    if not out:
        raise GrammarError(f"no lexicon files in {path}")
    return out


@dataclass(frozen=True)
class TaggedSample:
    """A token sequence with one label per token."""

    tokens: tuple[str, ...]
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.labels):
            raise ValueError("tokens and labels differ in length")


def sample_skeleton(pcfg: Pcfg, rng: random.Random, max_depth: int = 12) -> tuple[Symbol, ...]:
    """Draw one leftmost derivation; deep recursion is forced to finish.

    Past max_depth the sampler stops rolling and takes the rule with
    the shortest completion, so every call terminates.
    """
    out: list[Symbol] = []

    def expand(name: str, depth: int) -> None:
        group = pcfg.rules_for(name)
        if depth >= max_depth:
            rule = pcfg.cheapest_rule(name)
        else:
            weights = [r.weight for r in group]
            rule = rng.choices(group, weights=weights, k=1)[0]
        for sym in rule.rhs:
            if isinstance(sym, NonTerminal):
                expand(sym.name, depth + 1)
            else:
                out.append(sym)

    expand(pcfg.start, 1)
    return tuple(out)


def fill_slots(
    skeleton: Sequence[Symbol], lexicons: Mapping[str, Lexicon], rng: random.Random
) -> TaggedSample:
    """Replace slots with weighted lexicon draws and emit token labels.

    Multi-token fills are labeled B-X I-X...; adjacent literals with the
    same tag continue one span, which is how multi-word time phrases
    stay a single concept.
    """
    tokens: list[str] = []
    labels: list[str] = []
    prev_literal_tag: str | None = None
    for sym in skeleton:
        if isinstance(sym, NonTerminal):
            raise GrammarError("skeleton still contains a nonterminal")
        if isinstance(sym, Literal):
            for j, tok in enumerate(sym.tokens):
                tokens.append(tok)
                if sym.tag == "O":
                    labels.append("O")
                elif j == 0 and sym.tag != prev_literal_tag:
                    labels.append("B-" + sym.tag)
                else:
                    labels.append("I-" + sym.tag)
            prev_literal_tag = sym.tag if sym.tag != "O" else None
        else:
            lex = lexicons.get(sym.lexicon)
            if lex is None:
                raise GrammarError(f"missing lexicon {sym.lexicon!r}")
            fills = [e for e, _ in lex.entries]
            weights = [w for _, w in lex.entries]
            fill = rng.choices(fills, weights=weights, k=1)[0]
            for j, tok in enumerate(fill):
                tokens.append(tok)
                labels.append(("B-" if j == 0 else "I-") + sym.tag)
            # a same-tag literal right after a slot joins the span, so
            # possessive clitics ride along with the name they mark
            prev_literal_tag = sym.tag
    return TaggedSample(tokens=tuple(tokens), labels=tuple(labels))


def augment_reorder(sample: TaggedSample, p: float, rng: random.Random) -> TaggedSample:
    """With probability p, swap one adjacent pair of whole spans.

    Spans are maximal concept groups or O runs; the OBJECT span never
    moves, so the query's anchor stays put. The label multiset is
    preserved by construction.
    """
    coin = rng.random()
    spans = segment_spans(sample.labels)
    candidates = [
        i
        for i in range(len(spans) - 1)
        if spans[i][2] != "OBJECT" and spans[i + 1][2] != "OBJECT"
    ]
    if coin >= p or not candidates:
        return sample
    pick = rng.choice(candidates)
    a, b = spans[pick], spans[pick + 1]
    tokens = list(sample.tokens)
    labels = list(sample.labels)
    new_tokens = tokens[: a[0]] + tokens[b[0] : b[1]] + tokens[a[0] : a[1]] + tokens[b[1] :]
    new_labels = labels[: a[0]] + labels[b[0] : b[1]] + labels[a[0] : a[1]] + labels[b[1] :]
    return TaggedSample(tokens=tuple(new_tokens), labels=tuple(new_labels))


def generate_dataset(
    pcfg: Pcfg,
    lexicons: Mapping[str, Lexicon],
    n: int,
    noise_p: float = 0.2,
    seed: int = 0,
    max_depth: int = 12,
) -> list[TaggedSample]:
    """n labeled samples, fully determined by the seed."""
    rng = random.Random(seed)
    out: list[TaggedSample] = []
    for _ in range(n):
        skeleton = sample_skeleton(pcfg, rng, max_depth=max_depth)
        sample = fill_slots(skeleton, lexicons, rng)
        sample = augment_reorder(sample, noise_p, rng)
        if not is_valid_iob(sample.labels):
            raise GrammarError(f"generated labels break IOB chaining: {sample.labels}")
        out.append(sample)
    return out


def write_conll(samples: Iterable[TaggedSample], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            for tok, label in zip(sample.tokens, sample.labels):
                fh.write(f"{tok}\t{label}\n")
            fh.write("\n")


def read_conll(path: str) -> list[TaggedSample]:
    samples: list[TaggedSample] = []
    tokens: list[str] = []
    labels: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                if tokens:
                    samples.append(TaggedSample(tuple(tokens), tuple(labels)))
                    tokens, labels = [], []
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise GrammarError(f"{path}:{lineno}: expected 'token<TAB>label'")
            tokens.append(parts[0])
            labels.append(parts[1])
    if tokens:
        samples.append(TaggedSample(tuple(tokens), tuple(labels)))
    return samples
