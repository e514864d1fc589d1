"""Gold-set evaluation and the ship/no-ship comparison gate.

The gold set is a versioned JSON list of queries with expected tags,
logical forms, and intent, each entry labeled with the capabilities it
exercises. Reports are plain dicts rendered to canonical JSON so two
runs over the same inputs are byte-identical and diffable.

The comparison gate is deliberately strict: a candidate model ships
only if overall exact-match accuracy does not drop and no capability
label regresses by more than the tolerance (zero by default).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .pretag import detokenize, mask, pretag_all, tokenize
from .service import SearchSystem
from .tagger import scr, viterbi


class GsdError(ValueError):
    """The gold set file is malformed."""


@dataclass(frozen=True)
class GsdEntry:
    id: str
    gsd_version: str
    query: str
    intent: str
    annotations: tuple[str, ...]
    gold_tags: tuple[str, ...] | None = None
    gold_lf: str | None = None
    user: str | None = None


_REQUIRED_KEYS = ("id", "gsd_version", "query", "intent", "annotations")
_OPTIONAL_KEYS = ("gold_tags", "gold_lf", "user")


def load_gsd(path: str | Path) -> tuple[GsdEntry, ...]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GsdError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, list):
        raise GsdError("gold set must be a JSON array")
    entries: list[GsdEntry] = []
    seen: set[str] = set()
    for i, raw in enumerate(doc):
        where = f"entry {i}"
        if not isinstance(raw, dict):
            raise GsdError(f"{where}: not an object")
        for key in _REQUIRED_KEYS:
            if key not in raw:
                raise GsdError(f"{where}: missing {key!r}")
        unknown = set(raw) - set(_REQUIRED_KEYS) - set(_OPTIONAL_KEYS)
        if unknown:
            raise GsdError(f"{where}: unknown keys {sorted(unknown)}")
        eid = raw["id"]
        if not isinstance(eid, str) or not eid:
            raise GsdError(f"{where}: id must be a non-empty string")
        if eid in seen:
            raise GsdError(f"duplicate gold entry id {eid!r}")
        seen.add(eid)
        intent = raw["intent"]
        if intent not in ("NLS", "KEYWORD"):
            raise GsdError(f"{eid}: intent must be NLS or KEYWORD")
        annotations = raw["annotations"]
        if not isinstance(annotations, list) or not all(
            isinstance(a, str) and a for a in annotations
        ):
            raise GsdError(f"{eid}: annotations must be a list of labels")
        gold_tags = raw.get("gold_tags")
        if gold_tags is not None:
            if not isinstance(gold_tags, list) or not all(isinstance(t, str) for t in gold_tags):
                raise GsdError(f"{eid}: gold_tags must be a list of strings")
            n_tokens = len(tokenize(raw["query"], lowercase=True))
            if len(gold_tags) != n_tokens:
                raise GsdError(
                    f"{eid}: {len(gold_tags)} gold tags for {n_tokens} query tokens"
                )
        gold_lf = raw.get("gold_lf")
        if gold_lf is not None and not isinstance(gold_lf, str):
            raise GsdError(f"{eid}: gold_lf must be a string")
        user = raw.get("user")
        if user is not None and not isinstance(user, str):
            raise GsdError(f"{eid}: user must be a string")
        entries.append(
            GsdEntry(
                id=eid,
                gsd_version=str(raw["gsd_version"]),
                query=raw["query"],
                intent=intent,
                annotations=tuple(annotations),
                gold_tags=tuple(gold_tags) if gold_tags is not None else None,
                gold_lf=gold_lf,
                user=user,
            )
        )
    if not entries:
        raise GsdError("gold set is empty")
    return tuple(entries)


def _predicted_tags(resp) -> tuple[str, ...] | None:
    if resp.intent != "NLS" or not resp.interpretations:
        return None
    return resp.interpretations[0].tree.tags.labels


def run_gsd(
    system: SearchSystem, entries: Sequence[GsdEntry], default_user: str
) -> dict:
    """Evaluate every gold entry and aggregate.

    overall_scr counts an entry only when its full predicted tag
    sequence matches gold exactly. Capability labels aggregate the same
    strict score over the entries that carry them.
    """
    per_label: dict[str, list[float]] = {}
    tag_scores: list[float] = []
    lf_hits: list[float] = []
    intent_hits: list[float] = []
    failures: list[dict] = []
    versions: set[str] = set()
    for entry in entries:
        versions.add(entry.gsd_version)
        user = entry.user or default_user
        resp = system.interpret(entry.query, user)
        intent_ok = resp.intent == entry.intent
        intent_hits.append(1.0 if intent_ok else 0.0)
        if not intent_ok:
            failures.append(
                {
                    "id": entry.id,
                    "kind": "intent",
                    "expected": entry.intent,
                    "actual": resp.intent,
                }
            )
        if entry.gold_tags is not None:
            predicted = _predicted_tags(resp)
            if predicted is not None and len(predicted) == len(entry.gold_tags):
                score = scr(predicted, entry.gold_tags)
            else:
                score = 0.0
            tag_scores.append(score)
            for label in entry.annotations:
                per_label.setdefault(label, []).append(score)
            if score < 1.0:
                failures.append(
                    {
                        "id": entry.id,
                        "kind": "tags",
                        "expected": list(entry.gold_tags),
                        "actual": list(predicted) if predicted is not None else None,
                    }
                )
        if entry.gold_lf is not None:
            actual_lf = (
                resp.interpretations[0].logical_form.serialize()
                if resp.intent == "NLS" and resp.interpretations
                else None
            )
            hit = actual_lf == entry.gold_lf
            lf_hits.append(1.0 if hit else 0.0)
            if not hit:
                failures.append(
                    {
                        "id": entry.id,
                        "kind": "lf",
                        "expected": entry.gold_lf,
                        "actual": actual_lf,
                    }
                )

    def mean(xs: list[float]) -> float:
        return sum(xs) / len(xs) if xs else 0.0

    failures.sort(key=lambda f: (f["id"], f["kind"]))
    return {
        "model_version": system.model.version,
        "gsd_version": sorted(versions),
        "entries": len(entries),
        "scored_entries": len(tag_scores),
        "overall_scr": mean(tag_scores),
        "annotation_scr": {label: mean(v) for label, v in sorted(per_label.items())},
        "annotation_counts": {label: len(v) for label, v in sorted(per_label.items())},
        "lf_match": mean(lf_hits),
        "lf_entries": len(lf_hits),
        "intent_accuracy": mean(intent_hits),
        "failures": failures,
    }


def report_to_json(report: dict) -> str:
    """Canonical rendering: stable key order, fixed layout."""
    return json.dumps(report, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


@dataclass(frozen=True)
class ShipDecision:
    passed: bool
    overall_delta: float
    annotation_deltas: dict[str, float]
    reasons: tuple[str, ...]


def compare(baseline: dict, candidate: dict, tolerance: float = 0.0) -> ShipDecision:
    """Gate a candidate report against a baseline report.

    Fails when overall strict accuracy drops at all, or when any
    capability label present in the baseline drops by more than the
    tolerance (a label missing from the candidate counts as zero).
    """
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")
    if baseline.get("gsd_version") != candidate.get("gsd_version"):
        raise GsdError(
            f"gsd version mismatch: baseline {baseline.get('gsd_version')} "
            f"vs candidate {candidate.get('gsd_version')}"
        )
    reasons: list[str] = []
    overall_delta = candidate.get("overall_scr", 0.0) - baseline.get("overall_scr", 0.0)
    if overall_delta < 0:
        reasons.append(f"overall_scr dropped by {-overall_delta:.4f}")
    deltas: dict[str, float] = {}
    base_ann = baseline.get("annotation_scr", {})
    cand_ann = candidate.get("annotation_scr", {})
    for label in sorted(base_ann):
        delta = cand_ann.get(label, 0.0) - base_ann[label]
        deltas[label] = delta
        if delta < -tolerance:
            reasons.append(f"annotation {label!r} dropped by {-delta:.4f}")
    return ShipDecision(
        passed=not reasons,
        overall_delta=overall_delta,
        annotation_deltas=deltas,
        reasons=tuple(reasons),
    )


def run_nrd(
    system: SearchSystem, samples: Sequence, user_id: str
) -> list[dict]:
    """Re-tag protected queries through the full masking path.

    Unlike the fixture-free gate inside training, this uses the org's
    pre-taggers, so it checks the deployed pipeline end to end. Returns
    one failure dict per query whose tags differ from gold.
    """
    ctx = system.context(user_id)
    failures: list[dict] = []
    for sample in samples:
        text = detokenize(sample.tokens)
        tokens = tokenize(text, lowercase=ctx.metadata.lowercase_enabled)
        if list(tokens) != list(sample.tokens):
            failures.append(
                {
                    "query": text,
                    "problem": "tokenization drift",
                    "expected_tokens": list(sample.tokens),
                    "actual_tokens": list(tokens),
                }
            )
            continue
        spans = pretag_all(tokens, ctx, system.fixture)
        masked = mask(tokens, spans)
        decoded = viterbi(system.model, masked.masked)
        predicted = masked.expand_labels(decoded.labels)
        if list(predicted) != list(sample.labels):
            failures.append(
                {
                    "query": text,
                    "problem": "tag mismatch",
                    "expected": list(sample.labels),
                    "actual": list(predicted),
                }
            )
    return failures
