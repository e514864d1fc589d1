"""Sequence tagger: sparse features, Viterbi decoding, perceptron training.

The tagger is an averaged structured perceptron over handcrafted
features with a first-order transition matrix. It decodes exactly (both
argmax and k-best), honors hard constraints on mask tokens, and is
trained with early stopping on strict sequence accuracy. A curated set
of must-pass queries gates every training run: if any of them comes out
mistagged, no model is produced.
"""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from importlib.resources import files
from typing import Iterable, Mapping, Sequence

import numpy as np

from .grammar import TaggedSample
from .iob import concept_spans, is_valid_iob
from .pretag import MASK_ID, MASK_NUM, MASK_OBJECT, MASK_PICKVAL, detokenize, tokenize

DEFAULT_TAG_TYPES = (
    "OBJECT",
    "PERSON",
    "ORG",
    "CITY",
    "STATE",
    "COUNTRY",
    "TIME",
    "BOOLFILTER",
    "OWNER",
    "PICKVAL",
    "NUM",
    "IDREF",
)

MODEL_MAGIC = "nls-ner"
MODEL_FORMAT_VERSION = 1

_MASK_FLAGS = {
    MASK_PICKVAL: "PICKVAL",
    MASK_OBJECT: "OBJECT",
    MASK_NUM: "NUM",
    MASK_ID: "ID",
}

_FORCED_LABELS = {MASK_PICKVAL: "B-PICKVAL", MASK_OBJECT: "B-OBJECT"}


class ModelFormatError(Exception):
    """Raised when a model file is corrupt or from an unknown format."""


class NonRegressionFailure(Exception):
    """Raised when a freshly trained model mistags a must-pass query."""

    def __init__(self, failures: list[dict]):
        self.failures = failures
        names = ", ".join(repr(f["query"]) for f in failures)
        super().__init__(f"{len(failures)} must-pass queries mistagged: {names}")


class TagSet:
    """The label space: O plus B-/I- pairs for each entity type."""

    def __init__(self, types: Sequence[str] = DEFAULT_TAG_TYPES):
        self.types = tuple(types)
        labels: list[str] = ["O"]
        for t in self.types:
            labels.append("B-" + t)
            labels.append("I-" + t)
        self.labels = tuple(labels)
        self.index = {label: i for i, label in enumerate(self.labels)}

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TagSet) and self.types == other.types

    def __hash__(self) -> int:
        return hash(self.types)


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 20
    patience: int = 3
    seed: int = 0
    dev_fraction: float = 0.1
    lowercase: bool = True
    shuffle: bool = True


@dataclass(frozen=True)
class TagSequence:
    tokens: tuple[str, ...]
    labels: tuple[str, ...]
    score: float


def token_shape(token: str) -> str:
    return "".join("x" if ch.isalpha() else "9" if ch.isdigit() else ch for ch in token)


def _load_gazetteer(name: str) -> frozenset[str]:
    path = files("nlsearch").joinpath(f"data/gazetteers/{name}.txt")
    words: set[str] = set()
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip().lower()
        if line and not line.startswith("#"):
            words.update(line.split())
    return frozenset(words)


_GAZETTEER_NAMES = ("cities", "states", "countries", "first_names")
_gazetteer_cache: dict[str, frozenset[str]] | None = None


def gazetteers() -> dict[str, frozenset[str]]:
    """Bundled place and first-name word lists used as features."""
    global _gazetteer_cache
    if _gazetteer_cache is None:
        _gazetteer_cache = {name: _load_gazetteer(name) for name in _GAZETTEER_NAMES}
    return _gazetteer_cache


def extract_features(tokens: Sequence[str], i: int) -> list[str]:
    """Deterministic, ordered feature keys for position i."""
    tok = tokens[i]
    n = len(tokens)
    feats: list[str] = [f"w0={tok}"]
    feats.append(f"w-1={tokens[i - 1] if i >= 1 else '<s>'}")
    feats.append(f"w-2={tokens[i - 2] if i >= 2 else '<s>'}")
    feats.append(f"w+1={tokens[i + 1] if i + 1 < n else '</s>'}")
    feats.append(f"w+2={tokens[i + 2] if i + 2 < n else '</s>'}")
    for k in (1, 2, 3):
        if len(tok) >= k:
            feats.append(f"p{k}={tok[:k]}")
            feats.append(f"s{k}={tok[-k:]}")
    feats.append(f"shape={token_shape(tok)}")
    flag = _MASK_FLAGS.get(tok)
    if flag:
        feats.append(f"mask={flag}")
    low = tok.lower()
    for name, words in gazetteers().items():
        if low in words:
            feats.append(f"gaz={name}")
    return list(dict.fromkeys(feats))


def allowed_label_indices(tagset: TagSet, tokens: Sequence[str]) -> list[list[int]]:
    """Per-position candidate labels; mask tokens with a fixed meaning
    are pinned to their single label."""
    every = list(range(len(tagset)))
    out: list[list[int]] = []
    for tok in tokens:
        forced = _FORCED_LABELS.get(tok)
        if forced is not None:
            out.append([tagset.index[forced]])
        else:
            out.append(every)
    return out


class NerModel:
    """Decoding weights plus the metadata needed to reproduce them."""

    def __init__(
        self,
        tagset: TagSet,
        feature_weights: dict[str, np.ndarray],
        transitions: np.ndarray,
        version: str = "0.1.0",
        training_report: dict | None = None,
    ):
        self.tagset = tagset
        self.feature_weights = feature_weights
        self.transitions = transitions  # shape (L+1, L); last row leaves the start state
        self.version = version
        self.training_report = dict(training_report or {})
        if transitions.shape != (len(tagset) + 1, len(tagset)):
            raise ValueError("transition matrix shape does not match tag set")

    @property
    def start_index(self) -> int:
        return len(self.tagset)

    def emissions(self, tokens: Sequence[str]) -> np.ndarray:
        L = len(self.tagset)
        out = np.zeros((len(tokens), L), dtype=np.float64)
        for i in range(len(tokens)):
            row = out[i]
            for f in extract_features(tokens, i):
                w = self.feature_weights.get(f)
                if w is not None:
                    row += w
        return out

    def feature_count(self) -> int:
        return len(self.feature_weights)


def score_sequence(model: NerModel, tokens: Sequence[str], labels: Sequence[str]) -> float:
    """Decoder objective for one labeling: emissions plus transitions,
    including the transition out of the start state."""
    if len(tokens) != len(labels):
        raise ValueError("length mismatch")
    total = 0.0
    prev = model.start_index
    for i, label in enumerate(labels):
        li = model.tagset.index[label]
        emit = 0.0
        for f in extract_features(tokens, i):
            w = model.feature_weights.get(f)
            if w is not None:
                emit += float(w[li])
        total += emit + float(model.transitions[prev, li])
        prev = li
    return total


def viterbi(model: NerModel, tokens: Sequence[str]) -> TagSequence:
    """Exact argmax decode under mask constraints."""
    if not tokens:
        return TagSequence(tokens=(), labels=(), score=0.0)
    L = len(model.tagset)
    em = model.emissions(tokens)
    allowed = allowed_label_indices(model.tagset, tokens)
    neg_inf = -math.inf
    for i, idxs in enumerate(allowed):
        if len(idxs) < L:
            keep = np.full(L, neg_inf)
            keep[idxs] = 0.0
            em[i] = em[i] + keep
    T = model.transitions
    dp = T[model.start_index] + em[0]
    history: list[np.ndarray] = []
    for i in range(1, len(tokens)):
        scores = dp[:, None] + T[:L]
        best_prev = np.argmax(scores, axis=0)
        dp = scores[best_prev, np.arange(L)] + em[i]
        history.append(best_prev)
    last = int(np.argmax(dp))
    path = [last]
    for best_prev in reversed(history):
        path.append(int(best_prev[path[-1]]))
    path.reverse()
    return TagSequence(
        tokens=tuple(tokens),
        labels=tuple(model.tagset.labels[i] for i in path),
        score=float(dp[last]),
    )


def viterbi_kbest(model: NerModel, tokens: Sequence[str], k: int) -> list[TagSequence]:
    """The k best labelings, best first.

    Exact: every cell keeps its k best prefixes, which is sufficient
    because extending two prefixes by the same suffix preserves their
    order. Ties are broken toward the lexicographically smaller label
    sequence. Fewer than k come back only when the constrained label
    space is smaller than k.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not tokens:
        return [TagSequence(tokens=(), labels=(), score=0.0)]
    labels = model.tagset.labels
    em = model.emissions(tokens)
    allowed = allowed_label_indices(model.tagset, tokens)
    T = model.transitions
    start = model.start_index

    def top_k(entries: list[tuple[float, tuple[str, ...]]]) -> list[tuple[float, tuple[str, ...]]]:
        entries.sort(key=lambda e: (-e[0], e[1]))
        return entries[:k]

    cells: dict[int, list[tuple[float, tuple[str, ...]]]] = {}
    for li in allowed[0]:
        s = float(T[start, li] + em[0, li])
        cells.setdefault(li, []).append((s, (labels[li],)))
    for li in cells:
        cells[li] = top_k(cells[li])
    for i in range(1, len(tokens)):
        nxt: dict[int, list[tuple[float, tuple[str, ...]]]] = {}
        for li in allowed[i]:
            merged: list[tuple[float, tuple[str, ...]]] = []
            base = float(em[i, li])
            name = labels[li]
            for pl, entries in cells.items():
                step = float(T[pl, li]) + base
                for s, seq in entries:
                    merged.append((s + step, seq + (name,)))
            if merged:
                nxt[li] = top_k(merged)
        cells = nxt
    final: list[tuple[float, tuple[str, ...]]] = []
    for entries in cells.values():
        final.extend(entries)
    final.sort(key=lambda e: (-e[0], e[1]))
    return [TagSequence(tokens=tuple(tokens), labels=seq, score=s) for s, seq in final[:k]]


def scr(predicted: Sequence[str], gold: Sequence[str]) -> int:
    """Strict sequence accuracy for one query: 1 only if every tag matches."""
    if len(predicted) != len(gold):
        raise ValueError("predicted and gold label counts differ")
    return int(all(p == g for p, g in zip(predicted, gold)))


def dataset_scr(pairs: Iterable[tuple[Sequence[str], Sequence[str]]]) -> float:
    values = [scr(p, g) for p, g in pairs]
    if not values:
        raise ValueError("no pairs to score")
    return sum(values) / len(values)


def structural_filter(candidates: Sequence[TagSequence]) -> list[TagSequence]:
    """Keep only candidates that can shape a well-formed interpretation:
    valid IOB chaining, exactly one OBJECT span, at most one TIME span,
    at most one OWNER span, and no two adjacent spans of the same type
    (TIME excepted)."""
    out: list[TagSequence] = []
    for cand in candidates:
        if not is_valid_iob(cand.labels):
            continue
        spans = concept_spans(cand.labels)
        kinds = [kind for _, _, kind in spans]
        if kinds.count("OBJECT") != 1:
            continue
        if kinds.count("TIME") > 1 or kinds.count("OWNER") > 1:
            continue
        adjacent_dup = any(
            a[1] == b[0] and a[2] == b[2] and a[2] != "TIME"
            for a, b in zip(spans, spans[1:])
        )
        if adjacent_dup:
            continue
        out.append(cand)
    return out


def rank_candidates(candidates: Sequence[TagSequence]) -> list[TagSequence]:
    """Prefer candidates that explain more tokens, then higher score."""

    def non_o(cand: TagSequence) -> int:
        return sum(1 for label in cand.labels if label != "O")

    return sorted(candidates, key=lambda c: (-non_o(c), -c.score))


class _Averaged:
    """Lazily averaged weight store for the perceptron."""

    def __init__(self, n_labels: int, start_index: int):
        self.n_labels = n_labels
        self.w: dict[str, np.ndarray] = {}
        self.w_tot: dict[str, np.ndarray] = {}
        self.w_ts: dict[str, int] = {}
        self.T = np.zeros((start_index + 1, n_labels), dtype=np.float64)
        self.T_tot = np.zeros_like(self.T)
        self.T_ts = 0
        self.step = 0

    def touch_feature(self, f: str) -> np.ndarray:
        w = self.w.get(f)
        if w is None:
            w = np.zeros(self.n_labels, dtype=np.float64)
            self.w[f] = w
            self.w_tot[f] = np.zeros(self.n_labels, dtype=np.float64)
            self.w_ts[f] = self.step
            return w
        elapsed = self.step - self.w_ts[f]
        if elapsed:
            self.w_tot[f] += w * elapsed
            self.w_ts[f] = self.step
        return w

    def touch_transitions(self) -> np.ndarray:
        elapsed = self.step - self.T_ts
        if elapsed:
            self.T_tot += self.T * elapsed
            self.T_ts = self.step
        return self.T

    def snapshot(self) -> tuple[dict[str, np.ndarray], np.ndarray]:
        """Averaged copies without disturbing the running sums."""
        steps = max(self.step, 1)
        feats = {}
        for f, w in self.w.items():
            avg = (self.w_tot[f] + w * (self.step - self.w_ts[f])) / steps
            if np.any(avg):
                feats[f] = avg
        T = (self.T_tot + self.T * (self.step - self.T_ts)) / steps
        return feats, T


def _lowered(sample: TaggedSample) -> TaggedSample:
    return TaggedSample(tokens=tuple(t.lower() for t in sample.tokens), labels=sample.labels)


def _nrd_check(model: NerModel, nrd: Sequence[TaggedSample], lowercase: bool) -> list[dict]:
    """Run every must-pass query through tokenize, schema-free masking,
    and decode; collect mismatches. Number and id masks replace single
    tokens, so predictions align with the raw-token gold labels."""
    failures: list[dict] = []
    for sample in nrd:
        query = detokenize(sample.tokens)
        tokens = tokenize(query, lowercase=lowercase)
        if len(tokens) != len(sample.tokens):
            failures.append(
                {"query": query, "predicted": None, "gold": list(sample.labels), "reason": "tokenization drift"}
            )
            continue
        masked = tuple(
            MASK_NUM if t.isdigit() else MASK_ID if 15 <= len(t) <= 18 and t.isalnum() else t
            for t in tokens
        )
        decoded = viterbi(model, masked)
        if scr(decoded.labels, sample.labels) != 1:
            failures.append(
                {
                    "query": query,
                    "predicted": list(decoded.labels),
                    "gold": list(sample.labels),
                    "reason": "mistagged",
                }
            )
    return failures


def train(
    dataset: Sequence[TaggedSample],
    nrd: Sequence[TaggedSample] | None,
    config: TrainConfig = TrainConfig(),
    tagset: TagSet | None = None,
    version: str = "0.1.0",
) -> NerModel:
    """Train an averaged perceptron tagger.

    A dev slice is carved from the dataset by the seed; training stops
    after `patience` epochs without strict-accuracy improvement and the
    best epoch's averaged weights win. The run fails (no model) if any
    must-pass query is mistagged by the final weights.
    """
    if not dataset:
        raise ValueError("empty training dataset")
    tagset = tagset or TagSet()
    samples = [(_lowered(s) if config.lowercase else s) for s in dataset]
    for s in samples:
        for label in s.labels:
            if label not in tagset.index:
                raise ValueError(f"label {label!r} not in tag set")
    rng = random.Random(config.seed)
    order = list(range(len(samples)))
    rng.shuffle(order)
    dev_n = int(len(samples) * config.dev_fraction)
    dev_idx = order[:dev_n]
    train_idx = order[dev_n:]
    if not train_idx:
        train_idx, dev_idx = order, []

    feats_cache = {
        idx: [extract_features(samples[idx].tokens, i) for i in range(len(samples[idx].tokens))]
        for idx in order
    }
    L = len(tagset)
    store = _Averaged(L, start_index=L)
    gold_idx = {
        idx: [tagset.index[label] for label in samples[idx].labels] for idx in order
    }

    def decode_with(weights: dict[str, np.ndarray], T: np.ndarray, tokens: Sequence[str]) -> TagSequence:
        probe = NerModel(tagset, weights, T, version=version)
        return viterbi(probe, tokens)

    def dev_scr(weights: dict[str, np.ndarray], T: np.ndarray) -> float:
        idxs = dev_idx or train_idx
        pairs = []
        for idx in idxs:
            s = samples[idx]
            pairs.append((decode_with(weights, T, s.tokens).labels, s.labels))
        return dataset_scr(pairs)

    best: tuple[float, int, dict[str, np.ndarray], np.ndarray] | None = None
    stale = 0
    epochs_run = 0
    for epoch in range(1, config.max_epochs + 1):
        epochs_run = epoch
        if config.shuffle:
            rng.shuffle(train_idx)
        for idx in train_idx:
            store.step += 1
            s = samples[idx]
            n = len(s.tokens)
            em = np.zeros((n, L), dtype=np.float64)
            feats = feats_cache[idx]
            for i in range(n):
                row = em[i]
                for f in feats[i]:
                    w = store.w.get(f)
                    if w is not None:
                        row += w
            allowed = allowed_label_indices(tagset, s.tokens)
            for i, idxs in enumerate(allowed):
                if len(idxs) < L:
                    keep = np.full(L, -math.inf)
                    keep[idxs] = 0.0
                    em[i] = em[i] + keep
            T = store.T
            dp = T[L] + em[0]
            history = []
            for i in range(1, n):
                scores = dp[:, None] + T[:L]
                best_prev = np.argmax(scores, axis=0)
                dp = scores[best_prev, np.arange(L)] + em[i]
                history.append(best_prev)
            last = int(np.argmax(dp))
            path = [last]
            for bp in reversed(history):
                path.append(int(bp[path[-1]]))
            path.reverse()
            gold = gold_idx[idx]
            if path != gold:
                for i in range(n):
                    if path[i] != gold[i]:
                        for f in feats[i]:
                            w = store.touch_feature(f)
                            w[gold[i]] += 1.0
                            w[path[i]] -= 1.0
                Tm = store.touch_transitions()
                prev_g = prev_p = L
                for i in range(n):
                    if (prev_g, gold[i]) != (prev_p, path[i]):
                        Tm[prev_g, gold[i]] += 1.0
                        Tm[prev_p, path[i]] -= 1.0
                    prev_g, prev_p = gold[i], path[i]
        weights, T_avg = store.snapshot()
        current = dev_scr(weights, T_avg)
        if best is None or current > best[0]:
            best = (current, epoch, weights, T_avg)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    assert best is not None
    dev_value, best_epoch, weights, T_avg = best
    report = {
        "train_size": len(train_idx),
        "dev_size": len(dev_idx),
        "epochs_run": epochs_run,
        "best_epoch": best_epoch,
        "dev_scr": round(dev_value, 6),
        "lowercase": config.lowercase,
        "seed": config.seed,
    }
    model = NerModel(tagset, weights, T_avg, version=version, training_report=report)
    if nrd:
        failures = _nrd_check(model, nrd, lowercase=config.lowercase)
        if failures:
            raise NonRegressionFailure(failures)
        model.training_report["nrd_size"] = len(nrd)
    return model


def save_model(model: NerModel, path: str) -> None:
    """Serialize to a versioned JSON blob with a magic header."""
    feats = {}
    for f, w in sorted(model.feature_weights.items()):
        row = {model.tagset.labels[i]: float(v) for i, v in enumerate(w) if v != 0.0}
        if row:
            feats[f] = row
    trans = {}
    names = list(model.tagset.labels) + ["<s>"]
    for pi, prev in enumerate(names):
        row = {
            model.tagset.labels[li]: float(v)
            for li, v in enumerate(model.transitions[pi])
            if v != 0.0
        }
        if row:
            trans[prev] = row
    doc = {
        "format": MODEL_MAGIC,
        "format_version": MODEL_FORMAT_VERSION,
        "version": model.version,
        "tag_types": list(model.tagset.types),
        "features": feats,
        "transitions": trans,
        "training_report": model.training_report,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, ensure_ascii=False, sort_keys=True)


def load_model(path: str) -> NerModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"cannot read model {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: not a tagger model file")
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {doc.get('format_version')!r}")
    try:
        tagset = TagSet(tuple(doc["tag_types"]))
        L = len(tagset)
        feats: dict[str, np.ndarray] = {}
        for f, row in doc["features"].items():
            w = np.zeros(L, dtype=np.float64)
            for label, value in row.items():
                w[tagset.index[label]] = float(value)
            feats[f] = w
        T = np.zeros((L + 1, L), dtype=np.float64)
        for prev, row in doc["transitions"].items():
            pi = L if prev == "<s>" else tagset.index[prev]
            for label, value in row.items():
                T[pi, tagset.index[label]] = float(value)
        return NerModel(
            tagset,
            feats,
            T,
            version=str(doc.get("version", "0.0.0")),
            training_report=doc.get("training_report", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: corrupt model file: {exc}") from exc
