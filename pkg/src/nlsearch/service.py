"""A loaded search deployment: one org fixture plus one tagger model.

SearchSystem owns the per-user suggestion graphs (built lazily, since
they depend on permissions and record ownership) and exposes the small
surface the HTTP layer, the CLI, and evaluation all share. ServiceState
adds an atomic swap so a running server can adopt a new model or
fixture between requests without a restart.
"""
from __future__ import annotations

import threading
from typing import Mapping

from .engine import InterpretResponse, interpret, remediate
from .grammar import Pcfg
from .schema import OrgFixture, UserContext
from .suggest import Suggestion, SuggestionDag, build_dag, complete
from .tagger import NerModel

DEFAULT_SUGGESTION_LIMIT = 8


class SearchSystem:
    def __init__(
        self,
        fixture: OrgFixture,
        model: NerModel,
        suggest_grammar: Pcfg | None = None,
    ) -> None:
        self.fixture = fixture
        self.model = model
        self.suggest_grammar = suggest_grammar
        self._dags: dict[str, SuggestionDag] = {}

    def context(self, user_id: str) -> UserContext:
        return self.fixture.context(user_id)

    def dag_for(self, user_id: str) -> SuggestionDag | None:
        if self.suggest_grammar is None:
            return None
        dag = self._dags.get(user_id)
        if dag is None:
            ctx = self.context(user_id)
            dag = build_dag(self.suggest_grammar, ctx, self.fixture)
            self._dags[user_id] = dag
        return dag

    def interpret(
        self,
        query: str,
        user_id: str,
        pins: Mapping[tuple[str, str], str] | None = None,
        force_keyword: bool = False,
    ) -> InterpretResponse:
        ctx = self.context(user_id)
        return interpret(
            query,
            ctx,
            self.fixture,
            self.model,
            dag=self.dag_for(user_id),
            pins=pins,
            force_keyword=force_keyword,
        )

    def suggest(self, prefix: str, user_id: str, k: int | None = None) -> list[Suggestion]:
        dag = self.dag_for(user_id)
        if dag is None:
            return []
        ctx = self.context(user_id)
        limit = k if k is not None else ctx.metadata.suggestion_limit
        return complete(dag, prefix, limit)

    def remediate(
        self, query: str, user_id: str, annotation_index: int, record_id: str
    ) -> InterpretResponse:
        ctx = self.context(user_id)
        return remediate(
            query,
            ctx,
            self.fixture,
            self.model,
            self.dag_for(user_id),
            annotation_index,
            record_id,
        )

    def info(self) -> dict:
        return {
            "org_id": self.fixture.org_id,
            "entities": sorted(self.fixture.entities),
            "users": sorted(self.fixture.users),
            "model_version": self.model.version,
            "model_features": self.model.feature_count(),
            "tag_types": list(self.model.tagset.types),
            "training_report": dict(self.model.training_report),
            "suggestions_enabled": self.suggest_grammar is not None,
        }


class ServiceState:
    """Mutable holder for the live SearchSystem; swap is atomic."""

    def __init__(self, system: SearchSystem) -> None:
        self._lock = threading.Lock()
        self._system = system

    @property
    def system(self) -> SearchSystem:
        with self._lock:
            return self._system

    def swap(self, system: SearchSystem) -> SearchSystem:
        with self._lock:
            old, self._system = self._system, system
        return old
