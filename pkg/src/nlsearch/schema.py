"""Org schema, records, permissions, and fixture loading.

A fixture file is one org's complete snapshot: entity definitions with
concept bindings and per-entity lexicons, records, users, permission
sets, and runtime metadata. Loaded snapshots are immutable; search code
never mutates them.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import date
from typing import Any, Mapping

FIELD_KINDS = ("text", "bool", "date", "number", "picklist", "reference")

ROLES = ("OWNER", "CITY", "STATE", "COUNTRY", "RELATED_ORG", "RELATED_PERSON", "NAME")


class FixtureError(Exception):
    """Raised when a fixture file cannot be parsed or fails integrity checks."""


class UnknownEntityError(KeyError):
    """Raised when a visibility check names an entity the org does not define."""


@dataclass(frozen=True)
class Metadata:
    """Per-org runtime knobs. Every field has a usable default.

    time_reference anchors relative time expressions; when unset, the
    current date is used at resolution time.
    """

    kbest_k: int = 5
    suggestion_limit: int = 8
    interpretation_limit: int = 3
    lowercase_enabled: bool = True
    reorder_noise_p: float = 0.2
    time_reference: date | None = None
    experiment_variant: str | None = None
    max_alternatives: int = 10

    def __post_init__(self) -> None:
        if self.kbest_k < 1:
            raise ValueError("kbest_k must be >= 1")
        if self.suggestion_limit < 0:
            raise ValueError("suggestion_limit must be >= 0")
        if self.interpretation_limit < 1:
            raise ValueError("interpretation_limit must be >= 1")
        if not 0.0 <= self.reorder_noise_p <= 1.0:
            raise ValueError("reorder_noise_p must be in [0, 1]")
        if self.max_alternatives < 1:
            raise ValueError("max_alternatives must be >= 1")

    def reference_date(self) -> date:
        return self.time_reference if self.time_reference is not None else date.today()


@dataclass(frozen=True)
class FieldDef:
    api_name: str
    kind: str
    picklist_values: tuple[str, ...] = ()
    reference_target: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in FIELD_KINDS:
            raise FixtureError(f"field {self.api_name}: unknown kind {self.kind!r}")
        if self.kind == "picklist" and not self.picklist_values:
            raise FixtureError(f"picklist field {self.api_name} has no values")
        if self.kind == "reference" and not self.reference_target:
            raise FixtureError(f"reference field {self.api_name} has no target")


@dataclass(frozen=True)
class EntityDef:
    """One record type: its fields, surface names, and concept hooks.

    display_forms are the words users may type for this entity, ordered
    by suggestion preference (put the preferred plural first). Renames
    are just extra display forms. bindings map concept roles to field
    api names. filter_lexicon maps a filter word to (bool field, value);
    date_lexicon maps a date-selector word to a date field.
    """

    api_name: str
    display_forms: tuple[str, ...]
    fields: tuple[FieldDef, ...]
    bindings: Mapping[str, str] = field(default_factory=dict)
    filter_lexicon: Mapping[str, tuple[str, bool]] = field(default_factory=dict)
    date_lexicon: Mapping[str, str] = field(default_factory=dict)

    def field_def(self, api_name: str) -> FieldDef | None:
        for f in self.fields:
            if f.api_name == api_name:
                return f
        return None


@dataclass(frozen=True)
class Record:
    id: str
    entity: str
    values: Mapping[str, Any]
    modified_at: date


@dataclass(frozen=True)
class Permission:
    """What one user may see. Entities absent from visible_entities are
    hidden outright; hidden_fields hides single (entity, field) pairs on
    otherwise visible entities."""

    user_id: str
    visible_entities: frozenset[str]
    hidden_fields: frozenset[tuple[str, str]] = frozenset()


@dataclass(frozen=True)
class UserContext:
    org_id: str
    user_id: str
    metadata: Metadata


@dataclass(frozen=True)
class OrgFixture:
    org_id: str
    entities: Mapping[str, EntityDef]
    records: tuple[Record, ...]
    users: tuple[str, ...]
    permissions: Mapping[str, Permission]
    metadata: Metadata

    def context(self, user_id: str) -> UserContext:
        if user_id not in self.users:
            raise FixtureError(f"unknown user {user_id!r} in org {self.org_id}")
        return UserContext(org_id=self.org_id, user_id=user_id, metadata=self.metadata)

    def permission(self, user_id: str) -> Permission:
        got = self.permissions.get(user_id)
        if got is not None:
            return got
        return Permission(user_id=user_id, visible_entities=frozenset(self.entities))

    def records_of(self, entity: str) -> tuple[Record, ...]:
        return tuple(r for r in self.records if r.entity == entity)

    def record_by_id(self, record_id: str) -> Record | None:
        cached = self.__dict__.get("_by_id")
        if cached is None:
            cached = {r.id: r for r in self.records}
            self.__dict__["_by_id"] = cached
        return cached.get(record_id)


def concept_visible(fixture: OrgFixture, ctx: UserContext, entity: str, field_name: str | None = None) -> bool:
    """True when the user may see the entity (and the field, if given)."""
    ent = fixture.entities.get(entity)
    if ent is None:
        raise UnknownEntityError(entity)
    perm = fixture.permission(ctx.user_id)
    if entity not in perm.visible_entities:
        return False
    if field_name is None:
        return True
    if ent.field_def(field_name) is None:
        raise UnknownEntityError(f"{entity}.{field_name}")
    return (entity, field_name) not in perm.hidden_fields


def _parse_date(raw: Any, where: str) -> date:
    if not isinstance(raw, str):
        raise FixtureError(f"{where}: expected ISO date string, got {raw!r}")
    try:
        return date.fromisoformat(raw)
    except ValueError as exc:
        raise FixtureError(f"{where}: bad date {raw!r}: {exc}") from exc


def _parse_metadata(raw: Mapping[str, Any]) -> Metadata:
    kwargs: dict[str, Any] = dict(raw)
    if "time_reference" in kwargs and kwargs["time_reference"] is not None:
        kwargs["time_reference"] = _parse_date(kwargs["time_reference"], "metadata.time_reference")
    known = set(Metadata.__dataclass_fields__)
    extra = set(kwargs) - known
    if extra:
        raise FixtureError(f"metadata: unknown keys {sorted(extra)}")
    try:
        return Metadata(**kwargs)
    except (TypeError, ValueError) as exc:
        raise FixtureError(f"metadata: {exc}") from exc


def _parse_entity(raw: Mapping[str, Any]) -> EntityDef:
    name = raw.get("api_name")
    if not name:
        raise FixtureError("entity missing api_name")
    fields = []
    for f in raw.get("fields", ()):
        fields.append(
            FieldDef(
                api_name=f["api_name"],
                kind=f["kind"],
                picklist_values=tuple(f.get("picklist_values", ())),
                reference_target=f.get("target"),
            )
        )
    forms = tuple(str(s).lower() for s in raw.get("display_forms", ()))
    if not forms:
        raise FixtureError(f"entity {name}: display_forms must be non-empty")
    filter_lex = {}
    for word, pair in dict(raw.get("filter_lexicon", {})).items():
        if not (isinstance(pair, (list, tuple)) and len(pair) == 2 and isinstance(pair[1], bool)):
            raise FixtureError(f"entity {name}: filter_lexicon[{word!r}] must be [field, bool]")
        filter_lex[word.lower()] = (pair[0], pair[1])
    date_lex = {w.lower(): f for w, f in dict(raw.get("date_lexicon", {})).items()}
    return EntityDef(
        api_name=name,
        display_forms=forms,
        fields=tuple(fields),
        bindings=dict(raw.get("bindings", {})),
        filter_lexicon=filter_lex,
        date_lexicon=date_lex,
    )


def _check_entity(ent: EntityDef) -> None:
    seen: set[str] = set()
    for f in ent.fields:
        if f.api_name in seen:
            raise FixtureError(f"entity {ent.api_name}: duplicate field {f.api_name}")
        seen.add(f.api_name)
    for role, fname in ent.bindings.items():
        if role not in ROLES:
            raise FixtureError(f"entity {ent.api_name}: unknown binding role {role!r}")
        if ent.field_def(fname) is None:
            raise FixtureError(f"entity {ent.api_name}: binding {role} names missing field {fname!r}")
    for word, (fname, _val) in ent.filter_lexicon.items():
        fdef = ent.field_def(fname)
        if fdef is None or fdef.kind != "bool":
            raise FixtureError(f"entity {ent.api_name}: filter word {word!r} needs a bool field, got {fname!r}")
    for word, fname in ent.date_lexicon.items():
        fdef = ent.field_def(fname)
        if fdef is None or fdef.kind != "date":
            raise FixtureError(f"entity {ent.api_name}: date word {word!r} needs a date field, got {fname!r}")


def _check_record_value(fdef: FieldDef, value: Any, where: str, by_id: dict[str, Record]) -> Any:
    if value is None:
        return None
    if fdef.kind == "text":
        if not isinstance(value, str):
            raise FixtureError(f"{where}: text field wants a string")
        return value
    if fdef.kind == "bool":
        if not isinstance(value, bool):
            raise FixtureError(f"{where}: bool field wants true/false")
        return value
    if fdef.kind == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise FixtureError(f"{where}: number field wants a number")
        return value
    if fdef.kind == "date":
        return _parse_date(value, where)
    if fdef.kind == "picklist":
        if value not in fdef.picklist_values:
            raise FixtureError(f"{where}: {value!r} not in picklist values")
        return value
    if fdef.kind == "reference":
        target = by_id.get(value)
        if target is None:
            raise FixtureError(f"{where}: reference to missing record {value!r}")
        if target.entity != fdef.reference_target:
            raise FixtureError(
                f"{where}: reference {value!r} points at {target.entity}, wants {fdef.reference_target}"
            )
        return value
    raise FixtureError(f"{where}: unhandled kind {fdef.kind}")


def fixture_from_dict(doc: Mapping[str, Any]) -> OrgFixture:
    """Build and integrity-check an org snapshot from parsed JSON."""
    org_id = doc.get("org_id")
    if not org_id:
        raise FixtureError("fixture missing org_id")
    entities: dict[str, EntityDef] = {}
    for raw in doc.get("entities", ()):
        ent = _parse_entity(raw)
        if ent.api_name in entities:
            raise FixtureError(f"duplicate entity {ent.api_name}")
        _check_entity(ent)
        entities[ent.api_name] = ent
    for ent in entities.values():
        for f in ent.fields:
            if f.kind == "reference" and f.reference_target not in entities:
                raise FixtureError(
                    f"entity {ent.api_name}: field {f.api_name} targets unknown entity {f.reference_target!r}"
                )

    raw_records = list(doc.get("records", ()))
    records: list[Record] = []
    for raw in raw_records:
        ent = entities.get(raw.get("entity"))
        if ent is None:
            raise FixtureError(f"record {raw.get('id')!r}: unknown entity {raw.get('entity')!r}")
        records.append(
            Record(
                id=raw["id"],
                entity=ent.api_name,
                values=dict(raw.get("values", {})),
                modified_at=_parse_date(raw.get("modified_at"), f"record {raw['id']}"),
            )
        )
    by_id = {r.id: r for r in records}
    if len(by_id) != len(records):
        raise FixtureError("duplicate record ids")
    checked: list[Record] = []
    for r in records:
        ent = entities[r.entity]
        values = {}
        for fname, value in r.values.items():
            fdef = ent.field_def(fname)
            if fdef is None:
                raise FixtureError(f"record {r.id}: unknown field {fname!r}")
            values[fname] = _check_record_value(fdef, value, f"record {r.id}.{fname}", by_id)
        checked.append(replace(r, values=values))

    users = tuple(doc.get("users", ()))
    if not users:
        raise FixtureError("fixture needs at least one user")
    permissions: dict[str, Permission] = {}
    for raw in doc.get("permissions", ()):
        uid = raw.get("user_id")
        if uid not in users:
            raise FixtureError(f"permission for unknown user {uid!r}")
        visible = frozenset(raw.get("visible_entities", ()))
        for name in visible:
            if name not in entities:
                raise FixtureError(f"permission for {uid}: unknown entity {name!r}")
        hidden = set()
        for pair in raw.get("hidden_fields", ()):
            if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
                raise FixtureError(f"permission for {uid}: hidden_fields entries are [entity, field]")
            ent_name, fname = pair
            ent = entities.get(ent_name)
            if ent is None or ent.field_def(fname) is None:
                raise FixtureError(f"permission for {uid}: unknown field {ent_name}.{fname}")
            if ent_name not in visible:
                raise FixtureError(f"permission for {uid}: field hidden on invisible entity {ent_name}")
            hidden.add((ent_name, fname))
        permissions[uid] = Permission(user_id=uid, visible_entities=visible, hidden_fields=frozenset(hidden))

    metadata = _parse_metadata(doc.get("metadata", {}))
    return OrgFixture(
        org_id=org_id,
        entities=entities,
        records=tuple(checked),
        users=users,
        permissions=permissions,
        metadata=metadata,
    )


def load_fixture(path: str) -> OrgFixture:
    """Load an org fixture from a JSON file.

    Parse errors carry the line number; integrity errors name the record
    or entity at fault.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FixtureError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    except OSError as exc:
        raise FixtureError(f"cannot read fixture {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise FixtureError(f"{path}: fixture root must be an object")
    return fixture_from_dict(doc)
