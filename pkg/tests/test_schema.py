"""Fixture loading, integrity checks, metadata, and visibility."""
from __future__ import annotations

import dataclasses
import json
from datetime import date

import pytest

from nlsearch import assets
from nlsearch.schema import (
    FixtureError,
    Metadata,
    UnknownEntityError,
    concept_visible,
    fixture_from_dict,
    load_fixture,
)


def minimal_doc() -> dict:
    """Smallest valid org: one entity, one user, one record."""
    return {
        "org_id": "org_t",
        "entities": [
            {
                "api_name": "Account",
                "display_forms": ["accounts", "account"],
                "fields": [
                    {"api_name": "Name", "kind": "text"},
                    {"api_name": "IsActive", "kind": "bool"},
                    {"api_name": "CreatedDate", "kind": "date"},
                    {"api_name": "Stage", "kind": "picklist", "picklist_values": ["A", "B"]},
                    {"api_name": "OwnerId", "kind": "reference", "target": "User"},
                ],
                "bindings": {"NAME": "Name", "OWNER": "OwnerId"},
                "filter_lexicon": {"active": ["IsActive", True]},
                "date_lexicon": {"created": "CreatedDate"},
            },
            {
                "api_name": "User",
                "display_forms": ["users"],
                "fields": [{"api_name": "Name", "kind": "text"}],
                "bindings": {"NAME": "Name"},
            },
        ],
        "users": ["u_1"],
        "permissions": [],
        "records": [
            {"id": "u_1", "entity": "User", "values": {"Name": "Pat"}, "modified_at": "2021-01-01"},
            {
                "id": "a_1",
                "entity": "Account",
                "values": {"Name": "Acme", "IsActive": True, "OwnerId": "u_1",
                           "CreatedDate": "2020-05-01", "Stage": "A"},
                "modified_at": "2021-01-02",
            },
        ],
        "metadata": {},
    }


class TestMetadata:
    def test_defaults(self):
        md = Metadata()
        assert md.kbest_k == 5
        assert md.suggestion_limit == 8
        assert md.interpretation_limit == 3
        assert md.lowercase_enabled is True
        assert md.reorder_noise_p == 0.2
        assert md.max_alternatives == 10

    def test_zero_suggestions_is_allowed(self):
        assert Metadata(suggestion_limit=0).suggestion_limit == 0

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"kbest_k": 0},
            {"suggestion_limit": -1},
            {"interpretation_limit": 0},
            {"reorder_noise_p": -0.1},
            {"reorder_noise_p": 1.5},
            {"max_alternatives": 0},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            Metadata(**kwargs)

    def test_reference_date_prefers_pinned_value(self):
        md = Metadata(time_reference=date(2021, 2, 15))
        assert md.reference_date() == date(2021, 2, 15)
        assert Metadata().reference_date() == date.today()


def test_demo_fixture_loads(demo_fixture):
    assert demo_fixture.org_id == "org_demo"
    assert set(demo_fixture.entities) == {"Opportunity", "Account", "Contact", "User"}
    assert set(demo_fixture.users) == {"u_alice", "u_bruno", "u_carol", "u_jane", "u_priya"}
    assert len(demo_fixture.records) >= 30
    assert demo_fixture.metadata.time_reference == date(2021, 2, 15)


def test_demo_fixture_reload_is_equal(demo_fixture):
    """Loading is a pure function of the file."""
    again = load_fixture(assets.demo_fixture_path())
    assert again.org_id == demo_fixture.org_id
    assert again.entities == demo_fixture.entities
    assert again.records == demo_fixture.records
    assert again.permissions == demo_fixture.permissions
    assert again.metadata == demo_fixture.metadata


def test_fixture_is_immutable(demo_fixture):
    with pytest.raises(dataclasses.FrozenInstanceError):
        demo_fixture.org_id = "other"
    with pytest.raises(dataclasses.FrozenInstanceError):
        demo_fixture.metadata.kbest_k = 9


def test_minimal_doc_roundtrip():
    fx = fixture_from_dict(minimal_doc())
    assert fx.records_of("Account")[0].values["CreatedDate"] == date(2020, 5, 1)
    assert fx.record_by_id("a_1").values["OwnerId"] == "u_1"
    assert fx.record_by_id("nope") is None


def test_context_rejects_unknown_user():
    fx = fixture_from_dict(minimal_doc())
    with pytest.raises(FixtureError):
        fx.context("u_ghost")


def test_permission_defaults_to_everything_visible():
    fx = fixture_from_dict(minimal_doc())
    perm = fx.permission("u_1")
    assert perm.visible_entities == frozenset({"Account", "User"})
    assert perm.hidden_fields == frozenset()


@pytest.mark.parametrize(
    "mutate, hint",
    [
        (lambda d: d.pop("org_id"), "org_id"),
        (lambda d: d["entities"].append(dict(d["entities"][0])), "duplicate entity"),
        (lambda d: d["entities"][0]["fields"].append({"api_name": "Name", "kind": "text"}),
         "duplicate field"),
        (lambda d: d["entities"][0].update(display_forms=[]), "display_forms"),
        (lambda d: d["entities"][0]["bindings"].update(OWNER="Ghost"), "missing field"),
        (lambda d: d["entities"][0]["bindings"].update(SHINY="Name"), "binding role"),
        (lambda d: d["entities"][0]["filter_lexicon"].update(big=["Name", True]), "bool field"),
        (lambda d: d["entities"][0]["date_lexicon"].update(seen="Name"), "date field"),
        (lambda d: d["entities"][0]["fields"].append(
            {"api_name": "Ref", "kind": "reference", "target": "Ghost"}), "unknown entity"),
        (lambda d: d["records"].append(dict(d["records"][0])), "duplicate record ids"),
        (lambda d: d["records"][1]["values"].update(Stage="Z"), "picklist"),
        (lambda d: d["records"][1]["values"].update(OwnerId="missing"), "missing record"),
        (lambda d: d["records"][1]["values"].update(OwnerId="a_1"), "points at"),
        (lambda d: d["records"][1]["values"].update(IsActive="yes"), "bool field"),
        (lambda d: d["records"][1]["values"].update(Mystery=1), "unknown field"),
        (lambda d: d["records"][1].update(modified_at="not-a-date"), "bad date"),
        (lambda d: d.update(users=[]), "at least one user"),
        (lambda d: d["permissions"].append({"user_id": "u_ghost", "visible_entities": []}),
         "unknown user"),
        (lambda d: d["permissions"].append(
            {"user_id": "u_1", "visible_entities": ["Ghost"]}), "unknown entity"),
        (lambda d: d["permissions"].append(
            {"user_id": "u_1", "visible_entities": ["User"],
             "hidden_fields": [["Account", "Name"]]}), "invisible entity"),
        (lambda d: d["metadata"].update(kbest_k=0), "kbest_k"),
        (lambda d: d["metadata"].update(surprise=1), "unknown keys"),
    ],
)
def test_integrity_violations_are_rejected(mutate, hint):
    doc = minimal_doc()
    mutate(doc)
    with pytest.raises(FixtureError) as err:
        fixture_from_dict(doc)
    assert hint.split()[0].lower() in str(err.value).lower()


def test_load_reports_json_line_numbers(tmp_path):
    bad = tmp_path / "broken.json"
    bad.write_text('{\n "org_id": "x",\n}\n', encoding="utf-8")
    with pytest.raises(FixtureError) as err:
        load_fixture(str(bad))
    assert "broken.json:3" in str(err.value)


def test_load_rejects_non_object_root(tmp_path):
    f = tmp_path / "list.json"
    f.write_text("[]", encoding="utf-8")
    with pytest.raises(FixtureError):
        load_fixture(str(f))


class TestConceptVisible:
    def test_unrestricted_user_sees_all(self, demo_fixture):
        ctx = demo_fixture.context("u_alice")
        assert concept_visible(demo_fixture, ctx, "Account")
        assert concept_visible(demo_fixture, ctx, "Opportunity", "Amount")

    def test_restricted_user(self, demo_fixture):
        ctx = demo_fixture.context("u_priya")
        assert not concept_visible(demo_fixture, ctx, "Account")
        assert concept_visible(demo_fixture, ctx, "Opportunity")
        assert not concept_visible(demo_fixture, ctx, "Opportunity", "Amount")
        assert concept_visible(demo_fixture, ctx, "Opportunity", "Name")

    def test_unknown_names_raise(self, demo_fixture):
        ctx = demo_fixture.context("u_alice")
        with pytest.raises(UnknownEntityError):
            concept_visible(demo_fixture, ctx, "Invoice")
        with pytest.raises(UnknownEntityError):
            concept_visible(demo_fixture, ctx, "Account", "NoSuchField")


def test_records_of_filters_by_entity(demo_fixture):
    opps = demo_fixture.records_of("Opportunity")
    assert opps
    assert all(r.entity == "Opportunity" for r in opps)
    total = sum(len(demo_fixture.records_of(e)) for e in demo_fixture.entities)
    assert total == len(demo_fixture.records)


def test_demo_fixture_json_is_pretty_printed():
    # the file is hand-maintained; keep it diffable
    text = open(assets.demo_fixture_path(), encoding="utf-8").read()
    assert json.loads(text)  # well-formed
    assert text.startswith("{\n")
