"""Grounding, logical forms, execution, and the full interpret loop."""
from __future__ import annotations

import json
from datetime import date

import pytest

from nlsearch.engine import (
    ME_SENTINEL,
    Condition,
    LogicalForm,
    PinError,
    RemediationError,
    execute,
    interpret,
    keyword_search,
    make_logical_form,
    record_summary,
    resolve_ref,
    response_to_dict,
    to_logical_form,
    validate,
)
from nlsearch.semtree import (
    BoolFilter,
    LocationFilter,
    OwnerFilter,
    PicklistFilter,
    RelatedRef,
    SemanticTree,
    Span,
    TimeExpr,
    TimeFilter,
)
from nlsearch.tagger import TagSequence

from .oracles import naive_execute

LAST_3_QUARTERS = TimeExpr(
    direction="LAST", quantity=3, unit="quarter",
    start=date(2020, 4, 1), end=date(2021, 1, 1),
)


@pytest.fixture()
def alice(demo_fixture):
    return demo_fixture.context("u_alice")


@pytest.fixture()
def bruno(demo_fixture):
    return demo_fixture.context("u_bruno")


@pytest.fixture()
def priya(demo_fixture):
    return demo_fixture.context("u_priya")


def manual_tree(entity, children, tokens, object_span):
    tags = TagSequence(tokens=tuple(tokens), labels=("O",) * len(tokens), score=1.0)
    return SemanticTree(
        entity=entity,
        object_span=Span(*object_span),
        children=tuple(children),
        tags=tags,
    )


class TestConditionSerialization:
    def test_booleans_print_bare(self):
        assert Condition("IsWon", "EQ", True).serialized_value() == "true"
        assert Condition("IsWon", "EQ", False).serialized_value() == "false"

    def test_date_range_is_half_open_interval(self):
        cond = Condition("CloseDate", "IN_RANGE", (date(2020, 4, 1), date(2021, 1, 1)))
        assert cond.serialized_value() == "[2020-04-01,2021-01-01)"

    def test_me_sentinel_is_unquoted(self):
        assert Condition("OwnerId", "EQ", ME_SENTINEL).serialized_value() == "$me"

    def test_strings_are_quoted(self):
        assert Condition("City", "EQ", "New York").serialized_value() == "'New York'"

    def test_quotes_and_backslashes_escape(self):
        assert Condition("Name", "EQ", "O'Brien").serialized_value() == r"'O\'Brien'"
        assert Condition("Name", "EQ", r"a\b").serialized_value() == r"'a\\b'"

    def test_serialize_joins_field_op_value(self):
        assert Condition("IsWon", "EQ", True).serialize() == "IsWon EQ true"


class TestLogicalForms:
    def test_no_conditions(self):
        assert LogicalForm("Opportunity", ()).serialize() == "FIND Opportunity"

    def test_conditions_sorted_by_field_then_op_then_value(self):
        lf = make_logical_form(
            "Opportunity",
            [
                Condition("OwnerId", "EQ", ME_SENTINEL),
                Condition("IsWon", "EQ", True),
                Condition("CloseDate", "IN_RANGE", (date(2020, 4, 1), date(2021, 1, 1))),
            ],
        )
        assert lf.serialize() == (
            "FIND Opportunity WHERE CloseDate IN_RANGE [2020-04-01,2021-01-01)"
            " AND IsWon EQ true AND OwnerId EQ $me"
        )

    def test_exact_duplicates_dropped(self):
        lf = make_logical_form(
            "Account",
            [Condition("IsActive", "EQ", True), Condition("IsActive", "EQ", True)],
        )
        assert len(lf.conditions) == 1

    def test_same_field_different_values_both_kept(self):
        lf = make_logical_form(
            "Account",
            [Condition("IsActive", "EQ", True), Condition("IsActive", "EQ", False)],
        )
        assert [c.serialized_value() for c in lf.conditions] == ["false", "true"]

    def test_order_of_input_is_irrelevant(self):
        conds = [
            Condition("City", "EQ", "Boston"),
            Condition("OwnerId", "EQ", ME_SENTINEL),
            Condition("IsOpen", "EQ", True),
        ]
        assert make_logical_form("Opportunity", conds) == make_logical_form(
            "Opportunity", list(reversed(conds))
        )


class TestValidate:
    def test_plain_tree_is_valid(self, demo_fixture, alice):
        tree = manual_tree(
            "Opportunity",
            (OwnerFilter(Span(0, 1)), BoolFilter("open", Span(1, 2))),
            ("my", "open", "opportunities"),
            (2, 3),
        )
        verdict = validate(tree, alice, demo_fixture)
        assert verdict.ok and verdict.reason is None

    def test_hidden_entity(self, demo_fixture, alice, priya):
        tree = manual_tree("Account", (), ("accounts",), (0, 1))
        assert validate(tree, alice, demo_fixture).ok
        verdict = validate(tree, priya, demo_fixture)
        assert (verdict.ok, verdict.reason, verdict.detail) == (
            False, "entity_not_visible", "Account",
        )

    def test_owner_word_on_entity_without_owner(self, demo_fixture, alice):
        # User records have no owner field to bind "my" against
        tree = manual_tree("User", (OwnerFilter(Span(0, 1)),), ("my", "users"), (1, 2))
        assert validate(tree, alice, demo_fixture).reason == "owner_unbound"

    def test_filter_word_not_in_entity_lexicon(self, demo_fixture, alice):
        tree = manual_tree(
            "Opportunity",
            (BoolFilter("purple", Span(0, 1)),),
            ("purple", "deals"),
            (1, 2),
        )
        verdict = validate(tree, alice, demo_fixture)
        assert (verdict.reason, verdict.detail) == ("unknown_filter_word", "purple")

    def test_location_on_entity_without_location_fields(self, demo_fixture, alice):
        tree = manual_tree(
            "User",
            (LocationFilter("CITY", "boston", Span(0, 1)),),
            ("boston", "users"),
            (1, 2),
        )
        assert validate(tree, alice, demo_fixture).reason == "location_unbound"

    def test_hidden_field_rejects_filter(self, demo_fixture, priya):
        tree = manual_tree(
            "Opportunity",
            (PicklistFilter("Opportunity", "Amount", "50000", Span(0, 1)),),
            ("big", "deals"),
            (1, 2),
        )
        verdict = validate(tree, priya, demo_fixture)
        assert (verdict.reason, verdict.detail) == (
            "field_not_visible", "Opportunity.Amount",
        )

    def test_picklist_from_another_entity(self, demo_fixture, alice):
        tree = manual_tree(
            "Opportunity",
            (PicklistFilter("Account", "Industry", "Tech", Span(0, 1)),),
            ("tech", "deals"),
            (1, 2),
        )
        assert validate(tree, alice, demo_fixture).reason == "picklist_entity_mismatch"

    def test_name_resolving_to_nothing(self, demo_fixture, alice):
        tree = manual_tree(
            "Opportunity",
            (RelatedRef("ORG", "zzzcorp", Span(0, 1)),),
            ("zzzcorp", "deals"),
            (1, 2),
        )
        verdict = validate(tree, alice, demo_fixture)
        assert (verdict.reason, verdict.detail) == ("unresolved_reference", "zzzcorp")

    def test_time_without_date_selector(self, demo_fixture, alice):
        tree = manual_tree(
            "Opportunity",
            (TimeFilter(LAST_3_QUARTERS, Span(1, 4), date_selector=None),),
            ("deals", "last", "3", "quarters"),
            (0, 1),
        )
        assert validate(tree, alice, demo_fixture).reason == "time_filter_unbound"

    def test_time_with_unknown_selector(self, demo_fixture, alice):
        tree = manual_tree(
            "Opportunity",
            (TimeFilter(LAST_3_QUARTERS, Span(1, 4), date_selector="opened"),),
            ("deals", "last", "3", "quarters"),
            (0, 1),
        )
        verdict = validate(tree, alice, demo_fixture)
        assert (verdict.reason, verdict.detail) == ("time_filter_unbound", "opened")

    def test_foreign_node_type(self, demo_fixture, alice):
        tree = manual_tree("Opportunity", ("bogus",), ("deals",), (0, 1))
        verdict = validate(tree, alice, demo_fixture)
        assert (verdict.reason, verdict.detail) == ("unsupported_node", "str")


class TestResolveRef:
    ACME_ORDER = {
        "u_alice": ["a_acme_ca", "a_acme_nl", "a_acme_gl"],
        "u_bruno": ["a_acme_nl", "a_acme_ca", "a_acme_gl"],
        "u_carol": ["a_acme_gl", "a_acme_ca", "a_acme_nl"],
        "u_jane": ["a_acme_ca", "a_acme_nl", "a_acme_gl"],
    }

    @pytest.mark.parametrize("user_id", sorted(ACME_ORDER))
    def test_ownership_then_recency_ranks_orgs(self, demo_fixture, user_id):
        ctx = demo_fixture.context(user_id)
        res = resolve_ref("acme", "ORG", ctx, demo_fixture)
        assert [rid for rid, _ in res.candidates] == self.ACME_ORDER[user_id]

    def test_candidates_carry_display_names(self, demo_fixture, alice):
        res = resolve_ref("acme", "ORG", alice, demo_fixture)
        assert res.candidates[0] == ("a_acme_ca", "Acme Canada Ltd")
        assert res.chosen == "a_acme_ca"

    def test_every_word_must_match(self, demo_fixture, alice):
        res = resolve_ref("acme canada", "ORG", alice, demo_fixture)
        assert [rid for rid, _ in res.candidates] == ["a_acme_ca"]

    def test_possessive_clitic_ignored(self, demo_fixture, alice):
        assert resolve_ref("acme's", "ORG", alice, demo_fixture) == resolve_ref(
            "acme", "ORG", alice, demo_fixture
        )

    def test_matching_is_case_insensitive(self, demo_fixture, alice):
        assert resolve_ref("ACME", "ORG", alice, demo_fixture) == resolve_ref(
            "acme", "ORG", alice, demo_fixture
        )

    def test_person_matches_contacts(self, demo_fixture, alice):
        res = resolve_ref("maria", "PERSON", alice, demo_fixture)
        assert res.candidates == (("c_maria", "Maria Lopez"),)

    def test_person_matches_users_too(self, demo_fixture, alice):
        res = resolve_ref("bruno", "PERSON", alice, demo_fixture)
        assert ("u_bruno", "Bruno Silva") in res.candidates

    def test_unknown_kind(self, demo_fixture, alice):
        with pytest.raises(ValueError):
            resolve_ref("acme", "CITY", alice, demo_fixture)

    def test_entity_scoping_limits_pools(self, demo_fixture, alice):
        # Account itself has no org reference field, so nothing resolves
        account = demo_fixture.entities["Account"]
        res = resolve_ref("acme", "ORG", alice, demo_fixture, entity=account)
        assert res.candidates == ()
        assert res.chosen is None

    def test_blank_mention(self, demo_fixture, alice):
        assert resolve_ref("", "ORG", alice, demo_fixture).candidates == ()
        assert resolve_ref("'s", "ORG", alice, demo_fixture).candidates == ()


class TestToLogicalForm:
    def test_owner_bool_and_scoped_time(self, demo_fixture, alice):
        tree = manual_tree(
            "Opportunity",
            (
                OwnerFilter(Span(0, 1)),
                BoolFilter("won", Span(1, 2)),
                TimeFilter(LAST_3_QUARTERS, Span(3, 9), date_selector="closed"),
            ),
            ("my", "won", "opportunities", "closed", "in", "the", "last", "3", "quarters"),
            (2, 3),
        )
        lf = to_logical_form(tree, alice, demo_fixture)
        assert lf.serialize() == (
            "FIND Opportunity WHERE CloseDate IN_RANGE [2020-04-01,2021-01-01)"
            " AND IsWon EQ true AND OwnerId EQ $me"
        )

    def test_child_order_never_changes_the_form(self, demo_fixture, alice):
        children = (
            OwnerFilter(Span(0, 1)),
            BoolFilter("won", Span(1, 2)),
            TimeFilter(LAST_3_QUARTERS, Span(3, 9), date_selector="closed"),
        )
        tokens = ("my", "won", "opportunities", "closed", "in", "the", "last", "3", "quarters")
        a = to_logical_form(manual_tree("Opportunity", children, tokens, (2, 3)), alice, demo_fixture)
        b = to_logical_form(
            manual_tree("Opportunity", tuple(reversed(children)), tokens, (2, 3)),
            alice,
            demo_fixture,
        )
        assert a == b

    def test_location_uses_stored_casing(self, demo_fixture, alice):
        tree = manual_tree(
            "Opportunity",
            (LocationFilter("CITY", "new york", Span(1, 3)),),
            ("deals", "new", "york"),
            (0, 1),
        )
        lf = to_logical_form(tree, alice, demo_fixture)
        assert lf.serialize() == "FIND Opportunity WHERE City EQ 'New York'"

    def test_unknown_location_title_cased(self, demo_fixture, alice):
        tree = manual_tree(
            "Opportunity",
            (LocationFilter("CITY", "springfield", Span(1, 2)),),
            ("deals", "springfield"),
            (0, 1),
        )
        lf = to_logical_form(tree, alice, demo_fixture)
        assert lf.serialize() == "FIND Opportunity WHERE City EQ 'Springfield'"

    def test_reference_resolves_to_record_id(self, demo_fixture, alice):
        tree = manual_tree(
            "Opportunity",
            (RelatedRef("ORG", "acme", Span(0, 1)),),
            ("acme", "deals"),
            (1, 2),
        )
        lf = to_logical_form(tree, alice, demo_fixture)
        assert lf.serialize() == "FIND Opportunity WHERE AccountId EQ 'a_acme_ca'"

    def test_pin_overrides_the_default_choice(self, demo_fixture, alice):
        tree = manual_tree(
            "Opportunity",
            (RelatedRef("ORG", "acme", Span(0, 1)),),
            ("acme", "deals"),
            (1, 2),
        )
        lf = to_logical_form(
            tree, alice, demo_fixture, pins={("ORG", "acme"): "a_acme_nl"}
        )
        assert lf.serialize() == "FIND Opportunity WHERE AccountId EQ 'a_acme_nl'"

    def test_invalid_tree_raises(self, demo_fixture, alice):
        tree = manual_tree(
            "Opportunity",
            (BoolFilter("purple", Span(0, 1)),),
            ("purple", "deals"),
            (1, 2),
        )
        with pytest.raises(ValueError, match="unknown_filter_word"):
            to_logical_form(tree, alice, demo_fixture)


def ids(records):
    return [r.id for r in records]


def open_mine():
    return make_logical_form(
        "Opportunity",
        [Condition("IsOpen", "EQ", True), Condition("OwnerId", "EQ", ME_SENTINEL)],
    )


class TestExecute:
    def test_owner_and_flag(self, demo_fixture, alice):
        assert ids(execute(open_mine(), alice, demo_fixture)) == ["o_ny1", "o_ny2", "o_buf"]

    def test_me_follows_the_requesting_user(self, demo_fixture, bruno):
        assert ids(execute(open_mine(), bruno, demo_fixture)) == ["o_nl1", "o_tx1", "o_bos"]

    def test_city_narrows_but_state_keeps_buffalo(self, demo_fixture, alice):
        city = make_logical_form(
            "Opportunity", [*open_mine().conditions, Condition("City", "EQ", "New York")]
        )
        state = make_logical_form(
            "Opportunity", [*open_mine().conditions, Condition("State", "EQ", "New York")]
        )
        assert ids(execute(city, alice, demo_fixture)) == ["o_ny1", "o_ny2"]
        assert ids(execute(state, alice, demo_fixture)) == ["o_ny1", "o_ny2", "o_buf"]

    def test_date_window_with_flag_and_owner(self, demo_fixture, alice):
        lf = make_logical_form(
            "Opportunity",
            [
                Condition("CloseDate", "IN_RANGE", (date(2020, 4, 1), date(2021, 1, 1))),
                Condition("IsWon", "EQ", True),
                Condition("OwnerId", "EQ", ME_SENTINEL),
            ],
        )
        assert ids(execute(lf, alice, demo_fixture)) == ["o_won1", "o_won2"]

    def test_range_start_inclusive_end_exclusive(self, demo_fixture, alice):
        hit = make_logical_form(
            "Opportunity",
            [Condition("CloseDate", "IN_RANGE", (date(2020, 6, 30), date(2020, 7, 1)))],
        )
        miss = make_logical_form(
            "Opportunity",
            [Condition("CloseDate", "IN_RANGE", (date(2020, 6, 1), date(2020, 6, 30)))],
        )
        assert ids(execute(hit, alice, demo_fixture)) == ["o_won1"]
        assert ids(execute(miss, alice, demo_fixture)) == []

    def test_text_comparison_ignores_case(self, demo_fixture, alice):
        lf = make_logical_form("Opportunity", [Condition("City", "EQ", "NEW YORK")])
        assert ids(execute(lf, alice, demo_fixture)) == ["o_ny1", "o_ny2", "o_won3"]

    def test_reference_comparison_is_exact(self, demo_fixture, alice):
        shouting = make_logical_form("Opportunity", [Condition("OwnerId", "EQ", "U_ALICE")])
        exact = make_logical_form("Opportunity", [Condition("OwnerId", "EQ", "u_alice")])
        assert ids(execute(shouting, alice, demo_fixture)) == []
        assert len(execute(exact, alice, demo_fixture)) == 8

    def test_contradiction_matches_nothing(self, demo_fixture, alice):
        lf = make_logical_form(
            "Account",
            [Condition("IsActive", "EQ", True), Condition("IsActive", "EQ", False)],
        )
        assert execute(lf, alice, demo_fixture) == ()

    def test_bare_entity_returns_everything_newest_first(self, demo_fixture, alice):
        hits = execute(LogicalForm("Opportunity", ()), alice, demo_fixture)
        assert len(hits) == 17
        assert hits[0].id == "o_ny1"
        ordins = [(-r.modified_at.toordinal(), r.id) for r in hits]
        assert ordins == sorted(ordins)

    def test_hidden_entity_yields_nothing(self, demo_fixture, priya):
        assert execute(LogicalForm("Account", ()), priya, demo_fixture) == ()

    @pytest.mark.parametrize(
        "entity, conds",
        [
            ("Opportunity", [Condition("IsOpen", "EQ", True), Condition("OwnerId", "EQ", ME_SENTINEL)]),
            ("Opportunity", [Condition("City", "EQ", "New York")]),
            ("Opportunity", [Condition("AccountId", "EQ", "a_globex")]),
            ("Opportunity", [Condition("StageName", "EQ", "Closed - Lost to Competition")]),
            ("Opportunity", [
                Condition("CloseDate", "IN_RANGE", (date(2020, 4, 1), date(2021, 1, 1))),
                Condition("IsWon", "EQ", True),
            ]),
            ("Account", []),
            ("Account", [Condition("IsActive", "EQ", False)]),
            ("Contact", [Condition("City", "EQ", "Toronto")]),
            ("User", [Condition("IsActive", "EQ", False)]),
        ],
    )
    @pytest.mark.parametrize("user_id", ["u_alice", "u_bruno", "u_priya"])
    def test_agrees_with_reference_filter(self, demo_fixture, entity, conds, user_id):
        ctx = demo_fixture.context(user_id)
        lf = make_logical_form(entity, conds)
        assert ids(execute(lf, ctx, demo_fixture)) == naive_execute(lf, ctx, demo_fixture)


class TestRecordSummary:
    def test_full_view(self, demo_fixture, alice):
        rec = demo_fixture.record_by_id("o_ny1")
        out = record_summary(rec, alice, demo_fixture)
        assert out["id"] == "o_ny1"
        assert out["entity"] == "Opportunity"
        assert out["name"] == "Globex Renewal Q1"
        assert out["modified_at"] == "2021-02-14"
        assert out["values"]["Amount"] == 50000
        assert out["values"]["CloseDate"] == "2021-03-31"

    def test_hidden_fields_are_absent_not_null(self, demo_fixture, priya):
        rec = demo_fixture.record_by_id("o_ny1")
        out = record_summary(rec, priya, demo_fixture)
        assert "Amount" not in out["values"]
        assert out["name"] == "Globex Renewal Q1"

    def test_json_safe(self, demo_fixture, alice):
        rec = demo_fixture.record_by_id("o_ny1")
        json.dumps(record_summary(rec, alice, demo_fixture))


class TestKeywordSearch:
    def test_substring_over_names(self, demo_fixture, alice):
        hits = keyword_search("globex renewal", alice, demo_fixture)
        assert [h["id"] for h in hits] == ["o_ny1"]

    def test_all_entities_newest_first(self, demo_fixture, alice):
        hits = keyword_search("acme", alice, demo_fixture)
        assert [h["id"] for h in hits] == [
            "o_won1", "o_won4", "o_nl1", "o_nl2",
            "a_acme_ca", "o_ldn", "a_acme_nl", "a_acme_gl",
        ]

    def test_hidden_entities_never_surface(self, demo_fixture, priya):
        hits = keyword_search("acme", priya, demo_fixture)
        assert [h["id"] for h in hits] == ["o_won1", "o_won4", "o_nl1", "o_nl2", "o_ldn"]
        assert {h["entity"] for h in hits} == {"Opportunity"}

    def test_case_folded(self, demo_fixture, alice):
        assert keyword_search("ACME", alice, demo_fixture) == keyword_search(
            "acme", alice, demo_fixture
        )

    def test_blank_query(self, demo_fixture, alice):
        assert keyword_search("", alice, demo_fixture) == ()
        assert keyword_search("   ", alice, demo_fixture) == ()


class TestInterpret:
    def test_suggestion_match_uses_the_grammar_tagger(self, system):
        resp = system.interpret("my open opportunities", "u_alice")
        assert resp.intent == "NLS"
        assert resp.trace["tagger"] == "grammar"
        top = resp.interpretations[0]
        assert top.logical_form.serialize() == (
            "FIND Opportunity WHERE IsOpen EQ true AND OwnerId EQ $me"
        )
        assert [r["id"] for r in resp.results] == ["o_ny1", "o_ny2", "o_buf"]
        assert resp.fallback_available is True
        assert [a.kind for a in top.annotations] == ["object", "owner", "boolean"]

    def test_ungrammatical_query_falls_to_the_model(self, system):
        resp = system.interpret("my open opportunities in new york", "u_alice")
        assert resp.intent == "NLS"
        assert resp.trace["tagger"] == "ner"
        assert resp.trace["ner_candidates"] >= 1
        top = resp.interpretations[0]
        serialized = top.logical_form.serialize()
        assert "IsOpen EQ true" in serialized
        assert "OwnerId EQ $me" in serialized
        assert "'New York'" in serialized

    def test_org_name_resolves_with_alternatives(self, system):
        resp = system.interpret("acme opportunities", "u_alice")
        top = resp.interpretations[0]
        assert top.logical_form.serialize() == (
            "FIND Opportunity WHERE AccountId EQ 'a_acme_ca'"
        )
        ann = top.annotations[1]
        assert ann.kind == "related_org"
        assert ann.chosen == "a_acme_ca"
        assert ann.pinned is False
        assert ann.alternatives == (
            ("a_acme_ca", "Acme Canada Ltd"),
            ("a_acme_nl", "Acme Netherlands BV"),
            ("a_acme_gl", "Acme Global Holdings"),
        )
        assert ann.explanation == "AccountId is Acme Canada Ltd (a_acme_ca)"
        assert [r["id"] for r in resp.results] == ["o_won1", "o_won4"]

    def test_resolution_depends_on_the_user(self, system):
        resp = system.interpret("acme opportunities", "u_bruno")
        top = resp.interpretations[0]
        assert top.logical_form.serialize() == (
            "FIND Opportunity WHERE AccountId EQ 'a_acme_nl'"
        )
        assert [r["id"] for r in resp.results] == ["o_nl1", "o_nl2"]

    def test_force_keyword(self, system):
        resp = system.interpret("my open opportunities", "u_alice", force_keyword=True)
        assert resp.intent == "KEYWORD"
        assert resp.interpretations == ()
        assert resp.fallback_available is False
        assert resp.trace["forced_keyword"] is True

    def test_unparseable_query_falls_back_to_keyword(self, system):
        resp = system.interpret("yesterday", "u_alice")
        assert resp.intent == "KEYWORD"
        assert resp.trace["tagger"] is None

    def test_gibberish_keyword_fallback_is_empty(self, system):
        resp = system.interpret("zzz qqq xyzzy", "u_alice")
        assert resp.intent == "KEYWORD"
        assert resp.results == ()

    def test_empty_query(self, system):
        resp = system.interpret("", "u_alice")
        assert resp.intent == "KEYWORD"
        assert resp.results == ()

    def test_trace_shows_masking_and_pretags(self, system):
        resp = system.interpret("top 5 deals", "u_alice")
        assert resp.trace["masked"] == ["top", "⟨NUM⟩", "⟨OBJECT⟩"]
        assert {"start": 2, "end": 3, "kind": "OBJECT_NAME"} in resp.trace["pretag_spans"]

    def test_interpretation_count_is_capped(self, system, demo_fixture):
        limit = demo_fixture.metadata.interpretation_limit
        for query in ("my open opportunities in new york", "acme opportunities"):
            resp = system.interpret(query, "u_alice")
            assert len(resp.interpretations) <= limit

    def test_pin_changes_the_grounding(self, demo_fixture, ship_model, alice):
        resp = interpret(
            "acme opportunities",
            alice,
            demo_fixture,
            ship_model,
            pins={("ORG", "acme"): "a_acme_nl"},
        )
        top = resp.interpretations[0]
        assert top.logical_form.serialize() == (
            "FIND Opportunity WHERE AccountId EQ 'a_acme_nl'"
        )
        assert top.annotations[1].pinned is True

    def test_pin_must_name_a_candidate(self, demo_fixture, ship_model, alice):
        with pytest.raises(PinError):
            interpret(
                "acme opportunities",
                alice,
                demo_fixture,
                ship_model,
                pins={("ORG", "acme"): "o_ny1"},
            )


class TestRemediate:
    def test_pinning_an_alternative(self, system):
        resp = system.remediate("acme opportunities", "u_alice", 1, "a_acme_nl")
        assert resp.intent == "NLS"
        top = resp.interpretations[0]
        assert top.logical_form.serialize() == (
            "FIND Opportunity WHERE AccountId EQ 'a_acme_nl'"
        )
        ann = top.annotations[1]
        assert ann.pinned is True
        assert ann.chosen == "a_acme_nl"
        assert [r["id"] for r in resp.results] == ["o_nl1", "o_nl2"]

    def test_keyword_queries_cannot_be_remediated(self, system):
        with pytest.raises(RemediationError):
            system.remediate("zzz qqq", "u_alice", 0, "a_acme_nl")

    def test_index_must_be_in_range(self, system):
        with pytest.raises(RemediationError):
            system.remediate("acme opportunities", "u_alice", 99, "a_acme_nl")

    def test_only_reference_annotations_qualify(self, system):
        # index 0 is the root object annotation
        with pytest.raises(RemediationError):
            system.remediate("acme opportunities", "u_alice", 0, "a_acme_nl")

    def test_record_must_be_listed(self, system):
        with pytest.raises(RemediationError):
            system.remediate("acme opportunities", "u_alice", 1, "a_globex")


class TestWireFormat:
    def test_response_shape(self, system):
        resp = system.interpret("my open opportunities", "u_alice")
        out = response_to_dict(resp)
        assert set(out) == {
            "query", "intent", "interpretations", "results",
            "fallback_available", "trace",
        }
        interp = out["interpretations"][0]
        assert set(interp) == {
            "entity", "logical_form", "tags", "tokens", "score", "annotations",
        }
        ann = interp["annotations"][0]
        assert set(ann) == {
            "span", "kind", "text", "explanation", "chosen", "alternatives", "pinned",
        }
        assert ann["span"] == [2, 3]
        assert interp["tokens"] == ["my", "open", "opportunities"]
        json.dumps(out)

    def test_results_rows_are_summaries(self, system):
        resp = system.interpret("my open opportunities", "u_alice")
        row = response_to_dict(resp)["results"][0]
        assert set(row) == {"id", "entity", "name", "modified_at", "values"}
