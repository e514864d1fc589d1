"""Natural-language search over multi-tenant org records.

A query flows through tokenization, schema-aware pre-tagging, masking,
a grammar tagger (exact suggestion matches) or a statistical k-best
tagger, semantic tree construction, permission-aware validation, and
execution of a canonical conjunctive logical form. Suggestions come
from a per-user grammar whose every completion is guaranteed to parse.
"""
from .engine import (
    Annotation,
    Condition,
    Interpretation,
    InterpretResponse,
    LogicalForm,
    PinError,
    RemediationError,
    Resolution,
    Validity,
    execute,
    interpret,
    keyword_search,
    make_logical_form,
    remediate,
    resolve_ref,
    response_to_dict,
    to_logical_form,
    validate,
)
from .evaluation import (
    GsdEntry,
    GsdError,
    ShipDecision,
    compare,
    load_gsd,
    report_to_json,
    run_gsd,
    run_nrd,
)
from .grammar import (
    GrammarError,
    Lexicon,
    Pcfg,
    TaggedSample,
    generate_dataset,
    grammar_from_text,
    load_lexicon_dir,
    parse_grammar,
    read_conll,
    write_conll,
)
from .pretag import MaskedQuery, PreTagSpan, detokenize, mask, pretag_all, tokenize
from .schema import (
    EntityDef,
    FieldDef,
    FixtureError,
    Metadata,
    OrgFixture,
    Permission,
    Record,
    UserContext,
    concept_visible,
    fixture_from_dict,
    load_fixture,
)
from .semtree import SemanticTree, TimeParseError, build_trees, parse_time
from .service import SearchSystem, ServiceState
from .suggest import Suggestion, SuggestionDag, build_dag, complete, grammar_tag
from .tagger import (
    NerModel,
    NonRegressionFailure,
    TagSequence,
    TagSet,
    TrainConfig,
    dataset_scr,
    load_model,
    save_model,
    scr,
    structural_filter,
    train,
    viterbi,
    viterbi_kbest,
)

__version__ = "0.1.0"
