"""Command line entry points.

Commands cover the whole lifecycle: generate training data from the
broad grammar, train and gate a tagger, evaluate against the gold set,
compare two evaluation reports, and run one-off tagging, suggestion,
or a full HTTP server. Exit codes: 0 success, 1 gate or comparison
failure, 2 a trained model was rejected by the protected-query gate.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import assets
from .engine import response_to_dict
from .evaluation import compare as compare_reports
from .evaluation import load_gsd, report_to_json, run_gsd
from .grammar import (
    generate_dataset,
    load_lexicon_dir,
    parse_grammar,
    read_conll,
    write_conll,
)
from .schema import load_fixture
from .service import SearchSystem, ServiceState
from .tagger import (
    NonRegressionFailure,
    TrainConfig,
    load_model,
    save_model,
    train,
)


@click.group()
def main() -> None:
    """Natural-language search over org records."""


@main.command("gen-data")
@click.option("--grammar", "grammar_path", type=click.Path(exists=True), default=None,
              help="Training grammar file; defaults to the packaged one.")
@click.option("--lexicons", "lexicon_path", type=click.Path(exists=True), default=None,
              help="Directory of lexicon .txt files; defaults to the packaged set.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("-n", "count", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--noise", type=float, default=0.2, show_default=True,
              help="Probability of one adjacent-segment swap per sample.")
def gen_data(grammar_path: str | None, lexicon_path: str | None, out_path: str,
             count: int, seed: int, noise: float) -> None:
    """Sample a labeled training set from the broad grammar."""
    grammar = parse_grammar(grammar_path or assets.training_grammar_path())
    lexicons = load_lexicon_dir(lexicon_path or assets.lexicon_dir())
    samples = generate_dataset(grammar, lexicons, count, noise_p=noise, seed=seed)
    write_conll(samples, out_path)
    click.echo(f"wrote {len(samples)} samples to {out_path}")


@main.command("train")
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--nrd", "nrd_file", type=click.Path(exists=True), default=None,
              help="Protected queries the model must tag perfectly; defaults to the packaged set.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--epochs", type=int, default=20, show_default=True)
@click.option("--patience", type=int, default=3, show_default=True)
@click.option("--dev-fraction", type=float, default=0.1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--cased", is_flag=True, default=False,
              help="Keep token case instead of lowercasing.")
def train_cmd(data_path: str, nrd_file: str | None, out_path: str, epochs: int,
              patience: int, dev_fraction: float, seed: int, cased: bool) -> None:
    """Train a tagger and refuse to save one that regresses."""
    dataset = read_conll(data_path)
    nrd = read_conll(nrd_file or assets.nrd_path())
    config = TrainConfig(
        max_epochs=epochs,
        patience=patience,
        seed=seed,
        dev_fraction=dev_fraction,
        lowercase=not cased,
    )
    try:
        model = train(dataset, nrd, config)
    except NonRegressionFailure as exc:
        click.echo("model rejected: protected queries mis-tagged", err=True)
        for failure in exc.failures:
            click.echo(json.dumps(failure, ensure_ascii=False), err=True)
        sys.exit(2)
    save_model(model, out_path)
    click.echo(json.dumps(model.training_report, sort_keys=True))
    click.echo(f"saved model to {out_path}")


@main.command("eval-gsd")
@click.option("--fixture", "fixture_path", type=click.Path(exists=True), default=None)
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--gsd", "gsd_file", type=click.Path(exists=True), default=None)
@click.option("--suggest-grammar", "sg_path", type=click.Path(exists=True), default=None)
@click.option("--user", "user_id", required=True)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the JSON report here as well as stdout.")
def eval_gsd(fixture_path: str | None, model_path: str, gsd_file: str | None,
             sg_path: str | None, user_id: str, out_path: str | None) -> None:
    """Score the model against the gold set."""
    fixture = load_fixture(fixture_path or assets.demo_fixture_path())
    model = load_model(model_path)
    grammar = parse_grammar(sg_path or assets.suggest_grammar_path())
    system = SearchSystem(fixture, model, grammar)
    entries = load_gsd(gsd_file or assets.gsd_path())
    report = run_gsd(system, entries, default_user=user_id)
    rendered = report_to_json(report)
    if out_path:
        Path(out_path).write_text(rendered, encoding="utf-8")
    click.echo(rendered, nl=False)


@main.command("compare")
@click.option("--baseline", type=click.Path(exists=True), required=True)
@click.option("--candidate", type=click.Path(exists=True), required=True)
@click.option("--tolerance", type=float, default=0.0, show_default=True)
def compare_cmd(baseline: str, candidate: str, tolerance: float) -> None:
    """Gate a candidate evaluation report against a baseline. Exits 1 on regression."""
    base = json.loads(Path(baseline).read_text(encoding="utf-8"))
    cand = json.loads(Path(candidate).read_text(encoding="utf-8"))
    decision = compare_reports(base, cand, tolerance=tolerance)
    click.echo(json.dumps(
        {
            "passed": decision.passed,
            "overall_delta": decision.overall_delta,
            "annotation_deltas": decision.annotation_deltas,
            "reasons": list(decision.reasons),
        },
        sort_keys=True,
        indent=2,
    ))
    if not decision.passed:
        sys.exit(1)


def _make_system(fixture_path: str | None, model_path: str, sg_path: str | None) -> SearchSystem:
    fixture = load_fixture(fixture_path or assets.demo_fixture_path())
    model = load_model(model_path)
    grammar = parse_grammar(sg_path or assets.suggest_grammar_path())
    return SearchSystem(fixture, model, grammar)


@main.command("tag")
@click.option("--fixture", "fixture_path", type=click.Path(exists=True), default=None)
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--suggest-grammar", "sg_path", type=click.Path(exists=True), default=None)
@click.option("--user", "user_id", required=True)
@click.option("--keyword", "force_keyword", is_flag=True, default=False)
@click.argument("query")
def tag_cmd(fixture_path: str | None, model_path: str, sg_path: str | None,
            user_id: str, force_keyword: bool, query: str) -> None:
    """Interpret one query and print the full response."""
    system = _make_system(fixture_path, model_path, sg_path)
    resp = system.interpret(query, user_id, force_keyword=force_keyword)
    click.echo(json.dumps(response_to_dict(resp), indent=2, ensure_ascii=False))


@main.command("suggest")
@click.option("--fixture", "fixture_path", type=click.Path(exists=True), default=None)
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--suggest-grammar", "sg_path", type=click.Path(exists=True), default=None)
@click.option("--user", "user_id", required=True)
@click.option("-k", "limit", type=int, default=None)
@click.argument("prefix", default="")
def suggest_cmd(fixture_path: str | None, model_path: str, sg_path: str | None,
                user_id: str, limit: int | None, prefix: str) -> None:
    """Print completions for a query prefix."""
    system = _make_system(fixture_path, model_path, sg_path)
    for s in system.suggest(prefix, user_id, k=limit):
        click.echo(f"{s.score:.6f}\t{s.text}")


@main.command("serve")
@click.option("--fixture", "fixture_path", type=click.Path(exists=True), default=None)
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--suggest-grammar", "sg_path", type=click.Path(exists=True), default=None)
@click.option("--frontend", "frontend_dir", type=click.Path(), default=None,
              help="Directory of static web assets to serve at /.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve_cmd(fixture_path: str | None, model_path: str, sg_path: str | None,
              frontend_dir: str | None, host: str, port: int) -> None:
    """Run the HTTP API (and optionally the web UI)."""
    import uvicorn

    from .server import create_app

    system = _make_system(fixture_path, model_path, sg_path)
    app = create_app(ServiceState(system), frontend_dir=frontend_dir)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
