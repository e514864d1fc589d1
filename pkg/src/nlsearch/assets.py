"""Paths to the data files shipped inside the package."""
from __future__ import annotations

from importlib.resources import as_file, files
from pathlib import Path


def _data(name: str) -> Path:
    ref = files("nlsearch").joinpath(f"data/{name}")
    with as_file(ref) as path:
        return Path(path)


def demo_fixture_path() -> Path:
    return _data("demo_org.json")


def training_grammar_path() -> Path:
    return _data("training_grammar.pcfg")


def suggest_grammar_path() -> Path:
    return _data("suggest_grammar.pcfg")


def lexicon_dir() -> Path:
    return _data("lexicons")


def nrd_path() -> Path:
    return _data("nrd.conll")


def gsd_path() -> Path:
    return _data("gsd.json")
