"""Shared fixtures: one full stub-provider pipeline run reused across tests."""

from __future__ import annotations

import pytest

from textkg import pipeline as pl
from textkg.artifacts import RunStore
from textkg.config import PipelineConfig
from textkg.providers import StubChatProvider, StubEmbeddingProvider
from textkg.synthetic import write_corpus


@pytest.fixture(scope="session")
def stub_chat():
    return StubChatProvider()


@pytest.fixture(scope="session")
def stub_embed():
    return StubEmbeddingProvider()


@pytest.fixture(scope="session")
def default_config():
    return PipelineConfig()


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("fixtures") / "corpus"
    write_corpus(path)
    return path


@pytest.fixture(scope="session")
def pipeline_run(tmp_path_factory, corpus_dir, default_config):
    """A completed run directory on the bundled synthetic corpus."""
    run_dir = tmp_path_factory.mktemp("runs") / "main"
    store = RunStore(run_dir)
    graph = pl.run_all(default_config, store, [corpus_dir])
    return {"run_dir": run_dir, "store": store, "graph": graph,
            "config": default_config}
