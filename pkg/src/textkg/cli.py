"""Operator entry point binding the pipeline and evaluation harnesses."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import pipeline as pl
from .artifacts import ArtifactError, MissingArtifactError, RunStore
from .assembly import AssemblyError, load_chunks, load_graph, load_mentions
from .config import PipelineConfig, dump_config, load_config
from .metrics import (
    StructuralReport,
    clustering_coefficient,
    composites,
    connectivity,
    graph_triples,
    leakage,
    macro_average,
    structural_report,
    tricr,
    word_tokens,
)
from .model import validate_graph
from .providers import build_providers
from .retention import run_retention
from .schema_eval import GoldTriple, ReferenceOntology, evaluate_schema


class Ctx:
    def __init__(self, config: PipelineConfig, run_dir: Path):
        self.config = config
        self.run_dir = run_dir

    @property
    def store(self) -> RunStore:
        return RunStore(self.run_dir)


def _common(func):
    func = click.option("--config", "config_path", type=click.Path(exists=True),
                        default=None, help="JSON or YAML config file.")(func)
    func = click.option("--run-dir", default="run", show_default=True,
                        type=click.Path(), help="Run directory.")(func)
    func = click.option("--provider", type=click.Choice(["stub", "live"]),
                        default=None, help="Override chat+embedding provider.")(func)
    return func


def _textualizer_option(func):
    return click.option(
        "--textualizer", default=None,
        help="Textualizer plug: identity, stub, or command:<argv>.")(func)


def _ctx(config_path, run_dir, provider, textualizer=None) -> Ctx:
    config = load_config(config_path)
    if provider:
        config.providers.chat = provider
        config.providers.embedding = provider
    if textualizer:
        config.textualizer = textualizer
    return Ctx(config, Path(run_dir))


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _guard(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (MissingArtifactError, ArtifactError, AssemblyError, ValueError) as exc:
        _fail(str(exc))


@click.group()
def main() -> None:
    """Joint knowledge-graph construction and schema induction from text."""


@main.command()
@_common
@_textualizer_option
@click.argument("inputs", nargs=-1, required=True, type=click.Path(exists=True))
def ingest(config_path, run_dir, provider, textualizer, inputs) -> None:
    """Segment input documents into provenance-carrying chunks."""
    ctx = _ctx(config_path, run_dir, provider, textualizer)
    chunks = _guard(pl.stage_ingest, ctx.config, ctx.store, inputs)
    click.echo(f"ingest: {len(chunks)} chunks")


@main.command()
@_common
def extract(config_path, run_dir, provider) -> None:
    """Recognize entity mentions chunk by chunk."""
    ctx = _ctx(config_path, run_dir, provider)
    mentions = _guard(pl.stage_extract, ctx.config, ctx.store)
    click.echo(f"extract: {len(mentions)} mentions")


@main.command("resolve-entities")
@_common
def resolve_entities(config_path, run_dir, provider) -> None:
    """Consolidate mentions into resolved entities."""
    ctx = _ctx(config_path, run_dir, provider)
    entities = _guard(pl.stage_resolve_entities, ctx.config, ctx.store)
    click.echo(f"resolve-entities: {len(entities)} entities")


@main.command("induce-entity-schema")
@_common
def induce_entity_schema(config_path, run_dir, provider) -> None:
    """Induce entity classes and class groups."""
    ctx = _ctx(config_path, run_dir, provider)
    fragment = _guard(pl.stage_induce_entity_schema, ctx.config, ctx.store)
    click.echo(f"induce-entity-schema: {len(fragment.classes)} classes, "
               f"{len(fragment.groups)} groups")


@main.command("extract-relations")
@_common
def extract_relations(config_path, run_dir, provider) -> None:
    """Recognize qualified relations among each chunk's entities."""
    ctx = _ctx(config_path, run_dir, provider)
    relations = _guard(pl.stage_extract_relations, ctx.config, ctx.store)
    click.echo(f"extract-relations: {len(relations)} relation instances")


@main.command("resolve-relations")
@_common
def resolve_relations(config_path, run_dir, provider) -> None:
    """Canonicalize relations and induce the relation schema."""
    ctx = _ctx(config_path, run_dir, provider)
    result = _guard(pl.stage_resolve_relations, ctx.config, ctx.store)
    relations, fragment = result
    click.echo(f"resolve-relations: {len(relations)} instances, "
               f"{len(fragment.canonical_relations)} canonical labels")


@main.command()
@_common
def assemble(config_path, run_dir, provider) -> None:
    """Assemble and validate the final graph; export flat triples."""
    ctx = _ctx(config_path, run_dir, provider)
    graph = _guard(pl.stage_assemble, ctx.config, ctx.store)
    click.echo(f"assemble: {len(graph.entities)} entities, "
               f"{len(graph.relations)} relations")


@main.command("run-all")
@_common
@_textualizer_option
@click.argument("inputs", nargs=-1, required=True, type=click.Path(exists=True))
def run_all(config_path, run_dir, provider, textualizer, inputs) -> None:
    """Run every stage from ingestion through assembly."""
    ctx = _ctx(config_path, run_dir, provider, textualizer)
    graph = _guard(pl.run_all, ctx.config, ctx.store, inputs)
    click.echo(f"run-all: {len(graph.entities)} entities, "
               f"{len(graph.relations)} relations")


@main.command()
@_common
def validate(config_path, run_dir, provider) -> None:
    """Validate the assembled graph; nonzero exit on any violation."""
    ctx = _ctx(config_path, run_dir, provider)
    store = ctx.store
    graph = _guard(load_graph, store)
    chunks = _guard(load_chunks, store)
    mentions = _guard(load_mentions, store)
    report = validate_graph(graph, chunk_ids={c.id for c in chunks},
                            mentions=mentions)
    for warning in report.warnings:
        click.echo(f"warning: {warning.offender_id}: {warning.invariant}: "
                   f"{warning.message}")
    for violation in report.violations:
        click.echo(f"violation: {violation.offender_id}: {violation.invariant}: "
                   f"{violation.message}")
    if not report.ok:
        sys.exit(1)
    click.echo(f"validate: ok ({len(report.warnings)} warnings)")


@main.command("replay-actions")
@_common
def replay_actions(config_path, run_dir, provider) -> None:
    """Re-derive resolved artifacts from raw artifacts + action logs, diff."""
    ctx = _ctx(config_path, run_dir, provider)
    diffs = _guard(pl.replay_run, ctx.config, ctx.store)
    for line in diffs:
        click.echo(line)
    if diffs:
        _fail(f"replay diverged in {len(diffs)} record(s)")
    click.echo("replay-actions: empty diff")


@main.command("eval-retention")
@_common
@click.option("--benchmark", "benchmark_path", required=True,
              type=click.Path(exists=True),
              help="JSONL of {article, statements[]} records.")
@click.option("--out", "out_path", default=None, type=click.Path(),
              help="Write the report JSON here (default: run dir).")
@click.option("--figures", "figures_dir", default=None, type=click.Path(),
              help="Render figures into this directory.")
def eval_retention(config_path, run_dir, provider, benchmark_path, out_path,
                   figures_dir) -> None:
    """Score knowledge retention of the assembled graph."""
    ctx = _ctx(config_path, run_dir, provider)
    store = ctx.store
    if not store.stage_completed("assemble"):
        _fail("no assembled graph: run assemble first")
    graph = _guard(load_graph, store)
    chat, embedder = build_providers(ctx.config)
    reports = []
    with open(benchmark_path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            reports.append(run_retention(
                graph, record["statements"], record["article"],
                chat, embedder, ctx.config))
    if not reports:
        _fail("benchmark file holds no records")
    overall = reports[0] if len(reports) == 1 else macro_average(reports)
    record = overall.to_record()
    record["instances"] = len(reports)
    out = Path(out_path) if out_path else ctx.run_dir / "retention_report.json"
    out.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n",
                   encoding="utf-8")
    click.echo(json.dumps(record, indent=2, sort_keys=True))
    if figures_dir:
        from .figures import render_retention_figures

        for path in render_retention_figures(record, figures_dir):
            click.echo(f"figure: {path}")


@main.command("eval-schema")
@_common
@click.option("--ontology", "ontology_path", required=True,
              type=click.Path(exists=True),
              help="Reference ontology JSON {concepts[], relations[]}.")
@click.option("--gold", "gold_path", required=True, type=click.Path(exists=True),
              help="Gold triples JSONL (sid, subject, relation, object, split).")
@click.option("--scope", type=click.Choice(["source", "heldout", "combined"]),
              default="combined", show_default=True)
@click.option("--out", "out_path", default=None, type=click.Path())
@click.option("--figures", "figures_dir", default=None, type=click.Path())
def eval_schema(config_path, run_dir, provider, ontology_path, gold_path,
                scope, out_path, figures_dir) -> None:
    """Align the induced schema to a held-out reference ontology."""
    ctx = _ctx(config_path, run_dir, provider)
    store = ctx.store
    if not store.stage_completed("assemble"):
        _fail("no assembled graph: run assemble first")
    graph = _guard(load_graph, store)
    ontology = ReferenceOntology.from_dict(
        json.loads(Path(ontology_path).read_text(encoding="utf-8")))
    gold = []
    with open(gold_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                gold.append(GoldTriple.from_record(json.loads(line)))
    chat, embedder = build_providers(ctx.config)
    report, _, audit = _guard(evaluate_schema, graph, ontology, gold, scope,
                              chat, embedder, ctx.config)
    record = report.to_record()
    out = Path(out_path) if out_path else ctx.run_dir / f"schema_report_{scope}.json"
    out.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n",
                   encoding="utf-8")
    audit_path = ctx.run_dir / "alignment_audit.jsonl"
    audit_path.write_text("".join(
        json.dumps(j.to_record(), sort_keys=True) + "\n" for j in audit),
        encoding="utf-8")
    click.echo(json.dumps(record, indent=2, sort_keys=True))
    click.echo(f"audit: {len(audit)} low-confidence judgement(s) -> {audit_path}")
    if figures_dir:
        from .figures import render_schema_figures

        for path in render_schema_figures([record], figures_dir):
            click.echo(f"figure: {path}")


@main.command()
@_common
@click.option("--triples", "triples_path", default=None, type=click.Path(exists=True),
              help="Flat triples file (subject TAB predicate TAB object).")
@click.option("--source", "source_path", default=None, type=click.Path(exists=True),
              help="Source text for leakage/TriCR (required with --triples).")
@click.option("--table", "table_path", default=None, type=click.Path(),
              help="Write a plot-ready TSV of the metrics.")
@click.option("--figures", "figures_dir", default=None, type=click.Path())
def score(config_path, run_dir, provider, triples_path, source_path, table_path,
          figures_dir) -> None:
    """Structural metrics for a run directory or a flat triple file."""
    ctx = _ctx(config_path, run_dir, provider)
    if triples_path:
        if not source_path:
            _fail("--triples requires --source")
        triples = []
        with open(triples_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    parts = line.rstrip("\n").split("\t")
                    if len(parts) != 3:
                        _fail(f"bad triple line: {line.strip()!r}")
                    triples.append(tuple(parts))
        source = Path(source_path).read_text(encoding="utf-8")
        nodes = sorted({t[0] for t in triples} | {t[2] for t in triples})
        edges = [(t[0], t[2]) for t in triples]
        names = nodes
        structural = StructuralReport(
            node_count=len(nodes), edge_count=len(edges),
            avg_entity_words=(sum(len(word_tokens(n)) for n in names) / len(names)
                              if names else 0.0),
            avg_degree=len(edges) / len(nodes) if nodes else 0.0,
            connectivity=connectivity(nodes, edges) if nodes else 0.0,
            clustering=clustering_coefficient(nodes, edges) if nodes else 0.0)
        leak = leakage(names, source)
        compression = tricr(triples, source)
    else:
        store = ctx.store
        graph = _guard(load_graph, store)
        chunks = _guard(load_chunks, store)
        source = "\n".join(c.text for c in chunks)
        structural = _guard(structural_report, graph)
        leak = leakage([e.canonical_name for e in graph.entities], source)
        compression = tricr(graph_triples(graph), source)
    _, _, sci = composites(1.0, structural, leak)
    record = {"structural": structural.to_record(), "leak": leak,
              "tricr": compression, "sci": sci}
    click.echo(json.dumps(record, indent=2, sort_keys=True))
    if table_path:
        rows = [("metric", "value")]
        rows.extend((k, f"{v}") for k, v in sorted(structural.to_record().items()))
        rows.extend((("leak", f"{leak}"), ("tricr", f"{compression}"),
                     ("sci", f"{sci}")))
        Path(table_path).write_text(
            "".join("\t".join(row) + "\n" for row in rows), encoding="utf-8")
    if figures_dir:
        from .figures import render_structural_figure

        path = render_structural_figure(structural.to_record(), figures_dir)
        click.echo(f"figure: {path}")


@main.command("make-corpus")
@click.argument("outdir", type=click.Path())
@click.option("--docs", default=10, show_default=True)
@click.option("--seed", default=7, show_default=True)
def make_corpus(outdir, docs, seed) -> None:
    """Write the bundled synthetic corpus and evaluation fixtures."""
    from .synthetic import write_fixtures

    paths = write_fixtures(outdir, docs, seed)
    click.echo(f"corpus: {len(paths['corpus'])} documents in {outdir}/corpus")
    for key in ("benchmark", "ontology", "gold"):
        click.echo(f"{key}: {paths[key]}")


@main.command("show-config")
@_common
def show_config(config_path, run_dir, provider) -> None:
    """Print the effective configuration (defaults merged with the file)."""
    ctx = _ctx(config_path, run_dir, provider)
    click.echo(dump_config(ctx.config), nl=False)


if __name__ == "__main__":
    main()
