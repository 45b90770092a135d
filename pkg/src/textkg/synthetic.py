"""Bundled synthetic corpus and evaluation fixtures.

Generates a deterministic multi-document plant-operations corpus whose
surface patterns (appositive type statements, explicit intrinsic
properties, verb-linked relations with trailing qualifier clauses,
inverse phrasings, duplicate statements) exercise every pipeline stage
under the offline stub providers. Also emits a retention benchmark and a
reference ontology + gold triples for the schema evaluation harness.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

PEOPLE = (
    "Alice Moreau", "Bruno Keller", "Chandra Patel", "Dana Whitfield",
    "Elena Rossi", "Felix Adler", "Grace Okafor", "Henrik Larsen",
    "Iris Tanaka", "Jonas Weber",
)
ORGS = ("Acme Corporation", "Northwind Labs", "Helios Energy", "Vertex Systems")
CITIES = ("Paris", "Berlin", "Lyon", "Rotterdam", "Geneva")
DEVICES = (
    "Turbine Pump", "Cooling Loop", "Filter Bank", "Sensor Grid",
    "Compressor Unit", "Drying Chamber", "Valve Cluster", "Boiler Stack",
)
PLACES = ("Building Seven", "Hall Nine", "Dock Four")

FILLERS = (
    "The maintenance crew reviewed the weekly schedule and logged several "
    "notes without incident.",
    "The overnight readings stayed within the expected operating band for "
    "the entire observation window.",
    "The quarterly audit confirmed that all recorded procedures matched the "
    "written standard in every sampled case.",
    "The operators rotated through the usual checklist and found nothing "
    "that required escalation or follow-up.",
    "The spare parts inventory was counted, reconciled, and returned to the "
    "usual storage arrangement.",
    "The shift summary noted steady throughput and no unplanned stoppages "
    "across the monitored period.",
)


def make_documents(n_docs: int = 10, seed: int = 7) -> list[dict]:
    """Deterministic raw documents (>= 60 chunks at the default bounds)."""
    rng = random.Random(seed)
    documents = []
    for d in range(n_docs):
        person = PEOPLE[d % len(PEOPLE)]
        partner = PEOPLE[(d + 3) % len(PEOPLE)]
        org = ORGS[d % len(ORGS)]
        city = CITIES[d % len(CITIES)]
        device = DEVICES[d % len(DEVICES)]
        device2 = DEVICES[(d + 1) % len(DEVICES)]
        device3 = DEVICES[(d + 2) % len(DEVICES)]
        place = PLACES[d % len(PLACES)]
        sentences = [
            f"{person} is an engineer.",
            f"{person} works at {org}.",
            f"{org} is a company.",
            f"{org} is located in {city}.",
            f"{city} is a city.",
            f"{partner} is an engineer.",
            f"{partner} is employed by {org}.",
            f"The {device} is a machine.",
            f"The {device} has a mass of {100 + 10 * d} kg.",
            f"The {device} feeds the {device2}, in {place}.",
            f"The {device2} is fed by the {device}.",
            f"The {device2} is a machine.",
            f"{person} manages the {device}, if demand stays high.",
            f"{person} works at {org}, during the night shift.",
            f"{partner} manages the {device3}.",
            f"The {device3} is a machine.",
        ]
        body = []
        for sentence in sentences:
            body.append(sentence)
            for _ in range(rng.randint(2, 4)):
                body.append(rng.choice(FILLERS))
        documents.append({
            "doc_id": f"doc{d:02d}",
            "source": f"doc{d:02d}.txt",
            "text": " ".join(body),
        })
    # One region-annotated document exercising non-narrative provenance.
    documents.append({
        "doc_id": "doc-table",
        "source": "doc-table.json",
        "segments": [
            {"kind": "narrative",
             "text": ("The commissioning report covers the primary loop. "
                      + " ".join(FILLERS))},
            {"kind": "table",
             "text": "Turbine Pump supplies the Filter Bank.",
             "provenance": {"page": "2", "region": "t1"}},
            {"kind": "narrative",
             "text": " ".join(FILLERS[::-1])},
        ],
    })
    return documents


def write_corpus(outdir: str | Path, n_docs: int = 10, seed: int = 7) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for document in make_documents(n_docs, seed):
        if "segments" in document:
            path = outdir / f"{document['doc_id']}.json"
            path.write_text(json.dumps(
                {k: v for k, v in document.items() if k != "source"},
                indent=2, sort_keys=True) + "\n", encoding="utf-8")
        else:
            path = outdir / f"{document['doc_id']}.txt"
            path.write_text(document["text"] + "\n", encoding="utf-8")
        paths.append(path)
    return paths


def make_benchmark(n_docs: int = 10, seed: int = 7) -> dict:
    """Retention benchmark: the corpus text plus true and false statements."""
    documents = make_documents(n_docs, seed)
    article = "\n".join(d.get("text", "") for d in documents if "text" in d)
    statements = []
    for d in range(min(n_docs, len(PEOPLE))):
        person = PEOPLE[d % len(PEOPLE)]
        org = ORGS[d % len(ORGS)]
        city = CITIES[d % len(CITIES)]
        device = DEVICES[d % len(DEVICES)]
        device2 = DEVICES[(d + 1) % len(DEVICES)]
        statements.append(f"{person} works at {org}.")
        statements.append(f"The {device} feeds the {device2}.")
        statements.append(f"{org} is located in {city}.")
        statements.append(f"{person} feeds the {city}.")      # unsupported
    return {"article": article, "statements": statements}


def make_reference_ontology() -> dict:
    return {
        "concepts": [
            {"label": "Engineer"},
            {"label": "Company"},
            {"label": "City"},
            {"label": "Machine"},
        ],
        "relations": [
            {"label": "worksAt", "domain": "Engineer", "range": "Company"},
            {"label": "locatedIn", "domain": "Company", "range": "City"},
            {"label": "feeds", "domain": "Machine", "range": "Machine"},
            {"label": "manages", "domain": "Engineer", "range": "Machine"},
            {"label": "commissionedOn", "domain": "Machine", "range": "xsd:date"},
        ],
    }


def make_gold_triples(n_docs: int = 10) -> list[dict]:
    triples = []
    sid = 0
    for d in range(n_docs):
        person = PEOPLE[d % len(PEOPLE)]
        org = ORGS[d % len(ORGS)]
        city = CITIES[d % len(CITIES)]
        device = DEVICES[d % len(DEVICES)]
        device2 = DEVICES[(d + 1) % len(DEVICES)]
        split = "train" if d % 2 == 0 else "test"
        for subject, relation, obj in (
                (person, "worksAt", org),
                (org, "locatedIn", city),
                (device, "feeds", device2),
                (person, "manages", device)):
            triples.append({"sid": f"s{sid:04d}", "subject": subject,
                            "relation": relation, "object": obj, "split": split})
            sid += 1
    return triples


def write_fixtures(outdir: str | Path, n_docs: int = 10, seed: int = 7) -> dict:
    """Write corpus + benchmark + ontology + gold triples; returns paths."""
    outdir = Path(outdir)
    corpus_dir = outdir / "corpus"
    paths = {"corpus": write_corpus(corpus_dir, n_docs, seed)}
    benchmark = make_benchmark(n_docs, seed)
    benchmark_path = outdir / "benchmark.jsonl"
    benchmark_path.write_text(json.dumps(benchmark, sort_keys=True,
                                         ensure_ascii=False) + "\n",
                              encoding="utf-8")
    paths["benchmark"] = benchmark_path
    ontology_path = outdir / "ontology.json"
    ontology_path.write_text(json.dumps(make_reference_ontology(), indent=2,
                                        sort_keys=True) + "\n", encoding="utf-8")
    paths["ontology"] = ontology_path
    gold_path = outdir / "gold.jsonl"
    gold_path.write_text("".join(json.dumps(t, sort_keys=True) + "\n"
                                 for t in make_gold_triples(n_docs)),
                         encoding="utf-8")
    paths["gold"] = gold_path
    return paths
