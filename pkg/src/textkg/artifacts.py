"""Line-delimited artifact store for pipeline runs.

One directory per run; every artifact is a JSONL file with one record per
line, keys sorted, so identical runs produce byte-identical directories.
The manifest snapshots the config, provider identities, completed stages,
and a checksum per artifact file.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

ARTIFACT_FILES = {
    "chunks": "chunks.jsonl",
    "mentions": "mentions.jsonl",
    "entities": "entities.jsonl",
    "classes_candidate": "classes_candidate.jsonl",
    "classes_resolved": "classes_resolved.jsonl",
    "relations_raw": "relations_raw.jsonl",
    "relations_resolved": "relations_resolved.jsonl",
    "schema": "schema.jsonl",
    "actions": "actions.jsonl",
    "prompts": "prompts.jsonl",
}

STAGE_FOR_ARTIFACT = {
    "chunks": "ingest",
    "mentions": "extract",
    "entities": "resolve-entities",
    "classes_candidate": "induce-entity-schema",
    "classes_resolved": "induce-entity-schema",
    "relations_raw": "extract-relations",
    "relations_resolved": "resolve-relations",
    "schema": "resolve-relations",
    "actions": "resolve-entities",
    "prompts": "extract",
}

STAGE_ORDER = ("ingest", "extract", "resolve-entities", "induce-entity-schema",
               "extract-relations", "resolve-relations", "assemble")

MANIFEST_NAME = "manifest.json"
TRIPLES_NAME = "triples.tsv"


class ArtifactError(Exception):
    def __init__(self, file: str, line: int, message: str):
        super().__init__(f"{file}:{line}: {message}")
        self.file = file
        self.line = line


class MissingArtifactError(Exception):
    def __init__(self, artifact: str, stage: str):
        super().__init__(f"missing artifact {artifact!r}: run {stage} first")
        self.artifact = artifact
        self.stage = stage


def dumps_record(record: Mapping[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False,
                      separators=(",", ":"))


class RunStore:
    def __init__(self, run_dir: str | Path):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.run_dir / ARTIFACT_FILES[name]

    def has(self, name: str) -> bool:
        return self.path(name).exists()

    def write_records(self, name: str, records: Iterable[Mapping[str, Any]]) -> None:
        lines = [dumps_record(rec) for rec in records]
        self.path(name).write_text("".join(line + "\n" for line in lines),
                                   encoding="utf-8")

    def read_records(self, name: str) -> list[dict]:
        path = self.path(name)
        if not path.exists():
            raise MissingArtifactError(name, STAGE_FOR_ARTIFACT[name])
        records = []
        with path.open(encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                stripped = line.strip()
                if not stripped:
                    continue
                try:
                    records.append(json.loads(stripped))
                except json.JSONDecodeError as exc:
                    raise ArtifactError(path.name, line_no, f"corrupt record: {exc}")
        return records

    def require(self, name: str) -> list[dict]:
        if not self.has(name):
            raise MissingArtifactError(name, STAGE_FOR_ARTIFACT[name])
        return self.read_records(name)

    # -- logs shared across stages -------------------------------------

    def merge_stage_records(self, name: str, stage: str,
                            records: Iterable[Mapping[str, Any]]) -> None:
        """Replace one stage's section of a shared log file."""
        existing: list[dict] = []
        if self.has(name):
            existing = [rec for rec in self.read_records(name)
                        if rec.get("stage") != stage]
        merged = existing + [dict(rec) for rec in records]
        order = {stage_name: i for i, stage_name in enumerate(
            ("EntRec", "EntRes", "EntClsRec", "EntClsRes", "RelRec", "RelRes"))}
        merged.sort(key=lambda rec: (order.get(rec.get("stage"), 99),
                                     rec.get("sequence_number", -1),
                                     rec.get("key", "")))
        self.write_records(name, merged)

    # -- manifest --------------------------------------------------------

    def file_checksum(self, filename: str) -> str:
        return hashlib.sha256((self.run_dir / filename).read_bytes()).hexdigest()

    def write_manifest(self, config_dict: Mapping[str, Any],
                       providers: Mapping[str, str], completed_stage: str) -> None:
        manifest: dict[str, Any] = {"format": 1, "stages": []}
        path = self.run_dir / MANIFEST_NAME
        if path.exists():
            manifest = json.loads(path.read_text(encoding="utf-8"))

        def order(stage: str) -> int:
            return STAGE_ORDER.index(stage) if stage in STAGE_ORDER else 99

        # Re-running a stage invalidates everything downstream of it.
        stages = [s for s in manifest.get("stages", ())
                  if order(s) < order(completed_stage)]
        stages.append(completed_stage)
        manifest["stages"] = sorted(stages, key=order)
        manifest["config"] = dict(config_dict)
        manifest["providers"] = dict(providers)
        files = {}
        for filename in sorted(ARTIFACT_FILES.values()) + [TRIPLES_NAME]:
            if (self.run_dir / filename).exists():
                files[filename] = self.file_checksum(filename)
        manifest["files"] = files
        path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n",
                        encoding="utf-8")

    def read_manifest(self) -> Optional[dict]:
        path = self.run_dir / MANIFEST_NAME
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def stage_completed(self, stage: str) -> bool:
        manifest = self.read_manifest()
        return bool(manifest and stage in manifest.get("stages", ()))

    def write_triples(self, lines: Iterable[str]) -> None:
        (self.run_dir / TRIPLES_NAME).write_text(
            "".join(line + "\n" for line in lines), encoding="utf-8")
