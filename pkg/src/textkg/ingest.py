"""Document ingestion: textualization into a unified stream, then chunking.

Chunking is sentence-preserving: the document stream is partitioned into
exact sentence substrings and sentences are packed greedily until a chunk
reaches ``min_tokens``. Concatenating a document's chunk texts reproduces
the stream text exactly.
"""

from __future__ import annotations

import re
import shlex
import subprocess
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Optional, Sequence

from .model import Chunk, Provenance

# A textualizer maps one raw segment dict to text, or None for a placeholder.
Textualizer = Callable[[Mapping[str, Any]], Optional[str]]


class IngestError(Exception):
    def __init__(self, doc_id: str, message: str):
        super().__init__(f"document {doc_id}: {message}")
        self.doc_id = doc_id


@dataclass(frozen=True)
class Segment:
    text: str
    provenance: Provenance


@dataclass(frozen=True)
class DocumentStream:
    doc_id: str
    segments: tuple[Segment, ...]

    @property
    def text(self) -> str:
        return "\n".join(seg.text for seg in self.segments)


def identity_textualizer(segment: Mapping[str, Any]) -> Optional[str]:
    return segment.get("text")


def stub_textualizer(segment: Mapping[str, Any]) -> Optional[str]:
    """Maps non-text regions to tagged one-line descriptions."""
    kind = segment.get("kind", "narrative")
    if kind == "narrative":
        return segment.get("text")
    body = segment.get("text")
    if body is None and segment.get("cells") is not None:
        body = "; ".join(" | ".join(str(c) for c in row) for row in segment["cells"])
    if body is None:
        body = segment.get("caption") or segment.get("image_ref")
    if body is None:
        return None
    return f"{kind.upper()}: {body}"


def command_textualizer(argv: str) -> Textualizer:
    """Pipes the segment JSON through an external command; stdout is the text."""
    import json

    args = shlex.split(argv)

    def run(segment: Mapping[str, Any]) -> Optional[str]:
        proc = subprocess.run(args, input=json.dumps(segment), text=True,
                              capture_output=True, check=True)
        out = proc.stdout.strip()
        return out or None

    return run


def resolve_textualizer(spec: str) -> Textualizer:
    if spec == "identity":
        return identity_textualizer
    if spec == "stub":
        return stub_textualizer
    if spec.startswith("command:"):
        return command_textualizer(spec.split(":", 1)[1])
    raise ValueError(f"unknown textualizer {spec!r}")


def textualize(document: Mapping[str, Any],
               textualizer: Textualizer = identity_textualizer) -> DocumentStream:
    """Convert a raw document into a provenance-preserving text stream.

    ``document`` is either ``{"doc_id", "source", "text"}`` for plain text
    or ``{"doc_id", "source", "segments": [...]}`` for region-annotated
    input. Non-text regions the textualizer declines are passed through as
    placeholder segments so provenance is never dropped.
    """
    doc_id = document.get("doc_id")
    if not doc_id:
        raise IngestError("<unknown>", "missing doc_id")
    source = document.get("source", doc_id)

    raw_segments: Sequence[Mapping[str, Any]]
    if "segments" in document:
        raw_segments = document["segments"]
    elif "text" in document:
        raw_segments = [{"kind": "narrative", "text": document["text"]}]
    else:
        raise IngestError(doc_id, "document has neither text nor segments")

    segments: list[Segment] = []
    for idx, raw in enumerate(raw_segments):
        kind = raw.get("kind", "narrative")
        prov_in = raw.get("provenance", {})
        region = prov_in.get("region")
        if region is None and kind != "narrative":
            region = f"seg{idx}"
        provenance = Provenance(source=source, kind=kind,
                                page=prov_in.get("page"), region=region)
        if kind == "narrative":
            text = raw.get("text")
        else:
            text = textualizer(raw)
            if text is None:
                text = f"[{kind} region {region}]"
        if text is None or not text.strip():
            continue
        segments.append(Segment(text=text, provenance=provenance))
    if not segments:
        raise IngestError(doc_id, "document is empty")
    return DocumentStream(doc_id=doc_id, segments=tuple(segments))


# ---------------------------------------------------------------------------
# Sentence splitting and chunk packing.
# ---------------------------------------------------------------------------

ABBREVIATIONS = frozenset({
    "e.g", "i.e", "etc", "vs", "cf", "dr", "mr", "mrs", "ms", "prof", "fig",
    "no", "al", "inc", "co", "ltd", "jr", "sr", "st",
})

_TERMINAL = frozenset(".!?")
_CLOSERS = frozenset("\"')]}’”")


def _word_before(text: str, pos: int) -> str:
    end = pos
    start = end
    while start > 0 and not text[start - 1].isspace():
        start -= 1
    return text[start:end]


def sentence_spans(text: str) -> list[tuple[int, int]]:
    """Exact partition of ``text`` into sentence spans.

    Splits after terminal punctuation when the following material starts a
    new sentence. Trailing whitespace attaches to the preceding sentence so
    the spans concatenate back to ``text`` verbatim.
    """
    if not text:
        return []
    boundaries: list[int] = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch in _TERMINAL:
            j = i + 1
            while j < n and text[j] in _CLOSERS:
                j += 1
            k = j
            saw_newline = False
            while k < n and text[k].isspace():
                saw_newline = saw_newline or text[k] == "\n"
                k += 1
            if k >= n:
                i += 1
                continue
            word = _word_before(text, i).rstrip(".").lower()
            is_abbrev = word in ABBREVIATIONS or (len(word) == 1 and word.isalpha())
            starts_new = text[k].isupper() or text[k].isdigit()
            if k > j and (saw_newline or (starts_new and not is_abbrev)):
                boundaries.append(k)
                i = k
                continue
        i += 1

    spans = []
    start = 0
    for boundary in boundaries:
        if text[start:boundary].strip():
            spans.append((start, boundary))
            start = boundary
    if text[start:].strip() or not spans:
        spans.append((start, n))
    else:
        # Pure-whitespace tail attaches to the last sentence.
        spans[-1] = (spans[-1][0], n)
    return spans


def count_tokens(text: str) -> int:
    return len(text.split())


def chunk(stream: DocumentStream, min_tokens: int = 100,
          max_tokens: int = 200) -> list[Chunk]:
    """Pack sentences greedily into chunks of roughly min_tokens..max_tokens.

    Sentences are never split. A chunk is emitted as soon as it reaches
    ``min_tokens``; a sentence that would push the chunk past ``max_tokens``
    forces emission first, and a single sentence longer than ``max_tokens``
    becomes its own oversized chunk.
    """
    if min_tokens > max_tokens:
        raise ValueError(f"min_tokens {min_tokens} exceeds max_tokens {max_tokens}")
    text = stream.text
    if not text.strip():
        return []

    # Segment char ranges inside the joined stream text ("\n" separators).
    # Sentences are computed per segment so a sentence never spans segments;
    # each inter-segment separator is absorbed by the preceding sentence,
    # keeping the spans an exact partition of the stream text.
    seg_ranges: list[tuple[int, int, Provenance]] = []
    spans: list[tuple[int, int]] = []
    cursor = 0
    last_index = len(stream.segments) - 1
    for idx, seg in enumerate(stream.segments):
        seg_ranges.append((cursor, cursor + len(seg.text), seg.provenance))
        seg_spans = [(s + cursor, e + cursor) for s, e in sentence_spans(seg.text)]
        if idx < last_index and seg_spans:
            start, end = seg_spans[-1]
            seg_spans[-1] = (start, end + 1)
        spans.extend(seg_spans)
        cursor += len(seg.text) + 1

    chunks: list[Chunk] = []
    current: list[tuple[int, int]] = []
    current_tokens = 0

    def emit() -> None:
        nonlocal current, current_tokens
        if not current:
            return
        start, end = current[0][0], current[-1][1]
        chunk_text = text[start:end]
        provenance = []
        seen = set()
        for s_start, s_end, prov in seg_ranges:
            if s_start < end and start < s_end and id(prov) not in seen:
                seen.add(id(prov))
                provenance.append(prov)
        ordinal = len(chunks)
        chunks.append(Chunk(
            id=f"ch-{stream.doc_id}-{ordinal:04d}",
            doc_id=stream.doc_id,
            text=chunk_text,
            token_count=count_tokens(chunk_text),
            provenance=tuple(provenance),
        ))
        current = []
        current_tokens = 0

    for span in spans:
        tokens = count_tokens(text[span[0]:span[1]])
        if tokens == 0:
            # Whitespace-only sentence cannot occur, but guard the invariant.
            if current:
                current[-1] = (current[-1][0], span[1])
            continue
        if current and current_tokens + tokens > max_tokens:
            emit()
        current.append(span)
        current_tokens += tokens
        if current_tokens >= min_tokens:
            emit()
    emit()
    return chunks


def ingest_document(document: Mapping[str, Any], textualizer: Textualizer,
                    min_tokens: int = 100, max_tokens: int = 200) -> list[Chunk]:
    return chunk(textualize(document, textualizer), min_tokens, max_tokens)
