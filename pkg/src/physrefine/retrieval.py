"""Physics knowledge base: corpus ingestion into a chunk/entity graph and
thought-driven retrieval.

The retriever is deliberately deterministic: lexical overlap plus one hop of
entity-graph expansion with a fixed attenuation, ties broken by chunk id.
Anything fancier (an external graph-RAG service, embeddings) can be swapped
in behind the same ``retrieve`` contract without touching the agents.
"""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

logger = logging.getLogger(__name__)

FORMAT_TAG = "physrefine-kb/1"


class EmptyCorpus(Exception):
    """The corpus directory held no readable .txt/.md documents."""


@dataclass(frozen=True)
class RetrievalConfig:
    max_chunk_chars: int = 1200
    top_k: int = 3
    hop_attenuation: float = 0.5
    expansion_neighbors: int = 3


@dataclass(frozen=True)
class KnowledgeChunk:
    chunk_id: str
    source_doc: str
    text: str
    entities: tuple[str, ...]


@dataclass(frozen=True)
class EntityNode:
    occurrence_count: int
    chunk_ids: tuple[str, ...]


@dataclass(frozen=True)
class KnowledgeBase:
    chunks: tuple[KnowledgeChunk, ...]
    nodes: dict[str, EntityNode]
    edges: dict[tuple[str, str], int]

    def chunk_by_id(self, chunk_id: str) -> KnowledgeChunk:
        for chunk in self.chunks:
            if chunk.chunk_id == chunk_id:
                return chunk
        raise KeyError(chunk_id)


@dataclass(frozen=True)
class Observation:
    """Retrieved context for one thought, ranked best first."""

    thought: str
    chunks: tuple[tuple[KnowledgeChunk, float], ...]
    rendered_text: str

    @property
    def empty(self) -> bool:
        return not self.chunks


# Curated surface forms matched case-insensitively during entity extraction.
# Multi-word phrases dominate; single words are limited to strong physics
# nouns to keep co-occurrence edges meaningful.
PHYSICS_LEXICON = (
    "angular momentum",
    "angular velocity",
    "bernoulli's principle",
    "buoyant force",
    "capacitance",
    "center of mass",
    "centripetal force",
    "coefficient of friction",
    "coulomb's law",
    "de broglie wavelength",
    "doppler effect",
    "electric field",
    "escape velocity",
    "faraday's law",
    "focal length",
    "frequency",
    "half life",
    "ideal gas",
    "inductance",
    "kinetic energy",
    "latent heat",
    "lenz's law",
    "magnetic field",
    "moment of inertia",
    "momentum",
    "ohm's law",
    "photoelectric effect",
    "potential energy",
    "projectile motion",
    "radioactive decay",
    "refractive index",
    "resistivity",
    "simple harmonic motion",
    "simple pendulum",
    "specific heat",
    "standing wave",
    "surface tension",
    "terminal velocity",
    "thermal expansion",
    "time period",
    "torque",
    "uniform solid cylinder",
    "wavelength",
    "work energy theorem",
    "young's modulus",
)

_CAP_SEQ_RE = re.compile(r"\b([A-Z][a-z][\w'’]*(?:[ -][A-Z][a-z][\w'’]*)+)\b")
_EQUATION_LHS_RE = re.compile(r"\b([A-Za-z]\w{0,2})\s*=")
_WORD_RE = re.compile(r"[a-z0-9][a-z0-9'^/]*")

_STOPWORDS = frozenset(
    "a an and are as at be by for from has have in is it its of on or that the this to was what when which with".split()
)

# Sentence-leading words that capitalization alone should not pull into an
# entity ("By Newtons Second Law" -> "newtons second law").
_LEADING_STOPWORDS = _STOPWORDS | frozenset(
    "along beyond during most these where".split()
)


def extract_entities(text: str) -> tuple[str, ...]:
    """Heuristic entity extraction: lexicon phrases, capitalized multi-word
    terms, and identifiers on the left of an equals sign."""
    found: set[str] = set()
    lowered = text.lower()
    for phrase in PHYSICS_LEXICON:
        if re.search(r"\b" + re.escape(phrase) + r"\b", lowered):
            found.add(phrase)
    for match in _CAP_SEQ_RE.findall(text):
        words = re.sub(r"\s+", " ", match).split(" ")
        while words and words[0].lower() in _LEADING_STOPWORDS:
            words.pop(0)
        if len(words) >= 2:
            found.add(" ".join(words).lower())
    for match in _EQUATION_LHS_RE.findall(text):
        found.add(match.lower())
    return tuple(sorted(found))


def _split_paragraphs(text: str) -> list[str]:
    return [p.strip() for p in re.split(r"\n\s*\n", text) if p.strip()]


def _cap_length(paragraph: str, limit: int) -> list[str]:
    pieces = []
    remaining = paragraph
    while len(remaining) > limit:
        cut = remaining.rfind(" ", 0, limit)
        if cut <= 0:
            cut = limit
        pieces.append(remaining[:cut].strip())
        remaining = remaining[cut:].strip()
    if remaining:
        pieces.append(remaining)
    return pieces


def _build_graph(
    chunks: Iterable[KnowledgeChunk],
) -> tuple[dict[str, EntityNode], dict[tuple[str, str], int]]:
    occurrences: dict[str, list[str]] = {}
    edges: dict[tuple[str, str], int] = {}
    for chunk in chunks:
        for entity in chunk.entities:
            occurrences.setdefault(entity, []).append(chunk.chunk_id)
        entities = sorted(chunk.entities)
        for i, a in enumerate(entities):
            for b in entities[i + 1 :]:
                edges[(a, b)] = edges.get((a, b), 0) + 1
    nodes = {
        entity: EntityNode(occurrence_count=len(ids), chunk_ids=tuple(ids))
        for entity, ids in sorted(occurrences.items())
    }
    return nodes, dict(sorted(edges.items()))


def ingest(
    corpus_dir: str | Path,
    index_dir: str | Path,
    config: RetrievalConfig = RetrievalConfig(),
) -> KnowledgeBase:
    """Chunk a corpus directory, extract entities, build the co-occurrence
    graph, and persist the index deterministically.

    Same corpus bytes in, same index bytes out; unreadable files are skipped
    with a warning.
    """
    corpus = Path(corpus_dir)
    docs = sorted(p for p in corpus.glob("*") if p.suffix.lower() in (".txt", ".md"))
    chunks: list[KnowledgeChunk] = []
    for doc in docs:
        try:
            text = doc.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            logger.warning("skipping unreadable document %s: %s", doc, exc)
            continue
        seq = 0
        for paragraph in _split_paragraphs(text):
            for piece in _cap_length(paragraph, config.max_chunk_chars):
                chunks.append(
                    KnowledgeChunk(
                        chunk_id=f"{doc.name}#{seq:03d}",
                        source_doc=doc.name,
                        text=piece,
                        entities=extract_entities(piece),
                    )
                )
                seq += 1
    if not chunks:
        raise EmptyCorpus(f"no readable .txt/.md documents with content in {corpus}")

    nodes, edges = _build_graph(chunks)
    kb = KnowledgeBase(chunks=tuple(chunks), nodes=nodes, edges=edges)
    save_index(kb, index_dir)
    return kb


def _atomic_write(path: Path, content: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(content, encoding="utf-8")
    os.replace(tmp, path)


def save_index(kb: KnowledgeBase, index_dir: str | Path) -> None:
    out = Path(index_dir)
    out.mkdir(parents=True, exist_ok=True)
    chunk_lines = [json.dumps({"format": FORMAT_TAG, "kind": "chunks"}, sort_keys=True)]
    for chunk in sorted(kb.chunks, key=lambda c: c.chunk_id):
        chunk_lines.append(
            json.dumps(
                {
                    "chunk_id": chunk.chunk_id,
                    "source_doc": chunk.source_doc,
                    "text": chunk.text,
                    "entities": list(chunk.entities),
                },
                sort_keys=True,
                ensure_ascii=True,
            )
        )
    graph_lines = [json.dumps({"format": FORMAT_TAG, "kind": "graph"}, sort_keys=True)]
    for (a, b), count in sorted(kb.edges.items()):
        graph_lines.append(json.dumps({"a": a, "b": b, "count": count}, sort_keys=True))
    _atomic_write(out / "chunks.jsonl", "\n".join(chunk_lines) + "\n")
    _atomic_write(out / "graph.jsonl", "\n".join(graph_lines) + "\n")


def load_index(index_dir: str | Path) -> KnowledgeBase:
    """Load a persisted index; nodes are rebuilt from the chunk records."""
    root = Path(index_dir)
    chunk_lines = (root / "chunks.jsonl").read_text(encoding="utf-8").splitlines()
    header = json.loads(chunk_lines[0])
    if header.get("format") != FORMAT_TAG:
        raise ValueError(f"unsupported index format {header.get('format')!r}")
    chunks = []
    for line in chunk_lines[1:]:
        record = json.loads(line)
        chunks.append(
            KnowledgeChunk(
                chunk_id=record["chunk_id"],
                source_doc=record["source_doc"],
                text=record["text"],
                entities=tuple(record["entities"]),
            )
        )
    nodes, edges_from_chunks = _build_graph(chunks)
    graph_lines = (root / "graph.jsonl").read_text(encoding="utf-8").splitlines()
    edges: dict[tuple[str, str], int] = {}
    for line in graph_lines[1:]:
        record = json.loads(line)
        edges[(record["a"], record["b"])] = record["count"]
    if edges != edges_from_chunks:
        logger.warning("graph file disagrees with chunk-derived edges; using file")
    return KnowledgeBase(chunks=tuple(chunks), nodes=nodes, edges=edges)


def _thought_terms(thought: str) -> tuple[str, ...]:
    words = _WORD_RE.findall(thought.lower())
    return tuple(sorted({w for w in words if w not in _STOPWORDS}))


def _entities_in_thought(kb: KnowledgeBase, thought: str) -> list[str]:
    lowered = thought.lower()
    matched = []
    for entity in kb.nodes:
        if re.search(r"\b" + re.escape(entity) + r"\b", lowered):
            matched.append(entity)
    return matched


def _top_neighbors(kb: KnowledgeBase, entity: str, limit: int) -> list[str]:
    neighbors = []
    for (a, b), count in kb.edges.items():
        if a == entity:
            neighbors.append((b, count))
        elif b == entity:
            neighbors.append((a, count))
    neighbors.sort(key=lambda item: (-item[1], item[0]))
    return [name for name, _ in neighbors[:limit]]


def retrieve(
    kb: KnowledgeBase,
    thought: str,
    k: Optional[int] = None,
    config: RetrievalConfig = RetrievalConfig(),
) -> Observation:
    """Score chunks against a retrieval thought and return the top k.

    A chunk earns its lexical-overlap fraction, plus 1.0 per thought entity
    it contains, plus ``hop_attenuation`` per one-hop neighbor entity it
    contains. Expansion only ever adds score. Ties break by ascending
    chunk id, so results are a pure function of (kb, thought, k).
    """
    top_k = k if k is not None else config.top_k
    if top_k < 1:
        raise ValueError("k must be >= 1")
    terms = _thought_terms(thought)
    matched = _entities_in_thought(kb, thought)
    neighbor_set: set[str] = set()
    for entity in matched:
        neighbor_set.update(_top_neighbors(kb, entity, config.expansion_neighbors))
    neighbor_set.difference_update(matched)

    scores: dict[str, float] = {}
    for chunk in kb.chunks:
        chunk_words = set(_WORD_RE.findall(chunk.text.lower()))
        lexical = sum(1 for t in terms if t in chunk_words) / len(terms) if terms else 0.0
        if lexical > 0:
            scores[chunk.chunk_id] = scores.get(chunk.chunk_id, 0.0) + lexical
    for entity in matched:
        for chunk_id in kb.nodes[entity].chunk_ids:
            scores[chunk_id] = scores.get(chunk_id, 0.0) + 1.0
    for entity in sorted(neighbor_set):
        for chunk_id in kb.nodes[entity].chunk_ids:
            scores[chunk_id] = scores.get(chunk_id, 0.0) + config.hop_attenuation

    ranked = sorted(
        ((cid, score) for cid, score in scores.items() if score > 0),
        key=lambda item: (-item[1], item[0]),
    )[:top_k]
    chunks = tuple((kb.chunk_by_id(cid), score) for cid, score in ranked)
    rendered = "\n\n".join(f"[{c.source_doc}] {c.text}" for c, _ in chunks)
    return Observation(thought=thought, chunks=chunks, rendered_text=rendered)
