"""Pretraining-pair machinery: co-occurrence statistics, PMI selection,
positive-pair enumeration, entity-type negative filtering, entity masking.

All operations are deterministic. Counts are document-level: an entity or
ordered entity pair is counted once per document no matter how many times
it is mentioned there.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .corpus import Document, Mention, PairInstance

__all__ = [
    "PairStats",
    "SelectedPair",
    "compute_pair_stats",
    "pmi",
    "select_pretraining_pairs",
    "enumerate_positive_pairs",
    "is_valid_negative",
    "pair_type_signature",
    "mask_entities",
    "blank_token",
]

PairKey = tuple[str, str]  # (subject global_id, object global_id)


@dataclass
class PairStats:
    """Document-level counts N(e) and N(e_s, e_o)."""

    entity_doc_count: dict[str, int] = field(default_factory=dict)
    pair_doc_count: dict[PairKey, int] = field(default_factory=dict)

    def frequency(self, pair: PairKey) -> int:
        return self.pair_doc_count.get(pair, 0)


@dataclass(frozen=True)
class SelectedPair:
    subject: str
    object: str
    frequency: int
    pmi: float

    @property
    def key(self) -> PairKey:
        return (self.subject, self.object)


def compute_pair_stats(documents: Sequence[Document]) -> PairStats:
    """Count, per document, each entity and each ordered co-occurring entity pair."""
    stats = PairStats()
    for doc in documents:
        gids = [e.global_id for e in doc.entities]
        for g in gids:
            stats.entity_doc_count[g] = stats.entity_doc_count.get(g, 0) + 1
        for s, o in itertools.permutations(gids, 2):
            key = (s, o)
            stats.pair_doc_count[key] = stats.pair_doc_count.get(key, 0) + 1
    return stats


def pmi(stats: PairStats, pair: PairKey) -> float:
    """N(e_s, e_o) / (N(e_s) * N(e_o)). Raises LookupError for unseen pairs."""
    if pair not in stats.pair_doc_count:
        raise LookupError(f"pair {pair} not in statistics")
    s, o = pair
    return stats.pair_doc_count[pair] / (stats.entity_doc_count[s] * stats.entity_doc_count[o])


def select_pretraining_pairs(stats: PairStats, freq_threshold: int, top_k: int) -> list[SelectedPair]:
    """Drop pairs below the frequency threshold, rank survivors, keep the top K.

    Ranking is PMI descending, then frequency descending, then lexicographic
    pair id ascending, so identical inputs always produce identical output.
    """
    if freq_threshold < 1:
        raise ValueError(f"freq_threshold must be >= 1, got {freq_threshold}")
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    survivors = [
        SelectedPair(subject=s, object=o, frequency=n, pmi=pmi(stats, (s, o)))
        for (s, o), n in stats.pair_doc_count.items()
        if n >= freq_threshold
    ]
    survivors.sort(key=lambda sp: (-sp.pmi, -sp.frequency, sp.subject, sp.object))
    return survivors[:top_k]


def enumerate_positive_pairs(
    documents: Sequence[Document], selected: Sequence[SelectedPair]
) -> Iterator[tuple[PairInstance, PairInstance]]:
    """Yield cross-document instance pairs sharing a selected (subject, object).

    Instances are unlabeled PairInstances built from entity co-occurrence.
    Each unordered instance pair is yielded exactly once, and an instance is
    never paired with itself.
    """
    wanted = {sp.key for sp in selected}
    occurrences: dict[PairKey, list[PairInstance]] = {key: [] for key in wanted}
    for doc in documents:
        gid_of = [e.global_id for e in doc.entities]
        for s_local, o_local in itertools.permutations(range(len(doc.entities)), 2):
            key = (gid_of[s_local], gid_of[o_local])
            if key in wanted:
                occurrences[key].append(
                    PairInstance(document_id=doc.id, subject=s_local, object=o_local)
                )
    for sp in selected:
        instances = occurrences[sp.key]
        for a, b in itertools.combinations(instances, 2):
            yield a, b


def pair_type_signature(inst: PairInstance, docs_by_id: Mapping[str, Document]) -> tuple[str, str]:
    doc = docs_by_id[inst.document_id]
    return (doc.entities[inst.subject].entity_type, doc.entities[inst.object].entity_type)


def is_valid_negative(
    a: PairInstance, b: PairInstance, docs_by_id: Mapping[str, Document]
) -> bool:
    """True iff the two instances differ in subject type or object type.

    Same-typed pairs might share a relation, so only type-mismatched pairs
    are safe negatives. Symmetric in its arguments.
    """
    sig_a = pair_type_signature(a, docs_by_id)
    sig_b = pair_type_signature(b, docs_by_id)
    return sig_a[0] != sig_b[0] or sig_a[1] != sig_b[1]


def blank_token(entity_type: str) -> str:
    return f"[BLANK:{entity_type}]"


def mask_entities(doc: Document, probability: float, rng: np.random.Generator) -> Document:
    """Replace each entity, with the given probability, by a type-specific blank.

    The decision is per entity: either all of its mentions are blanked or
    none. A blanked mention becomes a single blank token, and all spans are
    shifted accordingly. Returns a new Document; the input is untouched.
    """
    if not 0 <= probability <= 1:
        raise ValueError(f"probability must be in [0, 1], got {probability}")
    masked = {e.local_id for e in doc.entities if rng.random() < probability}
    if not masked:
        return Document(
            id=doc.id, tokens=list(doc.tokens), entities=list(doc.entities), mentions=list(doc.mentions)
        )

    order = sorted(range(len(doc.mentions)), key=lambda i: doc.mentions[i].start)
    new_tokens: list[str] = []
    new_spans: dict[int, tuple[int, int]] = {}
    cursor = 0
    for i in order:
        m = doc.mentions[i]
        new_tokens.extend(doc.tokens[cursor : m.start])
        start = len(new_tokens)
        if m.entity in masked:
            new_tokens.append(blank_token(doc.entities[m.entity].entity_type))
        else:
            new_tokens.extend(doc.tokens[m.start : m.end])
        new_spans[i] = (start, len(new_tokens))
        cursor = m.end
    new_tokens.extend(doc.tokens[cursor:])

    new_mentions = [
        Mention(entity=doc.mentions[i].entity, start=new_spans[i][0], end=new_spans[i][1])
        for i in range(len(doc.mentions))
    ]
    return Document(id=doc.id, tokens=new_tokens, entities=list(doc.entities), mentions=new_mentions)
