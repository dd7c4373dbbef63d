"""Data model, corpus files, validation, and a synthetic relational world.

A corpus lives in a directory with three files:

  documents.jsonl   one JSON object per document
  labels.jsonl      one JSON object per labeled (subject, object) pair
  inventory.json    the relation inventory

Tokens are symbols from a closed vocabulary; whitespace tokenization is
assumed to have happened upstream. Mention spans are token-level and
half-open, and overlapping or nested mentions are rejected because the
marker insertion downstream requires disjoint spans.

The synthetic generator manufactures corpora with known ground truth:
gold labels are a function of the (subject, object) global ids only, the
same entity pair recurs across documents, and every non-NA relation is
expressed through several disjoint surface-template modes so that one
relation can form several clusters in embedding space.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "CorpusError",
    "CorpusFormatError",
    "CorpusValidationError",
    "Mention",
    "Entity",
    "Document",
    "PairInstance",
    "RelationInventory",
    "SyntheticWorldConfig",
    "SyntheticWorld",
    "validate_document",
    "validate_pair",
    "load_corpus",
    "save_corpus",
    "split_low_resource",
    "generate_synthetic_world",
    "split_documents",
    "pairs_for_documents",
    "documents_by_id",
]

DOCUMENTS_FILE = "documents.jsonl"
LABELS_FILE = "labels.jsonl"
INVENTORY_FILE = "inventory.json"
SPLITS_FILE = "splits.json"


class CorpusError(Exception):
    """Base class for corpus failures."""


class CorpusFormatError(CorpusError):
    """A corpus file could not be parsed. Carries the offending line number."""

    def __init__(self, path: str | Path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class CorpusValidationError(CorpusError):
    """An invariant was violated. ``field`` names the offending field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class Mention:
    """One contiguous span of tokens referring to an entity."""

    entity: int  # local id of the entity this mention belongs to
    start: int   # inclusive token index
    end: int     # exclusive token index


@dataclass(frozen=True)
class Entity:
    local_id: int
    global_id: str
    entity_type: str


@dataclass
class Document:
    id: str
    tokens: list[str]
    entities: list[Entity]
    mentions: list[Mention]

    def mentions_of(self, local_id: int) -> list[Mention]:
        return [m for m in self.mentions if m.entity == local_id]


@dataclass(frozen=True)
class PairInstance:
    """One (subject, object) entity pair in one document.

    ``labels`` is empty for unlabeled instances and for NA in multi-label
    corpora; single-label corpora carry NA explicitly as a singleton.
    """

    document_id: str
    subject: int
    object: int
    labels: frozenset[str] = frozenset()

    def key(self) -> tuple[str, int, int]:
        return (self.document_id, self.subject, self.object)


@dataclass(frozen=True)
class RelationInventory:
    relations: tuple[str, ...]
    na: str
    mode: str  # "single" or "multi"

    def __post_init__(self):
        if self.mode not in ("single", "multi"):
            raise CorpusValidationError("mode", f"unknown mode {self.mode!r}")
        if self.relations.count(self.na) != 1:
            raise CorpusValidationError("na", f"NA id {self.na!r} must appear exactly once")
        if len(set(self.relations)) != len(self.relations):
            raise CorpusValidationError("relations", "duplicate relation ids")

    @property
    def size(self) -> int:
        return len(self.relations)

    def index(self, relation: str) -> int:
        try:
            return self.relations.index(relation)
        except ValueError:
            raise CorpusValidationError("labels", f"unknown relation {relation!r}") from None

    @property
    def na_index(self) -> int:
        return self.relations.index(self.na)

    def non_na(self) -> tuple[str, ...]:
        return tuple(r for r in self.relations if r != self.na)


def validate_document(doc: Document, entity_types: set[str] | None = None) -> None:
    """Check all document invariants; raise CorpusValidationError on the first failure."""
    n = len(doc.tokens)
    if not doc.id:
        raise CorpusValidationError("id", "document id must be non-empty")
    seen_gids: set[str] = set()
    for i, ent in enumerate(doc.entities):
        if ent.local_id != i:
            raise CorpusValidationError("entities.local_id", f"doc {doc.id}: entity {i} has local_id {ent.local_id}")
        if not ent.global_id:
            raise CorpusValidationError("entities.global_id", f"doc {doc.id}: entity {i} has empty global_id")
        if ent.global_id in seen_gids:
            raise CorpusValidationError("entities.global_id", f"doc {doc.id}: duplicate global_id {ent.global_id!r}")
        seen_gids.add(ent.global_id)
        if entity_types is not None and ent.entity_type not in entity_types:
            raise CorpusValidationError("entities.type", f"doc {doc.id}: unknown entity type {ent.entity_type!r}")
    mentioned: set[int] = set()
    for m in doc.mentions:
        if not 0 <= m.entity < len(doc.entities):
            raise CorpusValidationError("mentions.entity", f"doc {doc.id}: mention entity {m.entity} out of range")
        if not (0 <= m.start < m.end <= n):
            raise CorpusValidationError(
                "mentions.span", f"doc {doc.id}: span [{m.start}, {m.end}) invalid for length {n}"
            )
        mentioned.add(m.entity)
    ordered = sorted(doc.mentions, key=lambda m: (m.start, m.end))
    for a, b in zip(ordered, ordered[1:]):
        if b.start < a.end:
            raise CorpusValidationError(
                "mentions.span", f"doc {doc.id}: overlapping mentions [{a.start},{a.end}) and [{b.start},{b.end})"
            )
    for i in range(len(doc.entities)):
        if i not in mentioned:
            raise CorpusValidationError("entities", f"doc {doc.id}: entity {i} has no mentions")


def validate_pair(pair: PairInstance, doc: Document, inventory: RelationInventory) -> None:
    if pair.subject == pair.object:
        raise CorpusValidationError("subject", f"doc {pair.document_id}: subject equals object ({pair.subject})")
    for which, local in (("subject", pair.subject), ("object", pair.object)):
        if not 0 <= local < len(doc.entities):
            raise CorpusValidationError(which, f"doc {pair.document_id}: entity {local} out of range")
    for rel in pair.labels:
        if rel not in inventory.relations:
            raise CorpusValidationError("labels", f"doc {pair.document_id}: unknown relation {rel!r}")
    if inventory.mode == "single" and len(pair.labels) != 1:
        raise CorpusValidationError(
            "labels", f"doc {pair.document_id}: single-label corpus requires exactly one label, got {len(pair.labels)}"
        )


# ---------------------------------------------------------------------------
# serialization
#
# Writers are canonical (fixed key order, compact separators) so that
# load(save(x)) reproduces save(x) byte for byte.
# ---------------------------------------------------------------------------


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=True)


def _document_to_obj(doc: Document) -> dict:
    return {
        "id": doc.id,
        "tokens": list(doc.tokens),
        "entities": [{"global_id": e.global_id, "type": e.entity_type} for e in doc.entities],
        "mentions": [{"entity": m.entity, "start": m.start, "end": m.end} for m in doc.mentions],
    }


def _document_from_obj(obj: dict) -> Document:
    entities = [
        Entity(local_id=i, global_id=e["global_id"], entity_type=e["type"])
        for i, e in enumerate(obj["entities"])
    ]
    mentions = [Mention(entity=m["entity"], start=m["start"], end=m["end"]) for m in obj["mentions"]]
    return Document(id=obj["id"], tokens=list(obj["tokens"]), entities=entities, mentions=mentions)


def _pair_to_obj(pair: PairInstance) -> dict:
    return {
        "document_id": pair.document_id,
        "subject": pair.subject,
        "object": pair.object,
        "labels": sorted(pair.labels),
    }


def _pair_from_obj(obj: dict) -> PairInstance:
    return PairInstance(
        document_id=obj["document_id"],
        subject=obj["subject"],
        object=obj["object"],
        labels=frozenset(obj["labels"]),
    )


def save_corpus(
    directory: str | Path,
    inventory: RelationInventory,
    documents: Sequence[Document],
    pairs: Sequence[PairInstance],
) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / DOCUMENTS_FILE, "w", encoding="utf-8", newline="\n") as f:
        for doc in documents:
            f.write(_dumps(_document_to_obj(doc)) + "\n")
    with open(directory / LABELS_FILE, "w", encoding="utf-8", newline="\n") as f:
        for pair in pairs:
            f.write(_dumps(_pair_to_obj(pair)) + "\n")
    inv = {"relations": list(inventory.relations), "na": inventory.na, "mode": inventory.mode}
    with open(directory / INVENTORY_FILE, "w", encoding="utf-8", newline="\n") as f:
        f.write(_dumps(inv) + "\n")


def _read_jsonl(path: Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(path, line_no, f"malformed JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise CorpusFormatError(path, line_no, "expected a JSON object")
            yield line_no, obj


def load_corpus(directory: str | Path) -> tuple[RelationInventory, list[Document], list[PairInstance]]:
    """Load and validate a corpus directory.

    Raises CorpusFormatError with a line number on parse failures and
    CorpusValidationError naming the field on invariant violations.
    """
    directory = Path(directory)
    with open(directory / INVENTORY_FILE, encoding="utf-8") as f:
        try:
            inv_obj = json.load(f)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(directory / INVENTORY_FILE, exc.lineno, f"malformed JSON: {exc.msg}") from exc
    inventory = RelationInventory(
        relations=tuple(inv_obj["relations"]), na=inv_obj["na"], mode=inv_obj["mode"]
    )

    documents: list[Document] = []
    doc_path = directory / DOCUMENTS_FILE
    for line_no, obj in _read_jsonl(doc_path):
        try:
            doc = _document_from_obj(obj)
        except (KeyError, TypeError) as exc:
            raise CorpusFormatError(doc_path, line_no, f"bad document record: {exc}") from exc
        validate_document(doc)
        documents.append(doc)
    by_id = documents_by_id(documents)
    if len(by_id) != len(documents):
        raise CorpusValidationError("id", "duplicate document ids")

    pairs: list[PairInstance] = []
    lab_path = directory / LABELS_FILE
    if lab_path.exists():
        for line_no, obj in _read_jsonl(lab_path):
            try:
                pair = _pair_from_obj(obj)
            except (KeyError, TypeError) as exc:
                raise CorpusFormatError(lab_path, line_no, f"bad label record: {exc}") from exc
            if pair.document_id not in by_id:
                raise CorpusValidationError("document_id", f"unknown document {pair.document_id!r}")
            validate_pair(pair, by_id[pair.document_id], inventory)
            pairs.append(pair)
    return inventory, documents, pairs


def documents_by_id(documents: Sequence[Document]) -> dict[str, Document]:
    return {doc.id: doc for doc in documents}


# ---------------------------------------------------------------------------
# low-resource sampling
# ---------------------------------------------------------------------------


def split_low_resource(pairs: Sequence[PairInstance], p: float, seed: int) -> list[PairInstance]:
    """Sample floor(p * N) pairs uniformly without replacement.

    A single seeded permutation is drawn and a prefix taken, so subsets are
    nested across increasing p at the same seed. The result preserves the
    original sequence order.
    """
    if not 0 < p <= 1:
        raise ValueError(f"p must be in (0, 1], got {p}")
    n = len(pairs)
    keep = math.floor(p * n)
    perm = np.random.default_rng(seed).permutation(n)
    chosen = sorted(perm[:keep].tolist())
    return [pairs[i] for i in chosen]


def split_documents(
    documents: Sequence[Document],
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15),
    seed: int = 0,
) -> dict[str, list[str]]:
    """Partition document ids into train/dev/test by a seeded shuffle."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    ids = [doc.id for doc in documents]
    perm = np.random.default_rng(seed).permutation(len(ids))
    n_train = math.floor(fractions[0] * len(ids))
    n_dev = math.floor(fractions[1] * len(ids))
    train = sorted(ids[i] for i in perm[:n_train])
    dev = sorted(ids[i] for i in perm[n_train : n_train + n_dev])
    test = sorted(ids[i] for i in perm[n_train + n_dev :])
    return {"train": train, "dev": dev, "test": test}


def pairs_for_documents(pairs: Sequence[PairInstance], doc_ids: Iterable[str]) -> list[PairInstance]:
    wanted = set(doc_ids)
    return [p for p in pairs if p.document_id in wanted]


# ---------------------------------------------------------------------------
# synthetic world
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticWorldConfig:
    n_entities: int = 420
    n_types: int = 4
    n_relations: int = 4          # non-NA relations; NA is added on top
    modes_per_relation: int = 2   # disjoint surface-template families per relation
    docs: int = 300
    pairs_per_doc: int = 5
    vocab_size: int = 512
    seed: int = 0
    na_fraction: float = 0.3      # fraction of pair slots labeled NA

    def __post_init__(self):
        for name in ("n_entities", "n_types", "n_relations", "modes_per_relation", "docs", "pairs_per_doc", "vocab_size"):
            if getattr(self, name) < 1:
                raise CorpusValidationError(name, "must be >= 1")
        if not 0 <= self.na_fraction < 1:
            raise CorpusValidationError("na_fraction", "must be in [0, 1)")
        if self.n_entities < 2 * self.n_types:
            raise CorpusValidationError("n_entities", "need at least two entities per type")


@dataclass
class SyntheticWorld:
    inventory: RelationInventory
    documents: list[Document]
    pairs: list[PairInstance]
    entity_types: dict[str, str]                 # global_id -> type
    pair_relation: dict[tuple[str, str], str]    # (subj gid, obj gid) -> relation incl NA
    pair_mode: dict[tuple[str, str], int]        # template mode per non-NA pair
    vocabulary_symbols: list[str]                # every token symbol the generator may emit


NA_ID = "na"
_FILLER_COUNT = 20
_GENERIC_COUNT = 8
_CTX_PER_TEMPLATE = 3


def _entity_name_tokens(gid: str) -> list[str]:
    # width-2 names for a third of entities so span bookkeeping gets exercised
    idx = int(gid[1:])
    if idx % 3 == 0:
        return [f"n{idx}", f"x{idx % 7}"]
    return [f"n{idx}"]


def generate_synthetic_world(config: SyntheticWorldConfig) -> SyntheticWorld:
    """Build a deterministic corpus with controllable multi-cluster structure.

    The entity budget is carved into disjoint pooled pairs, each entity
    belonging to exactly one pair, so document co-occurrence statistics
    reflect the relational structure rather than incidental entity reuse.
    Relation r applies to pairs typed (t[r % T], t[(r+1) % T]); NA pool
    pairs reuse the same type signatures so types alone never determine the
    label. Each pooled pair keeps one of ``modes_per_relation`` disjoint
    surface templates across all of its documents, and gold labels depend
    only on the pair of global ids.
    """
    rng = np.random.default_rng(config.seed)
    relations = tuple(f"r{j}" for j in range(config.n_relations)) + (NA_ID,)
    inventory = RelationInventory(relations=relations, na=NA_ID, mode="single")

    pool_total = config.n_entities // 2
    n_na_pairs = max(1, round(pool_total * config.na_fraction)) if config.na_fraction > 0 else 0
    per_relation = (pool_total - n_na_pairs) // config.n_relations
    if per_relation < config.modes_per_relation:
        raise CorpusValidationError(
            "n_entities",
            f"entity budget allows {per_relation} pairs per relation but "
            f"modes_per_relation is {config.modes_per_relation}",
        )

    ent_gids: list[str] = []
    entity_types: dict[str, str] = {}

    def _new_entity(entity_type: str) -> str:
        gid = f"e{len(ent_gids):03d}"
        ent_gids.append(gid)
        entity_types[gid] = entity_type
        return gid

    pair_relation: dict[tuple[str, str], str] = {}
    pair_mode: dict[tuple[str, str], int] = {}
    relation_pools: dict[str, list[tuple[str, str]]] = {}
    for j, rel in enumerate(inventory.non_na()):
        subj_t = f"t{j % config.n_types}"
        obj_t = f"t{(j + 1) % config.n_types}"
        pool = []
        for idx in range(per_relation):
            key = (_new_entity(subj_t), _new_entity(obj_t))
            pair_relation[key] = rel
            pair_mode[key] = idx % config.modes_per_relation
            pool.append(key)
        relation_pools[rel] = pool

    # NA pairs reuse the relation type signatures round-robin
    na_pool: list[tuple[str, str]] = []
    for j in range(n_na_pairs):
        subj_t = f"t{j % config.n_types}"
        obj_t = f"t{(j + 1) % config.n_types}"
        key = (_new_entity(subj_t), _new_entity(obj_t))
        pair_relation[key] = NA_ID
        na_pool.append(key)

    fillers = [f"f{i}" for i in range(_FILLER_COUNT)]
    generic = [f"g{i}" for i in range(_GENERIC_COUNT)]
    ctx: dict[tuple[str, int], list[str]] = {}
    for rel in inventory.non_na():
        for mode in range(config.modes_per_relation):
            ctx[(rel, mode)] = [f"c_{rel}_m{mode}_{k}" for k in range(_CTX_PER_TEMPLATE)]

    symbols: set[str] = set(fillers) | set(generic)
    for toks in ctx.values():
        symbols.update(toks)
    for gid in ent_gids:
        symbols.update(_entity_name_tokens(gid))
    # specials the encoder will add: [PAD] [E] [/E] [MASK] + one blank per type
    budget = len(symbols) + 4 + config.n_types
    if budget > config.vocab_size:
        raise CorpusValidationError(
            "vocab_size", f"generator needs {budget} symbols but vocab_size is {config.vocab_size}"
        )

    documents: list[Document] = []
    pairs: list[PairInstance] = []
    active_relations = list(inventory.non_na())
    for d in range(config.docs):
        doc_id = f"d{d:04d}"
        slot_keys: list[tuple[str, str]] = []
        guard = 0
        while len(slot_keys) < config.pairs_per_doc and guard < 100 * config.pairs_per_doc:
            guard += 1
            if na_pool and rng.random() < config.na_fraction:
                key = na_pool[int(rng.integers(len(na_pool)))]
            else:
                rel = active_relations[int(rng.integers(len(active_relations)))]
                pool = relation_pools[rel]
                key = pool[int(rng.integers(len(pool)))]
            if key in slot_keys:
                continue
            slot_keys.append(key)

        tokens: list[str] = []
        entities: list[Entity] = []
        mentions: list[Mention] = []
        local_of: dict[str, int] = {}

        def _local(gid: str) -> int:
            if gid not in local_of:
                local_of[gid] = len(entities)
                entities.append(Entity(local_id=len(entities), global_id=gid, entity_type=entity_types[gid]))
            return local_of[gid]

        def _emit_mention(gid: str) -> None:
            name = _entity_name_tokens(gid)
            mentions.append(Mention(entity=_local(gid), start=len(tokens), end=len(tokens) + len(name)))
            tokens.extend(name)

        for s_gid, o_gid in slot_keys:
            rel = pair_relation[(s_gid, o_gid)]
            if rel == NA_ID:
                words = [generic[int(rng.integers(len(generic)))] for _ in range(3)]
                tokens.append(words[0])
                _emit_mention(s_gid)
                tokens.append(words[1])
                _emit_mention(o_gid)
                tokens.append(words[2])
            else:
                a, b, c = ctx[(rel, pair_mode[(s_gid, o_gid)])]
                tokens.append(fillers[int(rng.integers(len(fillers)))])
                tokens.append(a)
                _emit_mention(s_gid)
                tokens.append(b)
                _emit_mention(o_gid)
                tokens.append(c)
            if rng.random() < 0.1:  # occasional second subject mention
                _emit_mention(s_gid)
            pairs.append(
                PairInstance(
                    document_id=doc_id,
                    subject=local_of[s_gid],
                    object=local_of[o_gid],
                    labels=frozenset({rel}),
                )
            )
        doc = Document(id=doc_id, tokens=tokens, entities=entities, mentions=mentions)
        validate_document(doc)
        documents.append(doc)

    return SyntheticWorld(
        inventory=inventory,
        documents=documents,
        pairs=pairs,
        entity_types=entity_types,
        pair_relation=pair_relation,
        pair_mode=pair_mode,
        vocabulary_symbols=sorted(symbols),
    )
