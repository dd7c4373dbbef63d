"""Metrics, k selection, probing, and the low-resource experiment protocol.

micro-F1 counts true/false positives over non-NA predicted labels across
all records; NA never contributes to TP, FP or FN. The "ignore" variant
removes gold facts already present in the training split from both the TP
and FN accounting (they are ignored, not penalized) while false positives
are kept as they are. Facts are deduplicated global triples
(subject global id, relation, object global id).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Document, PairInstance, RelationInventory, documents_by_id, pairs_for_documents, split_low_resource
from .inference import (
    EmbeddingIndex,
    build_index,
    embed_pairs,
    knn_scores,
    nearest_centroid_predict,
    predict_multi,
    predict_single,
    softmax_probe_fit,
)
from .trainer import Checkpoint, TrainConfig, finetune, restore_heads

__all__ = [
    "PredictionRecord",
    "Fact",
    "micro_f1",
    "micro_f1_ign",
    "facts_from_pairs",
    "select_k",
    "K_GRID",
    "probe_embeddings",
    "probe",
    "predict_records",
    "run_low_resource_cell",
    "CellResult",
]

K_GRID = (1, 3, 5, 10, 20)


@dataclass(frozen=True)
class PredictionRecord:
    document_id: str
    subject: int
    object: int
    predicted: frozenset[str]
    gold: frozenset[str]


@dataclass(frozen=True)
class Fact:
    subject: str
    relation: str
    object: str


def micro_f1(records: Iterable[PredictionRecord], na: str) -> tuple[float, float, float]:
    """(precision, recall, f1) over non-NA labels; all zero when undefined."""
    tp = fp = fn = 0
    for rec in records:
        pred = {r for r in rec.predicted if r != na}
        gold = {r for r in rec.gold if r != na}
        tp += len(pred & gold)
        fp += len(pred - gold)
        fn += len(gold - pred)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def facts_from_pairs(
    pairs: Sequence[PairInstance], docs_by_id: Mapping[str, Document], na: str
) -> set[Fact]:
    facts: set[Fact] = set()
    for pair in pairs:
        doc = docs_by_id[pair.document_id]
        s = doc.entities[pair.subject].global_id
        o = doc.entities[pair.object].global_id
        for r in pair.labels:
            if r != na:
                facts.add(Fact(subject=s, relation=r, object=o))
    return facts


def micro_f1_ign(
    records: Iterable[PredictionRecord],
    train_facts: set[Fact],
    docs_by_id: Mapping[str, Document],
    na: str,
) -> float:
    """micro-F1 after removing train-set facts from TP and FN accounting."""
    tp = fp = fn = 0
    for rec in records:
        doc = docs_by_id[rec.document_id]
        s = doc.entities[rec.subject].global_id
        o = doc.entities[rec.object].global_id
        pred = {r for r in rec.predicted if r != na}
        gold = {r for r in rec.gold if r != na}
        fresh = {r for r in gold if Fact(subject=s, relation=r, object=o) not in train_facts}
        tp += len(pred & fresh)
        fp += len(pred - gold)
        fn += len(fresh - pred)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


def select_k(records_by_k: Mapping[int, Sequence[PredictionRecord]], na: str) -> int:
    """k with the best dev micro-F1; the smallest k wins ties."""
    if not records_by_k:
        raise ValueError("no candidate k values")
    best_k = None
    best_f1 = -1.0
    for k in sorted(records_by_k):
        f1 = micro_f1(records_by_k[k], na)[2]
        if f1 > best_f1:
            best_k, best_f1 = k, f1
    return best_k


# ---------------------------------------------------------------------------
# prediction over splits
# ---------------------------------------------------------------------------


def predict_records(
    index: EmbeddingIndex,
    queries: np.ndarray,
    pairs: Sequence[PairInstance],
    inventory: RelationInventory,
    k: int,
) -> list[PredictionRecord]:
    """Classwise kNN predictions for each query pair."""
    records = []
    for q, pair in zip(queries, pairs):
        scores = knn_scores(index, q, k)
        if inventory.mode == "single":
            pred = frozenset({predict_single(scores, index.biases, inventory.relations)})
        else:
            pred = frozenset(predict_multi(scores, index.biases, inventory.relations, inventory.na))
        records.append(
            PredictionRecord(
                document_id=pair.document_id,
                subject=pair.subject,
                object=pair.object,
                predicted=pred,
                gold=pair.labels,
            )
        )
    return records


def _gold_single(pair: PairInstance) -> frozenset[str]:
    return pair.labels


# ---------------------------------------------------------------------------
# probing harness
# ---------------------------------------------------------------------------


def _index_from_arrays(
    train: np.ndarray, labels: Sequence[str], inventory: RelationInventory
) -> EmbeddingIndex:
    norms = np.linalg.norm(train, axis=1, keepdims=True)
    unit = train / np.maximum(norms, 1e-12)
    vectors: dict[str, list[int]] = {r: [] for r in inventory.relations}
    for i, r in enumerate(labels):
        vectors[r].append(i)
    return EmbeddingIndex(
        relations=inventory.relations,
        na=inventory.na,
        vectors={r: unit[idx] if idx else np.zeros((0, train.shape[1])) for r, idx in vectors.items()},
        instance_ids={r: [("", i, 0) for i in idx] for r, idx in vectors.items()},
        biases={r: 0.0 for r in inventory.relations},
    )


def probe_embeddings(
    train: np.ndarray,
    train_labels: Sequence[str],
    test: np.ndarray,
    test_labels: Sequence[str],
    inventory: RelationInventory,
    k: int = 5,
    seed: int = 0,
) -> dict[str, float]:
    """Fit the three frozen-representation probes and report micro-F1 each.

    The softmax and nearest-centroid probes assume one cluster per relation;
    classwise kNN does not, which is exactly what the report contrasts.
    """
    index = _index_from_arrays(train, train_labels, inventory)
    y_train = [inventory.index(r) for r in train_labels]
    clf = softmax_probe_fit(train, y_train, inventory.size, seed=seed)

    def rec(pred: str, gold: str, i: int) -> PredictionRecord:
        return PredictionRecord(
            document_id=f"q{i}", subject=0, object=1,
            predicted=frozenset({pred}), gold=frozenset({gold}),
        )

    knn_records = []
    centroid_records = []
    softmax_records = []
    softmax_pred = clf.predict(test)
    for i, (q, gold) in enumerate(zip(test, test_labels)):
        scores = knn_scores(index, q, k)
        knn_records.append(rec(predict_single(scores, index.biases, inventory.relations), gold, i))
        centroid_records.append(rec(nearest_centroid_predict(index, q), gold, i))
        softmax_records.append(rec(inventory.relations[int(softmax_pred[i])], gold, i))
    return {
        "softmax": micro_f1(softmax_records, inventory.na)[2],
        "nearest_centroid": micro_f1(centroid_records, inventory.na)[2],
        "classwise_knn": micro_f1(knn_records, inventory.na)[2],
    }


def probe(
    ckpt: Checkpoint,
    documents: Sequence[Document],
    train_pairs: Sequence[PairInstance],
    test_pairs: Sequence[PairInstance],
    inventory: RelationInventory,
    k: int = 5,
    seed: int = 0,
) -> dict[str, float]:
    """Table-style probing of a frozen checkpoint on labeled pairs."""
    if inventory.mode != "single":
        raise ValueError("probing requires single-label data")
    docs = documents_by_id(documents)
    train_x = embed_pairs(ckpt, docs, train_pairs)
    test_x = embed_pairs(ckpt, docs, test_pairs)

    def only_label(p: PairInstance) -> str:
        (lab,) = p.labels
        return lab

    return probe_embeddings(
        train_x, [only_label(p) for p in train_pairs],
        test_x, [only_label(p) for p in test_pairs],
        inventory, k=k, seed=seed,
    )


# ---------------------------------------------------------------------------
# low-resource protocol
# ---------------------------------------------------------------------------


@dataclass
class CellResult:
    objective: str
    init: str
    p: float
    seed: int
    k: int | None
    precision: float
    recall: float
    f1: float
    f1_ign: float


def run_low_resource_cell(
    documents: Sequence[Document],
    pairs: Sequence[PairInstance],
    inventory: RelationInventory,
    splits: Mapping[str, Sequence[str]],
    init_checkpoint: Checkpoint,
    objective: str,
    init_name: str,
    p: float,
    seed: int,
    train_config: TrainConfig,
) -> CellResult:
    """One (objective, init, p, seed) cell of the low-resource protocol.

    Samples p of the train and dev pairs, finetunes (unless the objective is
    "lazy"), selects k on dev for kNN-based objectives, and evaluates micro-
    F1 and its ignore variant on the test split.
    """
    docs = documents_by_id(documents)
    train_all = pairs_for_documents(pairs, splits["train"])
    dev_all = pairs_for_documents(pairs, splits["dev"])
    test_pairs = pairs_for_documents(pairs, splits["test"])
    train_pairs = split_low_resource(train_all, p, seed)
    dev_pairs = split_low_resource(dev_all, p, seed) if dev_all else []

    cfg = TrainConfig(**{**train_config.to_dict(), "seed": seed,
                         "objective": train_config.objective if objective == "lazy" else objective})
    if objective == "lazy":
        ckpt = init_checkpoint
    else:
        ckpt = finetune(documents, train_pairs, inventory, init_checkpoint, cfg)

    train_facts = facts_from_pairs(train_pairs, docs, inventory.na)

    if objective == "ce":
        heads = restore_heads(ckpt)
        clf = heads["classifier"]
        weight = clf.weight.detach().numpy()
        bias = clf.bias.detach().numpy()
        test_x = embed_pairs(ckpt, docs, test_pairs)
        logits = test_x @ weight.T + bias
        preds = logits.argmax(axis=1)
        records = [
            PredictionRecord(
                document_id=pair.document_id, subject=pair.subject, object=pair.object,
                predicted=frozenset({inventory.relations[int(pred)]}), gold=pair.labels,
            )
            for pair, pred in zip(test_pairs, preds)
        ]
        chosen_k = None
    else:
        index = build_index(ckpt, docs, train_pairs, inventory)
        if dev_pairs:
            dev_x = embed_pairs(ckpt, docs, dev_pairs)
            records_by_k = {k: predict_records(index, dev_x, dev_pairs, inventory, k) for k in K_GRID}
            chosen_k = select_k(records_by_k, inventory.na)
        else:
            chosen_k = K_GRID[0]
        test_x = embed_pairs(ckpt, docs, test_pairs)
        records = predict_records(index, test_x, test_pairs, inventory, chosen_k)

    precision, recall, f1 = micro_f1(records, inventory.na)
    f1_ign = micro_f1_ign(records, train_facts, docs, inventory.na)
    return CellResult(
        objective=objective, init=init_name, p=p, seed=seed, k=chosen_k,
        precision=precision, recall=recall, f1=f1, f1_ign=f1_ign,
    )
