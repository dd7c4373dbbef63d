"""Embedding index over training pairs and the kNN prediction rules.

The index stores one unit-normalized embedding per (training pair, gold
relation); multi-labeled pairs are duplicated into each of their relation
groups and pairs with no positive label form the NA group. Queries are
scored per relation by the mean cosine similarity of the top-k most
similar stored instances (all of them when a group holds fewer than k),
shifted by the classwise bias carried over from the finetuned head.

Search is an exhaustive scan; at the scales this package targets that is
both cheap and exactly testable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .corpus import Document, PairInstance, RelationInventory, documents_by_id
from .trainer import Checkpoint, restore_encoder, restore_heads

__all__ = [
    "PredictionError",
    "EmbeddingIndex",
    "embed_pairs",
    "build_index",
    "knn_scores",
    "predict_single",
    "predict_multi",
    "nearest_centroid_predict",
    "SoftmaxProbe",
    "softmax_probe_fit",
    "save_index",
    "load_index",
]

NEG_INF = float("-inf")
INDEX_VERSION = 1


class PredictionError(Exception):
    pass


@dataclass
class EmbeddingIndex:
    relations: tuple[str, ...]
    na: str
    vectors: dict[str, np.ndarray]                       # relation -> (n_r, d) unit rows
    instance_ids: dict[str, list[tuple[str, int, int]]]  # relation -> (doc, subj, obj)
    biases: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for r in self.relations:
            self.vectors.setdefault(r, np.zeros((0, 0)))
            self.instance_ids.setdefault(r, [])
            self.biases.setdefault(r, 0.0)

    def size(self, relation: str) -> int:
        return len(self.instance_ids[relation])


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.maximum(norms, 1e-12)


def embed_pairs(
    ckpt: Checkpoint, documents: Sequence[Document] | Mapping[str, Document], pairs: Sequence[PairInstance]
) -> np.ndarray:
    """Eval-mode pair embeddings, one row per pair, not normalized."""
    model, vocab = restore_encoder(ckpt)
    docs = documents if isinstance(documents, Mapping) else documents_by_id(documents)
    encoded: dict[str, object] = {}
    out = np.zeros((len(pairs), ckpt.encoder_config.model_dim))
    with torch.no_grad():
        for i, pair in enumerate(pairs):
            if pair.document_id not in encoded:
                encoded[pair.document_id] = model.encode_document(docs[pair.document_id], vocab, train=False)
            enc = encoded[pair.document_id]
            z = model.pair_embedding(enc, docs[pair.document_id], pair.subject, pair.object)
            out[i] = z.numpy()
    return out


def build_index(
    ckpt: Checkpoint,
    documents: Sequence[Document] | Mapping[str, Document],
    pairs: Sequence[PairInstance],
    inventory: RelationInventory,
) -> EmbeddingIndex:
    """Embed every training pair and group it by its gold relation(s).

    Classwise biases are taken from the checkpoint's finetuned head when it
    has one and are zero otherwise. Proxies are parameters, not data, and
    never enter the index.
    """
    embeddings = _normalize_rows(embed_pairs(ckpt, documents, pairs)) if pairs else np.zeros((0, 0))
    grouped: dict[str, list[int]] = {r: [] for r in inventory.relations}
    for i, pair in enumerate(pairs):
        positives = [r for r in pair.labels if r != inventory.na]
        if inventory.mode == "single":
            (only,) = pair.labels
            grouped[only].append(i)
        elif positives:
            for r in sorted(positives):
                grouped[r].append(i)
        else:
            grouped[inventory.na].append(i)

    heads = restore_heads(ckpt)
    biases = {r: 0.0 for r in inventory.relations}
    if "bias" in heads:
        values = heads["bias"].values.detach().numpy()
        if len(values) == inventory.size:
            biases = {r: float(values[i]) for i, r in enumerate(inventory.relations)}

    vectors = {}
    instance_ids = {}
    for r in inventory.relations:
        idx = grouped[r]
        vectors[r] = embeddings[idx] if idx else np.zeros((0, embeddings.shape[1] if embeddings.size else 0))
        instance_ids[r] = [pairs[i].key() for i in idx]
    return EmbeddingIndex(
        relations=inventory.relations, na=inventory.na,
        vectors=vectors, instance_ids=instance_ids, biases=biases,
    )


def knn_scores(index: EmbeddingIndex, query: np.ndarray, k: int) -> dict[str, float]:
    """Mean cosine similarity to each relation's top-min(k, group size) instances.

    Relations with no stored instances score negative infinity.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = np.asarray(query, dtype=np.float64)
    q = q / max(float(np.linalg.norm(q)), 1e-12)
    scores: dict[str, float] = {}
    for r in index.relations:
        stored = index.vectors[r]
        if stored.shape[0] == 0:
            scores[r] = NEG_INF
            continue
        sims = stored @ q
        top = np.sort(sims)[::-1][: min(k, sims.shape[0])]
        scores[r] = float(top.mean())
    return scores


def predict_single(scores: Mapping[str, float], biases: Mapping[str, float],
                   relations: Sequence[str]) -> str:
    """Relation with the highest bias-shifted score; ties go to the lowest id."""
    best: str | None = None
    best_val = NEG_INF
    for r in relations:
        s = scores[r]
        if s == NEG_INF:
            continue
        val = s + biases.get(r, 0.0)
        if val > best_val:
            best, best_val = r, val
    if best is None:
        raise PredictionError("every relation has an empty index group")
    return best


def predict_multi(scores: Mapping[str, float], biases: Mapping[str, float],
                  relations: Sequence[str], na: str) -> set[str]:
    """All relations scoring strictly above NA; the empty set means NA."""
    na_score = scores[na]
    if na_score == NEG_INF:
        raise PredictionError("NA group is empty, the threshold is undefined")
    threshold = na_score + biases.get(na, 0.0)
    return {
        r for r in relations
        if r != na and scores[r] != NEG_INF and scores[r] + biases.get(r, 0.0) > threshold
    }


def nearest_centroid_predict(index: EmbeddingIndex, query: np.ndarray) -> str:
    """Cosine-nearest renormalized class centroid; empty groups are skipped."""
    q = np.asarray(query, dtype=np.float64)
    q = q / max(float(np.linalg.norm(q)), 1e-12)
    best: str | None = None
    best_val = NEG_INF
    for r in index.relations:
        stored = index.vectors[r]
        if stored.shape[0] == 0:
            continue
        centroid = stored.mean(axis=0)
        centroid = centroid / max(float(np.linalg.norm(centroid)), 1e-12)
        val = float(centroid @ q)
        if val > best_val:
            best, best_val = r, val
    if best is None:
        raise PredictionError("index is empty")
    return best


class SoftmaxProbe:
    """Multinomial logistic classifier fit on frozen embeddings."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = weight
        self.bias = bias

    def logits(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weight.T + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.logits(x).argmax(axis=-1)

    @staticmethod
    def loss_and_grads(
        weight: np.ndarray, bias: np.ndarray, x: np.ndarray, y: np.ndarray
    ) -> tuple[float, np.ndarray, np.ndarray]:
        logits = x @ weight.T + bias
        shifted = logits - logits.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True)) + logits.max(axis=1, keepdims=True)
        logp = logits - logz
        n = x.shape[0]
        loss = -logp[np.arange(n), y].mean()
        probs = np.exp(logp)
        probs[np.arange(n), y] -= 1.0
        probs /= n
        return float(loss), probs.T @ x, probs.sum(axis=0)


def softmax_probe_fit(
    embeddings: np.ndarray,
    labels: Sequence[int],
    n_classes: int,
    lr: float = 0.5,
    steps: int = 500,
    seed: int = 0,
) -> SoftmaxProbe:
    """Full-batch gradient descent to a fixed budget; deterministic under seed."""
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(list(labels), dtype=np.int64)
    rng = np.random.default_rng(seed)
    weight = rng.normal(0.0, 0.01, size=(n_classes, x.shape[1]))
    bias = np.zeros(n_classes)
    for _ in range(steps):
        _, gw, gb = SoftmaxProbe.loss_and_grads(weight, bias, x, y)
        weight -= lr * gw
        bias -= lr * gb
    return SoftmaxProbe(weight, bias)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_index(index: EmbeddingIndex, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "version": INDEX_VERSION,
        "relations": list(index.relations),
        "na": index.na,
        "biases": {r: index.biases[r] for r in index.relations},
        "instance_ids": {r: [list(t) for t in index.instance_ids[r]] for r in index.relations},
    }
    arrays = {f"vectors/{r}": index.vectors[r] for r in index.relations}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_index(path: str | Path) -> EmbeddingIndex:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        if meta["version"] != INDEX_VERSION:
            raise ValueError(f"unsupported index version {meta['version']}")
        vectors = {r: data[f"vectors/{r}"].copy() for r in meta["relations"]}
    return EmbeddingIndex(
        relations=tuple(meta["relations"]),
        na=meta["na"],
        vectors=vectors,
        instance_ids={r: [tuple(t) for t in ids] for r, ids in meta["instance_ids"].items()},
        biases=dict(meta["biases"]),
    )
