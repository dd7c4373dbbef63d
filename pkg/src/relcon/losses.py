"""Training objectives as differentiable scalar functions.

All losses consume float64 tensors and return scalar tensors through which
gradients flow to embeddings, head weights, proxies and biases. Every
softmax-like expression is computed via log-sum-exp with max subtraction
(torch.logsumexp / log_softmax), and cosine similarities use an epsilon
floor on the norms.

Naming:
  loss_rel              in-batch InfoNCE over recurring entity pairs
  loss_self             InfoNCE between two dropout views of each instance
  loss_mlm              masked-token cross-entropy
  loss_pretrain         unweighted sum of the three above
  loss_ce               softmax classifier cross-entropy
  loss_supcon           supervised contrastive loss over same-relation peers
  mccl_*  / loss_mccl   multi-center contrastive loss with proxies
  loss_atl              adaptive thresholding loss for multi-label data
  loss_mccl_multilabel  multi-center scores fed through loss_atl
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import torch
from torch import Tensor, nn

__all__ = [
    "EPS",
    "UndefinedLossError",
    "BatchView",
    "ProxyBank",
    "ClasswiseBias",
    "cosine_sim",
    "cosine_matrix",
    "loss_rel",
    "loss_self",
    "loss_mlm",
    "loss_pretrain",
    "loss_ce",
    "loss_supcon",
    "mccl_weights",
    "mccl_scores",
    "loss_mccl",
    "loss_atl",
    "loss_mccl_multilabel",
]

EPS = 1e-12


class UndefinedLossError(Exception):
    """Raised when a loss has no defined value on the given batch."""


def _unit(z: Tensor) -> Tensor:
    norm = z.norm(dim=-1, keepdim=True).clamp_min(EPS)
    return z / norm


def cosine_sim(z1: Tensor, z2: Tensor) -> Tensor:
    """Cosine similarity of two vectors, with an epsilon floor on the norms."""
    return (_unit(z1) * _unit(z2)).sum()


def cosine_matrix(a: Tensor, b: Tensor) -> Tensor:
    """(n, m) matrix of cosine similarities between rows of a and rows of b."""
    return _unit(a) @ _unit(b).T


@dataclass
class BatchView:
    """Embeddings of one batch plus label-derived grouping.

    ``groups`` maps a relation index to the instance indices carrying that
    relation; in multi-label batches an instance appears in one group per
    gold label and instances with no gold label form the NA group.
    ``second_pass`` holds embeddings of the same instances under a second
    dropout mask, aligned index-wise.
    """

    embeddings: Tensor
    labels: tuple = ()
    second_pass: Tensor | None = None
    groups: dict[int, list[int]] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    @staticmethod
    def from_single_labels(embeddings: Tensor, labels: Sequence[int], n_relations: int) -> "BatchView":
        groups: dict[int, list[int]] = {r: [] for r in range(n_relations)}
        for i, y in enumerate(labels):
            groups[int(y)].append(i)
        return BatchView(embeddings=embeddings, labels=tuple(int(y) for y in labels), groups=groups)

    @staticmethod
    def from_label_sets(
        embeddings: Tensor,
        label_sets: Sequence[frozenset[int] | set[int]],
        n_relations: int,
        na_index: int,
    ) -> "BatchView":
        groups: dict[int, list[int]] = {r: [] for r in range(n_relations)}
        for i, labels in enumerate(label_sets):
            positives = {int(r) for r in labels if int(r) != na_index}
            if positives:
                for r in sorted(positives):
                    groups[r].append(i)
            else:
                groups[na_index].append(i)
        return BatchView(
            embeddings=embeddings,
            labels=tuple(frozenset(int(r) for r in ls) for ls in label_sets),
            groups=groups,
        )


class ProxyBank(nn.Module):
    """One trainable embedding per relation, used as a guaranteed candidate."""

    def __init__(self, n_relations: int, dim: int, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        init = torch.randn(n_relations, dim, generator=gen, dtype=torch.float64) / dim**0.5
        self.vectors = nn.Parameter(init)

    @property
    def n_relations(self) -> int:
        return self.vectors.shape[0]


class ClasswiseBias(nn.Module):
    def __init__(self, n_relations: int):
        super().__init__()
        self.values = nn.Parameter(torch.zeros(n_relations, dtype=torch.float64))


# ---------------------------------------------------------------------------
# pretraining losses
# ---------------------------------------------------------------------------


def loss_rel(
    batch: BatchView,
    positives: Sequence[tuple[int, int]],
    negatives: Mapping[int, Sequence[int]],
    tau: float,
) -> Tensor:
    """InfoNCE over recurring entity pairs.

    For each anchored positive (i, j), the normalizer holds the positive
    term plus the anchor's type-filtered in-batch negatives. An anchor with
    no negatives contributes zero loss.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if len(positives) == 0:
        raise UndefinedLossError("no positive pairs in batch")
    sims = cosine_matrix(batch.embeddings, batch.embeddings)
    terms = []
    for i, j in positives:
        logits = [sims[i, j] / tau]
        for k in negatives.get(i, ()):
            logits.append(sims[i, k] / tau)
        stacked = torch.stack(logits)
        terms.append(stacked[0] - torch.logsumexp(stacked, dim=0))
    return -torch.stack(terms).mean()


def loss_self(batch: BatchView, tau: float, anchors: Sequence[int] | None = None) -> Tensor:
    """InfoNCE between the two dropout views of each anchor.

    The positive for anchor i is its own second-pass embedding; the
    normalizer adds the second-pass embeddings of every other instance in
    the batch. A single-instance batch yields exactly zero.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if batch.second_pass is None:
        raise UndefinedLossError("batch has no second-pass embeddings")
    n = len(batch)
    idx = list(range(n)) if anchors is None else list(anchors)
    if not idx:
        raise UndefinedLossError("no anchors for the self-supervised loss")
    sims = cosine_matrix(batch.embeddings, batch.second_pass)
    terms = []
    for i in idx:
        others = [k for k in range(n) if k != i]
        logits = torch.cat([sims[i, i].reshape(1), sims[i, others]]) / tau
        terms.append(logits[0] - torch.logsumexp(logits, dim=0))
    return -torch.stack(terms).mean()


def loss_mlm(logits: Tensor, targets: Tensor) -> Tensor:
    """Mean cross-entropy over masked positions; zero when none are masked."""
    if logits.shape[0] == 0:
        return torch.zeros((), dtype=logits.dtype)
    logp = torch.log_softmax(logits, dim=-1)
    return -logp[torch.arange(logits.shape[0]), targets].mean()


def loss_pretrain(l_rel: Tensor, l_self: Tensor, l_mlm: Tensor) -> Tensor:
    return l_rel + l_self + l_mlm


# ---------------------------------------------------------------------------
# finetuning losses
# ---------------------------------------------------------------------------


def loss_ce(embeddings: Tensor, labels: Sequence[int], weight: Tensor, bias: Tensor) -> Tensor:
    """Softmax-classifier cross-entropy on pair embeddings."""
    y = torch.as_tensor(list(labels), dtype=torch.long)
    logits = embeddings @ weight.T + bias
    logp = torch.log_softmax(logits, dim=-1)
    return -logp[torch.arange(len(y)), y].mean()


def loss_supcon(batch: BatchView, tau: float) -> Tensor:
    """Supervised contrastive loss: same-relation instances are positives.

    Anchors without a same-relation peer are skipped; if no anchor has one
    the loss is undefined.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    n = len(batch)
    sims = cosine_matrix(batch.embeddings, batch.embeddings)
    labels = batch.labels
    terms = []
    for i in range(n):
        peers = [j for j in range(n) if j != i and labels[j] == labels[i]]
        if not peers:
            continue
        others = [j for j in range(n) if j != i]
        denom = torch.logsumexp(sims[i, others] / tau, dim=0)
        anchor_terms = [sims[i, j] / tau - denom for j in peers]
        terms.append(-torch.stack(anchor_terms).mean())
    if not terms:
        raise UndefinedLossError("no anchor has a same-relation peer")
    return torch.stack(terms).mean()


def mccl_weights(candidate_sims: Tensor, tau1: float) -> Tensor:
    """Softmax weighting of one anchor's similarities to one relation's candidates."""
    if tau1 <= 0:
        raise ValueError(f"tau1 must be positive, got {tau1}")
    return torch.softmax(candidate_sims / tau1, dim=0)


def mccl_scores(batch: BatchView, proxies: ProxyBank, tau1: float) -> Tensor:
    """(n, R) matrix of per-relation scores.

    The score of instance i for relation r is the softmax-weighted average
    similarity between i and relation r's candidates: its in-batch members
    minus i itself, plus the relation's proxy. The proxy guarantees the
    candidate set is never empty; proxies are candidates only, never anchors.
    """
    n = len(batch)
    n_rel = proxies.n_relations
    inst_sims = cosine_matrix(batch.embeddings, batch.embeddings)
    proxy_sims = cosine_matrix(batch.embeddings, proxies.vectors)
    rows = []
    for i in range(n):
        cells = []
        for r in range(n_rel):
            members = [j for j in batch.groups.get(r, ()) if j != i]
            sims = [inst_sims[i, j] for j in members] + [proxy_sims[i, r]]
            cand = torch.stack(sims)
            w = mccl_weights(cand, tau1)
            cells.append((w * cand).sum())
        rows.append(torch.stack(cells))
    return torch.stack(rows)


def loss_mccl(scores: Tensor, biases: Tensor, tau2: float, labels: Sequence[int]) -> Tensor:
    """Cross-entropy over bias-shifted, temperature-scaled relation scores."""
    if tau2 <= 0:
        raise ValueError(f"tau2 must be positive, got {tau2}")
    y = torch.as_tensor(list(labels), dtype=torch.long)
    logits = (scores + biases) / tau2
    logp = torch.log_softmax(logits, dim=-1)
    return -logp[torch.arange(len(y)), y].mean()


def loss_atl(logits: Tensor, positive: Sequence[int], na_index: int) -> Tensor:
    """Adaptive thresholding loss for one instance.

    Pushes every positive logit above the NA logit (first term, softmax over
    positives plus NA) and the NA logit above all remaining non-NA logits
    (second term). With no positives only the second term remains; with no
    negatives the second term is zero.
    """
    n_rel = logits.shape[0]
    pos = sorted(set(int(r) for r in positive))
    if na_index in pos:
        raise ValueError("positive set must not contain NA")
    neg = [r for r in range(n_rel) if r != na_index and r not in pos]
    total = torch.zeros((), dtype=logits.dtype)
    if pos:
        denom1 = torch.logsumexp(logits[pos + [na_index]], dim=0)
        total = total + (denom1 - logits[pos]).sum()
    denom2 = torch.logsumexp(logits[neg + [na_index]], dim=0)
    total = total + denom2 - logits[na_index]
    return total


def loss_mccl_multilabel(
    batch: BatchView,
    proxies: ProxyBank,
    biases: Tensor,
    tau1: float,
    tau2: float,
    na_index: int,
) -> Tensor:
    """Multi-center scores fed through the adaptive thresholding loss, averaged."""
    if tau2 <= 0:
        raise ValueError(f"tau2 must be positive, got {tau2}")
    scores = mccl_scores(batch, proxies, tau1)
    logits = (scores + biases) / tau2
    per_instance = []
    for i, labels in enumerate(batch.labels):
        pos = [int(r) for r in labels if int(r) != na_index]
        per_instance.append(loss_atl(logits[i], pos, na_index))
    return torch.stack(per_instance).mean()
