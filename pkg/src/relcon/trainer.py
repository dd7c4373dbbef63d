"""Training loops, the optimizer, and checkpoint serialization.

Pretraining assembles batches of recurring-entity-pair positives, masks
entities and language-model targets, runs two dropout-seeded forward
passes per document, and optimizes the summed contrastive + self-
supervised + masked-LM objective. Finetuning trains one of the labeled
objectives on top of a restored encoder. Both loops are pure functions of
(corpus, config, seed): all randomness flows through one numpy generator
and the explicit dropout seeds.

Checkpoints are uncompressed .npz containers of named float64 arrays plus
a JSON metadata block; a reload reproduces the forward pass bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .corpus import Document, PairInstance, RelationInventory, documents_by_id
from .encoder import (
    MARKER_CLOSE,
    MARKER_OPEN,
    Encoder,
    EncoderConfig,
    Vocabulary,
    insert_markers,
)
from .losses import (
    BatchView,
    ClasswiseBias,
    ProxyBank,
    UndefinedLossError,
    loss_ce,
    loss_mccl,
    loss_mccl_multilabel,
    loss_mlm,
    loss_pretrain,
    loss_rel,
    loss_self,
    loss_supcon,
    mccl_scores,
)
from .mining import SelectedPair, enumerate_positive_pairs, mask_entities, pair_type_signature

__all__ = [
    "TrainConfig",
    "Checkpoint",
    "AdamW",
    "ClassifierHead",
    "apply_mlm_mask",
    "pretrain",
    "finetune",
    "save_checkpoint",
    "load_checkpoint",
    "restore_encoder",
    "restore_heads",
    "new_random_checkpoint",
]

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

OBJECTIVES = ("ce", "supcon", "mccl", "mccl_multilabel")


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "mccl"
    batch_size: int = 16
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    epochs: int = 3
    tau: float = 0.05          # pretraining temperature
    tau1: float = 0.2          # candidate weighting temperature
    tau2: float = 0.2          # score softmax temperature
    mask_prob: float = 0.7     # entity masking probability in pretraining
    mlm_rate: float = 0.15     # fraction of non-marker tokens given LM targets
    na_subsample: float = 1.0  # keep probability for NA pairs during finetuning
    warmup_steps: int = 0
    max_steps: int = 0         # optimizer-step budget; 0 means run all epochs
    seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        for name in ("tau", "tau1", "tau2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("mask_prob", "mlm_rate", "na_subsample"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {v}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _fingerprint(*dicts: Mapping) -> str:
    payload = json.dumps(list(dicts), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class AdamW:
    """Adam with decoupled weight decay over a named parameter dict.

    Decay is not applied to one-dimensional parameters (biases, layer-norm
    vectors, classwise biases) nor to proxy vectors. A step with any
    non-finite gradient is rejected and reported rather than applied.
    """

    def __init__(
        self,
        params: Mapping[str, nn.Parameter],
        lr: float,
        weight_decay: float = 0.01,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = dict(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = {k: torch.zeros_like(p) for k, p in self.params.items()}
        self.v = {k: torch.zeros_like(p) for k, p in self.params.items()}

    @staticmethod
    def decay_exempt(name: str, param: Tensor) -> bool:
        return param.ndim <= 1 or name.endswith("proxies.vectors") or name == "proxies.vectors"

    def step(self, grads: Mapping[str, Tensor] | None = None) -> bool:
        if grads is None:
            grads = {k: (p.grad if p.grad is not None else torch.zeros_like(p)) for k, p in self.params.items()}
        for k, g in grads.items():
            if not torch.isfinite(g).all():
                log.warning("rejecting optimizer step %d: non-finite gradient in %s", self.t + 1, k)
                return False
        self.t += 1
        b1, b2 = self.betas
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        with torch.no_grad():
            for k, p in self.params.items():
                g = grads[k]
                self.m[k].mul_(b1).add_(g, alpha=1 - b1)
                self.v[k].mul_(b2).addcmul_(g, g, value=1 - b2)
                m_hat = self.m[k] / bias1
                v_hat = self.v[k] / bias2
                if self.weight_decay and not self.decay_exempt(k, p):
                    p.mul_(1.0 - self.lr * self.weight_decay)
                p.addcdiv_(m_hat, v_hat.sqrt().add_(self.eps), value=-self.lr)
        return True

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for k in self.params:
            out[f"m/{k}"] = self.m[k].detach().numpy().copy()
            out[f"v/{k}"] = self.v[k].detach().numpy().copy()
        return out

    def load_state_arrays(self, arrays: Mapping[str, np.ndarray], t: int) -> None:
        self.t = t
        for k in self.params:
            self.m[k] = torch.from_numpy(arrays[f"m/{k}"].copy())
            self.v[k] = torch.from_numpy(arrays[f"v/{k}"].copy())


class ClassifierHead(nn.Module):
    """Linear softmax classifier over pair embeddings."""

    def __init__(self, n_relations: int, dim: int, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.weight = nn.Parameter(torch.randn(n_relations, dim, generator=gen, dtype=torch.float64) * 0.02)
        self.bias = nn.Parameter(torch.zeros(n_relations, dtype=torch.float64))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    encoder_config: EncoderConfig
    vocab_symbols: list[str]
    params: dict[str, np.ndarray]
    step: int = 0
    optimizer_state: dict[str, np.ndarray] | None = None
    optimizer_step: int = 0
    config_fingerprint: str = ""
    extras: dict = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.extras is None:
            self.extras = {}


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "version": CHECKPOINT_VERSION,
        "encoder_config": ckpt.encoder_config.to_dict(),
        "vocab": ckpt.vocab_symbols,
        "step": ckpt.step,
        "optimizer_step": ckpt.optimizer_step,
        "fingerprint": ckpt.config_fingerprint,
        "extras": ckpt.extras,
        "has_optimizer": ckpt.optimizer_state is not None,
    }
    arrays = {f"param/{k}": v for k, v in ckpt.params.items()}
    if ckpt.optimizer_state is not None:
        arrays.update({f"opt/{k}": v for k, v in ckpt.optimizer_state.items()})
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path: str | Path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        params = {k[len("param/") :]: data[k].copy() for k in data.files if k.startswith("param/")}
        opt = None
        if meta.get("has_optimizer"):
            opt = {k[len("opt/") :]: data[k].copy() for k in data.files if k.startswith("opt/")}
    return Checkpoint(
        encoder_config=EncoderConfig(**meta["encoder_config"]),
        vocab_symbols=list(meta["vocab"]),
        params=params,
        step=meta["step"],
        optimizer_state=opt,
        optimizer_step=meta.get("optimizer_step", 0),
        config_fingerprint=meta.get("fingerprint", ""),
        extras=meta.get("extras", {}),
    )


def _collect_params(model: Encoder, heads: Mapping[str, nn.Module] | None = None) -> dict[str, nn.Parameter]:
    params = {f"encoder.{name}": p for name, p in model.named_parameters()}
    for prefix, module in (heads or {}).items():
        for name, p in module.named_parameters():
            params[f"{prefix}.{name}"] = p
    return params


def _params_to_arrays(params: Mapping[str, nn.Parameter]) -> dict[str, np.ndarray]:
    return {k: p.detach().numpy().copy() for k, p in params.items()}


def restore_encoder(ckpt: Checkpoint) -> tuple[Encoder, Vocabulary]:
    model = Encoder(ckpt.encoder_config)
    vocab = Vocabulary(ckpt.vocab_symbols)
    with torch.no_grad():
        for name, p in model.named_parameters():
            key = f"encoder.{name}"
            if key in ckpt.params:
                p.copy_(torch.from_numpy(ckpt.params[key]))
    return model, vocab


def restore_heads(ckpt: Checkpoint) -> dict[str, nn.Module]:
    """Rebuild whichever finetuning heads the checkpoint carries."""
    heads: dict[str, nn.Module] = {}
    d = ckpt.encoder_config.model_dim
    if "classifier.weight" in ckpt.params:
        n_rel = ckpt.params["classifier.weight"].shape[0]
        head = ClassifierHead(n_rel, d)
        with torch.no_grad():
            head.weight.copy_(torch.from_numpy(ckpt.params["classifier.weight"]))
            head.bias.copy_(torch.from_numpy(ckpt.params["classifier.bias"]))
        heads["classifier"] = head
    if "proxies.vectors" in ckpt.params:
        n_rel = ckpt.params["proxies.vectors"].shape[0]
        bank = ProxyBank(n_rel, d)
        with torch.no_grad():
            bank.vectors.copy_(torch.from_numpy(ckpt.params["proxies.vectors"]))
        heads["proxies"] = bank
    if "bias.values" in ckpt.params:
        n_rel = ckpt.params["bias.values"].shape[0]
        cb = ClasswiseBias(n_rel)
        with torch.no_grad():
            cb.values.copy_(torch.from_numpy(ckpt.params["bias.values"]))
        heads["bias"] = cb
    return heads


def derive_encoder_config(
    documents: Sequence[Document], vocab: Vocabulary, seed: int, base: EncoderConfig | None = None
) -> EncoderConfig:
    """Fill in vocab_size and max_len from the corpus when not pinned."""
    longest = 0
    for doc in documents:
        longest = max(longest, len(doc.tokens) + 2 * len(doc.mentions))
    base = base or EncoderConfig()
    return replace(base, vocab_size=max(len(vocab), base.vocab_size if base.vocab_size else 0),
                   max_len=max(longest, 16), seed=seed)


def new_random_checkpoint(
    documents: Sequence[Document],
    seed: int,
    encoder_config: EncoderConfig | None = None,
) -> Checkpoint:
    """A freshly initialized encoder, the no-pretraining baseline."""
    vocab = Vocabulary.from_corpus(documents)
    cfg = derive_encoder_config(documents, vocab, seed, encoder_config)
    model = Encoder(cfg)
    params = _params_to_arrays(_collect_params(model))
    return Checkpoint(
        encoder_config=cfg,
        vocab_symbols=vocab.symbols,
        params=params,
        config_fingerprint=_fingerprint(cfg.to_dict(), {"init": "random", "seed": seed}),
        extras={"kind": "random-init"},
    )


# ---------------------------------------------------------------------------
# masking
# ---------------------------------------------------------------------------


def apply_mlm_mask(
    token_ids: Sequence[int],
    protected: set[int],
    rate: float,
    rng: np.random.Generator,
    vocab: Vocabulary,
) -> tuple[list[int], list[int], list[int]]:
    """Standard 80/10/10 masked-LM corruption of non-protected positions.

    Returns (corrupted ids, masked positions, original target ids at those
    positions).
    """
    mask_id = vocab.id("[MASK]")
    regular = vocab.regular_ids
    out = list(token_ids)
    positions: list[int] = []
    targets: list[int] = []
    for i, tid in enumerate(token_ids):
        if i in protected:
            continue
        if rng.random() >= rate:
            continue
        positions.append(i)
        targets.append(tid)
        roll = rng.random()
        if roll < 0.8:
            out[i] = mask_id
        elif roll < 0.9:
            out[i] = int(regular.start + rng.integers(len(regular)))
        # else keep the original token
    return out, positions, targets


# ---------------------------------------------------------------------------
# metric logging
# ---------------------------------------------------------------------------


class _CsvLog:
    def __init__(self, path: str | Path | None, header: Sequence[str]):
        self._f = None
        if path is not None:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            self._f = open(path, "w", encoding="utf-8", newline="\n")
            self._f.write(",".join(header) + "\n")

    def row(self, *values) -> None:
        if self._f is None:
            return
        cells = [f"{v:.12g}" if isinstance(v, float) else str(v) for v in values]
        self._f.write(",".join(cells) + "\n")

    def close(self) -> None:
        if self._f is not None:
            self._f.close()
            self._f = None


# ---------------------------------------------------------------------------
# pretraining
# ---------------------------------------------------------------------------


def _marker_protected(tokens: Sequence[str]) -> set[int]:
    return {i for i, t in enumerate(tokens) if t in (MARKER_OPEN, MARKER_CLOSE)}


def pretrain(
    documents: Sequence[Document],
    selected: Sequence[SelectedPair],
    config: TrainConfig,
    encoder_config: EncoderConfig | None = None,
    log_path: str | Path | None = None,
    vocab_documents: Sequence[Document] | None = None,
) -> Checkpoint:
    """Contrastive pretraining over recurring entity pairs.

    Per step: sample positives, mask entities, add LM corruption, run two
    dropout passes per document, and take one decoupled-weight-decay step
    on the summed objective. Deterministic under the config seed.

    ``vocab_documents`` (default: the training documents) is the corpus the
    vocabulary and sequence budget are derived from; pass the full corpus
    when held-out splits will be encoded with the resulting checkpoint.
    """
    if not selected:
        raise ValueError("selected pretraining pair set is empty")
    positives = list(enumerate_positive_pairs(documents, selected))
    if not positives:
        raise ValueError("no cross-document positive pairs exist for the selected pairs")

    rng = np.random.default_rng(config.seed)
    docs = documents_by_id(documents)
    vocab_docs = documents if vocab_documents is None else vocab_documents
    vocab = Vocabulary.from_corpus(vocab_docs)
    enc_cfg = derive_encoder_config(vocab_docs, vocab, config.seed, encoder_config)
    model = Encoder(enc_cfg)
    params = _collect_params(model)
    opt = AdamW(params, lr=config.learning_rate, weight_decay=config.weight_decay)
    csv = _CsvLog(log_path, ["step", "loss", "loss_rel", "loss_self", "loss_mlm"])

    step = 0
    budget = config.max_steps or None
    for _epoch in range(config.epochs):
        if budget is not None and step >= budget:
            break
        order = rng.permutation(len(positives))
        for lo in range(0, len(order), config.batch_size):
            if budget is not None and step >= budget:
                break
            batch_pos = [positives[i] for i in order[lo : lo + config.batch_size]]
            step += 1
            if config.warmup_steps:
                opt.lr = config.learning_rate * min(1.0, step / config.warmup_steps)

            instances: list[PairInstance] = []
            index: dict[tuple, int] = {}
            for a, b in batch_pos:
                for inst in (a, b):
                    if inst.key() not in index:
                        index[inst.key()] = len(instances)
                        instances.append(inst)
            doc_ids: list[str] = []
            for inst in instances:
                if inst.document_id not in doc_ids:
                    doc_ids.append(inst.document_id)

            enc1: dict[str, tuple] = {}
            enc2: dict[str, tuple] = {}
            masked_docs: dict[str, Document] = {}
            mlm_logits: list[Tensor] = []
            mlm_targets: list[int] = []
            for did in doc_ids:
                mdoc = mask_entities(docs[did], config.mask_prob, rng)
                tokens, positions = insert_markers(mdoc)
                ids = vocab.encode(tokens)
                ids, lm_pos, lm_tgt = apply_mlm_mask(
                    ids, _marker_protected(tokens), config.mlm_rate, rng, vocab
                )
                seed_a = int(rng.integers(2**62))
                seed_b = int(rng.integers(2**62))
                e1 = model.encode_ids(ids, positions, train=True, dropout_seed=seed_a)
                e2 = model.encode_ids(ids, positions, train=True, dropout_seed=seed_b)
                masked_docs[did] = mdoc
                enc1[did] = e1
                enc2[did] = e2
                if lm_pos:
                    mlm_logits.append(model.mlm_forward(e1.H, lm_pos))
                    mlm_targets.extend(lm_tgt)

            z1 = torch.stack(
                [model.pair_embedding(enc1[i.document_id], masked_docs[i.document_id], i.subject, i.object)
                 for i in instances]
            )
            z2 = torch.stack(
                [model.pair_embedding(enc2[i.document_id], masked_docs[i.document_id], i.subject, i.object)
                 for i in instances]
            )
            batch = BatchView(embeddings=z1, second_pass=z2)

            pos_idx: list[tuple[int, int]] = []
            for a, b in batch_pos:
                ia, ib = index[a.key()], index[b.key()]
                pos_idx.append((ia, ib))
                pos_idx.append((ib, ia))
            signatures = [pair_type_signature(inst, docs) for inst in instances]
            negatives = {
                i: [k for k in range(len(instances)) if signatures[k] != signatures[i]]
                for i in range(len(instances))
            }
            anchors = sorted({i for ij in pos_idx for i in ij})

            l_rel = loss_rel(batch, pos_idx, negatives, config.tau)
            l_self = loss_self(batch, config.tau, anchors=anchors)
            if mlm_logits:
                l_mlm = loss_mlm(torch.cat(mlm_logits), torch.as_tensor(mlm_targets, dtype=torch.long))
            else:
                l_mlm = torch.zeros((), dtype=torch.float64)
            total = loss_pretrain(l_rel, l_self, l_mlm)
            opt.zero_grad()
            total.backward()
            opt.step()
            csv.row(step, total.item(), l_rel.item(), l_self.item(), l_mlm.item())
    csv.close()

    return Checkpoint(
        encoder_config=enc_cfg,
        vocab_symbols=vocab.symbols,
        params=_params_to_arrays(params),
        step=step,
        optimizer_state=opt.state_arrays(),
        optimizer_step=opt.t,
        config_fingerprint=_fingerprint(enc_cfg.to_dict(), config.to_dict()),
        extras={"kind": "pretrain"},
    )


# ---------------------------------------------------------------------------
# finetuning
# ---------------------------------------------------------------------------


def _is_na(pair: PairInstance, inventory: RelationInventory) -> bool:
    if inventory.mode == "single":
        return pair.labels == frozenset({inventory.na})
    return len(pair.labels - {inventory.na}) == 0


def _check_objective(objective: str, inventory: RelationInventory) -> None:
    multi = inventory.mode == "multi"
    if objective == "mccl_multilabel" and not multi:
        raise ValueError("mccl_multilabel requires a multi-label inventory")
    if objective in ("ce", "supcon", "mccl") and multi:
        raise ValueError(f"objective {objective!r} requires a single-label inventory")


def finetune(
    documents: Sequence[Document],
    pairs: Sequence[PairInstance],
    inventory: RelationInventory,
    init: Checkpoint,
    config: TrainConfig,
    log_path: str | Path | None = None,
) -> Checkpoint:
    """Train a labeled objective starting from a pretrained or random encoder.

    The masked-LM head is carried along but frozen. Batches that leave the
    contrastive objective undefined (no anchor with a peer) are skipped.
    """
    _check_objective(config.objective, inventory)
    if not pairs:
        raise ValueError("no labeled pairs to finetune on")
    rng = np.random.default_rng(config.seed)
    docs = documents_by_id(documents)
    model, vocab = restore_encoder(init)
    n_rel = inventory.size

    heads: dict[str, nn.Module] = {}
    if config.objective == "ce":
        heads["classifier"] = ClassifierHead(n_rel, init.encoder_config.model_dim, seed=config.seed)
    elif config.objective in ("mccl", "mccl_multilabel"):
        heads["proxies"] = ProxyBank(n_rel, init.encoder_config.model_dim, seed=config.seed)
        heads["bias"] = ClasswiseBias(n_rel)

    params = _collect_params(model, heads)
    trainable = {k: p for k, p in params.items() if not k.startswith("encoder.mlm_")}
    opt = AdamW(trainable, lr=config.learning_rate, weight_decay=config.weight_decay)
    csv = _CsvLog(log_path, ["step", "loss"])

    if config.na_subsample < 1.0:
        kept = [
            p for p in pairs
            if not _is_na(p, inventory) or rng.random() < config.na_subsample
        ]
    else:
        kept = list(pairs)
    if not kept:
        raise ValueError("NA subsampling removed every pair")

    def label_index(pair: PairInstance) -> int:
        (only,) = pair.labels
        return inventory.index(only)

    def label_set(pair: PairInstance) -> frozenset[int]:
        return frozenset(inventory.index(r) for r in pair.labels if r != inventory.na)

    step = 0
    budget = config.max_steps or None
    for _epoch in range(config.epochs):
        if budget is not None and step >= budget:
            break
        order = rng.permutation(len(kept))
        for lo in range(0, len(order), config.batch_size):
            if budget is not None and step >= budget:
                break
            batch_pairs = [kept[i] for i in order[lo : lo + config.batch_size]]
            step += 1
            if config.warmup_steps:
                opt.lr = config.learning_rate * min(1.0, step / config.warmup_steps)

            doc_ids: list[str] = []
            for p in batch_pairs:
                if p.document_id not in doc_ids:
                    doc_ids.append(p.document_id)
            encoded = {}
            for did in doc_ids:
                seed = int(rng.integers(2**62))
                encoded[did] = model.encode_document(docs[did], vocab, train=True, dropout_seed=seed)
            z = torch.stack(
                [model.pair_embedding(encoded[p.document_id], docs[p.document_id], p.subject, p.object)
                 for p in batch_pairs]
            )

            try:
                if config.objective == "ce":
                    y = [label_index(p) for p in batch_pairs]
                    total = loss_ce(z, y, heads["classifier"].weight, heads["classifier"].bias)
                elif config.objective == "supcon":
                    y = [label_index(p) for p in batch_pairs]
                    batch = BatchView.from_single_labels(z, y, n_rel)
                    total = loss_supcon(batch, config.tau1)
                elif config.objective == "mccl":
                    y = [label_index(p) for p in batch_pairs]
                    batch = BatchView.from_single_labels(z, y, n_rel)
                    scores = mccl_scores(batch, heads["proxies"], config.tau1)
                    total = loss_mccl(scores, heads["bias"].values, config.tau2, y)
                else:  # mccl_multilabel
                    sets = [label_set(p) for p in batch_pairs]
                    batch = BatchView.from_label_sets(z, sets, n_rel, inventory.na_index)
                    total = loss_mccl_multilabel(
                        batch, heads["proxies"], heads["bias"].values,
                        config.tau1, config.tau2, inventory.na_index,
                    )
            except UndefinedLossError:
                log.info("skipping step %d: objective undefined on this batch", step)
                continue

            opt.zero_grad()
            total.backward()
            opt.step()
            csv.row(step, total.item())
    csv.close()

    out_params = _params_to_arrays(params)
    return Checkpoint(
        encoder_config=init.encoder_config,
        vocab_symbols=init.vocab_symbols,
        params=out_params,
        step=step,
        optimizer_state=opt.state_arrays(),
        optimizer_step=opt.t,
        config_fingerprint=_fingerprint(init.encoder_config.to_dict(), config.to_dict()),
        extras={
            "kind": "finetune",
            "objective": config.objective,
            "inventory": {
                "relations": list(inventory.relations),
                "na": inventory.na,
                "mode": inventory.mode,
            },
        },
    )
