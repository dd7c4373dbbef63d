"""Small trainable transformer encoder and the entity-pair embedding pipeline.

The encoder returns, for one document at a time, the token states H of the
last layer and the last layer's attention probabilities A (heads x len x
len, rows pre-dropout so each row over key positions sums to one). Entity
mentions are wrapped in [E] ... [/E] markers before encoding; the state at
each opening marker serves as the mention embedding, mention embeddings are
pooled into entity embeddings by coordinatewise log-sum-exp, and a pair
embedding is a learned projection of [subject entity, object entity,
localized context].

Everything runs in float64 on CPU. Dropout is driven entirely by an
explicit seed so that training is reproducible and the two differently
dropped-out passes needed by the self-supervised loss are well defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
from torch import Tensor, nn

from .corpus import Document

__all__ = [
    "PAD_TOKEN",
    "MARKER_OPEN",
    "MARKER_CLOSE",
    "MASK_TOKEN",
    "EncoderError",
    "MarkerOverlapError",
    "DocumentTooLongError",
    "UnknownTokenError",
    "Vocabulary",
    "EncoderConfig",
    "EncodedDocument",
    "insert_markers",
    "strip_markers",
    "entity_embedding",
    "localized_context",
    "Encoder",
]

PAD_TOKEN = "[PAD]"
MARKER_OPEN = "[E]"
MARKER_CLOSE = "[/E]"
MASK_TOKEN = "[MASK]"

DTYPE = torch.float64


class EncoderError(Exception):
    pass


class MarkerOverlapError(EncoderError):
    pass


class DocumentTooLongError(EncoderError):
    pass


class UnknownTokenError(EncoderError):
    pass


class Vocabulary:
    """Closed symbol inventory with a fixed deterministic ordering.

    Layout: [PAD], [E], [/E], [MASK], one blank per entity type (sorted),
    then the corpus symbols sorted lexicographically.
    """

    def __init__(self, symbols: Sequence[str]):
        self._symbols = list(symbols)
        self._index = {s: i for i, s in enumerate(self._symbols)}
        if len(self._index) != len(self._symbols):
            raise ValueError("duplicate symbols in vocabulary")
        self._n_special = 4 + sum(1 for s in self._symbols if s.startswith("[BLANK:"))

    @classmethod
    def from_corpus(cls, documents: Sequence[Document], entity_types: Sequence[str] = ()) -> "Vocabulary":
        types = set(entity_types)
        tokens: set[str] = set()
        for doc in documents:
            tokens.update(doc.tokens)
            types.update(e.entity_type for e in doc.entities)
        blanks = [f"[BLANK:{t}]" for t in sorted(types)]
        specials = [PAD_TOKEN, MARKER_OPEN, MARKER_CLOSE, MASK_TOKEN, *blanks]
        regular = sorted(tokens - set(specials))
        return cls(specials + regular)

    def __len__(self) -> int:
        return len(self._symbols)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._index

    @property
    def symbols(self) -> list[str]:
        return list(self._symbols)

    def id(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise UnknownTokenError(f"symbol {symbol!r} not in vocabulary") from None

    def symbol(self, token_id: int) -> str:
        return self._symbols[token_id]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    @property
    def regular_ids(self) -> range:
        """Ids of ordinary corpus symbols, excluding markers, mask and blanks."""
        return range(self._n_special, len(self._symbols))


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    heads: int = 4
    model_dim: int = 64
    ffn_dim: int = 128
    vocab_size: int = 512
    max_len: int = 256
    dropout_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ValueError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    def to_dict(self) -> dict:
        return {
            "layers": self.layers,
            "heads": self.heads,
            "model_dim": self.model_dim,
            "ffn_dim": self.ffn_dim,
            "vocab_size": self.vocab_size,
            "max_len": self.max_len,
            "dropout_rate": self.dropout_rate,
            "seed": self.seed,
        }


@dataclass
class EncodedDocument:
    H: Tensor                       # (len, dim) last-layer token states
    A: Tensor                       # (heads, len, len) last-layer attention rows
    marker_positions: tuple[int, ...]  # opening-marker position per mention index
    token_ids: tuple[int, ...]


def insert_markers(doc: Document) -> tuple[list[str], list[int]]:
    """Wrap every mention in [E] ... [/E], keeping original token order.

    Returns the marked token list and, for each mention (in document
    mention order), the position of its opening marker.
    """
    order = sorted(range(len(doc.mentions)), key=lambda i: doc.mentions[i].start)
    for a, b in zip(order, order[1:]):
        if doc.mentions[b].start < doc.mentions[a].end:
            raise MarkerOverlapError(
                f"doc {doc.id}: mentions {a} and {b} overlap, cannot insert markers"
            )
    tokens: list[str] = []
    positions = [0] * len(doc.mentions)
    cursor = 0
    for i in order:
        m = doc.mentions[i]
        tokens.extend(doc.tokens[cursor : m.start])
        positions[i] = len(tokens)
        tokens.append(MARKER_OPEN)
        tokens.extend(doc.tokens[m.start : m.end])
        tokens.append(MARKER_CLOSE)
        cursor = m.end
    tokens.extend(doc.tokens[cursor:])
    return tokens, positions


def strip_markers(tokens: Sequence[str]) -> list[str]:
    return [t for t in tokens if t not in (MARKER_OPEN, MARKER_CLOSE)]


def entity_embedding(mention_states: Tensor) -> Tensor:
    """Pool mention states (n, d) into one entity embedding by log-sum-exp."""
    if mention_states.ndim != 2 or mention_states.shape[0] == 0:
        raise ValueError("expected a non-empty (n_mentions, dim) matrix")
    return torch.logsumexp(mention_states, dim=0)


def localized_context(
    H: Tensor, A: Tensor, subject_positions: Sequence[int], object_positions: Sequence[int]
) -> Tensor:
    """Context vector attended to jointly by both entities.

    Mention attention rows (at the opening markers) are mean-pooled per
    entity and per head, multiplied elementwise across the two entities,
    summed over heads, and normalized into a distribution over tokens. A
    strictly zero product falls back to uniform attention.
    """
    if not subject_positions or not object_positions:
        raise ValueError("both entities need at least one mention")
    a_s = A[:, list(subject_positions), :].mean(dim=1)  # (heads, len)
    a_o = A[:, list(object_positions), :].mean(dim=1)
    q = (a_s * a_o).sum(dim=0)  # (len,)
    total = q.sum()
    if total.item() == 0.0:
        a = torch.full_like(q, 1.0 / q.shape[0])
    else:
        a = q / (total + 1e-12)
    return a @ H


def _layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mean = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, keepdim=True, unbiased=False)
    return (x - mean) / torch.sqrt(var + eps) * gamma + beta


def _dropout(x: Tensor, rate: float, gen: torch.Generator | None) -> Tensor:
    if gen is None or rate == 0.0:
        return x
    keep = (torch.rand(x.shape, generator=gen, dtype=x.dtype) >= rate).to(x.dtype)
    return x * keep / (1.0 - rate)


class _EncoderLayer(nn.Module):
    def __init__(self, config: EncoderConfig, gen: torch.Generator):
        super().__init__()
        d, f = config.model_dim, config.ffn_dim

        def w(*shape):
            return nn.Parameter(torch.randn(*shape, generator=gen, dtype=DTYPE) * 0.02)

        self.wq, self.bq = w(d, d), nn.Parameter(torch.zeros(d, dtype=DTYPE))
        self.wk, self.bk = w(d, d), nn.Parameter(torch.zeros(d, dtype=DTYPE))
        self.wv, self.bv = w(d, d), nn.Parameter(torch.zeros(d, dtype=DTYPE))
        self.wo, self.bo = w(d, d), nn.Parameter(torch.zeros(d, dtype=DTYPE))
        self.ln1_g = nn.Parameter(torch.ones(d, dtype=DTYPE))
        self.ln1_b = nn.Parameter(torch.zeros(d, dtype=DTYPE))
        self.w1, self.b1 = w(f, d), nn.Parameter(torch.zeros(f, dtype=DTYPE))
        self.w2, self.b2 = w(d, f), nn.Parameter(torch.zeros(d, dtype=DTYPE))
        self.ln2_g = nn.Parameter(torch.ones(d, dtype=DTYPE))
        self.ln2_b = nn.Parameter(torch.zeros(d, dtype=DTYPE))
        self.heads = config.heads
        self.head_dim = d // config.heads
        self.dropout_rate = config.dropout_rate

    def forward(self, x: Tensor, gen: torch.Generator | None) -> tuple[Tensor, Tensor]:
        l, d = x.shape
        m, hd = self.heads, self.head_dim
        q = (x @ self.wq.T + self.bq).reshape(l, m, hd).transpose(0, 1)  # (m, l, hd)
        k = (x @ self.wk.T + self.bk).reshape(l, m, hd).transpose(0, 1)
        v = (x @ self.wv.T + self.bv).reshape(l, m, hd).transpose(0, 1)
        scores = q @ k.transpose(1, 2) / math.sqrt(hd)  # (m, l, l)
        probs = torch.softmax(scores, dim=-1)
        ctx = (probs @ v).transpose(0, 1).reshape(l, d)
        attn_out = ctx @ self.wo.T + self.bo
        x = _layer_norm(x + _dropout(attn_out, self.dropout_rate, gen), self.ln1_g, self.ln1_b)
        ff = torch.nn.functional.gelu(x @ self.w1.T + self.b1) @ self.w2.T + self.b2
        x = _layer_norm(x + _dropout(ff, self.dropout_rate, gen), self.ln2_g, self.ln2_b)
        return x, probs


class Encoder(nn.Module):
    """Transformer encoder plus the pair-embedding and MLM heads."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        gen = torch.Generator().manual_seed(config.seed)
        d = config.model_dim
        self.tok_emb = nn.Parameter(torch.randn(config.vocab_size, d, generator=gen, dtype=DTYPE) * 0.02)
        self.pos_emb = nn.Parameter(torch.randn(config.max_len, d, generator=gen, dtype=DTYPE) * 0.02)
        self.layers = nn.ModuleList(_EncoderLayer(config, gen) for _ in range(config.layers))
        # pair head: (dim, 3 dim) projection of [subject, object, context], no bias
        self.pair_proj = nn.Parameter(torch.randn(d, 3 * d, generator=gen, dtype=DTYPE) * 0.02)
        self.mlm_w = nn.Parameter(torch.randn(config.vocab_size, d, generator=gen, dtype=DTYPE) * 0.02)
        self.mlm_b = nn.Parameter(torch.zeros(config.vocab_size, dtype=DTYPE))

    def forward(self, token_ids: Sequence[int], train: bool = False, dropout_seed: int | None = None):
        """Run the stack over one token sequence.

        Returns (H, A): last-layer states (len, dim) and last-layer
        attention (heads, len, len). Eval mode is deterministic; train mode
        requires a dropout seed and is a pure function of it.
        """
        ids = torch.as_tensor(list(token_ids), dtype=torch.long)
        if ids.ndim != 1 or ids.numel() == 0:
            raise EncoderError("expected a non-empty 1-d token id sequence")
        if int(ids.min()) < 0 or int(ids.max()) >= self.config.vocab_size:
            raise UnknownTokenError(
                f"token id out of range [0, {self.config.vocab_size}): {int(ids.max())}"
            )
        if ids.numel() > self.config.max_len:
            raise DocumentTooLongError(f"sequence of length {ids.numel()} exceeds max_len {self.config.max_len}")
        gen: torch.Generator | None = None
        if train and self.config.dropout_rate > 0:
            if dropout_seed is None:
                raise EncoderError("train mode requires a dropout_seed")
            gen = torch.Generator().manual_seed(int(dropout_seed))
        x = self.tok_emb[ids] + self.pos_emb[: ids.numel()]
        x = _dropout(x, self.config.dropout_rate, gen)
        attn = None
        for layer in self.layers:
            x, attn = layer(x, gen)
        return x, attn

    def encode_document(
        self,
        doc: Document,
        vocab: Vocabulary,
        train: bool = False,
        dropout_seed: int | None = None,
    ) -> EncodedDocument:
        tokens, positions = insert_markers(doc)
        if len(tokens) > self.config.max_len:
            raise DocumentTooLongError(
                f"doc {doc.id}: marked length {len(tokens)} exceeds max_len {self.config.max_len}"
            )
        ids = vocab.encode(tokens)
        H, A = self.forward(ids, train=train, dropout_seed=dropout_seed)
        return EncodedDocument(H=H, A=A, marker_positions=tuple(positions), token_ids=tuple(ids))

    def encode_ids(
        self,
        token_ids: Sequence[int],
        marker_positions: Sequence[int],
        train: bool = False,
        dropout_seed: int | None = None,
    ) -> EncodedDocument:
        H, A = self.forward(token_ids, train=train, dropout_seed=dropout_seed)
        return EncodedDocument(
            H=H, A=A, marker_positions=tuple(marker_positions), token_ids=tuple(token_ids)
        )

    def pair_embedding(self, enc: EncodedDocument, doc: Document, subject: int, object: int) -> Tensor:
        """Entity pair embedding z for one (subject, object) pair of a document."""
        pos_s = [enc.marker_positions[i] for i, m in enumerate(doc.mentions) if m.entity == subject]
        pos_o = [enc.marker_positions[i] for i, m in enumerate(doc.mentions) if m.entity == object]
        if not pos_s or not pos_o:
            raise EncoderError(f"doc {doc.id}: entity without mentions in pair ({subject}, {object})")
        h_s = entity_embedding(enc.H[pos_s])
        h_o = entity_embedding(enc.H[pos_o])
        c = localized_context(enc.H, enc.A, pos_s, pos_o)
        return torch.cat([h_s, h_o, c]) @ self.pair_proj.T

    def mlm_forward(self, H: Tensor, positions: Sequence[int]) -> Tensor:
        """Vocabulary logits at the given positions, shape (n_positions, vocab)."""
        if len(positions) == 0:
            return torch.zeros((0, self.config.vocab_size), dtype=H.dtype)
        return H[list(positions)] @ self.mlm_w.T + self.mlm_b
