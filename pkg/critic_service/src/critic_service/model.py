"""A small image+text conditional generator with low-rank adapters.

The shipped base model (``tiny-bytelm``) is deliberately minimal so it
trains on a CPU in seconds: image bytes are embedded and pooled by a block
of learned queries (cross-attention), and a two-layer causal decoder over a
byte-level vocabulary generates the answer conditioned on that query prefix.
All base weights stay frozen during training; only the low-rank adapter
matrices (on every attention query/value projection and on the output head)
receive gradients, mirroring adapter-based fine-tuning of a pretrained
vision-language backbone.

Swapping in a real pretrained backbone is a registry entry: anything that
implements ``loss_batch`` / ``generate`` / ``score_continuation`` satisfies
the trainer and server.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .data import BOS, EOS, PAD, VOCAB_SIZE
from .errors import ModelUnavailable


@dataclass(frozen=True, slots=True)
class TinyVlmDims:
    d_model: int = 96
    n_heads: int = 4
    n_queries: int = 8
    decoder_layers: int = 2
    max_image_bytes: int = 128
    max_seq_len: int = 512


class LoraLinear(nn.Module):
    """Frozen linear layer plus a trainable low-rank update."""

    def __init__(self, in_features, out_features, rank, alpha, dropout, bias=True):
        super().__init__()
        self.base = nn.Linear(in_features, out_features, bias=bias)
        self.lora_a = nn.Linear(in_features, rank, bias=False)
        self.lora_b = nn.Linear(rank, out_features, bias=False)
        self.scaling = alpha / rank
        self.dropout = nn.Dropout(dropout)
        nn.init.normal_(self.lora_a.weight, std=1.0 / rank)
        nn.init.zeros_(self.lora_b.weight)

    def forward(self, x):
        return self.base(x) + self.lora_b(self.lora_a(self.dropout(x))) * self.scaling


class Attention(nn.Module):
    """Multi-head attention with adapters on the query/value projections."""

    def __init__(self, d_model, n_heads, rank, alpha, dropout):
        super().__init__()
        assert d_model % n_heads == 0
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.q = LoraLinear(d_model, d_model, rank, alpha, dropout)
        self.k = nn.Linear(d_model, d_model)
        self.v = LoraLinear(d_model, d_model, rank, alpha, dropout)
        self.o = nn.Linear(d_model, d_model)

    def forward(self, x_q, x_kv, attn_mask=None):
        bsz, lq, _ = x_q.shape
        lk = x_kv.shape[1]

        def split(t):
            return t.view(bsz, -1, self.n_heads, self.head_dim).transpose(1, 2)

        q, k, v = split(self.q(x_q)), split(self.k(x_kv)), split(self.v(x_kv))
        scores = (q @ k.transpose(-1, -2)) / math.sqrt(self.head_dim)
        if attn_mask is not None:
            scores = scores + attn_mask
        out = torch.softmax(scores, dim=-1) @ v
        out = out.transpose(1, 2).reshape(bsz, lq, -1)
        return self.o(out)


class Block(nn.Module):
    def __init__(self, d_model, n_heads, rank, alpha, dropout):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = Attention(d_model, n_heads, rank, alpha, dropout)
        self.norm2 = nn.LayerNorm(d_model)
        self.ffn = nn.Sequential(
            nn.Linear(d_model, 4 * d_model), nn.GELU(), nn.Linear(4 * d_model, d_model)
        )

    def forward(self, x, kv=None, attn_mask=None):
        h = self.norm1(x)
        x = x + self.attn(h, h if kv is None else kv, attn_mask)
        return x + self.ffn(self.norm2(x))


class TinyVLM(nn.Module):
    def __init__(self, rank=16, alpha=32, dropout=0.05, dims: TinyVlmDims | None = None):
        super().__init__()
        self.dims = dims or TinyVlmDims()
        d = self.dims.d_model
        self.image_embed = nn.Embedding(256, d)
        self.image_pos = nn.Embedding(self.dims.max_image_bytes, d)
        self.queries = nn.Parameter(torch.randn(self.dims.n_queries, d) * 0.02)
        self.qformer = Block(d, self.dims.n_heads, rank, alpha, dropout)
        self.token_embed = nn.Embedding(VOCAB_SIZE, d)
        self.token_pos = nn.Embedding(self.dims.max_seq_len, d)
        self.decoder = nn.ModuleList(
            Block(d, self.dims.n_heads, rank, alpha, dropout)
            for _ in range(self.dims.decoder_layers)
        )
        self.final_norm = nn.LayerNorm(d)
        self.head = LoraLinear(d, VOCAB_SIZE, rank, alpha, dropout, bias=False)
        self.freeze_base()

    # -- adapter bookkeeping --------------------------------------------------

    def freeze_base(self):
        """Freeze everything except the low-rank adapter matrices."""
        for param in self.parameters():
            param.requires_grad = False
        for module in self.modules():
            if isinstance(module, LoraLinear):
                module.lora_a.weight.requires_grad = True
                module.lora_b.weight.requires_grad = True

    def adapter_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    # -- encoding ---------------------------------------------------------------

    def encode_image(self, image_bytes: torch.Tensor, image_mask: torch.Tensor):
        """image_bytes: [B, M] uint8 values as long; image_mask True = real byte."""
        bsz, m = image_bytes.shape
        pos = torch.arange(m, device=image_bytes.device)
        emb = self.image_embed(image_bytes) + self.image_pos(pos)[None]
        queries = self.queries[None].expand(bsz, -1, -1)
        # padded byte positions are masked out of the cross-attention
        mask = torch.zeros(bsz, 1, 1, m, device=emb.device)
        mask = mask.masked_fill(~image_mask[:, None, None, :], float("-inf"))
        return self.qformer(queries, kv=emb, attn_mask=mask)

    def _decode(self, prefix, token_ids, token_mask):
        bsz, lt = token_ids.shape
        nq = prefix.shape[1]
        pos = torch.arange(lt, device=token_ids.device)
        tokens = self.token_embed(token_ids) + self.token_pos(pos)[None]
        x = torch.cat([prefix, tokens], dim=1)
        total = nq + lt
        causal = torch.full((total, total), float("-inf"), device=x.device).triu(1)
        causal[:, :nq] = 0.0  # the image-query prefix is visible everywhere
        key_mask = torch.ones(bsz, total, dtype=torch.bool, device=x.device)
        key_mask[:, nq:] = token_mask
        mask = causal[None, None] + torch.zeros(bsz, 1, 1, total, device=x.device).masked_fill(
            ~key_mask[:, None, None, :], float("-inf")
        )
        for block in self.decoder:
            x = block(x, attn_mask=mask)
        return self.head(self.final_norm(x[:, nq:, :]))

    def token_logits(self, image_bytes, image_mask, token_ids):
        """Next-token logits for positions 0..L-2 of the padded sequences."""
        prefix = self.encode_image(image_bytes, image_mask)
        inputs = token_ids[:, :-1]
        return self._decode(prefix, inputs, inputs != PAD)

    def loss_batch(self, image_bytes, image_mask, token_ids, labels):
        """Cross-entropy over target positions only (labels = -100 elsewhere)."""
        logits = self.token_logits(image_bytes, image_mask, token_ids)
        return F.cross_entropy(
            logits.reshape(-1, VOCAB_SIZE), labels[:, 1:].reshape(-1), ignore_index=-100
        )

    # -- inference ------------------------------------------------------------

    @torch.no_grad()
    def generate(self, image_bytes, image_mask, prompt_ids: list[int], max_new_tokens=120):
        device = next(self.parameters()).device
        seq = list(prompt_ids) + [BOS]
        out: list[int] = []
        for _ in range(max_new_tokens):
            ids = torch.tensor([seq], dtype=torch.long, device=device)
            prefix = self.encode_image(image_bytes, image_mask)
            logits = self._decode(prefix, ids, torch.ones_like(ids, dtype=torch.bool))
            nxt = int(logits[0, -1].argmax())
            if nxt == EOS:
                break
            seq.append(nxt)
            out.append(nxt)
            if len(seq) >= self.dims.max_seq_len - 1:
                break
        return out

    @torch.no_grad()
    def score_continuation(
        self, image_bytes, image_mask, prompt_ids: list[int], continuation_ids: list[int]
    ) -> float:
        """Total log-probability of the continuation after the prompt + BOS."""
        device = next(self.parameters()).device
        seq = list(prompt_ids) + [BOS] + list(continuation_ids)
        ids = torch.tensor([seq], dtype=torch.long, device=device)
        prefix = self.encode_image(image_bytes, image_mask)
        logits = self._decode(
            prefix, ids[:, :-1], torch.ones_like(ids[:, :-1], dtype=torch.bool)
        )
        logprobs = F.log_softmax(logits[0], dim=-1)
        start = len(prompt_ids)  # position predicting the first continuation token
        total = 0.0
        for offset, token in enumerate(continuation_ids):
            total += float(logprobs[start + offset, token])
        return total


def pack_image(data: bytes, max_bytes: int, device=None):
    """Clip/pad raw image bytes into (ids, mask) tensors of fixed width."""
    clipped = data[:max_bytes] if data else b"\x00"
    ids = torch.zeros(1, max_bytes, dtype=torch.long, device=device)
    mask = torch.zeros(1, max_bytes, dtype=torch.bool, device=device)
    ids[0, : len(clipped)] = torch.tensor(list(clipped), dtype=torch.long)
    mask[0, : len(clipped)] = True
    return ids, mask


def build_model(base_model: str, rank: int, alpha: int, dropout: float, seed: int) -> TinyVLM:
    """Construct the configured base model with adapters attached.

    ``tiny-bytelm`` is built in-process. Other names (pretrained backbones)
    are integration points that need their weights available locally.
    """
    if base_model == "tiny-bytelm":
        torch.manual_seed(seed)
        return TinyVLM(rank=rank, alpha=alpha, dropout=dropout)
    raise ModelUnavailable(
        f"base model {base_model!r} is not available in this environment; "
        "register a loader or use 'tiny-bytelm'"
    )
