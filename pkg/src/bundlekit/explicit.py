"""Explicit-strategy encoders.

Two views of every item: a characteristic view from multi-modal features
(projection, concat fusion, self-attention over the per-item feature rows)
and a collaborative view from attention over the item co-purchase graph.
Bundle views come from member-set attention (characteristic) and member
mean (collaborative); a convex gamma-mix merges the two strategies.
"""

from __future__ import annotations

import math

import torch
from torch import Tensor, nn

from .errors import ConfigError

NEG_BIG = 1e9  # additive mask; exp(-NEG_BIG) underflows to exactly 0


def xavier_(param: Tensor) -> None:
    nn.init.xavier_uniform_(param.view(1, -1) if param.dim() == 1 else param)


def masked_mean(x: Tensor, mask: Tensor) -> Tensor:
    """Mean over dim -2 counting only mask=True rows. x: (..., S, d), mask: (..., S)."""
    weights = mask.to(x.dtype)
    total = (x * weights.unsqueeze(-1)).sum(dim=-2)
    counts = weights.sum(dim=-1, keepdim=True)
    return total / counts.clamp_min(1.0)


def mix_convex(char: Tensor, collab: Tensor, gamma: float) -> Tensor:
    """gamma * characteristic + (1 - gamma) * collaborative."""
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"gamma must be in [0, 1], got {gamma}")
    return gamma * char + (1.0 - gamma) * collab


class ModalityProjection(nn.Module):
    """Affine maps aligning each raw modality space to the shared dimension."""

    def __init__(self, modality_dims: dict[str, int], embed_dim: int, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.embed_dim = embed_dim
        self.maps = nn.ModuleDict()
        for modality, d_m in sorted(modality_dims.items()):
            lin = nn.Linear(d_m, embed_dim, dtype=dtype)
            xavier_(lin.weight)
            nn.init.zeros_(lin.bias)
            self.maps[modality] = lin

    def forward(self, features: dict[str, Tensor]) -> dict[str, Tensor]:
        out = {}
        for modality, lin in self.maps.items():
            feat = features[modality]
            if feat.shape[1] != lin.in_features:
                raise ConfigError(
                    f"modality {modality!r}: feature dim {feat.shape[1]} != projector input {lin.in_features}"
                )
            out[modality] = lin(feat)
        return out


class ConcatFusion(nn.Module):
    """Compress concatenated modality embeddings into one feature row.

    The fused per-item matrix stacks that row with the ID embedding, giving
    shape (n_items, 2, d).
    """

    # concat order is fixed; with both modalities present it is [visual, text]
    ORDER = ("visual", "text")

    def __init__(self, modalities: tuple[str, ...], embed_dim: int, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.modalities = tuple(m for m in self.ORDER if m in modalities)
        if not self.modalities:
            raise ConfigError("fusion needs at least one modality")
        self.weight = nn.Parameter(torch.empty(embed_dim, embed_dim * len(self.modalities), dtype=dtype))
        xavier_(self.weight)

    def forward(self, projected: dict[str, Tensor], id_rows: Tensor) -> Tensor:
        stacked = torch.cat([projected[m] for m in self.modalities], dim=1)
        semantic = stacked @ self.weight.T
        return torch.stack([semantic, id_rows], dim=1)


class FeatureSelfAttention(nn.Module):
    """Stack of key/query self-attention layers without a value projection.

    Each layer computes softmax((1/sqrt(d)) (x K)(x Q)^T) x. Padded slots
    (mask=False) are excluded from the softmax and zeroed after each layer.
    """

    def __init__(self, embed_dim: int, n_layers: int, dtype: torch.dtype = torch.float32):
        super().__init__()
        if n_layers < 1:
            raise ConfigError("attention stack needs >= 1 layer")
        self.scale = 1.0 / math.sqrt(embed_dim)
        self.keys = nn.ParameterList()
        self.queries = nn.ParameterList()
        for _ in range(n_layers):
            k = nn.Parameter(torch.empty(embed_dim, embed_dim, dtype=dtype))
            q = nn.Parameter(torch.empty(embed_dim, embed_dim, dtype=dtype))
            xavier_(k)
            xavier_(q)
            self.keys.append(k)
            self.queries.append(q)

    def forward(self, x: Tensor, mask: Tensor | None = None) -> Tensor:
        """x: (B, S, d); mask: (B, S) bool, True = real slot. Returns (B, S, d)."""
        if mask is not None:
            x = x * mask.unsqueeze(-1).to(x.dtype)
            key_bias = torch.where(mask, 0.0, -NEG_BIG).to(x.dtype).unsqueeze(1)
        for key, query in zip(self.keys, self.queries):
            scores = self.scale * (x @ key) @ (x @ query).transpose(-2, -1)
            if mask is not None:
                scores = scores + key_bias
            x = torch.softmax(scores, dim=-1) @ x
            if mask is not None:
                x = x * mask.unsqueeze(-1).to(x.dtype)
        return x

    def encode_set(self, x: Tensor, mask: Tensor | None = None) -> Tensor:
        """Attend then mean-pool the real slots: (B, S, d) -> (B, d)."""
        refined = self.forward(x, mask)
        if mask is None:
            return refined.mean(dim=-2)
        return masked_mean(refined, mask)


class GraphAttention(nn.Module):
    """Attention rounds over the co-purchase graph with a residual mix.

    Per round n: alpha_{i<-j} = softmax_j over N(i) of
    q_n . leaky_relu(W_tgt h_i + W_src h_j + bias), and the round output is
    sum_j alpha_{i<-j} (W_src h_j). Items with no neighbors contribute a zero
    message. The final embedding is beta * mean of round outputs plus
    (1 - beta) * the input embeddings. ``stacked`` mode feeds each round the
    previous round's output; ``parallel`` re-reads the input every round.
    """

    def __init__(
        self,
        embed_dim: int,
        n_layers: int,
        beta: float,
        mode: str = "stacked",
        leaky_slope: float = 0.2,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        if mode not in ("stacked", "parallel"):
            raise ConfigError(f"mode must be stacked or parallel, got {mode!r}")
        if not 0.0 <= beta <= 1.0:
            raise ConfigError(f"beta must be in [0, 1], got {beta}")
        self.beta = beta
        self.mode = mode
        self.act = nn.LeakyReLU(leaky_slope)
        self.contexts = nn.ParameterList()
        self.target_maps = nn.ParameterList()
        self.source_maps = nn.ParameterList()
        self.biases = nn.ParameterList()
        for _ in range(n_layers):
            q = nn.Parameter(torch.empty(embed_dim, dtype=dtype))
            w_tgt = nn.Parameter(torch.empty(embed_dim, embed_dim, dtype=dtype))
            w_src = nn.Parameter(torch.empty(embed_dim, embed_dim, dtype=dtype))
            bias = nn.Parameter(torch.zeros(embed_dim, dtype=dtype))
            xavier_(q)
            xavier_(w_tgt)
            xavier_(w_src)
            self.contexts.append(q)
            self.target_maps.append(w_tgt)
            self.source_maps.append(w_src)
            self.biases.append(bias)

    def _round(self, h: Tensor, src: Tensor, tgt: Tensor, n: int) -> Tensor:
        n_nodes = h.shape[0]
        out = torch.zeros_like(h)
        if src.numel() == 0:
            return out
        h_tgt = h @ self.target_maps[n].T
        h_src = h @ self.source_maps[n].T
        logits = self.act(h_tgt[tgt] + h_src[src] + self.biases[n]) @ self.contexts[n]
        with torch.no_grad():
            # per-target max; softmax is shift-invariant so detaching is exact
            top = torch.zeros(n_nodes, dtype=h.dtype, device=h.device)
            top.scatter_reduce_(0, tgt, logits.detach(), reduce="amax", include_self=False)
        weights = torch.exp(logits - top[tgt])
        denom = torch.zeros(n_nodes, dtype=h.dtype, device=h.device).index_add(0, tgt, weights)
        alpha = weights / denom[tgt]
        return out.index_add(0, tgt, alpha.unsqueeze(-1) * h_src[src])

    def forward(self, embeddings: Tensor, src: Tensor, tgt: Tensor) -> Tensor:
        """embeddings: (n_items, d); src/tgt: (E,) int64 edge endpoints (i <- j means
        tgt=i, src=j; both directions of an undirected edge must be listed)."""
        h = embeddings
        rounds = []
        for n in range(len(self.contexts)):
            out = self._round(h, src, tgt, n)
            rounds.append(out)
            if self.mode == "stacked":
                h = out
        message = torch.stack(rounds).mean(dim=0)
        return self.beta * message + (1.0 - self.beta) * embeddings

    def attention_weights(self, embeddings: Tensor, src: Tensor, tgt: Tensor, n: int = 0) -> Tensor:
        """Per-edge attention weights of round n on the given embeddings (diagnostics)."""
        n_nodes = embeddings.shape[0]
        h_tgt = embeddings @ self.target_maps[n].T
        h_src = embeddings @ self.source_maps[n].T
        logits = self.act(h_tgt[tgt] + h_src[src] + self.biases[n]) @ self.contexts[n]
        top = torch.zeros(n_nodes, dtype=embeddings.dtype)
        top.scatter_reduce_(0, tgt, logits.detach(), reduce="amax", include_self=False)
        weights = torch.exp(logits - top[tgt])
        denom = torch.zeros(n_nodes, dtype=embeddings.dtype).index_add(0, tgt, weights)
        return weights / denom[tgt]


def aggregate_members(item_states: Tensor, member_idx: Tensor, member_mask: Tensor) -> Tensor:
    """Mean of member item states per bundle. member_idx/mask: (B, S)."""
    if member_mask.any(dim=1).logical_not().any():
        raise ConfigError("cannot aggregate a bundle with no members")
    gathered = item_states[member_idx] * member_mask.unsqueeze(-1).to(item_states.dtype)
    return gathered.sum(dim=1) / member_mask.sum(dim=1, keepdim=True).to(item_states.dtype)
