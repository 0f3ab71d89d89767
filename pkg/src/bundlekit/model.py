"""Full bundle-completion model: explicit + implicit strategies and scoring."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .config import TrainConfig
from .data import BundleDataset
from .errors import ConfigError
from .explicit import (
    ConcatFusion,
    FeatureSelfAttention,
    GraphAttention,
    ModalityProjection,
    aggregate_members,
    mix_convex,
    xavier_,
)
from .graph import ItemGraph, build_item_graph
from .implicit import HypergraphEncoder
from .losses import pair_scores


def pad_members(member_lists: Sequence[Sequence[int]]) -> tuple[Tensor, Tensor]:
    """Pack variable-length member index lists into (indices, mask) of shape (B, S)."""
    if not member_lists:
        raise ConfigError("need at least one bundle to encode")
    if any(len(m) == 0 for m in member_lists):
        raise ConfigError("cannot encode a bundle with no members")
    width = max(len(m) for m in member_lists)
    idx = torch.zeros(len(member_lists), width, dtype=torch.int64)
    mask = torch.zeros(len(member_lists), width, dtype=torch.bool)
    for row, members in enumerate(member_lists):
        idx[row, : len(members)] = torch.as_tensor(list(members), dtype=torch.int64)
        mask[row, : len(members)] = True
    return idx, mask


def membership_rows(member_lists: Sequence[Sequence[int]], n_items: int, dtype=torch.float32) -> Tensor:
    """Binary (B, n_items) indicator rows for the given bundles."""
    out = torch.zeros(len(member_lists), n_items, dtype=dtype)
    for row, members in enumerate(member_lists):
        out[row, list(members)] = 1
    return out


@dataclass
class EncodedViews:
    """Item- and bundle-side embeddings from one forward pass.

    Char/collab/implicit entries are None when the corresponding path is
    ablated; the explicit mix and scores remain well-defined.
    """

    item_char: Tensor | None
    item_collab: Tensor | None
    item_explicit: Tensor
    item_implicit: Tensor | None
    bundle_char: Tensor | None
    bundle_collab: Tensor | None
    bundle_explicit: Tensor
    bundle_implicit: Tensor | None

    def scores(self) -> Tensor:
        return pair_scores(
            self.bundle_explicit, self.item_explicit, self.bundle_implicit, self.item_implicit
        )


class BundleCompletionModel(nn.Module):
    """Learns item/bundle representations and scores catalog items per bundle."""

    def __init__(
        self,
        config: TrainConfig,
        features: dict[str, np.ndarray | Tensor],
        graph_edges: tuple[np.ndarray, np.ndarray],
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        self.config = config.validate()
        cfg = self.config
        kept = cfg.modalities
        missing = [m for m in kept if m not in features]
        if missing:
            raise ConfigError(f"missing feature matrices for modalities {missing}")
        self.dtype_ = dtype

        first = next(iter(features.values()))
        self.n_items = int(first.shape[0])
        for name in kept:
            feat = torch.as_tensor(np.asarray(features[name]), dtype=dtype)
            if feat.shape[0] != self.n_items:
                raise ConfigError("modality matrices disagree on item count")
            self.register_buffer(f"feat_{name}", feat, persistent=False)
        src, tgt = graph_edges
        self.register_buffer("edge_src", torch.as_tensor(src, dtype=torch.int64), persistent=False)
        self.register_buffer("edge_tgt", torch.as_tensor(tgt, dtype=torch.int64), persistent=False)

        d = cfg.embed_dim
        self.id_embeddings = nn.Parameter(torch.empty(self.n_items, d, dtype=dtype))
        xavier_(self.id_embeddings)

        raw_dims = {m: int(features[m].shape[1]) for m in kept}
        need_projection = (not cfg.no_char_encoder) or (
            cfg.use_hypergraph and cfg.hyperedge_input == "projected"
        )
        self.projection = ModalityProjection(raw_dims, d, dtype=dtype) if need_projection else None
        if not cfg.no_char_encoder:
            self.fusion = ConcatFusion(kept, d, dtype=dtype)
            self.item_attention = FeatureSelfAttention(d, cfg.item_attn_layers, dtype=dtype)
            self.bundle_attention = FeatureSelfAttention(d, cfg.bundle_attn_layers, dtype=dtype)
        else:
            self.fusion = None
            self.item_attention = None
            self.bundle_attention = None
        self.graph_attention = (
            GraphAttention(d, cfg.graph_attn_layers, cfg.beta, cfg.collab_mode, cfg.leaky_slope, dtype=dtype)
            if cfg.use_graph_encoder
            else None
        )
        if cfg.use_hypergraph:
            hyper_dims = raw_dims if cfg.hyperedge_input == "raw" else {m: d for m in kept}
            self.hypergraph = HypergraphEncoder(
                hyper_dims, cfg.num_hyperedges, cfg.hypergraph_layers, cfg.tau_gumbel, cfg.p_norm, dtype=dtype
            )
        else:
            self.hypergraph = None

    @classmethod
    def from_dataset(
        cls,
        config: TrainConfig,
        dataset: BundleDataset,
        graph: ItemGraph | None = None,
        dtype: torch.dtype = torch.float32,
    ) -> "BundleCompletionModel":
        if graph is None:
            graph = build_item_graph(dataset.interactions, config.epsilon)
        feats = {m: dataset.modalities.features[m] for m in config.modalities}
        return cls(config, feats, graph.edge_arrays(), dtype=dtype)

    # -- forward pieces ------------------------------------------------------

    def _features(self) -> dict[str, Tensor]:
        return {m: getattr(self, f"feat_{m}") for m in self.config.modalities}

    def item_representations(self) -> tuple[Tensor | None, Tensor, Tensor]:
        """(characteristic, collaborative, explicit-mix) item matrices.

        When the graph encoder is ablated the collaborative slot carries the
        raw ID embeddings, which also seed the hypergraph diffusion.
        """
        cfg = self.config
        if self.graph_attention is not None:
            collab = self.graph_attention(self.id_embeddings, self.edge_src, self.edge_tgt)
        else:
            collab = self.id_embeddings
        if self.fusion is not None:
            projected = self.projection(self._features())
            fused = self.fusion(projected, self.id_embeddings)
            char = self.item_attention.encode_set(fused)
        else:
            char = None
        if char is None:
            explicit = collab
        elif self.graph_attention is None:
            explicit = char
        else:
            explicit = mix_convex(char, collab, cfg.effective_gamma)
        return char, collab, explicit

    def encode(
        self,
        member_idx: Tensor,
        member_mask: Tensor,
        sample_noise: bool = False,
        generator: torch.Generator | None = None,
    ) -> EncodedViews:
        """Encode the full catalog plus the bundles given by (member_idx, member_mask).

        At training time the members are the complete bundles; at inference
        they must be the seed items only.
        """
        cfg = self.config
        char, collab, explicit = self.item_representations()

        if char is not None:
            rows = char[member_idx] * member_mask.unsqueeze(-1).to(char.dtype)
            bundle_char = self.bundle_attention.encode_set(rows, member_mask)
        else:
            bundle_char = None
        need_collab = self.graph_attention is not None or bundle_char is None
        bundle_collab = aggregate_members(collab, member_idx, member_mask) if need_collab else None
        if bundle_char is None:
            bundle_explicit = bundle_collab
        elif self.graph_attention is None:
            bundle_explicit = bundle_char
        else:
            bundle_explicit = mix_convex(bundle_char, bundle_collab, cfg.effective_gamma)

        if self.hypergraph is not None:
            if cfg.hyperedge_input == "raw":
                hyper_feats = self._features()
            else:
                hyper_feats = self.projection(self._features())
            item_implicit, bundle_implicit = self.hypergraph(
                hyper_feats, collab, member_idx, member_mask, sample_noise, generator
            )
        else:
            item_implicit, bundle_implicit = None, None

        return EncodedViews(
            item_char=char,
            item_collab=collab if self.graph_attention is not None else None,
            item_explicit=explicit,
            item_implicit=item_implicit,
            bundle_char=bundle_char,
            bundle_collab=bundle_collab if self.graph_attention is not None else None,
            bundle_explicit=bundle_explicit,
            bundle_implicit=bundle_implicit,
        )

    def forward(self, member_idx: Tensor, member_mask: Tensor, **kwargs) -> EncodedViews:
        return self.encode(member_idx, member_mask, **kwargs)
