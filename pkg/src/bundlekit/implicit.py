"""Implicit-strategy encoder: learnable hyperedges and hypergraph propagation.

Per modality, items connect to H latent hyperedges through the product of
their features with a learnable hyperedge bank; bundles inherit dependencies
by summing over members. Rows are sparsified onto the simplex with a
temperature softmax (optionally perturbed by uniform-logit noise during
training), then item states diffuse through hyperedges for a fixed depth.
Modality outputs are summed and row-normalized.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .errors import ConfigError
from .explicit import xavier_

_NORM_FLOOR = 1e-12


def gumbel_softmax_rows(
    logits: Tensor,
    tau: float,
    sample_noise: bool = False,
    generator: torch.Generator | None = None,
) -> Tensor:
    """Row-simplex sparsification: softmax((noise + logits) / tau) over the last dim.

    Noise entries are log(theta) - log(1 - theta) with theta uniform on (0, 1);
    with ``sample_noise`` off this is a plain temperature softmax.
    """
    if tau <= 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    if sample_noise:
        theta = torch.rand(logits.shape, generator=generator, dtype=logits.dtype, device=logits.device)
        eps = torch.finfo(logits.dtype).eps
        theta = theta.clamp(min=eps, max=1.0 - eps)
        logits = logits + torch.log(theta) - torch.log1p(-theta)
    return torch.softmax(logits / tau, dim=-1)


def propagate_items(dependencies: Tensor, state: Tensor, depth: int) -> Tensor:
    """Apply the item-to-item hyperedge diffusion ``depth`` times.

    Each step routes states through the H hyperedges: F (F^T state), which
    avoids materializing the (n_items x n_items) product.
    """
    if depth < 1:
        raise ConfigError(f"depth must be >= 1, got {depth}")
    x = state
    for _ in range(depth):
        x = dependencies @ (dependencies.T @ x)
    return x


def bundle_readout(bundle_dependencies: Tensor, item_dependencies: Tensor, state: Tensor) -> Tensor:
    """Bundle states from an item state: F_B (F_I^T state)."""
    return bundle_dependencies @ (item_dependencies.T @ state)


def lp_normalize(x: Tensor, p: int) -> Tensor:
    """Row-wise L_p normalization; all-zero rows map to zero."""
    norms = x.norm(p=p, dim=-1, keepdim=True)
    return x / norms.clamp_min(_NORM_FLOOR)


class HyperedgeBank(nn.Module):
    """Learnable hyperedge embeddings per modality, matching the feature space."""

    def __init__(self, input_dims: dict[str, int], n_hyperedges: int, dtype: torch.dtype = torch.float32):
        super().__init__()
        if n_hyperedges < 1:
            raise ConfigError(f"need >= 1 hyperedge, got {n_hyperedges}")
        self.n_hyperedges = n_hyperedges
        self.edges = nn.ParameterDict()
        for modality, dim in sorted(input_dims.items()):
            w = nn.Parameter(torch.empty(n_hyperedges, dim, dtype=dtype))
            xavier_(w)
            self.edges[modality] = w

    def item_dependencies(self, features: dict[str, Tensor]) -> dict[str, Tensor]:
        """Raw item-hyperedge logits per modality: features @ W^T."""
        out = {}
        for modality, w in self.edges.items():
            feat = features[modality]
            if feat.shape[1] != w.shape[1]:
                raise ConfigError(
                    f"modality {modality!r}: feature dim {feat.shape[1]} != hyperedge dim {w.shape[1]}"
                )
            out[modality] = feat @ w.T
        return out


class HypergraphEncoder(nn.Module):
    """Full implicit pipeline: dependencies, sparsify, propagate, normalize."""

    def __init__(
        self,
        input_dims: dict[str, int],
        n_hyperedges: int,
        depth: int,
        tau: float,
        p_norm: int = 2,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        if depth < 1:
            raise ConfigError(f"depth must be >= 1, got {depth}")
        if tau <= 0:
            raise ConfigError(f"tau must be > 0, got {tau}")
        self.bank = HyperedgeBank(input_dims, n_hyperedges, dtype=dtype)
        self.depth = depth
        self.tau = tau
        self.p_norm = p_norm

    def forward(
        self,
        features: dict[str, Tensor],
        item_state: Tensor,
        member_idx: Tensor,
        member_mask: Tensor,
        sample_noise: bool = False,
        generator: torch.Generator | None = None,
    ) -> tuple[Tensor, Tensor]:
        """Returns (item_states, bundle_states), both row-normalized.

        ``item_state`` seeds the diffusion (the collaborative item view).
        ``member_idx``/``member_mask`` select which items feed each bundle's
        dependency row; at inference these must cover only seed items.
        """
        item_total: Tensor | None = None
        bundle_total: Tensor | None = None
        raw_item = self.bank.item_dependencies(features)
        for modality in self.bank.edges:
            f_items = raw_item[modality]
            gathered = f_items[member_idx] * member_mask.unsqueeze(-1).to(f_items.dtype)
            f_bundles = gathered.sum(dim=1)
            dep_items = gumbel_softmax_rows(f_items, self.tau, sample_noise, generator)
            dep_bundles = gumbel_softmax_rows(f_bundles, self.tau, sample_noise, generator)
            state = propagate_items(dep_items, item_state, self.depth - 1) if self.depth > 1 else item_state
            bundle_m = bundle_readout(dep_bundles, dep_items, state)
            item_m = propagate_items(dep_items, state, 1)
            item_total = item_m if item_total is None else item_total + item_m
            bundle_total = bundle_m if bundle_total is None else bundle_total + bundle_m
        assert item_total is not None and bundle_total is not None
        return lp_normalize(item_total, self.p_norm), lp_normalize(bundle_total, self.p_norm)
