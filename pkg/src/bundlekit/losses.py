"""Scoring and loss functions: retrieval NLL, contrastive alignment, joint objective."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable

import torch
from torch import Tensor

from .errors import ConfigError, TrainingDivergedError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossReport:
    """Per-step loss decomposition; total = nll + lambda1*(mad_item+mad_bundle) + lambda2*reg."""

    nll: float
    mad_item: float
    mad_bundle: float
    reg: float
    total: float
    lambda1: float
    lambda2: float

    CSV_HEADER = "nll,mad_item,mad_bundle,reg,total"

    def csv_row(self) -> str:
        return f"{self.nll!r},{self.mad_item!r},{self.mad_bundle!r},{self.reg!r},{self.total!r}"


def pair_scores(
    bundle_explicit: Tensor,
    item_explicit: Tensor,
    bundle_implicit: Tensor | None = None,
    item_implicit: Tensor | None = None,
) -> Tensor:
    """Candidate scores: explicit inner product plus (optionally) the implicit one."""
    scores = bundle_explicit @ item_explicit.T
    if bundle_implicit is not None and item_implicit is not None:
        scores = scores + bundle_implicit @ item_implicit.T
    return scores


def nll_loss(scores: Tensor, membership: Tensor) -> Tensor:
    """Mean over bundles of (1/n_items) * sum of -log softmax at member items.

    ``membership`` is the binary bundle-item indicator aligned with ``scores``
    (both (n_bundles, n_items)). Softmax uses max-subtraction for stability.
    """
    if scores.shape != membership.shape:
        raise ConfigError(f"scores {tuple(scores.shape)} and membership {tuple(membership.shape)} differ")
    if torch.isnan(scores).any():
        raise TrainingDivergedError("scores", "NaN entering nll_loss")
    n_items = scores.shape[1]
    log_probs = torch.log_softmax(scores, dim=1)
    per_bundle = -(membership.to(scores.dtype) * log_probs).sum(dim=1) / n_items
    return per_bundle.mean()


def cosine_matrix(anchors: Tensor, others: Tensor) -> Tensor:
    """Pairwise cosine similarity; rows of zero norm contribute cosine 0."""
    a_norm = anchors.norm(dim=1, keepdim=True)
    b_norm = others.norm(dim=1, keepdim=True)
    if (a_norm == 0).any() or (b_norm == 0).any():
        log.warning("cosine similarity saw all-zero rows; treating their similarity as 0")
    a = anchors / a_norm.clamp_min(1e-12)
    b = others / b_norm.clamp_min(1e-12)
    return a @ b.T


def infonce(anchors: Tensor, positives: Tensor, tau: float) -> Tensor:
    """Contrastive alignment: row i of ``anchors`` is positive with row i of
    ``positives`` and contrasted against every row of ``positives`` (the
    denominator includes the positive term)."""
    if tau <= 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    if anchors.shape[0] < 2:
        raise ConfigError("infonce needs at least 2 rows")
    sim = cosine_matrix(anchors, positives) / tau
    return (torch.logsumexp(sim, dim=1) - sim.diagonal()).mean()


def alignment_losses(
    item_explicit: Tensor,
    item_implicit: Tensor,
    bundle_explicit: Tensor,
    bundle_implicit: Tensor,
    tau: float,
) -> tuple[Tensor, Tensor]:
    """Item- and bundle-level contrastive alignment between the two strategies."""
    return (
        infonce(item_explicit, item_implicit, tau),
        infonce(bundle_explicit, bundle_implicit, tau),
    )


def l2_regularizer(parameters: Iterable[Tensor]) -> Tensor:
    """Sum of squared entries over every trainable parameter."""
    total: Tensor | None = None
    for p in parameters:
        term = p.pow(2).sum()
        total = term if total is None else total + term
    if total is None:
        raise ConfigError("no parameters to regularize")
    return total


def joint_loss(
    nll: Tensor,
    mad_item: Tensor,
    mad_bundle: Tensor,
    reg: Tensor,
    lambda1: float,
    lambda2: float,
) -> tuple[Tensor, LossReport]:
    """Combine the parts; returns the differentiable total and a float report."""
    if lambda1 < 0 or lambda2 < 0:
        raise ConfigError("lambda1 and lambda2 must be >= 0")
    total = nll + lambda1 * (mad_item + mad_bundle) + lambda2 * reg
    report = LossReport(
        nll=float(nll.detach()),
        mad_item=float(mad_item.detach()),
        mad_bundle=float(mad_bundle.detach()),
        reg=float(reg.detach()),
        total=float(total.detach()),
        lambda1=lambda1,
        lambda2=lambda2,
    )
    return total, report
