"""Candidate ranking for partial bundles and Recall@K / NDCG@K aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .data import TRAIN, VALID, BundleCatalog
from .errors import ConfigError
from .model import BundleCompletionModel, pad_members


def recall_at_k(ranked: Sequence[int], targets: Iterable[int], k: int) -> float:
    """Fraction of target items appearing in the top k of the ranking."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    target_set = set(targets)
    if not target_set:
        raise ConfigError("recall is undefined for an empty target set")
    hits = sum(1 for item in ranked[:k] if item in target_set)
    return hits / len(target_set)


def ndcg_at_k(ranked: Sequence[int], targets: Iterable[int], k: int) -> float:
    """Binary-relevance NDCG with 1/log2(rank+1) discounts."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    target_set = set(targets)
    if not target_set:
        raise ConfigError("ndcg is undefined for an empty target set")
    dcg = sum(
        1.0 / math.log2(rank + 1)
        for rank, item in enumerate(ranked[:k], start=1)
        if item in target_set
    )
    ideal = sum(1.0 / math.log2(rank + 1) for rank in range(1, min(k, len(target_set)) + 1))
    return dcg / ideal


@dataclass(frozen=True)
class BundleRanking:
    bundle_index: int
    items: np.ndarray   # candidate item indices, best first
    scores: np.ndarray  # matching scores, non-increasing
    seeds: tuple[int, ...]
    targets: tuple[int, ...]

    def metrics(self, ks: Sequence[int]) -> dict[int, dict[str, float]]:
        ranked = self.items.tolist()
        return {
            k: {
                "recall": recall_at_k(ranked, self.targets, k),
                "ndcg": ndcg_at_k(ranked, self.targets, k),
            }
            for k in ks
        }


@dataclass(frozen=True)
class RankingResult:
    rankings: list[BundleRanking]
    metrics: dict[int, dict[str, float]]  # mean over bundles per cutoff

    @property
    def n_bundles(self) -> int:
        return len(self.rankings)


def rank_score_matrix(
    scores: np.ndarray,
    exclude_lists: Sequence[Sequence[int]],
    k_max: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Stable descending ranking per row with excluded items removed.

    Ties break by ascending item index. Returns (items, scores) arrays of
    shape (n_rows, min(k_max, n_candidates)).
    """
    scores = scores.astype(np.float64, copy=True)
    for row, excluded in enumerate(exclude_lists):
        if len(excluded):
            scores[row, list(excluded)] = -np.inf
    order = np.argsort(-scores, axis=1, kind="stable")
    keep = min(k_max, scores.shape[1])
    top = order[:, :keep]
    return top, np.take_along_axis(scores, top, axis=1)


def _rank_bundles(
    model: BundleCompletionModel,
    bundle_indices: Sequence[int],
    member_lists: Sequence[Sequence[int]],
    exclude_lists: Sequence[Sequence[int]],
    target_lists: Sequence[tuple[int, ...]],
    k_max: int,
    ks: Sequence[int],
    chunk_size: int = 512,
) -> RankingResult:
    if k_max < max(ks, default=1):
        raise ConfigError(f"k_max={k_max} is below the largest requested cutoff {max(ks)}")
    rankings: list[BundleRanking] = []
    model.eval()
    with torch.no_grad():
        for start in range(0, len(bundle_indices), chunk_size):
            stop = start + chunk_size
            idx, mask = pad_members(member_lists[start:stop])
            views = model.encode(idx, mask, sample_noise=False)
            score_chunk = views.scores().detach().cpu().numpy()
            items, scores = rank_score_matrix(score_chunk, exclude_lists[start:stop], k_max)
            for row, b in enumerate(bundle_indices[start:stop]):
                valid = scores[row] > -np.inf  # excluded items sort last; drop them
                rankings.append(
                    BundleRanking(
                        bundle_index=int(b),
                        items=items[row, valid].copy(),
                        scores=scores[row, valid].copy(),
                        seeds=tuple(exclude_lists[start + row]),
                        targets=tuple(target_lists[start + row]),
                    )
                )
    aggregates: dict[int, dict[str, float]] = {
        k: {"recall": 0.0, "ndcg": 0.0} for k in ks
    }
    for ranking in rankings:
        per = ranking.metrics(ks)
        for k in ks:
            aggregates[k]["recall"] += per[k]["recall"]
            aggregates[k]["ndcg"] += per[k]["ndcg"]
    n = max(len(rankings), 1)
    for k in ks:
        aggregates[k]["recall"] /= n
        aggregates[k]["ndcg"] /= n
    return RankingResult(rankings=rankings, metrics=aggregates)


def rank_candidates(
    model: BundleCompletionModel,
    catalog: BundleCatalog,
    split: int = VALID,
    k_max: int = 20,
    ks: Sequence[int] = (10, 20),
    chunk_size: int = 512,
) -> RankingResult:
    """Complete every bundle of the split from its seed items.

    Bundles are encoded from seeds only; seeds are excluded from the
    candidate pool and the persisted targets are scored against the rest of
    the catalog.
    """
    bundles = [int(b) for b in catalog.bundles_in(split)]
    seeds = [catalog.seed_items(b) for b in bundles]
    targets = [catalog.target_items(b) for b in bundles]
    return _rank_bundles(model, bundles, seeds, seeds, targets, k_max, ks, chunk_size)


def rank_training_reconstruction(
    model: BundleCompletionModel,
    catalog: BundleCatalog,
    k_max: int = 20,
    ks: Sequence[int] = (10, 20),
    chunk_size: int = 512,
) -> RankingResult:
    """Auto-encoder check: encode each training bundle from all members and
    measure how highly those same members rank (nothing excluded)."""
    bundles = [int(b) for b in catalog.bundles_in(TRAIN)]
    members = [tuple(int(i) for i in catalog.members(b)) for b in bundles]
    empty: list[tuple[int, ...]] = [() for _ in bundles]
    return _rank_bundles(model, bundles, members, empty, members, k_max, ks, chunk_size)


def metrics_csv_rows(result: RankingResult, split_name: str) -> list[str]:
    rows = ["split,K,recall,ndcg"]
    for k in sorted(result.metrics):
        m = result.metrics[k]
        rows.append(f"{split_name},{k},{m['recall']:.6f},{m['ndcg']:.6f}")
    return rows


def write_metrics_csv(result: RankingResult, split_name: str, path: Path | str) -> None:
    Path(path).write_text("\n".join(metrics_csv_rows(result, split_name)) + "\n", encoding="utf-8")


def write_topk_dump(result: RankingResult, catalog: BundleCatalog, path: Path | str) -> None:
    """Per-bundle top-K candidates: ``bundle_id,rank,item_id,score``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bundle_id,rank,item_id,score\n")
        for ranking in result.rankings:
            bid = catalog.bundle_vocab.id_of(ranking.bundle_index)
            for rank, (item, score) in enumerate(zip(ranking.items, ranking.scores), start=1):
                fh.write(f"{bid},{rank},{catalog.item_vocab.id_of(int(item))},{score!r}\n")
