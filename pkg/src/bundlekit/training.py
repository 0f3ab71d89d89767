"""End-to-end training: epoch loop, Adam, early stopping, checkpoints."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .config import TrainConfig
from .data import TRAIN, VALID, BundleDataset
from .errors import ConfigError, TrainingDivergedError
from .evaluation import rank_candidates
from .graph import ItemGraph, build_item_graph
from .losses import LossReport, alignment_losses, infonce, joint_loss, l2_regularizer, nll_loss
from .model import BundleCompletionModel, membership_rows, pad_members

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOG_HEADER = "epoch,total,nll,mad_item,mad_bundle,reg,valid_R@20,valid_N@20,seconds"


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    total: float
    nll: float
    mad_item: float
    mad_bundle: float
    reg: float
    valid_recall: float
    valid_ndcg: float
    seconds: float

    def csv_row(self) -> str:
        return (
            f"{self.epoch},{self.total!r},{self.nll!r},{self.mad_item!r},{self.mad_bundle!r},"
            f"{self.reg!r},{self.valid_recall!r},{self.valid_ndcg!r},{self.seconds:.3f}"
        )


@dataclass
class TrainResult:
    model: BundleCompletionModel
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_ndcg: float = float("nan")

    def write_log(self, path: Path | str) -> None:
        lines = [LOG_HEADER] + [r.csv_row() for r in self.history]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _seeded_generators(seed: int) -> tuple[np.random.Generator, torch.Generator]:
    root = np.random.SeedSequence(seed)
    shuffle_ss, gumbel_ss, torch_ss = root.spawn(3)
    torch.manual_seed(int(torch_ss.generate_state(1, dtype=np.uint64)[0] >> 1))
    gumbel = torch.Generator()
    gumbel.manual_seed(int(gumbel_ss.generate_state(1, dtype=np.uint64)[0] >> 1))
    return np.random.default_rng(shuffle_ss), gumbel


def _check_finite(value: torch.Tensor, name: str, context: str) -> None:
    if not torch.isfinite(value).all():
        raise TrainingDivergedError(name, context)


def train_step(
    model: BundleCompletionModel,
    member_lists: Sequence[Sequence[int]],
    generator: torch.Generator | None,
) -> tuple[torch.Tensor, LossReport]:
    """One forward pass over a batch of training bundles; returns (loss, report)."""
    cfg = model.config
    idx, mask = pad_members(member_lists)
    views = model.encode(idx, mask, sample_noise=model.training and cfg.use_hypergraph, generator=generator)
    scores = views.scores()
    membership = membership_rows(member_lists, model.n_items, dtype=scores.dtype)
    nll = nll_loss(scores, membership)

    zero = scores.new_zeros(())
    if cfg.effective_lambda1 > 0:
        assert views.item_implicit is not None and views.bundle_implicit is not None
        if cfg.negative_scope == "in_batch":
            in_batch = torch.unique(idx[mask])
            item_explicit = views.item_explicit[in_batch]
            item_implicit = views.item_implicit[in_batch]
        else:
            item_explicit, item_implicit = views.item_explicit, views.item_implicit
        if len(member_lists) >= 2:
            mad_item, mad_bundle = alignment_losses(
                item_explicit, item_implicit, views.bundle_explicit, views.bundle_implicit, cfg.tau_infonce
            )
        else:  # a stray singleton batch has no bundle negatives
            mad_item = infonce(item_explicit, item_implicit, cfg.tau_infonce)
            mad_bundle = zero
    else:
        mad_item = mad_bundle = zero

    reg = l2_regularizer(model.parameters())
    total, report = joint_loss(nll, mad_item, mad_bundle, reg, cfg.effective_lambda1, cfg.lambda2)
    for name, value in (("nll", nll), ("mad_item", mad_item), ("mad_bundle", mad_bundle), ("reg", reg), ("total", total)):
        _check_finite(value, name, "training step")
    return total, report


def train(
    config: TrainConfig,
    dataset: BundleDataset,
    *,
    graph: ItemGraph | None = None,
    dtype: torch.dtype = torch.float32,
    eval_k: int = 20,
    log_path: Path | str | None = None,
    epoch_callback: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Run the full training loop and return the best-validation model.

    Early stopping watches NDCG@``eval_k`` on the validation split with the
    configured patience; when the dataset has no validation bundles the loop
    simply runs ``max_epochs`` and keeps the final state.
    """
    cfg = config.validate()
    catalog = dataset.catalog
    if catalog.split is None:
        raise ConfigError("dataset has no split; run split_bundles first")
    train_bundles = catalog.bundles_in(TRAIN)
    if len(train_bundles) == 0:
        raise ConfigError("no training bundles")
    valid_bundles = catalog.bundles_in(VALID)

    shuffle_rng, gumbel_gen = _seeded_generators(cfg.rng_seed)
    if graph is None:
        graph = build_item_graph(dataset.interactions, cfg.epsilon)
    model = BundleCompletionModel.from_dataset(cfg, dataset, graph, dtype=dtype)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)

    members = {int(b): tuple(int(i) for i in catalog.members(int(b))) for b in train_bundles}
    result = TrainResult(model=model)
    best_state: dict[str, torch.Tensor] | None = None
    best_ndcg = -float("inf")
    stale = 0
    log_fh = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    if log_fh:
        log_fh.write(LOG_HEADER + "\n")

    try:
        for epoch in range(1, cfg.max_epochs + 1):
            started = time.perf_counter()
            model.train()
            order = shuffle_rng.permutation(len(train_bundles))
            epoch_losses = np.zeros(5, dtype=np.float64)
            n_seen = 0
            for lo in range(0, len(order), cfg.batch_size):
                batch = [members[int(train_bundles[k])] for k in order[lo : lo + cfg.batch_size]]
                try:
                    total, report = train_step(model, batch, gumbel_gen)
                except TrainingDivergedError as err:
                    raise TrainingDivergedError(err.tensor_name, f"epoch {epoch}") from None
                optimizer.zero_grad()
                total.backward()
                optimizer.step()
                epoch_losses += len(batch) * np.array(
                    [report.total, report.nll, report.mad_item, report.mad_bundle, report.reg]
                )
                n_seen += len(batch)
            epoch_losses /= n_seen

            if len(valid_bundles):
                valid = rank_candidates(model, catalog, VALID, k_max=eval_k, ks=(eval_k,))
                v_recall = valid.metrics[eval_k]["recall"]
                v_ndcg = valid.metrics[eval_k]["ndcg"]
            else:
                v_recall = v_ndcg = float("nan")

            record = EpochRecord(
                epoch=epoch,
                total=float(epoch_losses[0]),
                nll=float(epoch_losses[1]),
                mad_item=float(epoch_losses[2]),
                mad_bundle=float(epoch_losses[3]),
                reg=float(epoch_losses[4]),
                valid_recall=v_recall,
                valid_ndcg=v_ndcg,
                seconds=time.perf_counter() - started,
            )
            result.history.append(record)
            if log_fh:
                log_fh.write(record.csv_row() + "\n")
                log_fh.flush()
            if epoch_callback:
                epoch_callback(record)

            if len(valid_bundles):
                if v_ndcg > best_ndcg:
                    best_ndcg = v_ndcg
                    result.best_epoch = epoch
                    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
                    stale = 0
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        log.info("early stop at epoch %d (no NDCG@%d gain in %d epochs)", epoch, eval_k, stale)
                        break
    finally:
        if log_fh:
            log_fh.close()

    if best_state is not None:
        model.load_state_dict(best_state)
        result.best_ndcg = best_ndcg
    else:
        result.best_epoch = len(result.history)
    return result


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(
    path: Path | str,
    model: BundleCompletionModel,
    optimizer: torch.optim.Optimizer | None = None,
    epoch: int = 0,
    best_metrics: dict | None = None,
) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "params": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "best": best_metrics or {},
    }
    torch.save(payload, path)


def load_checkpoint(
    path: Path | str,
    dataset: BundleDataset,
    graph: ItemGraph | None = None,
    dtype: torch.dtype = torch.float32,
) -> tuple[BundleCompletionModel, dict]:
    """Rebuild the model against the dataset and restore its parameters."""
    payload = torch.load(path, weights_only=True)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {payload.get('version')!r}")
    cfg = TrainConfig(**payload["config"]).validate()
    if graph is None:
        graph = build_item_graph(dataset.interactions, cfg.epsilon)
    model = BundleCompletionModel.from_dataset(cfg, dataset, graph, dtype=dtype)
    model.load_state_dict(payload["params"])
    return model, payload
