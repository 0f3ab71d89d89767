"""Shared fixtures: tiny raw files, in-memory datasets, gradient-check helpers."""

from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp
import torch

from bundlekit.config import TrainConfig
from bundlekit.data import (
    BundleCatalog,
    BundleDataset,
    InteractionMatrix,
    ModalityBank,
    Vocabulary,
    write_feature_file,
)
from bundlekit.graph import build_item_graph
from bundlekit.model import BundleCompletionModel


def write_pairs(path, pairs):
    with open(path, "w", encoding="utf-8") as fh:
        for a, b in pairs:
            fh.write(f"{a}\t{b}\n")


@pytest.fixture
def raw_files(tmp_path):
    """Raw input triplet: 4 items, 3 users, 3 bundles, two modalities."""
    items = ["apple", "bread", "cheese", "dates"]
    write_pairs(
        tmp_path / "interactions.tsv",
        [("u1", "apple"), ("u1", "bread"), ("u2", "bread"), ("u2", "cheese"), ("u3", "apple"), ("u3", "bread")],
    )
    write_pairs(
        tmp_path / "affiliations.tsv",
        [("b1", "apple"), ("b1", "bread"), ("b2", "bread"), ("b2", "cheese"), ("b3", "cheese"), ("b3", "dates")],
    )
    rng = np.random.default_rng(3)
    write_feature_file(tmp_path / "feat_text.bin", rng.normal(size=(4, 5)).astype(np.float32), items)
    write_feature_file(tmp_path / "feat_visual.bin", rng.normal(size=(4, 6)).astype(np.float32), items)
    return {
        "interactions": tmp_path / "interactions.tsv",
        "affiliations": tmp_path / "affiliations.tsv",
        "features": {"text": tmp_path / "feat_text.bin", "visual": tmp_path / "feat_visual.bin"},
    }


def build_dataset(x_dense, bundles, feature_dims=(5, 6), rng_seed=11):
    """In-memory dataset from a dense binary X and bundle member lists."""
    x_dense = np.asarray(x_dense)
    n_users, n_items = x_dense.shape
    rng = np.random.default_rng(rng_seed)
    features = {
        "text": rng.normal(size=(n_items, feature_dims[0])).astype(np.float32),
        "visual": rng.normal(size=(n_items, feature_dims[1])).astype(np.float32),
    }
    item_vocab = Vocabulary(f"i{k}" for k in range(n_items))
    user_vocab = Vocabulary(f"u{k}" for k in range(n_users))
    bundle_vocab = Vocabulary(f"b{k}" for k in range(len(bundles)))
    x = sp.csr_matrix(x_dense.astype(np.int64))
    x.eliminate_zeros()
    rows = np.concatenate([np.full(len(m), b) for b, m in enumerate(bundles)])
    cols = np.concatenate([np.asarray(sorted(m)) for m in bundles])
    y = sp.coo_matrix((np.ones(len(rows), dtype=np.int64), (rows, cols)), shape=(len(bundles), n_items)).tocsr()
    return BundleDataset(
        interactions=InteractionMatrix(x, user_vocab, item_vocab),
        catalog=BundleCatalog(y, bundle_vocab, item_vocab),
        modalities=ModalityBank(features),
    )


TINY_BUNDLES = [(0, 1, 2), (2, 3, 4), (5, 6), (7, 8, 9, 10)]


def tiny_gradcheck_setup(seed=0, **config_overrides):
    """Frozen small instance: 12 items, 4 bundles, 2 users, d=8, all depths 1, H=2."""
    x = np.zeros((2, 12), dtype=np.int64)
    x[0, [0, 1, 2, 3, 11]] = 1
    x[1, [2, 3, 4, 5, 6]] = 1
    dataset = build_dataset(x, TINY_BUNDLES, rng_seed=5)
    defaults = dict(
        embed_dim=8,
        item_attn_layers=1,
        bundle_attn_layers=1,
        graph_attn_layers=1,
        hypergraph_layers=1,
        num_hyperedges=2,
        gamma=0.4,
        beta=0.6,
        lambda1=0.3,
        lambda2=1e-5,
        epsilon=1,
    )
    defaults.update(config_overrides)
    cfg = TrainConfig(**defaults).validate()
    torch.manual_seed(seed)
    graph = build_item_graph(dataset.interactions, cfg.epsilon)
    model = BundleCompletionModel.from_dataset(cfg, dataset, graph, dtype=torch.float64)
    members = [tuple(int(i) for i in dataset.catalog.members(b)) for b in range(dataset.catalog.n_bundles)]
    return model, dataset, members


def finite_difference_grads(loss_fn, parameters, step=1e-5):
    """Central differences of a scalar loss w.r.t. each parameter tensor."""
    grads = []
    with torch.no_grad():
        for p in parameters:
            grad = torch.zeros_like(p)
            flat, gflat = p.view(-1), grad.view(-1)
            for k in range(flat.numel()):
                orig = flat[k].item()
                flat[k] = orig + step
                up = float(loss_fn())
                flat[k] = orig - step
                down = float(loss_fn())
                flat[k] = orig
                gflat[k] = (up - down) / (2.0 * step)
            grads.append(grad)
    return grads


def max_relative_error(analytic, numeric, floor=1e-3):
    """Worst-case |a - f| / max(|a|, |f|, floor); the floor guards
    finite-difference noise on near-zero gradient entries."""
    worst = 0.0
    for a, f in zip(analytic, numeric):
        denom = torch.maximum(torch.maximum(a.abs(), f.abs()), torch.full_like(a, floor))
        worst = max(worst, float(((a - f).abs() / denom).max()))
    return worst
