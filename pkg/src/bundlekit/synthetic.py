"""Synthetic planted-structure dataset for demos, smoke runs, and acceptance checks.

Items fall into characteristic clusters; each bundle samples items from one
cluster; modality features are noisy copies of cluster centroids; and every
bundle gets a few dedicated users so the co-purchase graph reflects bundle
co-membership.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .data import (
    BundleCatalog,
    BundleDataset,
    InteractionMatrix,
    ModalityBank,
    Vocabulary,
)
from .errors import ConfigError


def make_planted_dataset(
    n_clusters: int = 6,
    items_per_cluster: int = 10,
    n_bundles: int = 30,
    bundle_size: tuple[int, int] = (3, 5),
    users_per_bundle: int = 2,
    feature_dims: dict[str, int] | None = None,
    feature_noise: float = 0.3,
    interaction_noise: int = 0,
    rng_seed: int = 7,
) -> BundleDataset:
    """Build the planted dataset in memory (no split assigned yet).

    ``interaction_noise`` adds that many random extra user-item pairs, which
    blurs the co-purchase graph without touching bundle structure.
    """
    if bundle_size[0] < 2 or bundle_size[1] > items_per_cluster:
        raise ConfigError("bundle_size must fit within a cluster and be >= 2")
    if feature_dims is None:
        feature_dims = {"text": 16, "visual": 16}
    rng = np.random.default_rng(rng_seed)
    n_items = n_clusters * items_per_cluster
    cluster_of = np.repeat(np.arange(n_clusters), items_per_cluster)

    features = {}
    for modality, dim in sorted(feature_dims.items()):
        centroids = rng.normal(0.0, 1.0, size=(n_clusters, dim))
        noise = rng.normal(0.0, feature_noise, size=(n_items, dim))
        features[modality] = (centroids[cluster_of] + noise).astype(np.float32)

    bundles: list[np.ndarray] = []
    for b in range(n_bundles):
        cluster = b % n_clusters
        size = int(rng.integers(bundle_size[0], bundle_size[1] + 1))
        pool = np.flatnonzero(cluster_of == cluster)
        bundles.append(np.sort(rng.choice(pool, size=size, replace=False)))

    user_rows, user_cols = [], []
    user = 0
    for items in bundles:
        for _ in range(users_per_bundle):
            for i in items:
                user_rows.append(user)
                user_cols.append(int(i))
            user += 1
    for _ in range(interaction_noise):
        user_rows.append(int(rng.integers(0, user)))
        user_cols.append(int(rng.integers(0, n_items)))
    n_users = user

    item_vocab = Vocabulary(f"item_{i:04d}" for i in range(n_items))
    user_vocab = Vocabulary(f"user_{u:04d}" for u in range(n_users))
    bundle_vocab = Vocabulary(f"bundle_{b:04d}" for b in range(n_bundles))

    x = sp.coo_matrix(
        (np.ones(len(user_rows), dtype=np.int64), (user_rows, user_cols)), shape=(n_users, n_items)
    ).tocsr()
    x.sum_duplicates()
    x.data[:] = 1
    b_rows = np.concatenate([np.full(len(items), b) for b, items in enumerate(bundles)])
    b_cols = np.concatenate(bundles)
    y = sp.coo_matrix(
        (np.ones(len(b_rows), dtype=np.int64), (b_rows, b_cols)), shape=(n_bundles, n_items)
    ).tocsr()

    return BundleDataset(
        interactions=InteractionMatrix(x, user_vocab, item_vocab),
        catalog=BundleCatalog(y, bundle_vocab, item_vocab),
        modalities=ModalityBank(features),
    )
