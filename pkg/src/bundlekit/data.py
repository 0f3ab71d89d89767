"""Dataset ingestion: interactions, bundle affiliations, modality features.

Input formats:
  * interactions file: UTF-8 text, ``user_id<TAB>item_id`` per line.
  * affiliations file: UTF-8 text, ``bundle_id<TAB>item_id`` per line.
  * feature file (one per modality): binary, magic ``RMFB``, two u64-LE
    integers (rows, cols), then rows*cols f32-LE values row-major. A sidecar
    text file at ``<path>.items`` lists external item IDs in row order.

The item vocabulary is the union over all inputs. The feature sidecar defines
the index order and must cover every item referenced by interactions or
affiliations; items that only appear in the sidecar are kept as cold
candidates for retrieval.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataFormatError

log = logging.getLogger(__name__)

FEATURE_MAGIC = b"RMFB"
SIDECAR_SUFFIX = ".items"

TRAIN, VALID, TEST = 0, 1, 2
SPLIT_NAMES = {TRAIN: "train", VALID: "valid", TEST: "test"}
SPLIT_CODES = {v: k for k, v in SPLIT_NAMES.items()}


class Vocabulary:
    """Bijection between external string IDs and dense indices [0, n)."""

    def __init__(self, ids: Iterable[str]):
        self._ids = tuple(ids)
        self._index = {ext: i for i, ext in enumerate(self._ids)}
        if len(self._index) != len(self._ids):
            raise DataFormatError("duplicate external ID in vocabulary")

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, external_id: str) -> bool:
        return external_id in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and other._ids == self._ids

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ids

    def index(self, external_id: str) -> int:
        try:
            return self._index[external_id]
        except KeyError:
            raise KeyError(f"unknown ID {external_id!r}") from None

    def id_of(self, index: int) -> str:
        return self._ids[index]


@dataclass(frozen=True)
class InteractionMatrix:
    """Binary user-item matrix with its ID vocabularies."""

    matrix: sp.csr_matrix  # (n_users, n_items), entries are exactly 1
    user_vocab: Vocabulary
    item_vocab: Vocabulary

    @property
    def n_users(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_items(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_pairs(self) -> int:
        return int(self.matrix.nnz)


@dataclass(frozen=True)
class BundleCatalog:
    """Bundle-item affiliations plus split labels and seed/target masks.

    ``split`` is None before :func:`split_bundles` runs. ``masks`` maps the
    index of each valid/test bundle to its (seed, target) item-index tuples.
    """

    matrix: sp.csr_matrix  # (n_bundles, n_items), entries are exactly 1
    bundle_vocab: Vocabulary
    item_vocab: Vocabulary
    split: np.ndarray | None = None
    masks: dict[int, tuple[tuple[int, ...], tuple[int, ...]]] = field(default_factory=dict)

    @property
    def n_bundles(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_items(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_pairs(self) -> int:
        return int(self.matrix.nnz)

    def members(self, bundle_index: int) -> np.ndarray:
        """Sorted item indices of one bundle."""
        row = self.matrix.indices[
            self.matrix.indptr[bundle_index] : self.matrix.indptr[bundle_index + 1]
        ]
        return np.sort(row)

    def bundles_in(self, split: int) -> np.ndarray:
        if self.split is None:
            raise ConfigError("catalog has no split; run split_bundles first")
        return np.flatnonzero(self.split == split)

    def seed_items(self, bundle_index: int) -> tuple[int, ...]:
        return self.masks[bundle_index][0]

    def target_items(self, bundle_index: int) -> tuple[int, ...]:
        return self.masks[bundle_index][1]


@dataclass(frozen=True)
class ModalityBank:
    """Dense per-item feature matrices keyed by modality name."""

    features: dict[str, np.ndarray]  # modality -> (n_items, d_m) float32

    @property
    def modalities(self) -> tuple[str, ...]:
        return tuple(sorted(self.features))

    @property
    def n_items(self) -> int:
        return next(iter(self.features.values())).shape[0]

    def dim(self, modality: str) -> int:
        return self.features[modality].shape[1]


@dataclass(frozen=True)
class DatasetStats:
    n_users: int
    n_items: int
    n_bundles: int
    n_bundle_item_pairs: int
    n_user_item_pairs: int
    avg_items_per_bundle: float
    avg_items_per_user: float
    density: float


@dataclass(frozen=True)
class BundleDataset:
    """The three canonical structures sharing one item vocabulary."""

    interactions: InteractionMatrix
    catalog: BundleCatalog
    modalities: ModalityBank

    @property
    def item_vocab(self) -> Vocabulary:
        return self.catalog.item_vocab

    @property
    def n_items(self) -> int:
        return self.catalog.n_items

    def stats(self) -> DatasetStats:
        x, y = self.interactions, self.catalog
        return DatasetStats(
            n_users=x.n_users,
            n_items=x.n_items,
            n_bundles=y.n_bundles,
            n_bundle_item_pairs=y.n_pairs,
            n_user_item_pairs=x.n_pairs,
            avg_items_per_bundle=y.n_pairs / y.n_bundles,
            avg_items_per_user=x.n_pairs / x.n_users,
            density=x.n_pairs / (x.n_users * x.n_items),
        )


# ---------------------------------------------------------------------------
# file parsing


def _read_pairs(path: Path, kind: str) -> list[tuple[str, str]]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise DataFormatError(f"{path}:{lineno}: expected '{kind}<TAB>item_id', got {line!r}")
            pairs.append((parts[0], parts[1]))
    return pairs


def read_feature_file(path: Path | str) -> tuple[np.ndarray, list[str]]:
    """Read one binary feature file and its item-ID sidecar."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
        header = fh.read(16)
        if len(header) != 16:
            raise DataFormatError(f"{path}: truncated header")
        rows, cols = struct.unpack("<QQ", header)
        payload = fh.read()
    expected = rows * cols * 4
    if len(payload) != expected:
        raise DataFormatError(f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    mat = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float32)

    sidecar = Path(str(path) + SIDECAR_SUFFIX)
    if not sidecar.exists():
        raise DataFormatError(f"{path}: missing sidecar {sidecar}")
    ids = [line.rstrip("\n") for line in open(sidecar, encoding="utf-8") if line.strip()]
    if len(ids) != rows:
        raise DataFormatError(f"{path}: header says {rows} rows but sidecar {sidecar} lists {len(ids)} items")
    if np.isnan(mat).any():
        bad = int(np.flatnonzero(np.isnan(mat).any(axis=1))[0])
        raise DataFormatError(f"{path}: NaN in feature row for item {ids[bad]!r}")
    return mat, ids


def write_feature_file(path: Path | str, matrix: np.ndarray, item_ids: Sequence[str]) -> None:
    path = Path(path)
    matrix = np.asarray(matrix, dtype=np.float32)
    if matrix.ndim != 2 or matrix.shape[0] != len(item_ids):
        raise ConfigError("feature matrix must be 2-D with one row per item ID")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<QQ", matrix.shape[0], matrix.shape[1]))
        fh.write(matrix.astype("<f4").tobytes(order="C"))
    with open(str(path) + SIDECAR_SUFFIX, "w", encoding="utf-8") as fh:
        for ext in item_ids:
            fh.write(f"{ext}\n")


# ---------------------------------------------------------------------------
# loading


def _csr_from_pairs(rows: np.ndarray, cols: np.ndarray, shape: tuple[int, int]) -> sp.csr_matrix:
    # duplicates collapse to 1: Y and X are binary
    mat = sp.coo_matrix((np.ones(len(rows), dtype=np.int64), (rows, cols)), shape=shape).tocsr()
    mat.data[:] = 1
    mat.sum_duplicates()
    mat.data[:] = 1
    return mat


def load_dataset(
    interactions_path: Path | str,
    affiliations_path: Path | str,
    feature_paths: Mapping[str, Path | str],
) -> BundleDataset:
    """Load and cross-validate the three raw inputs.

    Raises :class:`DataFormatError` on unknown item IDs, shape mismatches,
    NaNs, or an empty affiliation file. Bundles with fewer than two items are
    dropped with a warning (the masking protocol needs both sides non-empty).
    """
    if not feature_paths:
        raise ConfigError("at least one modality feature file is required")

    features: dict[str, np.ndarray] = {}
    item_ids: list[str] | None = None
    for modality in sorted(feature_paths):
        mat, ids = read_feature_file(feature_paths[modality])
        if item_ids is None:
            item_ids = ids
        elif ids != item_ids:
            raise DataFormatError(f"feature sidecars disagree between modalities (first seen at {modality!r})")
        features[modality] = mat
    assert item_ids is not None
    item_vocab = Vocabulary(item_ids)

    inter_pairs = _read_pairs(Path(interactions_path), "user_id")
    affil_pairs = _read_pairs(Path(affiliations_path), "bundle_id")
    if not affil_pairs:
        raise DataFormatError(f"{affiliations_path}: no bundles")

    for _, item in inter_pairs:
        if item not in item_vocab:
            raise DataFormatError(f"unknown item ID {item!r} in interactions (missing from feature sidecar)")
    for _, item in affil_pairs:
        if item not in item_vocab:
            raise DataFormatError(f"unknown item ID {item!r} in affiliations (missing from feature sidecar)")

    user_vocab = Vocabulary(dict.fromkeys(u for u, _ in inter_pairs))
    u_idx = np.fromiter((user_vocab.index(u) for u, _ in inter_pairs), dtype=np.int64, count=len(inter_pairs))
    i_idx = np.fromiter((item_vocab.index(i) for _, i in inter_pairs), dtype=np.int64, count=len(inter_pairs))
    interactions = InteractionMatrix(
        _csr_from_pairs(u_idx, i_idx, (len(user_vocab), len(item_vocab))), user_vocab, item_vocab
    )

    members: dict[str, set[int]] = {}
    for bundle, item in affil_pairs:
        members.setdefault(bundle, set()).add(item_vocab.index(item))
    singletons = [b for b, its in members.items() if len(its) < 2]
    for b in singletons:
        log.warning("dropping bundle %r: only one item (masking needs >= 2)", b)
        del members[b]
    if not members:
        raise DataFormatError(f"{affiliations_path}: no bundles with >= 2 items")

    bundle_vocab = Vocabulary(members)
    b_rows, b_cols = [], []
    for bundle, its in members.items():
        b = bundle_vocab.index(bundle)
        for i in sorted(its):
            b_rows.append(b)
            b_cols.append(i)
    catalog = BundleCatalog(
        _csr_from_pairs(
            np.asarray(b_rows, dtype=np.int64),
            np.asarray(b_cols, dtype=np.int64),
            (len(bundle_vocab), len(item_vocab)),
        ),
        bundle_vocab,
        item_vocab,
    )

    return BundleDataset(interactions, catalog, ModalityBank(features))


# ---------------------------------------------------------------------------
# split + masking protocol


def mask_bundle(
    bundle_items: Iterable[int],
    mask_fraction: float,
    rng_seed: int | np.random.SeedSequence,
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Partition one bundle into (seed, target) item sets.

    The target count is round-half-up of ``mask_fraction * |bundle|``,
    clamped so both sides stay non-empty. Deterministic in ``rng_seed``
    regardless of input order.
    """
    items = sorted(set(bundle_items))
    if len(items) < 2:
        raise ConfigError(f"cannot mask a bundle with {len(items)} item(s); need >= 2")
    if not 0.0 < mask_fraction < 1.0:
        raise ConfigError(f"mask_fraction must be in (0, 1), got {mask_fraction}")
    n_target = int(np.floor(mask_fraction * len(items) + 0.5))
    n_target = max(1, min(n_target, len(items) - 1))
    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(len(items))
    target = tuple(sorted(items[k] for k in order[:n_target]))
    seed = tuple(sorted(items[k] for k in order[n_target:]))
    return seed, target


def split_bundles(
    catalog: BundleCatalog,
    ratio: tuple[float, float, float],
    rng_seed: int,
    mask_fraction: float = 0.5,
) -> BundleCatalog:
    """Assign every bundle to train/valid/test and fix valid/test masks.

    Counts follow the ratio by largest remainder, so each class is within
    one bundle of its exact share. Masks are drawn once here and persist
    with the catalog (and through the split manifest).
    """
    if len(ratio) != 3 or any(r <= 0 for r in ratio):
        raise ConfigError(f"ratio must have three positive components, got {ratio}")
    if abs(sum(ratio) - 1.0) > 1e-9:
        raise ConfigError(f"ratio must sum to 1, got {sum(ratio)}")
    n = catalog.n_bundles
    if n < 3:
        raise ConfigError(f"need at least 3 bundles to split, got {n}")

    exact = [r * n for r in ratio]
    counts = [int(np.floor(e)) for e in exact]
    # hand out the remainder by largest fractional part (ties: train first)
    leftovers = sorted(range(3), key=lambda k: exact[k] - counts[k], reverse=True)
    for k in leftovers[: n - sum(counts)]:
        counts[k] += 1

    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(n)
    split = np.empty(n, dtype=np.int8)
    split[order[: counts[0]]] = TRAIN
    split[order[counts[0] : counts[0] + counts[1]]] = VALID
    split[order[counts[0] + counts[1] :]] = TEST

    masks = {}
    for b in np.flatnonzero(split != TRAIN):
        seed, target = mask_bundle(catalog.members(int(b)), mask_fraction, _mask_seed(rng_seed, int(b)))
        masks[int(b)] = (seed, target)
    return replace(catalog, split=split, masks=masks)


def _mask_seed(master_seed: int, bundle_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master_seed, bundle_index])


# ---------------------------------------------------------------------------
# persistence of the canonical store


def write_split_manifest(catalog: BundleCatalog, path: Path | str) -> None:
    """``bundle_id<TAB>{train|valid|test}`` per bundle."""
    if catalog.split is None:
        raise ConfigError("catalog has no split to persist")
    with open(path, "w", encoding="utf-8") as fh:
        for b in range(catalog.n_bundles):
            fh.write(f"{catalog.bundle_vocab.id_of(b)}\t{SPLIT_NAMES[int(catalog.split[b])]}\n")


def write_mask_manifest(catalog: BundleCatalog, path: Path | str) -> None:
    """``bundle_id<TAB>{seed|target}<TAB>item_id`` for valid/test bundles."""
    with open(path, "w", encoding="utf-8") as fh:
        for b in sorted(catalog.masks):
            seed, target = catalog.masks[b]
            bid = catalog.bundle_vocab.id_of(b)
            for i in seed:
                fh.write(f"{bid}\tseed\t{catalog.item_vocab.id_of(i)}\n")
            for i in target:
                fh.write(f"{bid}\ttarget\t{catalog.item_vocab.id_of(i)}\n")


def apply_split_manifest(
    catalog: BundleCatalog, split_path: Path | str, mask_path: Path | str
) -> BundleCatalog:
    """Reattach persisted split labels and masks to a freshly loaded catalog."""
    split = np.full(catalog.n_bundles, -1, dtype=np.int8)
    with open(split_path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or parts[1] not in SPLIT_CODES:
                raise DataFormatError(f"{split_path}:{lineno}: bad split line {line!r}")
            if parts[0] not in catalog.bundle_vocab:
                # bundles dropped at load (singletons) may legitimately be absent
                continue
            split[catalog.bundle_vocab.index(parts[0])] = SPLIT_CODES[parts[1]]
    if (split < 0).any():
        missing = catalog.bundle_vocab.id_of(int(np.flatnonzero(split < 0)[0]))
        raise DataFormatError(f"{split_path}: no split label for bundle {missing!r}")

    roles: dict[int, dict[str, list[int]]] = {}
    with open(mask_path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[1] not in ("seed", "target"):
                raise DataFormatError(f"{mask_path}:{lineno}: bad mask line {line!r}")
            if parts[0] not in catalog.bundle_vocab:
                continue
            b = catalog.bundle_vocab.index(parts[0])
            roles.setdefault(b, {"seed": [], "target": []})[parts[1]].append(
                catalog.item_vocab.index(parts[2])
            )
    masks = {}
    for b, groups in roles.items():
        seed, target = tuple(sorted(groups["seed"])), tuple(sorted(groups["target"]))
        combined = np.asarray(sorted(seed + target), dtype=np.int64)
        if not seed or not target or set(seed) & set(target) or not np.array_equal(combined, catalog.members(b)):
            raise DataFormatError(
                f"{mask_path}: mask for bundle {catalog.bundle_vocab.id_of(b)!r} does not partition its items"
            )
        masks[b] = (seed, target)
    for b in np.flatnonzero(split != TRAIN):
        if int(b) not in masks:
            raise DataFormatError(
                f"{mask_path}: missing mask for non-train bundle {catalog.bundle_vocab.id_of(int(b))!r}"
            )
    return replace(catalog, split=split, masks=masks)


CANONICAL_FILES = {
    "interactions": "interactions.tsv",
    "affiliations": "affiliations.tsv",
    "split": "split.tsv",
    "masks": "masks.tsv",
}


def feature_filename(modality: str) -> str:
    return f"features_{modality}.bin"


def save_dataset(dataset: BundleDataset, out_dir: Path | str) -> dict[str, str]:
    """Persist the canonical store; returns the relative file map."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    x = dataset.interactions
    with open(out / CANONICAL_FILES["interactions"], "w", encoding="utf-8") as fh:
        coo = x.matrix.tocoo()
        for u, i in zip(coo.row, coo.col):
            fh.write(f"{x.user_vocab.id_of(int(u))}\t{x.item_vocab.id_of(int(i))}\n")
    y = dataset.catalog
    with open(out / CANONICAL_FILES["affiliations"], "w", encoding="utf-8") as fh:
        coo = y.matrix.tocoo()
        for b, i in zip(coo.row, coo.col):
            fh.write(f"{y.bundle_vocab.id_of(int(b))}\t{y.item_vocab.id_of(int(i))}\n")
    written = dict(CANONICAL_FILES)
    for modality, mat in dataset.modalities.features.items():
        name = feature_filename(modality)
        write_feature_file(out / name, mat, dataset.item_vocab.ids)
        written[f"features_{modality}"] = name
    if y.split is not None:
        write_split_manifest(y, out / CANONICAL_FILES["split"])
        write_mask_manifest(y, out / CANONICAL_FILES["masks"])
    else:
        written.pop("split")
        written.pop("masks")
    return written


def load_canonical(store_dir: Path | str) -> BundleDataset:
    """Reload a store written by :func:`save_dataset` (split reattached if present)."""
    store = Path(store_dir)
    feature_paths = {}
    for f in sorted(store.glob("features_*.bin")):
        feature_paths[f.stem.removeprefix("features_")] = f
    if not feature_paths:
        raise DataFormatError(f"{store}: no features_*.bin files")
    dataset = load_dataset(
        store / CANONICAL_FILES["interactions"],
        store / CANONICAL_FILES["affiliations"],
        feature_paths,
    )
    split_path = store / CANONICAL_FILES["split"]
    if split_path.exists():
        catalog = apply_split_manifest(dataset.catalog, split_path, store / CANONICAL_FILES["masks"])
        dataset = replace(dataset, catalog=catalog)
    return dataset
