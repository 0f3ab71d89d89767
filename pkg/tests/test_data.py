"""Ingestion, masking protocol, splitting, and persistence round-trips."""

import logging

import numpy as np
import pytest
import scipy.sparse as sp

from bundlekit.data import (
    TEST,
    TRAIN,
    VALID,
    BundleCatalog,
    Vocabulary,
    apply_split_manifest,
    load_canonical,
    load_dataset,
    mask_bundle,
    read_feature_file,
    save_dataset,
    split_bundles,
    write_feature_file,
    write_mask_manifest,
    write_split_manifest,
)
from bundlekit.errors import ConfigError, DataFormatError

from conftest import build_dataset, write_pairs


class TestLoadDataset:
    def test_structures_share_item_vocab(self, raw_files):
        ds = load_dataset(raw_files["interactions"], raw_files["affiliations"], raw_files["features"])
        assert ds.interactions.item_vocab is ds.catalog.item_vocab
        assert ds.n_items == 4
        assert ds.interactions.n_users == 3
        assert ds.catalog.n_bundles == 3

    def test_entries_are_binary_and_indices_dense(self, raw_files):
        ds = load_dataset(raw_files["interactions"], raw_files["affiliations"], raw_files["features"])
        assert set(ds.interactions.matrix.data.tolist()) == {1}
        assert set(ds.catalog.matrix.data.tolist()) == {1}
        assert ds.interactions.matrix.indices.max() < ds.n_items

    def test_vocab_bijection(self, raw_files):
        ds = load_dataset(raw_files["interactions"], raw_files["affiliations"], raw_files["features"])
        vocab = ds.item_vocab
        for k in range(len(vocab)):
            assert vocab.index(vocab.id_of(k)) == k

    def test_stats_toy_example(self, raw_files, tmp_path):
        # 2 bundles of size 2 each -> avg exactly 2.0
        write_pairs(tmp_path / "aff2.tsv", [("b1", "apple"), ("b1", "bread"), ("b2", "cheese"), ("b2", "dates")])
        ds = load_dataset(raw_files["interactions"], tmp_path / "aff2.tsv", raw_files["features"])
        assert ds.stats().avg_items_per_bundle == 2.0

    def test_duplicates_deduplicated(self, raw_files, tmp_path):
        write_pairs(
            tmp_path / "aff_dup.tsv",
            [("b1", "apple"), ("b1", "apple"), ("b1", "bread"), ("b2", "bread"), ("b2", "cheese")],
        )
        ds = load_dataset(raw_files["interactions"], tmp_path / "aff_dup.tsv", raw_files["features"])
        assert ds.catalog.n_pairs == 4
        assert set(ds.catalog.matrix.data.tolist()) == {1}

    def test_unknown_affiliation_item_names_id(self, raw_files, tmp_path):
        write_pairs(tmp_path / "aff_bad.tsv", [("b1", "apple"), ("b1", "zebra")])
        with pytest.raises(DataFormatError, match="zebra"):
            load_dataset(raw_files["interactions"], tmp_path / "aff_bad.tsv", raw_files["features"])

    def test_unknown_interaction_item_names_id(self, raw_files, tmp_path):
        write_pairs(tmp_path / "int_bad.tsv", [("u1", "apple"), ("u9", "yeti")])
        with pytest.raises(DataFormatError, match="yeti"):
            load_dataset(tmp_path / "int_bad.tsv", raw_files["affiliations"], raw_files["features"])

    def test_empty_affiliations_rejected(self, raw_files, tmp_path):
        (tmp_path / "aff_empty.tsv").write_text("")
        with pytest.raises(DataFormatError, match="no bundles"):
            load_dataset(raw_files["interactions"], tmp_path / "aff_empty.tsv", raw_files["features"])

    def test_singleton_bundle_dropped_with_warning(self, raw_files, tmp_path, caplog):
        write_pairs(
            tmp_path / "aff_single.tsv",
            [("solo", "apple"), ("b2", "bread"), ("b2", "cheese")],
        )
        with caplog.at_level(logging.WARNING):
            ds = load_dataset(raw_files["interactions"], tmp_path / "aff_single.tsv", raw_files["features"])
        assert ds.catalog.n_bundles == 1
        assert "solo" in caplog.text

    def test_cold_items_retained(self, raw_files, tmp_path):
        # 'dates' never appears in interactions; it must stay a candidate
        ds = load_dataset(raw_files["interactions"], raw_files["affiliations"], raw_files["features"])
        assert "dates" in ds.item_vocab

    def test_nan_feature_rejected(self, raw_files, tmp_path):
        mat = np.zeros((4, 3), dtype=np.float32)
        mat[2, 1] = np.nan
        write_feature_file(tmp_path / "bad.bin", mat, ["apple", "bread", "cheese", "dates"])
        feats = dict(raw_files["features"], text=tmp_path / "bad.bin")
        with pytest.raises(DataFormatError, match="NaN"):
            load_dataset(raw_files["interactions"], raw_files["affiliations"], feats)

    def test_sidecar_row_mismatch_rejected(self, raw_files, tmp_path):
        write_feature_file(tmp_path / "bad.bin", np.zeros((3, 2), dtype=np.float32), ["a", "b", "c"])
        (tmp_path / "bad.bin.items").write_text("a\nb\n")
        with pytest.raises(DataFormatError, match="sidecar"):
            read_feature_file(tmp_path / "bad.bin")

    def test_truncated_payload_rejected(self, tmp_path):
        write_feature_file(tmp_path / "ok.bin", np.ones((2, 2), dtype=np.float32), ["a", "b"])
        blob = (tmp_path / "ok.bin").read_bytes()
        (tmp_path / "ok.bin").write_bytes(blob[:-4])
        with pytest.raises(DataFormatError, match="payload"):
            read_feature_file(tmp_path / "ok.bin")

    def test_bad_magic_rejected(self, tmp_path):
        (tmp_path / "bad.bin").write_bytes(b"NOPE" + b"\x00" * 16)
        (tmp_path / "bad.bin.items").write_text("")
        with pytest.raises(DataFormatError, match="magic"):
            read_feature_file(tmp_path / "bad.bin")

    def test_feature_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        mat = rng.normal(size=(7, 9)).astype(np.float32)
        write_feature_file(tmp_path / "f.bin", mat, [f"x{k}" for k in range(7)])
        loaded, ids = read_feature_file(tmp_path / "f.bin")
        assert ids == [f"x{k}" for k in range(7)]
        assert np.array_equal(loaded, mat)


class TestMaskBundle:
    def test_half_of_four(self):
        seed, target = mask_bundle({4, 9, 2, 7}, 0.5, 123)
        assert len(seed) == 2 and len(target) == 2
        assert set(seed) | set(target) == {4, 9, 2, 7}
        assert not set(seed) & set(target)

    def test_clamped_pair(self):
        seed, target = mask_bundle({1, 2}, 0.9, 5)
        assert len(seed) == 1 and len(target) == 1

    def test_singleton_rejected(self):
        with pytest.raises(ConfigError):
            mask_bundle({3}, 0.5, 0)

    def test_bad_fraction_rejected(self):
        with pytest.raises(ConfigError):
            mask_bundle({1, 2, 3}, 1.0, 0)

    def test_deterministic_and_order_free(self):
        a = mask_bundle([5, 1, 9, 4], 0.5, 77)
        b = mask_bundle([9, 4, 5, 1], 0.5, 77)
        assert a == b

    def test_monte_carlo_target_fraction(self):
        # 1000 size-4 bundles at fraction 0.5: empirical mean within 0.5 +/- 0.01
        rng = np.random.default_rng(0)
        fractions = []
        for trial in range(1000):
            items = rng.choice(1000, size=4, replace=False)
            _, target = mask_bundle(items, 0.5, trial)
            fractions.append(len(target) / 4)
        assert abs(float(np.mean(fractions)) - 0.5) <= 0.01


def _catalog_of(n_bundles, items_per_bundle=2):
    rows = np.repeat(np.arange(n_bundles), items_per_bundle)
    cols = (rows * items_per_bundle + np.tile(np.arange(items_per_bundle), n_bundles)) % (
        n_bundles * items_per_bundle
    )
    n_items = n_bundles * items_per_bundle
    y = sp.coo_matrix((np.ones(len(rows), dtype=np.int64), (rows, cols)), shape=(n_bundles, n_items)).tocsr()
    return BundleCatalog(
        y,
        Vocabulary(f"b{k}" for k in range(n_bundles)),
        Vocabulary(f"i{k}" for k in range(n_items)),
    )


class TestSplitBundles:
    def test_paper_scale_counts(self):
        cat = split_bundles(_catalog_of(20_000), (0.7, 0.1, 0.2), rng_seed=42)
        counts = np.bincount(cat.split, minlength=3)
        assert counts.tolist() == [14_000, 2_000, 4_000]

    def test_degenerate_ratio_rejected(self):
        with pytest.raises(ConfigError):
            split_bundles(_catalog_of(10), (1.0, 0.0, 0.0), rng_seed=0)

    def test_ratio_must_sum_to_one(self):
        with pytest.raises(ConfigError):
            split_bundles(_catalog_of(10), (0.5, 0.2, 0.2), rng_seed=0)

    def test_too_few_bundles_rejected(self):
        with pytest.raises(ConfigError):
            split_bundles(_catalog_of(2), (0.7, 0.1, 0.2), rng_seed=0)

    def test_same_seed_identical(self):
        a = split_bundles(_catalog_of(50), (0.7, 0.1, 0.2), rng_seed=9)
        b = split_bundles(_catalog_of(50), (0.7, 0.1, 0.2), rng_seed=9)
        assert np.array_equal(a.split, b.split)
        assert a.masks == b.masks

    def test_partition_and_tolerance(self):
        n = 31
        cat = split_bundles(_catalog_of(n), (0.7, 0.1, 0.2), rng_seed=1)
        counts = np.bincount(cat.split, minlength=3)
        assert counts.sum() == n
        for share, count in zip((0.7, 0.1, 0.2), counts):
            assert abs(count - share * n) <= 1.0

    def test_masks_partition_members(self):
        cat = split_bundles(_catalog_of(40, items_per_bundle=3), (0.7, 0.1, 0.2), rng_seed=3)
        for b in np.flatnonzero(cat.split != TRAIN):
            seed, target = cat.masks[int(b)]
            assert seed and target
            assert sorted(seed + target) == cat.members(int(b)).tolist()
        for b in np.flatnonzero(cat.split == TRAIN):
            assert int(b) not in cat.masks


class TestPersistence:
    def test_roundtrip_bit_exact(self, tmp_path, raw_files):
        ds = load_dataset(raw_files["interactions"], raw_files["affiliations"], raw_files["features"])
        from dataclasses import replace

        ds = replace(ds, catalog=split_bundles(ds.catalog, (0.4, 0.3, 0.3), rng_seed=2))
        save_dataset(ds, tmp_path / "store")
        again = load_canonical(tmp_path / "store")

        assert again.item_vocab.ids == ds.item_vocab.ids
        assert again.interactions.user_vocab.ids == ds.interactions.user_vocab.ids
        assert (again.interactions.matrix != ds.interactions.matrix).nnz == 0
        assert (again.catalog.matrix != ds.catalog.matrix).nnz == 0
        for m in ds.modalities.modalities:
            assert np.array_equal(again.modalities.features[m], ds.modalities.features[m])
        assert np.array_equal(again.catalog.split, ds.catalog.split)
        assert again.catalog.masks == ds.catalog.masks

    def test_manifest_rejects_nonpartition_mask(self, tmp_path):
        cat = split_bundles(_catalog_of(6, items_per_bundle=3), (0.4, 0.3, 0.3), rng_seed=0)
        write_split_manifest(cat, tmp_path / "split.tsv")
        write_mask_manifest(cat, tmp_path / "masks.tsv")
        lines = (tmp_path / "masks.tsv").read_text().splitlines()
        (tmp_path / "masks.tsv").write_text("\n".join(lines[1:]) + "\n")  # drop one assignment
        fresh = _catalog_of(6, items_per_bundle=3)
        with pytest.raises(DataFormatError):
            apply_split_manifest(fresh, tmp_path / "split.tsv", tmp_path / "masks.tsv")

    def test_manifest_missing_label_rejected(self, tmp_path):
        cat = split_bundles(_catalog_of(5), (0.4, 0.3, 0.3), rng_seed=0)
        write_split_manifest(cat, tmp_path / "split.tsv")
        write_mask_manifest(cat, tmp_path / "masks.tsv")
        lines = (tmp_path / "split.tsv").read_text().splitlines()
        (tmp_path / "split.tsv").write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(DataFormatError, match="no split label"):
            apply_split_manifest(_catalog_of(5), tmp_path / "split.tsv", tmp_path / "masks.tsv")

    def test_splits_reattach_by_external_id(self, tmp_path):
        # labels must follow bundle IDs, not positions
        cat = split_bundles(_catalog_of(6), (0.4, 0.3, 0.3), rng_seed=4)
        write_split_manifest(cat, tmp_path / "split.tsv")
        write_mask_manifest(cat, tmp_path / "masks.tsv")
        reloaded = apply_split_manifest(_catalog_of(6), tmp_path / "split.tsv", tmp_path / "masks.tsv")
        assert np.array_equal(reloaded.split, cat.split)


class TestDatasetStats:
    def test_avg_identity(self):
        ds = build_dataset(np.eye(4, dtype=np.int64), [(0, 1), (1, 2, 3)])
        stats = ds.stats()
        assert stats.avg_items_per_bundle == stats.n_bundle_item_pairs / stats.n_bundles
        assert stats.n_bundle_item_pairs == 5

    def test_benchmark_table_arithmetic(self):
        # headline bookkeeping: 72,224 pairs over 20,000 bundles -> 3.61 avg
        assert round(72_224 / 20_000, 2) == 3.61
        assert round(6_395 / 1_784, 2) == 3.58
