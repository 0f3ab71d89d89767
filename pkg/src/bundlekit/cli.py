"""Command-line entry point: prepare, train, eval, predict, synth.

Exit codes: 0 success, 1 runtime failure (training divergence), 2 usage or
input errors. Every command writes a manifest.json next to its artifacts.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, fields, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch

from . import data as dio
from .config import ABLATION_FLAGS, TrainConfig, apply_ablation, config_field_types, load_config
from .data import SPLIT_CODES, load_canonical, load_dataset, split_bundles
from .errors import BundlekitError, ConfigError, DataFormatError, TrainingDivergedError
from .evaluation import (
    rank_candidates,
    write_metrics_csv,
    write_topk_dump,
)
from .model import pad_members
from .synthetic import make_planted_dataset
from .training import load_checkpoint, save_checkpoint, train

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _input_checksums(paths: list[Path]) -> dict[str, str]:
    return {str(p): _sha256(p) for p in sorted(set(paths)) if p.is_file()}


def write_manifest(
    out_dir: Path,
    command: str,
    config: dict,
    inputs: list[Path],
    seed: int | None,
    artifacts: list[str],
    started: str,
) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "dataset_checksums": _input_checksums(inputs),
        "seed": seed,
        "started": started,
        "finished": _utcnow(),
        "artifacts": sorted(artifacts),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _manifest_checksum(path: Path) -> str:
    payload = json.loads(path.read_text(encoding="utf-8"))
    payload.pop("started", None)
    payload.pop("finished", None)
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# argument plumbing


def _add_config_overrides(parser: argparse.ArgumentParser) -> list[str]:
    """One ``--key`` flag per config field; returns the field names."""
    names = []
    for name, typ in config_field_types().items():
        if typ is bool:
            continue  # ablations ride on --ablate
        parser.add_argument(f"--{name.replace('_', '-')}", dest=f"cfg_{name}", type=typ, default=None)
        names.append(name)
    return names


def _collect_overrides(args: argparse.Namespace) -> dict:
    out = {}
    for key, value in vars(args).items():
        if key.startswith("cfg_") and value is not None:
            out[key[4:]] = value
    return out


def _resolve_config(args: argparse.Namespace) -> TrainConfig:
    cfg = load_config(getattr(args, "config", None), _collect_overrides(args))
    if getattr(args, "ablate", None):
        cfg = apply_ablation(cfg, args.ablate)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, rng_seed=args.seed).validate()
    return cfg


def _parse_features(entries: list[str]) -> dict[str, Path]:
    feature_paths = {}
    for entry in entries:
        if "=" not in entry:
            raise ConfigError(f"--features expects modality=path, got {entry!r}")
        modality, path = entry.split("=", 1)
        feature_paths[modality] = Path(path)
    for modality, path in feature_paths.items():
        if not path.is_file():
            raise DataFormatError(f"feature file for modality {modality!r} not found: {path}")
    return feature_paths


def _parse_ratio(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"--ratio expects three comma-separated numbers, got {text!r}")
    return parts[0], parts[1], parts[2]


def _parse_sweep(text: str) -> tuple[str, list]:
    if "=" not in text:
        raise ConfigError(f"--sweep expects key=start:stop:step or key=v1,v2,..., got {text!r}")
    key, spec = text.split("=", 1)
    types = config_field_types()
    if key not in types or types[key] is bool:
        raise ConfigError(f"--sweep key {key!r} is not a sweepable config field")
    cast = types[key]
    if ":" in spec:
        start, stop, step = (float(p) for p in spec.split(":"))
        if step <= 0:
            raise ConfigError("sweep step must be > 0")
        count = int(round((stop - start) / step)) + 1
        values = [cast(round(start + k * step, 10)) for k in range(count) if start + k * step <= stop + 1e-9]
    else:
        values = [cast(float(p)) if cast is not str else p for p in spec.split(",")]
    return key, values


# ---------------------------------------------------------------------------
# commands


def cmd_prepare(args: argparse.Namespace) -> int:
    started = _utcnow()
    feature_paths = _parse_features(args.features)
    for label, p in (("interactions", Path(args.interactions)), ("affiliations", Path(args.affiliations))):
        if not p.is_file():
            raise DataFormatError(f"{label} file not found: {p}")
    dataset = load_dataset(args.interactions, args.affiliations, feature_paths)
    catalog = split_bundles(dataset.catalog, _parse_ratio(args.ratio), args.seed, args.mask_fraction)
    dataset = replace(dataset, catalog=catalog)

    out = Path(args.out)
    files = dio.save_dataset(dataset, out)
    stats = dataset.stats()
    (out / "stats.json").write_text(json.dumps(asdict(stats), indent=2) + "\n", encoding="utf-8")

    print(f"{'users':>22}: {stats.n_users}")
    print(f"{'items':>22}: {stats.n_items}")
    print(f"{'bundles':>22}: {stats.n_bundles}")
    print(f"{'bundle-item pairs':>22}: {stats.n_bundle_item_pairs}")
    print(f"{'user-item pairs':>22}: {stats.n_user_item_pairs}")
    print(f"{'avg items per bundle':>22}: {stats.avg_items_per_bundle:.2f}")
    print(f"{'avg items per user':>22}: {stats.avg_items_per_user:.2f}")
    print(f"{'density':>22}: {stats.density:.6f}")

    inputs = [Path(args.interactions), Path(args.affiliations), *feature_paths.values()]
    inputs += [Path(str(p) + dio.SIDECAR_SUFFIX) for p in feature_paths.values()]
    manifest = write_manifest(
        out,
        "prepare",
        {"ratio": args.ratio, "mask_fraction": args.mask_fraction, "seed": args.seed},
        inputs,
        args.seed,
        sorted(files.values()) + ["stats.json"],
        started,
    )
    print(f"manifest checksum: {_manifest_checksum(manifest)}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    started = _utcnow()
    if args.threads:
        torch.set_num_threads(args.threads)
    cfg = _resolve_config(args)
    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise DataFormatError(f"prepared dataset directory not found: {data_dir}")
    dataset = load_canonical(data_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.sweep:
        key, values = _parse_sweep(args.sweep)
        rows = ["%s,valid_R@20,valid_N@20,test_R@20,test_N@20" % key]
        artifacts = ["sweep_summary.csv"]
        for value in values:
            run_cfg = replace(cfg, **{key: value}).validate()
            run_dir = out / f"sweep_{key}_{value}"
            run_dir.mkdir(parents=True, exist_ok=True)
            result = train(run_cfg, dataset, log_path=run_dir / "training_log.csv")
            save_checkpoint(run_dir / "checkpoint.pt", result.model, epoch=result.best_epoch)
            valid = rank_candidates(result.model, dataset.catalog, SPLIT_CODES["valid"], 20, (20,))
            test = rank_candidates(result.model, dataset.catalog, SPLIT_CODES["test"], 20, (20,))
            rows.append(
                f"{value},{valid.metrics[20]['recall']:.6f},{valid.metrics[20]['ndcg']:.6f},"
                f"{test.metrics[20]['recall']:.6f},{test.metrics[20]['ndcg']:.6f}"
            )
            artifacts += [f"sweep_{key}_{value}/checkpoint.pt", f"sweep_{key}_{value}/training_log.csv"]
            print(rows[-1])
        (out / "sweep_summary.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
        write_manifest(out, "train --sweep", asdict(cfg), _canonical_inputs(data_dir), cfg.rng_seed, artifacts, started)
        return EXIT_OK

    result = train(cfg, dataset, log_path=out / "training_log.csv")
    save_checkpoint(out / "checkpoint.pt", result.model, epoch=result.best_epoch, best_metrics={"valid_ndcg": result.best_ndcg})
    last = result.history[-1]
    print(f"trained {len(result.history)} epochs; best epoch {result.best_epoch}; final loss {last.total:.6f}")
    write_manifest(
        out,
        "train",
        asdict(cfg),
        _canonical_inputs(data_dir),
        cfg.rng_seed,
        ["checkpoint.pt", "training_log.csv"],
        started,
    )
    return EXIT_OK


def _canonical_inputs(data_dir: Path) -> list[Path]:
    return sorted(p for p in data_dir.iterdir() if p.is_file())


def cmd_eval(args: argparse.Namespace) -> int:
    started = _utcnow()
    if args.threads:
        torch.set_num_threads(args.threads)
    checkpoint = Path(args.checkpoint)
    if not checkpoint.is_file():
        raise DataFormatError(f"checkpoint not found: {checkpoint}")
    if args.split not in ("valid", "test"):
        raise ConfigError(f"--split must be valid or test, got {args.split!r}")
    ks = sorted({int(k) for k in args.k.split(",")})
    dataset = load_canonical(Path(args.data))
    model, _ = load_checkpoint(checkpoint, dataset)
    result = rank_candidates(model, dataset.catalog, SPLIT_CODES[args.split], max(ks), ks)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(result, args.split, out / "metrics.csv")
    write_topk_dump(result, dataset.catalog, out / "topk.csv")
    for k in ks:
        m = result.metrics[k]
        print(f"{args.split} R@{k}={m['recall']:.4f} N@{k}={m['ndcg']:.4f}")
    write_manifest(
        out,
        "eval",
        {"checkpoint": str(checkpoint), "split": args.split, "k": ks},
        _canonical_inputs(Path(args.data)) + [checkpoint],
        None,
        ["metrics.csv", "topk.csv"],
        started,
    )
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    checkpoint = Path(args.checkpoint)
    if not checkpoint.is_file():
        raise DataFormatError(f"checkpoint not found: {checkpoint}")
    dataset = load_canonical(Path(args.data))
    model, _ = load_checkpoint(checkpoint, dataset)
    seed_ids = [s for s in args.seeds.split(",") if s]
    if not seed_ids:
        raise ConfigError("--seeds must list at least one item ID")
    vocab = dataset.item_vocab
    for ext in seed_ids:
        if ext not in vocab:
            raise DataFormatError(f"unknown item ID {ext!r}")
    seeds = [vocab.index(ext) for ext in seed_ids]

    idx, mask = pad_members([seeds])
    with torch.no_grad():
        views = model.encode(idx, mask, sample_noise=False)
        scores = views.scores()[0].numpy().astype(np.float64)
    scores[seeds] = -np.inf
    order = np.argsort(-scores, kind="stable")
    pool = len(scores) - len(set(seeds))
    print("rank,item_id,score")
    for rank, item in enumerate(order[: min(args.k, pool)], start=1):
        print(f"{rank},{vocab.id_of(int(item))},{scores[item]:.6f}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    started = _utcnow()
    dataset = make_planted_dataset(n_bundles=args.bundles, rng_seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = dio.save_dataset(dataset, out)
    print(f"wrote planted dataset ({dataset.n_items} items, {dataset.catalog.n_bundles} bundles) to {out}")
    write_manifest(out, "synth", {"bundles": args.bundles}, [], args.seed, sorted(files.values()), started)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bundlekit", description="Bundle completion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="validate raw files, split bundles, persist the canonical store")
    p.add_argument("--interactions", required=True, help="user_id<TAB>item_id lines")
    p.add_argument("--affiliations", required=True, help="bundle_id<TAB>item_id lines")
    p.add_argument("--features", action="append", required=True, metavar="MODALITY=PATH")
    p.add_argument("--out", required=True)
    p.add_argument("--ratio", default="0.7,0.1,0.2")
    p.add_argument("--mask-fraction", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train on a prepared dataset")
    p.add_argument("--data", required=True, help="directory written by prepare/synth")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="flat key=value config file")
    p.add_argument("--ablate", action="append", choices=ABLATION_FLAGS, default=None)
    p.add_argument("--sweep", default=None, metavar="KEY=START:STOP:STEP")
    p.add_argument("--seed", type=int, default=None, help="override rng_seed")
    p.add_argument("--threads", type=int, default=None)
    _add_config_overrides(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank candidates for a split and write metrics")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--k", default="10,20")
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="complete a partial bundle from seed item IDs")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seeds", required=True, help="comma-separated external item IDs")
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", help="write a small planted demo dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--bundles", type=int, default=30)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingDivergedError as err:
        print(f"error: training diverged: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, DataFormatError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except BundlekitError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
