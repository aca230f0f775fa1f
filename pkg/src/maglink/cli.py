"""Command-line interface.

Subcommands: validate, build, pretrain, train, experiment, ablate-sampling,
report, synth. Exit codes: 0 success, 1 validation failure, 2 runtime
failure. ``MAGLINK_OUT`` overrides the default output directory;
``MAGLINK_THREADS`` pins the BLAS thread count (applied by the ``maglink``
launcher before numpy loads) and is recorded in archives.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

VALIDATION_FAILURE = 1
RUNTIME_FAILURE = 2


class CliError(Exception):
    def __init__(self, message: str, code: int = VALIDATION_FAILURE) -> None:
        super().__init__(message)
        self.code = code


def _out_dir(explicit: str | None, default: str) -> Path:
    base = explicit or os.environ.get("MAGLINK_OUT") or default
    return Path(base)


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise CliError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"invalid JSON in {path}: {exc}") from exc


def _load_dataset(manifest_path: str):
    from .ingest import ManifestError, load_dataset, load_manifest

    try:
        manifest = load_manifest(manifest_path)
        return manifest, load_dataset(manifest)
    except (ManifestError, OSError, ValueError) as exc:
        raise CliError(f"failed to load dataset: {exc}") from exc


def _cmd_validate(args: argparse.Namespace) -> int:
    from .ingest import validate_dataset

    manifest, dataset = _load_dataset(args.manifest)
    report = validate_dataset(manifest, dataset.graph, dataset.clip)
    print(report)
    return 0 if report.passed else VALIDATION_FAILURE


def _cmd_build(args: argparse.Namespace) -> int:
    from .ingest import write_embeddings
    from .variants import build_variant

    _, dataset = _load_dataset(args.manifest)
    built = build_variant(args.variant, dataset, args.seed, image_ratio=args.image_ratio)
    out = _out_dir(args.out, f"build_{args.variant}")
    out.mkdir(parents=True, exist_ok=True)
    summary = {
        "variant": built.variant.name,
        "seed": args.seed,
        "nodes": {str(t): c for t, c in built.graph.node_counts.items()},
        "relations": {r.name: built.graph.num_edges(r.name) for r in built.graph.relations},
        "feature_dims": {str(t): fm.cols for t, fm in built.features.items()},
        "split": {
            "train": int(built.split.train_pos.shape[0]),
            "val": int(built.split.val_pos.shape[0]),
            "test": int(built.split.test_pos.shape[0]),
        },
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for t, fm in built.features.items():
        write_embeddings(out / f"features_{t}.emb", fm.values)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_pretrain(args: argparse.Namespace) -> int:
    import numpy as np

    from .hetero import sample_image_edges, strip_relations
    from .ingest import write_embeddings
    from .schema import HAS_ATTRIBUTE, HAS_IMAGE, NodeType
    from .train import PretrainConfig, pretrain_stage1

    doc = _read_json(args.config)
    _, dataset = _load_dataset(doc["manifest"])
    cfg_doc = dict(doc.get("config", {}))
    if "dims" in cfg_doc:
        cfg_doc["dims"] = tuple(cfg_doc["dims"])
    cfg = PretrainConfig(**cfg_doc)
    use_images = bool(doc.get("images", False))
    base = dataset.graph
    feats = {
        NodeType.MANUFACTURER: dataset.clip[NodeType.MANUFACTURER],
        NodeType.ATTRIBUTE: dataset.clip[NodeType.ATTRIBUTE],
    }
    keep = [HAS_ATTRIBUTE.name]
    if use_images:
        base = base.with_features({NodeType.IMAGE: dataset.clip[NodeType.IMAGE]})
        base = sample_image_edges(base, float(doc.get("image_ratio", 1.0)), cfg.seed)
        feats[NodeType.IMAGE] = base.features[NodeType.IMAGE]
        keep.append(HAS_IMAGE.name)
    mag = strip_relations(base, keep)
    result = pretrain_stage1(mag, feats, cfg)
    out = _out_dir(doc.get("out"), "stage1")
    out.mkdir(parents=True, exist_ok=True)
    write_embeddings(out / "manufacturer_stage1.emb", result.embeddings.values)
    (out / "pretrain.json").write_text(
        json.dumps(
            {
                "best_epoch": result.best_epoch,
                "epochs_run": result.epochs_run,
                "train_loss": result.train_loss_curve,
                "monitor_loss": result.monitor_loss_curve,
                "seed": result.seed,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    print(f"pretrained {result.embeddings.rows} manufacturer embeddings "
          f"({result.embeddings.cols}-D), best epoch {result.best_epoch}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    from .train import PretrainConfig, TrainConfig, train_linkpred
    from .variants import build_variant

    doc = _read_json(args.config)
    _, dataset = _load_dataset(doc["manifest"])
    cfg_doc = dict(doc.get("config", {}))
    if "lr_grid" in cfg_doc:
        cfg_doc["lr_grid"] = tuple(cfg_doc["lr_grid"])
    cfg = TrainConfig(**cfg_doc)
    pre_doc = dict(doc.get("pretrain", {}))
    if "dims" in pre_doc:
        pre_doc["dims"] = tuple(pre_doc["dims"])
    built = build_variant(
        doc.get("variant", "cmag1"),
        dataset,
        int(doc.get("seed", cfg.seed)),
        image_ratio=float(doc.get("image_ratio", 1.0)),
        pretrain_cfg=PretrainConfig(**pre_doc),
        neg_ratio=cfg.negative_ratio,
    )
    result = train_linkpred(built.graph, built.features, built.split, cfg)
    out = _out_dir(doc.get("out"), "train")
    out.mkdir(parents=True, exist_ok=True)
    result.params.save(out / "checkpoint.bin")
    summary = {
        "variant": doc.get("variant", "cmag1"),
        "lr": result.lr,
        "best_epoch": result.best_epoch,
        "epochs_run": result.epochs_run,
        "best_val_roc": result.best_val_roc,
        "test_roc_auc": result.test_report.roc_auc,
        "test_pr_auc": result.test_report.pr_auc,
    }
    (out / "result.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_experiment(args: argparse.Namespace) -> int:
    from .experiment import ExperimentSpec, run_experiment

    doc = _read_json(args.spec)
    out = _out_dir(args.out or doc.pop("out", None), "archive")
    manifest_path = args.manifest or doc.pop("manifest", None)
    if not manifest_path:
        raise CliError("spec must name a dataset manifest (key 'manifest' or --manifest)")
    spec = ExperimentSpec.from_dict(doc["experiment"] if "experiment" in doc else doc)
    _, dataset = _load_dataset(manifest_path)
    archive = run_experiment(spec, dataset, out)
    agg = archive.aggregate
    print(json.dumps(agg, indent=2, sort_keys=True))
    if archive.failures and not archive.per_seed:
        return RUNTIME_FAILURE
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    from .experiment import ExperimentSpec, ablation_csv, run_ablation_sampling

    doc = _read_json(args.spec)
    out = _out_dir(args.out or doc.pop("out", None), "ablation")
    manifest_path = args.manifest or doc.pop("manifest", None)
    if not manifest_path:
        raise CliError("spec must name a dataset manifest (key 'manifest' or --manifest)")
    spec = ExperimentSpec.from_dict(doc["experiment"] if "experiment" in doc else doc)
    _, dataset = _load_dataset(manifest_path)
    rows = run_ablation_sampling(spec, dataset, tuple(args.ratios), out)
    print(ablation_csv(rows), end="")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    from rich.console import Console

    from .experiment import emit_results_table

    table, csv_text = emit_results_table(list(args.archives))
    Console().print(table)
    if args.csv:
        Path(args.csv).write_text(csv_text, encoding="utf-8")
    else:
        print(csv_text, end="")
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    from .synth import SyntheticSpec, generate_dataset

    spec = SyntheticSpec(
        n_manufacturers=args.manufacturers,
        n_products=args.products,
        n_clusters=args.clusters,
        feature_signal=args.feature_signal,
        image_signal=args.image_signal,
        seed=args.seed,
    )
    manifest = generate_dataset(spec, args.out)
    print(f"wrote {manifest}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maglink", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a dataset against its manifest")
    p.add_argument("manifest")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("build", help="assemble one graph variant and dump a summary")
    p.add_argument("variant")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-ratio", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_build)

    p = sub.add_parser("pretrain", help="stage-1 unsupervised pretraining")
    p.add_argument("config")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("train", help="supervised link prediction at one learning rate")
    p.add_argument("config")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("experiment", help="multi-seed grid-searched experiment")
    p.add_argument("spec")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("ablate-sampling", help="image sampling ratio sweep")
    p.add_argument("spec")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--ratios", type=float, nargs="+", default=[0.1, 0.2, 0.5])
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("report", help="results table from experiment archives")
    p.add_argument("archives", nargs="+")
    p.add_argument("--csv")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("synth", help="generate a planted-cluster synthetic dataset")
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manufacturers", type=int, default=80)
    p.add_argument("--products", type=int, default=160)
    p.add_argument("--clusters", type=int, default=8)
    p.add_argument("--feature-signal", type=float, default=0.0)
    p.add_argument("--image-signal", type=float, default=0.0)
    p.set_defaults(func=_cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return VALIDATION_FAILURE
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 2
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return RUNTIME_FAILURE


if __name__ == "__main__":
    sys.exit(main())
