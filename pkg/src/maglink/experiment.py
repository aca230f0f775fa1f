"""Experiment orchestration: multi-seed runs, ablations, archives, tables.

Archives are plain directories of JSON files plus binary checkpoints. They
contain no timestamps or machine-specific paths, so a rerun with the same
spec and thread setting reproduces the archive byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .ingest import Dataset
from .train import LR_GRID, PretrainConfig, TrainConfig, TrainResult, TrainingDiverged, grid_search
from .variants import VARIANTS, build_variant

__all__ = [
    "ExperimentSpec",
    "ExperimentArchive",
    "run_experiment",
    "run_ablation_sampling",
    "emit_results_table",
    "ABLATION_CSV_HEADER",
]

ABLATION_CSV_HEADER = "ratio,model,roc_auc_mean,roc_auc_std,pr_auc_mean,pr_auc_std"


def _environment_record() -> dict:
    threads = os.environ.get("MAGLINK_THREADS") or os.environ.get("OMP_NUM_THREADS") or "default"
    return {"version": __version__, "threads": str(threads)}


@dataclass(frozen=True)
class ExperimentSpec:
    variant: str
    model: str = "heterosage"
    pretrain_encoder: str = "graphsage"
    image_ratio: float = 1.0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    train: TrainConfig = field(default_factory=TrainConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    tfidf_max_features: int = 4096

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.pretrain_encoder not in ("graphsage", "rgcn"):
            raise ValueError(f"unknown pretrain encoder {self.pretrain_encoder!r}")
        if self.image_ratio != 1.0 and not VARIANTS[self.variant].images:
            raise ValueError(
                f"image_ratio only applies to image variants, not {self.variant!r}"
            )

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["seeds"] = list(self.seeds)
        doc["train"]["lr_grid"] = list(self.train.lr_grid)
        doc["pretrain"]["dims"] = list(self.pretrain.dims)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        doc = dict(doc)
        train = dict(doc.pop("train", {}))
        pretrain = dict(doc.pop("pretrain", {}))
        if "lr_grid" in train:
            train["lr_grid"] = tuple(train["lr_grid"])
        if "dims" in pretrain:
            pretrain["dims"] = tuple(pretrain["dims"])
        doc["seeds"] = tuple(doc.get("seeds", (0, 1, 2, 3, 4)))
        return cls(train=TrainConfig(**train), pretrain=PretrainConfig(**pretrain), **doc)


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _result_doc(seed: int, result: TrainResult) -> dict:
    return {
        "seed": seed,
        "chosen_lr": result.lr,
        "best_epoch": result.best_epoch,
        "epochs_run": result.epochs_run,
        "best_val_roc": result.best_val_roc,
        "test": {
            "roc_auc": result.test_report.roc_auc,
            "pr_auc": result.test_report.pr_auc,
            "positives": result.test_report.positives,
            "negatives": result.test_report.negatives,
        },
        "grid": [[lr, val] for lr, val in (result.grid or [])],
        "curves": {
            "train_loss": result.train_loss_curve,
            "val_roc": result.val_roc_curve,
        },
    }


@dataclass
class ExperimentArchive:
    spec: ExperimentSpec
    environment: dict
    per_seed: dict[int, dict]
    failures: dict[int, str]
    path: Path | None = None

    @property
    def aggregate(self) -> dict:
        seeds = sorted(self.per_seed)
        roc = [self.per_seed[s]["test"]["roc_auc"] for s in seeds]
        pr = [self.per_seed[s]["test"]["pr_auc"] for s in seeds]
        agg = {
            "variant": self.spec.variant,
            "model": self.spec.model,
            "pretrain_encoder": self.spec.pretrain_encoder,
            "image_ratio": self.spec.image_ratio,
            "seeds": seeds,
            "chosen_lrs": [self.per_seed[s]["chosen_lr"] for s in seeds],
            "per_seed": {"roc_auc": roc, "pr_auc": pr},
            "failed_seeds": sorted(self.failures),
        }
        if roc:
            agg["mean"] = {"roc_auc": float(np.mean(roc)), "pr_auc": float(np.mean(pr))}
            agg["std"] = {"roc_auc": float(np.std(roc)), "pr_auc": float(np.std(pr))}
        return agg

    def save(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "spec.json", {"experiment": self.spec.to_dict(), "environment": self.environment})
        for seed, doc in self.per_seed.items():
            seed_dir = out / f"seed_{seed}"
            seed_dir.mkdir(exist_ok=True)
            _write_json(seed_dir / "result.json", doc)
        for seed, err in self.failures.items():
            seed_dir = out / f"seed_{seed}"
            seed_dir.mkdir(exist_ok=True)
            _write_json(seed_dir / "failure.json", {"seed": seed, "error": err})
        agg = self.aggregate
        _write_json(out / "aggregate.json", agg)
        with open(out / "aggregate.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["variant", "model", "roc_auc_mean", "roc_auc_std", "pr_auc_mean", "pr_auc_std", "n_seeds"]
            )
            if "mean" in agg:
                writer.writerow(
                    [
                        agg["variant"],
                        agg["model"],
                        f"{agg['mean']['roc_auc']:.6f}",
                        f"{agg['std']['roc_auc']:.6f}",
                        f"{agg['mean']['pr_auc']:.6f}",
                        f"{agg['std']['pr_auc']:.6f}",
                        len(agg["seeds"]),
                    ]
                )
        self.path = out
        return out

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentArchive":
        path = Path(path)
        spec_doc = json.loads((path / "spec.json").read_text(encoding="utf-8"))
        spec = ExperimentSpec.from_dict(spec_doc["experiment"])
        per_seed: dict[int, dict] = {}
        failures: dict[int, str] = {}
        for seed_dir in sorted(path.glob("seed_*")):
            result = seed_dir / "result.json"
            failure = seed_dir / "failure.json"
            if result.exists():
                doc = json.loads(result.read_text(encoding="utf-8"))
                per_seed[int(doc["seed"])] = doc
            elif failure.exists():
                doc = json.loads(failure.read_text(encoding="utf-8"))
                failures[int(doc["seed"])] = doc["error"]
        return cls(spec, spec_doc["environment"], per_seed, failures, path)


def run_experiment(
    spec: ExperimentSpec, dataset: Dataset, out_dir: str | Path | None = None
) -> ExperimentArchive:
    """Build the variant, grid-search, and archive results for every seed.

    A failing seed is recorded with a failure marker; the remaining seeds
    still produce results.
    """
    per_seed: dict[int, dict] = {}
    failures: dict[int, str] = {}
    checkpoints: dict[int, TrainResult] = {}
    for seed in spec.seeds:
        try:
            built = build_variant(
                spec.variant,
                dataset,
                seed,
                image_ratio=spec.image_ratio,
                pretrain_cfg=replace(spec.pretrain, encoder=spec.pretrain_encoder),
                tfidf_max_features=spec.tfidf_max_features,
                neg_ratio=spec.train.negative_ratio,
            )
            cfg = replace(spec.train, model=spec.model, seed=seed)
            result = grid_search(built.graph, built.features, built.split, cfg)
            per_seed[seed] = _result_doc(seed, result)
            checkpoints[seed] = result
        except (TrainingDiverged, ValueError) as exc:
            failures[seed] = f"{type(exc).__name__}: {exc}"
    archive = ExperimentArchive(spec, _environment_record(), per_seed, failures)
    if out_dir is not None:
        archive.save(out_dir)
        for seed, result in checkpoints.items():
            result.params.save(Path(out_dir) / f"seed_{seed}" / "checkpoint.bin")
    return archive


def run_ablation_sampling(
    spec: ExperimentSpec,
    dataset: Dataset,
    ratios: tuple[float, ...] = (0.1, 0.2, 0.5),
    out_dir: str | Path | None = None,
    models: tuple[str, ...] = ("heterosage", "heterogat"),
) -> list[dict]:
    """Sweep the image sampling ratio for each model; emits plot-ready rows."""
    if not VARIANTS[spec.variant].images:
        raise ValueError(f"variant {spec.variant!r} has no image edges to ablate")
    rows: list[dict] = []
    for ratio in ratios:
        for model in models:
            sub = replace(spec, image_ratio=ratio, model=model)
            sub_dir = None
            if out_dir is not None:
                sub_dir = Path(out_dir) / f"ratio_{ratio:g}_{model}"
            archive = run_experiment(sub, dataset, sub_dir)
            agg = archive.aggregate
            rows.append(
                {
                    "ratio": ratio,
                    "model": model,
                    "roc_auc_mean": agg.get("mean", {}).get("roc_auc", float("nan")),
                    "roc_auc_std": agg.get("std", {}).get("roc_auc", float("nan")),
                    "pr_auc_mean": agg.get("mean", {}).get("pr_auc", float("nan")),
                    "pr_auc_std": agg.get("std", {}).get("pr_auc", float("nan")),
                }
            )
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        with open(Path(out_dir) / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
            fh.write(ablation_csv(rows))
    return rows


def ablation_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    buf.write(ABLATION_CSV_HEADER + "\n")
    for r in rows:
        buf.write(
            f"{r['ratio']:g},{r['model']},{r['roc_auc_mean']:.6f},{r['roc_auc_std']:.6f},"
            f"{r['pr_auc_mean']:.6f},{r['pr_auc_std']:.6f}\n"
        )
    return buf.getvalue()


def emit_results_table(
    archives: list[ExperimentArchive | str | Path],
) -> tuple["object", str]:
    """Variant-by-model table of AUC percentages.

    Returns (rich Table with best bolded and second-best underlined, plain
    CSV text). Percentages are formatted to two decimals.
    """
    from rich.table import Table

    if not archives:
        raise ValueError("need at least one archive")
    loaded = [a if isinstance(a, ExperimentArchive) else ExperimentArchive.load(a) for a in archives]
    aggs = [a.aggregate for a in loaded if "mean" in a.aggregate]
    variants = sorted({a["variant"] for a in aggs}, key=lambda v: list(VARIANTS).index(v))
    models = sorted({a["model"] for a in aggs})
    cell: dict[tuple[str, str, str], float] = {}
    for a in aggs:
        for metric in ("roc_auc", "pr_auc"):
            cell[(a["variant"], a["model"], metric)] = 100.0 * a["mean"][metric]

    columns = [(m, metric) for m in models for metric in ("roc_auc", "pr_auc")]
    table = Table(title="Link prediction AUC (%) by variant")
    table.add_column("variant")
    for m, metric in columns:
        table.add_column(f"{m} {'ROC-AUC' if metric == 'roc_auc' else 'PR-AUC'}", justify="right")

    ranks: dict[tuple[str, str], list[float]] = {}
    for m, metric in columns:
        vals = [cell[(v, m, metric)] for v in variants if (v, m, metric) in cell]
        ranks[(m, metric)] = sorted(vals, reverse=True)

    csv_lines = ["variant," + ",".join(f"{m}_{metric}" for m, metric in columns)]
    for v in variants:
        row = [v]
        csv_row = [v]
        for m, metric in columns:
            val = cell.get((v, m, metric))
            if val is None:
                row.append("-")
                csv_row.append("")
                continue
            text = f"{val:.2f}"
            best = ranks[(m, metric)]
            if len(best) > 1 and val == best[0]:
                text = f"[bold]{text}[/bold]"
            elif len(best) > 1 and val == best[1]:
                text = f"[underline]{text}[/underline]"
            row.append(text)
            csv_row.append(f"{val:.2f}")
        table.add_row(*row)
        csv_lines.append(",".join(csv_row))
    return table, "\n".join(csv_lines) + "\n"
