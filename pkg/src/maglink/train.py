"""Stage-1 unsupervised pretraining and Stage-2 supervised link prediction.

Stage 1 trains the two-layer encoder on the attribute/image graph by scoring
positive edges against corrupted negatives with dot products and BCE; a 5%
edge holdout is monitored for early stopping. Stage 2 trains the hetero-GNN
full-batch on fixed split negatives, monitors validation ROC-AUC, and
evaluates the test split exactly once from the best checkpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .hetero import EdgeSplit, HeteroGraph, add_reverse_edges, replace_edges, sample_negatives
from .matrix import FeatureMatrix
from .metrics import MetricReport, pr_auc, roc_auc
from .nn.layers import incoming_adjacency
from .nn.models import HeteroEncoder, LinkPredictor
from .nn.ops import dot_decoder, dot_decoder_backward, weighted_bce
from .nn.params import NonFiniteGradientError, ParameterSet, adam_step
from .rng import stream
from .schema import HAS_ATTRIBUTE, HAS_IMAGE, NodeType, Relation, reverse_relation
from .features import svd_fit, svd_transform

__all__ = [
    "PretrainConfig",
    "PretrainResult",
    "pretrain_stage1",
    "TrainConfig",
    "TrainResult",
    "train_linkpred",
    "grid_search",
    "TrainingDiverged",
    "EarlyStopper",
    "LR_GRID",
]

# {1, 5} x {1e-6 .. 1e-2}, ascending
LR_GRID: tuple[float, ...] = tuple(
    sorted(m * 10.0**e for e in range(-6, -1) for m in (1, 5))
)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class EarlyStopper:
    """Stops when the monitored value fails to improve for ``patience`` epochs."""

    patience: int
    mode: str = "max"
    best: float = field(init=False)
    best_epoch: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        self.best = -math.inf if self.mode == "max" else math.inf

    def update(self, epoch: int, value: float) -> bool:
        improved = value > self.best if self.mode == "max" else value < self.best
        if improved:
            self.best = value
            self.best_epoch = epoch
        return improved

    def should_stop(self, epoch: int) -> bool:
        return epoch - self.best_epoch >= self.patience


# ---------------------------------------------------------------------------
# Stage 1
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PretrainConfig:
    encoder: str = "graphsage"  # or "rgcn"
    dims: tuple[int, int, int] = (768, 64, 32)
    lr: float = 1e-3
    weight_decay: float = 1e-5
    max_epochs: int = 1000
    patience: int = 20
    attribute_batch_size: int = 32
    image_batch_size: int = 16
    negative_ratio: int = 1
    holdout_fraction: float = 0.05
    # alternative input path: compress raw features to this rank before encoding
    compress_input_rank: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")
        if self.encoder not in ("graphsage", "rgcn"):
            raise ValueError(f"unknown encoder {self.encoder!r}")


@dataclass
class PretrainResult:
    embeddings: FeatureMatrix  # manufacturer rows, out_dim columns
    best_epoch: int
    epochs_run: int
    train_loss_curve: list[float]
    monitor_loss_curve: list[float]
    seed: int


def _batches(n: int, size: int) -> list[tuple[int, int]]:
    return [(i, min(i + size, n)) for i in range(0, n, size)]


def pretrain_stage1(
    g_mag: HeteroGraph,
    feats: dict[NodeType, FeatureMatrix],
    cfg: PretrainConfig,
) -> PretrainResult:
    """Train manufacturer embeddings on the attribute/image graph.

    Epochs interleave attribute-edge and image-edge batches round-robin.
    A fixed 5% holdout of each relation is scored (never message-passed)
    and its BCE drives early stopping.
    """
    rel_specs = [
        (HAS_ATTRIBUTE, cfg.attribute_batch_size),
        (HAS_IMAGE, cfg.image_batch_size),
    ]
    active = [
        (g_mag.relation(rel.name), bs)
        for rel, bs in rel_specs
        if g_mag.has_relation(rel.name) and g_mag.num_edges(rel.name) > 0
    ]
    if not active:
        raise ValueError("pretraining graph has no attribute or image edges")
    if NodeType.MANUFACTURER not in feats:
        raise ValueError("manufacturer features are required for pretraining")

    arrays = {t: fm.values for t, fm in feats.items()}
    if cfg.compress_input_rank is not None:
        arrays = {
            t: svd_transform(svd_fit(x, cfg.compress_input_rank, seed=cfg.seed), x).values
            for t, x in arrays.items()
        }
    elif arrays[NodeType.MANUFACTURER].shape[1] != cfg.dims[0]:
        raise ValueError(
            f"manufacturer features are {arrays[NodeType.MANUFACTURER].shape[1]}-D, "
            f"config expects {cfg.dims[0]}-D"
        )

    # hold out a monitoring slice per relation and message-pass the rest
    g_train = g_mag
    holdouts: dict[str, np.ndarray] = {}
    monitor_negs: dict[str, np.ndarray] = {}
    train_edges: dict[str, np.ndarray] = {}
    for rel, _ in active:
        edges = g_mag.edge_array(rel.name)
        n = edges.shape[0]
        n_hold = max(1, int(np.floor(n * cfg.holdout_fraction + 0.5))) if n > 1 else 0
        perm = stream(cfg.seed, f"holdout/{rel.name}").permutation(n)
        holdouts[rel.name] = edges[np.sort(perm[:n_hold])]
        train_edges[rel.name] = edges[np.sort(perm[n_hold:])]
        g_train = replace_edges(g_train, rel, train_edges[rel.name])
        rev = reverse_relation(rel)
        if g_train.has_relation(rev.name):
            g_train = replace_edges(g_train, rev, train_edges[rel.name][:, ::-1])
        else:
            g_train = add_reverse_edges(g_train, rel)
        if n_hold:
            monitor_negs[rel.name] = sample_negatives(
                g_mag, rel, holdouts[rel.name], cfg.negative_ratio, cfg.seed,
                tag=f"monitor-neg/{rel.name}",
            )

    relations = list(g_train.relations)
    in_dims = {t: arrays[t].shape[1] for t in arrays}
    encoder = HeteroEncoder(cfg.encoder, relations, in_dims, dims=(cfg.dims[1], cfg.dims[2]))
    params = encoder.init_params(cfg.seed)
    adj = incoming_adjacency(g_train)

    if all(holdouts[rel.name].shape[0] == 0 for rel, _ in active):
        raise ValueError("graph too small to hold out monitoring edges for early stopping")

    def monitor_loss() -> float:
        emb, _ = encoder.forward(params, adj, arrays)
        losses = []
        weights = []
        for rel, _ in active:
            pos = holdouts[rel.name]
            if pos.shape[0] == 0:
                continue
            pairs = np.vstack([pos, monitor_negs[rel.name]])
            labels = np.concatenate([np.ones(pos.shape[0]), np.zeros(monitor_negs[rel.name].shape[0])])
            scores, _ = dot_decoder(emb[rel.src], emb[rel.dst], pairs)
            loss, _ = weighted_bce(scores, labels)
            losses.append(loss)
            weights.append(labels.shape[0])
        return float(np.average(losses, weights=weights))

    stopper = EarlyStopper(cfg.patience, mode="min")
    best_params = params.copy()
    train_curve: list[float] = []
    monitor_curve: list[float] = []
    epochs_run = 0

    for epoch in range(1, cfg.max_epochs + 1):
        epochs_run = epoch
        batch_queues = []
        for rel, bs in active:
            edges = train_edges[rel.name]
            order = stream(cfg.seed, f"order/{rel.name}", epoch).permutation(edges.shape[0])
            batch_queues.append((rel, edges[order], _batches(edges.shape[0], bs)))
        epoch_losses: list[float] = []
        round_idx = 0
        while any(q[2] for q in batch_queues):
            for qi, (rel, edges, spans) in enumerate(batch_queues):
                if not spans:
                    continue
                lo, hi = spans.pop(0)
                pos = edges[lo:hi]
                neg = sample_negatives(
                    g_mag, rel, pos, cfg.negative_ratio, cfg.seed,
                    tag=f"train-neg/{rel.name}/e{epoch}/b{round_idx}",
                )
                pairs = np.vstack([pos, neg])
                labels = np.concatenate([np.ones(pos.shape[0]), np.zeros(neg.shape[0])])
                emb, cache = encoder.forward(params, adj, arrays)
                scores, dcache = dot_decoder(emb[rel.src], emb[rel.dst], pairs)
                loss, dscores = weighted_bce(scores, labels)
                if not np.isfinite(loss):
                    raise TrainingDiverged(f"non-finite pretraining loss at epoch {epoch}")
                gsrc, gdst = dot_decoder_backward(dscores, dcache)
                grad_emb = {t: np.zeros_like(emb[t]) for t in emb}
                grad_emb[rel.src] += gsrc
                grad_emb[rel.dst] += gdst
                grads, _ = encoder.backward(params, cache, grad_emb)
                adam_step(params, grads, cfg.lr, cfg.weight_decay)
                epoch_losses.append(loss)
            round_idx += 1
        train_curve.append(float(np.mean(epoch_losses)))
        monitor_curve.append(monitor_loss())
        if stopper.update(epoch, monitor_curve[-1]):
            best_params = params.copy()
        if stopper.should_stop(epoch):
            break

    emb, _ = encoder.forward(best_params, adj, arrays)
    out = FeatureMatrix(emb[NodeType.MANUFACTURER], NodeType.MANUFACTURER)
    return PretrainResult(
        out, stopper.best_epoch, epochs_run, train_curve, monitor_curve, cfg.seed
    )


# ---------------------------------------------------------------------------
# Stage 2
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    model: str = "heterosage"  # or "heterogat"
    hidden: int = 128
    layers: int = 2
    dropout: float = 0.5
    heads: int = 4
    lr: float = 1e-3
    lr_grid: tuple[float, ...] = LR_GRID
    weight_decay: float = 0.0
    max_epochs: int = 1000
    patience: int = 20
    negative_ratio: int = 1
    pos_weight: float | None = None  # None: negatives/positives of the loss batch
    residual: bool = False
    shuffle_train_labels: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.lr_grid:
            raise ValueError("lr grid must be non-empty")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.model not in ("heterosage", "heterogat"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.layers != 2:
            raise ValueError("only two-layer models are supported")


@dataclass
class TrainResult:
    params: ParameterSet
    best_val_roc: float
    lr: float
    best_epoch: int
    epochs_run: int
    train_loss_curve: list[float]
    val_roc_curve: list[float]
    test_report: MetricReport
    seed: int
    grid: list[tuple[float, float | None]] | None = None


def _leakage_check(g_msg: HeteroGraph, split: EdgeSplit) -> None:
    """Val/test positives must never appear as messages for the target relation."""
    rel = split.relation
    keys = g_msg.edge_keys(rel.name)
    n_dst = g_msg.num_nodes(rel.dst)
    for name in ("val_pos", "test_pos"):
        pairs = getattr(split, name)
        if pairs.shape[0] == 0:
            continue
        probe = pairs[:, 0] * n_dst + pairs[:, 1]
        hit = np.searchsorted(keys, probe)
        hit = np.clip(hit, 0, keys.shape[0] - 1)
        if np.any(keys[hit] == probe):
            raise AssertionError(f"{name} edges leaked into the message graph")


def train_linkpred(
    g: HeteroGraph,
    feats: dict[NodeType, FeatureMatrix],
    split: EdgeSplit,
    cfg: TrainConfig,
) -> TrainResult:
    """Full-batch supervised training of one hetero-GNN at one learning rate."""
    rel = g.relation(split.relation.name)
    rev = reverse_relation(rel)
    if not g.has_relation(rev.name):
        raise ValueError(f"reverse relation {rev.name!r} must be added before training")
    if split.val_pos.shape[0] == 0 or split.test_pos.shape[0] == 0:
        raise ValueError("degenerate split: empty validation or test partition")

    g_msg = replace_edges(g, rel, split.train_pos)
    g_msg = replace_edges(g_msg, rev, split.train_pos[:, ::-1])
    _leakage_check(g_msg, split)
    adj = incoming_adjacency(g_msg)
    arrays = {t: fm.values for t, fm in feats.items()}

    model = LinkPredictor(
        cfg.model,
        list(g_msg.relations),
        {t: a.shape[1] for t, a in arrays.items()},
        hidden=cfg.hidden,
        heads=cfg.heads,
        dropout_rate=cfg.dropout,
        residual=cfg.residual,
    )
    params = model.init_params(cfg.seed)

    train_pairs = np.vstack([split.train_pos, split.train_neg])
    train_labels = np.concatenate(
        [np.ones(split.train_pos.shape[0]), np.zeros(split.train_neg.shape[0])]
    )
    if cfg.shuffle_train_labels:
        train_labels = train_labels[stream(cfg.seed, "label-shuffle").permutation(train_labels.shape[0])]
    pos_weight = (
        cfg.pos_weight
        if cfg.pos_weight is not None
        else split.train_neg.shape[0] / max(split.train_pos.shape[0], 1)
    )

    def scores_for(pairs: np.ndarray, emb: dict[NodeType, np.ndarray]) -> np.ndarray:
        s, _ = dot_decoder(emb[rel.src], emb[rel.dst], pairs)
        return s

    def eval_roc(pairs_pos: np.ndarray, pairs_neg: np.ndarray, emb) -> float:
        pairs = np.vstack([pairs_pos, pairs_neg])
        labels = np.concatenate([np.ones(pairs_pos.shape[0]), np.zeros(pairs_neg.shape[0])])
        scores = scores_for(pairs, emb)
        if not np.all(np.isfinite(scores)):
            raise TrainingDiverged(f"non-finite evaluation scores (lr={cfg.lr})")
        return roc_auc(scores, labels)

    stopper = EarlyStopper(cfg.patience, mode="max")
    best_params = params.copy()
    loss_curve: list[float] = []
    val_curve: list[float] = []
    epochs_run = 0

    # overflow in a diverging run is detected via the explicit finiteness
    # checks below, so the intermediate warnings are noise
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, cfg.max_epochs + 1):
            epochs_run = epoch
            emb, cache = model.forward(
                params, adj, arrays, training=True, seed=cfg.seed, epoch=epoch
            )
            scores, dcache = dot_decoder(emb[rel.src], emb[rel.dst], train_pairs)
            loss, dscores = weighted_bce(scores, train_labels, pos_weight)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch} (lr={cfg.lr})")
            gsrc, gdst = dot_decoder_backward(dscores, dcache)
            grad_emb = {t: np.zeros_like(emb[t]) for t in emb}
            grad_emb[rel.src] += gsrc
            grad_emb[rel.dst] += gdst
            try:
                grads, _ = model.backward(params, cache, grad_emb)
                adam_step(params, grads, cfg.lr, cfg.weight_decay)
            except NonFiniteGradientError as exc:
                raise TrainingDiverged(str(exc)) from exc
            loss_curve.append(loss)

            emb_eval, _ = model.forward(params, adj, arrays, training=False)
            val_curve.append(eval_roc(split.val_pos, split.val_neg, emb_eval))
            if stopper.update(epoch, val_curve[-1]):
                best_params = params.copy()
            if stopper.should_stop(epoch):
                break

    emb_best, _ = model.forward(best_params, adj, arrays, training=False)
    test_pairs = np.vstack([split.test_pos, split.test_neg])
    test_labels = np.concatenate(
        [np.ones(split.test_pos.shape[0]), np.zeros(split.test_neg.shape[0])]
    )
    test_scores = scores_for(test_pairs, emb_best)
    report = MetricReport(
        roc_auc(test_scores, test_labels),
        pr_auc(test_scores, test_labels),
        int(split.test_pos.shape[0]),
        int(split.test_neg.shape[0]),
    )
    return TrainResult(
        best_params,
        stopper.best,
        cfg.lr,
        stopper.best_epoch,
        epochs_run,
        loss_curve,
        val_curve,
        report,
        cfg.seed,
    )


def grid_search(
    g: HeteroGraph,
    feats: dict[NodeType, FeatureMatrix],
    split: EdgeSplit,
    cfg: TrainConfig,
) -> TrainResult:
    """Run train_linkpred once per grid learning rate and keep the best
    validation ROC-AUC; ties break toward the smaller rate. Diverging runs
    are recorded as failed and skipped."""
    recorded: list[tuple[float, float | None]] = []
    best: TrainResult | None = None
    for lr in sorted(cfg.lr_grid):
        run_cfg = replace(cfg, lr=lr)
        try:
            result = train_linkpred(g, feats, split, run_cfg)
        except TrainingDiverged:
            recorded.append((lr, None))
            continue
        recorded.append((lr, result.best_val_roc))
        if best is None or result.best_val_roc > best.best_val_roc:
            best = result
    if best is None:
        raise TrainingDiverged("every learning rate in the grid diverged")
    best.grid = recorded
    return best
