"""Training loop and cross-validation harness.

Everything is deterministic given the root seed: per-fold weight init, batch
shuffling, and dropout all draw from named sub-streams, and folds are
assembled in index order even when they run on worker threads
(CGNA_THREADS caps the pool; default is serial).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .alignment import AlignedPair
from .autodiff import Tape
from .errors import ContractError
from .metrics import (FoldMetrics, SplitPlan, classification_metrics,
                      confusion_matrix, label_to_index, make_splits,
                      rmse_clamped)
from .model import ModelConfig, ModelWeights, forward_batch, pad_pairs
from .optim import AdamWState, TrainConfig, adamw_step, lr_at
from .rng import DropoutRng, derive_seed, substream

__all__ = [
    "TrainHistory", "EvalReport", "batch_loss", "predict", "evaluate",
    "train_fold", "cross_validate", "seeded_fold_accuracies", "fold_workers",
]


def fold_workers() -> int:
    """Fold parallelism cap from CGNA_THREADS (default: serial)."""
    try:
        return max(1, int(os.environ.get("CGNA_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class TrainHistory:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False

    def train_losses(self) -> list[float]:
        return [e["train_loss"] for e in self.epochs]


@dataclass
class EvalReport:
    protocol: str
    task: str
    seed: int
    folds: list[FoldMetrics]
    aggregate: FoldMetrics
    predictions: dict[str, dict]  # subject_id -> {"true": .., "pred": ..}
    histories: list[TrainHistory] = field(default_factory=list)

    def fold_accuracies(self) -> list[float]:
        return [f.accuracy for f in self.folds if f.accuracy is not None]

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "task": self.task,
            "seed": self.seed,
            "folds": [f.to_dict() for f in self.folds],
            "aggregate": self.aggregate.to_dict(),
            "predictions": {k: self.predictions[k]
                            for k in sorted(self.predictions)},
        }

    def to_table(self) -> str:
        """UTF-8 tabular text: one row per fold plus the aggregate row."""
        if self.task == "classify":
            cols = ("accuracy", "f1", "precision", "recall")
        else:
            cols = ("rmse",)
        lines = ["\t".join(("fold", "n_test") + cols)]
        rows = [(str(i), fm) for i, fm in enumerate(self.folds)]
        rows.append(("aggregate", self.aggregate))
        for name, fm in rows:
            vals = [name, str(fm.n_test)]
            for col in cols:
                v = getattr(fm, col)
                vals.append("-" if v is None else f"{v:.4f}")
            lines.append("\t".join(vals))
        return "\n".join(lines) + "\n"


def _targets(pairs: Sequence[AlignedPair], task: str):
    if task == "classify":
        labels = []
        for p in pairs:
            if p.label is None:
                raise ContractError(f"subject {p.subject_id} has no label")
            labels.append(label_to_index(p.label))
        return np.asarray(labels, dtype=np.int64)
    values = []
    for p in pairs:
        if p.mmse is None:
            raise ContractError(f"subject {p.subject_id} has no mmse score")
        values.append(p.mmse)
    return np.asarray(values, dtype=np.float32)


def batch_loss(
    pairs: Sequence[AlignedPair], config: ModelConfig, weights: ModelWeights,
    train: bool = False, dropout_rng: DropoutRng | None = None,
):
    """Forward a padded batch and return (loss Tensor, raw outputs ndarray)."""
    audio, text, mask = pad_pairs(pairs)
    out = forward_batch(ad.constant(audio), ad.constant(text), mask, config,
                        weights, train=train, dropout_rng=dropout_rng)
    targets = _targets(pairs, config.task)
    if config.task == "classify":
        loss = ad.cross_entropy_with_logits(out, targets)
    else:
        scores = ad.mean_axis(out, axis=-1)  # [B, 1] -> [B]
        loss = ad.mse_loss(scores, targets)
    return loss, out.data


def predict(pairs: Sequence[AlignedPair], config: ModelConfig,
            weights: ModelWeights) -> np.ndarray:
    """Class indices (classify) or raw scores (regress), evaluation mode."""
    audio, text, mask = pad_pairs(pairs)
    out = forward_batch(ad.constant(audio), ad.constant(text), mask,
                        config, weights, train=False).data
    if config.task == "classify":
        return out.argmax(axis=1)
    return out[:, 0]


def evaluate(pairs: Sequence[AlignedPair], config: ModelConfig,
             weights: ModelWeights) -> FoldMetrics:
    """Confusion-matrix metrics (classify) or clamped RMSE (regress)."""
    if not pairs:
        raise ContractError("cannot evaluate an empty test set")
    preds = predict(pairs, config, weights)
    truth = _targets(pairs, config.task)
    if config.task == "classify":
        return classification_metrics(confusion_matrix(truth, preds))
    return FoldMetrics(n_test=len(pairs),
                       rmse=rmse_clamped(preds, truth))


def _val_score(pairs, config, weights) -> tuple[float, float]:
    """(score to maximize, loss to minimize) on the validation fold."""
    metrics = evaluate(pairs, config, weights)
    loss, _ = batch_loss(pairs, config, weights, train=False)
    if config.task == "classify":
        return metrics.accuracy, float(loss.data)
    return -metrics.rmse, float(loss.data)


def train_fold(
    train_pairs: Sequence[AlignedPair],
    val_pairs: Sequence[AlignedPair] | None,
    config: ModelConfig,
    train_config: TrainConfig,
    fold_seed: int,
    epochs: int | None = None,
    early_stopping: bool | None = None,
) -> tuple[ModelWeights, TrainHistory]:
    """Train one fold; returns the best-validation checkpoint when early
    stopping is active, otherwise the final weights."""
    if not train_pairs:
        raise ContractError("training split is empty")
    train_config.validate()
    config.validate()
    if early_stopping is None:
        early_stopping = val_pairs is not None and train_config.early_stop_patience > 0
    if early_stopping and not val_pairs:
        raise ContractError("early stopping requires a validation fold")
    n_epochs = epochs if epochs is not None else (
        train_config.max_epochs if early_stopping else train_config.loso_epochs)
    schedule = replace(train_config, max_epochs=n_epochs,
                       warmup_epochs=min(train_config.warmup_epochs,
                                         max(n_epochs - 1, 0)))

    weights = ModelWeights(config, seed=fold_seed)
    params = weights.tensors()
    state = AdamWState(params)
    data_rng = substream(fold_seed, "data")
    dropout_rng = DropoutRng(derive_seed(fold_seed, "dropout"))

    history = TrainHistory()
    best_snapshot = None
    best_key = None
    patience_left = train_config.early_stop_patience

    n = len(train_pairs)
    for epoch in range(n_epochs):
        lr_epoch = lr_at(epoch, schedule)
        order = data_rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, train_config.batch_size):
            batch = [train_pairs[i] for i in order[start:start + train_config.batch_size]]
            weights.zero_grads()
            with Tape() as tape:
                loss, _ = batch_loss(batch, config, weights, train=True,
                                     dropout_rng=dropout_rng)
            tape.backward(loss)
            adamw_step(params, state, lr_epoch, train_config.weight_decay,
                       train_config.betas, train_config.eps)
            epoch_loss += float(loss.data) * len(batch)
        record = {"epoch": epoch, "lr": lr_epoch, "train_loss": epoch_loss / n}
        if early_stopping:
            score, val_loss = _val_score(val_pairs, config, weights)
            record["val_score"] = score
            record["val_loss"] = val_loss
            key = (score, -val_loss)
            if best_key is None or key > best_key:
                best_key = key
                best_snapshot = weights.snapshot()
                history.best_epoch = epoch
                patience_left = train_config.early_stop_patience
            else:
                patience_left -= 1
        history.epochs.append(record)
        if early_stopping and patience_left <= 0:
            history.stopped_early = True
            break
    if early_stopping and best_snapshot is not None:
        weights.restore(best_snapshot)
    return weights, history


def cross_validate(
    pairs: Sequence[AlignedPair],
    config: ModelConfig,
    train_config: TrainConfig,
    protocol: str = "kfold",
    k: int = 5,
    plan: SplitPlan | None = None,
) -> EvalReport:
    """Run the full protocol: split, per-fold train, evaluate, aggregate.

    KFold trains with early stopping against the held-out fold and reports
    the best checkpoint on it; LOSO trains a fixed budget with no validation.
    Subject isolation (train/test disjoint) is asserted for every fold.
    """
    by_id = {p.subject_id: p for p in pairs}
    if len(by_id) != len(pairs):
        raise ContractError("duplicate subject ids in dataset")
    roster = [(p.subject_id, p.label if p.label is not None else "?")
              for p in pairs]
    if plan is None:
        plan = make_splits(roster, protocol, k=k, seed=train_config.seed,
                           stratified=(config.task == "classify"))
    plan.validate_partition([sid for sid, _ in roster])

    def run_fold(fold_idx: int):
        test_ids = plan.folds[fold_idx]
        train_ids = plan.train_ids(fold_idx)
        if set(test_ids) & set(train_ids):
            raise ContractError(f"fold {fold_idx} violates subject isolation")
        test_pairs = [by_id[s] for s in test_ids]
        train_pairs = [by_id[s] for s in train_ids]
        fold_seed = derive_seed(train_config.seed, "fold", fold_idx)
        if plan.protocol == "loso":
            weights, history = train_fold(train_pairs, None, config,
                                          train_config, fold_seed,
                                          early_stopping=False)
        else:
            weights, history = train_fold(train_pairs, test_pairs, config,
                                          train_config, fold_seed)
        fold_metrics = evaluate(test_pairs, config, weights)
        preds = predict(test_pairs, config, weights)
        return fold_metrics, history, test_ids, preds

    n_folds = len(plan.folds)
    workers = min(fold_workers(), n_folds)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_fold, range(n_folds)))
    else:
        results = [run_fold(i) for i in range(n_folds)]

    folds: list[FoldMetrics] = []
    histories: list[TrainHistory] = []
    predictions: dict[str, dict] = {}
    pooled_true: list = []
    pooled_pred: list = []
    for fold_metrics, history, test_ids, preds in results:
        folds.append(fold_metrics)
        histories.append(history)
        for sid, pred in zip(test_ids, preds):
            pair = by_id[sid]
            if config.task == "classify":
                predictions[sid] = {"true": pair.label,
                                    "pred": ("CH", "AD")[int(pred)]}
                pooled_true.append(label_to_index(pair.label))
                pooled_pred.append(int(pred))
            else:
                reported = float(np.clip(pred, 0.0, 30.0))
                predictions[sid] = {"true": pair.mmse, "pred": reported}
                pooled_true.append(pair.mmse)
                pooled_pred.append(float(pred))

    if config.task == "classify":
        aggregate = classification_metrics(
            confusion_matrix(pooled_true, pooled_pred))
    else:
        aggregate = FoldMetrics(n_test=len(pooled_true),
                                rmse=rmse_clamped(pooled_pred, pooled_true))
    return EvalReport(
        protocol=plan.protocol, task=config.task, seed=train_config.seed,
        folds=folds, aggregate=aggregate, predictions=predictions,
        histories=histories,
    )


def seeded_fold_accuracies(
    pairs: Sequence[AlignedPair],
    config: ModelConfig,
    train_config: TrainConfig,
    seeds: Sequence[int],
    k: int = 10,
) -> list[float]:
    """Per-fold accuracies over several seeds (len(seeds) * k values).

    Running this for two model configurations on the same seeds yields
    matched accuracy pairs for `paired_t_test` (fold plans depend only on
    the seed, so pairs line up fold-for-fold).
    """
    accuracies: list[float] = []
    for seed in seeds:
        tcfg = replace(train_config, seed=seed)
        report = cross_validate(pairs, config, tcfg, protocol="kfold", k=k)
        accuracies.extend(report.fold_accuracies())
    return accuracies
