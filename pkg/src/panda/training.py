"""Training loop, repeated trials and the hyper-parameter grid."""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import asdict, dataclass, field, replace
from statistics import NormalDist
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .centrality import KIND_ORDER, CentralityKind
from .errors import SizeError
from .graph import GraphSample, split_indices
from .model import (
    ModelSpec,
    copy_params,
    forward_batch,
    init_params,
    make_batch,
    sample_mask,
)

__all__ = [
    "TrainConfig",
    "SearchSpace",
    "TrialResult",
    "TrialSummary",
    "DataSplit",
    "train_one",
    "run_trials",
    "confidence_interval",
    "grid_search",
    "accuracy",
]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    dropout: float = 0.5
    layers: int = 4
    p: int = 64
    max_epochs: int = 500
    patience: int = 100
    batch: int = 32
    trials: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.patience > self.max_epochs:
            raise ValueError(f"patience ({self.patience}) exceeds max_epochs ({self.max_epochs})")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")


@dataclass(frozen=True)
class SearchSpace:
    p_high: tuple[int, ...] = (80, 96, 112, 128)
    k: tuple[int, ...] = (1, 3, 5, 7, 10, 15, 20)
    centrality: tuple[str, ...] = tuple(c.value for c in CentralityKind)

    def __post_init__(self):
        if not (self.p_high and self.k and self.centrality):
            raise ValueError("search space must be non-empty")

    def points(self):
        return list(itertools.product(self.p_high, self.k, self.centrality))


@dataclass(frozen=True)
class TrialResult:
    trial_seed: int
    best_val_epoch: int
    val_accuracy: float
    test_accuracy: float | None
    epochs_run: int
    wall_time: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.wall_time is None:
            d.pop("wall_time")
        return d


@dataclass(frozen=True)
class TrialSummary:
    mean: float
    half_width: float
    results: tuple[TrialResult, ...]

    def __str__(self):
        return f"{self.mean:.3f} ± {self.half_width:.3f}"


class DataSplit:
    """Train/val/test partition that counts every read of the test set."""

    def __init__(self, train, val, test, indices=None):
        self.train = list(train)
        self.val = list(val)
        self._test = list(test)
        self.indices = indices
        self.test_reads = 0

    @classmethod
    def from_dataset(cls, dataset: Sequence[GraphSample], seed: int) -> "DataSplit":
        idx = split_indices(len(dataset), seed)
        return cls(*([dataset[i] for i in part] for part in idx), indices=idx)

    def test(self) -> list:
        self.test_reads += 1
        return self._test


def _masks(samples, spec, cache):
    return [sample_mask(s, spec, cache) for s in samples]


def accuracy(spec: ModelSpec, params: dict, samples, masks, batch_size: int = 256) -> float:
    correct = 0
    for i in range(0, len(samples), batch_size):
        b = make_batch(samples[i : i + batch_size], masks[i : i + batch_size])
        pred = forward_batch(spec, params, b).data.argmax(axis=1)
        correct += int((pred == b.labels).sum())
    return correct / len(samples)


def train_one(config: TrainConfig, model_spec: ModelSpec, dataset: Sequence[GraphSample], seed: int,
              split: DataSplit | None = None, evaluate_test: bool = True, cache: dict | None = None,
              timing: bool = False, return_params: bool = False):
    """Train with early stopping on validation accuracy; report test accuracy once.

    Batches are disjoint unions of graphs, so each Adam step sees the mean
    loss of ``config.batch`` graphs. Parameters from the best validation epoch
    (first one on ties) are kept. Training stops once ``patience`` epochs in a
    row fail to improve on it. With ``return_params`` the kept parameters are
    returned alongside the result.
    """
    start = time.perf_counter()
    if split is None:
        split = DataSplit.from_dataset(dataset, seed)
    if not split.train or not split.val or not split._test:
        raise SizeError("train, validation and test splits must all be non-empty")
    cache = {} if cache is None else cache
    spec = replace(model_spec, dropout=config.dropout)
    params = init_params(spec, seed)
    names = list(params)
    tensors = [params[n] for n in names]
    state = ad.AdamState()
    rng = np.random.default_rng([seed, 1])

    train_masks = _masks(split.train, spec, cache)
    val_masks = _masks(split.val, spec, cache)

    best_acc, best_epoch, best_params = -1.0, -1, None
    stale = 0
    epoch = 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(split.train))
        for i in range(0, len(order), config.batch):
            chunk = order[i : i + config.batch]
            batch = make_batch([split.train[j] for j in chunk], [train_masks[j] for j in chunk])
            with ad.Tape() as tape:
                logits = forward_batch(spec, params, batch, training=True, rng=rng)
                loss = ad.cross_entropy_logits(logits, batch.labels)
            grads = tape.gradient(loss, tensors)
            ad.adam_step(params, dict(zip(names, grads)), state, config.lr)
        val_acc = accuracy(spec, params, split.val, val_masks)
        if val_acc > best_acc:
            best_acc, best_epoch, best_params = val_acc, epoch, copy_params(params)
            stale = 0
        else:
            stale += 1
            if stale > config.patience:
                break

    test_acc = None
    if evaluate_test:
        test = split.test()
        test_acc = accuracy(spec, best_params, test, _masks(test, spec, cache))
    result = TrialResult(
        trial_seed=seed,
        best_val_epoch=best_epoch,
        val_accuracy=best_acc,
        test_accuracy=test_acc,
        epochs_run=epoch + 1,
        wall_time=round(time.perf_counter() - start, 3) if timing else None,
    )
    return (result, best_params) if return_params else result


def confidence_interval(values, level: float = 0.95) -> tuple[float, float]:
    """Mean and normal-approximation half-width ``z * stderr``."""
    x = np.asarray(values, dtype=np.float64)
    if len(x) < 2:
        raise SizeError(f"confidence interval needs at least 2 values, got {len(x)}")
    z = 1.96 if level == 0.95 else NormalDist().inv_cdf(0.5 + level / 2)
    stderr = x.std(ddof=1) / math.sqrt(len(x))
    return float(x.mean()), float(z * stderr)


def run_trials(config: TrainConfig, model_spec: ModelSpec, dataset, trials: int | None = None,
               cache: dict | None = None, timing: bool = False, on_result=None) -> TrialSummary:
    """Independent trials with seeds ``config.seed + i``."""
    trials = config.trials if trials is None else trials
    if trials < 2:
        raise SizeError(f"need at least 2 trials for a confidence interval, got {trials}")
    cache = {} if cache is None else cache
    results = []
    for i in range(trials):
        r = train_one(config, model_spec, dataset, config.seed + i, cache=cache, timing=timing)
        results.append(r)
        if on_result is not None:
            on_result(r)
    mean, half = confidence_interval([r.test_accuracy for r in results])
    return TrialSummary(mean, half, tuple(results))


@dataclass
class GridResult:
    best: tuple[int, int, str]
    rows: list[dict] = field(default_factory=list)


def grid_search(search: SearchSpace, config: TrainConfig, dataset, model_spec: ModelSpec,
                cache: dict | None = None, split: DataSplit | None = None) -> GridResult:
    """Exhaustive sweep ranked by validation accuracy; the test split is never read.

    Ties prefer smaller ``p_high``, then smaller ``k``, then centrality order.
    """
    cache = {} if cache is None else cache
    split = DataSplit.from_dataset(dataset, config.seed) if split is None else split
    rows = []
    for p_high, k, kind in search.points():
        spec = replace(model_spec, p_high=p_high, k=k, centrality=CentralityKind.parse(kind).value)
        r = train_one(config, spec, dataset, config.seed, split=split, evaluate_test=False, cache=cache)
        rows.append({"p_high": p_high, "k": k, "centrality": spec.centrality,
                     "val_accuracy": r.val_accuracy, "best_val_epoch": r.best_val_epoch})
    best = min(rows, key=lambda r: (-r["val_accuracy"], r["p_high"], r["k"],
                                     KIND_ORDER[CentralityKind.parse(r["centrality"])]))
    return GridResult((best["p_high"], best["k"], best["centrality"]), rows)
