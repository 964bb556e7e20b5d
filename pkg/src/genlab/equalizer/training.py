"""
Windowing, training loops and evaluation for the equalizer.

All loops are deterministic given ``TrainConfig.seed``: minibatch order,
dataset rotation and window draws come from one seeded generator.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..channel import Dataset
from ..rxdsp import mi_lower_bound
from ..signal import Constellation
from .model import EqualizerModel, backward, forward
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 1000
    max_epochs: int = 200
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    data_fraction: float = 1.0
    seed: int = 0
    eval_each_epoch: bool = True
    eval_interval: int = 1          # with eval_each_epoch, evaluate every this many epochs
    precision: str = "float32"      # arithmetic used for training steps

    def __post_init__(self):
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be >= 1")
        if not 0 < self.data_fraction <= 1:
            raise ValueError(f"data_fraction must be in (0, 1], got {self.data_fraction}")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_mse: float
    test_mi: float
    test_mse: float


@dataclass
class LearningCurve:
    records: list[EpochRecord] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    best_model: EqualizerModel | None = None
    best_epoch: int | None = None

    def append(self, rec: EpochRecord) -> None:
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ValueError("epoch indices must increase")
        self.records.append(rec)

    @property
    def epochs(self) -> np.ndarray:
        return np.array([r.epoch for r in self.records])

    @property
    def test_mi(self) -> np.ndarray:
        return np.array([r.test_mi for r in self.records])

    @property
    def best_mi(self) -> float:
        return float(np.nanmax(self.test_mi))

    def first_epoch_reaching(self, level: float) -> int | None:
        for r in self.records:
            if r.test_mi >= level:
                return r.epoch
        return None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_mse", "test_mi"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_mse), repr(r.test_mi)])


def window_features(dataset: Dataset, polarization: str = "h") -> tuple[np.ndarray, np.ndarray]:
    rx, tx = dataset.rx, dataset.tx
    if polarization == "h":
        own, other, target = rx.h, rx.v, tx.h
    elif polarization == "v":
        own, other, target = rx.v, rx.h, tx.v
    else:
        raise ValueError("polarization must be 'h' or 'v'")
    feats = np.stack([own.real, own.imag, other.real, other.imag], axis=1)
    return feats, np.stack([target.real, target.imag], axis=1)


def windowize(dataset: Dataset, n_taps: int = 25,
              polarization: str = "h") -> tuple[np.ndarray, np.ndarray]:
    """Sliding windows of received symbols and the transmitted central symbol.

    Returns ``inputs`` [N - n_taps + 1, n_taps, 4] (a read-only view) and
    ``targets`` [N - n_taps + 1, 2]. Polarization ``"v"`` swaps the feature
    pairs so one model layout serves both polarizations.
    """
    if dataset.n_symbols < n_taps:
        raise ValueError(f"dataset has {dataset.n_symbols} symbols, fewer than {n_taps} taps")
    feats, targets = window_features(dataset, polarization)
    inputs = sliding_window_view(feats, n_taps, axis=0).transpose(0, 2, 1)
    half = n_taps // 2
    return inputs, targets[half:len(targets) - half]


def _as_complex(pairs: np.ndarray) -> np.ndarray:
    return pairs[:, 0] + 1j * pairs[:, 1]


def predict(model: EqualizerModel, inputs: np.ndarray, batch: int = 8192) -> np.ndarray:
    return np.concatenate([forward(model, inputs[i:i + batch]) for i in range(0, len(inputs), batch)])


def evaluate_windows(model: EqualizerModel, inputs: np.ndarray, targets: np.ndarray,
                     constellation: Constellation) -> tuple[float, float]:
    pred = predict(model, inputs)
    mse = float(np.mean((pred - targets) ** 2))
    mi = mi_lower_bound(_as_complex(pred), _as_complex(targets), constellation)
    return mse, mi


def evaluate(model: EqualizerModel, test: Dataset, polarization: str = "h") -> tuple[float, float]:
    """Test MSE and MI lower bound (bits/symbol). Does not modify ``model``."""
    x, t = windowize(test, model.hyper.n_taps, polarization)
    return evaluate_windows(model, x, t, test.constellation)


def _train_epoch(model, state, inputs, targets, order, config: TrainConfig) -> float:
    total = 0.0
    batch = min(config.batch_size, len(order))
    for start in range(0, len(order), batch):
        idx = order[start:start + batch]
        loss, grads = backward(model, inputs[idx], targets[idx], skip_frozen=True)
        adam_step(state, model, grads, config.learning_rate, config.adam_beta1,
                  config.adam_beta2, config.adam_eps)
        total += loss * len(idx)
    return total / len(order)


class _Tracker:
    """Per-epoch evaluation and best-snapshot bookkeeping."""

    def __init__(self, model, test: Dataset | None, config: TrainConfig, curve: LearningCurve,
                 polarization: str):
        self.model, self.curve, self.config = model, curve, config
        self.best = -np.inf
        self.test = None
        if test is not None:
            x, t = windowize(test, model.hyper.n_taps, polarization)
            self.test = (x, t, test.constellation)

    def record(self, epoch: int, train_mse: float) -> None:
        test_mse = test_mi = math.nan
        evaluate_now = self.test is not None and (
            (self.config.eval_each_epoch and epoch % self.config.eval_interval == 0)
            or epoch == self.config.max_epochs)
        if evaluate_now:
            test_mse, test_mi = evaluate_windows(self.model, *self.test)
        self.curve.append(EpochRecord(epoch, train_mse, test_mi, test_mse))
        if self.test is None:
            self.curve.best_model, self.curve.best_epoch = self.model.copy(), epoch
        elif evaluate_now and test_mi > self.best:
            self.best = test_mi
            self.curve.best_model, self.curve.best_epoch = self.model.copy(), epoch
        log.debug("epoch %d train_mse=%.5g test_mi=%.4f", epoch, train_mse, test_mi)


def _provenance(model, config, datasets, kind, **extra) -> dict:
    return {"kind": kind, "initial_model": model.digest(), "config": config.to_dict(),
            "datasets": [d.content_hash for d in datasets], **extra}


def pretrain(model: EqualizerModel, library: list[Dataset], config: TrainConfig,
             per_epoch_draw: int = 2**12, validation: Dataset | None = None,
             polarization: str = "h") -> LearningCurve:
    """Domain-randomized pre-training.

    Every epoch picks one library dataset at random and trains on
    ``per_epoch_draw`` of its windows drawn without replacement. With a
    ``validation`` set, the best-MI snapshot is kept in ``curve.best_model``.
    """
    if not library:
        raise ValueError("pre-training library is empty")
    rng = np.random.default_rng(config.seed)
    windows = [windowize(d, model.hyper.n_taps, polarization) for d in library]
    model.cast_(np.dtype(config.precision))
    model.unfreeze()
    state = AdamState.for_model(model)
    curve = LearningCurve(provenance=_provenance(model, config, library, "pretrain",
                                                 per_epoch_draw=per_epoch_draw))
    tracker = _Tracker(model, validation, config, curve, polarization)
    for epoch in range(1, config.max_epochs + 1):
        inputs, targets = windows[rng.integers(len(windows))]
        order = rng.permutation(len(inputs))[:per_epoch_draw]
        train_mse = _train_epoch(model, state, inputs, targets, order, config)
        tracker.record(epoch, train_mse)
    curve.provenance["final_model"] = model.digest()
    return curve


def _fit_target(model, target, config, test, polarization, kind) -> LearningCurve:
    rng = np.random.default_rng(config.seed)
    inputs, targets = windowize(target, model.hyper.n_taps, polarization)
    n_train = math.ceil(config.data_fraction * len(inputs))
    model.cast_(np.dtype(config.precision))
    inputs, targets = inputs[:n_train], targets[:n_train]
    state = AdamState.for_model(model)
    extra = {"n_train_windows": n_train}
    if test is not None:
        extra["test_dataset"] = test.content_hash
    curve = LearningCurve(provenance=_provenance(model, config, [target], kind, **extra))
    tracker = _Tracker(model, test, config, curve, polarization)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n_train)
        train_mse = _train_epoch(model, state, inputs, targets, order, config)
        tracker.record(epoch, train_mse)
    curve.provenance["final_model"] = model.digest()
    return curve


def finetune(model: EqualizerModel, target: Dataset, config: TrainConfig,
             test: Dataset | None = None, polarization: str = "h") -> LearningCurve:
    """Transfer learning: freeze the convolution, retrain LSTM and dense
    layers on the first ``data_fraction`` of the target windows.

    If the fraction leaves fewer windows than ``batch_size``, each epoch is a
    single batch of all of them.
    """
    model.freeze("conv")
    model.unfreeze("lstm", "dense")
    return _fit_target(model, target, config, test, polarization, "finetune")


def train_scratch(model_init: EqualizerModel, target: Dataset, config: TrainConfig,
                  test: Dataset | None = None, polarization: str = "h") -> LearningCurve:
    """Baseline: every layer trainable, otherwise the same loop as :func:`finetune`."""
    model_init.unfreeze()
    return _fit_target(model_init, target, config, test, polarization, "scratch")
