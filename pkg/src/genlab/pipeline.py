"""
Model library and the end-to-end calibration experiment.

Library layout::

    <root>/index.json
    <root>/entries/<id>/meta.json
    <root>/entries/<id>/dataset_<k>.bin (+ .meta.json sidecars)
    <root>/entries/<id>/validation.bin
    <root>/entries/<id>/model.bin

An entry is keyed by the base scenario, randomization ranges and seed it was
generated from, so regenerating the same library lands on the same id.
"""
from __future__ import annotations

import contextlib
import dataclasses
import datetime as _dt
import fcntl
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .channel import (FIBER_RANGES, Dataset, ParameterRanges, ScenarioConfig, build_randomized_library,
                      derive_seeds, generate_dataset, sample_scenario)
from .equalizer.model import DESK_PROFILE, PAPER_PROFILE, EqualizerHyper, EqualizerModel, init_model
from .equalizer.training import (EpochRecord, LearningCurve, TrainConfig, evaluate, finetune,
                                 pretrain, train_scratch)
from .rxdsp import cross_correlation, mi_lower_bound

log = logging.getLogger(__name__)

ARM_NO_NN = "w/o NN"
ARM_SNN = "SNN"
ARM_SCRATCH = "TNN w/o TL"
LEAKAGE_LIMIT = 0.03
NEAR_THRESHOLD = 1.5


class LeakageError(RuntimeError):
    """Train and test targets are too correlated to give an honest test score."""


def tl_arm_name(fraction: float) -> str:
    return f"TNN TL {fraction * 100:g}%"


def arm_slug(name: str) -> str:
    return name.replace("/", "_").replace("%", "").replace(" ", "_")


@dataclass
class LibraryEntry:
    id: str
    scenario: ScenarioConfig
    ranges: ParameterRanges
    seed: int
    dataset_paths: list[str] = field(default_factory=list)
    validation_path: str | None = None
    model_checkpoint_path: str | None = None
    created_at: str = ""
    hashes: dict[str, str] = field(default_factory=dict)
    pretrain_provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scenario"] = self.scenario.to_dict()
        d["ranges"] = self.ranges.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LibraryEntry":
        d = dict(d)
        d["scenario"] = ScenarioConfig.from_dict(d["scenario"])
        d["ranges"] = ParameterRanges.from_dict(d["ranges"])
        return cls(**d)


def entry_id(base: ScenarioConfig, ranges: ParameterRanges, seed: int) -> str:
    key = json.dumps({"scenario": base.to_dict(), "ranges": ranges.to_dict(), "seed": seed},
                     sort_keys=True)
    return io.sha256(key.encode())[:16]


class ModelLibrary:
    """Persistent catalog of randomized datasets and pre-trained models."""

    def __init__(self, root):
        self.root = Path(root)

    @property
    def index_path(self) -> Path:
        return self.root / "index.json"

    def entry_dir(self, eid: str) -> Path:
        return self.root / "entries" / eid

    @contextlib.contextmanager
    def _locked(self):
        self.root.mkdir(parents=True, exist_ok=True)
        with open(self.root / ".lock", "w") as fh:
            fcntl.flock(fh, fcntl.LOCK_EX)
            try:
                yield
            finally:
                fcntl.flock(fh, fcntl.LOCK_UN)

    def _read_index(self) -> dict:
        if not self.index_path.exists():
            return {"format_version": io.FORMAT_VERSION, "entries": {}}
        return json.loads(self.index_path.read_text())

    def ids(self) -> list[str]:
        return sorted(self._read_index()["entries"])

    def entries(self) -> list[LibraryEntry]:
        return [LibraryEntry.from_dict(e) for _, e in sorted(self._read_index()["entries"].items())]

    def store_entry(self, entry: LibraryEntry, datasets: list[Dataset] | None = None,
                    validation: Dataset | None = None, model: EqualizerModel | None = None,
                    provenance: dict | None = None) -> LibraryEntry:
        """Write any supplied payloads into the entry directory, then publish
        the entry in the index. Every file goes through temp-file + rename."""
        d = self.entry_dir(entry.id)
        rel = lambda p: str(p.relative_to(self.root))  # noqa: E731
        if datasets is not None:
            entry.dataset_paths = []
            for k, ds in enumerate(datasets):
                path = d / f"dataset_{k}.bin"
                io.save_dataset(ds, path)
                entry.dataset_paths.append(rel(path))
        if validation is not None:
            path = d / "validation.bin"
            io.save_dataset(validation, path)
            entry.validation_path = rel(path)
        if model is not None:
            path = d / "model.bin"
            io.save_checkpoint(model, path, provenance)
            entry.model_checkpoint_path = rel(path)
            entry.pretrain_provenance = provenance or {}
        files = list(entry.dataset_paths)
        files += [p for p in (entry.validation_path, entry.model_checkpoint_path) if p]
        entry.hashes = {p: io.sha256((self.root / p).read_bytes()) for p in files}
        if not entry.created_at:
            entry.created_at = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        io.atomic_write(d / "meta.json", json.dumps(entry.to_dict(), indent=1, sort_keys=True).encode())
        with self._locked():
            index = self._read_index()
            index["entries"][entry.id] = entry.to_dict()
            io.atomic_write(self.index_path, json.dumps(index, indent=1, sort_keys=True).encode())
        return entry

    def verify(self, entry: LibraryEntry) -> None:
        for rel, digest in entry.hashes.items():
            path = self.root / rel
            if not path.exists():
                raise io.CorruptionError(f"entry {entry.id}: missing {rel}")
            if io.sha256(path.read_bytes()) != digest:
                raise io.CorruptionError(f"entry {entry.id}: {rel} does not match its recorded hash")

    def load_entry(self, eid: str) -> LibraryEntry:
        raw = self._read_index()["entries"].get(eid)
        if raw is None:
            raise KeyError(f"no library entry {eid!r} under {self.root}")
        entry = LibraryEntry.from_dict(raw)
        self.verify(entry)
        return entry

    def load_datasets(self, entry: LibraryEntry) -> list[Dataset]:
        return [io.load_dataset(self.root / p) for p in entry.dataset_paths]

    def load_validation(self, entry: LibraryEntry) -> Dataset | None:
        return io.load_dataset(self.root / entry.validation_path) if entry.validation_path else None

    def load_model(self, entry: LibraryEntry) -> EqualizerModel:
        if not entry.model_checkpoint_path:
            raise KeyError(f"entry {entry.id} has no pre-trained model")
        return io.load_checkpoint(self.root / entry.model_checkpoint_path)[0]


@dataclass(frozen=True)
class LookupResult:
    kind: str                       # "exact", "near" or "none"
    distance: float = math.inf
    entry: LibraryEntry | None = None


def _structurally_compatible(a: ScenarioConfig, b: ScenarioConfig) -> bool:
    return (a.modulation == b.modulation and a.fiber_type_tag == b.fiber_type_tag
            and a.n_spans == b.n_spans and a.fiber.length_km == b.fiber.length_km
            and a.symbol_rate == b.symbol_rate)


def range_distance(query: ScenarioConfig, ranges: ParameterRanges) -> float:
    """Largest deviation of (alpha, D, gamma) from the range centres, in
    units of range half-width; <= 1 means inside every range."""
    worst = 0.0
    for name, (lo, hi) in ranges.items():
        value = getattr(query.fiber, name)
        half = (hi - lo) / 2
        dev = abs(value - (lo + hi) / 2)
        if half == 0:
            worst = max(worst, 0.0 if dev == 0 else math.inf)
        else:
            worst = max(worst, dev / half)
    return worst


def library_lookup(library: ModelLibrary | list[LibraryEntry], query: ScenarioConfig,
                   threshold: float = NEAR_THRESHOLD, verify: bool = True) -> LookupResult:
    """Closest compatible library entry for ``query``. Entries that fail
    hash verification are skipped with a warning."""
    entries = library.entries() if isinstance(library, ModelLibrary) else list(library)
    best = LookupResult("none")
    for entry in entries:
        if verify and isinstance(library, ModelLibrary):
            try:
                library.verify(entry)
            except io.CorruptionError as exc:
                log.warning("skipping corrupted library entry: %s", exc)
                continue
        if not _structurally_compatible(entry.scenario, query):
            continue
        dist = range_distance(query, entry.ranges)
        better = dist < best.distance or (
            dist == best.distance and best.entry is not None
            and entry.model_checkpoint_path and not best.entry.model_checkpoint_path)
        if better:
            best = LookupResult("exact" if dist <= 1 else "near", dist, entry)
    if best.distance > threshold:
        return LookupResult("none", best.distance, None)
    return best


@dataclass(frozen=True)
class CalibrationConfig:
    """Everything :func:`calibrate` needs besides the target data."""

    hyper: EqualizerHyper = DESK_PROFILE
    train: TrainConfig = TrainConfig(max_epochs=200)
    pretrain: TrainConfig = TrainConfig(max_epochs=800, eval_interval=10)
    per_epoch_draw: int = 2**12
    n_datasets: int = 5
    n_symbols: int = 2**13
    validation_symbols: int = 2**13
    ranges: ParameterRanges | None = None
    seed: int = 0
    near_threshold: float = NEAR_THRESHOLD
    jobs: int = 1

    def replace(self, **changes) -> "CalibrationConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if self.ranges is not None:
            d["ranges"] = self.ranges.to_dict()
        return d


DESK_CALIBRATION = CalibrationConfig()
PAPER_CALIBRATION = CalibrationConfig(hyper=PAPER_PROFILE, pretrain=TrainConfig(max_epochs=1000),
                                      per_epoch_draw=2**18, n_datasets=20, n_symbols=2**19,
                                      validation_symbols=2**18)


def library_base(target: ScenarioConfig, ranges: ParameterRanges) -> ScenarioConfig:
    """Nominal simulation scenario for a target link: range-centre fiber, no
    transceiver noise, same format, rate, power and span layout."""
    centre = {k: (lo + hi) / 2 for k, (lo, hi) in ranges.items()}
    return target.replace(fiber=dataclasses.replace(target.fiber, **centre),
                          transceiver_snr_db=None, seed=0)


def build_and_pretrain(library: ModelLibrary, target: ScenarioConfig,
                       config: CalibrationConfig) -> tuple[LibraryEntry, LearningCurve]:
    """No usable entry: synthesize a randomized library for ``target``,
    pre-train on it and store both."""
    ranges = config.ranges or FIBER_RANGES[target.fiber_type_tag]
    base = library_base(target, ranges)
    eid = entry_id(base, ranges, config.seed)
    existing = library._read_index()["entries"].get(eid)
    if existing:
        entry = library.load_entry(eid)
        datasets = library.load_datasets(entry)
        validation = library.load_validation(entry)
    else:
        entry = LibraryEntry(eid, base, ranges, config.seed)
        log.info("generating %d randomized datasets of %d symbols", config.n_datasets,
                 config.n_symbols)
        datasets = build_randomized_library(base, ranges, config.n_datasets, config.n_symbols,
                                            derive_seeds(config.seed, 2)[0], jobs=config.jobs)
        validation = None
        library.store_entry(entry, datasets=datasets)
    return pretrain_entry(library, entry, config, datasets, validation)


def pretrain_entry(library: ModelLibrary, entry: LibraryEntry, config: CalibrationConfig,
                   datasets: list[Dataset] | None = None,
                   validation: Dataset | None = None) -> tuple[LibraryEntry, LearningCurve]:
    datasets = datasets if datasets is not None else library.load_datasets(entry)
    validation = validation if validation is not None else library.load_validation(entry)
    if validation is None:
        # imported entries carry no held-out set; draw one the same way
        # build_and_pretrain would have
        val_seed = derive_seeds(entry.seed, 2)[1]
        scen = sample_scenario(entry.scenario, entry.ranges, np.random.default_rng(val_seed))
        validation = generate_dataset(scen, config.validation_symbols, val_seed)
        entry = library.store_entry(entry, validation=validation)
    init_seed, = derive_seeds(config.seed + 1, 1)
    model = init_model(config.hyper, init_seed)
    log.info("pre-training on %d datasets for %d epochs", len(datasets), config.pretrain.max_epochs)
    curve = pretrain(model, datasets, config.pretrain, config.per_epoch_draw, validation)
    best = curve.best_model
    prov = dict(curve.provenance, best_epoch=curve.best_epoch, init_seed=init_seed,
                validation=validation.content_hash if validation else None)
    entry = library.store_entry(entry, model=best, provenance=prov)
    return entry, curve


@dataclass
class ExperimentReport:
    arms: dict[str, LearningCurve | float]
    target: ScenarioConfig
    test_hash: str
    config: dict
    provenance: dict = field(default_factory=dict)
    models: dict[str, EqualizerModel] = field(default_factory=dict)

    def mi(self, arm: str) -> float:
        v = self.arms[arm]
        return v.best_mi if isinstance(v, LearningCurve) else float(v)

    def summary(self) -> dict:
        out = {}
        for name, v in self.arms.items():
            if isinstance(v, LearningCurve):
                out[name] = {"best_mi": v.best_mi, "best_epoch": v.best_epoch,
                             "final_mi": float(v.test_mi[-1]), "epochs": len(v.records),
                             "test_dataset": v.provenance.get("test_dataset")}
            else:
                out[name] = {"mi": float(v), "test_dataset": self.test_hash}
        return out

    def export(self, out_dir) -> list[Path]:
        """One ``epoch,train_mse,test_mi`` CSV per arm, the best checkpoint of
        every trained arm and a ``report.json`` summary."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name, v in self.arms.items():
            curve = v if isinstance(v, LearningCurve) else LearningCurve(
                [EpochRecord(0, math.nan, float(v), math.nan)])
            path = out / f"{arm_slug(name)}.csv"
            curve.to_csv(path)
            written.append(path)
        for name, model in self.models.items():
            path = out / f"{arm_slug(name)}.bin"
            io.save_checkpoint(model, path, {"arm": name, "test_dataset": self.test_hash})
            written.append(path)
        report = {"target": self.target.to_dict(), "test_dataset": self.test_hash,
                  "arms": self.summary(), "config": self.config, "provenance": self.provenance}
        path = out / "report.json"
        path.write_text(json.dumps(report, indent=1, sort_keys=True, default=str))
        written.append(path)
        return written


def no_nn_mi(test: Dataset, n_taps: int) -> float:
    """MI of the linearly equalized H symbols at the positions the
    equalizer arms are scored on."""
    half = n_taps // 2
    sl = slice(half, test.n_symbols - half)
    return mi_lower_bound(test.rx.h[sl], test.tx.h[sl], test.constellation)


def calibrate(library: ModelLibrary, target_train: Dataset, target_test: Dataset,
              fractions=(1.0, 0.1, 0.01), config: CalibrationConfig = DESK_CALIBRATION,
              keep_models: bool = True) -> ExperimentReport:
    """Run every comparison arm against one target test set.

    Looks the target up in ``library``; if nothing close enough exists (or
    the closest entry has no model yet) a randomized library is generated
    and pre-trained first, and stored for reuse.
    """
    leak = cross_correlation(target_train.rx, target_test.rx)
    if leak >= LEAKAGE_LIMIT:
        raise LeakageError(f"train/test cross-correlation {leak:.4f} >= {LEAKAGE_LIMIT}")

    found = library_lookup(library, target_train.scenario, config.near_threshold)
    pretrain_runs = 0
    if found.entry is not None and found.entry.model_checkpoint_path:
        entry = found.entry
        log.info("library %s match %s (distance %.3f): loading pre-trained model",
                 found.kind, entry.id, found.distance)
        source = library.load_model(entry)
    elif found.entry is not None:
        log.info("library %s match %s has no model: pre-training", found.kind, found.entry.id)
        entry, _ = pretrain_entry(library, found.entry, config)
        source = library.load_model(entry)
        pretrain_runs = 1
    else:
        log.info("no library match for target (distance %.3f): building a new one", found.distance)
        entry, _ = build_and_pretrain(library, target_train.scenario, config)
        source = library.load_model(entry)
        pretrain_runs = 1

    n_taps = config.hyper.n_taps
    if source.hyper != config.hyper:
        log.info("library model uses %s; overriding configured hyperparameters", source.hyper)
        n_taps = source.hyper.n_taps
    arms: dict[str, LearningCurve | float] = {ARM_NO_NN: no_nn_mi(target_test, n_taps)}
    models: dict[str, EqualizerModel] = {}
    arms[ARM_SNN] = evaluate(source, target_test)[1]

    scratch_seed, = derive_seeds(config.seed + 2, 1)
    scratch = init_model(source.hyper, scratch_seed)
    curve = train_scratch(scratch, target_train, config.train.replace(data_fraction=1.0), target_test)
    arms[ARM_SCRATCH] = curve
    models[ARM_SCRATCH] = curve.best_model

    for fraction in fractions:
        name = tl_arm_name(fraction)
        model = source.copy()
        curve = finetune(model, target_train, config.train.replace(data_fraction=fraction),
                         target_test)
        arms[name] = curve
        models[name] = curve.best_model

    provenance = {"library_entry": entry.id, "lookup": found.kind,
                  "lookup_distance": found.distance, "pretrain_runs": pretrain_runs,
                  "source_model": source.digest(), "train_dataset": target_train.content_hash,
                  "train_test_xcorr": leak}
    return ExperimentReport(arms, target_train.scenario, target_test.content_hash,
                            config.to_dict(), provenance, models if keep_models else {})
