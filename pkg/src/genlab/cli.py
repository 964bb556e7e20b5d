"""
``genlab`` command line.

Subcommands::

    genlab generate   --preset B --ranges r.json --count 20 --symbols 524288 --seed 0 --out lib/
    genlab pretrain   --library L --datasets lib/ --profile desk --epochs 800 --seed 0
    genlab calibrate  --library L --target-train t.bin --target-test e.bin --out report/
    genlab evaluate   --model m.bin --dataset e.bin

Results go to stdout (one JSON object or ``key=value`` line per result),
diagnostics to stderr. Exit codes: 0 ok, 1 runtime failure, 2 usage error.
``GENLAB_LIBRARY`` supplies the default library root.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import io
from .channel import (DESK_SIM, PAPER_SIM, FIBER_RANGES, ParameterRanges, ScenarioConfig,
                      build_randomized_library, derive_seeds, generate_dataset, preset,
                      reality_gap_scenario)
from .equalizer.training import TrainConfig, evaluate
from .pipeline import (DESK_CALIBRATION, PAPER_CALIBRATION, LibraryEntry, ModelLibrary,
                       entry_id, calibrate, pretrain_entry)

log = logging.getLogger("genlab")

SIMS = {"paper": PAPER_SIM, "desk": DESK_SIM}
CALIBRATIONS = {"paper": PAPER_CALIBRATION, "desk": DESK_CALIBRATION}
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True), flush=True)


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from exc


def _fractions(text: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not values or any(not 0 < v <= 1 for v in values):
        raise argparse.ArgumentTypeError("fractions must lie in (0, 1]")
    return values


def _library_root(args) -> ModelLibrary:
    root = args.library or os.environ.get("GENLAB_LIBRARY")
    if not root:
        raise UsageError("no library given: pass --library or set GENLAB_LIBRARY")
    return ModelLibrary(root)


def _scenario(args) -> ScenarioConfig:
    if args.scenario:
        scen = ScenarioConfig.from_dict(_read_json(args.scenario))
    else:
        scen = preset(args.preset)
    if args.sim:
        scen = scen.replace(sim=SIMS[args.sim])
    return scen


def cmd_generate(args) -> int:
    scen = _scenario(args)
    ranges = ParameterRanges.from_dict(_read_json(args.ranges)) if args.ranges else None
    out = Path(args.out)
    if args.reality_gap:
        gap_ranges = ranges or FIBER_RANGES[scen.fiber_type_tag]
        scen = reality_gap_scenario(scen, gap_ranges)
        ranges = None
    if ranges is not None:
        datasets = build_randomized_library(scen, ranges, args.count, args.symbols, args.seed,
                                            jobs=args.jobs)
    else:
        datasets = [generate_dataset(scen, args.symbols, s) for s in derive_seeds(args.seed, args.count)]
    files = []
    for k, ds in enumerate(datasets):
        path = out / f"dataset_{k}.bin"
        digest = io.save_dataset(ds, path)
        files.append(path.name)
        _emit({"path": str(path), "content_hash": digest, "seed": ds.seed,
               "n_symbols": ds.n_symbols})
    manifest = {"format_version": io.FORMAT_VERSION, "scenario": scen.to_dict(),
                "ranges": ranges.to_dict() if ranges else None, "seed": args.seed,
                "reality_gap": bool(args.reality_gap), "files": files}
    io.atomic_write(out / MANIFEST, json.dumps(manifest, indent=1, sort_keys=True).encode())
    return 0


def _import_datasets(library: ModelLibrary, directory: Path) -> LibraryEntry:
    manifest = _read_json(directory / MANIFEST)
    if manifest.get("ranges") is None:
        raise ValueError(f"{directory} holds fixed-scenario datasets, not a randomized library")
    base = ScenarioConfig.from_dict(manifest["scenario"])
    ranges = ParameterRanges.from_dict(manifest["ranges"])
    eid = entry_id(base, ranges, manifest["seed"])
    if eid in library.ids():
        return library.load_entry(eid)
    datasets = [io.load_dataset(directory / f) for f in manifest["files"]]
    entry = LibraryEntry(eid, base, ranges, manifest["seed"])
    return library.store_entry(entry, datasets=datasets)


def _calibration_config(args):
    cfg = CALIBRATIONS[args.profile]
    return cfg.replace(seed=args.seed, jobs=getattr(args, "jobs", 1),
                       pretrain=cfg.pretrain.replace(seed=args.seed))


def cmd_pretrain(args) -> int:
    library = _library_root(args)
    cfg = _calibration_config(args)
    if args.epochs is not None:
        cfg = cfg.replace(pretrain=cfg.pretrain.replace(max_epochs=args.epochs))
    if args.datasets:
        targets = [_import_datasets(library, Path(args.datasets))]
    elif args.entry:
        targets = [library.load_entry(args.entry)]
    else:
        targets = [e for e in library.entries() if not e.model_checkpoint_path]
    if not targets:
        raise ValueError(f"nothing to pre-train under {library.root}")
    for entry in targets:
        entry, curve = pretrain_entry(library, entry, cfg)
        if args.curve_dir:
            Path(args.curve_dir).mkdir(parents=True, exist_ok=True)
            curve.to_csv(Path(args.curve_dir) / f"pretrain_{entry.id}.csv")
        _emit({"entry": entry.id, "model": str(library.root / entry.model_checkpoint_path),
               "best_epoch": curve.best_epoch, "best_validation_mi": curve.best_mi})
    return 0


def cmd_calibrate(args) -> int:
    if args.fast_nondeterministic:
        log.warning("--fast-nondeterministic: training already runs single-threaded; "
                    "results stay deterministic")
    library = _library_root(args)
    cfg = _calibration_config(args)
    cfg = cfg.replace(train=TrainConfig(max_epochs=args.epochs, seed=args.seed))
    train = io.load_dataset(args.target_train)
    test = io.load_dataset(args.target_test)
    report = calibrate(library, train, test, args.fractions, cfg)
    written = report.export(args.out)
    _emit({"report": str(Path(args.out) / "report.json"), "files": [str(p) for p in written],
           "arms": {k: v["best_mi"] if "best_mi" in v else v["mi"]
                    for k, v in report.summary().items()},
           "pretrain_runs": report.provenance["pretrain_runs"]})
    return 0


def cmd_evaluate(args) -> int:
    model, _ = io.load_checkpoint(args.model)
    dataset = io.load_dataset(args.dataset)
    mse, mi = evaluate(model, dataset, args.polarization)
    print(f"mse={mse:.10g} mi={mi:.10g}", flush=True)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genlab", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate datasets")
    src = g.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", help="scenario JSON file")
    src.add_argument("--preset", choices=["A", "B", "C"])
    g.add_argument("--ranges", help="randomization ranges JSON; omit for a fixed scenario")
    g.add_argument("--reality-gap", action="store_true",
                   help="shift the fiber just outside the ranges and add transceiver noise")
    g.add_argument("--sim", choices=sorted(SIMS), help="override the simulation resolution")
    g.add_argument("--count", type=int, default=20)
    g.add_argument("--symbols", type=int, default=2**19)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--jobs", type=int, default=1)
    g.set_defaults(func=cmd_generate)

    p = sub.add_parser("pretrain", help="pre-train on a randomized library")
    p.add_argument("--library")
    p.add_argument("--datasets", help="output directory of `generate --ranges` to import")
    p.add_argument("--entry", help="library entry id")
    p.add_argument("--profile", choices=sorted(CALIBRATIONS), default="desk")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--curve-dir", help="write the pre-training validation curve here")
    p.set_defaults(func=cmd_pretrain)

    c = sub.add_parser("calibrate", help="run every comparison arm on a target link")
    c.add_argument("--library")
    c.add_argument("--target-train", required=True)
    c.add_argument("--target-test", required=True)
    c.add_argument("--fractions", type=_fractions, default=[1.0, 0.1, 0.01])
    c.add_argument("--epochs", type=int, default=200)
    c.add_argument("--profile", choices=sorted(CALIBRATIONS), default="desk")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--jobs", type=int, default=1, help="processes for library generation")
    c.add_argument("--out", default="report")
    c.add_argument("--fast-nondeterministic", action="store_true")
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--polarization", choices=["h", "v"], default="h")
    e.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)      # exits 2 on usage errors
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"genlab: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"genlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
