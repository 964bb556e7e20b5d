"""
Calibrating to a new link with a model library
==============================================

The full workflow: look the target link up in the library, build and
pre-train on randomized synthetic data if nothing suitable is stored, then
compare against the baselines:

* no equalizer,
* the pre-trained model used as is (SNN),
* a model trained only on target data,
* the pre-trained model fine-tuned with its conv layer frozen, on 100%, 10%
  and 1% of the target data.

Sizes are cut down so the script runs in a few minutes. A second call finds the stored model and skips
pre-training.
"""
import tempfile
from pathlib import Path

from genlab.channel import DESK_SIM, generate_dataset, preset, reality_gap_scenario
from genlab.equalizer import EqualizerHyper, TrainConfig
from genlab.pipeline import CalibrationConfig, ModelLibrary, calibrate

target = reality_gap_scenario(preset("B").replace(sim=DESK_SIM))
train = generate_dataset(target, 2**13, seed=1001)
test = generate_dataset(target, 2**13, seed=2002)

config = CalibrationConfig(
    hyper=EqualizerHyper(n_taps=15, n_filters=16, kernel_size=5, hidden_units=24),
    train=TrainConfig(max_epochs=20, batch_size=250, learning_rate=3e-3),
    pretrain=TrainConfig(max_epochs=150, batch_size=250, learning_rate=3e-3, eval_interval=10),
    per_epoch_draw=2**11, n_datasets=3, n_symbols=2**12, validation_symbols=2**12, seed=0)

with tempfile.TemporaryDirectory() as root:
    library = ModelLibrary(Path(root) / "library")
    report = calibrate(library, train, test, [1.0, 0.1, 0.01], config)
    print("lookup:", report.provenance["lookup"], "| pretrain runs:", report.provenance["pretrain_runs"])
    for arm in report.arms:
        print(f"{arm:>12}: best MI {report.mi(arm):.3f}")

    again = calibrate(library, train, test, [1.0], config)
    print("second call lookup:", again.provenance["lookup"],
          "| pretrain runs:", again.provenance["pretrain_runs"])

    written = report.export(Path(root) / "report")
    print("exported:", sorted(p.name for p in written))
