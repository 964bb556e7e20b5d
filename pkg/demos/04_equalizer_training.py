"""
Training the CNN+biLSTM equalizer
=================================

The equalizer reads a window of received symbols from both polarizations
and predicts the transmitted centre symbol. Here a small model is trained
from scratch on the five-span setup B link, then scored on an independent
test set. From scratch it needs tens of epochs just to match linear
compensation; demo 05 shows how pre-training removes that wait.
"""
from genlab.channel import DESK_SIM, generate_dataset, preset
from genlab.equalizer import EqualizerHyper, TrainConfig, evaluate, init_model, train_scratch
from genlab.pipeline import no_nn_mi

# small model and a coarse split step so this finishes in about a minute
scenario = preset("B").replace(sim=DESK_SIM)
train = generate_dataset(scenario, 2**13, seed=1)
test = generate_dataset(scenario, 2**13, seed=2)

hyper = EqualizerHyper(n_taps=15, n_filters=16, kernel_size=5, hidden_units=24)
model = init_model(hyper, seed=0)
print("parameters:", model.n_params)

curve = train_scratch(model, train, TrainConfig(max_epochs=60, batch_size=250, learning_rate=3e-3,
                                                  seed=0), test)
for r in curve.records[::6]:
    print(f"epoch {r.epoch:3d}  train mse {r.train_mse:.4f}  test MI {r.test_mi:.3f}")
print("best epoch", curve.best_epoch, "MI %.3f" % curve.best_mi)
print("without equalizer MI %.3f" % no_nn_mi(test, hyper.n_taps))

mse, mi = evaluate(curve.best_model, test)
print(f"best snapshot: mse={mse:.4f} mi={mi:.3f}")
# curve.to_csv("scratch.csv") gives epoch,train_mse,test_mi for plotting
