"""
Training a tiny codec end to end
================================

A two-stage model with 32 channels per latent token sends a 32x32 image as
1024 complex symbols, a channel bandwidth ratio of 1/3. Phase 1 trains the
backbone with the ModNets switched off; phase 2 re-initializes the ModNets and
fine-tunes everything with SNR drawn uniformly from 1 to 13 dB for every batch.

The data are 32x32 tiles of the photographs shipped with scikit-image, stored
in the CIFAR-10 binary layout. A few epochs on one CPU core take a couple of
minutes; raise EPOCHS for a smoother curve.
"""

import tempfile

import torch

from witt.codec import WITT, cbr, preset
from witt.data import read_cifar
from witt.report import line_plot
from witt.surrogate import write_surrogate
from witt.training import TrainConfig, evaluate, train_phase

EPOCHS = 3
torch.set_num_threads(1)

with tempfile.TemporaryDirectory() as tmp:
    train_bin, test_bin = write_surrogate(tmp, n_train=2000, n_test=200)
    train, test = read_cifar(train_bin), read_cifar(test_bin)

model = WITT(preset("tiny"), seed=0)
print("CBR:", cbr(model.config), " parameters:", sum(p.numel() for p in model.parameters()))
grid = [1.0, 4.0, 7.0, 10.0, 13.0]
print("untrained PSNR at 10 dB: %.2f" % evaluate(model, test, [10.0], repetitions=1)[0].psnr_db)

for phase in (1, 2):
    result = train_phase(model, train, TrainConfig(phase=phase, learning_rate=1e-3, batch_size=32, epochs=EPOCHS))
    print(f"phase {phase} epoch losses:", [round(v, 5) for v in result.epoch_losses])
    records = evaluate(model, test, grid, repetitions=2)
    print(f"phase {phase} PSNR:", " ".join(f"{r.snr_db:g}dB={r.psnr_db:.2f}" for r in records))

line_plot({"tiny, CBR 1/3": [(r.snr_db, r.psnr_db) for r in records]}, "tiny_training.svg",
          title="PSNR versus SNR after two-phase training", xlabel="SNR (dB)", ylabel="PSNR (dB)")
print("wrote tiny_training.svg")
