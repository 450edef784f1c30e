"""Train a small latent-augmentation model on the flips pair, end to end.

Stage 1 trains the encoder/decoder on originals + flips + composition
pooled; stage 2 freezes them and fits the two 16x16 latent transforms.
This demo uses a 2,000-image subset and short schedules so it finishes in
a few minutes on a laptop; raise SUBSET/EPOCHS toward the full settings
(60k images, 100/60 epochs) to reproduce the real experiment.

    python demos/02_train_flips.py
"""

import os

from lavae import (ImageSet, build_augmented_dataset, load_idx_images,
                   save_checkpoint, stage1_train, stage2_fit_transforms)
from lavae.augmentations import make_pair
from lavae.training import EpochLog, Schedule

OUT = "out/demo02"
os.makedirs(OUT, exist_ok=True)

SUBSET = 2000
SCHEDULE = Schedule(stage1_epochs=4, stage2_epochs=30, stage3_epochs=0)

train = load_idx_images("data/train-images-idx3-ubyte.gz")
data = build_augmented_dataset(ImageSet(train.pixels[:SUBSET]), make_pair("flips"))

print(f"stage 1: {SCHEDULE.stage1_epochs} epochs over {4 * SUBSET} pooled images")
log = EpochLog(f"{OUT}/training.log")
params = stage1_train(data, SCHEDULE, seed=0, log=log)
for stage, epoch, loss, recon, kl in log.rows:
    print(f"  epoch {epoch}: loss {loss:.2f} (recon {recon:.2f}, kl {kl:.2f})")

print(f"stage 2: fitting latent transforms for {SCHEDULE.stage2_epochs} epochs")
stage2_fit_transforms(data, params, SCHEDULE, seed=0)

save_checkpoint(params, f"{OUT}/flips_small.ckpt")
print(f"wrote {OUT}/flips_small.ckpt")
