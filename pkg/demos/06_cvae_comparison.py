"""Train both CVAE baselines and compare per-category reconstruction errors
against the latent-transform model in one table.

The traditional CVAE conditions on the augmentation class it reconstructs;
the augmentation-invariant variant trains every (source, target) class
combination so its latent must drop augmentation information.  Short
schedules on a 2,000-image subset keep this demo to a few minutes; the
resulting table shows the same ordering the full run produces.  Needs demo
02's checkpoint.

    python demos/06_cvae_comparison.py
"""

import os

from lavae import (ImageSet, build_augmented_dataset, build_mse_table,
                   load_checkpoint, load_idx_images, train_cvae)
from lavae.augmentations import make_pair
from lavae.training import Schedule

OUT = "out/demo06"
os.makedirs(OUT, exist_ok=True)

SUBSET = 2000
SCHEDULE = Schedule(stage1_epochs=4, stage2_epochs=0, stage3_epochs=0)

train = load_idx_images("data/train-images-idx3-ubyte.gz")
test = load_idx_images("data/t10k-images-idx3-ubyte.gz")
pair = make_pair("flips")
data = build_augmented_dataset(ImageSet(train.pixels[:SUBSET]), pair)
test_data = build_augmented_dataset(ImageSet(test.pixels[:2000]), pair)

print("training traditional CVAE...")
trad = train_cvae(data, "traditional", SCHEDULE, seed=0)
print("training augmentation-invariant CVAE...")
auginv = train_cvae(data, "aug_invariant", SCHEDULE, seed=0)

models = {"lavae": load_checkpoint("out/demo02/flips_small.ckpt"),
          "cvae_trad": trad, "cvae_auginv": auginv}
table = build_mse_table(models, test_data)
table.write_tsv(f"{OUT}/table.tsv")

print(f"\n{'model':<14}{'orig':>8}{'aug1':>8}{'aug2':>8}{'comp':>8}{'total':>9}")
for name, row in table.rows.items():
    print(f"{name:<14}" + "".join(f"{v:>8.1f}" for v in row[:4]) + f"{row[4]:>9.1f}")
print(f"\nwrote {OUT}/table.tsv")
