"""Transfer a trained latent space to new augmentation pairs and build the
initial-pair vs transfer-pair error heatmap.

For each initial pair a model is trained (stages 1+2); for each target
pair a fresh decoder head is trained on the frozen latents (stage 3) and
scored across all four categories.  Entries lower than the target pair's
directly-trained baseline are flagged: those are the transfers that beat
training on the pair from scratch.  Reduced schedule; expect ~10 minutes.

    python demos/07_transfer_heatmap.py
"""

import os

from lavae import ImageSet, build_augmented_dataset, load_idx_images, transfer_heatmap
from lavae.augmentations import make_pair
from lavae.evaluation import lavae_category_errors
from lavae.training import Schedule, stage1_train, stage2_fit_transforms, stage3_train_transfer

OUT = "out/demo07"
os.makedirs(OUT, exist_ok=True)

SUBSET = 1000
SCHEDULE = Schedule(stage1_epochs=3, stage2_epochs=20, stage3_epochs=3)
PAIRS = [make_pair("flips"), make_pair("nested_shear")]

train = load_idx_images("data/train-images-idx3-ubyte.gz")
test = load_idx_images("data/t10k-images-idx3-ubyte.gz")
train_set = ImageSet(train.pixels[:SUBSET])
test_set = ImageSet(test.pixels[:1000])


def initial_trainer(pair):
    print(f"  training initial model on {pair.label}")
    data = build_augmented_dataset(train_set, pair)
    params = stage1_train(data, SCHEDULE, seed=0)
    stage2_fit_transforms(data, params, SCHEDULE, seed=0)
    baseline = sum(lavae_category_errors(params, build_augmented_dataset(test_set, pair)))
    return params, baseline


def transfer_runner(params, target):
    print(f"    transfer head -> {target.label}")
    data = build_augmented_dataset(train_set, target)
    stage3_train_transfer(data, params, SCHEDULE, seed=0)
    test_data = build_augmented_dataset(test_set, target)
    return sum(lavae_category_errors(params, test_data, head=target.label))


heatmap = transfer_heatmap(PAIRS, initial_trainer, transfer_runner)
heatmap.write_csv(f"{OUT}/heatmap.csv")
heatmap.write_flags(f"{OUT}/heatmap_flags.txt")

print("\ninitial pair -> transfer pair totals:")
for i, p in enumerate(heatmap.pair_labels):
    cells = "  ".join(f"{v:8.1f}" for v in heatmap.matrix[i])
    print(f"  {p:<28} {cells}   (direct baseline {heatmap.baselines[i]:.1f})")
for p, q, got, base in heatmap.flags():
    print(f"  transfer {p} -> {q} beats direct training: {got:.1f} < {base:.1f}")
print(f"\nwrote {OUT}/heatmap.csv")
