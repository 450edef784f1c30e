"""Show every augmentation kind on a few real digits.

Loads the bundled MNIST test images, applies each augmentation and the four
preset pairs' compositions, and writes a labeled PGM contact sheet to
out/demo01/.  Everything is deterministic; run from the repository root:

    python demos/01_augmentations.py
"""

import os

from lavae import ImageSet, build_augmented_dataset, export_grid, load_idx_images
from lavae.augmentations import KINDS, PAIR_PRESETS, AugmentationSpec, apply_spec, make_pair

OUT = "out/demo01"
os.makedirs(OUT, exist_ok=True)

test = load_idx_images("data/t10k-images-idx3-ubyte.gz")
digits = test.pixels[:4]

# one row per digit: original followed by each augmentation kind
tiles, labels = [], []
for d, img in enumerate(digits):
    tiles.append(img)
    labels.append(f"digit{d}:original")
    for kind in KINDS:
        tiles.append(apply_spec(AugmentationSpec(kind), img))
        labels.append(f"digit{d}:{kind}")
export_grid(tiles, len(digits), 1 + len(KINDS),
            f"{OUT}/all_kinds.pgm", labels=labels)
print(f"wrote {OUT}/all_kinds.pgm")

# the four experiment pairs: original, aug1, aug2, composition
for name in PAIR_PRESETS:
    pair = make_pair(name)
    data = build_augmented_dataset(ImageSet(digits), pair)
    tiles, labels = [], []
    for d in range(len(digits)):
        for cat in data.CATEGORIES:
            tiles.append(data.category(cat).pixels[d])
            labels.append(f"digit{d}:{cat}")
    export_grid(tiles, len(digits), 4, f"{OUT}/pair_{name}.pgm", labels=labels)
    print(f"wrote {OUT}/pair_{name}.pgm   ({pair.label})")
