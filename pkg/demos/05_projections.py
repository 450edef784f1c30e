"""Project the four latent clusters (original / aug1 / aug2 / composed)
to 2-D with PCA and FastICA and save scatter data.

The latent space splits into per-category regions; the scatter TSVs make
that visible in any plotting tool.  If matplotlib is importable a PNG is
rendered too.  Needs demo 02's checkpoint.

    python demos/05_projections.py
"""

import os

import numpy as np

from lavae import (ImageSet, build_augmented_dataset, ica_project,
                   load_checkpoint, load_idx_images, pca_project)
from lavae.augmentations import make_pair
from lavae.model import encode_mean

OUT = "out/demo05"
os.makedirs(OUT, exist_ok=True)

params = load_checkpoint("out/demo02/flips_small.ckpt")
test = load_idx_images("data/t10k-images-idx3-ubyte.gz")
data = build_augmented_dataset(ImageSet(test.pixels[:1000]), make_pair("flips"))

latents, cats = [], []
for cat in data.CATEGORIES:
    z = encode_mean(params.encoder, data.category(cat).pixels)
    latents.append(z)
    cats.extend([cat] * z.shape[0])
z_all = np.concatenate(latents).astype(np.float64)

pca_xy, components = pca_project(z_all)
ica_xy = ica_project(z_all, seed=0)
for name, xy in (("pca", pca_xy), ("ica", ica_xy)):
    with open(f"{OUT}/{name}.tsv", "w") as f:
        f.write("category\tx\ty\n")
        for cat, (x, y) in zip(cats, xy):
            f.write(f"{cat}\t{x:.6f}\t{y:.6f}\n")
    print(f"wrote {OUT}/{name}.tsv")

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(11, 5))
    colors = {"orig": "tab:blue", "aug1": "tab:orange",
              "aug2": "tab:green", "comp": "tab:red"}
    cats = np.array(cats)
    for ax, (name, xy) in zip(axes, (("PCA", pca_xy), ("ICA", ica_xy))):
        for cat, color in colors.items():
            m = cats == cat
            ax.scatter(xy[m, 0], xy[m, 1], s=4, c=color, label=cat, alpha=0.5)
        ax.set_title(f"{name} projection of flips latent space")
        ax.legend()
    fig.tight_layout()
    fig.savefig(f"{OUT}/projections.png", dpi=120)
    print(f"wrote {OUT}/projections.png")
except ImportError:
    print("matplotlib not available; TSVs written only")
