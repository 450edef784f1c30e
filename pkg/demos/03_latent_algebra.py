"""Use a trained model's latent transforms: augment, compose (both orders),
invert, and run the recursive generator.

Needs the checkpoint from demo 02 (run that first).  Writes comparison
grids to out/demo03/: each row is a digit, columns pair the image-space
ground truth with the latent-space result.

    python demos/02_train_flips.py && python demos/03_latent_algebra.py
"""

import os

import numpy as np

from lavae import (ImageSet, build_augmented_dataset, export_grid,
                   latent_invert, load_checkpoint, load_idx_images,
                   recursive_trajectory)
from lavae.augmentations import make_pair
from lavae.model import decode_images, encode_mean
from lavae.evaluation import recon_error

OUT = "out/demo03"
os.makedirs(OUT, exist_ok=True)

params = load_checkpoint("out/demo02/flips_small.ckpt")
test = load_idx_images("data/t10k-images-idx3-ubyte.gz")
data = build_augmented_dataset(ImageSet(test.pixels[:8]), make_pair("flips"))

l1 = params.transforms[0].data.astype(np.float64)
l2 = params.transforms[1].data.astype(np.float64)
z = encode_mean(params.encoder, data.originals.pixels).astype(np.float64)
dec = lambda zz: decode_images(params.decoder, zz.astype(np.float32))

# forward: original -> each augmentation -> composition, all in latent space
tiles, labels = [], []
columns = [("input", data.originals.pixels), ("recon", dec(z)),
           ("flip_lr true", data.aug1.pixels), ("flip_lr latent", dec(z @ l1)),
           ("flip_ud true", data.aug2.pixels), ("flip_ud latent", dec(z @ l2)),
           ("compose true", data.composed.pixels), ("compose latent", dec(z @ l1 @ l2)),
           ("reverse order", dec(z @ l2 @ l1))]
for row in range(8):
    for name, stack in columns:
        tiles.append(stack[row])
        labels.append(f"{row}:{name}")
export_grid(tiles, 8, len(columns), f"{OUT}/forward.pgm", labels=labels)
print(f"wrote {OUT}/forward.pgm")
print(f"  composition error forward {recon_error(data.composed, dec(z @ l1 @ l2)):.1f}"
      f" vs reverse {recon_error(data.composed, dec(z @ l2 @ l1)):.1f}")

# inverse: augmented input -> original, the any-to-any direction
z1 = encode_mean(params.encoder, data.aug1.pixels).astype(np.float64)
zc = encode_mean(params.encoder, data.composed.pixels).astype(np.float64)
tiles, labels = [], []
columns = [("original", data.originals.pixels),
           ("flip_lr input", data.aug1.pixels),
           ("un-flipped", dec(z1 @ latent_invert(l1))),
           ("composed input", data.composed.pixels),
           ("un-composed", dec(zc @ latent_invert(l1 @ l2)))]
for row in range(8):
    for name, stack in columns:
        tiles.append(stack[row])
        labels.append(f"{row}:{name}")
export_grid(tiles, 8, len(columns), f"{OUT}/inverse.pgm", labels=labels)
print(f"wrote {OUT}/inverse.pgm")

# recursion: feed the output back through the same latent augmentation
for idx in (0, 1):
    traj = recursive_trajectory(params, test.pixels[idx], l1, n=10)
    export_grid(list(traj.images), 1, 11, f"{OUT}/recursion_{idx}.pgm",
                labels=[f"step{k}" for k in range(11)])
    drift = [float(((traj.images[k] - traj.images[k - 1]) ** 2).sum())
             for k in range(1, 11)]
    print(f"wrote {OUT}/recursion_{idx}.pgm  per-step drift: "
          + ", ".join(f"{d:.1f}" for d in drift))
