"""Generate new digits by bounding-box latent sampling, and interpolate
between two test digits at regular latent intervals.

Sampling draws uniformly inside the per-dimension [min, max] box of the
training originals' latent means; each sample is also pushed through the
latent transforms to show its augmentations.  Needs demo 02's checkpoint.

    python demos/04_sampling_interpolation.py
"""

import os

import numpy as np

from lavae import (export_grid, interpolate, load_checkpoint, load_idx_images,
                   sample_bbox)
from lavae.model import decode_images, encode_mean

OUT = "out/demo04"
os.makedirs(OUT, exist_ok=True)

params = load_checkpoint("out/demo02/flips_small.ckpt")
train = load_idx_images("data/train-images-idx3-ubyte.gz")
test = load_idx_images("data/t10k-images-idx3-ubyte.gz")

z_train = encode_mean(params.encoder, train.pixels[:2000]).astype(np.float64)
samples = sample_bbox(z_train, count=8, seed=7)
l1 = params.transforms[0].data.astype(np.float64)
l2 = params.transforms[1].data.astype(np.float64)

tiles, labels = [], []
for k, z in enumerate(samples):
    for name, zz in (("sample", z), ("aug1", z @ l1), ("aug2", z @ l2),
                     ("composed", z @ l1 @ l2)):
        tiles.append(decode_images(params.decoder, zz[None].astype(np.float32))[0])
        labels.append(f"{k}:{name}")
export_grid(tiles, 8, 4, f"{OUT}/bbox_samples.pgm", labels=labels)
print(f"wrote {OUT}/bbox_samples.pgm")

# interpolation at 8 regular intervals across all 16 latent dimensions
frames = interpolate(params, test.pixels[0], test.pixels[1], steps=8)
export_grid(list(frames), 1, 8, f"{OUT}/interpolation.pgm",
            labels=[f"t={k / 7:.2f}" for k in range(8)])
print(f"wrote {OUT}/interpolation.pgm")
