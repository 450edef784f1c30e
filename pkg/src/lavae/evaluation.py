"""Reconstruction metrics, model comparison tables, transfer heatmaps,
2-D latent projections and image-grid export.

The reconstruction metric throughout is the mean over images of the summed
squared pixel error on [0, 1] intensities, so a 28x28 image contributes up
to 784 per category.  Comparison rows hold the four per-category errors
(original, each augmentation, composition) plus their total.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .dataset import AugmentedDataset, ImageSet
from .training import onehot


class ShapeMismatch(ValueError):
    pass


class DegenerateData(ValueError):
    pass


class NoConvergenceWarning(RuntimeWarning):
    """FastICA hit the iteration cap; the best iterate is returned."""


def _pixels(x):
    return x.pixels if isinstance(x, ImageSet) else np.asarray(x)


def recon_error(truth, pred) -> float:
    """Mean per-image sum of squared pixel errors."""
    t = _pixels(truth)
    p = _pixels(pred)
    if t.shape != p.shape:
        raise ShapeMismatch(f"truth {t.shape} vs pred {p.shape}")
    diff = (t.astype(np.float64) - p.astype(np.float64)).reshape(t.shape[0], -1)
    return float(np.mean(np.sum(diff * diff, axis=1)))


# -- per-model category protocols -------------------------------------------


def lavae_category_errors(params: M.LavaeParams, data: AugmentedDataset,
                          head: str | None = None):
    """(orig, aug1, aug2, comp) errors: originals by plain reconstruction,
    augmentations through the latent transforms, composition through their
    product."""
    decoder = params.decoder if head is None else params.transfer_heads[head]
    z0 = M.encode_mean(params.encoder, data.originals.pixels).astype(np.float64)
    l1 = params.transforms[0].data.astype(np.float64)
    l2 = params.transforms[1].data.astype(np.float64)
    latents = {"orig": z0, "aug1": z0 @ l1, "aug2": z0 @ l2, "comp": z0 @ l1 @ l2}
    out = []
    for cat in AugmentedDataset.CATEGORIES:
        pred = M.decode_images(decoder, latents[cat].astype(np.float32))
        out.append(recon_error(data.category(cat), pred))
    return tuple(out)


def cvae_trad_category_errors(params: M.CvaeParams, data: AugmentedDataset):
    """Encode the original with its own class, then decode with each target
    class; measures whether swapping the conditional augments the image."""
    n = data.count
    z = M.encode_mean(params.encoder, data.originals.pixels,
                      onehot(np.zeros(n), params.cfg.cond_dim))
    out = []
    for k, cat in enumerate(AugmentedDataset.CATEGORIES):
        pred = M.decode_images(params.decoder, z, onehot(np.full(n, k), params.cfg.cond_dim))
        out.append(recon_error(data.category(cat), pred))
    return tuple(out)


def cvae_auginv_category_errors(params: M.CvaeParams, data: AugmentedDataset):
    """Augmentation-invariant protocol: single-class columns decode the
    original's latent with the target class; the composition column decodes
    with class aug1, re-encodes, then decodes with class aug2 (no composed
    conditional is ever trained)."""
    n = data.count
    cond = params.cfg.cond_dim
    z = M.encode_mean(params.encoder, data.originals.pixels, onehot(np.zeros(n), cond))
    out = []
    for k, cat in enumerate(("orig", "aug1", "aug2")):
        pred = M.decode_images(params.decoder, z, onehot(np.full(n, k), cond))
        out.append(recon_error(data.category(cat), pred))
    step1 = M.decode_images(params.decoder, z, onehot(np.full(n, 1), cond))
    z2 = M.encode_mean(params.encoder, step1, onehot(np.full(n, 1), cond))
    step2 = M.decode_images(params.decoder, z2, onehot(np.full(n, 2), cond))
    out.append(recon_error(data.composed, step2))
    return tuple(out)


@dataclass
class MseTable:
    """Named rows of (orig, aug1, aug2, comp, total) reconstruction errors."""

    rows: dict[str, tuple] = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def add(self, name, categories, note=None):
        categories = tuple(float(c) for c in categories)
        if len(categories) != 4:
            raise ValueError("expected four per-category errors")
        self.rows[name] = categories + (sum(categories),)
        if note:
            self.notes.append(f"{name}: {note}")

    def write_tsv(self, path):
        with open(path, "w") as f:
            f.write("model\torig\taug1\taug2\tcomp\ttotal\n")
            for name, row in self.rows.items():
                f.write(name + "\t" + "\t".join(repr(v) for v in row) + "\n")
            for note in self.notes:
                f.write(f"# {note}\n")

    def __getitem__(self, name):
        return self.rows[name]


def build_mse_table(models: dict, data: AugmentedDataset) -> MseTable:
    """Evaluate each named model with its protocol; CVAE protocol is chosen
    by the checkpoint's training mode (`meta['mode']`)."""
    table = MseTable()
    for name, params in models.items():
        note = None
        if isinstance(params, M.LavaeParams):
            cats = lavae_category_errors(params, data)
        elif isinstance(params, M.CvaeParams):
            mode = params.meta.get("mode", "traditional")
            if mode == "aug_invariant":
                cats = cvae_auginv_category_errors(params, data)
                note = ("comp column decodes sequentially (aug1 conditional, "
                        "re-encode, aug2 conditional); no composed conditional "
                        "is ever trained in this mode")
            else:
                cats = cvae_trad_category_errors(params, data)
        else:
            raise TypeError(f"cannot evaluate model of type {type(params)!r}")
        table.add(name, cats, note)
    return table


# -- transfer heatmap ---------------------------------------------------------


@dataclass
class HeatmapMatrix:
    """Initial-pair x transfer-pair grid of total reconstruction errors,
    plus each pair's directly-trained baseline total."""

    pair_labels: list[str]
    matrix: np.ndarray          # (n_pairs, n_pairs) totals, row = initial pair
    baselines: np.ndarray       # (n_pairs,) direct-training totals

    def flags(self):
        """(initial, transfer) entries that beat training on the transfer
        pair directly."""
        out = []
        for i, p in enumerate(self.pair_labels):
            for j, q in enumerate(self.pair_labels):
                if self.matrix[i, j] < self.baselines[j]:
                    out.append((p, q, float(self.matrix[i, j]), float(self.baselines[j])))
        return out

    def write_csv(self, path):
        with open(path, "w") as f:
            f.write("initial_pair," + ",".join(self.pair_labels) + ",baseline\n")
            for i, p in enumerate(self.pair_labels):
                cells = ",".join(repr(float(v)) for v in self.matrix[i])
                f.write(f"{p},{cells},{float(self.baselines[i])!r}\n")

    def write_flags(self, path):
        with open(path, "w") as f:
            flags = self.flags()
            if not flags:
                f.write("no transfer beat its direct-training baseline\n")
            for p, q, got, base in flags:
                f.write(f"transfer {p} -> {q}: {got!r} beats direct baseline {base!r}\n")


def transfer_heatmap(pairs, initial_trainer, transfer_runner) -> HeatmapMatrix:
    """Drive the grid: `initial_trainer(pair)` returns a trained model with
    fitted transforms, `transfer_runner(model, target_pair)` returns the
    total reconstruction error of a freshly trained transfer head."""
    labels = [p.label for p in pairs]
    n = len(pairs)
    matrix = np.zeros((n, n))
    baselines = np.zeros(n)
    models = []
    for i, pair in enumerate(pairs):
        model, baseline_total = initial_trainer(pair)
        models.append(model)
        baselines[i] = baseline_total
    for i, model in enumerate(models):
        for j, target in enumerate(pairs):
            matrix[i, j] = transfer_runner(model, target)
    return HeatmapMatrix(labels, matrix, baselines)


# -- 2-D projections -----------------------------------------------------------


def pca_project(vectors):
    """Top-2 principal directions of the sample covariance.

    Returns (coords (N,2), components (2,D)); components are orthonormal and
    sorted by descending projected variance.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise DegenerateData("need at least 3 vectors")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    if np.trace(cov) <= 0:
        raise DegenerateData("zero variance")
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:2]
    components = evecs[:, order].T
    return centered @ components.T, components


def _whiten_2d(x):
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / x.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:2]
    evals = evals[order]
    if evals[-1] <= 1e-12 * max(evals[0], 1.0):
        raise DegenerateData("data has fewer than 2 significant directions")
    k = evecs[:, order] / np.sqrt(evals)
    return centered @ k  # (N, 2), identity covariance


def ica_project(vectors, seed: int = 0, tol: float = 1e-4, max_iter: int = 200):
    """First two independent components: PCA whitening to 2 dims, then
    symmetric FastICA with the tanh contrast.  Deterministic per seed; on
    hitting the iteration cap a NoConvergenceWarning is issued and the best
    iterate returned."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < max(16, x.shape[1]):
        raise DegenerateData("need at least max(16, dim) vectors")
    xw = _whiten_2d(x).T  # (2, N)
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((2, 2))

    def decorrelate(w):
        s, u = np.linalg.eigh(w @ w.T)
        return u @ np.diag(1.0 / np.sqrt(np.maximum(s, 1e-18))) @ u.T @ w

    w = decorrelate(w)
    n = xw.shape[1]
    converged = False
    for _ in range(max_iter):
        wx = w @ xw
        g = np.tanh(wx)
        g_prime = (1.0 - g * g).mean(axis=1)
        w_new = decorrelate(g @ xw.T / n - g_prime[:, None] * w)
        delta = np.max(np.abs(np.abs(np.diag(w_new @ w.T)) - 1.0))
        w = w_new
        if delta < tol:
            converged = True
            break
    if not converged:
        warnings.warn("FastICA did not converge within the iteration cap",
                      NoConvergenceWarning)
    return (w @ xw).T


# -- image grid export -----------------------------------------------------------


def export_grid(images, rows: int, cols: int, path, labels=None, separator=0.5):
    """Tile images into a single PGM (P5, maxval 255) with 1-px separators.

    Unused cells are left black.  If `labels` is given, a sidecar text file
    `<path>.labels.txt` records one label per tile, row-major.
    """
    images = [np.asarray(im) for im in images]
    if rows * cols < len(images):
        raise ValueError(f"{rows}x{cols} grid cannot hold {len(images)} images")
    if not images:
        raise ValueError("no images to export")
    h, w = images[0].shape
    grid = np.full((rows * h + rows - 1, cols * w + cols - 1), separator, dtype=np.float64)
    for k, im in enumerate(images):
        if im.shape != (h, w):
            raise ShapeMismatch(f"image {k} has shape {im.shape}, expected {(h, w)}")
        r, c = divmod(k, cols)
        grid[r * (h + 1):r * (h + 1) + h, c * (w + 1):c * (w + 1) + w] = im
    for k in range(len(images), rows * cols):
        r, c = divmod(k, cols)
        grid[r * (h + 1):r * (h + 1) + h, c * (w + 1):c * (w + 1) + w] = 0.0
    write_pgm(grid, path)
    if labels is not None:
        with open(f"{path}.labels.txt", "w") as f:
            for lab in labels:
                f.write(f"{lab}\n")


def write_pgm(image, path):
    arr = np.rint(np.clip(np.asarray(image), 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode())
        f.write(arr.tobytes())


def read_pgm(path):
    """Minimal P5 reader (for roundtrip checks); returns float [0,1] array."""
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a P5 PGM file")
    width, height = map(int, parts[1].split())
    maxval = int(parts[2])
    raw = np.frombuffer(parts[3], dtype=np.uint8, count=width * height)
    return raw.reshape(height, width).astype(np.float64) / maxval
