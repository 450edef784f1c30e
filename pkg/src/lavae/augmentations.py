"""Deterministic image-space augmentations and their composition.

Six kinds are supported: exact pixel permutations (flip_lr, flip_ud,
rotate90_cw), bilinear x-shear about the image center, a binary Canny edge
detector, and a "nested mini" op that max-blends a half-scale copy of the
image into its center.  All functions are pure; outputs stay in [0, 1].

Every augmentation has a single-image form plus a batched form used when
building datasets; the two share one code path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class UnknownKind(ValueError):
    pass


class FactorOutOfRange(ValueError):
    pass


class BadThresholds(ValueError):
    pass


KINDS = ("flip_lr", "flip_ud", "rotate90_cw", "shear_x", "canny_edge", "nested_mini")

DEFAULT_PARAMS = {
    "shear_x": {"factor": 0.3},
    "canny_edge": {"sigma": 1.0, "low": 0.1, "high": 0.3},
}


@dataclass(frozen=True)
class AugmentationSpec:
    """One deterministic image -> image function: a kind plus its scalars."""

    kind: str
    params: tuple = field(default_factory=tuple)  # sorted (name, value) pairs

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnknownKind(f"unknown augmentation kind {self.kind!r}")
        merged = dict(DEFAULT_PARAMS.get(self.kind, {}))
        merged.update(dict(self.params))
        object.__setattr__(self, "params", tuple(sorted(merged.items())))
        if self.kind == "shear_x" and abs(merged["factor"]) > 1:
            raise FactorOutOfRange(f"|factor| must be <= 1, got {merged['factor']}")
        if self.kind == "canny_edge" and not (0 < merged["low"] < merged["high"] <= 1):
            raise BadThresholds(f"need 0 < low < high <= 1, got {merged}")

    def param(self, name):
        return dict(self.params)[name]

    @property
    def label(self):
        if self.params:
            args = ",".join(f"{k}={v:g}" for k, v in self.params)
            return f"{self.kind}({args})"
        return self.kind


@dataclass(frozen=True)
class AugmentationPair:
    """Two distinct specs; composition order is first then second."""

    first: AugmentationSpec
    second: AugmentationSpec

    def __post_init__(self):
        if self.first == self.second:
            raise ValueError("augmentation pair must contain two distinct specs")

    @property
    def label(self):
        return f"{self.first.label}+{self.second.label}"


PAIR_PRESETS = {
    "flips": ("flip_lr", "flip_ud"),
    "nested_shear": ("nested_mini", "shear_x"),
    "rot_flip": ("rotate90_cw", "flip_lr"),
    "shear_canny": ("shear_x", "canny_edge"),
}


def make_pair(name_or_kinds) -> AugmentationPair:
    """Build a pair from a preset name ('flips') or 'kind,kind' / iterable."""
    if isinstance(name_or_kinds, str):
        kinds = PAIR_PRESETS.get(name_or_kinds) or tuple(name_or_kinds.split(","))
    else:
        kinds = tuple(name_or_kinds)
    if len(kinds) != 2:
        raise ValueError(f"a pair needs exactly two augmentations, got {kinds!r}")
    return AugmentationPair(AugmentationSpec(kinds[0].strip()),
                            AugmentationSpec(kinds[1].strip()))


def _batched(image):
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        return image[None], True
    return image, False


def permute_flip_rotate(image, mode):
    """Exact pixel permutation: left/right flip, up/down flip, or 90deg
    clockwise rotation (row 0 viewed at the top)."""
    batch, single = _batched(image)
    if mode == "flip_lr":
        out = batch[:, :, ::-1]
    elif mode == "flip_ud":
        out = batch[:, ::-1, :]
    elif mode == "rotate90_cw":
        out = np.rot90(batch, k=-1, axes=(1, 2))
    else:
        raise UnknownKind(f"unknown permutation mode {mode!r}")
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def shear_x(image, factor):
    """Shear along x about the row center: output(r, c) samples the input
    bilinearly at column c + factor * (r - (H-1)/2); out-of-bounds reads 0."""
    if abs(factor) > 1:
        raise FactorOutOfRange(f"|factor| must be <= 1, got {factor}")
    batch, single = _batched(image)
    n, h, w = batch.shape
    center = (h - 1) / 2.0
    cols = np.arange(w, dtype=np.float64)
    out = np.zeros_like(batch)
    for r in range(h):
        pos = cols + factor * (r - center)
        c0 = np.floor(pos).astype(np.int64)
        frac = (pos - c0).astype(np.float32)
        row = batch[:, r, :]
        acc = np.zeros((n, w), dtype=np.float32)
        for idx, wgt in ((c0, 1.0 - frac), (c0 + 1, frac)):
            valid = (idx >= 0) & (idx < w)
            acc += np.where(valid, row[:, np.clip(idx, 0, w - 1)], 0.0) * wgt
        out[:, r, :] = acc
    out = np.clip(out, 0.0, 1.0)
    return out[0] if single else out


def _gaussian_blur(img, sigma):
    radius = int(np.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(t ** 2) / (2.0 * sigma ** 2))
    kernel /= kernel.sum()
    padded = np.pad(img, radius)
    rows = np.zeros_like(padded)
    for k, kv in enumerate(kernel):
        rows += kv * np.roll(padded, k - radius, axis=1)
    blurred = np.zeros_like(padded)
    for k, kv in enumerate(kernel):
        blurred += kv * np.roll(rows, k - radius, axis=0)
    return blurred[radius:-radius, radius:-radius]


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = _SOBEL_X.T


def _convolve3(img, kernel):
    padded = np.pad(img, 1)
    out = np.zeros_like(img)
    for i in range(3):
        for j in range(3):
            out += kernel[i, j] * padded[i:i + img.shape[0], j:j + img.shape[1]]
    return out


def canny_edge(image, sigma=1.0, low=0.1, high=0.3):
    """Binary Canny edges: Gaussian blur, Sobel gradients, 4-direction
    non-maximum suppression, then double-threshold hysteresis with
    thresholds relative to the peak suppressed magnitude."""
    if not (0 < low < high <= 1):
        raise BadThresholds(f"need 0 < low < high <= 1, got low={low} high={high}")
    if sigma <= 0:
        raise BadThresholds(f"sigma must be positive, got {sigma}")
    batch, single = _batched(image)
    out = np.stack([_canny_single(img.astype(np.float64), sigma, low, high)
                    for img in batch])
    return out[0] if single else out


def _canny_single(img, sigma, low, high):
    h, w = img.shape
    blurred = _gaussian_blur(img, sigma)
    gx = _convolve3(blurred, _SOBEL_X)
    gy = _convolve3(blurred, _SOBEL_Y)
    mag = np.hypot(gx, gy)
    if mag.max() == 0.0:
        return np.zeros((h, w), dtype=np.float32)

    # quantize gradient direction to 4 bins over [0, 180)
    angle = np.degrees(np.arctan2(gy, gx)) % 180.0
    padded = np.pad(mag, 1)

    def shifted(dr, dc):
        return padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]

    bins = [
        ((angle < 22.5) | (angle >= 157.5), shifted(0, 1), shifted(0, -1)),
        ((angle >= 22.5) & (angle < 67.5), shifted(1, 1), shifted(-1, -1)),
        ((angle >= 67.5) & (angle < 112.5), shifted(1, 0), shifted(-1, 0)),
        ((angle >= 112.5) & (angle < 157.5), shifted(1, -1), shifted(-1, 1)),
    ]
    keep = np.zeros((h, w), dtype=bool)
    for mask, n1, n2 in bins:
        keep |= mask & (mag >= n1) & (mag >= n2)
    suppressed = np.where(keep, mag, 0.0)

    peak = suppressed.max()
    if peak == 0.0:
        return np.zeros((h, w), dtype=np.float32)
    strong = suppressed >= high * peak
    weak = suppressed >= low * peak

    # hysteresis: flood weak pixels 8-connected to strong ones
    edges = strong.copy()
    frontier = list(zip(*np.nonzero(strong)))
    while frontier:
        r, c = frontier.pop()
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w and weak[rr, cc] and not edges[rr, cc]:
                    edges[rr, cc] = True
                    frontier.append((rr, cc))
    return edges.astype(np.float32)


def nested_mini(image):
    """Max-blend a half-scale (2x2 box-averaged) copy into the center:
    rows and cols 7..20 for 28x28 inputs."""
    batch, single = _batched(image)
    n, h, w = batch.shape
    if h % 2 or w % 2:
        raise ValueError("nested_mini needs even image dimensions")
    mini = batch.reshape(n, h // 2, 2, w // 2, 2).mean(axis=(2, 4))
    canvas = np.zeros_like(batch)
    r0, c0 = h // 4, w // 4
    canvas[:, r0:r0 + h // 2, c0:c0 + w // 2] = mini
    out = np.maximum(batch, canvas)
    return out[0] if single else out


def apply_spec(spec: AugmentationSpec, image):
    """Dispatch a spec to its implementation (single image)."""
    return apply_spec_batch(spec, image)


def apply_spec_batch(spec: AugmentationSpec, images):
    if spec.kind in ("flip_lr", "flip_ud", "rotate90_cw"):
        return permute_flip_rotate(images, spec.kind)
    if spec.kind == "shear_x":
        return shear_x(images, spec.param("factor"))
    if spec.kind == "canny_edge":
        return canny_edge(images, spec.param("sigma"), spec.param("low"), spec.param("high"))
    if spec.kind == "nested_mini":
        return nested_mini(images)
    raise UnknownKind(f"unknown augmentation kind {spec.kind!r}")
