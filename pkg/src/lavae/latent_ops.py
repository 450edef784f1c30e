"""Inference-time latent algebra: augment, compose, invert, recurse, sample.

Latent codes are row vectors; a transform acts by right-multiplication
z . L.  Chaining the two fitted transforms approximates the latent code of
the image-space composition even though the product is never trained, and
inverses give any-to-any movement between categories.  All operations here
consume posterior means (no sampling noise), matching how the transforms
were fitted.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from . import model as M


class SingularTransform(ValueError):
    """Transform is numerically non-invertible (condition estimate >= 1e8)."""


class DegenerateBox(ValueError):
    pass


class BadSteps(ValueError):
    pass


CONDITION_LIMIT = 1e8


def latent_apply(transform, z):
    """Right-multiply latent row vector(s): z . L."""
    transform = np.asarray(transform, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    return z @ transform


def condition_estimate(transform) -> float:
    """1-norm condition estimate from a partial-pivot LU factorization."""
    mat = np.asarray(transform, dtype=np.float64)
    if not np.all(np.isfinite(mat)):
        return np.inf
    anorm = np.abs(mat).sum(axis=0).max()
    if anorm == 0.0:
        return np.inf
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # lu_factor warns on exact singularity
        lu, piv = sla.lu_factor(mat)
    gecon = sla.get_lapack_funcs("gecon", (mat,))
    rcond, _ = gecon(lu, anorm)
    return np.inf if rcond == 0.0 else 1.0 / rcond


def latent_invert(transform):
    """Invert via LU; refuses ill-conditioned matrices instead of regularizing."""
    mat = np.asarray(transform, dtype=np.float64)
    cond = condition_estimate(mat)
    if not np.isfinite(cond) or cond >= CONDITION_LIMIT:
        raise SingularTransform(f"condition estimate {cond:.3g} exceeds {CONDITION_LIMIT:.0e}")
    lu, piv = sla.lu_factor(mat)
    return sla.lu_solve((lu, piv), np.eye(mat.shape[0]))


@dataclass(frozen=True)
class TransformStep:
    transform: np.ndarray
    direction: str = "forward"

    def __post_init__(self):
        if self.direction not in ("forward", "inverse"):
            raise ValueError(f"direction must be forward or inverse, got {self.direction!r}")

    def matrix(self):
        mat = np.asarray(self.transform, dtype=np.float64)
        return latent_invert(mat) if self.direction == "inverse" else mat


@dataclass(frozen=True)
class TransformSequence:
    """Ordered transform applications, each forward or inverted."""

    steps: tuple[TransformStep, ...]

    def __post_init__(self):
        if not self.steps:
            raise ValueError("transform sequence must be nonempty")
        object.__setattr__(self, "steps", tuple(self.steps))

    def matrix(self):
        out = None
        for step in self.steps:
            m = step.matrix()
            out = m if out is None else out @ m
        return out


def select_head(params: M.LavaeParams, head: str | None) -> M.DecoderParams:
    if head is None:
        return params.decoder
    return params.transfer_heads[head]


def latent_pipeline(params: M.LavaeParams, images, seq: TransformSequence | None,
                    head: str | None = None):
    """Encode to the posterior mean, apply the sequence left to right,
    decode with the selected head.  `seq=None` is plain reconstruction."""
    images = np.asarray(images)
    single = images.ndim == 2
    if single:
        images = images[None]
    z = M.encode_mean(params.encoder, images).astype(np.float64)
    if seq is not None:
        z = z @ seq.matrix()
    out = M.decode_images(select_head(params, head), z.astype(np.float32))
    return out[0] if single else out


@dataclass
class Trajectory:
    """Recursion record: n+1 (latent, image) states including the start."""

    latents: np.ndarray  # (n+1, latent_dim)
    images: np.ndarray   # (n+1, H, W)

    @property
    def n_steps(self):
        return self.latents.shape[0] - 1


def recursive_trajectory(params: M.LavaeParams, image, transform, n: int,
                         head: str | None = None) -> Trajectory:
    """Repeatedly apply x <- decode(encode(x) . L), recording every state.

    Step 0 records the input image and its latent mean; step k the k-th
    re-encoded, transformed and decoded image.
    """
    if n < 0:
        raise BadSteps("step count must be >= 0")
    transform = np.asarray(transform, dtype=np.float64)
    decoder = select_head(params, head)
    current = np.asarray(image, dtype=np.float32)
    z = M.encode_mean(params.encoder, current[None])[0]
    latents = [z.astype(np.float64)]
    images = [current]
    for _ in range(n):
        z_next = latents[-1] @ transform
        current = M.decode_images(decoder, z_next[None].astype(np.float32))[0]
        images.append(current)
        latents.append(M.encode_mean(params.encoder, current[None])[0].astype(np.float64))
    return Trajectory(np.stack(latents), np.stack(images))


def sample_bbox(latents, count: int, seed: int = 0):
    """Uniform samples inside the per-dimension [min, max] box of `latents`."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[0] == 0:
        raise DegenerateBox("need at least one latent vector")
    lo = latents.min(axis=0)
    hi = latents.max(axis=0)
    rng = np.random.default_rng(seed)
    u = rng.random((count, latents.shape[1]))
    return lo + u * (hi - lo)


def interpolate(params: M.LavaeParams, image_a, image_b, steps: int,
                head: str | None = None):
    """Decode evenly spaced latent points between two images' posterior
    means; endpoints reproduce the plain reconstructions."""
    if steps < 2:
        raise BadSteps(f"need at least 2 interpolation steps, got {steps}")
    za, zb = M.encode_mean(params.encoder,
                           np.stack([np.asarray(image_a), np.asarray(image_b)])).astype(np.float64)
    ts = np.linspace(0.0, 1.0, steps)
    zs = (1.0 - ts)[:, None] * za[None] + ts[:, None] * zb[None]
    return M.decode_images(select_head(params, head), zs.astype(np.float32))


def commutator_metric(l1, l2, latents):
    """Mean ||z (L1 L2 - L2 L1)|| / ||z||: how close the fitted transforms
    come to commuting on real codes.  Diagnostic only."""
    l1 = np.asarray(l1, dtype=np.float64)
    l2 = np.asarray(l2, dtype=np.float64)
    z = np.asarray(latents, dtype=np.float64)
    comm = l1 @ l2 - l2 @ l1
    num = np.linalg.norm(z @ comm, axis=1)
    den = np.linalg.norm(z, axis=1)
    den = np.where(den == 0, 1.0, den)
    return float(np.mean(num / den))
