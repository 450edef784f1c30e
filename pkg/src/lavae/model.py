"""Model parameters, forward passes and checkpoint persistence.

Architecture (28x28 defaults): encoder is two stride-2 3x3 convolutions
(1->32->64 channels, ReLU) followed by a fully-connected layer producing a
16-d posterior mean and log-variance.  The decoder mirrors it: FC back to the
7x7 feature map, two stride-2 transposed convolutions and a final sigmoid.
CVAE variants append a one-hot augmentation-class vector to the encoder
features and to the decoder latent input.  Latent transforms are dense
square matrices acting on latent row vectors by right-multiplication.

Checkpoints are a single binary file: magic ``LAVAE``, a u32 format version,
a JSON manifest of named tensor shapes/offsets, then the packed
little-endian float32 payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

CHECKPOINT_MAGIC = b"LAVAE"
CHECKPOINT_VERSION = 1

KERNEL = 3
STRIDE = 2
PAD = 1
OUTPUT_PAD = 1


class NonFiniteActivation(ValueError):
    """A forward pass produced NaN or Inf."""


class BadOneHot(ValueError):
    """Conditional input is not an exact one-hot row."""


class VersionMismatch(ValueError):
    pass


class CorruptManifest(ValueError):
    pass


class ShortPayload(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Shape hyperparameters shared by encoder/decoder pairs."""

    image_size: int = 28
    channels: tuple[int, int] = (32, 64)
    latent_dim: int = 16
    cond_dim: int = 0  # one-hot width appended to encoder features / decoder input

    @property
    def feature_size(self):
        # two stride-2 convolutions quarter the spatial resolution
        side = self.image_size
        for _ in range(2):
            side = (side + 2 * PAD - KERNEL) // STRIDE + 1
        return side

    @property
    def feature_dim(self):
        return self.channels[1] * self.feature_size ** 2

    def to_dict(self):
        return {"image_size": self.image_size, "channels": list(self.channels),
                "latent_dim": self.latent_dim, "cond_dim": self.cond_dim}

    @classmethod
    def from_dict(cls, d):
        return cls(image_size=d["image_size"], channels=tuple(d["channels"]),
                   latent_dim=d["latent_dim"], cond_dim=d["cond_dim"])


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class ParamGroup:
    """Named collection of trainable tensors."""

    def __init__(self, tensors: dict[str, ad.Tensor]):
        self._tensors = tensors

    def __getattr__(self, name):
        try:
            return self.__dict__["_tensors"][name]
        except KeyError:
            raise AttributeError(name) from None

    def tensors(self) -> dict[str, ad.Tensor]:
        return self._tensors

    def zero_grad(self):
        for t in self._tensors.values():
            t.zero_grad()


class EncoderParams(ParamGroup):
    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        c1, c2 = cfg.channels
        fc_in = cfg.feature_dim + cfg.cond_dim
        tensors = {
            "conv1_w": ad.Tensor(_uniform(rng, (c1, 1, KERNEL, KERNEL), 1 * KERNEL * KERNEL, dtype), requires_grad=True),
            "conv1_b": ad.Tensor(np.zeros(c1, dtype=dtype), requires_grad=True),
            "conv2_w": ad.Tensor(_uniform(rng, (c2, c1, KERNEL, KERNEL), c1 * KERNEL * KERNEL, dtype), requires_grad=True),
            "conv2_b": ad.Tensor(np.zeros(c2, dtype=dtype), requires_grad=True),
            "fc_w": ad.Tensor(_uniform(rng, (fc_in, 2 * cfg.latent_dim), fc_in, dtype), requires_grad=True),
            "fc_b": ad.Tensor(np.zeros(2 * cfg.latent_dim, dtype=dtype), requires_grad=True),
        }
        super().__init__(tensors)
        self.cfg = cfg


class DecoderParams(ParamGroup):
    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        c1, c2 = cfg.channels
        fc_in = cfg.latent_dim + cfg.cond_dim
        tensors = {
            "fc_w": ad.Tensor(_uniform(rng, (fc_in, cfg.feature_dim), fc_in, dtype), requires_grad=True),
            "fc_b": ad.Tensor(np.zeros(cfg.feature_dim, dtype=dtype), requires_grad=True),
            "deconv1_w": ad.Tensor(_uniform(rng, (c2, c1, KERNEL, KERNEL), c2 * KERNEL * KERNEL, dtype), requires_grad=True),
            "deconv1_b": ad.Tensor(np.zeros(c1, dtype=dtype), requires_grad=True),
            "deconv2_w": ad.Tensor(_uniform(rng, (c1, 1, KERNEL, KERNEL), c1 * KERNEL * KERNEL, dtype), requires_grad=True),
            "deconv2_b": ad.Tensor(np.zeros(1, dtype=dtype), requires_grad=True),
        }
        super().__init__(tensors)
        self.cfg = cfg


def _check_finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteActivation(f"non-finite values in {name}")


def _validate_onehot(y, width):
    y = np.asarray(y)
    if y.ndim != 2 or y.shape[1] != width:
        raise BadOneHot(f"conditional must be (batch, {width}), got {y.shape}")
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)):
        raise BadOneHot("conditional rows must be exactly one-hot")


def _as_nchw(x, cfg, dtype):
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    n = x.shape[0]
    return np.ascontiguousarray(x.reshape(n, 1, cfg.image_size, cfg.image_size), dtype=dtype)


def encode(p: EncoderParams, x, cond=None, check=True):
    """Convolutional encoding to posterior (mu, logvar); both (batch, latent).

    `x` is a (batch, H, W) array or an autodiff Tensor of shape (batch,1,H,W);
    `cond` is the optional one-hot batch for CVAE encoders.
    """
    cfg = p.cfg
    dtype = p.fc_w.dtype
    if not isinstance(x, ad.Tensor):
        x = ad.Tensor(_as_nchw(x, cfg, dtype))
    h = ad.relu(ad.conv2d(x, p.conv1_w, p.conv1_b, STRIDE, PAD))
    h = ad.relu(ad.conv2d(h, p.conv2_w, p.conv2_b, STRIDE, PAD))
    h = ad.reshape(h, (h.shape[0], cfg.feature_dim))
    if cfg.cond_dim:
        if cond is None:
            raise BadOneHot("encoder expects a conditional input")
        _validate_onehot(cond, cfg.cond_dim)
        h = ad.concat_cols(h, ad.Tensor(np.asarray(cond, dtype=dtype)))
    out = ad.linear(h, p.fc_w, p.fc_b)
    mu = ad.narrow_cols(out, 0, cfg.latent_dim)
    logvar = ad.narrow_cols(out, cfg.latent_dim, cfg.latent_dim)
    if check:
        _check_finite("encode", mu.data, logvar.data)
    return mu, logvar


def reparameterize(mu, logvar, noise):
    """z = mu + exp(logvar / 2) * noise."""
    if isinstance(mu, ad.Tensor):
        noise = ad.Tensor(np.asarray(noise, dtype=mu.dtype))
        return ad.add(mu, ad.mul(ad.exp(ad.mul(logvar, 0.5)), noise))
    return mu + np.exp(0.5 * logvar) * noise


def decode(p: DecoderParams, z, cond=None, check=True):
    """Decode latents to images in (0, 1); returns a Tensor (batch,1,H,W)."""
    cfg = p.cfg
    dtype = p.fc_w.dtype
    if not isinstance(z, ad.Tensor):
        z = ad.Tensor(np.asarray(z, dtype=dtype))
    if cfg.cond_dim:
        if cond is None:
            raise BadOneHot("decoder expects a conditional input")
        _validate_onehot(cond, cfg.cond_dim)
        z = ad.concat_cols(z, ad.Tensor(np.asarray(cond, dtype=dtype)))
    h = ad.relu(ad.linear(z, p.fc_w, p.fc_b))
    side = cfg.feature_size
    h = ad.reshape(h, (h.shape[0], cfg.channels[1], side, side))
    h = ad.relu(ad.conv_transpose2d(h, p.deconv1_w, p.deconv1_b, STRIDE, PAD, OUTPUT_PAD))
    h = ad.conv_transpose2d(h, p.deconv2_w, p.deconv2_b, STRIDE, PAD, OUTPUT_PAD)
    out = ad.sigmoid(h)
    if check:
        _check_finite("decode", out.data)
    return out


def decode_images(p: DecoderParams, z, cond=None, batch=512):
    """Plain-numpy decoding to a (n, H, W) image array, chunked over rows."""
    z = np.asarray(z)
    outs = []
    for i in range(0, z.shape[0], batch):
        c = None if cond is None else cond[i:i + batch]
        outs.append(decode(p, z[i:i + batch], c).data[:, 0])
    return np.concatenate(outs, axis=0)


def encode_mean(p: EncoderParams, images, cond=None, batch=512):
    """Posterior means for a stack of images, noise-free, chunked."""
    images = np.asarray(images)
    outs = []
    for i in range(0, images.shape[0], batch):
        c = None if cond is None else cond[i:i + batch]
        mu, _ = encode(p, images[i:i + batch], c)
        outs.append(mu.data)
    return np.concatenate(outs, axis=0)


@dataclass
class LavaeParams:
    """Everything the latent-augmentation model trains.

    `transforms` maps original-image latents to augmented-image latents
    (one square matrix per augmentation in the trained pair); extra decoder
    heads trained against other augmentation pairs live in `transfer_heads`.
    """

    cfg: ModelConfig
    encoder: EncoderParams
    decoder: DecoderParams
    transforms: list[ad.Tensor]
    transfer_heads: dict[str, DecoderParams] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def tensors(self) -> dict[str, ad.Tensor]:
        out = {}
        for name, t in self.encoder.tensors().items():
            out[f"encoder/{name}"] = t
        for name, t in self.decoder.tensors().items():
            out[f"decoder/{name}"] = t
        for k, t in enumerate(self.transforms):
            out[f"transform/{k}"] = t
        for head, params in sorted(self.transfer_heads.items()):
            for name, t in params.tensors().items():
                out[f"transfer/{head}/{name}"] = t
        return out

    def add_transfer_head(self, name: str, params: DecoderParams):
        self.transfer_heads[name] = params


@dataclass
class CvaeParams:
    """Conditional VAE: encoder and decoder with one-hot conditional inputs."""

    cfg: ModelConfig
    encoder: EncoderParams
    decoder: DecoderParams
    meta: dict = field(default_factory=dict)

    def tensors(self) -> dict[str, ad.Tensor]:
        out = {}
        for name, t in self.encoder.tensors().items():
            out[f"encoder/{name}"] = t
        for name, t in self.decoder.tensors().items():
            out[f"decoder/{name}"] = t
        return out


def init_lavae(seed: int, cfg: ModelConfig = ModelConfig(), dtype=np.float32) -> LavaeParams:
    """Fresh parameters: uniform(+-1/sqrt(fan_in)) weights, zero biases,
    identity latent transforms.  Deterministic per seed."""
    if cfg.cond_dim:
        raise ValueError("latent-transform model takes no conditional input")
    rng = np.random.default_rng(seed)
    enc = EncoderParams(cfg, rng, dtype)
    dec = DecoderParams(cfg, rng, dtype)
    transforms = [ad.Tensor(np.eye(cfg.latent_dim, dtype=dtype), requires_grad=True)
                  for _ in range(2)]
    return LavaeParams(cfg, enc, dec, transforms)


def init_cvae(seed: int, cfg: ModelConfig | None = None, dtype=np.float32) -> CvaeParams:
    if cfg is None:
        cfg = ModelConfig(cond_dim=4)
    if not cfg.cond_dim:
        raise ValueError("CVAE needs cond_dim > 0")
    rng = np.random.default_rng(seed)
    return CvaeParams(cfg, EncoderParams(cfg, rng, dtype), DecoderParams(cfg, rng, dtype))


def init_decoder_head(seed: int, cfg: ModelConfig, dtype=np.float32) -> DecoderParams:
    rng = np.random.default_rng(seed)
    return DecoderParams(cfg, rng, dtype)


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(params: LavaeParams | CvaeParams, path):
    """Write all tensors plus metadata; float32 payload, bit-stable."""
    named = params.tensors()
    manifest_tensors = []
    payload = bytearray()
    for name in sorted(named):
        arr = np.ascontiguousarray(named[name].data, dtype=np.float32)
        manifest_tensors.append({"name": name, "shape": list(arr.shape),
                                 "offset": len(payload)})
        payload.extend(arr.tobytes())
    meta = dict(params.meta)
    meta["kind"] = "lavae" if isinstance(params, LavaeParams) else "cvae"
    meta["config"] = params.cfg.to_dict()
    manifest = json.dumps({"tensors": manifest_tensors, "meta": meta},
                          sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(manifest)))
        f.write(manifest)
        f.write(bytes(payload))


def _read_checkpoint(path):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(CHECKPOINT_MAGIC) + 8:
        raise ShortPayload("file too short for header")
    if raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CorruptManifest("bad magic")
    off = len(CHECKPOINT_MAGIC)
    version, mlen = struct.unpack_from("<II", raw, off)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    off += 8
    if len(raw) < off + mlen:
        raise ShortPayload("manifest truncated")
    try:
        manifest = json.loads(raw[off:off + mlen])
        entries = manifest["tensors"]
        meta = manifest["meta"]
    except (ValueError, KeyError, TypeError) as e:
        raise CorruptManifest(f"manifest not parseable: {e}") from None
    payload = raw[off + mlen:]
    arrays = {}
    expected_end = 0
    for ent in sorted(entries, key=lambda e: e["offset"]):
        shape = tuple(ent["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if ent["offset"] != expected_end:
            raise CorruptManifest("tensor offsets do not partition the payload")
        expected_end = ent["offset"] + nbytes
        if expected_end > len(payload):
            raise ShortPayload(f"payload ends before tensor {ent['name']}")
        arrays[ent["name"]] = np.frombuffer(
            payload, dtype="<f4", count=nbytes // 4, offset=ent["offset"]
        ).reshape(shape).copy()
    if expected_end != len(payload):
        raise CorruptManifest("payload longer than manifest declares")
    return arrays, meta


def _fill_group(group: ParamGroup, arrays, prefix):
    for name, t in group.tensors().items():
        arr = arrays[f"{prefix}/{name}"]
        if arr.shape != t.data.shape:
            raise CorruptManifest(f"shape mismatch for {prefix}/{name}")
        t.data = arr


def load_checkpoint(path) -> LavaeParams | CvaeParams:
    """Rebuild the parameter bundle saved by `save_checkpoint`."""
    arrays, meta = _read_checkpoint(path)
    cfg = ModelConfig.from_dict(meta["config"])
    kind = meta.get("kind")
    if kind == "lavae":
        params = init_lavae(0, cfg)
        _fill_group(params.encoder, arrays, "encoder")
        _fill_group(params.decoder, arrays, "decoder")
        for k, t in enumerate(params.transforms):
            t.data = arrays[f"transform/{k}"]
        heads = sorted({name.split("/")[1] for name in arrays if name.startswith("transfer/")})
        for head in heads:
            hp = init_decoder_head(0, cfg)
            _fill_group(hp, arrays, f"transfer/{head}")
            params.add_transfer_head(head, hp)
    elif kind == "cvae":
        params = init_cvae(0, cfg)
        _fill_group(params.encoder, arrays, "encoder")
        _fill_group(params.decoder, arrays, "decoder")
    else:
        raise CorruptManifest(f"unknown model kind {kind!r}")
    params.meta = {k: v for k, v in meta.items() if k not in ("kind", "config")}
    return params
