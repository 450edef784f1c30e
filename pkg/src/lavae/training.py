"""Losses, the AdaBelief optimizer and the three-stage training schedule.

Stage 1 trains encoder and decoder on all four image categories pooled,
minimizing weighted reconstruction + KL (weights 1 and 5).  Stage 2 freezes
them and fits one square latent transform per augmentation by least squares
on posterior means (the composed transform is never trained).  Stage 3
trains an extra decoder head against a second augmentation pair, reusing
the frozen encoder and frozen transforms.

Two CVAE baselines share the optimizer and schedule: the traditional mode
conditions encoder and decoder on the augmentation class of the input,
the augmentation-invariant mode trains every (source class, target class)
combination so the latent must drop augmentation information.

All randomness is consumed from numpy generators derived deterministically
from the caller's seed, so identical configurations retrain bit-identically
in single-threaded runs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import model as M
from .dataset import AugmentedDataset, BatchPlan, batch_iterator


class ShapeMismatch(ValueError):
    pass


class NonFiniteGradient(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda_kl: float = 5.0
    lambda_recon: float = 1.0

    def __post_init__(self):
        if self.lambda_kl <= 0 or self.lambda_recon <= 0:
            raise ValueError("loss weights must be positive")


@dataclass(frozen=True)
class Schedule:
    stage1_epochs: int = 100
    stage2_epochs: int = 60
    stage3_epochs: int = 100
    batch_size: int = 64

    def __post_init__(self):
        for name in ("stage1_epochs", "stage2_epochs", "stage3_epochs", "batch_size"):
            if getattr(self, name) < 0 or (name == "batch_size" and self.batch_size <= 0):
                raise ValueError(f"{name} out of range")


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-16


def derive_seed(master: int, name: str) -> int:
    """Stable named sub-seed so stages draw independent random streams."""
    digest = hashlib.sha256(f"{master}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2 ** 63 - 1)


# -- losses ----------------------------------------------------------------


BCE_CLAMP = 1e-7


def bce_loss(target, pred):
    """Pixel-summed, batch-averaged binary cross-entropy.

    `pred` is clamped into [1e-7, 1-1e-7]; target intensities in [0,1] are
    treated as Bernoulli means.  Accepts Tensors (differentiable) or arrays.
    """
    target_data = target.data if isinstance(target, ad.Tensor) else np.asarray(target)
    pred_data = pred.data if isinstance(pred, ad.Tensor) else np.asarray(pred)
    if target_data.shape != pred_data.shape:
        raise ShapeMismatch(f"target {target_data.shape} vs pred {pred_data.shape}")
    n = target_data.shape[0]
    t = target if isinstance(target, ad.Tensor) else ad.Tensor(target_data)
    p = ad.clamp(pred if isinstance(pred, ad.Tensor) else ad.Tensor(pred_data),
                 BCE_CLAMP, 1.0 - BCE_CLAMP)
    ll = ad.add(ad.mul(t, ad.log(p)), ad.mul(ad.add(ad.mul(t, -1.0), 1.0), ad.log(ad.add(ad.mul(p, -1.0), 1.0))))
    return ad.mul(ad.sum_(ll), -1.0 / n)


def kl_loss(mu, logvar):
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over dims, batch-averaged."""
    mu_t = mu if isinstance(mu, ad.Tensor) else ad.Tensor(np.asarray(mu))
    lv_t = logvar if isinstance(logvar, ad.Tensor) else ad.Tensor(np.asarray(logvar))
    n = mu_t.data.shape[0]
    inner = ad.add(ad.add(ad.square(mu_t), ad.exp(lv_t)), ad.add(ad.mul(lv_t, -1.0), -1.0))
    return ad.mul(ad.sum_(inner), 0.5 / n)


def elbo_loss(target, pred, mu, logvar, weights: LossWeights):
    recon = bce_loss(target, pred)
    kl = kl_loss(mu, logvar)
    total = ad.add(ad.mul(recon, weights.lambda_recon), ad.mul(kl, weights.lambda_kl))
    return total, recon, kl


# -- optimizer ---------------------------------------------------------------


class AdaBelief:
    """AdaBelief: Adam-shaped updates scaled by the belief (g - m)^2 instead
    of g^2, with eps folded into the second moment each step."""

    def __init__(self, tensors, config: OptimizerConfig = OptimizerConfig()):
        self.tensors = list(tensors)
        self.cfg = config
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.tensors]
        self.s = [np.zeros_like(p.data) for p in self.tensors]

    def step(self):
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for p, m, s in zip(self.tensors, self.m, self.s):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient("gradient contains NaN or Inf")
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            diff = g - m
            s *= cfg.beta2
            s += (1.0 - cfg.beta2) * diff * diff + cfg.eps
            m_hat = m / bc1
            s_hat = s / bc2
            p.data = p.data - cfg.lr * m_hat / (np.sqrt(s_hat) + cfg.eps)


def zero_grads(tensors):
    for t in tensors:
        t.zero_grad()


class EpochLog:
    """Tab-separated per-epoch training log: stage, epoch, loss components."""

    def __init__(self, path=None):
        self.path = path
        self.rows = []
        if path is not None:
            with open(path, "w") as f:
                f.write("stage\tepoch\t" + "\t".join(["loss", "recon", "kl"]) + "\n")

    def record(self, stage, epoch, loss, recon=float("nan"), kl=float("nan")):
        row = (stage, epoch, float(loss), float(recon), float(kl))
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a") as f:
                f.write(f"{stage}\t{epoch}\t{row[2]!r}\t{row[3]!r}\t{row[4]!r}\n")


# -- stage 1: encoder + decoder ----------------------------------------------


def stage1_train(dataset: AugmentedDataset, schedule: Schedule = Schedule(),
                 weights: LossWeights = LossWeights(), seed: int = 0,
                 params: M.LavaeParams | None = None,
                 optimizer: OptimizerConfig = OptimizerConfig(),
                 cfg: M.ModelConfig | None = None, log: EpochLog | None = None) -> M.LavaeParams:
    """Train encoder/decoder on all four categories pooled; returns params."""
    if params is None:
        params = M.init_lavae(derive_seed(seed, "init"), cfg or M.ModelConfig())
    images = dataset.pooled()
    n = images.shape[0]
    plan = BatchPlan(schedule.batch_size, derive_seed(seed, "batch/stage1"))
    noise_rng = np.random.default_rng(derive_seed(seed, "reparam/stage1"))
    tensors = list(params.encoder.tensors().values()) + list(params.decoder.tensors().values())
    opt = AdaBelief(tensors, optimizer)
    latent = params.cfg.latent_dim
    for epoch in range(schedule.stage1_epochs):
        tot = rec = kl_sum = 0.0
        for idx in batch_iterator(n, plan, epoch):
            x = images[idx]
            noise = noise_rng.standard_normal((len(idx), latent)).astype(np.float32)
            mu, logvar = M.encode(params.encoder, x)
            z = M.reparameterize(mu, logvar, noise)
            out = M.decode(params.decoder, z)
            target = ad.Tensor(x.reshape(out.data.shape))
            loss, recon, kl = elbo_loss(target, out, mu, logvar, weights)
            zero_grads(tensors)
            loss.backward()
            opt.step()
            b = len(idx)
            tot += float(loss.data) * b
            rec += float(recon.data) * b
            kl_sum += float(kl.data) * b
        if log:
            log.record(1, epoch, tot / n, rec / n, kl_sum / n)
    params.meta.update(stage=1, epochs=schedule.stage1_epochs, seed=seed,
                       pair=dataset.pair.label)
    return params


def pooled_elbo(params: M.LavaeParams, dataset: AugmentedDataset,
                weights: LossWeights = LossWeights(), batch=512):
    """Noise-free ELBO over the pooled dataset (monitoring helper)."""
    images = dataset.pooled()
    tot = 0.0
    for i in range(0, images.shape[0], batch):
        x = images[i:i + batch]
        mu, logvar = M.encode(params.encoder, x)
        out = M.decode(params.decoder, mu.data)
        loss, _, _ = elbo_loss(ad.Tensor(x.reshape(out.data.shape)), out,
                               ad.Tensor(mu.data), ad.Tensor(logvar.data), weights)
        tot += float(loss.data) * x.shape[0]
    return tot / images.shape[0]


# -- stage 2: latent transforms ----------------------------------------------


def transform_lstsq(z_orig, z_aug):
    """Closed-form normal-equations solution of min ||Z0 L - Zk||^2."""
    z_orig = np.asarray(z_orig, dtype=np.float64)
    z_aug = np.asarray(z_aug, dtype=np.float64)
    gram = z_orig.T @ z_orig
    return np.linalg.solve(gram, z_orig.T @ z_aug)


def fit_latent_transforms(z_orig, z_targets, transforms, schedule: Schedule = Schedule(),
                          seed: int = 0, optimizer: OptimizerConfig = OptimizerConfig(),
                          log: EpochLog | None = None):
    """Minibatch AdaBelief fit of z_orig . L_k ~= z_targets[k] for each k."""
    dtype = transforms[0].data.dtype
    z0 = np.asarray(z_orig, dtype=dtype)
    targets = [np.asarray(t, dtype=dtype) for t in z_targets]
    n = z0.shape[0]
    plan = BatchPlan(schedule.batch_size, derive_seed(seed, "batch/stage2"))
    opt = AdaBelief(transforms, optimizer)
    for epoch in range(schedule.stage2_epochs):
        tot = 0.0
        for idx in batch_iterator(n, plan, epoch):
            zb = ad.Tensor(z0[idx])
            loss = None
            for L, zt in zip(transforms, targets):
                err = ad.add(ad.matmul(zb, L), ad.Tensor(-zt[idx]))
                term = ad.mul(ad.sum_(ad.square(err)), 1.0 / len(idx))
                loss = term if loss is None else ad.add(loss, term)
            zero_grads(transforms)
            loss.backward()
            opt.step()
            tot += float(loss.data) * len(idx)
        if log:
            log.record(2, epoch, tot / n)
    return transforms


def stage2_fit_transforms(dataset: AugmentedDataset, params: M.LavaeParams,
                          schedule: Schedule = Schedule(), seed: int = 0,
                          optimizer: OptimizerConfig = OptimizerConfig(),
                          log: EpochLog | None = None) -> M.LavaeParams:
    """Fit the two latent transforms on frozen posterior means by AdaBelief.

    Minimizes sum_k ||mu(f_k(x0)) - mu(x0) . L_k||^2; the composed product
    L1 . L2 is never trained.
    """
    z0 = M.encode_mean(params.encoder, dataset.originals.pixels)
    targets = [M.encode_mean(params.encoder, dataset.aug1.pixels),
               M.encode_mean(params.encoder, dataset.aug2.pixels)]
    fit_latent_transforms(z0, targets, params.transforms, schedule, seed,
                          optimizer, log)
    params.meta.update(stage=2, stage2_epochs=schedule.stage2_epochs)
    return params


# -- stage 3: transfer decoder heads ------------------------------------------


def stage3_train_transfer(dataset_target: AugmentedDataset, params: M.LavaeParams,
                          schedule: Schedule = Schedule(), seed: int = 0,
                          optimizer: OptimizerConfig = OptimizerConfig(),
                          log: EpochLog | None = None,
                          head_name: str | None = None) -> M.DecoderParams:
    """Train a fresh decoder head against a new augmentation pair.

    The frozen transforms map original latents to the slots of the new
    pair's categories: identity -> originals, L_k -> k-th new augmentation,
    L1 . L2 -> the new pair's composition.
    """
    head_name = head_name or dataset_target.pair.label
    head = M.init_decoder_head(derive_seed(seed, f"init/transfer/{head_name}"), params.cfg)
    z0 = M.encode_mean(params.encoder, dataset_target.originals.pixels).astype(np.float64)
    l1 = params.transforms[0].data.astype(np.float64)
    l2 = params.transforms[1].data.astype(np.float64)
    latents = np.concatenate([
        z0, z0 @ l1, z0 @ l2, z0 @ l1 @ l2,
    ]).astype(np.float32)
    targets = dataset_target.pooled()
    n = latents.shape[0]
    plan = BatchPlan(schedule.batch_size, derive_seed(seed, f"batch/transfer/{head_name}"))
    tensors = list(head.tensors().values())
    opt = AdaBelief(tensors, optimizer)
    for epoch in range(schedule.stage3_epochs):
        tot = 0.0
        for idx in batch_iterator(n, plan, epoch):
            out = M.decode(head, latents[idx])
            target = ad.Tensor(targets[idx].reshape(out.data.shape))
            loss = bce_loss(target, out)
            zero_grads(tensors)
            loss.backward()
            opt.step()
            tot += float(loss.data) * len(idx)
        if log:
            log.record(3, epoch, tot / n)
    params.add_transfer_head(head_name, head)
    return head


def transfer_bce(head: M.DecoderParams, params: M.LavaeParams,
                 dataset_target: AugmentedDataset, batch=512):
    """Pooled BCE of a transfer head over the four target categories."""
    z0 = M.encode_mean(params.encoder, dataset_target.originals.pixels).astype(np.float64)
    l1 = params.transforms[0].data.astype(np.float64)
    l2 = params.transforms[1].data.astype(np.float64)
    latents = np.concatenate([z0, z0 @ l1, z0 @ l2, z0 @ l1 @ l2]).astype(np.float32)
    targets = dataset_target.pooled()
    tot = 0.0
    for i in range(0, latents.shape[0], batch):
        out = M.decode(head, latents[i:i + batch])
        t = targets[i:i + batch].reshape(out.data.shape)
        tot += float(bce_loss(ad.Tensor(t), out).data) * out.data.shape[0]
    return tot / latents.shape[0]


# -- CVAE baselines ------------------------------------------------------------


CVAE_MODES = ("traditional", "aug_invariant")

# category order fixed: index doubles as the one-hot class
CVAE_CLASSES = ("orig", "aug1", "aug2", "comp")


def onehot(indices, width=4):
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros((indices.size, width), dtype=np.float32)
    out[np.arange(indices.size), indices] = 1.0
    return out


def train_cvae(dataset: AugmentedDataset, mode: str,
               schedule: Schedule = Schedule(), weights: LossWeights = LossWeights(),
               seed: int = 0, optimizer: OptimizerConfig = OptimizerConfig(),
               cfg: M.ModelConfig | None = None,
               log: EpochLog | None = None) -> M.CvaeParams:
    """Train a CVAE with the augmentation class as the conditional.

    traditional: reconstruct each category conditioned on its own class.
    aug_invariant: every (source, target) pair over {orig, aug1, aug2} —
    encode the source with its class, decode with the target's class
    against the target image, forcing an augmentation-invariant latent.
    """
    if mode not in CVAE_MODES:
        raise ValueError(f"mode must be one of {CVAE_MODES}, got {mode!r}")
    if cfg is None:
        cfg = M.ModelConfig(cond_dim=4)
    params = M.init_cvae(derive_seed(seed, f"init/cvae/{mode}"), cfg)
    stacks = [dataset.originals.pixels, dataset.aug1.pixels,
              dataset.aug2.pixels, dataset.composed.pixels]
    n_img = dataset.count

    if mode == "traditional":
        images = np.concatenate(stacks)
        src_cls = np.repeat(np.arange(4), n_img)
        tgt_images, tgt_cls = images, src_cls
        src_images = images
    else:
        # all ordered (source, target) combinations over the three
        # singly-augmented categories; the composed class is never trained
        src_images, src_cls, tgt_images, tgt_cls = [], [], [], []
        for i in range(3):
            for j in range(3):
                src_images.append(stacks[i])
                tgt_images.append(stacks[j])
                src_cls.append(np.full(n_img, i))
                tgt_cls.append(np.full(n_img, j))
        src_images = np.concatenate(src_images)
        tgt_images = np.concatenate(tgt_images)
        src_cls = np.concatenate(src_cls)
        tgt_cls = np.concatenate(tgt_cls)

    src_onehot = onehot(src_cls, cfg.cond_dim)
    tgt_onehot = onehot(tgt_cls, cfg.cond_dim)
    n = src_images.shape[0]
    plan = BatchPlan(schedule.batch_size, derive_seed(seed, f"batch/cvae/{mode}"))
    noise_rng = np.random.default_rng(derive_seed(seed, f"reparam/cvae/{mode}"))
    tensors = list(params.encoder.tensors().values()) + list(params.decoder.tensors().values())
    opt = AdaBelief(tensors, optimizer)
    for epoch in range(schedule.stage1_epochs):
        tot = rec = kl_sum = 0.0
        for idx in batch_iterator(n, plan, epoch):
            x = src_images[idx]
            noise = noise_rng.standard_normal((len(idx), cfg.latent_dim)).astype(np.float32)
            mu, logvar = M.encode(params.encoder, x, src_onehot[idx])
            z = M.reparameterize(mu, logvar, noise)
            out = M.decode(params.decoder, z, tgt_onehot[idx])
            target = ad.Tensor(tgt_images[idx].reshape(out.data.shape))
            loss, recon, kl = elbo_loss(target, out, mu, logvar, weights)
            zero_grads(tensors)
            loss.backward()
            opt.step()
            b = len(idx)
            tot += float(loss.data) * b
            rec += float(recon.data) * b
            kl_sum += float(kl.data) * b
        if log:
            log.record(1, epoch, tot / n, rec / n, kl_sum / n)
    params.meta.update(mode=mode, epochs=schedule.stage1_epochs, seed=seed,
                       pair=dataset.pair.label)
    return params
