"""Command-line entry point: training stages, baselines, evaluation and
figure export driven by a JSON config whose defaults reproduce the full
training schedule (100/60/100 epochs, batch 64, AdaBelief at 1e-4).

Subcommands: train, fit-transforms, transfer, cvae-train, eval-table,
heatmap, augment, sample, interpolate, recurse, project, export-grid.
Every command is deterministic given (config, seed): re-running writes
byte-identical checkpoints and metric files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import evaluation as E
from . import latent_ops as L
from . import model as M
from . import training as T
from .augmentations import AugmentationPair, make_pair
from .dataset import AugmentedDataset, build_augmented_dataset, load_idx_images, load_idx_labels


class ConfigInvalid(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    train_images: str = "data/train-images-idx3-ubyte.gz"
    train_labels: str = "data/train-labels-idx1-ubyte.gz"
    test_images: str = "data/t10k-images-idx3-ubyte.gz"
    test_labels: str = "data/t10k-labels-idx1-ubyte.gz"
    pair: str = "flips"
    target_pair: str = "nested_shear"
    stage1_epochs: int = 100
    stage2_epochs: int = 60
    stage3_epochs: int = 100
    batch_size: int = 64
    lambda_kl: float = 5.0
    lambda_recon: float = 1.0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-16
    channels: tuple = (32, 64)
    latent_dim: int = 16
    subset: int | None = None
    eval_subset: int | None = None
    out_dir: str = "out"
    model: str = "lavae"  # lavae | cvae_trad | cvae_auginv
    heatmap_pairs: tuple = ("flips", "nested_shear", "shear_canny")

    @classmethod
    def load(cls, path):
        try:
            with open(path) as f:
                raw = json.load(f)
        except OSError as e:
            raise ConfigInvalid(f"cannot read config {path}: {e}") from None
        except ValueError as e:
            raise ConfigInvalid(f"config {path} is not valid JSON: {e}") from None
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        cfg._normalize()
        return cfg

    def _normalize(self):
        self.channels = tuple(self.channels)
        self.heatmap_pairs = tuple(self.heatmap_pairs)
        if self.model not in ("lavae", "cvae_trad", "cvae_auginv"):
            raise ConfigInvalid(f"unknown model {self.model!r}")

    def schedule(self) -> T.Schedule:
        return T.Schedule(self.stage1_epochs, self.stage2_epochs,
                          self.stage3_epochs, self.batch_size)

    def weights(self) -> T.LossWeights:
        return T.LossWeights(self.lambda_kl, self.lambda_recon)

    def optimizer(self) -> T.OptimizerConfig:
        return T.OptimizerConfig(self.lr, self.beta1, self.beta2, self.eps)

    def model_config(self, cond_dim=0) -> M.ModelConfig:
        return M.ModelConfig(channels=tuple(self.channels),
                             latent_dim=self.latent_dim, cond_dim=cond_dim)

    def make_pair(self, which="pair") -> AugmentationPair:
        try:
            return make_pair(getattr(self, which))
        except ValueError as e:
            raise ConfigInvalid(str(e)) from None

    def require_paths(self, *names):
        for name in names:
            path = getattr(self, name)
            if not os.path.exists(path):
                raise ConfigInvalid(f"{name} path does not exist: {path}")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for name in ("seed", "subset", "out_dir", "model"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    if getattr(args, "pair", None):
        cfg.pair = args.pair
    if getattr(args, "target_pair", None):
        cfg.target_pair = args.target_pair
    if getattr(args, "epochs", None) is not None:
        cfg.stage1_epochs = cfg.stage2_epochs = cfg.stage3_epochs = args.epochs
    cfg._normalize()
    return cfg


def _train_originals(cfg: RunConfig):
    cfg.require_paths("train_images")
    images = load_idx_images(cfg.train_images)
    if cfg.subset:
        images = images.subset(cfg.subset)
    return images


def _test_originals(cfg: RunConfig):
    cfg.require_paths("test_images")
    images = load_idx_images(cfg.test_images)
    if cfg.eval_subset:
        images = images.subset(cfg.eval_subset)
    return images


def _outpath(cfg, name):
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


# -- training commands -------------------------------------------------------


def cmd_train(args):
    cfg = _load_config(args)
    data = build_augmented_dataset(_train_originals(cfg), cfg.make_pair())
    log = T.EpochLog(_outpath(cfg, "stage1.log"))
    params = T.stage1_train(data, cfg.schedule(), cfg.weights(), cfg.seed,
                            optimizer=cfg.optimizer(), cfg=cfg.model_config(), log=log)
    path = _outpath(cfg, "lavae.ckpt")
    M.save_checkpoint(params, path)
    print(f"wrote {path}")
    return 0


def cmd_fit_transforms(args):
    cfg = _load_config(args)
    params = _load_lavae(args.checkpoint or _outpath(cfg, "lavae.ckpt"))
    data = build_augmented_dataset(_train_originals(cfg), cfg.make_pair())
    log = T.EpochLog(_outpath(cfg, "stage2.log"))
    T.stage2_fit_transforms(data, params, cfg.schedule(), cfg.seed,
                            optimizer=cfg.optimizer(), log=log)
    path = _outpath(cfg, "lavae.ckpt")
    M.save_checkpoint(params, path)
    print(f"wrote {path}")
    return 0


def cmd_transfer(args):
    cfg = _load_config(args)
    params = _load_lavae(args.checkpoint or _outpath(cfg, "lavae.ckpt"))
    target = cfg.make_pair("target_pair")
    data = build_augmented_dataset(_train_originals(cfg), target)
    log = T.EpochLog(_outpath(cfg, f"stage3_{target.label}.log"))
    T.stage3_train_transfer(data, params, cfg.schedule(), cfg.seed,
                            optimizer=cfg.optimizer(), log=log)
    path = _outpath(cfg, "lavae.ckpt")
    M.save_checkpoint(params, path)
    test_data = build_augmented_dataset(_test_originals(cfg), target)
    cats = E.lavae_category_errors(params, test_data, head=target.label)
    table = E.MseTable()
    table.add(f"transfer:{target.label}", cats)
    table.write_tsv(_outpath(cfg, f"transfer_{target.label}.tsv"))
    print(f"wrote {path}")
    return 0


def cmd_cvae_train(args):
    cfg = _load_config(args)
    if cfg.model not in ("cvae_trad", "cvae_auginv"):
        raise ConfigInvalid("cvae-train needs model cvae_trad or cvae_auginv")
    mode = "traditional" if cfg.model == "cvae_trad" else "aug_invariant"
    data = build_augmented_dataset(_train_originals(cfg), cfg.make_pair())
    log = T.EpochLog(_outpath(cfg, f"{cfg.model}.log"))
    params = T.train_cvae(data, mode, cfg.schedule(), cfg.weights(), cfg.seed,
                          optimizer=cfg.optimizer(),
                          cfg=cfg.model_config(cond_dim=4), log=log)
    path = _outpath(cfg, f"{cfg.model}.ckpt")
    M.save_checkpoint(params, path)
    print(f"wrote {path}")
    return 0


# -- evaluation commands -------------------------------------------------------


def _load_lavae(path) -> M.LavaeParams:
    if not os.path.exists(path):
        raise ConfigInvalid(f"checkpoint does not exist: {path}")
    params = M.load_checkpoint(path)
    if not isinstance(params, M.LavaeParams):
        raise ConfigInvalid(f"{path} is not a latent-transform model checkpoint")
    return params


def _load_cvae(path) -> M.CvaeParams:
    if not os.path.exists(path):
        raise ConfigInvalid(f"checkpoint does not exist: {path}")
    params = M.load_checkpoint(path)
    if not isinstance(params, M.CvaeParams):
        raise ConfigInvalid(f"{path} is not a CVAE checkpoint")
    return params


def cmd_eval_table(args):
    cfg = _load_config(args)
    models = {}
    if args.lavae:
        models["lavae"] = _load_lavae(args.lavae)
    if args.cvae_trad:
        models["cvae_trad"] = _load_cvae(args.cvae_trad)
    if args.cvae_auginv:
        models["cvae_auginv"] = _load_cvae(args.cvae_auginv)
    if not models:
        raise ConfigInvalid("eval-table needs at least one checkpoint")
    data = build_augmented_dataset(_test_originals(cfg), cfg.make_pair())
    table = E.build_mse_table(models, data)
    path = _outpath(cfg, "table.tsv")
    table.write_tsv(path)
    for name, row in table.rows.items():
        print(name, "\t".join(f"{v:.2f}" for v in row))
    print(f"wrote {path}")
    return 0


def cmd_heatmap(args):
    cfg = _load_config(args)
    pairs = [make_pair(p) for p in cfg.heatmap_pairs]
    train_orig = _train_originals(cfg)
    test_orig = _test_originals(cfg)

    def initial_trainer(pair):
        data = build_augmented_dataset(train_orig, pair)
        params = T.stage1_train(data, cfg.schedule(), cfg.weights(), cfg.seed,
                                optimizer=cfg.optimizer(), cfg=cfg.model_config())
        T.stage2_fit_transforms(data, params, cfg.schedule(), cfg.seed,
                                optimizer=cfg.optimizer())
        test_data = build_augmented_dataset(test_orig, pair)
        baseline = sum(E.lavae_category_errors(params, test_data))
        return params, baseline

    def transfer_runner(params, target):
        data = build_augmented_dataset(train_orig, target)
        T.stage3_train_transfer(data, params, cfg.schedule(), cfg.seed,
                                optimizer=cfg.optimizer())
        test_data = build_augmented_dataset(test_orig, target)
        return sum(E.lavae_category_errors(params, test_data, head=target.label))

    heatmap = E.transfer_heatmap(pairs, initial_trainer, transfer_runner)
    heatmap.write_csv(_outpath(cfg, "heatmap.csv"))
    heatmap.write_flags(_outpath(cfg, "heatmap_flags.txt"))
    print(f"wrote {_outpath(cfg, 'heatmap.csv')}")
    return 0


# -- figure commands --------------------------------------------------------------


def _parse_indices(text, limit):
    try:
        indices = [int(t) for t in text.split(",") if t.strip() != ""]
    except ValueError:
        raise ConfigInvalid(f"bad index list {text!r}") from None
    for i in indices:
        if not 0 <= i < limit:
            raise ConfigInvalid(f"index {i} out of range 0..{limit - 1}")
    return indices


def cmd_augment(args):
    cfg = _load_config(args)
    params = _load_lavae(args.checkpoint or _outpath(cfg, "lavae.ckpt"))
    pair = cfg.make_pair()
    test = _test_originals(cfg)
    indices = _parse_indices(args.indices, test.count)
    data = build_augmented_dataset(test.subset(indices), pair)
    l1, l2 = (t.data.astype(np.float64) for t in params.transforms)
    z = M.encode_mean(params.encoder, data.originals.pixels).astype(np.float64)

    def dec(zz):
        return M.decode_images(params.decoder, zz.astype(np.float32))

    tiles, labels = [], []
    if args.mode == "forward":
        columns = [
            ("input", data.originals.pixels), ("aug1 image-space", data.aug1.pixels),
            ("aug1 latent", dec(z @ l1)), ("aug2 image-space", data.aug2.pixels),
            ("aug2 latent", dec(z @ l2)), ("comp image-space", data.composed.pixels),
            ("comp latent", dec(z @ l1 @ l2)),
        ]
    elif args.mode == "inverse":
        z1 = M.encode_mean(params.encoder, data.aug1.pixels).astype(np.float64)
        z2 = M.encode_mean(params.encoder, data.aug2.pixels).astype(np.float64)
        zc = M.encode_mean(params.encoder, data.composed.pixels).astype(np.float64)
        columns = [
            ("original", data.originals.pixels),
            ("aug1 input", data.aug1.pixels), ("inverted aug1", dec(z1 @ L.latent_invert(l1))),
            ("aug2 input", data.aug2.pixels), ("inverted aug2", dec(z2 @ L.latent_invert(l2))),
            ("comp input", data.composed.pixels), ("inverted comp", dec(zc @ L.latent_invert(l1 @ l2))),
        ]
    else:  # reverse-compose
        columns = [
            ("input", data.originals.pixels), ("comp image-space", data.composed.pixels),
            ("forward L1.L2", dec(z @ l1 @ l2)), ("reverse L2.L1", dec(z @ l2 @ l1)),
        ]
    for row in range(len(indices)):
        for name, stack in columns:
            tiles.append(stack[row])
            labels.append(f"{row}:{name}")
    path = _outpath(cfg, f"augment_{args.mode}.pgm")
    E.export_grid(tiles, len(indices), len(columns), path, labels=labels)
    print(f"wrote {path}")
    return 0


def cmd_sample(args):
    cfg = _load_config(args)
    params = _load_lavae(args.checkpoint or _outpath(cfg, "lavae.ckpt"))
    train = _train_originals(cfg)
    z_train = M.encode_mean(params.encoder, train.pixels).astype(np.float64)
    zs = L.sample_bbox(z_train, args.count, T.derive_seed(cfg.seed, "sample"))
    l1, l2 = (t.data.astype(np.float64) for t in params.transforms)
    tiles, labels = [], []
    for k, z in enumerate(zs):
        for name, zz in (("sample", z), ("aug1", z @ l1), ("aug2", z @ l2),
                         ("comp", z @ l1 @ l2)):
            tiles.append(M.decode_images(params.decoder, zz[None].astype(np.float32))[0])
            labels.append(f"{k}:{name}")
    path = _outpath(cfg, "samples.pgm")
    E.export_grid(tiles, args.count, 4, path, labels=labels)
    np.savetxt(_outpath(cfg, "samples_latents.tsv"), zs, delimiter="\t")
    print(f"wrote {path}")
    return 0


def cmd_interpolate(args):
    cfg = _load_config(args)
    params = _load_lavae(args.checkpoint or _outpath(cfg, "lavae.ckpt"))
    test = _test_originals(cfg)
    ia, ib = _parse_indices(f"{args.index_a},{args.index_b}", test.count)
    frames = L.interpolate(params, test.pixels[ia], test.pixels[ib], args.steps)
    tiles = list(frames)
    labels = [f"t={k / (args.steps - 1):.3f}" for k in range(args.steps)]
    rows = 1
    if args.with_augs:
        l1, l2 = (t.data.astype(np.float64) for t in params.transforms)
        z = M.encode_mean(params.encoder, np.stack([test.pixels[ia], test.pixels[ib]])).astype(np.float64)
        ts = np.linspace(0, 1, args.steps)
        zs = (1 - ts)[:, None] * z[0] + ts[:, None] * z[1]
        for name, mat in (("aug1", l1), ("aug2", l2)):
            tiles.extend(M.decode_images(params.decoder, (zs @ mat).astype(np.float32)))
            labels.extend(f"{name} t={k / (args.steps - 1):.3f}" for k in range(args.steps))
        rows = 3
    path = _outpath(cfg, "interpolation.pgm")
    E.export_grid(tiles, rows, args.steps, path, labels=labels)
    print(f"wrote {path}")
    return 0


def cmd_recurse(args):
    cfg = _load_config(args)
    params = _load_lavae(args.checkpoint or _outpath(cfg, "lavae.ckpt"))
    test = _test_originals(cfg)
    idx = _parse_indices(str(args.index), test.count)[0]
    transform = params.transforms[args.transform - 1].data
    traj = L.recursive_trajectory(params, test.pixels[idx], transform, args.steps)
    path = _outpath(cfg, f"recursion_{idx}.pgm")
    E.export_grid(list(traj.images), 1, args.steps + 1, path,
                  labels=[f"step {k}" for k in range(args.steps + 1)])
    np.savetxt(_outpath(cfg, f"recursion_{idx}_latents.tsv"), traj.latents, delimiter="\t")
    # project the path onto axes fitted to the test set's original codes
    z_all = M.encode_mean(params.encoder, test.pixels).astype(np.float64)
    _, components = E.pca_project(z_all)
    path2d = (traj.latents - z_all.mean(axis=0)) @ components.T
    np.savetxt(_outpath(cfg, f"recursion_{idx}_path2d.tsv"), path2d, delimiter="\t")
    print(f"wrote {path}")
    return 0


def cmd_project(args):
    cfg = _load_config(args)
    params = _load_lavae(args.checkpoint or _outpath(cfg, "lavae.ckpt"))
    data = build_augmented_dataset(_test_originals(cfg), cfg.make_pair())
    latents, cats = [], []
    for cat in AugmentedDataset.CATEGORIES:
        z = M.encode_mean(params.encoder, data.category(cat).pixels)
        latents.append(z)
        cats.extend([cat] * z.shape[0])
    z_all = np.concatenate(latents).astype(np.float64)
    written = []
    if args.method in ("pca", "both"):
        coords, _ = E.pca_project(z_all)
        written.append(("pca.tsv", coords))
    if args.method in ("ica", "both"):
        coords = E.ica_project(z_all, seed=T.derive_seed(cfg.seed, "ica"))
        written.append(("ica.tsv", coords))
    for name, coords in written:
        path = _outpath(cfg, name)
        with open(path, "w") as f:
            f.write("category\tx\ty\n")
            for cat, (x, y) in zip(cats, coords):
                f.write(f"{cat}\t{float(x)!r}\t{float(y)!r}\n")
        print(f"wrote {path}")
    return 0


def cmd_export_grid(args):
    cfg = _load_config(args)
    if not os.path.exists(args.images):
        raise ConfigInvalid(f"images path does not exist: {args.images}")
    images = load_idx_images(args.images)
    indices = _parse_indices(args.indices, images.count)
    labels = None
    if args.labels and os.path.exists(args.labels):
        labels = [str(v) for v in load_idx_labels(args.labels)[indices]]
    tiles = [images.pixels[i] for i in indices]
    rows = args.rows or 1
    cols = args.cols or len(indices)
    E.export_grid(tiles, rows, cols, args.out, labels=labels)
    print(f"wrote {args.out}")
    return 0


# -- argument parsing -----------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lavae",
        description="latent-augmentation VAE: train, evaluate and explore")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config; defaults reproduce the full schedule")
        p.add_argument("--seed", type=int)
        p.add_argument("--subset", type=int, help="train on the first N images only")
        p.add_argument("--epochs", type=int, help="override every stage's epoch count")
        p.add_argument("--pair", help="augmentation pair ('flips' or 'kind,kind')")
        p.add_argument("--target-pair", dest="target_pair")
        p.add_argument("--out", dest="out_dir")
        return p

    common(sub.add_parser("train", help="stage 1: train encoder/decoder"))
    p = common(sub.add_parser("fit-transforms", help="stage 2: fit latent transforms"))
    p.add_argument("--checkpoint")
    p = common(sub.add_parser("transfer", help="stage 3: train a transfer decoder head"))
    p.add_argument("--checkpoint")
    p = common(sub.add_parser("cvae-train", help="train a CVAE baseline"))
    p.add_argument("--model", choices=("cvae_trad", "cvae_auginv"))
    p = common(sub.add_parser("eval-table", help="per-category reconstruction errors"))
    p.add_argument("--lavae")
    p.add_argument("--cvae-trad", dest="cvae_trad")
    p.add_argument("--cvae-auginv", dest="cvae_auginv")
    common(sub.add_parser("heatmap", help="initial-pair vs transfer-pair error grid"))
    p = common(sub.add_parser("augment", help="latent-space augmentation grids"))
    p.add_argument("--checkpoint")
    p.add_argument("--indices", default="0,1,2,3")
    p.add_argument("--mode", choices=("forward", "inverse", "reverse-compose"),
                   default="forward")
    p = common(sub.add_parser("sample", help="bounding-box latent sampling"))
    p.add_argument("--checkpoint")
    p.add_argument("--count", type=int, default=8)
    p = common(sub.add_parser("interpolate", help="decode between two test images"))
    p.add_argument("--checkpoint")
    p.add_argument("--index-a", dest="index_a", type=int, default=0)
    p.add_argument("--index-b", dest="index_b", type=int, default=1)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--with-augs", dest="with_augs", action="store_true")
    p = common(sub.add_parser("recurse", help="repeated latent augmentation trajectory"))
    p.add_argument("--checkpoint")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--transform", type=int, choices=(1, 2), default=1)
    p = common(sub.add_parser("project", help="2-D latent projections"))
    p.add_argument("--checkpoint")
    p.add_argument("--method", choices=("pca", "ica", "both"), default="both")
    p = common(sub.add_parser("export-grid", help="tile IDX images into a PGM"))
    p.add_argument("--images", required=True)
    p.add_argument("--indices", default="0,1,2,3,4,5,6,7")
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--labels")
    p.add_argument("--out-file", dest="out", default="grid.pgm")
    return parser


COMMANDS = {
    "train": cmd_train,
    "fit-transforms": cmd_fit_transforms,
    "transfer": cmd_transfer,
    "cvae-train": cmd_cvae_train,
    "eval-table": cmd_eval_table,
    "heatmap": cmd_heatmap,
    "augment": cmd_augment,
    "sample": cmd_sample,
    "interpolate": cmd_interpolate,
    "recurse": cmd_recurse,
    "project": cmd_project,
    "export-grid": cmd_export_grid,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigInvalid as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (M.VersionMismatch, M.CorruptManifest, M.ShortPayload) as e:
        print(f"error: bad checkpoint: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
