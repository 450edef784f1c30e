"""Latent augmentation VAE: learned linear latent transforms that apply,
compose and invert image augmentations inside a VAE's latent space."""

from .augmentations import (AugmentationPair, AugmentationSpec, apply_spec,
                            canny_edge, make_pair, nested_mini,
                            permute_flip_rotate, shear_x)
from .dataset import (AugmentedDataset, BatchPlan, ImageSet, batch_iterator,
                      build_augmented_dataset, load_idx_images, load_idx_labels,
                      parse_idx_images, parse_idx_labels,
                      serialize_idx_images, serialize_idx_labels)
from .evaluation import (HeatmapMatrix, MseTable, build_mse_table, export_grid,
                         ica_project, pca_project, recon_error, transfer_heatmap)
from .latent_ops import (Trajectory, TransformSequence, TransformStep,
                         interpolate, latent_apply, latent_invert,
                         latent_pipeline, recursive_trajectory, sample_bbox)
from .model import (CvaeParams, LavaeParams, ModelConfig, decode, encode,
                    encode_mean, init_cvae, init_lavae, load_checkpoint,
                    reparameterize, save_checkpoint)
from .training import (AdaBelief, LossWeights, OptimizerConfig, Schedule,
                       bce_loss, fit_latent_transforms, kl_loss, stage1_train,
                       stage2_fit_transforms, stage3_train_transfer,
                       train_cvae, transform_lstsq)

__version__ = "0.1.0"
