"""VIS-to-NIR face translation toolkit.

Subpackages cover the face feature extractor backbone, the two translation
generators and their patch critics, the four-term training objective, paired
synthetic data with subject-disjoint protocol splits, the training loop with
resumable checkpoints, and the verification metrics (Rank-1, TAR@FAR).
"""

from .backbone import FaceFeatureExtractor, FFEConfig, pretrain_ffe
from .data import (
    PairedSample,
    ProtocolSplit,
    SyntheticSpec,
    generate_synthetic_dataset,
    load_batch,
    make_split,
    spectral_proxy_transform,
)
from .discriminator import DiscriminatorConfig, PatchDiscriminator
from .evaluation import EvalReport, ScoreMatrix, build_score_matrix, rank1, tar_at_far
from .generator import Generator, GeneratorConfig, ResidualTranslator
from .losses import (
    LossRecord,
    LossWeights,
    cycle_loss,
    lsgan_loss_discriminator,
    lsgan_loss_generator,
    pixel_consistency_loss,
    total_objective,
)
from .training import ImagePool, TrainConfig, train_loop, train_step

__all__ = [
    "FaceFeatureExtractor",
    "FFEConfig",
    "pretrain_ffe",
    "PairedSample",
    "ProtocolSplit",
    "SyntheticSpec",
    "generate_synthetic_dataset",
    "load_batch",
    "make_split",
    "spectral_proxy_transform",
    "DiscriminatorConfig",
    "PatchDiscriminator",
    "EvalReport",
    "ScoreMatrix",
    "build_score_matrix",
    "rank1",
    "tar_at_far",
    "Generator",
    "GeneratorConfig",
    "ResidualTranslator",
    "LossRecord",
    "LossWeights",
    "cycle_loss",
    "lsgan_loss_discriminator",
    "lsgan_loss_generator",
    "pixel_consistency_loss",
    "total_objective",
    "ImagePool",
    "TrainConfig",
    "train_loop",
    "train_step",
]

__version__ = "0.1.0"
