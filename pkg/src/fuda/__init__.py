"""Few-shot unsupervised domain adaptation for 2-D segmentation.

Pipeline: pretrain an AdaIN-based stylizer with a latent style VAE on
source-content and auxiliary-style images, then train a dilated-residual
U-Net on source images plus target-style renderings whose style codes are
adversarially pushed uphill on the segmentation loss.
"""

from .adain import FeatureMoments, adain, channel_moments
from .config import RunConfig, load_config, save_config
from .metrics import MetricsReport, dice, evaluate, hausdorff
from .phantom import gen_phantom
from .preprocess import affine_augment, center_crop, minmax_normalize
from .rain import RainNetworks, StyleDistribution, rain_loss, sample_style_code
from .seg_losses import ce_loss, consistency_loss, jaccard_loss, seg_total_loss
from .segmenter import DRUNet, SegOutput
from .slices import Dataset, LabelMask, Modality, Slice, SliceRecord

__all__ = [
    "FeatureMoments", "adain", "channel_moments",
    "RunConfig", "load_config", "save_config",
    "MetricsReport", "dice", "evaluate", "hausdorff",
    "gen_phantom",
    "affine_augment", "center_crop", "minmax_normalize",
    "RainNetworks", "StyleDistribution", "rain_loss", "sample_style_code",
    "ce_loss", "consistency_loss", "jaccard_loss", "seg_total_loss",
    "DRUNet", "SegOutput",
    "Dataset", "LabelMask", "Modality", "Slice", "SliceRecord",
]

__version__ = "0.1.0"
