"""Skip low-detail video patches during transformer super-resolution."""
from .codec import LatentTensor, decode, encode, latent_swap
from .metrics import psnr, ssim
from .oracle import SkipMask, oracle_mask, patch_mse, threshold_sweep
from .predictor import PredictorNet, TrainConfig, predict_mask, train
from .resample import area_downsample, bilinear_upsample
from .skipdit import DiTConfig, DiTWeights, compose_output, dit_forward, tokenize
from .vidio import compose_patches, extract_patches, load_video, save_video

__all__ = [
    "DiTConfig", "DiTWeights", "LatentTensor", "PredictorNet", "SkipMask", "TrainConfig",
    "area_downsample", "bilinear_upsample", "compose_output", "compose_patches", "decode",
    "dit_forward", "encode", "extract_patches", "latent_swap", "load_video", "oracle_mask",
    "patch_mse", "predict_mask", "psnr", "save_video", "ssim", "threshold_sweep", "tokenize",
    "train",
]
__version__ = "0.1.0"
