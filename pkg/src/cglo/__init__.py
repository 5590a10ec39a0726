"""Conditional generative latent optimization (C-GLO) on a small numpy autodiff core."""

from .generator import GeneratorConfig, GeneratorParams, forward, forward_batch, init_params
from .synthesis import AugmentPlan, BoundingBox, InvertConfig, SceneImage, augment_scene, switch_condition
from .trainer import LatentTable, LossHistory, TrainConfig, invert, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
