"""Interactive image segmentation with unified 1-D Gaussian prompt vectors."""

from .losses import LossConfig
from .model import ModelConfig, init_params, load_checkpoint, model_forward, save_checkpoint
from .pue import EncoderConfig, ImagePlane, Prompt, PromptKind, PromptVector, encode_prompt
from .interact import ProtocolConfig, aggregate_metrics, compute_iou, run_session
from .harness import TrainConfig, evaluate, gradient_check, train

__all__ = [
    "LossConfig", "ModelConfig", "init_params", "load_checkpoint",
    "model_forward", "save_checkpoint", "EncoderConfig", "ImagePlane",
    "Prompt", "PromptKind", "PromptVector", "encode_prompt",
    "ProtocolConfig", "aggregate_metrics", "compute_iou", "run_session",
    "TrainConfig", "evaluate", "gradient_check", "train",
]
