from .checkpoint import init_params, load_checkpoint, load_model, param_count, save_checkpoint
from .config import ARCH_PRESETS, DIFFUSION_ARCHS, ModelConfig
from .meta import CDCNN, CDT, ContextEncoding, Diffuser, RoboMorph, build_model, encode_context

__all__ = [
    "ARCH_PRESETS", "CDCNN", "CDT", "ContextEncoding", "DIFFUSION_ARCHS", "Diffuser", "ModelConfig",
    "RoboMorph", "build_model", "encode_context", "init_params", "load_checkpoint", "load_model",
    "param_count", "save_checkpoint",
]
