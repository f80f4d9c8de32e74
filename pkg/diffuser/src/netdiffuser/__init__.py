"""netdiffuser: conditional graph-diffusion planner for chain placement."""

from .config import DiffuserConfig
from .data import StateLayout, TrajectoryBatch, dequantize, quantize, read_trajectories
from .models import InverseDynamics, NoiseModel
from .sampling import StepRecord, extract_action, forward_noise, sample
from .schedule import DiffusionSchedule, cosine_alpha_bar
from .serve import BridgeServer, serve_in_thread
from .training import ModelBundle, load_checkpoint, save_checkpoint, train

__all__ = [
    "DiffuserConfig",
    "StateLayout", "TrajectoryBatch", "read_trajectories", "quantize", "dequantize",
    "NoiseModel", "InverseDynamics",
    "DiffusionSchedule", "cosine_alpha_bar",
    "forward_noise", "sample", "extract_action", "StepRecord",
    "ModelBundle", "train", "save_checkpoint", "load_checkpoint",
    "BridgeServer", "serve_in_thread",
]

__version__ = "0.1.0"
