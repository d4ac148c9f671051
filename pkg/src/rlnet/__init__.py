"""Single-image deraining network with closed-loop error detection and feature compensation."""
from .blocks import FFRB, UFFRB, BlockConfig, MultiStream, ResGNBlock, SEBlock, SPPRefine
from .data import RainParams, TrainSample, augment, downscale, load_pairs, synthesize_rain, synthetic_dataset
from .errors import ConfigError, ContractError, InputError, RLNetError
from .estimator import RLNetDerainer
from .evaluation import EvalReport, ToyConfig, evaluate, psnr, run_ablation, run_sweep, ssim
from .feedback import error_from_detector, rectify
from .losses import LossBreakdown, loss_all
from .network import AblationConfig, ForwardBundle, RLNet, derain, rlnet_forward, variant
from .schedule import HyperState, Schedule, apply_schedule, stage1_state, stage2_state

__version__ = "0.1.0"
