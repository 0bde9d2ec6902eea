"""AdaFSNet: prime-kernel full-scope 1D CNN with attention-targeted dropout."""

from .data import TimeSeriesDataset, load_pair, parse_ts, parse_ucr_tsv
from .model import AdaFSNet, ModelConfig, build, load_checkpoint, parameter_count, save_checkpoint
from .planner import KernelPlan, select_pk, verify_coverage
from .targetdrop import TargetDropConfig
from .train import TrainConfig, evaluate, mpce, pce, run_ablation, train

__version__ = "0.1.0"
