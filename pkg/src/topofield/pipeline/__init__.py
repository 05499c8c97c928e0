from .config import ConfigError, RunConfig, SynthConfig, TrainConfig, load_config
from .data import TrainingCase, make_split
from .infer import InferenceResult, evaluate_case, infer_full
from .losses import loss_ce, loss_repair, total_loss
from .train import TrainHistory, train
