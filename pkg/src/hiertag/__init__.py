"""hiertag: multi-scale event-span tagging over word/sentence/paragraph
memories, with teacher-forced supervision and policy-gradient fine-tuning."""

from .checkpoint import load_checkpoint, save_checkpoint
from .controller import ACTIONS, Action, Location, replay_actions, run_episode
from .corpus import Document, GenConfig, generate_corpus, read_corpus, write_corpus
from .evaluation import EvalReport, evaluate, span_prf, token_accuracy
from .model import Model, ModelDims, build_model
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ACTIONS",
    "Action",
    "Document",
    "EvalReport",
    "GenConfig",
    "Location",
    "Model",
    "ModelDims",
    "TrainConfig",
    "build_model",
    "evaluate",
    "generate_corpus",
    "load_checkpoint",
    "read_corpus",
    "replay_actions",
    "run_episode",
    "save_checkpoint",
    "span_prf",
    "token_accuracy",
    "train",
    "write_corpus",
    "__version__",
]
