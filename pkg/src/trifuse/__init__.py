"""trifuse: tri-path LLM signal generation and consistency-fusion hallucination detection.

The pipeline: generate three reasoning paths per query (direct answer,
chain-of-thought, reverse-inferred question), label pairs with a two-judge
protocol, segment the chain-of-thought into a semantic trajectory, embed
everything, then train and evaluate a gated cross-attention fusion network
that scores each query-answer pair for hallucination.
"""

__version__ = "0.1.0"

from .config import DetectorConfig
from .records import Record, load_dataset, save_dataset
from .segmenter import ConnectorLexicon, SemanticTrajectoryList, default_lexicon, segment_cot
from .embeddings import (
    EmbeddingSequence,
    InternalStateSet,
    stub_embed,
    synth_dataset,
)
from .detector import DetectionOutput, focal_loss, forward, init_params
from .training import TrainResult, train
from .evaluation import EvalReport, auroc, evaluate
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .orchestrator import (
    JudgeVerdict,
    LlmEndpointConfig,
    PathBundle,
    generate_paths,
    judge_label,
    render_prompt,
)

__all__ = [
    "Checkpoint",
    "ConnectorLexicon",
    "DetectionOutput",
    "DetectorConfig",
    "EmbeddingSequence",
    "EvalReport",
    "InternalStateSet",
    "JudgeVerdict",
    "LlmEndpointConfig",
    "PathBundle",
    "Record",
    "SemanticTrajectoryList",
    "TrainResult",
    "auroc",
    "default_lexicon",
    "evaluate",
    "focal_loss",
    "forward",
    "generate_paths",
    "init_params",
    "judge_label",
    "load_checkpoint",
    "load_dataset",
    "render_prompt",
    "save_checkpoint",
    "save_dataset",
    "segment_cot",
    "stub_embed",
    "synth_dataset",
    "train",
]
