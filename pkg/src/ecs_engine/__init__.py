"""Filler-token experiments on a toy causal decoder."""

from .datasets import TaskSample, generate_synthetic, load_samples
from .evaluation import RunRecord, aggregate, extract_math_answer, score_multiple_choice
from .model import ForwardResult, ModelConfig, WeightSet, attention_block, count_masked_scores, forward, greedy_decode, init_weights
from .pipeline import Engine
from .prompt import FillerSpec, Position, PromptTemplate, PromptTokens, assemble, extract_ecs
from .tokenizer import FillerKind, Vocabulary, build_default_vocabulary

__version__ = "0.1.0"
