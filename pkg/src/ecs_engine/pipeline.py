"""Sample-level evaluation: assemble -> forward/decode -> score."""

from __future__ import annotations

from dataclasses import dataclass

from .datasets import MULTIPLE_CHOICE, TaskSample
from .evaluation import RunRecord, answers_match, extract_math_answer, score_multiple_choice
from .model import ForwardResult, ModelConfig, WeightSet, forward, greedy_decode
from .prompt import FillerSpec, PromptTemplate, PromptTokens, assemble
from .tokenizer import Vocabulary, build_default_vocabulary


@dataclass(frozen=True)
class Engine:
    config: ModelConfig
    weights: WeightSet
    vocab: Vocabulary
    template: PromptTemplate = PromptTemplate()
    max_new_tokens: int = 8

    def __post_init__(self) -> None:
        if len(self.vocab) > self.config.vocab_size:
            raise ValueError(
                f"vocabulary has {len(self.vocab)} entries but the model only {self.config.vocab_size}"
            )

    @classmethod
    def with_default_vocab(cls, config: ModelConfig, weights: WeightSet, **kwargs) -> "Engine":
        return cls(config, weights, build_default_vocabulary(config.vocab_size), **kwargs)

    def prompt(self, sample: TaskSample, filler: FillerSpec | None) -> PromptTokens:
        return assemble(sample, filler, self.template, self.vocab, self.config.max_context)

    def run(self, prompt: PromptTokens, *, hidden_states: bool = False, attentions: bool = False) -> ForwardResult:
        return forward(prompt.tokens, self.config, self.weights,
                       hidden_states=hidden_states, attentions=attentions)

    def generate(self, prompt: PromptTokens) -> str:
        stops = {self.vocab.eos_id, self.vocab.eot_id}
        ids = greedy_decode(prompt.tokens, self.config, self.weights, self.max_new_tokens, stops)
        return self.vocab.decode(i for i in ids if i not in stops)

    def evaluate(
        self, sample: TaskSample, filler: FillerSpec | None, seed: int = 0, checkpoint: str = ""
    ) -> RunRecord:
        """Score one sample; ``filler=None`` takes the plain no-filler path."""
        prompt = self.prompt(sample, filler)
        kind = filler.kind.value if filler is not None else "none"
        count = filler.count if filler is not None else 0
        position = filler.position.value if filler is not None else "none"
        if sample.kind == MULTIPLE_CHOICE:
            logits = self.run(prompt).logits
            labels = sample.labels
            probs, predicted = score_multiple_choice(logits, self.vocab.option_ids(labels), labels)
            return RunRecord(
                sample_id=sample.id, filler_kind=kind, count=count, position=position, seed=seed,
                predicted=predicted, gold=sample.gold, correct=predicted == sample.gold,
                probabilities={label: float(p) for label, p in zip(labels, probs)},
                checkpoint=checkpoint, task_kind=sample.kind,
            )
        predicted = extract_math_answer(self.generate(prompt))
        return RunRecord(
            sample_id=sample.id, filler_kind=kind, count=count, position=position, seed=seed,
            predicted=predicted, gold=sample.gold, correct=answers_match(predicted, sample.gold),
            checkpoint=checkpoint, task_kind=sample.kind,
        )
