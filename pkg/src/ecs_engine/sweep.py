"""Experiment grids over filler kind x count x position x seed (x checkpoint).

Output directory layout::

    cells/<cell-key>.jsonl   RunRecords of one grid cell
    manifest.jsonl           append-only cell status log
    records.jsonl            all records, grid order
    aggregate.csv            (or checkpoint_aggregate.csv for checkpoint sweeps)
    attention/<cell-key>.csv region statistics, when capture is enabled
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import yaml

from .attention import region_stats, render_all, write_stats_csv
from .datasets import KINDS, TaskSample, generate_synthetic, load_samples
from .errors import ConfigError, ContextOverflow, WeightError
from .evaluation import RunRecord, aggregate, write_aggregate_csv, write_records
from .pipeline import Engine
from .prompt import FillerSpec, Position, PromptTemplate
from .tokenizer import FillerKind, Vocabulary, build_default_vocabulary
from .weightfile import load_weights

log = logging.getLogger(__name__)

DEFAULT_COUNTS = (0, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096, 8192)


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    path: Path | None = None
    synthetic: int | None = None  # number of generated samples per seed

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"dataset kind must be one of {KINDS}")
        if (self.path is None) == (self.synthetic is None):
            raise ConfigError("dataset needs exactly one of 'path' or 'synthetic'")
        if self.synthetic is not None and self.synthetic < 1:
            raise ConfigError("synthetic dataset size must be positive")


@dataclass(frozen=True)
class SweepConfig:
    weights: tuple[Path, ...]
    datasets: tuple[DatasetSpec, ...]
    output_dir: Path
    kinds: tuple[FillerKind, ...] = (FillerKind.space,)
    counts: tuple[int, ...] = DEFAULT_COUNTS
    positions: tuple[Position, ...] = (Position.before_answer_cue,)
    seeds: tuple[int, ...] = (0, 1, 2)
    capture_attention: bool = False
    capture_heatmaps: bool = False
    vocab: Path | None = None
    template: Path | None = None
    filler_aliases: tuple[tuple[FillerKind, str], ...] = ()
    max_new_tokens: int = 8
    workers: int | None = None

    def __post_init__(self) -> None:
        coerce = object.__setattr__
        coerce(self, "weights", tuple(Path(p) for p in self.weights))
        coerce(self, "output_dir", Path(self.output_dir))
        coerce(self, "kinds", tuple(FillerKind(k) for k in self.kinds))
        coerce(self, "positions", tuple(Position(p) for p in self.positions))
        coerce(self, "counts", tuple(int(c) for c in self.counts))
        coerce(self, "seeds", tuple(int(s) for s in self.seeds))
        coerce(self, "filler_aliases", tuple((FillerKind(k), str(v)) for k, v in self.filler_aliases))
        if not self.weights:
            raise ConfigError("at least one weight file is required")
        if not self.datasets:
            raise ConfigError("at least one dataset is required")
        if 0 not in self.counts:
            raise ConfigError("count grid must contain 0 (the baseline)")
        if any(c < 0 for c in self.counts):
            raise ConfigError("filler counts must be non-negative")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if not self.kinds or not self.positions:
            raise ConfigError("kinds and positions must be non-empty")

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | str = ".") -> "SweepConfig":
        base = Path(base_dir)

        def resolve(p):
            return None if p is None else (base / p if not Path(p).is_absolute() else Path(p))

        try:
            weights = data["weights"]
            weights = [weights] if isinstance(weights, str) else weights
            datasets = []
            for d in data["datasets"]:
                datasets.append(DatasetSpec(
                    kind=d.get("kind", "multiple_choice"),
                    path=resolve(d.get("path")),
                    synthetic=d.get("synthetic"),
                ))
            capture = data.get("capture") or {}
            return cls(
                weights=tuple(resolve(w) for w in weights),
                datasets=tuple(datasets),
                output_dir=resolve(data.get("output_dir", "ecs_out")),
                kinds=tuple(FillerKind(k) for k in data.get("kinds", ["space"])),
                counts=tuple(int(c) for c in data.get("counts", DEFAULT_COUNTS)),
                positions=tuple(Position(p) for p in data.get("positions", ["before_answer_cue"])),
                seeds=tuple(int(s) for s in data.get("seeds", [0, 1, 2])),
                capture_attention=bool(capture.get("attention", False)),
                capture_heatmaps=bool(capture.get("heatmaps", False)),
                vocab=resolve(data.get("vocab")),
                template=resolve(data.get("template")),
                filler_aliases=tuple(
                    (FillerKind(k), str(v)) for k, v in (data.get("filler_aliases") or {}).items()
                ),
                max_new_tokens=int(data.get("max_new_tokens", 8)),
                workers=data.get("workers"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid sweep config: {exc!r}") from exc


def load_sweep_config(path: str | Path) -> SweepConfig:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return SweepConfig.from_dict(data, path.parent)


@dataclass(frozen=True)
class Cell:
    checkpoint: int
    kind: FillerKind
    count: int
    position: Position
    seed: int

    @property
    def key(self) -> str:
        return f"c{self.checkpoint:02d}-{self.kind.value}-M{self.count}-{self.position.value}-s{self.seed}"

    @property
    def filler(self) -> FillerSpec:
        return FillerSpec(self.kind, self.count, self.position)


@dataclass
class GridResult:
    output_dir: Path
    records_path: Path
    aggregate_path: Path
    computed: list[str] = field(default_factory=list)
    reused: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    failed: list[str] = field(default_factory=list)
    record_count: int = 0

    @property
    def ok(self) -> bool:
        return not self.failed


def resolve_workers(requested: int | None) -> int:
    env = os.environ.get("ECS_WORKERS")
    if env:
        return max(1, int(env))
    if requested:
        return max(1, int(requested))
    return os.cpu_count() or 1


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _config_hash(config: SweepConfig) -> str:
    payload = {
        "weights": [_file_digest(p) for p in config.weights],
        "datasets": [
            {"kind": d.kind, "synthetic": d.synthetic,
             "file": _file_digest(d.path) if d.path is not None else None}
            for d in config.datasets
        ],
        "vocab": _file_digest(config.vocab) if config.vocab else None,
        "template": _file_digest(config.template) if config.template else None,
        "aliases": [(k.value, v) for k, v in config.filler_aliases],
        "max_new_tokens": config.max_new_tokens,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def build_vocab(config: SweepConfig, vocab_size: int) -> Vocabulary:
    vocab = Vocabulary.load(config.vocab) if config.vocab else build_default_vocabulary(vocab_size)
    for kind, target in config.filler_aliases:
        vocab = vocab.with_filler_alias(kind, vocab.token_id(target))
    return vocab


def _load_engines(config: SweepConfig) -> list[Engine]:
    template = PromptTemplate.load(config.template) if config.template else PromptTemplate()
    engines = []
    for path in config.weights:
        model_config, weights = load_weights(path)
        vocab = build_vocab(config, model_config.vocab_size)
        if len(vocab) > model_config.vocab_size:
            raise WeightError(
                f"{path}: vocab_size {model_config.vocab_size} is smaller than the vocabulary ({len(vocab)})"
            )
        engines.append(Engine(model_config, weights, vocab, template, config.max_new_tokens))
    return engines


def _samples_for_seed(config: SweepConfig, seed: int, file_cache: dict) -> list[TaskSample]:
    samples: list[TaskSample] = []
    for spec in config.datasets:
        if spec.synthetic is not None:
            samples.extend(generate_synthetic(seed, spec.synthetic, spec.kind))
        else:
            if spec.path not in file_cache:
                file_cache[spec.path] = load_samples(spec.path, spec.kind)
            samples.extend(file_cache[spec.path])
    return samples


def grid_cells(config: SweepConfig, num_checkpoints: int) -> list[Cell]:
    return [
        Cell(c, kind, count, position, seed)
        for c in range(num_checkpoints)
        for kind in config.kinds
        for position in config.positions
        for count in sorted(set(config.counts))
        for seed in config.seeds
    ]


def _read_manifest(path: Path) -> dict[str, dict]:
    latest: dict[str, dict] = {}
    if path.exists():
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    entry = json.loads(line)
                    latest[entry["cell"]] = entry
    return latest


def _is_reusable(entry: dict | None, cell_path: Path, config_hash: str) -> bool:
    if entry is None or entry.get("config_hash") != config_hash:
        return False
    if entry["status"] == "skipped":
        return True
    if entry["status"] != "done" or not cell_path.exists():
        return False
    return _file_digest(cell_path) == entry.get("records_sha256")


def _checkpoint_label(index: int, path: Path, labelled: bool) -> str:
    return f"{index:02d}:{path.name}" if labelled else ""


def run_grid(config: SweepConfig, checkpoint_labels: bool = False) -> GridResult:
    """Evaluate every grid cell, resuming from the manifest, then aggregate.

    Cell failures are logged and the run continues; ``GridResult.ok`` is
    false when any cell failed.
    """
    out = Path(config.output_dir)
    cells_dir = out / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.jsonl"
    engines = _load_engines(config)
    config_hash = _config_hash(config)
    manifest = _read_manifest(manifest_path)
    file_cache: dict = {}
    samples_by_seed = {seed: _samples_for_seed(config, seed, file_cache) for seed in config.seeds}
    cells = grid_cells(config, len(engines))
    result = GridResult(
        output_dir=out,
        records_path=out / "records.jsonl",
        aggregate_path=out / ("checkpoint_aggregate.csv" if checkpoint_labels else "aggregate.csv"),
    )

    pending = []
    for cell in cells:
        if _is_reusable(manifest.get(cell.key), cells_dir / f"{cell.key}.jsonl", config_hash):
            result.reused.append(cell.key)
            if manifest[cell.key]["status"] == "skipped":
                result.skipped.append(cell.key)
        else:
            pending.append(cell)

    def work(cell: Cell) -> dict:
        engine = engines[cell.checkpoint]
        label = _checkpoint_label(cell.checkpoint, config.weights[cell.checkpoint], checkpoint_labels)
        records, overflowed = [], 0
        try:
            for sample in samples_by_seed[cell.seed]:
                try:
                    records.append(engine.evaluate(sample, cell.filler, cell.seed, label))
                except ContextOverflow as exc:
                    overflowed += 1
                    log.warning("cell %s: skipping sample %s (%s)", cell.key, sample.id, exc)
            if records and config.capture_attention and cell.count > 0:
                _capture_attention(engine, samples_by_seed[cell.seed], cell, out, config.capture_heatmaps)
        except Exception as exc:  # noqa: BLE001 - isolate cell failures
            log.error("cell %s failed: %s", cell.key, exc)
            return {"cell": cell.key, "status": "failed", "error": repr(exc), "config_hash": config_hash}
        if not records:
            return {"cell": cell.key, "status": "skipped", "reason": "context overflow",
                    "overflowed": overflowed, "config_hash": config_hash}
        cell_path = cells_dir / f"{cell.key}.jsonl"
        tmp = cell_path.with_suffix(".tmp")
        write_records(records, tmp)
        tmp.replace(cell_path)
        return {"cell": cell.key, "status": "done", "records": len(records), "overflowed": overflowed,
                "records_sha256": _file_digest(cell_path), "config_hash": config_hash}

    workers = min(resolve_workers(config.workers), max(1, len(pending)))
    with open(manifest_path, "a", encoding="utf-8") as manifest_fh:
        def note(entry: dict) -> None:
            manifest_fh.write(json.dumps(entry, sort_keys=True) + "\n")
            manifest_fh.flush()
            status = entry["status"]
            {"done": result.computed, "skipped": result.skipped, "failed": result.failed}[status].append(entry["cell"])

        if workers == 1:
            for cell in pending:
                note(work(cell))
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for entry in pool.map(work, pending):
                    note(entry)

    all_records = _collect(cells, cells_dir, set(result.skipped) | set(result.failed))
    write_records(all_records, result.records_path)
    result.record_count = len(all_records)
    report = aggregate(_complete_groups(all_records, config.seeds))
    write_aggregate_csv(report, result.aggregate_path, with_checkpoint=checkpoint_labels)
    log.info(
        "grid done: %d computed, %d reused, %d skipped, %d failed, %d records",
        len(result.computed), len(result.reused), len(result.skipped), len(result.failed), result.record_count,
    )
    return result


def _capture_attention(engine: Engine, samples: list[TaskSample], cell: Cell, out: Path, heatmaps: bool) -> None:
    for sample in samples:
        try:
            prompt = engine.prompt(sample, cell.filler)
        except ContextOverflow:
            continue
        fwd = engine.run(prompt, attentions=True)
        att_dir = out / "attention"
        att_dir.mkdir(exist_ok=True)
        write_stats_csv(region_stats(fwd.attentions, prompt, engine.vocab.eot_id), att_dir / f"{cell.key}.csv")
        if heatmaps:
            render_all(fwd.attentions, prompt, att_dir / cell.key, engine.vocab)
        return


def _collect(cells: Iterable[Cell], cells_dir: Path, missing: set[str]) -> list[RunRecord]:
    records = []
    for cell in cells:
        if cell.key in missing:
            continue
        path = cells_dir / f"{cell.key}.jsonl"
        with open(path, encoding="utf-8") as fh:
            records.extend(RunRecord.from_json(line) for line in fh if line.strip())
    return records


def _complete_groups(records: list[RunRecord], seeds: Iterable[int]) -> list[RunRecord]:
    """Drop (checkpoint, kind, M, position) groups that lack some seed."""
    wanted = set(seeds)
    seen: dict[tuple, set[int]] = {}
    for r in records:
        seen.setdefault((r.checkpoint, r.filler_kind, r.count, r.position), set()).add(r.seed)
    incomplete = {k for k, s in seen.items() if s != wanted}
    for key in sorted(incomplete, key=str):
        log.warning("group %s is missing seeds; left out of the aggregate", key)
    return [r for r in records if (r.checkpoint, r.filler_kind, r.count, r.position) not in incomplete]


def checkpoint_sweep(config: SweepConfig) -> GridResult:
    """The same grid over an ordered list of weight files, one aggregate row per (checkpoint, cell)."""
    if len(config.weights) < 2:
        raise ConfigError("a checkpoint sweep needs at least two weight files")
    return run_grid(config, checkpoint_labels=True)
