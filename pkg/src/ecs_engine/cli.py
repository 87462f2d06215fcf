"""``ecs`` command line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .attention import region_stats, render_all, write_stats_csv
from .datasets import KINDS, generate_synthetic, load_samples, read_samples
from .errors import ConfigError, EcsError
from .model import ModelConfig
from .pipeline import Engine
from .plots import emit_plots
from .prompt import FillerSpec, PromptTemplate, assemble
from .sweep import build_vocab, checkpoint_sweep, load_sweep_config, run_grid
from .tokenizer import Vocabulary, build_default_vocabulary
from .weightfile import generate_weight_file, load_weights

log = logging.getLogger("ecs_engine")


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_sweep_config(args.config)
    if args.workers:
        config = _with_workers(config, args.workers)
    result = run_grid(config)
    print(f"records: {result.records_path} ({result.record_count})")
    print(f"aggregate: {result.aggregate_path}")
    if result.failed:
        print(f"{len(result.failed)} cell(s) failed: {', '.join(result.failed)}", file=sys.stderr)
    return 0 if result.ok else 1


def _cmd_sweep(args: argparse.Namespace) -> int:
    config = load_sweep_config(args.config)
    if args.workers:
        config = _with_workers(config, args.workers)
    result = checkpoint_sweep(config)
    print(f"aggregate: {result.aggregate_path}")
    if result.failed:
        print(f"{len(result.failed)} cell(s) failed: {', '.join(result.failed)}", file=sys.stderr)
    return 0 if result.ok else 1


def _with_workers(config, workers: int):
    return replace(config, workers=workers)


def _cmd_plot(args: argparse.Namespace) -> int:
    for path in emit_plots(args.input, args.out):
        print(path)
    return 0


def _cmd_gen_weights(args: argparse.Namespace) -> int:
    config = ModelConfig(
        num_layers=args.layers,
        hidden_dim=args.hidden,
        num_heads=args.heads,
        vocab_size=args.vocab_size,
        max_context=args.max_context,
        norm_placement=args.norm,
        positional_scheme=args.positions,
    )
    generate_weight_file(args.out, args.seed, config)
    print(f"wrote {args.out} (seed {args.seed}, {json.dumps(config.to_dict())})")
    return 0


def _cmd_gen_vocab(args: argparse.Namespace) -> int:
    build_default_vocabulary(args.size).save(args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    report = read_samples(args.data, args.kind)
    for err in report.errors:
        print(f"{args.data}:{err}", file=sys.stderr)
    print(f"{len(report.samples)} valid, {len(report.errors)} invalid")
    return 0 if report.ok else 1


def _engine_and_samples(args: argparse.Namespace):
    if args.config:
        sweep = load_sweep_config(args.config)
        model_config, weights = load_weights(args.weights or sweep.weights[0])
        vocab = build_vocab(sweep, model_config.vocab_size)
        template = PromptTemplate.load(sweep.template) if sweep.template else PromptTemplate()
        samples = []
        for spec in sweep.datasets:
            if spec.synthetic is not None:
                for seed in sweep.seeds:
                    samples += generate_synthetic(seed, spec.synthetic, spec.kind)
            else:
                samples += load_samples(spec.path, spec.kind)
    else:
        if args.weights:
            model_config, weights = load_weights(args.weights)
        else:
            model_config, weights = None, None
        vocab = Vocabulary.load(args.vocab) if args.vocab else build_default_vocabulary(
            model_config.vocab_size if model_config else ModelConfig().vocab_size
        )
        template = PromptTemplate.load(args.template) if args.template else PromptTemplate()
        if args.data:
            samples = load_samples(args.data)
        else:
            samples = generate_synthetic(args.synthetic_seed, args.synthetic_n, args.synthetic_kind)
    matches = [s for s in samples if s.id == args.sample]
    if not matches:
        raise ConfigError(f"sample {args.sample!r} not found")
    return model_config, weights, vocab, template, matches[0]


def _cmd_dump_prompt(args: argparse.Namespace) -> int:
    model_config, _, vocab, template, sample = _engine_and_samples(args)
    filler = FillerSpec.parse(args.filler) if args.filler else None
    max_context = model_config.max_context if model_config else None
    prompt = assemble(sample, filler, template, vocab, max_context)
    print(f"sample: {sample.id}")
    print(f"filler: {filler if filler else 'none'}")
    print(f"length: {len(prompt.tokens)} (base {prompt.base_length})")
    print(f"ecs_range: [{prompt.ecs_range.start}, {prompt.ecs_range.stop})")
    print(f"answer_cue_index: {prompt.answer_cue_index}")
    for name, span in prompt.spans.items():
        print(f"span {name}: [{span.start}, {span.stop}) {vocab.decode(prompt.tokens[span.start:span.stop])!r}")
    print("ids: " + " ".join(str(t) for t in prompt.tokens))
    print("text:")
    print(vocab.decode(prompt.tokens))
    return 0


def _cmd_attention(args: argparse.Namespace) -> int:
    if not (args.weights or args.config):
        raise ConfigError("attention analysis needs --weights or --config")
    model_config, weights, vocab, template, sample = _engine_and_samples(args)
    engine = Engine(model_config, weights, vocab, template)
    prompt = engine.prompt(sample, FillerSpec.parse(args.filler))
    result = engine.run(prompt, attentions=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_stats_csv(region_stats(result.attentions, prompt, vocab.eot_id), out / "region_stats.csv")
    paths = render_all(result.attentions, prompt, out, vocab) if not args.no_heatmaps else []
    print(f"stats: {out / 'region_stats.csv'}; {len(paths)} heatmaps")
    return 0


def _add_sample_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sample", required=True, help="sample id")
    p.add_argument("--filler", help="kind:M[:position], e.g. space:16:before_answer_cue")
    p.add_argument("--config", help="sweep config supplying weights, vocab, template and datasets")
    p.add_argument("--weights", help="weight file (overrides the config's first checkpoint)")
    p.add_argument("--data", help="JSONL dataset to look the sample up in")
    p.add_argument("--vocab", help="vocabulary file")
    p.add_argument("--template", help="prompt template YAML")
    p.add_argument("--synthetic-seed", type=int, default=0)
    p.add_argument("--synthetic-n", type=int, default=10)
    p.add_argument("--synthetic-kind", choices=KINDS, default="multiple_choice")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ecs", description="Filler-token computation-space experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="evaluate a filler grid")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep-checkpoints", help="evaluate the grid over ordered checkpoints")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("plot", help="SVG charts from an aggregate CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot)

    p = sub.add_parser("gen-weights", help="write a seeded random weight file")
    defaults = ModelConfig()
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layers", type=int, default=defaults.num_layers)
    p.add_argument("--hidden", type=int, default=defaults.hidden_dim)
    p.add_argument("--heads", type=int, default=defaults.num_heads)
    p.add_argument("--vocab-size", type=int, default=defaults.vocab_size)
    p.add_argument("--max-context", type=int, default=defaults.max_context)
    p.add_argument("--norm", choices=["pre", "post"], default=defaults.norm_placement)
    p.add_argument("--positions", choices=["rotary", "learned-absolute", "none"],
                   default=defaults.positional_scheme)
    p.set_defaults(func=_cmd_gen_weights)

    p = sub.add_parser("gen-vocab", help="write the default vocabulary file")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=defaults.vocab_size)
    p.set_defaults(func=_cmd_gen_vocab)

    p = sub.add_parser("validate", help="check a JSONL dataset against the sample schema")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=KINDS)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("dump-prompt", help="print assembled token ids and text")
    _add_sample_source(p)
    p.set_defaults(func=_cmd_dump_prompt)

    p = sub.add_parser("attention", help="region statistics and heatmaps for one prompt")
    _add_sample_source(p)
    p.add_argument("--out", required=True)
    p.add_argument("--no-heatmaps", action="store_true")
    p.set_defaults(func=_cmd_attention)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "filler", "") is None and args.command == "attention":
        parser.error("attention needs --filler")
    try:
        return args.func(args)
    except (EcsError, OSError, ValueError) as exc:
        print(f"ecs: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
