"""Command-line entry point wiring the pipeline stages together.

Exit codes: 0 success, 1 usage error, 2 data error, 3 endpoint error. Every
subcommand writes its outputs atomically and drops a run manifest (resolved
config, paths, seed, timestamps) beside its primary output.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
from pathlib import Path

from . import __version__
from .config import DetectorConfig, resolve_config
from .errors import DataError, EndpointError, SingleClass
from .ioutil import atomic_write_text, iter_jsonl
from .records import Record, load_dataset, save_dataset

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ENDPOINT = 3


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _write_manifest(primary_output: str | Path, subcommand: str, args_dict: dict,
                    inputs: list[str], outputs: list[str], started: str,
                    seed: int | None = None, config: DetectorConfig | None = None) -> None:
    manifest = {
        "subcommand": subcommand,
        "tool_version": __version__,
        "arguments": {k: v for k, v in args_dict.items() if not callable(v)},
        "config": config.to_dict() if config is not None else None,
        "inputs": inputs,
        "outputs": outputs,
        "seed": seed,
        "started_at": started,
        "finished_at": _now(),
    }
    atomic_write_text(
        str(primary_output) + ".manifest.json",
        json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n",
    )


def _endpoint_config(args) -> "LlmEndpointConfig":
    from .orchestrator import LlmEndpointConfig

    return LlmEndpointConfig(
        base_url=args.base_url,
        model=args.model if isinstance(args.model, str) else args.model[0],
        api_key_env=args.api_key_env,
        temperature=args.temperature,
        max_tokens=args.max_tokens,
        timeout_seconds=args.timeout,
        max_retries=args.max_retries,
        max_concurrent=args.concurrency,
    )


def _add_endpoint_flags(parser: argparse.ArgumentParser, repeat_model: bool = False) -> None:
    parser.add_argument("--base-url", default="http://localhost:8000")
    if repeat_model:
        parser.add_argument(
            "--model", action="append", required=True,
            help="judge model name; pass exactly twice for the two-judge protocol",
        )
    else:
        parser.add_argument("--model", default="local-model")
    parser.add_argument("--api-key-env", default="LLM_API_KEY")
    parser.add_argument("--temperature", type=float, default=0.8)
    parser.add_argument("--max-tokens", type=int, default=300)
    parser.add_argument("--timeout", type=float, default=60.0)
    parser.add_argument("--max-retries", type=int, default=3)
    parser.add_argument("--concurrency", type=int, default=4)


# --- subcommand implementations --------------------------------------------------


def cmd_generate(args) -> int:
    from .orchestrator import generate_records

    started = _now()
    queries: list[tuple[str, str]] = []
    for lineno, obj in iter_jsonl(args.input):
        if "id" not in obj or "question" not in obj:
            raise DataError(f"{args.input}:{lineno}: need id and question")
        queries.append((obj["id"], obj["question"]))

    cached: dict[str, Record] = {}
    if not args.force and Path(args.output).exists():
        cached = {r.id: r for r in load_dataset(args.output)}

    cfg = _endpoint_config(args)
    records = generate_records(queries, cfg, cached=cached, split=args.split)
    save_dataset(records, args.output)
    _write_manifest(args.output, "generate", vars(args), [args.input], [args.output], started)
    fresh = sum(1 for r in records if r.id not in cached)
    print(f"generated {fresh} new records, reused {len(records) - fresh} cached")
    return EXIT_OK


def cmd_label(args) -> int:
    from .orchestrator import label_records

    started = _now()
    if len(args.model) != 2:
        raise DataError(f"label needs exactly two --model flags, got {len(args.model)}")
    records = load_dataset(args.input)
    judges = []
    for model in args.model:
        cfg = _endpoint_config(args)
        cfg.model = model
        judges.append(cfg)
    labelled = label_records(records, judges, relabel=args.force)
    save_dataset(labelled, args.output)
    _write_manifest(args.output, "label", vars(args), [args.input], [args.output], started)
    confirmed = sum(1 for r in labelled if r.label_status == "confirmed")
    flagged = sum(1 for r in labelled if r.label_status == "needs_review")
    print(f"labelled {confirmed} confirmed, {flagged} flagged for review")
    return EXIT_OK


def cmd_segment(args) -> int:
    from .segmenter import default_lexicon, load_lexicon, save_stl_file, segment_cot

    started = _now()
    records = load_dataset(args.input)
    lexicon = load_lexicon(args.lexicon) if args.lexicon else default_lexicon()
    stls = {
        record.id: segment_cot(
            record.answer_cot, lexicon, args.min_unit_tokens, args.max_units
        )
        for record in records
    }
    save_stl_file(stls, args.output)
    _write_manifest(args.output, "segment", vars(args), [args.input], [args.output], started)
    total_units = sum(stl.length for stl in stls.values())
    print(f"segmented {len(stls)} traces into {total_units} units")
    return EXIT_OK


def cmd_embed_stub(args) -> int:
    from .embeddings import save_states, save_unit_embeddings, stub_states, stub_unit_embeddings
    from .segmenter import load_stl_units

    started = _now()
    records = load_dataset(args.dataset)
    unit_texts = load_stl_units(args.stl)
    states = {}
    unit_seqs = {}
    for record in records:
        if record.id not in unit_texts:
            raise DataError(f"STL file has no units for record {record.id!r}")
        states[record.id] = stub_states(record, args.dim, args.seed)
        unit_seqs[record.id] = stub_unit_embeddings(unit_texts[record.id], args.dim, args.seed)
    save_states(states, args.states_out)
    save_unit_embeddings(unit_seqs, args.units_out)
    _write_manifest(
        args.states_out, "embed-stub", vars(args),
        [args.dataset, args.stl], [args.states_out, args.units_out], started, seed=args.seed,
    )
    print(f"embedded {len(states)} records at dim {args.dim}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .embeddings import save_states, save_unit_embeddings, synth_dataset

    started = _now()
    records, states, units = synth_dataset(args.n, args.dim, args.seed, args.separation)
    save_dataset(records, args.dataset_out)
    save_states(states, args.states_out)
    save_unit_embeddings(units, args.units_out)
    _write_manifest(
        args.dataset_out, "synth", vars(args), [],
        [args.dataset_out, args.states_out, args.units_out], started, seed=args.seed,
    )
    print(f"synthesised {len(records)} records (dim {args.dim}, separation {args.separation})")
    return EXIT_OK


def _load_providers(args, config: DetectorConfig, records):
    from .embeddings import load_states, load_unit_embeddings

    ids = [r.id for r in records]
    states = load_states(args.states, ids, expected_dim=config.hidden_dim)
    units = load_unit_embeddings(args.units, ids, expected_dim=config.hidden_dim)
    return states, units


def cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .training import train

    started = _now()
    config = resolve_config(args.config, _config_flag_overrides(args))
    records = load_dataset(args.dataset)
    needed = [r for r in records if r.label_status == "confirmed" and r.split in ("train", "val")]
    states, units = _load_providers(args, config, needed)

    result = train(records, states, units, config)
    save_checkpoint(result.params, config, args.output, result.to_checkpoint().training_meta)
    atomic_write_text(args.metrics_out, result.metrics_text())
    _write_manifest(
        args.output, "train", vars(args), [args.dataset, args.states, args.units],
        [args.output, args.metrics_out], started, seed=config.seed, config=config,
    )
    print(
        f"trained {len(result.metrics)} epochs; best val auroc "
        f"{result.best_val_auroc:.6f} at epoch {result.best_epoch}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .evaluation import evaluate, write_scores

    started = _now()
    checkpoint = load_checkpoint(args.checkpoint)
    records = load_dataset(args.dataset)
    chosen = [r for r in records if r.split == args.split and r.label_status == "confirmed"]
    if not chosen:
        raise SingleClass(f"split {args.split!r} has no confirmed records")
    states, units = _load_providers(args, checkpoint.config, chosen)
    report = evaluate(checkpoint.params, checkpoint.config, records, args.split, states, units)
    write_scores(report, args.scores_out)
    _write_manifest(
        args.scores_out, "eval", vars(args),
        [args.checkpoint, args.dataset, args.states, args.units],
        [args.scores_out], started, config=checkpoint.config,
    )
    for line in report.summary_lines():
        print(line)
    return EXIT_OK


def cmd_inspect_attention(args) -> int:
    from .checkpoint import load_checkpoint
    from .evaluation import export_attention
    from .segmenter import load_stl_units

    started = _now()
    checkpoint = load_checkpoint(args.checkpoint)
    records = load_dataset(args.dataset)
    if args.ids:
        wanted = set(args.ids.split(","))
        chosen = [r for r in records if r.id in wanted]
        missing = wanted - {r.id for r in chosen}
        if missing:
            raise DataError(f"dataset has no records with ids {sorted(missing)}")
    else:
        chosen = records
    states, units = _load_providers(args, checkpoint.config, chosen)
    unit_texts = load_stl_units(args.stl) if args.stl else None
    export_attention(
        checkpoint.params, checkpoint.config, [r.id for r in chosen],
        states, units, args.output, unit_texts=unit_texts,
    )
    _write_manifest(
        args.output, "inspect-attention", vars(args),
        [args.checkpoint, args.dataset, args.states, args.units],
        [args.output], started, config=checkpoint.config,
    )
    print(f"wrote attention dump for {len(chosen)} records")
    return EXIT_OK


def cmd_export_features(args) -> int:
    from .checkpoint import load_checkpoint
    from .evaluation import export_features

    started = _now()
    checkpoint = load_checkpoint(args.checkpoint)
    records = load_dataset(args.dataset)
    chosen = [r for r in records if r.split == args.split and r.label_status == "confirmed"]
    states, units = _load_providers(args, checkpoint.config, chosen)
    export_features(
        checkpoint.params, checkpoint.config, records, args.split, states, units, args.output
    )
    _write_manifest(
        args.output, "export-features", vars(args),
        [args.checkpoint, args.dataset, args.states, args.units],
        [args.output], started, config=checkpoint.config,
    )
    print(f"wrote fused + raw features for {len(chosen)} records")
    return EXIT_OK


# --- argument parsing --------------------------------------------------------------


def _config_flag_overrides(args) -> dict:
    names = (
        "hidden_dim", "num_heads", "encoder_layers", "ffn_multiplier", "max_units",
        "positional_encoding", "cross_attention_mode", "focal_gamma", "focal_alpha",
        "learning_rate", "batch_size", "epochs", "seed",
    )
    return {name: getattr(args, name) for name in names if getattr(args, name, None) is not None}


def _add_detector_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    parser.add_argument("--num-heads", dest="num_heads", type=int)
    parser.add_argument("--encoder-layers", dest="encoder_layers", type=int)
    parser.add_argument("--ffn-multiplier", dest="ffn_multiplier", type=int)
    parser.add_argument("--max-units", dest="max_units", type=int)
    parser.add_argument(
        "--positional-encoding", dest="positional_encoding",
        type=lambda s: s.lower() in ("1", "true", "yes", "on"),
    )
    parser.add_argument(
        "--cross-attention-mode", dest="cross_attention_mode",
        choices=("full_trajectory", "cls_only"),
    )
    parser.add_argument("--focal-gamma", dest="focal_gamma", type=float)
    parser.add_argument("--focal-alpha", dest="focal_alpha", type=float)
    parser.add_argument("--learning-rate", dest="learning_rate", type=float)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trifuse",
        description="Tri-path signal generation and consistency-fusion hallucination detection.",
    )
    parser.add_argument("--version", action="version", version=f"trifuse {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("generate", help="generate the three reasoning paths per query")
    p.add_argument("--input", required=True, help="JSONL of {id, question}")
    p.add_argument("--output", required=True, help="dataset file to write")
    p.add_argument("--split", default="train", choices=("train", "val", "test"))
    p.add_argument("--force", action="store_true", help="re-generate cached ids")
    _add_endpoint_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("label", help="two-judge hallucination labelling")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--force", action="store_true", help="re-judge confirmed records")
    _add_endpoint_flags(p, repeat_model=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("segment", help="decompose chain-of-thought traces into unit lists")
    p.add_argument("--input", required=True, help="dataset file")
    p.add_argument("--output", required=True, help="STL file to write")
    p.add_argument("--lexicon", help="custom lexicon: phrase<TAB>category per line")
    p.add_argument("--min-unit-tokens", dest="min_unit_tokens", type=int, default=3)
    p.add_argument("--max-units", dest="max_units", type=int, default=32)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("embed-stub", help="deterministic stub embeddings for desk-scale work")
    p.add_argument("--dataset", required=True)
    p.add_argument("--stl", required=True, help="STL file from the segment subcommand")
    p.add_argument("--states-out", required=True)
    p.add_argument("--units-out", required=True)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_embed_stub)

    p = sub.add_parser("synth", help="labelled-by-construction synthetic benchmark")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--separation", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dataset-out", default="synth.dataset.jsonl")
    p.add_argument("--states-out", default="synth.states.jsonl")
    p.add_argument("--units-out", default="synth.units.jsonl")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the fusion detector")
    p.add_argument("--dataset", required=True)
    p.add_argument("--states", required=True)
    p.add_argument("--units", required=True)
    p.add_argument("--output", required=True, help="checkpoint manifest path")
    p.add_argument("--metrics-out", default="metrics.csv")
    _add_detector_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a split and report AUROC")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--states", required=True)
    p.add_argument("--units", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--scores-out", default="scores.jsonl")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect-attention", help="dump cross-attention weights per record")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--states", required=True)
    p.add_argument("--units", required=True)
    p.add_argument("--ids", help="comma-separated record ids (default: all)")
    p.add_argument("--stl", help="STL file for unit text column labels")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_inspect_attention)

    p = sub.add_parser("export-features", help="dump fused and raw feature vectors")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--states", required=True)
    p.add_argument("--units", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_export_features)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help/--version, 2 for usage errors
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except EndpointError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_ENDPOINT
    except DataError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(json.dumps({"error": "FileNotFound", "message": str(exc)}), file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
