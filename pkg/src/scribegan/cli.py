"""Command-line entry points: train, generate, evaluate, augment, and
inspect-checkpoint.

Exit codes: 0 success, 1 validation failure, 2 runtime abort (non-finite
loss), 3 partial failure (some requested items failed).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import torch

from .codec import CodecError, LexiconError, load_codec, load_lexicon
from .config import (
    ConfigError,
    archive_config,
    build_run_config,
    parse_config_file,
    validate_train_paths,
)
from .data import ManifestError, WordImageDataset, image_to_png, load_manifest
from .evaluation import (
    evaluate_recognizer,
    export_augmented_set,
    extract_feature_set,
    fid,
)
from .generator import NOISE_DIM
from .training import (
    CheckpointError,
    NaNLossError,
    Trainer,
    read_checkpoint,
    recognizer_from_checkpoint,
    run_training,
    trainer_from_checkpoint,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_ABORT = 2
EXIT_PARTIAL = 3

_USER_ERRORS = (ConfigError, CodecError, LexiconError, ManifestError, CheckpointError, ValueError)


def _add_train_parser(sub) -> None:
    p = sub.add_parser("train", help="train the adversarial model on a word-image dataset")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--manifest", help="tab-separated image/transcript manifest")
    p.add_argument("--lexicon", help="word list for the generation prior")
    p.add_argument("--codec", help="codec file, one character per line")
    p.add_argument("--out-dir", dest="out_dir", help="output directory")
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", help="gradient balance scale, a number or 'disabled'")
    p.add_argument("--adv-loss", dest="adv_loss", choices=["hinge", "vanilla", "lsgan"])
    p.add_argument("--self-attention", dest="self_attention", choices=["true", "false"])
    p.add_argument("--conditioning", choices=["cbn", "first_linear"])
    p.add_argument("--lr", type=float)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--fid-every", dest="fid_every", type=int)
    p.add_argument("--grid-every", dest="grid_every", type=int)
    p.add_argument("--pad-side", dest="pad_side", choices=["right", "left"])
    p.add_argument("--cache-images", dest="cache_images", choices=["true", "false"])


def cmd_train(args: argparse.Namespace) -> int:
    file_values = parse_config_file(args.config) if args.config else {}
    override_keys = (
        "manifest",
        "lexicon",
        "codec",
        "out_dir",
        "max_iters",
        "batch_size",
        "seed",
        "alpha",
        "adv_loss",
        "self_attention",
        "conditioning",
        "lr",
        "checkpoint_every",
        "fid_every",
        "grid_every",
        "pad_side",
        "cache_images",
    )
    overrides = {k: getattr(args, k) for k in override_keys if getattr(args, k) is not None}
    cfg = build_run_config(file_values, overrides)
    validate_train_paths(cfg)

    codec = load_codec(cfg.codec)
    lexicon = load_lexicon(cfg.lexicon, codec)
    manifest = load_manifest(cfg.manifest, codec, pad_side=cfg.pad_side)
    dataset = WordImageDataset(manifest, codec, cache_images=cfg.cache_images)
    print(
        f"loaded {dataset.stats.accepted} images "
        f"({dataset.stats.rejected} rejected as over-width), "
        f"lexicon of {len(lexicon)} words, alphabet of {codec.vocab_size}"
    )
    archive_config(cfg, cfg.out_dir)
    trainer = Trainer(
        codec, cfg.train_config(), dataset=dataset, lexicon=lexicon, seed=cfg.seed
    )
    try:
        run_training(
            trainer,
            cfg.out_dir,
            cfg.max_iters,
            checkpoint_every=cfg.checkpoint_every,
            fid_every=cfg.fid_every,
            grid_every=cfg.grid_every,
            fid_count=cfg.fid_count,
            grid_words=[w for w in cfg.grid_words.split(",") if w] or None,
        )
    except NaNLossError as exc:
        print(f"aborted: {exc}; state dumped to {Path(cfg.out_dir) / 'nan_dump.pt'}", file=sys.stderr)
        return EXIT_ABORT
    print(f"finished {trainer.iteration} iterations; artifacts in {cfg.out_dir}")
    return EXIT_OK


def _add_generate_parser(sub) -> None:
    p = sub.add_parser("generate", help="render word images from a trained checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--words", help="comma-separated words to render")
    p.add_argument("--words-file", dest="words_file", help="file with one word per line")
    p.add_argument("--count-per-word", dest="count_per_word", type=int, default=1)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--seed", type=int, default=0)


def cmd_generate(args: argparse.Namespace) -> int:
    words: list[str] = []
    if args.words:
        words.extend(w for w in args.words.split(",") if w)
    if args.words_file:
        words.extend(
            w for w in Path(args.words_file).read_text(encoding="utf-8").splitlines() if w
        )
    if not words:
        print("no words given: use --words or --words-file", file=sys.stderr)
        return EXIT_VALIDATION

    trainer = trainer_from_checkpoint(args.checkpoint)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = torch.Generator().manual_seed(args.seed)
    failures = 0
    for w_idx, word in enumerate(words):
        if not trainer.codec.encodable(word):
            bad = next(c for c in word if c not in trainer.codec)
            print(f"skipping {word!r}: character {bad!r} not in codec", file=sys.stderr)
            failures += 1
            continue
        z = torch.randn(args.count_per_word, NOISE_DIM, generator=rng)
        images = trainer.generate([word] * args.count_per_word, z=z)
        for k in range(args.count_per_word):
            safe = "".join(c if (c.isalnum() or c in "-_") else "-" for c in word)[:32]
            image_to_png(images[k], out_dir / f"{w_idx:03d}_{safe}_{k:02d}.png")
    n_written = (len(words) - failures) * args.count_per_word
    print(f"wrote {n_written} images to {out_dir}")
    return EXIT_PARTIAL if failures else EXIT_OK


def _add_evaluate_parser(sub) -> None:
    p = sub.add_parser("evaluate", help="compute FID and recognition metrics")
    p.add_argument("checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--n-real", dest="n_real", type=int, default=256)
    p.add_argument("--n-fake", dest="n_fake", type=int, default=256)
    p.add_argument("--eval-words", dest="eval_words", type=int, default=128,
                   help="max images decoded for ED/WER")
    p.add_argument("--extractor-checkpoint", dest="extractor_checkpoint",
                   help="take FID features from this checkpoint's recognizer instead")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the JSON report here as well as stdout")


def cmd_evaluate(args: argparse.Namespace) -> int:
    state = read_checkpoint(args.checkpoint)
    report: dict[str, object] = {
        "fid": None,
        "ed": None,
        "wer": None,
        "extractor_id": None,
        "iteration": state.get("iteration", 0),
    }
    if args.n_real < 2 or args.n_fake < 2:
        raise ValueError("n_real and n_fake must be at least 2")

    recognizer, codec, _ = recognizer_from_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest, codec)
    dataset = WordImageDataset(manifest, codec)

    extractor_id = f"recognizer-encoder@{state.get('iteration', 0)}"
    feature_net = recognizer
    if args.extractor_checkpoint:
        feature_net, feat_codec, feat_state = recognizer_from_checkpoint(args.extractor_checkpoint)
        if feat_codec != codec:
            raise CheckpointError("field codec_chars: extractor checkpoint alphabet differs")
        extractor_id = (
            f"recognizer-encoder@{feat_state.get('iteration', 0)}"
            f":{Path(args.extractor_checkpoint).name}"
        )

    if state.get("kind") == "gan":
        trainer = trainer_from_checkpoint(args.checkpoint)
        rng = torch.Generator().manual_seed(args.seed)
        n_real = min(args.n_real, len(dataset))
        real_images = dataset.batch(range(n_real)).images
        transcripts = [t for _, t in dataset.entries]
        idx = torch.randint(len(transcripts), (args.n_fake,), generator=rng)
        words = [transcripts[int(i)] for i in idx]
        fake_images = trainer.generate(words, rng=rng)
        report["fid"] = fid(
            extract_feature_set(feature_net, real_images, extractor_id),
            extract_feature_set(feature_net, fake_images, extractor_id),
        )
        report["extractor_id"] = extractor_id

    eval_dataset = dataset
    if args.eval_words and len(dataset) > args.eval_words:
        from .data import DatasetManifest

        sub = DatasetManifest(entries=dataset.entries[: args.eval_words], pad_side=dataset.pad_side)
        eval_dataset = WordImageDataset(sub, codec)
    rec_report = evaluate_recognizer(recognizer, eval_dataset, codec)
    report["ed"] = rec_report.edit_distance
    report["wer"] = rec_report.wer

    payload = json.dumps(report, indent=2)
    print(payload)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
    return EXIT_OK


def _add_augment_parser(sub) -> None:
    p = sub.add_parser("augment", help="export generated images plus a mixed manifest")
    p.add_argument("checkpoint")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--real-manifest", dest="real_manifest", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--seed", type=int, default=0)


def cmd_augment(args: argparse.Namespace) -> int:
    trainer = trainer_from_checkpoint(args.checkpoint)
    lexicon = load_lexicon(args.lexicon, trainer.codec)
    manifest = load_manifest(args.real_manifest, trainer.codec)
    rng = torch.Generator().manual_seed(args.seed)
    try:
        out = export_augmented_set(
            trainer, lexicon, args.count, args.out_dir, manifest, rng=rng
        )
    except OSError as exc:
        print(f"I/O failure under {args.out_dir}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"manifest with {len(out)} entries written to {Path(args.out_dir) / 'augmented_manifest.tsv'}")
    return EXIT_OK


def _add_inspect_parser(sub) -> None:
    p = sub.add_parser("inspect-checkpoint", help="print a checkpoint's manifest section")
    p.add_argument("checkpoint")


def cmd_inspect(args: argparse.Namespace) -> int:
    state = read_checkpoint(args.checkpoint)
    info = {
        "version": state["version"],
        "kind": state.get("kind"),
        "iteration": state.get("iteration"),
        "alphabet_size": len(state.get("codec_chars", [])),
        "components": sorted(state.get("models", {}).keys()),
        "config": state.get("config", {}),
        "data_position": state.get("data_position"),
    }
    info["parameters"] = {
        name: sum(int(t.numel()) for t in sd.values() if hasattr(t, "numel"))
        for name, sd in state.get("models", {}).items()
    }
    print(json.dumps(info, indent=2, default=str))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scribegan",
        description="Adversarial synthesis of handwritten word images conditioned on text",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_train_parser(sub)
    _add_generate_parser(sub)
    _add_evaluate_parser(sub)
    _add_augment_parser(sub)
    _add_inspect_parser(sub)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": cmd_train,
        "generate": cmd_generate,
        "evaluate": cmd_evaluate,
        "augment": cmd_augment,
        "inspect-checkpoint": cmd_inspect,
    }
    try:
        return handlers[args.command](args)
    except NaNLossError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except _USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
