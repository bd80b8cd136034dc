"""Command-line surface: synth, align, annotate-pauses, train, eval,
explain, stats, gradcheck.

Exit codes: 0 success, 1 validation/format/training failure, 2 usage error
(including missing input paths).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from . import autodiff as ad
from .alignment import build_aligned_pair, build_aligned_pair_pretokenized
from .bundles import (list_subject_dirs, load_aligned_dataset,
                      load_aligned_pair, load_bundle, read_json,
                      read_transcript, write_aligned_dataset,
                      write_annotated_transcript, write_json)
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ContractError, FormatError, TrainingAbort
from .explain import (corpus_stats, integrated_gradients, render_attributions,
                      render_attributions_html)
from .gradcheck import check_gradients
from .model import ModelConfig, forward_batch, init_weights
from .optim import TrainConfig
from .rng import derive_seed
from .synth import PauseRates, SynthSpec, generate_cohort
from .tokenizer import GreedyTokenizer, HashEmbedder
from .training import cross_validate, evaluate, train_fold

USAGE_EXIT = 2
FAILURE_EXIT = 1


class UsageError(Exception):
    pass


def _require_path(path: str, kind: str = "path") -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{kind} does not exist: {path}")
    return p


def load_configs(path: str | Path | None,
                 profile: str = "desk") -> tuple[ModelConfig, TrainConfig]:
    """Read [model]/[train] tables plus the single top-level seed from TOML.

    With no file, returns the named profile's defaults.
    """
    if profile == "desk":
        model_cfg, train_cfg = ModelConfig.desk_scale(), TrainConfig.desk_scale()
    elif profile == "paper":
        model_cfg, train_cfg = ModelConfig.paper_scale(), TrainConfig()
    else:
        raise UsageError(f"unknown profile {profile!r}")
    if path is None:
        return model_cfg, train_cfg
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise FormatError(f"{path}: invalid TOML ({exc})") from exc
    seed = doc.get("seed")
    for key, value in doc.get("model", {}).items():
        if not hasattr(model_cfg, key):
            raise FormatError(f"{path}: unknown model option {key!r}")
        setattr(model_cfg, key, value)
    for key, value in doc.get("train", {}).items():
        if not hasattr(train_cfg, key):
            raise FormatError(f"{path}: unknown train option {key!r}")
        if key == "betas":
            value = tuple(value)
        setattr(train_cfg, key, value)
    if seed is not None:
        model_cfg.seed = int(seed)
        train_cfg.seed = int(seed)
    model_cfg.validate()
    train_cfg.validate()
    return model_cfg, train_cfg


def _parse_rates(text: str) -> PauseRates:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise UsageError(f"pause rates need comma,period,ellipsis; got {text!r}")
    return PauseRates(*parts)


# --- subcommands ---------------------------------------------------------


def cmd_synth(args) -> int:
    if args.spec is not None:
        spec = SynthSpec.from_dict(read_json(_require_path(args.spec, "spec file")))
    else:
        spec = SynthSpec()
    if args.seed is not None:
        spec.seed = args.seed
    if args.n_per_class is not None:
        spec.n_per_class = args.n_per_class
    if args.dim is not None:
        spec.dim = args.dim
    if args.vocab_size is not None:
        spec.vocab_size = args.vocab_size
    if args.lexical_signal is not None:
        spec.lexical_signal = args.lexical_signal
    if args.ch_rates is not None:
        spec.pause_rates["CH"] = _parse_rates(args.ch_rates)
    if args.ad_rates is not None:
        spec.pause_rates["AD"] = _parse_rates(args.ad_rates)
    spec.validate()
    dirs = generate_cohort(spec, args.out)
    print(f"wrote {len(dirs)} subject bundles under {args.out}")
    return 0


def cmd_annotate_pauses(args) -> int:
    transcript = read_transcript(_require_path(args.transcript, "transcript"))
    write_annotated_transcript(args.out, transcript)
    print(f"annotated transcript written to {args.out}")
    return 0


def cmd_align(args) -> int:
    dataset = _require_path(args.dataset, "dataset directory")
    include_pauses = not args.no_pauses
    strip_punct = not args.keep_asr_punct
    vocab_path = Path(args.vocab) if args.vocab else dataset / "vocab.txt"
    tokenizer = (GreedyTokenizer.from_file(vocab_path)
                 if vocab_path.exists() else GreedyTokenizer(set()))
    embedder_by_dim: dict[int, HashEmbedder] = {}
    pairs = []
    n_warnings = 0
    for sdir in list_subject_dirs(dataset):
        bundle = load_bundle(sdir)
        if bundle.transcript.overlap_clips:
            n_warnings += 1
        if bundle.tokens is not None:
            pair = build_aligned_pair_pretokenized(
                bundle.transcript, bundle.stream, bundle.tokens,
                bundle.text_embeddings, bundle.pause_mark_vectors,
                include_pauses=include_pauses)
        else:
            dim = bundle.stream.dim
            embedder = embedder_by_dim.setdefault(dim, HashEmbedder(dim))
            pair = build_aligned_pair(
                bundle.transcript, bundle.stream, embedder, tokenizer,
                include_pauses=include_pauses,
                strip_asr_punctuation=strip_punct)
        pairs.append(pair)
    write_aligned_dataset(args.out, pairs, {
        "source": dataset.name, "include_pauses": include_pauses,
        "strip_asr_punctuation": strip_punct,
    })
    print(f"aligned {len(pairs)} subjects -> {args.out} "
          f"({n_warnings} with clipped overlaps)")
    return 0


def cmd_train(args) -> int:
    dataset = _require_path(args.dataset, "aligned dataset")
    config_path = _require_path(args.config, "config file") if args.config else None
    model_cfg, train_cfg = load_configs(config_path, profile=args.profile)
    pairs = load_aligned_dataset(dataset)
    report = cross_validate(pairs, model_cfg, train_cfg,
                            protocol=args.protocol, k=args.folds)
    if args.report:
        write_json(f"{args.report}.json", report.to_dict())
        Path(f"{args.report}.tsv").write_text(report.to_table(), encoding="utf-8")
    # deployment checkpoint: fixed-budget training on the full dataset
    final_epochs = (train_cfg.loso_epochs if args.protocol == "loso"
                    else train_cfg.max_epochs)
    weights, _ = train_fold(pairs, None, model_cfg, train_cfg,
                            fold_seed=derive_seed(train_cfg.seed, "final"),
                            epochs=final_epochs, early_stopping=False)
    save_checkpoint(args.out, model_cfg, weights)
    agg = report.aggregate
    if model_cfg.task == "classify":
        print(f"{args.protocol} aggregate: accuracy {agg.accuracy:.2f} "
              f"f1 {agg.f1:.2f} precision {agg.precision:.2f} "
              f"recall {agg.recall:.2f}")
    else:
        print(f"{args.protocol} aggregate: rmse {agg.rmse:.4f}")
    print(f"checkpoint written to {args.out}")
    return 0


def cmd_eval(args) -> int:
    ckpt = _require_path(args.checkpoint, "checkpoint")
    dataset = _require_path(args.dataset, "aligned dataset")
    config, weights = load_checkpoint(ckpt)
    pairs = load_aligned_dataset(dataset)
    metrics = evaluate(pairs, config, weights)
    # names only, so identical runs in different directories byte-match
    payload = {"checkpoint": ckpt.name, "dataset": dataset.name,
               "metrics": metrics.to_dict()}
    if args.report:
        write_json(f"{args.report}.json", payload)
    if config.task == "classify":
        print(f"accuracy {metrics.accuracy:.2f} f1 {metrics.f1:.2f} "
              f"precision {metrics.precision:.2f} recall {metrics.recall:.2f}")
    else:
        print(f"rmse {metrics.rmse:.4f}")
    return 0


def cmd_explain(args) -> int:
    ckpt = _require_path(args.checkpoint, "checkpoint")
    sample = _require_path(args.sample, "aligned sample directory")
    config, weights = load_checkpoint(ckpt)
    pair = load_aligned_pair(sample)
    target_class = None
    if args.target_class is not None:
        target_class = ("CH", "AD").index(args.target_class)
    amap = integrated_gradients(config, weights, pair,
                                target_class=target_class, steps=args.steps)
    Path(args.out).write_text(render_attributions(amap), encoding="utf-8")
    if args.html:
        Path(args.html).write_text(render_attributions_html(amap),
                                   encoding="utf-8")
    print(f"predicted {amap.predicted_class}, completeness gap "
          f"{amap.completeness_gap:.3e}; report -> {args.out}")
    return 0


def cmd_stats(args) -> int:
    dataset = _require_path(args.dataset, "dataset directory")
    transcripts = []
    for sdir in list_subject_dirs(dataset):
        bundle = load_bundle(sdir)
        transcripts.append(bundle.transcript)
    stats = corpus_stats(transcripts)
    if args.out:
        write_json(args.out, stats.to_dict())
    for label, cls in sorted(stats.per_class.items()):
        print(f"{label}: n={cls.n_subjects} comma {cls.comma_mean:.2f} "
              f"period {cls.period_mean:.2f} ellipsis {cls.ellipsis_mean:.2f} "
              f"duration {cls.duration_mean:.1f}s words {cls.word_count_mean:.1f}")
    return 0


def cmd_gradcheck(args) -> int:
    config_path = _require_path(args.config, "config file") if args.config else None
    model_cfg, _ = load_configs(config_path, profile=args.profile)
    # gradient checks run on a reduced copy at float64
    check_cfg = ModelConfig(
        d_model=16, n_heads=2, d_ff=32, n_layers=model_cfg.n_layers,
        fusion=model_cfg.fusion, query_modality=model_cfg.query_modality,
        pooling=model_cfg.pooling, task=model_cfg.task, dropout_rate=0.0,
        max_len=32, seed=model_cfg.seed)
    worst = 0.0
    for instance in range(args.instances):
        weights = init_weights(check_cfg, seed=derive_seed(args.seed, instance),
                               dtype=np.float64)
        gen = np.random.Generator(np.random.Philox(key=derive_seed(args.seed,
                                                                   "data", instance)))
        audio = ad.tensor(gen.standard_normal((2, 5, 16)), dtype=np.float64)
        text = ad.tensor(gen.standard_normal((2, 5, 16)), dtype=np.float64)
        labels = np.array([0, 1])

        def run():
            out = forward_batch(audio, text, None, check_cfg, weights)
            if check_cfg.task == "classify":
                return ad.cross_entropy_with_logits(out, labels)
            return ad.mse_loss(ad.mean_axis(out, axis=-1),
                               np.array([10.0, 20.0]))

        report = check_gradients(run, weights.tensors(),
                                 tolerance=args.tolerance,
                                 max_checks_per_tensor=6,
                                 seed=derive_seed(args.seed, "probe", instance))
        worst = max(worst, report.max_rel_error)
        if instance == 0 or not report.passed:
            print(f"instance {instance}:")
            print(report.format_table())
        if not report.passed:
            print("gradient check FAILED")
            return FAILURE_EXIT
    print(f"gradient check passed: {args.instances} instances, "
          f"worst relative error {worst:.3e} < {args.tolerance:g}")
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alignfuse",
        description="Word-aligned audio/text fusion pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", help="SynthSpec JSON file")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-per-class", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--lexical-signal", type=float)
    p.add_argument("--ch-rates", help="comma,period,ellipsis expected counts")
    p.add_argument("--ad-rates", help="comma,period,ellipsis expected counts")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("annotate-pauses",
                       help="write a transcript with pauses inlined")
    p.add_argument("--transcript", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_annotate_pauses)

    p = sub.add_parser("align", help="bundles -> aligned token pairs")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-pauses", action="store_true",
                   help="skip pause tokens (prosody-stripped pipeline)")
    p.add_argument("--keep-asr-punct", action="store_true",
                   help="keep punctuation attached to ASR words")
    p.add_argument("--vocab", help="tokenizer vocabulary file")
    p.set_defaults(fn=cmd_align)

    p = sub.add_parser("train", help="cross-validate and write a checkpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--profile", default="desk", choices=("desk", "paper"))
    p.add_argument("--protocol", default="kfold", choices=("kfold", "loso"))
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--report", help="report path prefix (.json/.tsv)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--report", help="report path prefix (.json)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("explain", help="token attribution for one sample")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sample", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--html")
    p.add_argument("--steps", type=int, default=256)
    p.add_argument("--target-class", choices=("CH", "AD"))
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("stats", help="per-class prosody statistics")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--profile", default="desk", choices=("desk", "paper"))
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--instances", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (ContractError, FormatError, TrainingAbort) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FAILURE_EXIT


if __name__ == "__main__":
    sys.exit(main())
