"""CLI: `alignfuse-export --audio ... --out ...` writes interchange bundles."""

from __future__ import annotations

import argparse
import sys

from .encoders import make_suite
from .export import ExportError, export_many


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alignfuse-export",
        description="Export encoder outputs from recordings as bundles")
    parser.add_argument("--audio", nargs="+", required=True,
                        help="input WAV file(s)")
    parser.add_argument("--out", required=True, help="output dataset root")
    parser.add_argument("--suite", default="tone", choices=("tone", "hf"),
                        help="encoder suite (hf needs the optional extra)")
    parser.add_argument("--asr-model", default="openai/whisper-tiny.en")
    parser.add_argument("--speech-model", default="facebook/wav2vec2-base-960h")
    parser.add_argument("--text-model", default="distilbert-base-uncased")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--label", choices=("CH", "AD"))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.suite == "hf":
            suite = make_suite("hf", asr_model=args.asr_model,
                               speech_model=args.speech_model,
                               text_model=args.text_model, device=args.device)
        else:
            suite = make_suite("tone")
        bundles = export_many(args.audio, args.out, suite, label=args.label)
    except (ExportError, RuntimeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"exported {len(bundles)} bundle(s) under {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
