"""Synthetic cohort generator with plantable lexical and prosodic signals.

Two independently tunable class differences:

* lexical: each class draws words from opposite halves of the vocabulary
  with probability (1 + signal)/2, so signal 0 makes word choice, and hence
  every frame feature, label-independent;
* prosodic: per-class expected counts of comma/period/ellipsis gaps; longer
  planted pauses also lengthen the class's recordings.

Frame features are Gaussian noise around a hash embedding of the word under
way (silence elsewhere), so the audio stream carries exactly the planted
signals and nothing else. Everything is a pure function of the generator seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .alignment import FrameStream, Transcript, Word, frame_index_range
from .bundles import (COHORT_FILE, Manifest, write_json, write_transcript)
from .errors import ContractError
from .rng import hash_unit_vector, substream

__all__ = ["PauseRates", "SynthSpec", "generate_subject", "generate_cohort",
           "AUDIO_WORD_SALT"]

AUDIO_WORD_SALT = "audio-word"
_BUCKET_SPANS = {"comma": (0.55, 0.95), "period": (1.05, 1.45),
                 "ellipsis": (1.55, 2.50)}


@dataclass(frozen=True)
class PauseRates:
    """Expected pause counts per transcript, by category."""

    comma: float = 2.0
    period: float = 1.0
    ellipsis: float = 1.0

    def validate(self) -> None:
        for name in ("comma", "period", "ellipsis"):
            if getattr(self, name) < 0:
                raise ContractError(f"pause rate {name} must be >= 0")

    def to_dict(self) -> dict:
        return {"comma": self.comma, "period": self.period,
                "ellipsis": self.ellipsis}


@dataclass
class SynthSpec:
    n_per_class: int = 100
    vocab_size: int = 60
    dim: int = 64
    lexical_signal: float = 0.8
    pause_rates: dict[str, PauseRates] = field(default_factory=lambda: {
        "CH": PauseRates(comma=2.0, period=1.0, ellipsis=1.0),
        "AD": PauseRates(comma=2.0, period=1.0, ellipsis=3.0),
    })
    words_low: int = 30
    words_high: int = 70
    word_dur_low: float = 0.15
    word_dur_high: float = 0.50
    frame_noise: float = 0.10
    silence_noise: float = 0.05
    stride: float = 0.02
    seed: int = 0

    def validate(self) -> None:
        if self.n_per_class < 1:
            raise ContractError("n_per_class must be >= 1")
        if self.dim < 2:
            raise ContractError(f"dim must be >= 2, got {self.dim}")
        if self.vocab_size < 2:
            raise ContractError("vocab_size must be >= 2")
        if not 0.0 <= self.lexical_signal <= 1.0:
            raise ContractError("lexical_signal must be in [0, 1]")
        if set(self.pause_rates) != {"CH", "AD"}:
            raise ContractError("pause_rates must cover CH and AD")
        for rates in self.pause_rates.values():
            rates.validate()
        if not (2 <= self.words_low <= self.words_high):
            raise ContractError("need 2 <= words_low <= words_high")
        if self.stride <= 0:
            raise ContractError("stride must be positive")

    def vocabulary(self) -> list[str]:
        return [f"w{i:03d}" for i in range(self.vocab_size)]

    def to_dict(self) -> dict:
        return {
            "n_per_class": self.n_per_class, "vocab_size": self.vocab_size,
            "dim": self.dim, "lexical_signal": self.lexical_signal,
            "pause_rates": {c: r.to_dict() for c, r in self.pause_rates.items()},
            "words_low": self.words_low, "words_high": self.words_high,
            "word_dur_low": self.word_dur_low, "word_dur_high": self.word_dur_high,
            "frame_noise": self.frame_noise, "silence_noise": self.silence_noise,
            "stride": self.stride, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        doc = dict(doc)
        rates = doc.pop("pause_rates", None)
        spec = cls(**doc)
        if rates is not None:
            spec.pause_rates = {c: PauseRates(**r) for c, r in rates.items()}
        spec.validate()
        return spec


def _mmse_for(label: str, rng) -> float:
    mu, sd = (27.5, 1.5) if label == "CH" else (20.0, 3.5)
    return float(np.clip(rng.normal(mu, sd), 0.0, 30.0))


def generate_subject(spec: SynthSpec, label: str,
                     index: int) -> tuple[Transcript, FrameStream]:
    """One subject's transcript and frame stream (pure function of the seed)."""
    spec.validate()
    rng = substream(spec.seed, "subject", label, index)
    vocab = spec.vocabulary()
    half = spec.vocab_size // 2
    p_first = (1.0 + spec.lexical_signal) / 2.0
    if label == "AD":
        p_first = 1.0 - p_first

    n_words = int(rng.integers(spec.words_low, spec.words_high + 1))
    rates = spec.pause_rates[label]
    n_gaps = n_words - 1
    p_cat = {}
    if n_gaps > 0:
        for cat in ("comma", "period", "ellipsis"):
            p_cat[cat] = min(getattr(rates, cat) / n_gaps, 1.0)
        overflow = sum(p_cat.values())
        if overflow > 1.0:
            p_cat = {c: p / overflow for c, p in p_cat.items()}

    words: list[Word] = []
    t = float(rng.uniform(0.05, 0.30))
    for i in range(n_words):
        in_first = rng.random() < p_first
        lo, hi = (0, half) if in_first else (half, spec.vocab_size)
        text = vocab[int(rng.integers(lo, hi))]
        dur = float(rng.uniform(spec.word_dur_low, spec.word_dur_high))
        words.append(Word(text, t, t + dur))
        t += dur
        if i < n_gaps:
            u = float(rng.random())
            edge = 0.0
            gap = None
            for cat in ("comma", "period", "ellipsis"):
                edge += p_cat[cat]
                if u < edge:
                    gap = float(rng.uniform(*_BUCKET_SPANS[cat]))
                    break
            if gap is None:
                gap = float(rng.uniform(0.02, 0.30))
            t += gap

    transcript = Transcript(words, subject_id=f"{label.lower()}{index:03d}",
                            label=label, mmse=_mmse_for(label, rng))
    transcript.validate()

    n_frames = int(np.ceil((t + 0.1) / spec.stride))
    features = rng.normal(0.0, spec.silence_noise,
                          size=(n_frames, spec.dim)).astype(np.float32)
    for w in words:
        lo_f, hi_f = frame_index_range(spec.stride, 0.0, n_frames,
                                       w.t_start, w.t_end)
        if lo_f < hi_f:
            base = hash_unit_vector(w.text, spec.dim, salt=AUDIO_WORD_SALT)
            noise = rng.normal(0.0, spec.frame_noise,
                               size=(hi_f - lo_f, spec.dim))
            features[lo_f:hi_f] = base + noise.astype(np.float32)
    stream = FrameStream(features, stride=spec.stride, offset=0.0)
    return transcript, stream


def generate_cohort(spec: SynthSpec, out_dir: str | Path) -> list[Path]:
    """Write a full dataset directory; returns the subject bundle paths.

    Layout: cohort.json (spec + roster, the generation ground truth),
    vocab.txt (tokenizer vocabulary), subjects/<id>/{manifest,transcript,frames}.
    """
    from .matrixio import write_matrix  # local import keeps module deps one-way

    spec.validate()
    out_dir = Path(out_dir)
    (out_dir / "subjects").mkdir(parents=True, exist_ok=True)
    (out_dir / "vocab.txt").write_text(
        "\n".join(spec.vocabulary()) + "\n", encoding="utf-8")
    roster = []
    subject_dirs = []
    for label in ("AD", "CH"):
        for index in range(spec.n_per_class):
            transcript, stream = generate_subject(spec, label, index)
            sdir = out_dir / "subjects" / transcript.subject_id
            sdir.mkdir(parents=True, exist_ok=True)
            write_transcript(sdir / "transcript.json", transcript)
            write_matrix(sdir / "frames.cgnm", stream.features,
                         stride=stream.stride, offset=stream.offset)
            Manifest(subject_id=transcript.subject_id, dim=spec.dim,
                     stride=spec.stride, label=label,
                     mmse=transcript.mmse).save(sdir)
            roster.append({"subject_id": transcript.subject_id,
                           "label": label, "mmse": transcript.mmse})
            subject_dirs.append(sdir)
    write_json(out_dir / COHORT_FILE, {
        "generator": spec.to_dict(),
        "subjects": sorted(roster, key=lambda r: r["subject_id"]),
        "vocab_file": "vocab.txt",
    })
    return sorted(subject_dirs)
