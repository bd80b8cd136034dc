"""Export pipeline: recording -> interchange bundle on disk.

The adapter writes raw word timestamps and per-token text embeddings; all
pause logic stays in the consuming pipeline. Pause-mark vectors for the
three punctuation tokens are appended to the embedding matrix so the
consumer can embed the pause tokens it inserts later.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from alignfuse.bundles import Manifest, write_json, write_transcript
from alignfuse.alignment import Transcript, Word, normalize_words
from alignfuse.matrixio import write_matrix

from .audio import load_wav
from .encoders import PAUSE_MARKS, EncoderSuite

__all__ = ["ExportJob", "ExportError", "export_sample", "export_many"]


class ExportError(RuntimeError):
    pass


@dataclass
class ExportJob:
    audio_path: str | Path
    out_dir: str | Path
    suite: EncoderSuite
    subject_id: str | None = None
    label: str | None = None
    mmse: float | None = None
    extra_manifest: dict = field(default_factory=dict)


def export_sample(job: ExportJob) -> Path:
    """Run the suite on one recording and write its bundle directory.

    Returns the bundle path. Raises ExportError when the ASR finds no words
    or the encoders disagree on dimensionality.
    """
    samples, rate = load_wav(job.audio_path)
    suite = job.suite
    subject_id = job.subject_id or Path(job.audio_path).stem

    asr_words = suite.transcribe(samples, rate)
    if not asr_words:
        raise ExportError(f"{job.audio_path}: ASR produced no words")
    words, n_clipped = normalize_words(
        [Word(w.text, w.start, w.end) for w in asr_words])
    transcript = Transcript(words, subject_id=subject_id, label=job.label,
                            mmse=job.mmse, overlap_clips=n_clipped)
    transcript.validate()

    frames = suite.frame_features(samples, rate)
    if frames.ndim != 2 or frames.shape[1] != suite.dim:
        raise ExportError(
            f"frame encoder returned {frames.shape}, expected (*, {suite.dim})")

    token_rows = []
    vectors = []
    for index, word in enumerate(words):
        pieces = suite.tokenize(word.text)
        if "".join(pieces) != word.text:
            raise ExportError(
                f"tokenizer broke word {word.text!r} into {pieces}")
        for piece in pieces:
            vec = np.asarray(suite.token_embedding(piece), dtype=np.float32)
            if vec.shape != (suite.dim,):
                raise ExportError(
                    f"text encoder dim {vec.shape} != frame dim ({suite.dim},)")
            token_rows.append({"text": piece, "parent_word_index": index})
            vectors.append(vec)
    mark_rows = {}
    for mark in PAUSE_MARKS:
        mark_rows[mark] = len(vectors)
        vectors.append(np.asarray(suite.token_embedding(mark),
                                  dtype=np.float32))

    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_transcript(out / "transcript.json", transcript)
    write_matrix(out / "frames.cgnm", frames, stride=suite.stride)
    write_matrix(out / "text_embeddings.cgnm", np.stack(vectors))
    write_json(out / "tokens.json",
               {"tokens": token_rows, "pause_mark_rows": mark_rows})
    manifest = Manifest(
        subject_id=subject_id, dim=suite.dim, stride=suite.stride,
        label=job.label, mmse=job.mmse,
        tokens_file="tokens.json",
        text_embeddings_file="text_embeddings.cgnm",
        extra={"encoder_suite": suite.name,
               "encoder_version": suite.version,
               **job.extra_manifest},
    )
    manifest.save(out)
    return out


def export_many(audio_paths: list[str | Path], out_root: str | Path,
                suite: EncoderSuite, **job_kwargs) -> list[Path]:
    """Export a batch into out_root/subjects/<id>/, one bundle per file."""
    results = []
    for path in audio_paths:
        subject_id = Path(path).stem
        job = ExportJob(audio_path=path,
                        out_dir=Path(out_root) / "subjects" / subject_id,
                        suite=suite, subject_id=subject_id, **job_kwargs)
        results.append(export_sample(job))
    return results
