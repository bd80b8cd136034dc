"""JSON interchange formats: transcripts, sample manifests, cohort rosters,
aligned-pair directories, and report files.

JSON writes are canonical (sorted keys, fixed separators, trailing newline)
so identical content is always byte-identical on disk.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .alignment import (AlignedPair, AlignedToken, FrameStream, Transcript,
                        Word, detect_pauses, normalize_words, PAUSE_MARKS)
from .errors import ContractError, FormatError
from .matrixio import read_matrix, write_matrix

__all__ = [
    "write_json", "read_json", "read_transcript", "write_transcript",
    "write_annotated_transcript", "Manifest", "SampleBundle", "load_bundle",
    "validate_bundle", "save_aligned_pair", "load_aligned_pair",
    "list_subject_dirs",
]

TRANSCRIPT_FILE = "transcript.json"
FRAMES_FILE = "frames.cgnm"
MANIFEST_FILE = "manifest.json"
TOKENS_FILE = "tokens.json"
TEXT_EMB_FILE = "text_embeddings.cgnm"
COHORT_FILE = "cohort.json"


def write_json(path: str | Path, payload: dict) -> None:
    text = json.dumps(payload, sort_keys=True, indent=1,
                      separators=(",", ": "), ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


# --- transcripts ---------------------------------------------------------


def read_transcript(path: str | Path) -> Transcript:
    """Load, normalize (overlap clipping), and validate a transcript file."""
    doc = read_json(path)
    rows = doc.get("words")
    if not isinstance(rows, list) or not rows:
        raise FormatError(f"{path}: transcript has no words")
    words = []
    for i, row in enumerate(rows):
        try:
            word = str(row["word"])
            start = float(row["start"])
            end = float(row["end"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: malformed word entry {i}: {exc}") from exc
        if start < 0 or end < 0:
            raise FormatError(f"{path}: word {i} ({word!r}) has negative time")
        words.append(Word(word, start, end))
    normalized, n_clipped = normalize_words(words)
    transcript = Transcript(
        words=normalized,
        subject_id=str(doc.get("subject_id", Path(path).stem)),
        label=doc.get("label"),
        mmse=doc.get("mmse"),
        overlap_clips=n_clipped,
    )
    try:
        transcript.validate()
    except ContractError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return transcript


def _transcript_payload(transcript: Transcript) -> dict:
    payload = {
        "subject_id": transcript.subject_id,
        "words": [{"word": w.text, "start": w.t_start, "end": w.t_end}
                  for w in transcript.words],
    }
    if transcript.label is not None:
        payload["label"] = transcript.label
    if transcript.mmse is not None:
        payload["mmse"] = transcript.mmse
    return payload


def write_transcript(path: str | Path, transcript: Transcript) -> None:
    write_json(path, _transcript_payload(transcript))


def write_annotated_transcript(path: str | Path, transcript: Transcript) -> None:
    """Transcript view with detected pauses inlined as punctuation entries."""
    events = detect_pauses(transcript)
    by_word: dict[int, list] = {}
    for ev in events:
        by_word.setdefault(ev.after_word_index, []).append(ev)
    rows = []
    for i, w in enumerate(transcript.words):
        rows.append({"word": w.text, "start": w.t_start, "end": w.t_end})
        for ev in by_word.get(i, ()):
            rows.append({"word": PAUSE_MARKS[ev.category], "start": ev.s_p,
                         "end": ev.e_p, "pause": True})
    payload = _transcript_payload(transcript)
    payload["words"] = rows
    payload["n_pauses"] = len(events)
    write_json(path, payload)


# --- sample bundles ---------------------------------------------------------


@dataclass
class Manifest:
    subject_id: str
    dim: int
    stride: float
    label: str | None = None
    mmse: float | None = None
    transcript_file: str = TRANSCRIPT_FILE
    frames_file: str = FRAMES_FILE
    tokens_file: str | None = None
    text_embeddings_file: str | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "subject_id": self.subject_id, "dim": self.dim,
            "stride": self.stride, "transcript_file": self.transcript_file,
            "frames_file": self.frames_file,
        }
        if self.label is not None:
            out["label"] = self.label
        if self.mmse is not None:
            out["mmse"] = self.mmse
        if self.tokens_file is not None:
            out["tokens_file"] = self.tokens_file
        if self.text_embeddings_file is not None:
            out["text_embeddings_file"] = self.text_embeddings_file
        if self.extra:
            out["extra"] = self.extra
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "Manifest":
        try:
            return cls(
                subject_id=str(doc["subject_id"]),
                dim=int(doc["dim"]),
                stride=float(doc["stride"]),
                label=doc.get("label"),
                mmse=doc.get("mmse"),
                transcript_file=doc.get("transcript_file", TRANSCRIPT_FILE),
                frames_file=doc.get("frames_file", FRAMES_FILE),
                tokens_file=doc.get("tokens_file"),
                text_embeddings_file=doc.get("text_embeddings_file"),
                extra=doc.get("extra", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed manifest: {exc}") from exc

    def save(self, directory: str | Path) -> None:
        write_json(Path(directory) / MANIFEST_FILE, self.to_dict())


@dataclass
class SampleBundle:
    manifest: Manifest
    transcript: Transcript
    stream: FrameStream
    tokens: list[tuple[str, int]] | None = None  # (piece, parent_word_index)
    text_embeddings: np.ndarray | None = None
    pause_mark_vectors: dict[str, np.ndarray] | None = None


def validate_bundle(directory: str | Path) -> list[str]:
    """Check a bundle without loading feature payloads into the pipeline.

    Returns warnings (empty means fully clean); hard violations raise
    FormatError. The manifest's dims are authoritative: any mismatch with a
    payload header is a hard error, surfaced before any compute.
    """
    directory = Path(directory)
    manifest = Manifest.from_dict(read_json(directory / MANIFEST_FILE))
    warnings: list[str] = []
    transcript = read_transcript(directory / manifest.transcript_file)
    if transcript.overlap_clips:
        warnings.append(
            f"{manifest.subject_id}: clipped {transcript.overlap_clips} "
            f"overlapping word(s)")
    if transcript.subject_id != manifest.subject_id:
        raise FormatError(
            f"{directory}: manifest subject {manifest.subject_id!r} != "
            f"transcript subject {transcript.subject_id!r}")
    frames, stride, _ = read_matrix(directory / manifest.frames_file)
    if frames.shape[1] != manifest.dim:
        raise FormatError(
            f"{directory}: manifest dim {manifest.dim} != frame matrix "
            f"cols {frames.shape[1]}")
    if abs(stride - manifest.stride) > 1e-12:
        raise FormatError(
            f"{directory}: manifest stride {manifest.stride} != matrix "
            f"header stride {stride}")
    if manifest.tokens_file is not None:
        doc = read_json(directory / manifest.tokens_file)
        rows = doc.get("tokens", [])
        if manifest.text_embeddings_file is None:
            raise FormatError(f"{directory}: tokens file without embeddings file")
        emb, _, _ = read_matrix(directory / manifest.text_embeddings_file)
        n_marks = len(doc.get("pause_mark_rows", {}))
        if emb.shape[0] != len(rows) + n_marks:
            raise FormatError(
                f"{directory}: {len(rows)} tokens + {n_marks} pause marks but "
                f"{emb.shape[0]} embedding rows")
        if emb.shape[1] != manifest.dim:
            raise FormatError(
                f"{directory}: manifest dim {manifest.dim} != text embedding "
                f"cols {emb.shape[1]}")
        parents = [int(r["parent_word_index"]) for r in rows]
        if parents and (min(parents) < 0 or
                        max(parents) >= len(transcript.words)):
            raise FormatError(f"{directory}: token parent index out of range")
        # concatenated pieces must reconstruct each referenced word
        by_parent: dict[int, str] = {}
        for r in rows:
            by_parent[int(r["parent_word_index"])] = \
                by_parent.get(int(r["parent_word_index"]), "") + str(r["text"])
        for parent, joined in by_parent.items():
            if joined != transcript.words[parent].text:
                warnings.append(
                    f"{manifest.subject_id}: tokens for word {parent} join to "
                    f"{joined!r} != {transcript.words[parent].text!r}")
    return warnings


def load_bundle(directory: str | Path) -> SampleBundle:
    """Validate and load one subject bundle (manifest dims are authoritative)."""
    directory = Path(directory)
    validate_bundle(directory)  # hard errors raise before any compute
    manifest = Manifest.from_dict(read_json(directory / MANIFEST_FILE))
    transcript = read_transcript(directory / manifest.transcript_file)
    if manifest.label is not None:
        transcript.label = manifest.label
    if manifest.mmse is not None:
        transcript.mmse = manifest.mmse
    frames, stride, offset = read_matrix(directory / manifest.frames_file)
    stream = FrameStream(frames, stride=stride, offset=offset)
    tokens = None
    text_embeddings = None
    pause_marks = None
    if manifest.tokens_file is not None:
        doc = read_json(directory / manifest.tokens_file)
        tokens = [(str(r["text"]), int(r["parent_word_index"]))
                  for r in doc.get("tokens", [])]
        emb, _, _ = read_matrix(directory / manifest.text_embeddings_file)
        text_embeddings = emb[:len(tokens)]
        mark_rows = doc.get("pause_mark_rows", {})
        if mark_rows:
            pause_marks = {mark: emb[int(row)] for mark, row in mark_rows.items()}
    return SampleBundle(manifest, transcript, stream, tokens, text_embeddings,
                        pause_marks)


def list_subject_dirs(dataset_dir: str | Path) -> list[Path]:
    root = Path(dataset_dir) / "subjects"
    if not root.is_dir():
        raise FormatError(f"{dataset_dir}: no subjects/ directory")
    return sorted(p for p in root.iterdir() if (p / MANIFEST_FILE).exists())


# --- aligned pairs ------------------------------------------------------------


def save_aligned_pair(directory: str | Path, pair: AlignedPair) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payload = {
        "subject_id": pair.subject_id,
        "tokens": [{"text": t.text, "kind": t.kind, "parent_word": t.parent_word}
                   for t in pair.tokens],
    }
    if pair.label is not None:
        payload["label"] = pair.label
    if pair.mmse is not None:
        payload["mmse"] = pair.mmse
    write_json(directory / "pair.json", payload)
    write_matrix(directory / "audio.cgnm", pair.audio)
    write_matrix(directory / "text.cgnm", pair.text)


def load_aligned_pair(directory: str | Path) -> AlignedPair:
    directory = Path(directory)
    doc = read_json(directory / "pair.json")
    tokens = [AlignedToken(str(r["text"]), str(r["kind"]), int(r["parent_word"]))
              for r in doc.get("tokens", [])]
    audio, _, _ = read_matrix(directory / "audio.cgnm")
    text, _, _ = read_matrix(directory / "text.cgnm")
    pair = AlignedPair(tokens, audio, text, str(doc["subject_id"]),
                       doc.get("label"), doc.get("mmse"))
    pair.validate()
    return pair


def write_aligned_dataset(out_dir: str | Path, pairs: list[AlignedPair],
                          meta: dict) -> None:
    out_dir = Path(out_dir)
    (out_dir / "subjects").mkdir(parents=True, exist_ok=True)
    for pair in pairs:
        save_aligned_pair(out_dir / "subjects" / pair.subject_id, pair)
    doc = dict(meta)
    doc["subjects"] = sorted(p.subject_id for p in pairs)
    write_json(out_dir / "aligned.json", doc)


def load_aligned_dataset(directory: str | Path) -> list[AlignedPair]:
    directory = Path(directory)
    doc = read_json(directory / "aligned.json")
    return [load_aligned_pair(directory / "subjects" / sid)
            for sid in doc["subjects"]]
