"""Word-level alignment of frame features with transcript tokens, plus
pause detection and pause-token insertion.

The central convention: frame j of a stream lives at t_j = offset + j*stride,
and an interval [t0, t1) owns exactly the frames whose t_j falls inside it
(half-open, so a boundary frame is never shared between a word and the pause
that follows it). All boundary index arithmetic is verified against the
literal membership predicate so float rounding can never disagree with a
brute-force scan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError
from .tokenizer import GreedyTokenizer

__all__ = [
    "Word", "Transcript", "FrameStream", "PauseEvent", "AlignedToken",
    "AlignedPair", "PAUSE_MARKS", "normalize_words", "classify_pause",
    "detect_pauses", "pool_word_embedding", "pause_embedding",
    "insert_pause_tokens", "expand_subwords", "strip_punctuation",
    "build_aligned_pair", "build_aligned_pair_pretokenized",
]

# pause category -> inserted mark
PAUSE_MARKS = {"comma": ",", "period": ".", "ellipsis": "..."}
_STRIP_CHARS = ",.!?;:…\"'()[]"
MIN_PAUSE_SECONDS = 0.5


@dataclass(frozen=True)
class Word:
    text: str
    t_start: float
    t_end: float


@dataclass
class Transcript:
    words: list[Word]
    subject_id: str
    label: str | None = None  # "CH" | "AD"
    mmse: float | None = None
    overlap_clips: int = 0  # words whose t_end was clipped during normalization

    def validate(self) -> None:
        if self.label is not None and self.label not in ("CH", "AD"):
            raise ContractError(f"label must be CH or AD, got {self.label!r}")
        if self.mmse is not None and not (0.0 <= self.mmse <= 30.0):
            raise ContractError(f"mmse must be in [0, 30], got {self.mmse}")
        prev_end = None
        for i, w in enumerate(self.words):
            if not w.text:
                raise ContractError(f"word {i} is empty")
            if w.t_start < 0 or not (w.t_start < w.t_end):
                raise ContractError(
                    f"word {i} ({w.text!r}) has invalid interval "
                    f"[{w.t_start}, {w.t_end}]"
                )
            if prev_end is not None and w.t_start < prev_end:
                raise ContractError(
                    f"word {i} ({w.text!r}) starts before the previous word ends"
                )
            prev_end = w.t_end

    @property
    def duration(self) -> float:
        return self.words[-1].t_end if self.words else 0.0


def normalize_words(words: Sequence[Word]) -> tuple[list[Word], int]:
    """Sort by start time and clip overlapping ends; returns (words, n_clipped).

    Raw ASR output occasionally overlaps neighbours; clipping t_end(i) to
    t_start(i+1) restores the non-overlap invariant. A word whose interval
    collapses under clipping is a hard error surfaced by validate().
    """
    ordered = sorted(words, key=lambda w: (w.t_start, w.t_end))
    clipped: list[Word] = []
    n_clipped = 0
    for i, w in enumerate(ordered):
        end = w.t_end
        if i + 1 < len(ordered) and end > ordered[i + 1].t_start:
            end = ordered[i + 1].t_start
            n_clipped += 1
        clipped.append(Word(w.text, w.t_start, end))
    return clipped, n_clipped


@dataclass
class FrameStream:
    """Uniform-stride feature matrix; frame j sits at offset + j*stride."""

    features: np.ndarray  # [F, d] float32
    stride: float = 0.02
    offset: float = 0.0

    def __post_init__(self):
        if self.stride <= 0:
            raise ContractError(f"stride must be positive, got {self.stride}")
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise ContractError(
                f"features must be [frames, dim], got shape {self.features.shape}"
            )

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def frame_time(self, j: int) -> float:
        return self.offset + j * self.stride

    @property
    def end_time(self) -> float:
        return self.offset + self.n_frames * self.stride


@dataclass(frozen=True)
class PauseEvent:
    s_p: float
    e_p: float
    category: str  # "comma" | "period" | "ellipsis"
    after_word_index: int

    @property
    def duration(self) -> float:
        return self.e_p - self.s_p


def classify_pause(duration: float) -> str | None:
    """Bucket an inter-word gap; half-open buckets, upper bucket owns the edge.

    [0, 0.5) -> None, [0.5, 1.0) -> comma, [1.0, 1.5) -> period,
    [1.5, inf) -> ellipsis.
    """
    if duration < 0:
        raise ContractError(f"pause duration must be non-negative, got {duration}")
    if duration < 0.5:
        return None
    if duration < 1.0:
        return "comma"
    if duration < 1.5:
        return "period"
    return "ellipsis"


def detect_pauses(transcript: Transcript) -> list[PauseEvent]:
    """One event per inter-word gap of at least MIN_PAUSE_SECONDS.

    Silence before the first word or after the last word never produces an
    event.
    """
    events: list[PauseEvent] = []
    words = transcript.words
    for i in range(len(words) - 1):
        s_p = words[i].t_end
        e_p = words[i + 1].t_start
        category = classify_pause(max(e_p - s_p, 0.0))
        if category is not None:
            events.append(PauseEvent(s_p, e_p, category, after_word_index=i))
    return events


def frame_index_range(stride: float, offset: float, n_frames: int,
                      t0: float, t1: float) -> tuple[int, int]:
    """Frames j with offset + j*stride in [t0, t1), clipped to [0, n_frames).

    The ceil-division estimates are corrected against the exact predicate so
    the result is identical to scanning every frame.
    """
    def t(j: int) -> float:
        return offset + j * stride

    lo = int(math.ceil((t0 - offset) / stride))
    while t(lo) < t0:
        lo += 1
    while lo > 0 and t(lo - 1) >= t0:
        lo -= 1
    hi = int(math.ceil((t1 - offset) / stride))
    while t(hi) < t1:
        hi += 1
    while hi > 0 and t(hi - 1) >= t1:
        hi -= 1
    return max(lo, 0), min(hi, n_frames)


def _frame_index_range(stream: FrameStream, t0: float, t1: float) -> tuple[int, int]:
    return frame_index_range(stream.stride, stream.offset, stream.n_frames, t0, t1)


def _pool_interval(stream: FrameStream, t0: float, t1: float) -> np.ndarray:
    if stream.n_frames == 0:
        raise ContractError("cannot pool an empty frame stream")
    lo, hi = _frame_index_range(stream, t0, t1)
    if lo < hi:
        pooled = stream.features[lo:hi].mean(axis=0, dtype=np.float64)
        return pooled.astype(np.float32)
    # no interior frame: fall back to the frame nearest the interval midpoint
    mid = 0.5 * (t0 + t1)
    times = stream.offset + np.arange(stream.n_frames) * stream.stride
    j = int(np.argmin(np.abs(times - mid)))
    return stream.features[j].copy()


def pool_word_embedding(stream: FrameStream, t_start: float, t_end: float) -> np.ndarray:
    """Mean of the frames inside a word's interval (nearest frame if empty)."""
    if not t_start < t_end:
        raise ContractError(
            f"word interval must satisfy start < end, got [{t_start}, {t_end}]"
        )
    return _pool_interval(stream, t_start, t_end)


def pause_embedding(stream: FrameStream, event: PauseEvent) -> np.ndarray:
    """Mean of the frames inside the pause interval (nearest frame if empty)."""
    if event.s_p >= stream.end_time or event.e_p <= stream.offset:
        raise ContractError(
            f"pause [{event.s_p}, {event.e_p}] lies outside the stream span "
            f"[{stream.offset}, {stream.end_time}]"
        )
    return _pool_interval(stream, event.s_p, event.e_p)


def insert_pause_tokens(word_texts: Sequence[str],
                        events: Sequence[PauseEvent]) -> list[str]:
    """Interleave pause marks into a word sequence by after_word_index."""
    marks_after: dict[int, list[str]] = {}
    for ev in events:
        marks_after.setdefault(ev.after_word_index, []).append(PAUSE_MARKS[ev.category])
    out: list[str] = []
    for i, text in enumerate(word_texts):
        out.append(text)
        out.extend(marks_after.get(i, ()))
    return out


def expand_subwords(word_texts: Sequence[str],
                    tokenizer: GreedyTokenizer) -> list[tuple[str, int]]:
    """Split each word into subword pieces tagged with the parent word index."""
    out: list[tuple[str, int]] = []
    for i, word in enumerate(word_texts):
        for piece in tokenizer.split(word):
            out.append((piece, i))
    return out


def strip_punctuation(text: str) -> str:
    """Drop surrounding ASR punctuation; keeps the text if it is all punctuation."""
    stripped = text.strip(_STRIP_CHARS)
    return stripped if stripped else text


@dataclass(frozen=True)
class AlignedToken:
    text: str
    kind: str  # "word" | "subword" | "pause"
    parent_word: int  # word index, or the preceding word for a pause token


@dataclass
class AlignedPair:
    """Two equal-length aligned streams plus token metadata."""

    tokens: list[AlignedToken]
    audio: np.ndarray  # [L, d] float32
    text: np.ndarray   # [L, d] float32
    subject_id: str
    label: str | None = None
    mmse: float | None = None

    def __post_init__(self):
        self.audio = np.asarray(self.audio, dtype=np.float32)
        self.text = np.asarray(self.text, dtype=np.float32)

    def __len__(self) -> int:
        return len(self.tokens)

    def validate(self) -> None:
        n = len(self.tokens)
        if self.audio.shape[0] != n or self.text.shape[0] != n:
            raise ContractError(
                f"stream lengths differ: {n} tokens, {self.audio.shape[0]} audio "
                f"rows, {self.text.shape[0]} text rows"
            )
        if self.audio.shape[1] != self.text.shape[1]:
            raise DimensionError(
                f"audio dim {self.audio.shape[1]} != text dim {self.text.shape[1]}"
            )


def _interleave(
    n_words: int,
    word_pieces: Sequence[tuple[str, int]],
    events: Sequence[PauseEvent],
) -> list[AlignedToken]:
    """Merge subword pieces with pause tokens in temporal order."""
    pieces_by_word: dict[int, list[str]] = {}
    for piece, parent in word_pieces:
        pieces_by_word.setdefault(parent, []).append(piece)
    events_after: dict[int, list[PauseEvent]] = {}
    for ev in events:
        events_after.setdefault(ev.after_word_index, []).append(ev)
    tokens: list[AlignedToken] = []
    for i in range(n_words):
        pieces = pieces_by_word.get(i, [])
        kind = "word" if len(pieces) == 1 else "subword"
        for piece in pieces:
            tokens.append(AlignedToken(piece, kind, i))
        for ev in events_after.get(i, ()):
            tokens.append(AlignedToken(PAUSE_MARKS[ev.category], "pause", i))
    return tokens


def build_aligned_pair(
    transcript: Transcript,
    stream: FrameStream,
    text_embedder: Callable[[str], np.ndarray],
    tokenizer: GreedyTokenizer,
    include_pauses: bool = True,
    strip_asr_punctuation: bool = True,
) -> AlignedPair:
    """Tokenize, insert pause tokens, and pool audio per token.

    Subword siblings share their parent word's pooled audio row exactly
    (the same values, copied bit-for-bit); pause tokens pool the silent
    frames of their gap.
    """
    transcript.validate()
    if stream.n_frames == 0:
        raise ContractError("cannot align against an empty frame stream")
    words = transcript.words
    texts = [strip_punctuation(w.text) if strip_asr_punctuation else w.text
             for w in words]
    pieces = expand_subwords(texts, tokenizer)
    events = detect_pauses(transcript) if include_pauses else []
    tokens = _interleave(len(words), pieces, events)

    word_rows = {
        i: pool_word_embedding(stream, w.t_start, w.t_end)
        for i, w in enumerate(words)
    }
    pause_rows: dict[tuple[int, str], np.ndarray] = {}
    for ev in events:
        pause_rows[(ev.after_word_index, ev.category)] = pause_embedding(stream, ev)

    audio = np.empty((len(tokens), stream.dim), dtype=np.float32)
    text = np.empty((len(tokens), stream.dim), dtype=np.float32)
    for r, tok in enumerate(tokens):
        if tok.kind == "pause":
            mark_cat = next(k for k, v in PAUSE_MARKS.items() if v == tok.text)
            audio[r] = pause_rows[(tok.parent_word, mark_cat)]
        else:
            audio[r] = word_rows[tok.parent_word]
        vec = np.asarray(text_embedder(tok.text), dtype=np.float32)
        if vec.shape != (stream.dim,):
            raise DimensionError(
                f"text embedding dim {vec.shape} != audio dim ({stream.dim},)"
            )
        text[r] = vec

    pair = AlignedPair(tokens, audio, text, transcript.subject_id,
                       transcript.label, transcript.mmse)
    pair.validate()
    return pair


def build_aligned_pair_pretokenized(
    transcript: Transcript,
    stream: FrameStream,
    token_pieces: Sequence[tuple[str, int]],
    text_matrix: np.ndarray,
    pause_mark_vectors: dict[str, np.ndarray] | None = None,
    include_pauses: bool = True,
) -> AlignedPair:
    """Align a pre-tokenized text sequence (e.g. from an exported bundle).

    `token_pieces` are (surface, parent_word_index) rows matching
    `text_matrix`; the pieces are accepted verbatim, no re-tokenization.
    Pause tokens are still inserted here, drawing their text embeddings from
    `pause_mark_vectors` (keyed by the mark: "," "." "...").
    """
    transcript.validate()
    if len(token_pieces) != text_matrix.shape[0]:
        raise ContractError(
            f"{len(token_pieces)} tokens but {text_matrix.shape[0]} embedding rows"
        )
    prev_parent = 0
    for piece, parent in token_pieces:
        if not 0 <= parent < len(transcript.words):
            raise ContractError(
                f"token {piece!r} references word {parent}, transcript has "
                f"{len(transcript.words)} words"
            )
        if parent < prev_parent:
            raise ContractError(
                f"token {piece!r} breaks word order (parent {parent} after "
                f"{prev_parent})"
            )
        prev_parent = parent
    events = detect_pauses(transcript) if include_pauses else []
    if events and not pause_mark_vectors:
        raise ContractError(
            "transcript has pauses but no pause-mark text embeddings were provided"
        )
    tokens = _interleave(len(transcript.words), token_pieces, events)

    word_rows = {
        i: pool_word_embedding(stream, w.t_start, w.t_end)
        for i, w in enumerate(transcript.words)
    }
    pause_rows = {
        (ev.after_word_index, ev.category): pause_embedding(stream, ev)
        for ev in events
    }

    text_rows_iter = iter(np.asarray(text_matrix, dtype=np.float32))
    audio = np.empty((len(tokens), stream.dim), dtype=np.float32)
    text = np.empty((len(tokens), stream.dim), dtype=np.float32)
    for r, tok in enumerate(tokens):
        if tok.kind == "pause":
            mark_cat = next(k for k, v in PAUSE_MARKS.items() if v == tok.text)
            audio[r] = pause_rows[(tok.parent_word, mark_cat)]
            text[r] = np.asarray(pause_mark_vectors[tok.text], dtype=np.float32)
        else:
            audio[r] = word_rows[tok.parent_word]
            text[r] = next(text_rows_iter)

    pair = AlignedPair(tokens, audio, text, transcript.subject_id,
                       transcript.label, transcript.mmse)
    pair.validate()
    return pair
