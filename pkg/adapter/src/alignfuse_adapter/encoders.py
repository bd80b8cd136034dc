"""Encoder suites: word-timestamp ASR, frame-level speech features, and
token-level text embeddings behind one interface.

`ToneLexiconSuite` is fully offline and deterministic: it recognizes pure
tones from a fixed frequency lexicon (a toy audio domain), so the complete
export path can be exercised and tested without any pretrained weights.
`HuggingFaceSuite` wires the same interface to Whisper / Wav2Vec2 /
DistilBERT when those models are available locally.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from alignfuse.rng import hash_unit_vector

__all__ = ["AsrWord", "EncoderSuite", "ToneLexiconSuite", "HuggingFaceSuite",
           "PAUSE_MARKS"]

PAUSE_MARKS = (",", ".", "...")


@dataclass(frozen=True)
class AsrWord:
    text: str
    start: float
    end: float


class EncoderSuite(Protocol):
    name: str
    version: str
    dim: int
    stride: float

    def transcribe(self, samples: np.ndarray, rate: int) -> list[AsrWord]: ...

    def frame_features(self, samples: np.ndarray, rate: int) -> np.ndarray: ...

    def tokenize(self, word: str) -> list[str]: ...

    def token_embedding(self, piece: str) -> np.ndarray: ...


class ToneLexiconSuite:
    """Deterministic suite over a tone-word domain.

    Words are pure tones; recognition is energy segmentation plus
    zero-crossing pitch estimation snapped to the lexicon (frequencies
    300..1500 Hz in 100 Hz steps, spelled "f300".."f1500").
    """

    name = "tone-lexicon"
    version = "1"
    dim = 16
    stride = 0.02
    _salt = "adapter-text"

    LEXICON_HZ = tuple(range(300, 1501, 100))
    ENERGY_THRESHOLD = 0.04
    MIN_WORD_WINDOWS = 3

    def _windows(self, samples: np.ndarray, rate: int) -> np.ndarray:
        width = int(round(self.stride * rate))
        n = len(samples) // width
        return samples[:n * width].reshape(n, width)

    def transcribe(self, samples: np.ndarray, rate: int) -> list[AsrWord]:
        windows = self._windows(samples, rate)
        if not len(windows):
            return []
        energy = np.sqrt((windows ** 2).mean(axis=1))
        voiced = energy > self.ENERGY_THRESHOLD
        words: list[AsrWord] = []
        start = None
        for j, flag in enumerate(list(voiced) + [False]):
            if flag and start is None:
                start = j
            elif not flag and start is not None:
                if j - start >= self.MIN_WORD_WINDOWS:
                    seg = samples[start * int(self.stride * rate):
                                  j * int(self.stride * rate)]
                    freq = self._dominant_freq(seg, rate)
                    snapped = min(self.LEXICON_HZ, key=lambda f: abs(f - freq))
                    words.append(AsrWord(f"f{snapped}", start * self.stride,
                                         j * self.stride))
                start = None
        return words

    @staticmethod
    def _dominant_freq(segment: np.ndarray, rate: int) -> float:
        crossings = np.count_nonzero(np.diff(np.signbit(segment)))
        duration = len(segment) / rate
        return crossings / (2.0 * duration) if duration > 0 else 0.0

    def frame_features(self, samples: np.ndarray, rate: int) -> np.ndarray:
        """Per-window features: log energy, zero-crossing rate, and 14
        log-spaced spectral band magnitudes."""
        windows = self._windows(samples, rate)
        feats = np.zeros((len(windows), self.dim), dtype=np.float32)
        if not len(windows):
            return feats
        energy = np.sqrt((windows ** 2).mean(axis=1))
        feats[:, 0] = np.log1p(energy * 10.0)
        zcr = np.count_nonzero(np.diff(np.signbit(windows), axis=1), axis=1)
        feats[:, 1] = zcr / windows.shape[1]
        spectrum = np.abs(np.fft.rfft(windows, axis=1))
        edges = np.unique(np.geomspace(1, spectrum.shape[1] - 1,
                                       15).astype(int))
        for b in range(min(14, len(edges) - 1)):
            band = spectrum[:, edges[b]:edges[b + 1] + 1]
            feats[:, 2 + b] = np.log1p(band.mean(axis=1))
        return feats

    def tokenize(self, word: str) -> list[str]:
        """Alpha prefix and digit tail as separate pieces; concatenating the
        pieces always reconstructs the word."""
        head = "".join(ch for ch in word if not ch.isdigit())
        if 0 < len(head) < len(word) and word.startswith(head):
            return [head, word[len(head):]]
        return [word]

    def token_embedding(self, piece: str) -> np.ndarray:
        return hash_unit_vector(piece, self.dim, salt=self._salt)


class HuggingFaceSuite:
    """Whisper word timestamps + Wav2Vec2 frames + DistilBERT tokens.

    Models are loaded lazily; constructing this suite fails cleanly when the
    weights are not available locally. Decoding is greedy (temperature 0) so
    repeated exports of the same audio are identical.
    """

    name = "huggingface"
    stride = 0.02
    dim = 768

    def __init__(self,
                 asr_model: str = "openai/whisper-tiny.en",
                 speech_model: str = "facebook/wav2vec2-base-960h",
                 text_model: str = "distilbert-base-uncased",
                 device: str = "cpu"):
        try:
            import torch  # noqa: F401
            from transformers import (AutoModel, AutoTokenizer,
                                      Wav2Vec2Model, pipeline)
        except ImportError as exc:
            raise RuntimeError(
                "HuggingFaceSuite needs the 'hf' extra (torch, transformers)"
            ) from exc
        self.device = device
        self.version = f"{asr_model}+{speech_model}+{text_model}"
        self._asr = pipeline("automatic-speech-recognition", model=asr_model,
                             device=-1 if device == "cpu" else device)
        self._speech = Wav2Vec2Model.from_pretrained(speech_model).eval()
        self._tokenizer = AutoTokenizer.from_pretrained(text_model,
                                                        use_fast=True)
        self._text = AutoModel.from_pretrained(text_model).eval()

    def transcribe(self, samples: np.ndarray, rate: int) -> list[AsrWord]:
        result = self._asr(
            {"raw": samples.astype(np.float32), "sampling_rate": rate},
            return_timestamps="word",
            generate_kwargs={"do_sample": False, "num_beams": 1},
        )
        words = []
        for chunk in result.get("chunks", []):
            start, end = chunk["timestamp"]
            text = chunk["text"].strip()
            if text and start is not None and end is not None and end > start:
                words.append(AsrWord(text, float(start), float(end)))
        return words

    def frame_features(self, samples: np.ndarray, rate: int) -> np.ndarray:
        import torch
        with torch.no_grad():
            wav = torch.from_numpy(samples.astype(np.float32))[None]
            states = self._speech(wav).last_hidden_state[0]
        return states.numpy().astype(np.float32)

    def tokenize(self, word: str) -> list[str]:
        # offset mapping yields raw substrings, so pieces rejoin to the word
        enc = self._tokenizer(word, add_special_tokens=False,
                              return_offsets_mapping=True)
        pieces = [word[a:b] for a, b in enc["offset_mapping"] if b > a]
        return pieces or [word]

    def token_embedding(self, piece: str) -> np.ndarray:
        import torch
        enc = self._tokenizer(piece, return_tensors="pt")
        with torch.no_grad():
            states = self._text(**enc).last_hidden_state[0]
        # mean over the piece's subtokens, specials excluded
        return states[1:-1].mean(dim=0).numpy().astype(np.float32)


def make_suite(kind: str, **kwargs) -> EncoderSuite:
    if kind == "tone":
        return ToneLexiconSuite()
    if kind == "hf":
        return HuggingFaceSuite(**kwargs)
    raise ValueError(f"unknown encoder suite {kind!r}")
