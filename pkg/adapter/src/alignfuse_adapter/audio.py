"""WAV loading and synthesis helpers (stdlib `wave`, 16-bit PCM)."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

__all__ = ["load_wav", "write_wav", "synthesize_tone_sequence"]


def load_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a PCM WAV file into mono float32 samples in [-1, 1]."""
    with wave.open(str(path), "rb") as fh:
        n_channels = fh.getnchannels()
        width = fh.getsampwidth()
        rate = fh.getframerate()
        frames = fh.readframes(fh.getnframes())
    if width != 2:
        raise ValueError(f"{path}: only 16-bit PCM supported, got {8 * width}-bit")
    samples = np.frombuffer(frames, dtype="<i2").astype(np.float32) / 32768.0
    if n_channels > 1:
        samples = samples.reshape(-1, n_channels).mean(axis=1)
    return samples, rate


def write_wav(path: str | Path, samples: np.ndarray, rate: int) -> None:
    clipped = np.clip(samples, -1.0, 1.0)
    pcm = (clipped * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(pcm.tobytes())


def synthesize_tone_sequence(
    segments: list[tuple[float, float]],
    rate: int = 16000,
    amplitude: float = 0.6,
    tail_silence: float = 0.2,
) -> np.ndarray:
    """Build a test signal from (frequency_hz, duration_s) segments.

    Frequency 0 emits silence; tones get a short fade to avoid clicks.
    """
    chunks = []
    for freq, duration in segments:
        n = int(round(duration * rate))
        if freq <= 0:
            chunks.append(np.zeros(n, dtype=np.float32))
            continue
        t = np.arange(n) / rate
        tone = amplitude * np.sin(2 * np.pi * freq * t)
        fade = min(n // 10, int(0.005 * rate)) or 1
        envelope = np.ones(n)
        envelope[:fade] = np.linspace(0.0, 1.0, fade)
        envelope[-fade:] = np.linspace(1.0, 0.0, fade)
        chunks.append((tone * envelope).astype(np.float32))
    chunks.append(np.zeros(int(tail_silence * rate), dtype=np.float32))
    return np.concatenate(chunks)
