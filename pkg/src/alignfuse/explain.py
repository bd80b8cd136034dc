"""Token attribution by path-integrated gradients, plus corpus prosody
statistics.

Attribution integrates the gradient of the target output along the straight
line from a baseline (zero embeddings on both streams by default) to the
actual input, with trapezoid quadrature. Both aligned streams are
attributable; a token's score is the sum of its audio-side and text-side
attributions. The sum over tokens should equal the output difference
F(x) - F(baseline); the residual is reported as `completeness_gap`, never
hidden.
"""

from __future__ import annotations

import html
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .alignment import AlignedPair, Transcript, detect_pauses
from .autodiff import Tape, Tensor
from .errors import ContractError, TrainingAbort
from .model import ModelConfig, ModelWeights, forward_batch

__all__ = [
    "AttributionMap", "integrated_gradients", "attribution_target",
    "render_attributions", "render_attributions_html",
    "parse_attribution_report", "ClassStats", "CorpusStats", "corpus_stats",
]


@dataclass
class AttributionMap:
    tokens: list[str]
    scores: list[float]
    predicted_class: str
    completeness_gap: float
    output_delta: float  # F(x) - F(baseline) for the target output

    def __post_init__(self):
        if len(self.tokens) != len(self.scores):
            raise ContractError(
                f"{len(self.tokens)} tokens but {len(self.scores)} scores")


def attribution_target(
    config: ModelConfig, weights: ModelWeights, target_class: int | None,
) -> Callable[[Tensor, Tensor], Tensor]:
    """Batched scalar-per-sample target: a class logit, or the raw score."""

    def target(audio: Tensor, text: Tensor) -> Tensor:
        out = forward_batch(audio, text, None, config, weights, train=False)
        if config.task == "classify":
            if target_class is None:
                raise ContractError("target_class required for classification")
            picked = ad.narrow(out, 1, target_class, 1)
        else:
            picked = ad.narrow(out, 1, 0, 1)
        return ad.mean_axis(picked, axis=1)  # [B, 1] -> [B]

    return target


def _path_attributions(
    target: Callable[[Tensor, Tensor], Tensor],
    audio: np.ndarray, text: np.ndarray,
    baseline_audio: np.ndarray, baseline_text: np.ndarray,
    steps: int,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Trapezoid path integral of input gradients, one batched tape.

    Returns (audio attributions, text attributions, output delta). The whole
    path is evaluated as a single batch of steps+1 interpolated inputs, and
    the k-weighted sum of per-step targets makes the input gradient buffer
    hold exactly the weighted gradient sum the integral needs.
    """
    if steps < 1:
        raise ContractError(f"steps must be >= 1, got {steps}")
    dtype = audio.dtype
    alphas = (np.arange(steps + 1, dtype=np.float64) / steps)
    trap = np.full(steps + 1, 1.0 / steps, dtype=np.float64)
    trap[0] = trap[-1] = 0.5 / steps

    audio_path = (baseline_audio[None] +
                  alphas[:, None, None] * (audio - baseline_audio)[None]
                  ).astype(dtype)
    text_path = (baseline_text[None] +
                 alphas[:, None, None] * (text - baseline_text)[None]
                 ).astype(dtype)
    a_in = Tensor(audio_path, requires_grad=True, dtype=dtype)
    t_in = Tensor(text_path, requires_grad=True, dtype=dtype)
    with Tape() as tape:
        per_step = target(a_in, t_in)  # [steps+1]
        if per_step.data.ndim != 1 or per_step.data.shape[0] != steps + 1:
            raise ContractError(
                f"target must return one scalar per path point, got shape "
                f"{per_step.data.shape}")
        weighted = ad.mul(per_step, ad.constant(trap.astype(dtype), dtype=dtype))
        total = ad.mul(ad.mean_axis(weighted, axis=0), float(steps + 1))
    tape.backward(total)
    if a_in.grad is None or t_in.grad is None:
        raise TrainingAbort("attribution target is disconnected from inputs")
    if not (np.isfinite(a_in.grad).all() and np.isfinite(t_in.grad).all()):
        raise TrainingAbort("non-finite gradient encountered during attribution")
    avg_grad_a = a_in.grad.sum(axis=0)
    avg_grad_t = t_in.grad.sum(axis=0)
    attr_audio = (audio - baseline_audio) * avg_grad_a
    attr_text = (text - baseline_text) * avg_grad_t
    delta = float(per_step.data[-1]) - float(per_step.data[0])
    return attr_audio, attr_text, delta


def integrated_gradients(
    config: ModelConfig, weights: ModelWeights, pair: AlignedPair,
    target_class: int | None = None, steps: int = 256,
    baseline: tuple[np.ndarray, np.ndarray] | None = None,
) -> AttributionMap:
    """Per-token attribution scores for one aligned sample.

    The target is the logit of `target_class` (default: the predicted class)
    for classification, or the raw score for regression. Baseline defaults
    to zero embeddings on both streams.
    """
    pair.validate()
    if steps < 8:
        raise ContractError(f"steps must be >= 8, got {steps}")
    out = forward_batch(ad.constant(pair.audio[None]),
                        ad.constant(pair.text[None]),
                        None, config, weights, train=False).data[0]
    if config.task == "classify":
        predicted = int(np.argmax(out))
        if target_class is None:
            target_class = predicted
        predicted_name = ("CH", "AD")[predicted]
    else:
        predicted_name = f"{float(out[0]):.4f}"
    if baseline is None:
        baseline = (np.zeros_like(pair.audio), np.zeros_like(pair.text))
    base_a, base_t = baseline
    if base_a.shape != pair.audio.shape or base_t.shape != pair.text.shape:
        raise ContractError("baseline shapes must match the input streams")

    target = attribution_target(config, weights, target_class)
    attr_a, attr_t, delta = _path_attributions(
        target, pair.audio, pair.text, base_a, base_t, steps)
    scores = (attr_a.sum(axis=1, dtype=np.float64) +
              attr_t.sum(axis=1, dtype=np.float64))
    gap = abs(float(scores.sum()) - delta)
    return AttributionMap(
        tokens=[t.text for t in pair.tokens],
        scores=[float(s) for s in scores],
        predicted_class=predicted_name,
        completeness_gap=gap,
        output_delta=delta,
    )


# --- report rendering -----------------------------------------------------


def render_attributions(amap: AttributionMap) -> str:
    """Plain-text report: header lines then one token<TAB>score per line."""
    lines = [
        f"# predicted_class\t{amap.predicted_class}",
        f"# output_delta\t{amap.output_delta:.6e}",
        f"# completeness_gap\t{amap.completeness_gap:.6e}",
    ]
    peak = max((abs(s) for s in amap.scores), default=0.0)
    for token, score in zip(amap.tokens, amap.scores):
        intensity = abs(score) / peak if peak > 0 else 0.0
        sign = "+" if score > 0 else ("-" if score < 0 else "=")
        lines.append(f"{token}\t{score:.6e}\t{sign}\t{intensity:.4f}")
    return "\n".join(lines) + "\n"


def parse_attribution_report(text: str) -> AttributionMap:
    """Inverse of render_attributions (used by round-trip checks)."""
    tokens: list[str] = []
    scores: list[float] = []
    header: dict[str, str] = {}
    for line in text.splitlines():
        if not line:
            continue
        if line.startswith("# "):
            key, _, value = line[2:].partition("\t")
            header[key] = value
            continue
        parts = line.split("\t")
        tokens.append(parts[0])
        scores.append(float(parts[1]))
    return AttributionMap(
        tokens=tokens, scores=scores,
        predicted_class=header.get("predicted_class", "?"),
        completeness_gap=float(header.get("completeness_gap", "nan")),
        output_delta=float(header.get("output_delta", "nan")),
    )


def render_attributions_html(amap: AttributionMap) -> str:
    """Minimal HTML rendering: green positive, red negative, alpha = weight."""
    peak = max((abs(s) for s in amap.scores), default=0.0)
    spans = []
    for token, score in zip(amap.tokens, amap.scores):
        intensity = abs(score) / peak if peak > 0 else 0.0
        color = "0,160,0" if score >= 0 else "200,0,0"
        spans.append(
            f'<span style="background: rgba({color},{intensity:.3f})" '
            f'title="{score:.4e}">{html.escape(token)}</span>')
    body = " ".join(spans)
    return (
        "<!doctype html><html><head><meta charset=\"utf-8\"></head><body>"
        f"<p>predicted: {html.escape(amap.predicted_class)} | "
        f"completeness gap: {amap.completeness_gap:.3e}</p>"
        f"<p>{body}</p></body></html>\n")


# --- corpus statistics -----------------------------------------------------


@dataclass
class ClassStats:
    n_subjects: int
    comma_mean: float
    period_mean: float
    ellipsis_mean: float
    duration_mean: float
    word_count_mean: float

    def to_dict(self) -> dict:
        return {
            "n_subjects": self.n_subjects, "comma_mean": self.comma_mean,
            "period_mean": self.period_mean, "ellipsis_mean": self.ellipsis_mean,
            "duration_mean": self.duration_mean,
            "word_count_mean": self.word_count_mean,
        }


@dataclass
class CorpusStats:
    """Per-class prosody means; classes with no subjects are simply absent."""

    per_class: dict[str, ClassStats]

    def to_dict(self) -> dict:
        return {label: stats.to_dict()
                for label, stats in sorted(self.per_class.items())}


def corpus_stats(transcripts: list[Transcript]) -> CorpusStats:
    """Mean pause counts (by category), duration, and word count per class."""
    buckets: dict[str, list[tuple[int, int, int, float, int]]] = {}
    for tr in transcripts:
        if tr.label is None:
            raise ContractError(f"subject {tr.subject_id} has no class label")
        events = detect_pauses(tr)
        counts = {"comma": 0, "period": 0, "ellipsis": 0}
        for ev in events:
            counts[ev.category] += 1
        buckets.setdefault(tr.label, []).append(
            (counts["comma"], counts["period"], counts["ellipsis"],
             tr.duration, len(tr.words)))
    per_class = {}
    for label, rows in buckets.items():
        arr = np.asarray(rows, dtype=np.float64)
        per_class[label] = ClassStats(
            n_subjects=len(rows),
            comma_mean=float(arr[:, 0].mean()),
            period_mean=float(arr[:, 1].mean()),
            ellipsis_mean=float(arr[:, 2].mean()),
            duration_mean=float(arr[:, 3].mean()),
            word_count_mean=float(arr[:, 4].mean()),
        )
    return CorpusStats(per_class)
