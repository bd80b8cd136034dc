"""Attribution tests: exactness on linear targets, completeness on the full
model, report round trips, and corpus statistics."""

import numpy as np
import pytest

from alignfuse import autodiff as ad
from alignfuse import explain as ex
from alignfuse.alignment import AlignedPair, AlignedToken, Transcript, Word
from alignfuse.errors import ContractError
from alignfuse.model import ModelConfig, init_weights
from alignfuse.synth import PauseRates, SynthSpec, generate_subject


def rnd(seed):
    return np.random.Generator(np.random.Philox(key=seed))


def make_pair(seed, length=6, dim=8):
    g = rnd(seed)
    tokens = [AlignedToken(f"t{i}", "word", i) for i in range(length)]
    return AlignedPair(tokens, g.standard_normal((length, dim)).astype(np.float32),
                       g.standard_normal((length, dim)).astype(np.float32),
                       subject_id=f"e{seed}", label="AD")


def small_config(**over):
    base = dict(d_model=8, n_heads=2, d_ff=16, dropout_rate=0.0, max_len=64)
    base.update(over)
    return ModelConfig(**base)


class TestPathAttributions:
    def test_input_equal_to_baseline_gives_zero(self):
        cfg = small_config()
        w = init_weights(cfg, seed=1)
        pair = make_pair(2)
        amap = ex.integrated_gradients(
            cfg, w, pair, steps=16,
            baseline=(pair.audio.copy(), pair.text.copy()))
        assert np.allclose(amap.scores, 0.0, atol=1e-7)
        assert amap.completeness_gap < 1e-6

    def test_linear_target_exact_any_steps(self):
        g = rnd(3)
        dim, length = 5, 4
        wa = g.standard_normal((length, dim))
        wt = g.standard_normal((length, dim))

        def linear_target(audio, text):
            sa = ad.mul(audio, ad.constant(wa[None], dtype=np.float64))
            st = ad.mul(text, ad.constant(wt[None], dtype=np.float64))
            tot = ad.add(sa, st)
            summed = ad.mul(ad.mean_axis(ad.mean_axis(tot, -1), -1),
                            float(length * dim))
            return summed

        x_a = g.standard_normal((length, dim))
        x_t = g.standard_normal((length, dim))
        base_a = np.zeros_like(x_a)
        base_t = np.zeros_like(x_t)
        for steps in (1, 2, 16):
            attr_a, attr_t, delta = ex._path_attributions(
                linear_target, x_a, x_t, base_a, base_t, steps)
            assert np.max(np.abs(attr_a - wa * x_a)) < 1e-9, steps
            assert np.max(np.abs(attr_t - wt * x_t)) < 1e-9, steps
            gap = abs(attr_a.sum() + attr_t.sum() - delta)
            assert gap <= 1e-6

    def test_full_model_completeness_under_one_percent(self,
                                                       trained_small_model):
        cfg, w, pairs = trained_small_model
        for pair in pairs[:4]:
            amap = ex.integrated_gradients(cfg, w, pair, steps=256)
            assert abs(amap.output_delta) > 0
            assert amap.completeness_gap < 0.01 * abs(amap.output_delta)

    def test_more_steps_never_worse(self, trained_small_model):
        cfg, w, pairs = trained_small_model
        gaps = {}
        for steps in (16, 64, 256):
            amap = ex.integrated_gradients(cfg, w, pairs[0], steps=steps)
            gaps[steps] = amap.completeness_gap
        noise = 0.02 * abs(amap.output_delta) + 1e-6
        assert gaps[64] <= gaps[16] + noise
        assert gaps[256] <= gaps[64] + noise

    def test_steps_floor_enforced(self):
        cfg = small_config()
        w = init_weights(cfg, seed=22)
        with pytest.raises(ContractError):
            ex.integrated_gradients(cfg, w, make_pair(23), steps=4)

    def test_regression_target(self):
        cfg = small_config(task="regress")
        w = init_weights(cfg, seed=24)
        amap = ex.integrated_gradients(cfg, w, make_pair(25), steps=32)
        assert len(amap.scores) == 6


class TestRendering:
    def _map(self, scores):
        return ex.AttributionMap(
            tokens=[f"t{i}" for i in range(len(scores))],
            scores=scores, predicted_class="AD",
            completeness_gap=1.5e-4, output_delta=2.0)

    def test_roundtrip_through_parser(self):
        amap = self._map([0.5, -0.25, 0.1, 0.0])
        text = ex.render_attributions(amap)
        back = ex.parse_attribution_report(text)
        assert back.tokens == amap.tokens
        assert np.allclose(back.scores, amap.scores, atol=1e-9)
        assert back.predicted_class == "AD"
        assert back.completeness_gap == pytest.approx(1.5e-4)

    def test_all_zero_scores_neutral(self):
        text = ex.render_attributions(self._map([0.0, 0.0, 0.0]))
        rows = [ln for ln in text.splitlines() if not ln.startswith("#")]
        assert all(ln.split("\t")[2] == "=" for ln in rows)
        assert all(float(ln.split("\t")[3]) == 0.0 for ln in rows)

    def test_dominant_token_full_intensity(self):
        text = ex.render_attributions(self._map([0.1, -2.0, 0.3]))
        rows = [ln.split("\t") for ln in text.splitlines()
                if not ln.startswith("#")]
        assert float(rows[1][3]) == 1.0
        assert rows[1][2] == "-"

    def test_html_contains_tokens(self):
        html_text = ex.render_attributions_html(self._map([1.0, -0.5]))
        assert "t0" in html_text and "t1" in html_text
        assert "rgba(0,160,0" in html_text and "rgba(200,0,0" in html_text


class TestCorpusStats:
    def _transcript(self, subject, label, gaps, n_words=None):
        words = []
        t = 0.0
        n = len(gaps) + 1
        for i in range(n):
            words.append(Word(f"w{i}", t, t + 0.3))
            t += 0.3
            if i < len(gaps):
                t += gaps[i]
        return Transcript(words, subject_id=subject, label=label)

    def test_mean_comma_count(self):
        t1 = self._transcript("a", "CH", [0.7])            # 1 comma
        t2 = self._transcript("b", "CH", [0.7, 0.7, 0.7])  # 3 commas
        stats = ex.corpus_stats([t1, t2])
        assert stats.per_class["CH"].comma_mean == pytest.approx(2.0)

    def test_planted_ordering_recovered(self):
        spec = SynthSpec(
            n_per_class=8, vocab_size=12, dim=4, words_low=15, words_high=25,
            lexical_signal=0.0, seed=77,
            pause_rates={"CH": PauseRates(1.0, 0.5, 0.3),
                         "AD": PauseRates(1.0, 0.5, 3.0)})
        transcripts = []
        for label in ("CH", "AD"):
            for i in range(spec.n_per_class):
                tr, _ = generate_subject(spec, label, i)
                transcripts.append(tr)
        stats = ex.corpus_stats(transcripts)
        assert stats.per_class["AD"].ellipsis_mean > \
            stats.per_class["CH"].ellipsis_mean

    def test_empty_class_absent_not_zero(self):
        stats = ex.corpus_stats([self._transcript("a", "CH", [0.7])])
        assert "AD" not in stats.per_class
        assert "CH" in stats.per_class

    def test_missing_label_rejected(self):
        with pytest.raises(ContractError):
            ex.corpus_stats([self._transcript("a", None, [0.7])])

    def test_permutation_invariant(self):
        ts = [self._transcript(f"s{i}", "AD" if i % 2 else "CH",
                               [0.6] * (i % 4)) for i in range(8)]
        s1 = ex.corpus_stats(ts)
        s2 = ex.corpus_stats(list(reversed(ts)))
        assert s1.to_dict() == s2.to_dict()
