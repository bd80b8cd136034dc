"""Alignment tests: enumeration oracles for frame membership, pause buckets,
and the interleaved token sequence."""

import numpy as np
import pytest

from alignfuse import alignment as al
from alignfuse.errors import ContractError
from alignfuse.tokenizer import GreedyTokenizer, HashEmbedder


def rnd(seed):
    return np.random.Generator(np.random.Philox(key=seed))


def frames_in_interval_oracle(stream, t0, t1):
    """Scan every frame and test membership with the literal predicate."""
    return [
        j for j in range(stream.n_frames)
        if t0 <= stream.offset + j * stream.stride < t1
    ]


def make_stream(n_frames, dim, seed=0, stride=0.02, offset=0.0):
    return al.FrameStream(
        rnd(seed).standard_normal((n_frames, dim)).astype(np.float32),
        stride=stride, offset=offset,
    )


class TestClassifyPause:
    def test_paper_buckets(self):
        assert al.classify_pause(0.7) == "comma"
        assert al.classify_pause(1.2) == "period"
        assert al.classify_pause(2.0) == "ellipsis"
        assert al.classify_pause(0.3) is None

    def test_boundary_ownership(self):
        assert al.classify_pause(0.5) == "comma"
        assert al.classify_pause(1.0) == "period"
        assert al.classify_pause(1.5) == "ellipsis"

    def test_negative_rejected(self):
        with pytest.raises(ContractError):
            al.classify_pause(-0.1)

    def test_exhaustive_sweep(self):
        """0.00 .. 3.00 s at 0.01 s resolution against the declared rule."""
        for i in range(301):
            d = i / 100.0
            got = al.classify_pause(d)
            if d < 0.5:
                assert got is None, d
            elif d < 1.0:
                assert got == "comma", d
            elif d < 1.5:
                assert got == "period", d
            else:
                assert got == "ellipsis", d


def make_transcript(gaps, word_dur=0.4, subject="s0", label=None):
    """Build a transcript with the given inter-word gaps."""
    words = []
    t = 0.1
    for i in range(len(gaps) + 1):
        words.append(al.Word(f"w{i}", t, t + word_dur))
        t += word_dur
        if i < len(gaps):
            t += gaps[i]
    return al.Transcript(words, subject_id=subject, label=label)


class TestDetectPauses:
    def test_mixed_gaps(self):
        tr = make_transcript([0.3, 0.7, 2.0])
        events = al.detect_pauses(tr)
        assert [e.category for e in events] == ["comma", "ellipsis"]
        assert [e.after_word_index for e in events] == [1, 2]
        assert events[0].s_p == tr.words[1].t_end
        assert events[0].e_p == tr.words[2].t_start

    def test_single_word_no_events(self):
        tr = al.Transcript([al.Word("only", 0.0, 1.0)], subject_id="s")
        assert al.detect_pauses(tr) == []

    def test_brute_force_equivalence(self):
        g = rnd(99)
        for _ in range(1000):
            n_words = int(g.integers(1, 12))
            gaps = g.uniform(0.0, 2.5, size=max(n_words - 1, 0))
            tr = make_transcript(list(gaps))
            events = al.detect_pauses(tr)
            # oracle: scan all consecutive word pairs directly
            want = []
            for i in range(len(tr.words) - 1):
                d = tr.words[i + 1].t_start - tr.words[i].t_end
                if d >= 0.5:
                    want.append((i, al.classify_pause(d)))
            assert [(e.after_word_index, e.category) for e in events] == want


class TestPooling:
    def test_enumerated_window(self):
        # stride 0.02, word [0.10, 0.20) -> frames 5..9 inclusive (5 frames)
        stream = make_stream(50, 3, seed=1)
        got = al.pool_word_embedding(stream, 0.10, 0.20)
        idx = frames_in_interval_oracle(stream, 0.10, 0.20)
        assert idx == [5, 6, 7, 8, 9]
        want = stream.features[idx].astype(np.float64).mean(axis=0)
        assert np.max(np.abs(got - want)) < 1e-6

    def test_constant_stream_any_interval(self):
        stream = al.FrameStream(np.full((40, 4), 2.5, dtype=np.float32))
        for t0, t1 in [(0.0, 0.1), (0.13, 0.31), (0.5, 0.79)]:
            assert np.allclose(al.pool_word_embedding(stream, t0, t1), 2.5)

    def test_empty_interval_nearest_midpoint(self):
        # frames at 0.00, 0.02, ...; interval (0.027, 0.033) holds no frame
        stream = make_stream(10, 2, seed=2)
        got = al.pool_word_embedding(stream, 0.027, 0.033)
        # midpoint 0.030 -> nearest frames 0.02 (j=1, d=0.01) vs 0.04 (j=2, d=0.01)
        # tie resolves to the lower index via argmin
        assert np.array_equal(got, stream.features[1])
        got2 = al.pool_word_embedding(stream, 0.028, 0.033)
        assert np.array_equal(got2, stream.features[2])  # midpoint 0.0305

    def test_empty_stream_rejected(self):
        stream = al.FrameStream(np.zeros((0, 3), dtype=np.float32))
        with pytest.raises(ContractError):
            al.pool_word_embedding(stream, 0.0, 1.0)

    def test_pause_embedding_enumeration(self):
        # pause [1.0, 1.5), stride 0.02 -> frames 50..74 (25 frames)
        stream = make_stream(100, 3, seed=3)
        ev = al.PauseEvent(1.0, 1.5, "period", 0)
        got = al.pause_embedding(stream, ev)
        idx = frames_in_interval_oracle(stream, 1.0, 1.5)
        assert idx == list(range(50, 75))
        want = stream.features[idx].astype(np.float64).mean(axis=0)
        assert np.max(np.abs(got - want)) < 1e-6

    def test_pause_embedding_zero_stream(self):
        stream = al.FrameStream(np.zeros((100, 3), dtype=np.float32))
        ev = al.PauseEvent(0.5, 1.0, "comma", 0)
        assert np.all(al.pause_embedding(stream, ev) == 0.0)

    def test_pause_outside_span_rejected(self):
        stream = make_stream(10, 2)  # spans [0, 0.2)
        with pytest.raises(ContractError):
            al.pause_embedding(stream, al.PauseEvent(5.0, 6.0, "ellipsis", 0))


class TestInsertPauseTokens:
    def test_comma_after_first_word(self):
        out = al.insert_pause_tokens(
            ["the", "boy"], [al.PauseEvent(0.0, 0.7, "comma", 0)])
        assert out == ["the", ",", "boy"]

    def test_all_three_marks(self):
        events = [
            al.PauseEvent(0, 0.7, "comma", 0),
            al.PauseEvent(0, 1.2, "period", 1),
            al.PauseEvent(0, 2.0, "ellipsis", 2),
        ]
        out = al.insert_pause_tokens(["a", "b", "c", "d"], events)
        assert out == ["a", ",", "b", ".", "c", "...", "d"]

    def test_no_events_unchanged(self):
        assert al.insert_pause_tokens(["x", "y"], []) == ["x", "y"]


class TestExpandSubwords:
    def test_vocab_word_is_atomic(self):
        tok = GreedyTokenizer({"hello", "world"})
        assert al.expand_subwords(["hello"], tok) == [("hello", 0)]

    def test_oov_falls_back_to_characters(self):
        tok = GreedyTokenizer({"xx"})
        got = al.expand_subwords(["abc"], tok)
        assert got == [("a", 0), ("b", 0), ("c", 0)]

    def test_longest_match_greedy(self):
        tok = GreedyTokenizer({"un", "unbelievable", "believ", "able"})
        got = [p for p, _ in al.expand_subwords(["unbelievable"], tok)]
        assert got == ["unbelievable"]
        got2 = [p for p, _ in al.expand_subwords(["unbelievably"], tok)]
        assert got2 == ["un", "believ", "a", "b", "l", "y"]

    def test_roundtrip_property(self):
        g = rnd(5)
        vocab = {"ab", "abc", "bc", "c", "de"}
        tok = GreedyTokenizer(vocab)
        alphabet = "abcde"
        for _ in range(200):
            word = "".join(g.choice(list(alphabet), size=int(g.integers(1, 9))))
            pieces = tok.split(word)
            assert "".join(pieces) == word

    def test_empty_word_rejected(self):
        tok = GreedyTokenizer({"a"})
        with pytest.raises(ContractError):
            tok.split("")


class TestBuildAlignedPair:
    def setup_method(self):
        self.embedder = HashEmbedder(dim=6)
        self.tokenizer = GreedyTokenizer({"the", "boy", "cookie"})

    def test_two_words_one_comma(self):
        words = [al.Word("the", 0.1, 0.5), al.Word("boy", 1.2, 1.6)]
        tr = al.Transcript(words, subject_id="s1")
        stream = make_stream(120, 6, seed=7)
        pair = al.build_aligned_pair(tr, stream, self.embedder, self.tokenizer)
        assert len(pair) == 3
        assert [t.kind for t in pair.tokens] == ["word", "pause", "word"]
        assert pair.tokens[1].text == ","
        want_rows = [
            al.pool_word_embedding(stream, 0.1, 0.5),
            al.pause_embedding(stream, al.PauseEvent(0.5, 1.2, "comma", 0)),
            al.pool_word_embedding(stream, 1.2, 1.6),
        ]
        assert np.array_equal(pair.audio, np.stack(want_rows))

    def test_subword_rows_bitwise_equal(self):
        words = [al.Word("zq", 0.1, 0.5)]  # OOV -> two character tokens
        tr = al.Transcript(words, subject_id="s2")
        stream = make_stream(40, 6, seed=8)
        pair = al.build_aligned_pair(tr, stream, self.embedder, self.tokenizer)
        assert len(pair) == 2
        assert all(t.kind == "subword" for t in pair.tokens)
        assert np.array_equal(pair.audio[0], pair.audio[1])

    def test_no_pauses_no_splits_length_is_word_count(self):
        words = [al.Word("the", 0.1, 0.4), al.Word("boy", 0.5, 0.8)]
        tr = al.Transcript(words, subject_id="s3")
        stream = make_stream(60, 6, seed=9)
        pair = al.build_aligned_pair(tr, stream, self.embedder, self.tokenizer)
        assert len(pair) == 2

    def test_punctuation_stripped_by_default(self):
        words = [al.Word("boy.", 0.1, 0.4)]
        tr = al.Transcript(words, subject_id="s4")
        stream = make_stream(40, 6, seed=10)
        pair = al.build_aligned_pair(tr, stream, self.embedder, self.tokenizer)
        assert pair.tokens[0].text == "boy"
        pair2 = al.build_aligned_pair(tr, stream, self.embedder, self.tokenizer,
                                      strip_asr_punctuation=False)
        assert [t.text for t in pair2.tokens] != ["boy"]

    def test_dimension_mismatch_names_both(self):
        bad_embedder = HashEmbedder(dim=4)
        words = [al.Word("the", 0.1, 0.4)]
        tr = al.Transcript(words, subject_id="s5")
        stream = make_stream(40, 6, seed=11)
        with pytest.raises(ContractError, match=r"\(4,\).*\(6,\)"):
            al.build_aligned_pair(tr, stream, bad_embedder, self.tokenizer)


def random_transcript_and_stream(g, dim=5):
    n_words = int(g.integers(1, 15))
    words = []
    t = float(g.uniform(0.0, 0.3))
    for i in range(n_words):
        dur = float(g.uniform(0.05, 0.6))
        words.append(al.Word(f"w{int(g.integers(0, 30))}", t, t + dur))
        t += dur + float(g.uniform(0.0, 2.2))
    tr = al.Transcript(words, subject_id="r")
    n_frames = int(np.ceil(t / 0.02)) + int(g.integers(1, 10))
    stream = al.FrameStream(
        g.standard_normal((n_frames, dim)).astype(np.float32))
    return tr, stream


class TestAlignmentOracleEquivalence:
    """1000 random transcripts vs a brute-force frame-membership oracle."""

    def test_bulk_equivalence(self):
        g = rnd(123)
        vocab = {f"w{i}" for i in range(0, 30, 2)}  # half the words split
        tok = GreedyTokenizer(vocab)
        embedder = HashEmbedder(dim=5)
        for _ in range(1000):
            tr, stream = random_transcript_and_stream(g)
            pair = al.build_aligned_pair(tr, stream, embedder, tok)

            # oracle: token count from scratch
            n_pieces = sum(len(tok.split(w.text)) for w in tr.words)
            n_pauses = sum(
                1 for i in range(len(tr.words) - 1)
                if tr.words[i + 1].t_start - tr.words[i].t_end >= 0.5
            )
            assert len(pair) == n_pieces + n_pauses

            # oracle: pooled means per token via full-scan membership
            piece_cursor = {}
            for r, token in enumerate(pair.tokens):
                if token.kind == "pause":
                    w0 = tr.words[token.parent_word]
                    w1 = tr.words[token.parent_word + 1]
                    t0, t1 = w0.t_end, w1.t_start
                else:
                    w = tr.words[token.parent_word]
                    t0, t1 = w.t_start, w.t_end
                idx = frames_in_interval_oracle(stream, t0, t1)
                if idx:
                    want = stream.features[idx].astype(np.float64).mean(axis=0)
                    assert np.max(np.abs(pair.audio[r] - want)) < 1e-6
                else:
                    mid = 0.5 * (t0 + t1)
                    times = np.arange(stream.n_frames) * stream.stride
                    j = int(np.argmin(np.abs(times - mid)))
                    assert np.array_equal(pair.audio[r], stream.features[j])
                # subword siblings bitwise equal
                if token.kind == "subword":
                    first = piece_cursor.setdefault(token.parent_word, r)
                    assert np.array_equal(pair.audio[first], pair.audio[r])


class TestPretokenizedPath:
    def test_matches_internal_tokenizer(self):
        tok = GreedyTokenizer({"the"})
        embedder = HashEmbedder(dim=4)
        words = [al.Word("the", 0.0, 0.4), al.Word("zz", 1.2, 1.5)]
        tr = al.Transcript(words, subject_id="p1")
        stream = make_stream(100, 4, seed=12)
        via_tok = al.build_aligned_pair(tr, stream, embedder, tok)

        pieces = [("the", 0), ("z", 1), ("z", 1)]
        mat = np.stack([embedder(p) for p, _ in pieces])
        marks = {m: embedder(m) for m in (",", ".", "...")}
        via_pre = al.build_aligned_pair_pretokenized(tr, stream, pieces, mat, marks)
        assert [t.text for t in via_pre.tokens] == [t.text for t in via_tok.tokens]
        assert np.array_equal(via_pre.audio, via_tok.audio)
        assert np.array_equal(via_pre.text, via_tok.text)

    def test_missing_pause_vectors_rejected(self):
        words = [al.Word("a", 0.0, 0.4), al.Word("b", 1.2, 1.5)]
        tr = al.Transcript(words, subject_id="p2")
        stream = make_stream(100, 4, seed=13)
        with pytest.raises(ContractError, match="pause"):
            al.build_aligned_pair_pretokenized(
                tr, stream, [("a", 0), ("b", 1)], np.zeros((2, 4)), None)


class TestNormalization:
    def test_overlap_clipped_with_count(self):
        words = [al.Word("a", 0.0, 0.6), al.Word("b", 0.5, 1.0)]
        fixed, n = al.normalize_words(words)
        assert n == 1
        assert fixed[0].t_end == 0.5
        al.Transcript(fixed, subject_id="n1").validate()

    def test_collapse_after_clip_is_error(self):
        words = [al.Word("a", 0.5, 0.9), al.Word("b", 0.5, 1.0)]
        fixed, _ = al.normalize_words(words)
        tr = al.Transcript(fixed, subject_id="n2")
        with pytest.raises(ContractError):
            tr.validate()
