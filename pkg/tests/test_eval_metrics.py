import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import eer_sweep, pooled_cosine_loop, uar_tally, wer_enumerate_batch
from voxanon.errors import DataError, DomainError, SchemaError
from voxanon.io_formats import Embedding, Transcript, Trial, TrialList, TrialScore
from voxanon.eval_metrics import (
    WerResult,
    align_words,
    compute_eer,
    corpus_wer,
    eer_from_arrays,
    enrollment_score,
    operating_points,
    score_trials,
    unweighted_average_recall,
    word_error_rate,
)


class TestEnrollmentScore:
    def test_self_similarity(self, rng):
        v = rng.standard_normal(8)
        assert enrollment_score([v], v) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        e = [np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])]
        assert enrollment_score(e, np.array([0.0, 0.0, 2.0])) == 0.0

    def test_matches_loop(self, rng):
        for _ in range(20):
            enroll = [rng.standard_normal(12) * rng.uniform(0.1, 10) for _ in range(5)]
            test = rng.standard_normal(12)
            assert enrollment_score(enroll, test) == pytest.approx(pooled_cosine_loop(enroll, test), abs=1e-9)

    def test_order_symmetric(self, rng):
        enroll = [rng.standard_normal(6) for _ in range(7)]
        test = rng.standard_normal(6)
        a = enrollment_score(enroll, test)
        b = enrollment_score(enroll[::-1], test)
        assert a == pytest.approx(b, abs=1e-14)

    def test_score_pooling(self):
        e = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
        t = np.array([1.0, 0.0])
        assert enrollment_score(e, t, pooling="score") == pytest.approx(0.5)
        assert enrollment_score(e, t) == pytest.approx(1 / np.sqrt(2))

    def test_errors(self):
        with pytest.raises(SchemaError):
            enrollment_score([], np.ones(3))
        with pytest.raises(DataError):
            enrollment_score([np.zeros(3)], np.ones(3))
        with pytest.raises(SchemaError):
            enrollment_score([np.ones(3)], np.ones(3), pooling="median")

    def test_score_trials(self, rng):
        pools = {"a": [Embedding(rng.standard_normal(4), f"e{i}", "a") for i in range(3)]}
        tests = {"t1": Embedding(rng.standard_normal(4), "t1"), "t2": rng.standard_normal(4)}
        trials = TrialList([Trial("a", "t1", True), Trial("a", "t2", False)])
        out = score_trials(trials, pools, tests)
        assert [(s.enroll_speaker_id, s.test_utterance_id, s.is_target) for s in out] == [
            ("a", "t1", True),
            ("a", "t2", False),
        ]
        assert all(-1.0 <= s.score <= 1.0 for s in out)
        with pytest.raises(DataError):
            score_trials([Trial("b", "t1", True)], pools, tests)


class TestEer:
    def test_separable(self):
        assert eer_from_arrays([0.9, 0.8], [0.1, 0.2]).eer == 0.0

    def test_interleaved(self):
        assert eer_from_arrays([0.6, 0.4], [0.5, 0.3]).eer == 0.5

    def test_fully_reversed(self):
        assert eer_from_arrays([0.1, 0.2], [0.8, 0.9]).eer == 1.0

    def test_all_tied(self):
        assert eer_from_arrays([0.5] * 3, [0.5] * 4).eer == pytest.approx(0.5)

    def test_counts(self):
        res = eer_from_arrays([0.9, 0.8, 0.7], [0.1])
        assert (res.n_target, res.n_nontarget) == (3, 1)

    def test_matches_sweep(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 300))
            labels = rng.random(n) < rng.uniform(0.1, 0.9)
            labels[0], labels[1] = True, False
            # coarse rounding forces plenty of ties
            scores = np.round(rng.standard_normal(n) + labels * rng.uniform(0, 2), int(rng.integers(0, 3)))
            got = eer_from_arrays(scores[labels], scores[~labels]).eer
            assert got == pytest.approx(eer_sweep(list(scores[labels]), list(scores[~labels])), abs=1e-9)

    def test_label_swap_complements(self, rng):
        for _ in range(30):
            t = rng.normal(1.0, 1.0, int(rng.integers(5, 80)))
            n = rng.normal(0.0, 1.0, int(rng.integers(5, 80)))
            e = eer_from_arrays(t, n).eer
            swapped = eer_from_arrays(n, t).eer
            assert swapped == pytest.approx(1 - e, abs=1e-12)
            assert swapped == pytest.approx(eer_sweep(list(n), list(t)), abs=1e-9)

    def test_monotone_transform_invariance(self, rng):
        t = rng.normal(0.5, 1, 40)
        n = rng.normal(0, 1, 60)
        a = eer_from_arrays(t, n).eer
        b = eer_from_arrays(np.exp(3 * t) + 1, np.exp(3 * n) + 1).eer
        assert a == pytest.approx(b, abs=1e-12)

    def test_identical_distributions(self):
        rng = np.random.default_rng(77)
        e = eer_from_arrays(rng.standard_normal(5000), rng.standard_normal(5000)).eer
        assert abs(e - 0.5) <= 0.02

    def test_threshold_lies_between_classes(self):
        res = eer_from_arrays([0.9, 0.8], [0.1, 0.2])
        assert 0.2 < res.threshold <= 0.8

    def test_operating_points_endpoints(self, rng):
        s = rng.standard_normal(30)
        y = rng.random(30) < 0.5
        y[:2] = [True, False]
        th, miss, fa = operating_points(s, y)
        assert (miss[0], fa[0]) == (0.0, 1.0)
        assert (miss[-1], fa[-1]) == (1.0, 0.0)
        assert np.all(np.diff(th) > 0)
        assert np.all(np.diff(miss) >= 0) and np.all(np.diff(fa) <= 0)

    def test_missing_class(self):
        with pytest.raises(SchemaError):
            compute_eer([TrialScore(0.1, True)])
        with pytest.raises(SchemaError):
            compute_eer([])

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.integers(-5, 5), min_size=1, max_size=25),
        st.lists(st.integers(-5, 5), min_size=1, max_size=25),
    )
    def test_sweep_property(self, t, n):
        got = eer_from_arrays([x / 4 for x in t], [x / 4 for x in n]).eer
        assert 0.0 <= got <= 1.0
        assert got == pytest.approx(eer_sweep([x / 4 for x in t], [x / 4 for x in n]), abs=1e-9)


class TestWer:
    def test_identity(self):
        res = word_error_rate("the cat sat on mat".split(), "the cat sat on mat".split())
        assert (res.substitutions, res.deletions, res.insertions, res.wer) == (0, 0, 0, 0.0)

    def test_empty_hypothesis(self):
        res = word_error_rate(["a", "b", "c", "d"], [])
        assert (res.deletions, res.wer) == (4, 1.0)

    def test_classic(self):
        res = word_error_rate("a b c d", "a x c d e")
        assert (res.substitutions, res.deletions, res.insertions) == (1, 0, 1)
        assert res.wer == 0.5
        assert wer_enumerate_batch([tuple("abcd")], [tuple("axcde")]) == [(1, 0, 1)]

    def test_case_folded(self):
        assert word_error_rate(Transcript("u", ["Hello", "WORLD"]), Transcript("u", ["hello", "world"])).wer == 0.0

    def test_wer_above_one(self):
        res = word_error_rate(["a"], ["b", "c", "d"])
        assert res.errors == 3 and res.wer == 3.0

    def test_empty_reference(self):
        with pytest.raises(DomainError):
            word_error_rate([], ["a"])

    def test_alignment_ops(self):
        ops = align_words(["a", "b", "c"], ["a", "c", "d"])
        # del b + ins d ties with two substitutions; the diagonal wins
        assert ops == [("match", "a", "a"), ("sub", "b", "c"), ("sub", "c", "d")]
        ops = align_words(["a", "b", "c"], ["a", "c"])
        assert ops == [("match", "a", "a"), ("del", "b", None), ("match", "c", "c")]

    def test_tie_break_prefers_substitution(self):
        ops = [o for o, _, _ in align_words(["a", "b"], ["c", "d"])]
        assert ops == ["sub", "sub"]

    def test_matches_enumeration(self, rng):
        vocab = np.array(["x", "y", "z"])
        for n in range(1, 5):
            for m in range(0, 5):
                refs = [tuple(vocab[rng.integers(0, 3, n)]) for _ in range(40)]
                hyps = [tuple(vocab[rng.integers(0, 3, m)]) for _ in range(40)]
                want = wer_enumerate_batch(refs, hyps)
                got = [word_error_rate(list(r), list(h)) for r, h in zip(refs, hyps)]
                assert [(g.substitutions, g.deletions, g.insertions) for g in got] == want

    def test_swap_symmetry(self, rng):
        vocab = ["a", "b", "c", "d"]
        for _ in range(200):
            r = [vocab[i] for i in rng.integers(0, 4, int(rng.integers(1, 9)))]
            h = [vocab[i] for i in rng.integers(0, 4, int(rng.integers(1, 9)))]
            fwd, back = word_error_rate(r, h), word_error_rate(h, r)
            assert fwd.errors == back.errors
            assert word_error_rate(r, r).errors == 0
            assert fwd.substitutions + fwd.deletions <= fwd.n_ref
            assert fwd.wer == pytest.approx(fwd.errors / fwd.n_ref, abs=1e-12)

    def test_corpus_is_aggregate(self):
        refs = {"u1": Transcript("u1", ["a"]), "u2": Transcript("u2", "a b c d e f g h i".split())}
        hyps = {"u1": Transcript("u1", ["b"]), "u2": Transcript("u2", "a b c d e f g h i".split())}
        res = corpus_wer(refs, hyps)
        assert (res.errors, res.n_ref) == (1, 10)
        assert res.wer == pytest.approx(0.1)

    def test_corpus_missing_hypothesis(self):
        refs = {"u1": Transcript("u1", ["a", "b"])}
        assert corpus_wer(refs, {}).deletions == 2

    def test_result_addition(self):
        assert WerResult(1, 2, 3, 10) + WerResult(1, 0, 0, 5) == WerResult(2, 2, 3, 15)


class TestUar:
    def test_perfect(self):
        assert unweighted_average_recall([("a", "a"), ("b", "b"), ("c", "c")]).uar == 1.0

    def test_unweighted(self):
        pairs = [("A", "A")] * 90 + [("B", "A")] * 10
        assert unweighted_average_recall(pairs).uar == 0.5

    def test_prediction_only_classes_ignored(self):
        res = unweighted_average_recall([("a", "z"), ("a", "a")])
        assert res.per_class_recall == {"a": 0.5}

    def test_matches_tally(self, rng):
        labels = ["ang", "hap", "neu", "sad"]
        gold = rng.integers(0, 4, 500)
        pred = np.where(rng.random(500) < 0.6, gold, rng.integers(0, 4, 500))
        pairs = [(labels[g], labels[p]) for g, p in zip(gold, pred)]
        assert unweighted_average_recall(pairs).uar == pytest.approx(uar_tally(pairs), abs=1e-12)

    def test_duplication_invariance(self, rng):
        pairs = [(str(g), str(p)) for g, p in rng.integers(0, 3, (60, 2))]
        base = unweighted_average_recall(pairs).uar
        dup = pairs + [p for p in pairs if p[0] == "1"]
        assert unweighted_average_recall(dup).uar == pytest.approx(base, abs=1e-12)

    def test_empty(self):
        with pytest.raises(SchemaError):
            unweighted_average_recall([])
