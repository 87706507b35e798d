import numpy as np
import pytest

from conftest import basis, make_pair
from tempalign.core import DataError, EmbeddingSequence, LabeledVideo
from tempalign.evaluate import (
    EvalReport,
    corpus_pair_match,
    fewshot_eval,
    localization_recall,
    pair_match_percentage,
    retrieval_clip,
    retrieval_full,
)


def self_identical_corpus(n_videos=4, n_caps=3, dim=16):
    """Each paragraph is exactly its own video's clip sequence."""
    corpus = []
    for v in range(n_videos):
        caps = [basis(v * n_caps + i, dim) for i in range(n_caps)]
        corpus.append(make_pair(caps, caps, [(i, i, i + 1) for i in range(n_caps)], pid=f"v{v}"))
    return corpus


def scaled(corpus, alpha):
    return [p.with_units(alpha * p.anchor.units, alpha * p.positive.units) for p in corpus]


class TestRetrievalFull:
    @pytest.mark.parametrize("measure", ["dtw", "otam", "capavg", "dtw+capavg", "otam+capavg"])
    def test_self_retrieval_every_measure(self, measure):
        report = retrieval_full(self_identical_corpus(), measure=measure, ks=(1, 2))
        assert report.recalls[1] == pytest.approx(1.0)
        assert report.recalls[2] == pytest.approx(1.0)

    def test_two_videos_orthogonal_wrong_candidate(self):
        # each paragraph overlaps its own clips and is orthogonal to the
        # other video's every clip
        right = make_pair([basis(0, 8), basis(1, 8)],
                          [basis(0, 8) + 0.2 * basis(1, 8), basis(1, 8)],
                          [(0, 0, 1), (1, 1, 2)], pid="right")
        wrong = make_pair([basis(4, 8), basis(5, 8)],
                          [basis(4, 8), basis(5, 8) + 0.2 * basis(4, 8)],
                          [(0, 0, 1), (1, 1, 2)], pid="wrong")
        report = retrieval_full([right, wrong], measure="dtw", ks=(1,))
        assert report.recalls[1] == pytest.approx(1.0)

    def test_recall_nondecreasing_in_k(self, rng):
        corpus = [
            make_pair(rng.normal(size=(3, 8)), rng.normal(size=(5, 8)),
                      [(0, 0, 2), (1, 2, 3), (2, 3, 5)], pid=f"r{v}")
            for v in range(6)
        ]
        report = retrieval_full(corpus, measure="dtw", ks=(1, 3, 6))
        values = [report.recalls[k] for k in (1, 3, 6)]
        assert values == sorted(values)

    def test_scale_invariance(self, rng):
        corpus = [
            make_pair(rng.normal(size=(3, 8)), rng.normal(size=(5, 8)),
                      [(0, 0, 2), (1, 2, 3), (2, 3, 5)], pid=f"r{v}")
            for v in range(5)
        ]
        for measure in ("dtw", "capavg", "otam+capavg"):
            a = retrieval_full(corpus, measure=measure, ks=(1, 3))
            b = retrieval_full(scaled(corpus, 3.0), measure=measure, ks=(1, 3))
            assert a.recalls == b.recalls

    def test_k_exceeding_corpus_rejected(self):
        with pytest.raises(DataError):
            retrieval_full(self_identical_corpus(3), ks=(1, 5))

    def test_background_modes_differ_when_background_misleads(self, rng):
        # same task content, one candidate padded with background that mimics
        # the other video's captions; removal must not hurt self-retrieval
        corpus = self_identical_corpus(3)
        report = retrieval_full(corpus, measure="dtw", background="keep", ks=(1,))
        assert report.recalls[1] == pytest.approx(1.0)

    def test_unknown_measure(self):
        with pytest.raises(DataError):
            retrieval_full(self_identical_corpus(3), measure="cosine", ks=(1,))


class TestRetrievalClip:
    def test_caption_identical_to_one_clip(self):
        corpus = self_identical_corpus(3)
        report = retrieval_clip(corpus, ks=(1,))
        assert report.recalls[1] == pytest.approx(1.0)

    def test_all_clips_identical_stable_tie_order(self):
        # every clip is e0: top-k under stable order is the first k global
        # clips, so only captions of the first video's clips can hit
        dim = 4
        corpus = [
            make_pair([basis(0, dim)], [basis(0, dim), basis(0, dim)], [(0, 0, 2)], pid=f"t{v}")
            for v in range(3)
        ]
        report = retrieval_clip(corpus, ks=(1, 2, 6))
        assert report.recalls[1] == pytest.approx(1 / 3)  # only video 0's caption hits
        assert report.recalls[2] == pytest.approx(1 / 3)
        assert report.recalls[6] == pytest.approx(1.0)

    def test_chance_level_for_random_embeddings(self):
        rng = np.random.default_rng(3)
        n_videos, n_caps = 30, 5
        corpus = [
            make_pair(
                rng.normal(size=(n_caps, 12)),
                rng.normal(size=(8, 12)),
                [(i, i, i + 1) for i in range(n_caps)],
                pid=f"c{v}",
            )
            for v in range(n_videos)
        ]
        total_clips = sum(len(p.positive) for p in corpus)
        n_queries = sum(len(p.segments) for p in corpus)
        report = retrieval_clip(corpus, ks=(1, 10))
        p1 = 1.0 / total_clips  # singleton ground truth, exchangeable clips
        sigma = np.sqrt(p1 * (1 - p1) / n_queries)
        assert abs(report.recalls[1] - p1) <= 4 * sigma + 1e-9
        p10 = 10.0 / total_clips
        sigma10 = np.sqrt(p10 * (1 - p10) / n_queries)
        assert abs(report.recalls[10] - p10) <= 4 * sigma10


class TestLocalization:
    def test_perfect_localization(self):
        pair = self_identical_corpus(1)[0]
        assert localization_recall(pair) == pytest.approx(1.0)

    def test_background_steals_a_step(self):
        # caption 1 is most similar to the background clip at index 2
        dim = 6
        caps = [basis(0, dim), basis(1, dim)]
        clips = [basis(0, dim), basis(3, dim), basis(1, dim)]
        pair = make_pair(caps, clips, [(0, 0, 1), (1, 1, 2)])
        assert localization_recall(pair) == pytest.approx(0.5)

    def test_two_step_crafted_half_recall(self):
        # step 0 -> clip in its own segment; step 1 -> most similar clip sits
        # in segment 0, so it counts 0.
        dim = 6
        caps = [basis(0, dim), basis(1, dim)]
        clips = [basis(0, dim), basis(1, dim), basis(2, dim)]
        pair = make_pair(caps, clips, [(0, 0, 2), (1, 2, 3)])
        assert localization_recall(pair) == pytest.approx(0.5)


class TestPairMatch:
    def test_identity_aligned(self):
        pair = self_identical_corpus(1)[0]
        assert pair_match_percentage(pair, measure="dtw") == pytest.approx(1.0)

    def test_single_segment_always_correct(self, rng):
        pair = make_pair(rng.normal(size=(1, 6)), rng.normal(size=(4, 6)), [(0, 0, 4)])
        assert pair_match_percentage(pair, measure="dtw") == pytest.approx(1.0)

    def test_reversed_content_is_path_based_not_semantic(self):
        # Clips reversed against the segment map: the cost ties resolve
        # diagonal-first, and both diagonal entries lie inside their
        # caption's stated range, so the path-entry definition yields 1.0.
        # The metric reports path/range consistency, not semantic truth.
        caps = [basis(0, 4), basis(1, 4)]
        clips = [basis(1, 4), basis(0, 4)]
        pair = make_pair(caps, clips, [(0, 0, 1), (1, 1, 2)])
        assert pair_match_percentage(pair, measure="dtw") == pytest.approx(1.0)

    def test_floor_first_entry_always_correct(self, rng):
        for trial in range(10):
            pair = make_pair(
                rng.normal(size=(3, 6)), rng.normal(size=(6, 6)),
                [(0, 0, 2), (1, 2, 4), (2, 4, 6)], pid=f"f{trial}",
            )
            assert pair_match_percentage(pair, measure="dtw") > 0.0

    def test_consistency_with_localization_on_singletons(self):
        corpus = self_identical_corpus(2, n_caps=4)
        for pair in corpus:
            assert localization_recall(pair) == pytest.approx(1.0)
            assert pair_match_percentage(pair, measure="dtw") == pytest.approx(1.0)

    def test_corpus_average(self):
        corpus = self_identical_corpus(3)
        assert corpus_pair_match(corpus, measure="otam") == pytest.approx(1.0)


def class_corpus(n_classes=5, per_class=7, frames=4, dim=16, noise=0.0, seed=0):
    """Identical-within-class, orthogonal-across-class frame sequences."""
    rng = np.random.default_rng(seed)
    videos = []
    for c in range(n_classes):
        for v in range(per_class):
            units = np.stack([basis(c, dim)] * frames) + noise * rng.normal(size=(frames, dim))
            vid = f"c{c}v{v}"
            videos.append(LabeledVideo(vid, f"class{c}", EmbeddingSequence(vid, units)))
    return videos


class TestFewshot:
    def test_separable_classes_perfect(self):
        videos = class_corpus()
        report = fewshot_eval(None, videos, way=5, shot=1, queries_per_class=5, episodes=10, seed=0)
        assert report.aux["accuracy"] == pytest.approx(1.0)

    def test_random_labels_chance_level(self):
        rng = np.random.default_rng(1)
        videos = []
        for c in range(6):
            for v in range(8):
                vid = f"r{c}v{v}"
                videos.append(LabeledVideo(vid, f"class{c}", EmbeddingSequence(vid, rng.normal(size=(4, 16)))))
        report = fewshot_eval(None, videos, way=5, shot=1, queries_per_class=5, episodes=120, seed=0)
        assert abs(report.aux["accuracy"] - 0.2) < 0.05

    def test_exactly_reproducible(self):
        videos = class_corpus(noise=0.2)
        a = fewshot_eval(None, videos, way=3, shot=2, queries_per_class=4, episodes=40, seed=9)
        b = fewshot_eval(None, videos, way=3, shot=2, queries_per_class=4, episodes=40, seed=9)
        assert a.aux == b.aux

    def test_insufficient_videos_rejected(self):
        videos = class_corpus(per_class=3)
        with pytest.raises(DataError):
            fewshot_eval(None, videos, way=5, shot=1, queries_per_class=15, episodes=5)

    def test_too_few_classes_rejected(self):
        videos = class_corpus(n_classes=3)
        with pytest.raises(DataError):
            fewshot_eval(None, videos, way=5, shot=1, queries_per_class=5, episodes=5)

    def test_bag_measure_ignores_order(self):
        videos = class_corpus()
        report = fewshot_eval(None, videos, way=5, shot=1, queries_per_class=5, episodes=10, measure="bag")
        assert report.aux["accuracy"] == pytest.approx(1.0)  # classes differ in content here


class TestEvalReport:
    def test_csv_rows_schema(self):
        report = EvalReport(task="retrieval-full", measure="dtw", recalls={1: 0.5, 5: 0.9}, aux={"n_queries": 10.0})
        rows = list(report.csv_rows())
        assert rows[0] == ("retrieval-full", "dtw", 1, 0.5)
        assert rows[1] == ("retrieval-full", "dtw", 5, 0.9)
        assert rows[2] == ("retrieval-full.n_queries", "dtw", 0, 10.0)

    def test_text_table_contains_values(self):
        report = EvalReport(task="t", measure="m", recalls={1: 0.25})
        assert "0.25" in report.text_table()
