import numpy as np
import pytest

from mobsynth import dataio, generators
from mobsynth.dataio import Corpus, GridTrace, simulate_ground_truth
from mobsynth.errors import (DomainError, IncompatibilityError,
                             InsufficientDataError)
from mobsynth.generators import (ExternalCorpusGenerator, MarkovGenerator,
                                 VineGenerator, markov_fit,
                                 vine_fit_generator)
from mobsynth.geogrid import GridSpec

SPEC = GridSpec(45.8, 47.8, 5.9, 10.5, level=8)


def _small_corpus(seed=1, users=6, steps=120):
    return simulate_ground_truth(SPEC, users, steps, 10, seed=seed)


def _same_corpus(a: Corpus, b: Corpus) -> bool:
    if len(a) != len(b):
        return False
    return all(np.array_equal(x.cells, y.cells)
               and np.array_equal(x.timestamps, y.timestamps)
               for x, y in zip(a.traces, b.traces))


class TestMarkovGenerator:
    def test_fit_validation(self):
        with pytest.raises(InsufficientDataError):
            markov_fit(Corpus(spec=SPEC))
        corpus = _small_corpus()
        with pytest.raises(DomainError):
            markov_fit(corpus, order=-1)
        with pytest.raises(DomainError):
            markov_fit(corpus, alpha=0.0)

    def test_deterministic_generation(self):
        model = markov_fit(_small_corpus(), order=1)
        a = model.generate(4, 50, 0, seed=5)
        b = model.generate(4, 50, 0, seed=5)
        c = model.generate(4, 50, 0, seed=6)
        assert _same_corpus(a, b)
        assert not _same_corpus(a, c)

    def test_order0_reproduces_bucket_marginals(self):
        # order-0 rows are i.i.d. per time bucket, so generated frequencies
        # must match the per-bucket training distribution
        corpus = _small_corpus(users=10, steps=400)
        model = markov_fit(corpus, order=0)
        syn = model.generate(200, 144, 0, seed=7)
        train_counts = {}
        for trace in corpus.traces:
            hours = dataio.hour_of_day(trace.timestamps).astype(int)
            for c, h in zip(trace.cells, hours):
                if h == 3:
                    train_counts[int(c)] = train_counts.get(int(c), 0) + 1
        total = sum(train_counts.values())
        syn_counts = {}
        for trace in syn.traces:
            hours = dataio.hour_of_day(trace.timestamps).astype(int)
            for c, h in zip(trace.cells, hours):
                if h == 3:
                    syn_counts[int(c)] = syn_counts.get(int(c), 0) + 1
        syn_total = sum(syn_counts.values())
        cells = set(train_counts) | set(syn_counts)
        tv = 0.5 * sum(abs(train_counts.get(c, 0) / total
                           - syn_counts.get(c, 0) / syn_total) for c in cells)
        assert tv < 0.05

    def test_transition_matrix_rows_normalized(self):
        model = markov_fit(_small_corpus(), order=1)
        mat = model.transition_matrix(bucket=3)
        assert np.allclose(mat.sum(axis=1), 1.0)
        assert np.all(mat > 0)          # smoothing leaves no zero entries
        pi = model.stationary_distribution(bucket=3)
        assert pi.sum() == pytest.approx(1.0)

    def test_order1_learns_alternation(self):
        cells = np.tile([11, 22], 200)
        trace = GridTrace("u", cells, np.arange(cells.size) * 600)
        corpus = Corpus(spec=SPEC, traces=[trace], sampling_period=600)
        model = markov_fit(corpus, order=1, time_buckets=1)
        mat = model.transition_matrix(bucket=0)
        i, j = model.alphabet.tolist().index(11), model.alphabet.tolist().index(22)
        assert mat[i, j] > 0.99
        assert mat[j, i] > 0.99

    def test_backoff_handles_unseen_context(self):
        model = markov_fit(_small_corpus(), order=2)
        dist = model._distribution((99999,), bucket=0)
        assert dist.sum() == pytest.approx(1.0)

    def test_payload_roundtrip(self, tmp_path):
        model = markov_fit(_small_corpus(), order=1)
        path = tmp_path / "markov.json"
        dataio.save_model(model, path)
        loaded = dataio.load_model(path)
        assert isinstance(loaded, MarkovGenerator)
        assert _same_corpus(model.generate(3, 40, 0, seed=2),
                            loaded.generate(3, 40, 0, seed=2))

    def test_trace_len_validation(self):
        model = markov_fit(_small_corpus(), order=0)
        with pytest.raises(DomainError):
            model.generate(1, 0, 0, seed=1)


@pytest.fixture(scope="module")
def fitted():
    corpus = simulate_ground_truth(SPEC, 8, 250, 10, seed=3)
    return vine_fit_generator(corpus, window=4, max_scores=200, seed=0)


class TestVineGenerator:

    def test_fit_validation(self):
        with pytest.raises(DomainError):
            vine_fit_generator(_small_corpus(), window=0)
        tiny = Corpus(spec=SPEC,
                      traces=[GridTrace("u", [1, 2], [0, 600])],
                      sampling_period=600)
        with pytest.raises(InsufficientDataError):
            vine_fit_generator(tiny, window=4)

    def test_generated_corpus_shape(self, fitted):
        syn = fitted.generate(5, 60, 0, seed=4)
        assert len(syn) == 5
        for t in syn.traces:
            assert len(t) == 60
            assert np.all((t.cells >= 0) & (t.cells < SPEC.n_cells))
            assert t.timestamps[0] == 0
            assert np.all(np.diff(t.timestamps) == 600)

    def test_deterministic_generation(self, fitted):
        a = fitted.generate(4, 40, 0, seed=5)
        b = fitted.generate(4, 40, 0, seed=5)
        c = fitted.generate(4, 40, 0, seed=6)
        assert _same_corpus(a, b)
        assert not _same_corpus(a, c)

    def test_trace_len_must_exceed_window(self, fitted):
        with pytest.raises(DomainError):
            fitted.generate(2, 4, 0, seed=1)

    def test_payload_roundtrip(self, fitted, tmp_path):
        path = tmp_path / "vine.json"
        dataio.save_model(fitted, path)
        loaded = dataio.load_model(path)
        assert isinstance(loaded, VineGenerator)
        assert loaded.window == fitted.window
        assert _same_corpus(fitted.generate(3, 30, 0, seed=8),
                            loaded.generate(3, 30, 0, seed=8))

    def test_start_windows_come_from_training_cells(self, fitted):
        seen = set()
        for row in fitted.start_windows[:, :-1]:
            seen.update(int(c) for c in row)
        train_cells = set()
        corpus = simulate_ground_truth(SPEC, 8, 250, 10, seed=3)
        for t in corpus.traces:
            train_cells.update(int(c) for c in t.cells)
        assert seen <= train_cells

    def test_generated_cells_follow_training_support(self, fitted):
        # jitter plus flooring can step into neighbour cells, but the bulk of
        # the mass must stay on cells the model was trained on
        corpus = simulate_ground_truth(SPEC, 8, 250, 10, seed=3)
        train_cells = set()
        for t in corpus.traces:
            train_cells.update(int(c) for c in t.cells)
        syn = fitted.generate(6, 100, 0, seed=9)
        total = known = 0
        for t in syn.traces:
            total += len(t)
            known += sum(int(c) in train_cells for c in t.cells)
        assert known / total > 0.8


class TestExternalCorpus:
    def test_replay(self, tmp_path):
        corpus = _small_corpus()
        path = tmp_path / "ext.csv"
        dataio.save_corpus(corpus, path)
        gen = ExternalCorpusGenerator.from_file(path)
        out = gen.generate(len(corpus), len(corpus.traces[0]), 0, seed=0)
        assert _same_corpus(out, corpus)

    def test_not_persistable_as_model(self, tmp_path):
        corpus = _small_corpus()
        path = tmp_path / "ext.csv"
        dataio.save_corpus(corpus, path)
        gen = ExternalCorpusGenerator.from_file(path)
        with pytest.raises(DomainError):
            gen.to_payload()


class TestPayloadDispatch:
    def test_unknown_model_type(self):
        with pytest.raises(IncompatibilityError):
            generators.generator_from_payload("nope", SPEC, 600, {})
