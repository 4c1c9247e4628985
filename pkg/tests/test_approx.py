import pytest

from approxlab import approx, augment, corpus, features, models, oracle, render
from approxlab.approx import ApproxConfig, StopReason
from approxlab.corpus import Label
from approxlab.models import ModelKind
from approxlab.render import RenderConfig, RenderMode


def small_render_config():
    # order 7 = 128x128 canvas; synthetic files fill most of it
    return RenderConfig(mode=RenderMode.COLOR_HILBERT, order=7)


@pytest.fixture(scope="module")
def world():
    samples = corpus.synth_corpus(41, 60, 60, (4096, 6144))
    part = corpus.partition(samples, (0.6, 0.25, 0.15), seed=5)
    by_id = corpus.samples_by_id(samples)
    train = [
        (features.blackbox_features(by_id[i]), by_id[i].ground_truth)
        for i in sorted(part.blackbox_train)
    ]
    fb = models.train_logreg(train, models.TrainConfig(seed=7, epochs=15))
    return samples, part, by_id, fb


def make_client(fb, limit=None):
    return oracle.InProcessOracle(fb, oracle.QueryLedger(limit))


class CoinFlipOracle:
    """Deterministic but pixel-unlearnable labels: parity of the digest.

    Substitutes cannot reach high validation accuracy against it, which
    forces the driver through every batch."""

    def __init__(self, limit=None):
        self.ledger = oracle.QueryLedger(limit)

    def query(self, sample):
        self.ledger.acquire()
        return Label.MALWARE if int(sample.id[0], 16) % 2 else Label.BENIGN


class TestLabelWithOracle:
    def test_one_query_per_unique_sample(self, world):
        samples, part, by_id, fb = world
        pool = [by_id[i] for i in sorted(part.substitute_pool)]
        client = make_client(fb)
        labeled = approx.label_with_oracle(pool, client)
        assert labeled.complete
        assert client.ledger.used == len(pool)
        assert set(labeled.labels) == part.substitute_pool

    def test_duplicate_digest_queried_once(self, world):
        samples, part, by_id, fb = world
        sample = by_id[next(iter(part.substitute_pool))]
        client = make_client(fb)
        labeled = approx.label_with_oracle([sample, sample, sample], client)
        assert client.ledger.used == 1
        assert len(labeled.labels) == 1

    def test_oracle_labels_override_ground_truth(self, world):
        samples, part, by_id, fb = world

        class Contrarian:
            ledger = oracle.QueryLedger()

            def query(self, s):
                truth = s.ground_truth
                return Label.BENIGN if truth is Label.MALWARE else Label.MALWARE

        pool = [by_id[i] for i in sorted(part.substitute_pool)][:5]
        labeled = approx.label_with_oracle(pool, Contrarian())
        for s in pool:
            assert labeled.labels[s.id] != s.ground_truth

    def test_partial_on_budget_exhaustion(self, world):
        samples, part, by_id, fb = world
        pool = [by_id[i] for i in sorted(part.substitute_pool)]
        client = make_client(fb, limit=4)
        labeled = approx.label_with_oracle(pool, client)
        assert not labeled.complete
        assert len(labeled.labels) == 4


class TestConfig:
    def test_defaults_valid(self):
        cfg = ApproxConfig()
        assert cfg.batch_fractions == (0.25, 0.5, 0.75, 1.0)

    def test_threshold_above_one_rejected(self):
        with pytest.raises(ValueError):
            ApproxConfig(accuracy_threshold=1.01)

    def test_vacuous_zero_thresholds_accepted(self):
        ApproxConfig(accuracy_threshold=0.0, similarity_threshold=0.0)

    def test_fractions_must_end_at_one(self):
        with pytest.raises(ValueError):
            ApproxConfig(batch_fractions=(0.5, 0.75))

    def test_fractions_must_increase(self):
        with pytest.raises(ValueError):
            ApproxConfig(batch_fractions=(0.5, 0.5, 1.0))


class TestBatchSchedule:
    def test_sizes_follow_fractions(self):
        assert approx.batch_sizes(500, (0.25, 0.5, 0.75, 1.0)) == [125, 250, 375, 500]

    def test_rounding_consistent_with_partition(self):
        sizes = approx.batch_sizes(30, (0.25, 0.5, 0.75, 1.0))
        assert sizes[-1] == 30
        assert all(b >= a for a, b in zip(sizes, sizes[1:]))

    def test_holdout_split_deterministic(self):
        ids = [f"id{i}" for i in range(20)]
        a = approx.holdout_split(ids, 0.2, seed=9)
        b = approx.holdout_split(ids, 0.2, seed=9)
        assert a == b
        train, val = a
        assert len(val) == 4 and len(train) == 16
        assert set(train) | set(val) == set(ids)


class TestProgressive:
    def test_vacuous_thresholds_stop_after_first_batch(self, world):
        samples, part, by_id, fb = world
        cfg = ApproxConfig(
            accuracy_threshold=0.0,
            similarity_threshold=0.0,
            render_config=small_render_config(),
            seed=11,
        )
        model, trace = approx.progressive_approximate(part, cfg, make_client(fb), by_id)
        assert trace.stop_reason is StopReason.THRESHOLDS_MET
        assert len(trace.records) == 1
        assert trace.records[0].n_train == approx.batch_sizes(
            len(part.substitute_pool), cfg.batch_fractions
        )[0]

    def test_unmeetable_thresholds_run_all_batches(self, world):
        samples, part, by_id, fb = world
        cfg = ApproxConfig(
            accuracy_threshold=1.0,
            similarity_threshold=1.0,
            batch_fractions=(0.5, 1.0),
            render_config=small_render_config(),
            seed=11,
        )
        model, trace = approx.progressive_approximate(part, cfg, CoinFlipOracle(), by_id)
        assert trace.stop_reason is StopReason.DATA_EXHAUSTED
        assert len(trace.records) == 2
        assert [r.n_train for r in trace.records] == approx.batch_sizes(
            len(part.substitute_pool), cfg.batch_fractions
        )

    def test_query_frugality(self, world):
        samples, part, by_id, fb = world
        client = CoinFlipOracle()
        cfg = ApproxConfig(
            accuracy_threshold=1.0,
            similarity_threshold=1.0,
            batch_fractions=(0.25, 0.5, 1.0),
            render_config=small_render_config(),
            seed=13,
        )
        _, trace = approx.progressive_approximate(part, cfg, client, by_id)
        # every batch ran, yet the pool cost at most one query per sample and
        # the comparison set was paid for exactly once
        assert len(trace.records) == 3
        assert client.ledger.used == len(part.substitute_pool) + len(part.comparison)

    def test_trace_monotonic(self, world):
        samples, part, by_id, fb = world
        cfg = ApproxConfig(
            accuracy_threshold=1.0,
            similarity_threshold=1.0,
            batch_fractions=(0.25, 0.5, 1.0),
            render_config=small_render_config(),
            seed=13,
        )
        _, trace = approx.progressive_approximate(part, cfg, CoinFlipOracle(), by_id)
        ns = [r.n_train for r in trace.records]
        qs = [r.queries_used for r in trace.records]
        assert len(trace.records) == 3
        assert ns == sorted(ns) and qs == sorted(qs)

    def test_deterministic_and_retrainable_from_scratch(self, world):
        samples, part, by_id, fb = world
        cfg = ApproxConfig(
            accuracy_threshold=1.0,
            similarity_threshold=1.0,
            batch_fractions=(0.5, 1.0),
            substitute_kind=ModelKind.KNN,
            render_config=small_render_config(),
            seed=17,
        )
        model_a, trace_a = approx.progressive_approximate(part, cfg, CoinFlipOracle(), by_id)
        model_b, trace_b = approx.progressive_approximate(part, cfg, CoinFlipOracle(), by_id)
        assert len(trace_a.records) == 2
        assert trace_a.to_dict() == trace_b.to_dict()
        assert (model_a.params["points"] == model_b.params["points"]).all()

        # the final (batch 2) model is reproducible by training directly on
        # its cumulative labeled set: retraining really is from scratch
        order = approx.pool_order(part, cfg.seed)
        n = approx.batch_sizes(len(order), cfg.batch_fractions)[1]
        cum = order[:n]
        labeled = approx.label_with_oracle([by_id[i] for i in cum], CoinFlipOracle())
        fit_ids, _ = approx.holdout_split(cum, cfg.validation_fraction, cfg.seed)
        fit = []
        for i in fit_ids:
            img = render.render(by_id[i], cfg.render_config)
            fit.append((features.pixel_grid_features(img, cfg.grid), labeled.labels[i]))
        direct = models.train_by_kind(cfg.substitute_kind, fit, seed=cfg.seed)
        assert (direct.params["points"] == model_a.params["points"]).all()
        assert (direct.params["labels"] == model_a.params["labels"]).all()

    def test_budget_exhaustion_propagates(self, world):
        samples, part, by_id, fb = world
        cfg = ApproxConfig(render_config=small_render_config(), seed=3)
        with pytest.raises(oracle.BudgetExhaustedError):
            approx.progressive_approximate(part, cfg, make_client(fb, limit=2), by_id)

    def test_empty_pool(self, world):
        samples, part, by_id, fb = world
        # a real DatasetPartition cannot even be built with an empty pool
        with pytest.raises(ValueError):
            corpus.DatasetPartition(part.blackbox_train, frozenset(), part.comparison)
        # the driver still defends against duck-typed partitions
        from types import SimpleNamespace

        hollow = SimpleNamespace(
            blackbox_train=part.blackbox_train,
            substitute_pool=frozenset(),
            comparison=part.comparison,
        )
        with pytest.raises(approx.EmptyPoolError):
            approx.progressive_approximate(hollow, ApproxConfig(), make_client(fb), by_id)


def test_trace_roundtrip(tmp_path, world):
    samples, part, by_id, fb = world
    cfg = ApproxConfig(
        accuracy_threshold=0.0,
        similarity_threshold=0.0,
        render_config=small_render_config(),
        seed=19,
    )
    _, trace = approx.progressive_approximate(part, cfg, make_client(fb), by_id)
    path = tmp_path / "trace.json"
    trace.save(path)
    again = approx.ApproxTrace.load(path)
    assert again.to_dict() == trace.to_dict()


def test_augmentation_adds_no_queries(world):
    samples, part, by_id, fb = world
    client = make_client(fb)
    pool = [by_id[i] for i in sorted(part.substitute_pool)][:6]
    labeled = approx.label_with_oracle(pool, client)
    used_before = client.ledger.used
    cfg = small_render_config()
    images = [
        (render.render(s, cfg), labeled.labels[s.id]) for s in pool
    ]
    expanded = augment.augment_threefold(images, augment.AugmentArm.FLIP_ROTATE)
    assert len(expanded) == 3 * len(images)
    assert client.ledger.used == used_before
