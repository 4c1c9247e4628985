import json

import pytest

from approxlab import corpus, features, models, oracle, similarity
from approxlab.corpus import Label
from approxlab.similarity import similarity_score

B, M = Label.BENIGN, Label.MALWARE


class TestSimilarityScore:
    def test_identical_lists(self):
        report = similarity_score([B] * 5 + [M] * 5, [B] * 5 + [M] * 5)
        assert report.similarity == 1.0
        assert report.matches == 10

    def test_nine_of_ten(self):
        fb = [B] * 5 + [M] * 5
        fs = [B] * 5 + [M] * 4 + [B]
        assert similarity_score(fb, fs).similarity == 0.9

    def test_per_class_split_uses_fb_reference(self):
        fb = [B, B, M, M]
        fs = [B, M, M, M]
        report = similarity_score(fb, fs)
        assert report.split(B) == 0.5
        assert report.split(M) == 1.0
        assert report.per_class[B].n_class == 2

    def test_constant_substitute_on_balanced_blackbox(self):
        fb = [B] * 5 + [M] * 5
        fs = [B] * 10
        report = similarity_score(fb, fs)
        assert report.similarity == 0.5
        assert report.split(B) == 1.0
        assert report.split(M) == 0.0

    def test_overall_symmetric_per_class_not(self):
        fb = [B, B, B, M]
        fs = [B, M, M, M]
        fwd = similarity_score(fb, fs)
        rev = similarity_score(fs, fb)
        assert fwd.similarity == rev.similarity
        assert fwd.per_class[B].n_class == 3
        assert rev.per_class[B].n_class == 1

    def test_per_class_matches_sum_to_total(self):
        fb = [B, M, B, M, M, B]
        fs = [B, B, B, M, B, M]
        report = similarity_score(fb, fs)
        assert sum(a.matches_class for a in report.per_class.values()) == report.matches
        assert sum(a.n_class for a in report.per_class.values()) == report.n

    def test_length_mismatch(self):
        with pytest.raises(similarity.LengthMismatchError):
            similarity_score([B], [B, M])

    def test_empty(self):
        with pytest.raises(similarity.EmptyComparisonError):
            similarity_score([], [])

    def test_report_dict_roundtrip(self):
        report = similarity_score([B, M, M], [B, B, M], "knn/pixel_grid:768", "abc")
        again = similarity.SimilarityReport.from_dict(report.to_dict())
        assert again.to_dict() == report.to_dict()


@pytest.fixture(scope="module")
def pipeline_bits():
    samples = corpus.synth_corpus(23, 40, 40, (4096, 6144))
    part = corpus.partition(samples, (0.6, 0.25, 0.15), seed=2)
    by_id = corpus.samples_by_id(samples)
    train = [
        (features.blackbox_features(by_id[i]), by_id[i].ground_truth)
        for i in sorted(part.blackbox_train)
    ]
    fb = models.train_logreg(train, models.TrainConfig(seed=3, epochs=15))
    return samples, part, by_id, fb


class TestCompareModels:
    def test_self_agreement_is_one(self, pipeline_bits):
        samples, part, by_id, fb = pipeline_bits
        comparison = [by_id[i] for i in sorted(part.comparison)]
        report = similarity.compare_models(fb, fb, comparison, partition=part)
        assert report.similarity == 1.0

    def test_partition_violation(self, pipeline_bits):
        samples, part, by_id, fb = pipeline_bits
        stray = [by_id[next(iter(part.substitute_pool))]]
        with pytest.raises(similarity.PartitionViolationError):
            similarity.compare_models(fb, fb, stray, partition=part)

    def test_queries_black_box_once_per_sample(self, pipeline_bits):
        samples, part, by_id, fb = pipeline_bits
        comparison = [by_id[i] for i in sorted(part.comparison)]
        client = oracle.InProcessOracle(fb)
        report = similarity.compare_models(client, fb, comparison, partition=part)
        assert client.ledger.used == len(comparison)
        assert report.similarity == 1.0

    def test_empty_comparison(self, pipeline_bits):
        _, _, _, fb = pipeline_bits
        with pytest.raises(similarity.EmptyComparisonError):
            similarity.compare_models(fb, fb, [])


class TestEmitReport:
    def make_trace(self):
        from approxlab.approx import ApproxTrace, BatchRecord, StopReason

        records = [
            BatchRecord(i + 1, 10 * (i + 1), 0.9, 0.8 + i / 100, 0.7 + i / 50, 0.9, 0.6, 10 * (i + 1))
            for i in range(4)
        ]
        return ApproxTrace(records, StopReason.DATA_EXHAUSTED, "cfg")

    def test_csv_has_one_row_per_batch(self, tmp_path):
        report = similarity_score([B, M], [B, M])
        out = tmp_path / "report.json"
        similarity.emit_report(report, self.make_trace(), out)
        lines = (tmp_path / "report.csv").read_text().strip().splitlines()
        assert len(lines) == 5
        assert lines[0].split(",")[0] == "n_train"

    def test_json_roundtrip(self, tmp_path):
        report = similarity_score([B, M, M], [M, M, M])
        out = tmp_path / "report.json"
        similarity.emit_report(report, self.make_trace(), out)
        payload = json.loads(out.read_text())
        again = similarity.SimilarityReport.from_dict(payload["reports"][0])
        assert again.similarity == report.similarity
        assert again.matches == report.matches

    def test_unwritable_path(self, tmp_path):
        report = similarity_score([B], [B])
        with pytest.raises(IOError):
            similarity.emit_report(report, self.make_trace(), tmp_path / "nope" / "r.json")
