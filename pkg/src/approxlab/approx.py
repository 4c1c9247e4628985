"""Progressive approximation driver: label the substitute pool through the
oracle, train pixel-feature substitutes on growing cumulative batches, and
stop once validation accuracy and similarity clear their thresholds.

Ground-truth labels on pool samples are ignored entirely; whatever the
black-box answers is what the substitute learns (the labels may well be
wrong for some samples, and that is the point).  Every unique digest is
queried at most once per run: pool labels and comparison-set labels are
cached, so pool labeling costs at most |X'| queries and the comparison set
is paid for once regardless of how many batches run.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import features as features_mod
from . import models, render, similarity
from .corpus import BinarySample, DatasetPartition, Label, largest_remainder
from .features import FeatureVector
from .models import ModelKind
from .oracle import BudgetExhaustedError


class EmptyPoolError(ValueError):
    """Substitute pool has no samples."""


DEFAULT_BATCH_FRACTIONS = (0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class ApproxConfig:
    batch_fractions: tuple[float, ...] = DEFAULT_BATCH_FRACTIONS
    accuracy_threshold: float = 0.90
    similarity_threshold: float = 0.85
    validation_fraction: float = 0.2
    substitute_kind: ModelKind = ModelKind.KNN
    render_config: render.RenderConfig = render.RenderConfig()
    grid: int = features_mod.DEFAULT_GRID
    seed: int = 0

    def __post_init__(self) -> None:
        fr = self.batch_fractions
        if not fr or fr[-1] != 1.0:
            raise ValueError("batch fractions must end at 1.0")
        if any(b <= a for a, b in zip(fr, fr[1:])) or fr[0] <= 0:
            raise ValueError("batch fractions must be positive and strictly increasing")
        for name in ("accuracy_threshold", "similarity_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")

    def digest(self) -> str:
        payload = {
            "batch_fractions": list(self.batch_fractions),
            "accuracy_threshold": self.accuracy_threshold,
            "similarity_threshold": self.similarity_threshold,
            "validation_fraction": self.validation_fraction,
            "substitute_kind": self.substitute_kind.value,
            "render": self.render_config.descriptor(),
            "grid": self.grid,
            "seed": self.seed,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


class StopReason(enum.Enum):
    THRESHOLDS_MET = "thresholds_met"
    DATA_EXHAUSTED = "data_exhausted"


@dataclass(frozen=True)
class BatchRecord:
    batch_index: int  # 1-based
    n_train: int
    train_accuracy: float
    validation_accuracy: float
    similarity: float
    benign_split: float | None
    malware_split: float | None
    queries_used: int


@dataclass
class ApproxTrace:
    records: list[BatchRecord]
    stop_reason: StopReason
    config_digest: str = ""

    def __post_init__(self) -> None:
        ns = [r.n_train for r in self.records]
        qs = [r.queries_used for r in self.records]
        if any(b < a for a, b in zip(ns, ns[1:])) or any(
            b < a for a, b in zip(qs, qs[1:])
        ):
            raise ValueError("n_train and queries_used must be non-decreasing")

    def to_dict(self) -> dict:
        return {
            "records": [vars(r) for r in self.records],
            "stop_reason": self.stop_reason.value,
            "config_digest": self.config_digest,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ApproxTrace":
        return cls(
            [BatchRecord(**r) for r in payload["records"]],
            StopReason(payload["stop_reason"]),
            payload.get("config_digest", ""),
        )

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2))

    @classmethod
    def load(cls, path: Path | str) -> "ApproxTrace":
        return cls.from_dict(json.loads(Path(path).read_text()))


class CachingClient:
    """Wraps an oracle client so each unique digest costs one query."""

    def __init__(self, client, cache: dict[str, Label] | None = None):
        self._client = client
        self.cache = cache if cache is not None else {}

    @property
    def ledger(self):
        return self._client.ledger

    def query(self, sample: BinarySample) -> Label:
        label = self.cache.get(sample.id)
        if label is None:
            label = self._client.query(sample)
            self.cache[sample.id] = label
        return label


@dataclass
class LabeledPool:
    """Oracle-labeled samples; `complete` is False when the budget ran dry
    mid-run and only a prefix got labeled."""

    labels: dict[str, Label]
    order: list[str]
    complete: bool = True

    def pairs(self, by_id: dict[str, BinarySample]) -> list[tuple[BinarySample, Label]]:
        return [(by_id[i], self.labels[i]) for i in self.order if i in self.labels]


def label_with_oracle(
    pool: Sequence[BinarySample], client, cache: dict[str, Label] | None = None
) -> LabeledPool:
    """Label every pool sample with the black-box's own prediction.

    Duplicated digests are queried once.  If the budget dies mid-run the
    partial result is returned with complete=False rather than discarded.
    """
    caching = client if isinstance(client, CachingClient) else CachingClient(client, cache)
    labels: dict[str, Label] = {}
    order: list[str] = []
    for sample in pool:
        if sample.id not in labels:
            order.append(sample.id)
            try:
                labels[sample.id] = caching.query(sample)
            except BudgetExhaustedError:
                order.pop()
                return LabeledPool(labels, order, complete=False)
    return LabeledPool(labels, order)


def pool_order(partition: DatasetPartition, seed: int) -> list[str]:
    """Deterministic batch order over X': sorted ids, then a seeded shuffle."""
    ids = sorted(partition.substitute_pool)
    perm = np.random.default_rng(seed).permutation(len(ids))
    return [ids[i] for i in perm]


def batch_sizes(n_pool: int, fractions: Sequence[float]) -> list[int]:
    """Cumulative batch sizes, rounded the same way partitions are."""
    return [largest_remainder(n_pool, (f, 1.0 - f))[0] if f < 1.0 else n_pool for f in fractions]


def holdout_split(ids: Sequence[str], fraction: float, seed: int) -> tuple[list[str], list[str]]:
    """Seeded validation carve-out; a pure function of (ids, fraction, seed),
    so retraining on the same cumulative set reproduces the same split."""
    n = len(ids)
    n_val = min(max(1, largest_remainder(n, (fraction, 1.0 - fraction))[0]), n - 1)
    rng = np.random.default_rng(np.random.SeedSequence([seed, n]))
    val_idx = set(rng.permutation(n)[:n_val].tolist())
    train = [ids[i] for i in range(n) if i not in val_idx]
    val = [ids[i] for i in range(n) if i in val_idx]
    return train, val


def progressive_approximate(
    partition: DatasetPartition,
    config: ApproxConfig,
    client,
    by_id: dict[str, BinarySample],
) -> tuple[models.PredModel, ApproxTrace]:
    """Run the batch-wise approximation loop (label, render, retrain from
    scratch, compare) and return the final substitute with its trace.

    `by_id` must resolve every id in the substitute pool and comparison set
    to its sample bytes.
    """
    if not partition.substitute_pool:
        raise EmptyPoolError("substitute pool is empty")
    caching = client if isinstance(client, CachingClient) else CachingClient(client)
    order = pool_order(partition, config.seed)
    sizes = batch_sizes(len(order), config.batch_fractions)
    comparison = [by_id[i] for i in sorted(partition.comparison)]

    feature_cache: dict[str, FeatureVector] = {}

    def pixel_features(sample: BinarySample) -> FeatureVector:
        vec = feature_cache.get(sample.id)
        if vec is None:
            img = render.render(sample, config.render_config)
            vec = features_mod.pixel_grid_features(img, config.grid)
            feature_cache[sample.id] = vec
        return vec

    records: list[BatchRecord] = []
    model: models.PredModel | None = None
    stop_reason = StopReason.DATA_EXHAUSTED
    for batch_index, n_train in enumerate(sizes, start=1):
        cumulative_ids = order[:n_train]
        labeled = label_with_oracle([by_id[i] for i in cumulative_ids], caching)
        if not labeled.complete:
            raise BudgetExhaustedError(
                f"budget exhausted after {len(labeled.labels)} of {n_train} pool labels"
            )
        fit_ids, val_ids = holdout_split(cumulative_ids, config.validation_fraction, config.seed)
        fit = [(pixel_features(by_id[i]), labeled.labels[i]) for i in fit_ids]
        val = [(pixel_features(by_id[i]), labeled.labels[i]) for i in val_ids]
        model = models.train_by_kind(config.substitute_kind, fit, seed=config.seed)
        train_acc = models.evaluate(model, fit).accuracy
        val_acc = models.evaluate(model, val).accuracy
        for sample in comparison:  # rendered once, reused every batch
            pixel_features(sample)
        report = similarity.compare_models(
            caching,
            model,
            comparison,
            partition=partition,
            render_config=config.render_config,
            grid=config.grid,
            fs_features=feature_cache,
        )
        records.append(
            BatchRecord(
                batch_index=batch_index,
                n_train=n_train,
                train_accuracy=train_acc,
                validation_accuracy=val_acc,
                similarity=report.similarity,
                benign_split=report.split(Label.BENIGN),
                malware_split=report.split(Label.MALWARE),
                queries_used=caching.ledger.used,
            )
        )
        if val_acc >= config.accuracy_threshold and report.similarity >= config.similarity_threshold:
            stop_reason = StopReason.THRESHOLDS_MET
            break
    assert model is not None
    return model, ApproxTrace(records, stop_reason, config.digest())
