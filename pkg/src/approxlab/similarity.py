"""Agreement measurement between the black-box and a substitute over the
comparison set, and the JSON/CSV report surfaces built from it.

The overall score is symmetric (matches are matches); the per-class split
uses the black-box's predicted label as the reference: for each label, the
number of agreements divided by the number of samples the black-box gave
that label.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from . import features as features_mod
from . import models, render
from .corpus import BinarySample, DatasetPartition, Label
from .features import FeatureSpace, FeatureVector


class LengthMismatchError(ValueError):
    """Label lists of different lengths."""


class EmptyComparisonError(ValueError):
    """No samples to compare on."""


class PartitionViolationError(ValueError):
    """A comparison sample belongs to X or X'."""


@dataclass(frozen=True)
class ClassAgreement:
    n_class: int
    matches_class: int

    @property
    def fraction(self) -> float | None:
        return self.matches_class / self.n_class if self.n_class else None


@dataclass(frozen=True)
class SimilarityReport:
    n: int
    matches: int
    per_class: dict[Label, ClassAgreement]
    substitute_descriptor: str = ""
    config_digest: str = ""

    @property
    def similarity(self) -> float:
        return self.matches / self.n

    def split(self, label: Label) -> float | None:
        agreement = self.per_class.get(label)
        return agreement.fraction if agreement else None

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "matches": self.matches,
            "similarity": self.similarity,
            "per_class": {
                label.value: {
                    "n_class": agg.n_class,
                    "matches_class": agg.matches_class,
                    "fraction": agg.fraction,
                }
                for label, agg in sorted(self.per_class.items(), key=lambda kv: kv[0].value)
            },
            "substitute_descriptor": self.substitute_descriptor,
            "config_digest": self.config_digest,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SimilarityReport":
        per_class = {
            Label(name): ClassAgreement(block["n_class"], block["matches_class"])
            for name, block in payload["per_class"].items()
        }
        return cls(
            payload["n"],
            payload["matches"],
            per_class,
            payload.get("substitute_descriptor", ""),
            payload.get("config_digest", ""),
        )


def similarity_score(
    fb_labels: Sequence[Label],
    fs_labels: Sequence[Label],
    substitute_descriptor: str = "",
    config_digest: str = "",
) -> SimilarityReport:
    """Exact agreement counts; fb_labels drive the per-class denominators."""
    if len(fb_labels) != len(fs_labels):
        raise LengthMismatchError(
            f"{len(fb_labels)} black-box labels vs {len(fs_labels)} substitute labels"
        )
    if not fb_labels:
        raise EmptyComparisonError("no predictions to compare")
    counts = {label: [0, 0] for label in Label}  # label -> [n, matches]
    for fb, fs in zip(fb_labels, fs_labels):
        counts[fb][0] += 1
        counts[fb][1] += fb == fs
    per_class = {
        label: ClassAgreement(n, m) for label, (n, m) in counts.items() if n
    }
    return SimilarityReport(
        len(fb_labels),
        sum(m for _, m in counts.values()),
        per_class,
        substitute_descriptor,
        config_digest,
    )


def _comparison_config_digest(render_config: render.RenderConfig | None, grid: int | None) -> str:
    payload = {
        "render": render_config.descriptor() if render_config else None,
        "grid": grid,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def substitute_features(
    fs: models.PredModel,
    sample: BinarySample,
    render_config: render.RenderConfig | None,
    grid: int | None,
) -> FeatureVector:
    """Extract a sample into the substitute's feature space."""
    space = FeatureSpace(fs.feature_space.partition(":")[0])
    if space is FeatureSpace.PIXEL_GRID:
        if render_config is None or grid is None:
            raise ValueError("pixel-space substitutes need render_config and grid")
        return features_mod.pixel_grid_features(render.render(sample, render_config), grid)
    return features_mod.byte_extractor_for(fs.feature_space)(sample)


def compare_models(
    fb,
    fs: models.PredModel,
    comparison: Sequence[BinarySample],
    partition: DatasetPartition | None = None,
    render_config: render.RenderConfig | None = None,
    grid: int | None = None,
    fs_features: dict[str, FeatureVector] | None = None,
) -> SimilarityReport:
    """Query the black-box once per sample, predict locally with the
    substitute, and score the agreement.

    `fb` is either a budgeted oracle client (anything with .query) or an
    in-process PredModel used directly for byte-space sanity checks.  When a
    partition is supplied, samples must come from its comparison set.
    """
    if not comparison:
        raise EmptyComparisonError("empty comparison set")
    if partition is not None:
        for sample in comparison:
            if sample.id in partition.blackbox_train or sample.id in partition.substitute_pool:
                raise PartitionViolationError(
                    f"sample {sample.id[:12]} belongs to X or X'"
                )
            if sample.id not in partition.comparison:
                raise PartitionViolationError(
                    f"sample {sample.id[:12]} is not in the comparison set"
                )
    if isinstance(fb, models.PredModel):
        extractor = features_mod.byte_extractor_for(fb.feature_space)
        fb_labels = [models.predict(fb, extractor(s)) for s in comparison]
    else:
        fb_labels = [fb.query(s) for s in comparison]
    fs_labels = []
    for sample in comparison:
        vec = (fs_features or {}).get(sample.id) or substitute_features(
            fs, sample, render_config, grid
        )
        fs_labels.append(models.predict(fs, vec))
    return similarity_score(
        fb_labels,
        fs_labels,
        substitute_descriptor=f"{fs.kind.value}/{fs.feature_space}",
        config_digest=_comparison_config_digest(render_config, grid),
    )


def emit_report(
    reports: SimilarityReport | Sequence[SimilarityReport],
    trace,
    path: Path | str,
) -> None:
    """Write the full JSON structure and a per-batch CSV next to it.

    CSV columns: n_train, train_acc, val_acc, similarity, benign_split,
    malware_split -- one row per progressive batch, ready for plotting.
    """
    if isinstance(reports, SimilarityReport):
        reports = [reports]
    path = Path(path)
    payload = {
        "reports": [r.to_dict() for r in reports],
        "trace": trace.to_dict() if trace is not None else None,
    }
    try:
        path.write_text(json.dumps(payload, sort_keys=True, indent=2))
        with open(path.with_suffix(".csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["n_train", "train_acc", "val_acc", "similarity", "benign_split", "malware_split"]
            )
            if trace is not None:
                for record in trace.records:
                    writer.writerow(
                        [
                            record.n_train,
                            record.train_accuracy,
                            record.validation_accuracy,
                            record.similarity,
                            record.benign_split,
                            record.malware_split,
                        ]
                    )
    except OSError as exc:
        raise IOError(f"cannot write report to {path}: {exc}") from exc
