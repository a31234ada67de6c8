"""Datasets: validated container, file ingestion, synthetic benchmark,
few-shot subsampling.

The synthetic benchmark draws per-class attribute vectors uniformly from
[−1, 1]^M, pushes them through a fixed random one-hidden-layer tanh map to
get class feature means, and adds isotropic Gaussian noise. Classes are split
so the unseen ones appear only in the test block. Everything is driven by
named child seeds of one root seed, so identical specs give bit-identical
datasets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DataFormatError, DgzslError, ShapeError
from .serialize import (
    load_matrix,
    read_attribute_csv,
    read_labels,
    read_manifest,
    save_matrix,
    write_attribute_csv,
    write_labels,
    write_manifest,
)


@dataclass(frozen=True)
class Dataset:
    """Features (train block then test block), labels, per-class attributes.

    ``attributes`` has one row per class id. ``train_mask`` tags the train
    split; every train label must be a seen class.
    """

    features: np.ndarray
    labels: np.ndarray
    attributes: np.ndarray
    seen_classes: tuple[int, ...]
    unseen_classes: tuple[int, ...]
    train_mask: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        attrs = np.asarray(self.attributes, dtype=np.float64)
        mask = np.asarray(self.train_mask, dtype=bool)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "attributes", attrs)
        object.__setattr__(self, "train_mask", mask)
        object.__setattr__(self, "seen_classes", tuple(int(c) for c in self.seen_classes))
        object.__setattr__(self, "unseen_classes", tuple(int(c) for c in self.unseen_classes))

        if feats.ndim != 2 or attrs.ndim != 2:
            raise ShapeError("features and attributes must be 2-D")
        if feats.shape[0] == 0:
            raise DataFormatError("dataset has no examples")
        if labels.shape != (feats.shape[0],) or mask.shape != labels.shape:
            raise ShapeError("labels and train_mask must align with feature rows")
        if not np.all(np.isfinite(feats)) or not np.all(np.isfinite(attrs)):
            raise DataFormatError("features/attributes contain non-finite values")

        seen, unseen = set(self.seen_classes), set(self.unseen_classes)
        if seen & unseen:
            raise DgzslError(f"classes both seen and unseen: {sorted(seen & unseen)}")
        declared = seen | unseen
        if declared != set(range(attrs.shape[0])):
            raise DgzslError(
                f"seen+unseen must cover class ids 0..{attrs.shape[0] - 1} exactly"
            )
        present = set(np.unique(labels).tolist())
        if not present <= declared:
            raise DgzslError(f"labels outside declared classes: {sorted(present - declared)}")
        train_present = set(np.unique(labels[mask]).tolist())
        if not train_present <= seen:
            raise DgzslError(
                f"train split contains non-seen labels: {sorted(train_present - seen)}"
            )
        diffs = attrs[:, None, :] - attrs[None, :, :]
        same = (np.abs(diffs).sum(axis=2) == 0) & ~np.eye(attrs.shape[0], dtype=bool)
        if same.any():
            a, b = np.argwhere(same)[0]
            raise DgzslError(f"classes {a} and {b} share an attribute vector")

    @property
    def num_classes(self) -> int:
        return self.attributes.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def attr_dim(self) -> int:
        return self.attributes.shape[1]

    @property
    def train_features(self) -> np.ndarray:
        return self.features[self.train_mask]

    @property
    def train_labels(self) -> np.ndarray:
        return self.labels[self.train_mask]

    @property
    def test_features(self) -> np.ndarray:
        return self.features[~self.train_mask]

    @property
    def test_labels(self) -> np.ndarray:
        return self.labels[~self.train_mask]


@dataclass(frozen=True)
class SynthSpec:
    """Shape of the synthetic benchmark.

    ``noise_std`` is the per-dimension feature noise; None picks a default
    keyed to class separation (expected noise norm ≈ 10% of the mean
    inter-class mean distance). Zero is allowed for noiseless sanity data.
    """

    seen: int = 15
    unseen: int = 5
    attr_dim: int = 8
    feature_dim: int = 32
    per_class: int = 100
    noise_std: float | None = None
    seed: int = 0
    hidden_dim: int = 16

    def __post_init__(self):
        for name in ("seen", "attr_dim", "feature_dim", "per_class", "hidden_dim"):
            if getattr(self, name) < 1:
                raise DgzslError(f"SynthSpec.{name} must be ≥ 1")
        if self.unseen < 2:
            raise DgzslError("SynthSpec.unseen must be ≥ 2")
        if self.noise_std is not None and self.noise_std < 0:
            raise DgzslError("SynthSpec.noise_std must be ≥ 0")


def synth_generate(spec: SynthSpec) -> Dataset:
    """Deterministic synthetic dataset for the given spec."""
    attr_rng, map_rng, noise_rng = (
        np.random.default_rng(s)
        for s in np.random.SeedSequence(spec.seed).spawn(3)
    )
    num_classes = spec.seen + spec.unseen
    attrs = attr_rng.uniform(-1.0, 1.0, size=(num_classes, spec.attr_dim))

    w1 = map_rng.normal(size=(spec.attr_dim, spec.hidden_dim))
    b1 = map_rng.normal(scale=0.5, size=spec.hidden_dim)
    w2 = map_rng.normal(scale=1.0 / np.sqrt(spec.hidden_dim), size=(spec.hidden_dim, spec.feature_dim))
    means = np.tanh(attrs @ w1 + b1) @ w2

    if spec.noise_std is None:
        gaps = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=2)
        mean_gap = gaps[~np.eye(num_classes, dtype=bool)].mean()
        noise_std = 0.1 * mean_gap / np.sqrt(spec.feature_dim)
    else:
        noise_std = float(spec.noise_std)

    # seen classes come first, so the train block naturally leads
    blocks, labels, mask = [], [], []
    for cid in range(num_classes):
        noise = noise_rng.normal(size=(spec.per_class, spec.feature_dim))
        blocks.append(means[cid] + noise_std * noise)
        labels.extend([cid] * spec.per_class)
        mask.extend([cid < spec.seen] * spec.per_class)
    feats = np.concatenate(blocks)
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    return Dataset(
        features=feats,
        labels=labels,
        attributes=attrs,
        seen_classes=tuple(range(spec.seen)),
        unseen_classes=tuple(range(spec.seen, num_classes)),
        train_mask=mask,
    )


class FewshotSplit(NamedTuple):
    """Row indices into the dataset's test block partitioning it into the
    k-per-class labeled subset and the remaining unlabeled pool."""

    labeled_idx: np.ndarray
    unlabeled_idx: np.ndarray


def fewshot_sample(dataset: Dataset, k: int, seed: int) -> FewshotSplit:
    """Uniformly pick k test examples per unseen class, without replacement."""
    if k < 0:
        raise DgzslError(f"k must be ≥ 0, got {k}")
    test_idx = np.flatnonzero(~dataset.train_mask)
    rng = np.random.default_rng(seed)
    chosen = []
    for cid in dataset.unseen_classes:
        rows = test_idx[dataset.labels[test_idx] == cid]
        if k > rows.size:
            raise DgzslError(
                f"class {cid} has {rows.size} test examples, cannot sample k={k}"
            )
        chosen.append(rng.choice(rows, size=k, replace=False))
    labeled = np.sort(np.concatenate(chosen)).astype(np.int64)
    unlabeled = np.setdiff1d(test_idx, labeled)
    return FewshotSplit(labeled, unlabeled.astype(np.int64))


def save_dataset(dataset: Dataset, out_dir) -> None:
    """Write the dataset in the on-disk layout load_dataset expects."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ordered = np.concatenate([dataset.train_features, dataset.test_features])
    save_matrix(out / "features.bin", ordered)
    write_attribute_csv(out / "attributes.csv", dataset.attributes)
    write_labels(out / "train_labels.txt", dataset.train_labels)
    write_labels(out / "test_labels.txt", dataset.test_labels)
    write_manifest(
        out / "split.manifest",
        dataset.seen_classes,
        dataset.unseen_classes,
        "train_labels.txt",
        "test_labels.txt",
    )


def load_dataset(feature_path, attribute_path, manifest_path) -> Dataset:
    """Assemble and validate a Dataset from its three files.

    The feature matrix holds the train block first, then the test block; the
    manifest's label files fix the two block lengths.
    """
    features = load_matrix(feature_path)
    attrs = read_attribute_csv(attribute_path)
    manifest = read_manifest(manifest_path)
    train_labels = read_labels(manifest["train_labels"])
    test_labels = read_labels(manifest["test_labels"])
    total = train_labels.size + test_labels.size
    if features.shape[0] != total:
        raise DataFormatError(
            f"feature rows ({features.shape[0]}) != train+test labels ({total})"
        )
    labels = np.concatenate([train_labels, test_labels])
    mask = np.zeros(total, dtype=bool)
    mask[: train_labels.size] = True
    return Dataset(
        features=features,
        labels=labels,
        attributes=attrs,
        seen_classes=manifest["seen"],
        unseen_classes=manifest["unseen"],
        train_mask=mask,
    )
