"""Dataset container, balanced mini-batches, bootstrap, stratified splits, label noise."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np


class SamplingError(ValueError):
    pass


class ManifestError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if features.shape[0] != labels.size:
            raise SamplingError(f"{features.shape[0]} feature rows but {labels.size} labels")
        if self.n_classes < 1:
            raise SamplingError("n_classes must be >= 1")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise SamplingError(f"labels must lie in [0, {self.n_classes})")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.size

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @cached_property
    def class_index(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == c) for c in range(self.n_classes)]

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.features[rows], self.labels[rows], self.n_classes)

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.features, labels, self.n_classes)


@dataclass(frozen=True)
class NoiseSpec:
    rate: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise SamplingError(f"noise rate must lie in [0, 1], got {self.rate}")


def epoch_length(ds: Dataset, batch_size: int) -> int:
    return math.ceil(int(ds.class_counts.max()) * ds.n_classes / batch_size)


def balanced_batches(ds: Dataset, batch_size: int, seed: int) -> list[np.ndarray]:
    """One epoch of row-id batches with per-class counts differing by at most one.

    Each class is read from its own reshuffled cycle, so small classes repeat
    (over-sampling) and the majority class is seen about once (under-sampling
    relative to a plain pass).  Which classes get the extra slot when
    ``batch_size`` is not a multiple of ``n_classes`` is drawn per batch.
    """
    n = ds.n_classes
    if batch_size < n:
        raise SamplingError(f"batch size {batch_size} smaller than class count {n}")
    index = ds.class_index
    if any(ix.size == 0 for ix in index):
        raise SamplingError("every class needs at least one sample for balanced batches")
    rng = np.random.default_rng(seed)
    base, extra = divmod(batch_size, n)
    n_batches = epoch_length(ds, batch_size)

    pools = [rng.permutation(ix) for ix in index]
    cursors = [0] * n

    def take(c: int, k: int) -> list[int]:
        out = []
        while k:
            if cursors[c] == pools[c].size:
                pools[c] = rng.permutation(index[c])
                cursors[c] = 0
            step = min(k, pools[c].size - cursors[c])
            out.extend(pools[c][cursors[c]:cursors[c] + step].tolist())
            cursors[c] += step
            k -= step
        return out

    batches = []
    for _ in range(n_batches):
        counts = np.full(n, base)
        if extra:
            counts[rng.choice(n, size=extra, replace=False)] += 1
        rows = []
        for c in range(n):
            rows.extend(take(c, int(counts[c])))
        batches.append(rng.permutation(np.asarray(rows, dtype=np.int64)))
    return batches


def shuffled_batches(ds: Dataset, batch_size: int, seed: int) -> list[np.ndarray]:
    """Plain shuffled epoch, used when balanced sampling is switched off."""
    if len(ds) == 0:
        raise SamplingError("cannot batch an empty dataset")
    order = np.random.default_rng(seed).permutation(len(ds))
    return [order[i:i + batch_size] for i in range(0, len(ds), batch_size)]


def bootstrap_resample(ds: Dataset, seed: int) -> Dataset:
    if len(ds) == 0:
        raise SamplingError("cannot resample an empty dataset")
    rows = np.random.default_rng(seed).integers(0, len(ds), size=len(ds))
    return ds.subset(rows)


def inject_label_noise(ds: Dataset, spec: NoiseSpec) -> Dataset:
    """Flip each label with probability ``spec.rate`` to a uniformly chosen other class."""
    if spec.rate > 0 and ds.n_classes < 2:
        raise SamplingError("label noise needs at least 2 classes")
    rng = np.random.default_rng(spec.seed)
    flip = rng.random(len(ds)) < spec.rate
    offset = rng.integers(1, max(ds.n_classes, 2), size=len(ds))
    labels = np.where(flip, (ds.labels + offset) % ds.n_classes, ds.labels)
    return ds.with_labels(labels)


def stratified_split(
    ds: Dataset,
    test_fraction: float | None = None,
    seed: int = 0,
    *,
    test_count: int | None = None,
) -> tuple[Dataset, Dataset]:
    """Per-class random split into (train, test).

    Either ``test_fraction`` (per-class test size ``round(fraction * size)``,
    halves rounded up) or a fixed per-class ``test_count`` must be given.
    Every class must keep at least one sample on each side.
    """
    if (test_fraction is None) == (test_count is None):
        raise SamplingError("give exactly one of test_fraction and test_count")
    if test_fraction is not None and not 0.0 < test_fraction < 1.0:
        raise SamplingError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    train_rows, test_rows = [], []
    for c, ix in enumerate(ds.class_index):
        if ix.size == 0:
            continue
        k = test_count if test_count is not None else int(math.floor(test_fraction * ix.size + 0.5))
        if not 1 <= k <= ix.size - 1:
            raise SamplingError(f"class {c} with {ix.size} samples cannot give {k} test samples")
        perm = rng.permutation(ix)
        test_rows.append(perm[:k])
        train_rows.append(perm[k:])
    train = np.sort(np.concatenate(train_rows))
    test = np.sort(np.concatenate(test_rows))
    return ds.subset(train), ds.subset(test)


def write_manifest(ds: Dataset, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{ds.n_classes},{ds.n_features},{len(ds)}\n")
        for label, row in zip(ds.labels, ds.features):
            fh.write(",".join([str(int(label))] + [repr(float(v)) for v in row]) + "\n")


def read_manifest(path) -> Dataset:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ManifestError(f"{path}: empty manifest")
    try:
        n_classes, n_features, n_rows = (int(v) for v in lines[0].split(","))
    except ValueError:
        raise ManifestError(f"{path}: header must be 'n_classes,n_features,n_rows'") from None
    body = lines[1:]
    if len(body) != n_rows:
        raise ManifestError(f"{path}: header announces {n_rows} rows, found {len(body)}")
    labels = np.empty(n_rows, dtype=np.int64)
    features = np.empty((n_rows, n_features))
    for i, line in enumerate(body, start=2):
        fields = line.split(",")
        if len(fields) != n_features + 1:
            raise ManifestError(f"{path}:{i}: expected {n_features + 1} fields, got {len(fields)}")
        try:
            label = int(fields[0])
            row = [float(v) for v in fields[1:]]
        except ValueError:
            raise ManifestError(f"{path}:{i}: non-numeric field") from None
        if not 0 <= label < n_classes:
            raise ManifestError(f"{path}:{i}: label {label} outside [0, {n_classes})")
        if not all(math.isfinite(v) for v in row):
            raise ManifestError(f"{path}:{i}: non-finite feature value")
        labels[i - 2] = label
        features[i - 2] = row
    return Dataset(features, labels, n_classes)
