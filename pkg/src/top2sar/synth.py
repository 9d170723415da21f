"""Seeded Gaussian-mixture datasets: imbalanced classes and shifted domain chains."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from top2sar.sampler import Dataset

# per-class training counts of the seven land-cover classes used for the SAR experiments
REFERENCE_TRAIN_COUNTS = (24930, 2979, 4485, 6029, 4911, 2240, 6826)


def scaled_counts(scale: float = 0.1, base=REFERENCE_TRAIN_COUNTS) -> list[int]:
    """Scale class counts, rounding halves up and keeping every class non-empty."""
    return [max(1, int(np.floor(c * scale + 0.5))) for c in base]


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class MixtureSpec:
    counts: tuple[int, ...] = tuple(scaled_counts(0.1))
    feature_dim: int = 16
    separation: float = 30.0
    spread: float = 10.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if len(self.counts) < 2:
            raise SynthError("need at least 2 classes")
        if any(c < 1 for c in self.counts):
            raise SynthError("class counts must be positive")
        if self.feature_dim < 1:
            raise SynthError("feature_dim must be >= 1")
        if self.separation < 0 or not self.spread > 0:
            raise SynthError("separation must be >= 0 and spread > 0")

    @property
    def n_classes(self) -> int:
        return len(self.counts)


@dataclass(frozen=True)
class DomainChainSpec:
    base: MixtureSpec = field(default_factory=MixtureSpec)
    shift_magnitude: float = 1.0
    # optional per-class counts for the target domain; defaults to base.counts
    target_counts: tuple[int, ...] | None = None
    n_hops: int = 2

    def __post_init__(self):
        if self.shift_magnitude < 0:
            raise SynthError("shift_magnitude must be >= 0")
        if self.n_hops != 2:
            raise SynthError("domain chains have exactly two hops")
        if self.target_counts is not None and len(self.target_counts) != self.base.n_classes:
            raise SynthError("target_counts must give one count per class")


def _unit_rows(rng, rows, dim):
    v = rng.standard_normal((rows, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def class_means(spec: MixtureSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 0])
    return spec.separation * _unit_rows(rng, spec.n_classes, spec.feature_dim)


def sample_mixture(means, counts, spread, rng) -> Dataset:
    means = np.asarray(means, dtype=np.float64)
    labels = np.repeat(np.arange(len(counts)), counts)
    noise = rng.standard_normal((labels.size, means.shape[1]))
    return Dataset(means[labels] + spread * noise, labels, len(counts))


def make_imbalanced_mixture(spec: MixtureSpec) -> Dataset:
    """Class ``c`` draws ``counts[c]`` points from N(mean_c, spread^2 I).

    Means sit at ``separation`` times random unit directions.  Rows are
    grouped by class.
    """
    rng = np.random.default_rng([spec.seed, 1])
    return sample_mixture(class_means(spec), spec.counts, spec.spread, rng)


def domain_means(spec: DomainChainSpec) -> list[np.ndarray]:
    base = class_means(spec.base)
    step = spec.shift_magnitude * _unit_rows(
        np.random.default_rng([spec.base.seed, 2]), spec.base.n_classes, spec.base.feature_dim
    )
    return [base, base + step, base + 2 * step]


def make_domain_chain(spec: DomainChainSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Source A, intermediate B and target datasets with shared label semantics.

    Each class mean moves by ``shift_magnitude`` along a fixed per-class
    direction at every hop, so B lies between A and the target.
    """
    counts = [spec.base.counts, spec.base.counts, spec.target_counts or spec.base.counts]
    out = []
    for hop, (means, c) in enumerate(zip(domain_means(spec), counts)):
        rng = np.random.default_rng([spec.base.seed, 3, hop])
        out.append(sample_mixture(means, c, spec.base.spread, rng))
    return tuple(out)


def with_counts(spec: MixtureSpec, counts) -> MixtureSpec:
    return replace(spec, counts=tuple(counts))
