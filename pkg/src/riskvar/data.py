"""Synthetic multi-domain binary task with an invariant and a spurious feature.

Each example is generated by a two-stage flip process: a balanced latent
bit determines the shape feature; the label is the latent bit flipped
with probability ``p_flip_label`` (shared across domains); the color
feature is the label flipped with probability ``p_flip_color`` (the
domain-specific mechanism).  Shape therefore predicts the label with
domain-independent accuracy 1 - p_flip_label, while color's accuracy
1 - p_flip_color swings across domains -- the structure that separates
invariant from spurious predictors.

Features are encoded as +/-1 (shape, color, then optional standard-normal
nuisance coordinates); labels stay 0/1.  Generation is deterministic
given the spec's seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "DomainSpec",
    "DomainDataset",
    "DomainGrid",
    "GRID_PROBS",
    "generate_domain",
    "oracle_accuracies",
    "build_grid",
    "save_dataset",
    "load_dataset",
]

#: Color-flip probabilities of the standard nine-domain evaluation grid.
GRID_PROBS = tuple(i / 10 for i in range(1, 10))


@dataclass(frozen=True)
class DomainSpec:
    """Generating parameters of one domain."""

    p_flip_label: float
    p_flip_color: float
    m: int
    seed: int
    d_noise: int = 0

    def __post_init__(self):
        if not (0.0 <= self.p_flip_label <= 1.0 and 0.0 <= self.p_flip_color <= 1.0):
            raise InvalidInputError("flip probabilities must lie in [0, 1]")
        if self.m < 1:
            raise InvalidInputError("need at least one example")
        if self.d_noise < 0:
            raise InvalidInputError("d_noise must be >= 0")


@dataclass(eq=False)
class DomainDataset:
    """Feature matrix (m, 2 + d_noise), 0/1 labels, and the generating spec."""

    features: np.ndarray
    labels: np.ndarray
    spec: DomainSpec

    def __eq__(self, other) -> bool:
        if not isinstance(other, DomainDataset):
            return NotImplemented
        return (
            self.spec == other.spec
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )

    @property
    def m(self) -> int:
        return self.labels.size

    @property
    def d(self) -> int:
        return self.features.shape[1]


def generate_domain(spec: DomainSpec) -> DomainDataset:
    """Draw one domain by the two-stage flip process."""
    rng = np.random.default_rng(spec.seed)
    latent = rng.integers(0, 2, size=spec.m)
    shape = latent
    label = latent ^ (rng.random(spec.m) < spec.p_flip_label).astype(np.int64)
    color = label ^ (rng.random(spec.m) < spec.p_flip_color).astype(np.int64)
    cols = [2.0 * shape - 1.0, 2.0 * color - 1.0]
    if spec.d_noise:
        noise = rng.standard_normal((spec.m, spec.d_noise))
        features = np.column_stack(cols + [noise])
    else:
        features = np.column_stack(cols)
    return DomainDataset(features, label.astype(np.int64), spec)


def oracle_accuracies(spec: DomainSpec) -> tuple[float, float]:
    """Analytic accuracies of the two single-feature predictors.

    Predicting the label from the shape feature succeeds with probability
    1 - p_flip_label; from the color feature, 1 - p_flip_color.
    """
    return 1.0 - spec.p_flip_label, 1.0 - spec.p_flip_color


@dataclass(eq=False)
class DomainGrid:
    """Training datasets plus the full evaluation grid."""

    p_flip_label: float
    train: tuple[DomainDataset, ...]
    test: tuple[DomainDataset, ...]

    @property
    def train_probs(self) -> tuple[float, ...]:
        return tuple(d.spec.p_flip_color for d in self.train)

    @property
    def test_probs(self) -> tuple[float, ...]:
        return tuple(d.spec.p_flip_color for d in self.test)


def _child_seed(master_seed: int, index: int, is_train: bool) -> int:
    ss = np.random.SeedSequence([master_seed, index, int(is_train)])
    return int(ss.generate_state(1, np.uint64)[0])


def build_grid(
    p_flip_label: float,
    train_probs,
    m_train: int,
    m_test: int,
    d_noise: int = 0,
    master_seed: int = 0,
    test_probs=GRID_PROBS,
) -> DomainGrid:
    """Generate training domains plus the nine-domain evaluation grid.

    Per-domain seeds are derived from (master_seed, domain index,
    train/test flag), so regenerating the same grid is bit-identical and
    adding domains does not disturb existing ones.
    """
    train_probs = tuple(float(p) for p in train_probs)
    if not train_probs:
        raise InvalidInputError("need at least one training domain")
    if any(not 0.0 < p < 1.0 for p in train_probs):
        raise InvalidInputError("training color-flip probabilities must lie in (0, 1)")
    if m_train < 1 or m_test < 1:
        raise InvalidInputError("m_train and m_test must be >= 1")
    if master_seed < 0:
        raise InvalidInputError("master seed must be >= 0")
    train = tuple(
        generate_domain(
            DomainSpec(p_flip_label, p, m_train, _child_seed(master_seed, i, True), d_noise)
        )
        for i, p in enumerate(train_probs)
    )
    test = tuple(
        generate_domain(
            DomainSpec(p_flip_label, p, m_test, _child_seed(master_seed, i, False), d_noise)
        )
        for i, p in enumerate(test_probs)
    )
    return DomainGrid(p_flip_label, train, test)


def save_dataset(dataset: DomainDataset, path) -> None:
    """Write a dataset in the columnar text format.

    First line: ``p_eps p_i m d seed`` (floats with 17 significant
    digits); each following line: the d feature values then the 0/1
    label.  The format round-trips bit-exactly.
    """
    with open(path, "w", encoding="ascii") as fh:
        s = dataset.spec
        fh.write(f"{s.p_flip_label:.17g} {s.p_flip_color:.17g} {s.m} {dataset.d} {s.seed}\n")
        for row, y in zip(dataset.features, dataset.labels):
            fh.write(" ".join(f"{v:.17g}" for v in row) + f" {int(y)}\n")


def load_dataset(path) -> DomainDataset:
    """Read a dataset written by :func:`save_dataset`."""
    with open(path, encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 5:
            raise InvalidInputError(f"malformed dataset header in {path}")
        p_eps, p_i = float(header[0]), float(header[1])
        m, d, seed = int(header[2]), int(header[3]), int(header[4])
        features = np.empty((m, d))
        labels = np.empty(m, dtype=np.int64)
        for i in range(m):
            parts = fh.readline().split()
            if len(parts) != d + 1:
                raise InvalidInputError(f"malformed dataset row {i} in {path}")
            features[i] = [float(v) for v in parts[:d]]
            labels[i] = int(parts[d])
    spec = DomainSpec(p_eps, p_i, m, seed, d_noise=d - 2)
    return DomainDataset(features, labels, spec)
