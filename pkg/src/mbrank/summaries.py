"""Dataset model and per-gene sufficient statistics for the supported designs."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DimensionMismatch,
    InsufficientReplicates,
    InvalidDimension,
    NonFiniteValue,
    UnpairedReplicate,
)
from .matlin import ContrastMatrix

ONE_SAMPLE = "one_sample"
PAIRED = "paired"
UNPAIRED = "unpaired_two_sample"
CONSTANCY = "constancy"

NULL_KINDS = ("zero_mean", "known_mean", "constant_mean", "equal_two_sample")


@dataclass(frozen=True)
class NullSpec:
    """Which null hypothesis a ranking run tests."""

    kind: str
    mu0: np.ndarray | None = None
    contrast_kind: str = "helmert"

    def __post_init__(self):
        if self.kind not in NULL_KINDS:
            raise InvalidDimension(f"unknown null kind {self.kind!r}")
        if (self.kind == "known_mean") != (self.mu0 is not None):
            raise InvalidDimension("mu0 must be given exactly when kind is known_mean")
        if self.mu0 is not None:
            object.__setattr__(self, "mu0", np.asarray(self.mu0, dtype=float))


@dataclass(frozen=True)
class Replicates:
    """Complete replicate time courses for one gene under one condition."""

    labels: tuple[str, ...]
    values: np.ndarray  # shape (n, k)

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ExpressionDataset:
    """G genes x k time points, with per-gene replicate sets per condition."""

    genes: tuple[str, ...]
    k: int
    time_labels: tuple[str, ...]
    conditions: tuple[str, ...]
    observations: dict  # (gene, condition) -> Replicates
    skipped: dict = field(default_factory=dict)  # gene -> reason, from ingestion

    def __post_init__(self):
        if len(self.conditions) not in (1, 2):
            raise InvalidDimension("a dataset carries one or two conditions")
        if len(self.time_labels) != self.k:
            raise DimensionMismatch("time_labels must have length k")
        for (gene, cond), reps in self.observations.items():
            if reps.values.shape[1] != self.k:
                raise DimensionMismatch(f"gene {gene!r}/{cond!r} vectors are not length {self.k}")

    def replicates(self, gene: str, condition: str | None = None) -> Replicates:
        cond = condition if condition is not None else self.conditions[0]
        return self.observations[(gene, cond)]

    def n_per_gene(self) -> dict:
        return {g: self.replicates(g).n for g in self.genes}


def _as_matrix(replicates) -> np.ndarray:
    x = np.asarray(replicates, dtype=float)
    if x.ndim != 2:
        raise DimensionMismatch(f"expected an (n, k) replicate matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteValue("replicate values must be finite")
    return x


def _sample_cov(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    dev = x - x.mean(axis=0)
    s = dev.T @ dev / (n - 1)
    return (s + s.T) / 2.0


@dataclass(frozen=True)
class GeneSummary:
    """Sufficient statistics for one gene under one design.

    For the constancy design, xbar/s live on the (k-1)-dimensional contrast
    channel and scalar_mean/scalar_var carry the grand-mean channel.
    """

    design: str
    n: int
    xbar: np.ndarray
    s: np.ndarray | None
    effective_n: float
    m: int | None = None
    scalar_mean: float | None = None
    scalar_var: float | None = None
    contrast_kind: str | None = None

    @property
    def dim(self) -> int:
        return self.xbar.shape[0]


def summarize_one_sample(replicates, null: NullSpec | None = None) -> GeneSummary:
    """Mean vector (shifted by mu0 under a known-mean null) and unbiased covariance."""
    x = _as_matrix(replicates)
    n, k = x.shape
    if n < 2:
        raise InsufficientReplicates(f"need >= 2 replicates for a covariance, got {n}")
    xbar = x.mean(axis=0)
    if null is not None and null.kind == "known_mean":
        if null.mu0.shape != (k,):
            raise DimensionMismatch("mu0 length must equal k")
        xbar = xbar - null.mu0
    return GeneSummary(design=ONE_SAMPLE, n=n, xbar=xbar, s=_sample_cov(x), effective_n=float(n))


def summarize_unpaired(z_reps, y_reps) -> GeneSummary:
    """Difference of sample means with the pooled covariance (divisor m+n-2)."""
    z = _as_matrix(z_reps)
    y = _as_matrix(y_reps)
    if z.shape[1] != y.shape[1]:
        raise DimensionMismatch("conditions must share the time grid")
    m, n = z.shape[0], y.shape[0]
    if m < 1 or n < 1 or m + n < 3:
        raise InsufficientReplicates(f"need m >= 1, n >= 1, m + n >= 3, got m={m}, n={n}")
    xbar = z.mean(axis=0) - y.mean(axis=0)
    k = z.shape[1]
    pooled = np.zeros((k, k))
    if m > 1:
        pooled += (m - 1) * _sample_cov(z)
    if n > 1:
        pooled += (n - 1) * _sample_cov(y)
    pooled /= m + n - 2
    return GeneSummary(
        design=UNPAIRED,
        n=n,
        m=m,
        xbar=xbar,
        s=(pooled + pooled.T) / 2.0,
        effective_n=m * n / (m + n),
    )


def summarize_constancy(replicates, contrast: ContrastMatrix) -> GeneSummary:
    """Sufficient statistics after splitting profiles into grand mean and contrasts."""
    x = _as_matrix(replicates)
    n, k = x.shape
    if n < 2:
        raise InsufficientReplicates(f"need >= 2 replicates, got {n}")
    if contrast.k != k:
        raise DimensionMismatch(f"contrast is order {contrast.k}, data has k={k}")
    row_means = x.mean(axis=1)
    tx = x @ contrast.remainder.T  # (n, k-1)
    return GeneSummary(
        design=CONSTANCY,
        n=n,
        xbar=tx.mean(axis=0),
        s=_sample_cov(tx),
        effective_n=float(n),
        scalar_mean=float(row_means.mean()),
        # variance on the sqrt(k)-scaled grand-mean channel, the scale its
        # prior is written on
        scalar_var=float(k * row_means.var(ddof=1)),
        contrast_kind=contrast.kind,
    )


def first_differences(replicates) -> np.ndarray:
    """Per replicate, the vector of successive time-point differences."""
    x = _as_matrix(replicates)
    if x.shape[1] < 2:
        raise InvalidDimension("first differences need k >= 2")
    return np.diff(x, axis=1)


def paired_differences(dataset: ExpressionDataset, pairing: dict | None = None) -> ExpressionDataset:
    """Within-replicate differences (first condition minus second) as a new dataset.

    Replicates are matched by label, never by order; `pairing` optionally maps
    first-condition labels to second-condition labels.
    """
    if len(dataset.conditions) != 2:
        raise UnpairedReplicate("paired differencing needs exactly two conditions")
    cz, cy = dataset.conditions
    observations = {}
    for gene in dataset.genes:
        z = dataset.observations[(gene, cz)]
        y = dataset.observations[(gene, cy)]
        y_index = {lab: i for i, lab in enumerate(y.labels)}
        rows = []
        for lab in z.labels:
            target = pairing.get(lab, lab) if pairing is not None else lab
            if target not in y_index:
                raise UnpairedReplicate(
                    f"gene {gene!r}: replicate {lab!r} has no partner {target!r} in {cy!r}"
                )
            rows.append(y.values[y_index[lab]])
        observations[(gene, cz)] = Replicates(labels=z.labels, values=z.values - np.array(rows))
    return replace(
        dataset,
        conditions=(cz,),
        observations=observations,
    )
