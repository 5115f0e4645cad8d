"""Monte-Carlo generator for the hierarchical time-course model.

Genes are drawn independently from a two-channel prior: the grand-mean channel
carries a scaled-inverse-chi-square variance and a normal mean, the contrast
channel an inverse-Wishart covariance whose mean profile is zero for constant
genes and normal with scale 1/eta for the labelled nonconstant genes.  The
per-gene covariance is assembled through the orthonormal contrast, so it
commutes with the constant-profile projection by construction.

Randomness comes from counter-based Philox streams keyed by
(seed, dataset_index) with the gene index placed in the counter block, so any
gene of any dataset is reproducible on its own, in any order, on any platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, Philox

from . import matlin
from .errors import ParameterOutOfRange
from .summaries import ExpressionDataset, Replicates

RNG_ALGORITHM = "philox4x64 (numpy), key=(seed, dataset), counter=(0, 0, gene+1, 0)"

# Common contrast-channel scale matrix used throughout the simulation study
# (units of squared log-expression, times 1e-3).
DEFAULT_LAMBDA1 = np.array([
    [14.69, 0.57, 0.99, 0.40, 0.55, 0.51, -0.23],
    [0.57, 15.36, 1.22, 0.84, 1.19, 0.91, 0.86],
    [0.99, 1.22, 14.41, 2.47, 1.81, 1.51, 1.07],
    [0.40, 0.84, 2.47, 17.05, 2.40, 2.32, 1.33],
    [0.55, 1.19, 1.81, 2.40, 15.63, 3.31, 2.75],
    [0.51, 0.91, 1.51, 2.32, 3.31, 13.38, 3.15],
    [-0.23, 0.86, 1.07, 1.33, 2.75, 3.15, 12.90],
]) * 1e-3


@dataclass(frozen=True)
class SimulationConfig:
    num_datasets: int = 100
    genes_per_dataset: int = 20000
    nonconstant_count: int = 400
    n: int = 3
    k: int = 8
    nu: float = 13.0
    xi: float = 3.0
    lambda_sq: float = 0.3
    theta: float = 0.0
    kappa: float = 0.02
    eta: float = 0.08
    lambda1: np.ndarray = field(default_factory=lambda: DEFAULT_LAMBDA1.copy())
    seed: int = 0
    shuffle: bool = False  # deterministic shuffle of truth positions when set

    def __post_init__(self):
        lam = matlin.symmetrize(self.lambda1)
        object.__setattr__(self, "lambda1", lam)
        if lam.shape[0] != self.k - 1:
            raise ParameterOutOfRange(
                f"lambda1 must be (k-1) x (k-1) = {self.k - 1}, got {lam.shape[0]}"
            )
        if self.nonconstant_count > self.genes_per_dataset:
            raise ParameterOutOfRange("nonconstant_count exceeds genes_per_dataset")
        for name in ("nu", "xi", "lambda_sq", "kappa", "eta"):
            if getattr(self, name) <= 0.0:
                raise ParameterOutOfRange(f"{name} must be positive")

    @property
    def p(self) -> float:
        return self.nonconstant_count / self.genes_per_dataset


@dataclass(frozen=True)
class LabeledDataset:
    dataset: ExpressionDataset
    truth: np.ndarray                  # per-gene indicator, 1 = nonconstant
    mu: np.ndarray                     # latent mean profiles, (G, k)
    sigma: np.ndarray                  # latent covariances, (G, k, k)
    mahalanobis: np.ndarray            # deviation of mu from its constant part
    dataset_index: int
    config: SimulationConfig


def gene_rng(seed: int, dataset_index: int, gene_index: int) -> Generator:
    """Independent, individually reproducible stream for one gene."""
    key = np.array([seed, dataset_index], dtype=np.uint64)
    counter = np.array([0, 0, gene_index + 1, 0], dtype=np.uint64)
    return Generator(Philox(key=key, counter=counter))


def _bartlett_inverse_wishart(nu: float, chol_wishart_scale: np.ndarray,
                              rng: Generator) -> np.ndarray:
    # chi-square diagonal, standard-normal subdiagonal, drawn row by row
    dim = chol_wishart_scale.shape[0]
    A = np.zeros((dim, dim))
    for i in range(dim):
        A[i, i] = math.sqrt(rng.chisquare(nu - i))
        if i:
            A[i, :i] = rng.standard_normal(i)
    LA = chol_wishart_scale @ A
    sigma = np.linalg.inv(LA @ LA.T)
    return (sigma + sigma.T) / 2.0


def sample_inv_wishart(nu: float, scale, rng: Generator) -> np.ndarray:
    """Inverse-Wishart draw with df nu and Lambda-style scale matrix.

    The underlying Wishart has scale (nu * scale)^{-1}, so the returned matrix
    has mean nu * scale / (nu - dim - 1).
    """
    lam = matlin.symmetrize(scale)
    dim = lam.shape[0]
    if not nu > dim - 1:
        raise ParameterOutOfRange(f"inverse Wishart needs nu > dim - 1, got nu={nu}, dim={dim}")
    L = matlin.cholesky(np.linalg.inv(nu * lam))
    return _bartlett_inverse_wishart(nu, L, rng)


# per-config constants (contrast rows, Wishart-scale Cholesky) reused across genes
_PREP_CACHE: dict = {}


def _prepared(config: SimulationConfig):
    key = (config.k, config.nu, config.lambda1.tobytes())
    if key not in _PREP_CACHE:
        T = matlin.helmert(config.k).rows
        L = matlin.cholesky(np.linalg.inv(config.nu * config.lambda1))
        _PREP_CACHE[key] = (T, L)
    return _PREP_CACHE[key]


def simulate_gene(nonconstant: bool, config: SimulationConfig, rng: Generator):
    """(replicate matrix, latent mean, latent covariance) for one gene.

    Draw order is fixed: grand-mean variance, contrast covariance, grand-mean
    level, contrast mean (nonconstant genes only), then the n x k data normals.
    """
    q = config.k - 1
    T, L_wish = _prepared(config)
    sig2 = 1.0 / rng.gamma(config.xi / 2.0, 2.0 / (config.xi * config.lambda_sq))
    sigma1 = _bartlett_inverse_wishart(config.nu, L_wish, rng)
    t0_mu = config.theta + math.sqrt(sig2 / config.kappa) * rng.standard_normal()
    t1_mu = np.zeros(q)
    if nonconstant:
        L1 = matlin.cholesky(sigma1 / config.eta)
        t1_mu = L1 @ rng.standard_normal(q)
    mu = T.T @ np.concatenate(([t0_mu], t1_mu))
    block = np.zeros((config.k, config.k))
    block[0, 0] = sig2
    block[1:, 1:] = sigma1
    sigma = T.T @ block @ T
    sigma = (sigma + sigma.T) / 2.0
    L = matlin.cholesky(sigma)
    x = mu[None, :] + rng.standard_normal((config.n, config.k)) @ L.T
    return x, mu, sigma


def _mahalanobis(mu: np.ndarray, sigma: np.ndarray) -> float:
    dev = mu - mu.mean()
    return math.sqrt(max(float(dev @ np.linalg.solve(sigma, dev)), 0.0))


def simulate_dataset(config: SimulationConfig, dataset_index: int) -> LabeledDataset:
    """One labelled dataset; nonconstant genes occupy the first indices unless
    config.shuffle permutes them (deterministically from the same stream)."""
    G = config.genes_per_dataset
    truth = np.zeros(G, dtype=int)
    truth[: config.nonconstant_count] = 1
    if config.shuffle:
        perm = gene_rng(config.seed, dataset_index, 0).permutation(G)
        truth = truth[perm]

    width = max(len(str(G)), 4)
    genes = tuple(f"g{j:0{width}d}" for j in range(1, G + 1))
    time_labels = tuple(f"t{j}" for j in range(1, config.k + 1))
    rep_labels = tuple(f"r{i}" for i in range(1, config.n + 1))

    observations = {}
    mu_all = np.empty((G, config.k))
    sigma_all = np.empty((G, config.k, config.k))
    maha = np.zeros(G)
    for j, gene in enumerate(genes):
        rng = gene_rng(config.seed, dataset_index, j + 1)
        x, mu, sigma = simulate_gene(bool(truth[j]), config, rng)
        observations[(gene, "c1")] = Replicates(labels=rep_labels, values=x)
        mu_all[j] = mu
        sigma_all[j] = sigma
        if truth[j]:
            maha[j] = _mahalanobis(mu, sigma)

    dataset = ExpressionDataset(
        genes=genes,
        k=config.k,
        time_labels=time_labels,
        conditions=("c1",),
        observations=observations,
    )
    return LabeledDataset(
        dataset=dataset,
        truth=truth,
        mu=mu_all,
        sigma=sigma_all,
        mahalanobis=maha,
        dataset_index=dataset_index,
        config=config,
    )


def simulate_study(config: SimulationConfig):
    """Yield the study's datasets one at a time (they are large)."""
    for idx in range(config.num_datasets):
        yield simulate_dataset(config, idx)
