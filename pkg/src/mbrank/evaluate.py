"""Scoring and comparison: false positive / false negative curves, deviation
from constancy, rank-stability sweeps, and estimate-recovery tables."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ebayes, matlin, stats, summaries as sm
from .errors import DegenerateLayout, LengthMismatch, NotPositiveDefinite, TruthMismatch


@dataclass(frozen=True)
class FpFnCurve:
    kind: str
    cutoffs: np.ndarray        # integer top-x cutoffs
    fp: np.ndarray             # false positives per cutoff (means when averaged)
    fn: np.ndarray             # false negatives per cutoff
    num_datasets: int = 1
    nonconstant_count: int = 0


def fp_fn_curve(ranking, truth, x_min: int = 400, x_max: int = 800) -> FpFnCurve:
    """Exact FP/FN counts for every integer cutoff in [x_min, x_max].

    `ranking` is a RankingResult or an ordered gene sequence (best first);
    `truth` maps gene -> indicator.
    """
    genes = ranking.genes if hasattr(ranking, "genes") else tuple(ranking)
    kind = ranking.kind.value if hasattr(ranking, "kind") else "ranking"
    missing = [g for g in genes if g not in truth]
    if missing:
        raise TruthMismatch(f"{len(missing)} ranked genes lack truth labels, e.g. {missing[0]!r}")
    labels = np.array([int(truth[g]) for g in genes])
    total_pos = int(sum(int(v) for v in truth.values()))
    cum_tp = np.concatenate(([0], np.cumsum(labels)))
    xs = np.arange(x_min, x_max + 1)
    xs_clamped = np.minimum(xs, len(genes))
    tp = cum_tp[xs_clamped]
    fp = xs_clamped - tp
    fn = total_pos - tp
    return FpFnCurve(kind=kind, cutoffs=xs, fp=fp.astype(float), fn=fn.astype(float),
                     num_datasets=1, nonconstant_count=total_pos)


def average_curves(curves) -> FpFnCurve:
    """Per-cutoff arithmetic mean of FP and FN over datasets."""
    first = curves[0]
    for c in curves[1:]:
        if not np.array_equal(c.cutoffs, first.cutoffs):
            raise TruthMismatch("curves have different cutoff grids")
    fp = np.mean([c.fp for c in curves], axis=0)
    fn = np.mean([c.fn for c in curves], axis=0)
    return FpFnCurve(kind=first.kind, cutoffs=first.cutoffs.copy(), fp=fp, fn=fn,
                     num_datasets=sum(c.num_datasets for c in curves),
                     nonconstant_count=first.nonconstant_count)


def mahalanobis_deviation(mu, sigma) -> float:
    """Distance of a mean profile from its best constant approximation, in the
    metric of the profile's own covariance.  Zero exactly when mu is constant."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    dev = mu - mu.mean()
    s = matlin.symmetrize(sigma)
    L = matlin.cholesky(s)
    half = np.linalg.solve(L, dev)
    return math.sqrt(max(float(half @ half), 0.0))


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=float)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(a, b) -> float:
    """Pearson correlation of mid-ranks (average ranks on ties)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"inputs must be equal-length vectors, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise LengthMismatch("need at least two observations")
    ra, rb = _midranks(a), _midranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if denom == 0.0:
        return 0.0
    return float(ra @ rb) / denom


def ks_statistic(sample, cdf) -> float:
    """Kolmogorov-Smirnov distance between an empirical sample and a CDF."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    f = np.array([cdf(v) for v in x])
    upper = np.max(np.arange(1, n + 1) / n - f)
    lower = np.max(f - np.arange(0, n) / n)
    return float(max(upper, lower))


def percent_moderation(nu: float, n: int) -> float:
    """Weight (in percent) placed on the common matrix inside the moderated
    covariance."""
    return 100.0 * nu / (nu + n - 1.0)


@dataclass(frozen=True)
class SweepRow:
    nu: float
    pct_moderation: float
    rho_all: float
    rho_top: float


def moderation_sweep(dataset: sm.ExpressionDataset, nu_values, lambda_mat,
                     null: sm.NullSpec | None = None, baseline_nu: float | None = None,
                     top_m: int = 859, p: float = ebayes.DEFAULT_P) -> list[SweepRow]:
    """Rank stability against the amount of moderation.

    The squared moderated t statistic is recomputed for each nu with the
    common matrix held fixed, and rank-correlated against the baseline
    (estimated nu unless given), over all genes and over the baseline's
    top top_m genes.
    """
    if null is None:
        null = sm.NullSpec(kind="constant_mean")
    n_values = {dataset.replicates(g).n for g in dataset.genes}
    if len(n_values) != 1:
        raise DegenerateLayout("the sweep needs a common replicate count across genes")
    n = n_values.pop()

    contrast = matlin.contrast(null.contrast_kind, dataset.k)
    kind = stats.StatisticKind.MB_CONSTANCY if null.kind == "constant_mean" else stats.StatisticKind.MB
    gene_sums = [stats.summarize_for_kind(dataset.replicates(g).values, kind, null, contrast)
                 for g in dataset.genes]
    lam = matlin.symmetrize(lambda_mat)

    if baseline_nu is None:
        _, baseline_nu = ebayes.estimate_nu(gene_sums)

    def t2_vector(nu: float) -> np.ndarray:
        out = np.empty(len(gene_sums))
        for i, g in enumerate(gene_sums):
            if nu == 0.0:
                ginv = matlin.pseudo_inverse(g.s)
                out[i] = g.effective_n * float(g.xbar @ ginv @ g.xbar)
            else:
                s_tilde = stats.moderate_covariance(g.s, g.n, nu, lam)
                out[i] = stats.moderated_t(g.xbar, s_tilde, g.effective_n)[1]
        return out

    base = t2_vector(baseline_nu)
    top_idx = np.argsort(-base, kind="stable")[: min(top_m, len(base))]
    rows = []
    for nu in nu_values:
        cur = t2_vector(float(nu))
        rows.append(SweepRow(
            nu=float(nu),
            pct_moderation=percent_moderation(float(nu), n),
            rho_all=spearman(cur, base),
            rho_top=spearman(cur[top_idx], base[top_idx]),
        ))
    return rows


@dataclass(frozen=True)
class RecoveryRow:
    parameter: str
    truth: float | None
    mean: float
    sd: float


def recovery_table(estimates: dict, truth: dict | None = None) -> list[RecoveryRow]:
    """Per-parameter mean and SD over datasets; estimates maps parameter name
    to the list of per-dataset values."""
    rows = []
    for name in estimates:
        vals = np.asarray(estimates[name], dtype=float)
        if vals.size < 2:
            raise LengthMismatch(f"need >= 2 datasets to summarize {name!r}")
        rows.append(RecoveryRow(
            parameter=name,
            truth=None if truth is None or name not in truth else float(truth[name]),
            mean=float(vals.mean()),
            sd=float(vals.std(ddof=1)),
        ))
    return rows
