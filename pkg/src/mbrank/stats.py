"""Ranking statistics: posterior log-odds scores, the moderated Hotelling and
likelihood-ratio statistics, their special and limiting cases, and the
baseline statistics they are compared against.

All posterior odds are evaluated in natural-log space and reported both as
odds and as the base-10 log score, so very large quadratic forms do not
overflow.  Every scoring function is a pure per-gene computation;
rank_genes composes them over a dataset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import ebayes, matlin, summaries as sm
from .errors import (
    DegenerateLayout,
    InsufficientDegreesOfFreedom,
    InsufficientReplicates,
    InvalidDimension,
    MissingHyperparameters,
    NotPositiveDefinite,
    ParameterOutOfRange,
)

# nu below this (but nonzero) is routed to the no-moderation limit; nu == 0
# itself always takes the generalized-inverse path.
NU_ZERO_THRESHOLD = 1e-8


class StatisticKind(str, Enum):
    MB = "mb"
    MB_FIRST_DIFF = "mb_first_diff"
    MB_SIGMA_DIAG = "mb_sigma_diag"
    MB_NU_INF = "mb_nu_inf"
    MB_NU_ZERO = "mb_nu_zero"
    ANOVA_F = "anova_f"
    PARTLY_MODERATED_F = "partly_moderated_f"
    MODERATED_HOTELLING = "moderated_hotelling"
    REPLICATE_VARIANCE = "replicate_variance"
    MB_TWO_SAMPLE = "mb_two_sample"
    MB_CONSTANCY = "mb_constancy"
    MODERATED_LR = "moderated_lr"


@dataclass(frozen=True)
class ModeratedSummary:
    """Moderated covariance, t vector and its squared norm for one gene."""

    s_tilde: np.ndarray
    t_tilde: np.ndarray
    t2: float
    effective_n: float
    df_numerator: int
    df_denominator: float


def moderate_covariance(s, n: float, nu: float, lambda_mat=None) -> np.ndarray:
    """Shrink a sample covariance toward the common matrix with weight nu.

    `n` counts one more than the within-gene degrees of freedom: pass the
    replicate count for one-sample data and m + n - 1 for pooled two-sample
    covariances.
    """
    s = matlin.symmetrize(s)
    if nu < 0.0:
        raise ParameterOutOfRange(f"nu must be nonnegative, got {nu}")
    if n < 2:
        raise ParameterOutOfRange(f"need within-gene degrees of freedom, got n={n}")
    if nu == 0.0:
        matlin.cholesky(s)  # caller must route singular S to the g-inverse path
        return s
    if math.isinf(nu):
        return matlin.symmetrize(lambda_mat)
    lam = matlin.symmetrize(lambda_mat)
    if lam.shape != s.shape:
        raise ParameterOutOfRange("lambda and s dimensions differ")
    return ((n - 1.0) * s + nu * lam) / (n - 1.0 + nu)


def moderated_t(xbar, s_tilde, effective_n: float) -> tuple[np.ndarray, float]:
    """t = sqrt(n) * s_tilde^{-1/2} xbar and its squared norm."""
    xbar = np.asarray(xbar, dtype=float)
    root = matlin.inv_sqrt(s_tilde)
    t = math.sqrt(effective_n) * (root @ xbar)
    return t, float(t @ t)


def make_moderated_summary(summary: sm.GeneSummary, nu: float, lambda_mat) -> ModeratedSummary:
    """Moderate one gene's covariance and take its t vector, with the degrees
    of freedom of the corresponding null F law attached."""
    df1, df2, _ = null_distribution(
        summary.design if summary.design != sm.ONE_SAMPLE else "one_sample",
        n=summary.n, k=summary.dim if summary.design != sm.CONSTANCY else summary.dim + 1,
        nu=nu, m=summary.m,
    )
    n_for_moderation = summary.n if summary.m is None else summary.m + summary.n - 1
    s_tilde = moderate_covariance(summary.s, n_for_moderation, nu, lambda_mat)
    t, t2 = moderated_t(summary.xbar, s_tilde, summary.effective_n)
    return ModeratedSummary(
        s_tilde=s_tilde,
        t_tilde=t,
        t2=t2,
        effective_n=summary.effective_n,
        df_numerator=int(df1),
        df_denominator=df2,
    )


def _check_odds_params(n: float, k: int, nu: float, eta: float, p: float, t2: float) -> None:
    if t2 < 0.0:
        raise ParameterOutOfRange(f"t2 must be nonnegative, got {t2}")
    if not (0.0 < p < 1.0):
        raise ParameterOutOfRange(f"p must lie in (0, 1), got {p}")
    if eta <= 0.0:
        raise ParameterOutOfRange(f"eta must be positive, got {eta}")
    if nu < 0.0:
        raise ParameterOutOfRange(f"nu must be nonnegative, got {nu}")
    if n < 1 or k < 1:
        raise ParameterOutOfRange(f"need n >= 1 and k >= 1, got n={n}, k={k}")


def _odds_from_log(ln_o: float) -> tuple[float, float]:
    odds = math.exp(ln_o) if ln_o < 700.0 else math.inf
    return odds, ln_o / math.log(10.0)


def mb_one_sample(t2: float, n: float, k: int, nu: float, eta: float, p: float) -> tuple[float, float]:
    """Posterior odds against a zero mean profile, and their base-10 log."""
    _check_odds_params(n, k, nu, eta, p, t2)
    shrink = eta / (n + eta)
    a = n - 1.0 + nu
    if a <= 0.0:
        raise ParameterOutOfRange(f"n - 1 + nu must be positive, got {a}")
    ln_o = (
        math.log(p / (1.0 - p))
        + 0.5 * k * math.log(shrink)
        + 0.5 * (n + nu) * (math.log1p(t2 / a) - math.log1p(shrink * t2 / a))
    )
    return _odds_from_log(ln_o)


def mb_sigma_diag(xbar, s2_by_timepoint, n: float, nu: float, lambda_sq: float,
                  eta: float, p: float) -> tuple[float, float]:
    """Posterior odds under the equal-variance, no-correlation model: a product
    of independent per-time-point odds sharing one prior variance."""
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    s2 = np.atleast_1d(np.asarray(s2_by_timepoint, dtype=float))
    k = xbar.shape[0]
    if math.isinf(nu):
        raise ParameterOutOfRange("use mb_limit_nu_inf with a scalar prior variance for nu -> inf")
    _check_odds_params(n, k, nu, eta, p, 0.0)
    if n < 2:
        raise ParameterOutOfRange(f"need n >= 2 replicates, got {n}")
    if lambda_sq <= 0.0 and nu > 0.0:
        raise ParameterOutOfRange(f"lambda_sq must be positive, got {lambda_sq}")
    s2_tilde = ((n - 1.0) * s2 + nu * lambda_sq) / (n - 1.0 + nu)
    t = math.sqrt(n) * xbar / np.sqrt(s2_tilde)
    shrink = eta / (n + eta)
    a = n - 1.0 + nu
    ln_o = math.log(p / (1.0 - p)) + 0.5 * k * math.log(shrink)
    ln_o += 0.5 * (n + nu) * float(np.sum(np.log1p(t**2 / a) - np.log1p(shrink * t**2 / a)))
    return _odds_from_log(ln_o)


def mb_limit_nu_inf(xbar, n: float, lambda_mat, eta: float, p: float) -> tuple[float, float]:
    """Posterior odds when the gene-specific covariances are ignored entirely.

    lambda_mat may be the common matrix, or a scalar prior variance for the
    equal-variance special case.
    """
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    k = xbar.shape[0]
    _check_odds_params(n, k, 0.0, eta, p, 0.0)
    if np.ndim(lambda_mat) == 0:
        lam_sq = float(lambda_mat)
        if lam_sq <= 0.0:
            raise NotPositiveDefinite("scalar prior variance must be positive")
        t2 = n * float(np.sum(xbar**2)) / lam_sq
    else:
        root = matlin.inv_sqrt(lambda_mat)
        t = math.sqrt(n) * (root @ xbar)
        t2 = float(t @ t)
    shrink = eta / (n + eta)
    ln_o = (
        math.log(p / (1.0 - p))
        + 0.5 * k * math.log(shrink)
        + 0.5 * (n / (n + eta)) * t2
    )
    return _odds_from_log(ln_o)


def mb_limit_nu_zero(xbar, s, n: float, eta: float, p: float) -> tuple[float, float, float]:
    """Posterior odds with no moderation at all; singular covariances go
    through the Moore-Penrose inverse.  Returns (odds, score, t2)."""
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    k = xbar.shape[0]
    _check_odds_params(n, k, 0.0, eta, p, 0.0)
    if n < 2:
        raise ParameterOutOfRange(f"need n >= 2 replicates, got {n}")
    ginv = matlin.pseudo_inverse(s)
    t2 = max(float(n * xbar @ ginv @ xbar), 0.0)
    shrink = eta / (n + eta)
    a = n - 1.0
    ln_o = (
        math.log(p / (1.0 - p))
        + 0.5 * k * math.log(shrink)
        + 0.5 * n * (math.log1p(t2 / a) - math.log1p(shrink * t2 / a))
    )
    odds, score = _odds_from_log(ln_o)
    return odds, score, t2


def mb_n1(x, hypers: ebayes.Hyperparameters) -> tuple[float, float, float]:
    """Posterior odds for a single unreplicated time course.

    Every hyperparameter must be user-set; with no replication there is
    nothing to estimate from.
    """
    for name in ("nu", "lambda_mat", "eta", "p"):
        if hypers.provenance.get(name) != "user_set":
            raise MissingHyperparameters(
                f"{name} must be user_set for n = 1, is {hypers.provenance.get(name)!r}"
            )
    x = np.atleast_1d(np.asarray(x, dtype=float))
    root = matlin.inv_sqrt(hypers.lambda_mat)
    t = root @ x
    t2 = float(t @ t)
    odds, score = mb_one_sample(t2, 1.0, x.shape[0], hypers.nu, hypers.eta, hypers.p)
    return odds, score, t2


def mb_two_sample(d, pooled_s, m: int, n: int, nu: float, lambda_mat,
                  eta: float, p: float) -> tuple[float, float, float]:
    """Posterior odds against equal mean profiles in two independent groups."""
    d = np.atleast_1d(np.asarray(d, dtype=float))
    k = d.shape[0]
    if m + n < 3:
        raise InsufficientReplicates(f"need m + n >= 3, got {m + n}")
    _check_odds_params(m + n, k, nu, eta, p, 0.0)
    n_eff = m * n / (m + n)
    s_tilde = moderate_covariance(pooled_s, m + n - 1, nu, lambda_mat)
    _, t2 = moderated_t(d, s_tilde, n_eff)
    # (1/m + 1/n) / (1/m + 1/n + 1/eta) reduces to eta / (eta + mn/(m+n))
    shrink = eta / (n_eff + eta)
    a = m + n - 2.0 + nu
    ln_o = (
        math.log(p / (1.0 - p))
        + 0.5 * k * math.log(shrink)
        + 0.5 * (m + n + nu - 1.0) * (math.log1p(t2 / a) - math.log1p(shrink * t2 / a))
    )
    odds, score = _odds_from_log(ln_o)
    return odds, score, t2


def mb_constancy(summary: sm.GeneSummary, nu: float, lambda1, eta: float,
                 p: float) -> tuple[float, float, float]:
    """Posterior odds against a constant mean profile, computed on the
    (k-1)-dimensional contrast channel."""
    if summary.design != sm.CONSTANCY:
        raise InvalidDimension("mb_constancy needs a constancy summary")
    s_tilde = moderate_covariance(summary.s, summary.n, nu, lambda1)
    _, t2 = moderated_t(summary.xbar, s_tilde, summary.effective_n)
    odds, score = mb_one_sample(t2, summary.n, summary.dim, nu, eta, p)
    return odds, score, t2


def constancy_mle_shift(xbar, s) -> tuple[np.ndarray, np.ndarray]:
    """Generalized-least-squares projection of a mean profile onto constants.

    Returns (mu_hat, d) with d = xbar - mu_hat; feed d to moderated_lr for the
    constancy null.
    """
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    s = matlin.symmetrize(s)
    L = matlin.cholesky(s)
    ones = np.ones_like(xbar)
    w = np.linalg.solve(L.T, np.linalg.solve(L, ones))
    mu0 = float(w @ xbar) / float(w @ ones)
    mu_hat = mu0 * ones
    return mu_hat, xbar - mu_hat


def moderated_lr(d, s_tilde, n: int, m: int | None = None) -> tuple[float, float]:
    """Moderated likelihood ratio and the moderated Hotelling quadratic form.

    One-sample when m is None; otherwise the unpaired two-sample form with
    group sizes (m, n).
    """
    d = np.atleast_1d(np.asarray(d, dtype=float))
    s_tilde = matlin.symmetrize(s_tilde)
    L = matlin.cholesky(s_tilde)
    half = np.linalg.solve(L, d)
    quad_base = float(half @ half)
    if m is None:
        quad = n * quad_base
        lr = n * math.log1p(quad / (n - 1.0))
    else:
        quad = (m * n / (m + n)) * quad_base
        lr = (m + n) * math.log1p(quad / (m + n - 2.0))
    return lr, quad


def anova_f(replicates) -> tuple[float, float, str | None]:
    """Two-way fixed-effects ANOVA (time and replicate effects, no interaction).

    Returns (F, MS_time, flag); flag is "zero_variance" when the layout is
    constant and "perfect_fit" when the residual mean square vanishes (F is
    the +inf sentinel then).
    """
    x = np.asarray(replicates, dtype=float)
    n, k = x.shape
    if n < 2 or k < 2:
        raise DegenerateLayout(f"two-way layout needs n >= 2 and k >= 2, got {n}x{k}")
    grand = x.mean()
    ss_time = n * float(np.sum((x.mean(axis=0) - grand) ** 2))
    ss_rep = k * float(np.sum((x.mean(axis=1) - grand) ** 2))
    ss_tot = float(np.sum((x - grand) ** 2))
    ss_res = max(ss_tot - ss_time - ss_rep, 0.0)
    ms_time = ss_time / (k - 1.0)
    ms_res = ss_res / ((k - 1.0) * (n - 1.0))
    sumsq = float(np.sum(x * x))
    if sumsq == 0.0 or ss_tot <= 1e-24 * sumsq:
        return 0.0, 0.0, "zero_variance"
    if ss_res <= 1e-12 * ss_tot:
        return math.inf, ms_time, "perfect_fit"
    return ms_time / ms_res, ms_time, None


def partly_moderated_f(replicates, d0: float, s0_sq: float) -> tuple[float, float, str | None]:
    """Ordinary F with its error variance shrunk toward the common value s0_sq
    with prior weight d0 degrees of freedom."""
    x = np.asarray(replicates, dtype=float)
    n, k = x.shape
    f, ms_time, flag = anova_f(x)
    if flag == "zero_variance":
        return 0.0, ms_time, flag
    d_res = (n - 1.0) * (k - 1.0)
    ms_res = 0.0 if flag == "perfect_fit" else ms_time / f
    if math.isinf(d0):
        denom = s0_sq
    else:
        denom = (d0 * s0_sq + d_res * ms_res) / (d0 + d_res)
    if denom <= 0.0:
        return math.inf, ms_time, "perfect_fit"
    return ms_time / denom, ms_time, None


def replicate_variance(replicates) -> float:
    """Total variance of the whole replicate-by-time layout about its grand mean."""
    x = np.asarray(replicates, dtype=float)
    n, k = x.shape
    if n * k < 2:
        raise DegenerateLayout("need at least two observations")
    grand = x.mean()
    return float(np.sum((x - grand) ** 2)) / (n * k - 1.0)


def null_distribution(design: str, n: int | None = None, k: int | None = None,
                      nu: float | None = None, m: int | None = None) -> tuple[float, float, float]:
    """(df1, df2, divisor) such that divisor^{-1} * T2 is exactly F(df1, df2)
    under the null.

    The degrees of freedom are (k, n+nu-k) for the zero/known-mean null,
    (k-1, n+nu-k+1) for the constancy null and (k, m+n+nu-k-1) for the
    two-sample null.  T2 itself is Hotelling T^2(df1, d_within + nu) with
    d_within = n-1 (or m+n-2 pooled), so the exact divisor is
    df1 * (d_within + nu) / df2 rather than the bare df1.
    """
    if design in ("one_sample", "zero_mean", "known_mean"):
        df1 = float(k)
        df2 = n + nu - k
        d_within = n - 1.0
    elif design in ("constancy", "constant_mean"):
        df1 = float(k - 1)
        df2 = n + nu - k + 1.0
        d_within = n - 1.0
    elif design in ("two_sample", "equal_two_sample", "unpaired_two_sample"):
        df1 = float(k)
        df2 = m + n + nu - k - 1.0
        d_within = m + n - 2.0
    else:
        raise InvalidDimension(f"unknown design {design!r}")
    if df2 <= 0.0:
        raise InsufficientDegreesOfFreedom(
            f"null law needs positive denominator df, got {df2} for design {design!r}"
        )
    divisor = df1 * (d_within + nu) / df2
    return df1, df2, divisor


# ---------------------------------------------------------------------------
# Dataset-level ranking.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RankingResult:
    kind: StatisticKind
    genes: tuple[str, ...]          # descending by statistic
    values: np.ndarray
    t2: np.ndarray | None
    mb: np.ndarray | None
    n_used: tuple[int, ...]
    skips: dict
    hypers: ebayes.Hyperparameters | None
    metadata: dict = field(default_factory=dict)

    def order_of(self) -> dict:
        return {g: i + 1 for i, g in enumerate(self.genes)}


def _resolve_kind(kind: StatisticKind, null: sm.NullSpec) -> StatisticKind:
    if kind == StatisticKind.MB:
        if null.kind == "constant_mean":
            return StatisticKind.MB_CONSTANCY
        if null.kind == "equal_two_sample":
            return StatisticKind.MB_TWO_SAMPLE
    return kind


# hyperparameter fields each statistic actually consumes
_NEEDS = {
    StatisticKind.MB: ("nu", "lambda_mat", "eta"),
    StatisticKind.MB_FIRST_DIFF: ("nu", "lambda_mat", "eta"),
    StatisticKind.MB_CONSTANCY: ("nu", "lambda_mat", "eta"),
    StatisticKind.MB_TWO_SAMPLE: ("nu", "lambda_mat", "eta"),
    StatisticKind.MB_SIGMA_DIAG: ("nu", "lambda_sq", "eta"),
    StatisticKind.MB_NU_INF: ("lambda_mat", "eta"),
    StatisticKind.MB_NU_ZERO: ("eta",),
    StatisticKind.MODERATED_LR: ("nu", "lambda_mat"),
    StatisticKind.MODERATED_HOTELLING: ("nu", "lambda_mat"),
}


def summarize_for_kind(replicates, kind: StatisticKind, null: sm.NullSpec,
                       contrast: matlin.ContrastMatrix, y_reps=None) -> sm.GeneSummary:
    """The per-gene summary channel a statistic works on."""
    if null.kind == "equal_two_sample":
        return sm.summarize_unpaired(replicates, y_reps)
    if kind == StatisticKind.MB_FIRST_DIFF:
        return sm.summarize_one_sample(sm.first_differences(replicates))
    if null.kind == "constant_mean":
        if kind in (StatisticKind.MODERATED_LR, StatisticKind.MODERATED_HOTELLING,
                    StatisticKind.ANOVA_F, StatisticKind.PARTLY_MODERATED_F,
                    StatisticKind.REPLICATE_VARIANCE):
            # likelihood / ANOVA routes stay on the raw channel; the GLS shift
            # or the time effect removes the constant part
            return sm.summarize_one_sample(replicates)
        return sm.summarize_constancy(replicates, contrast)
    return sm.summarize_one_sample(replicates, null)


def _collect_summaries(dataset: sm.ExpressionDataset, kind: StatisticKind,
                       null: sm.NullSpec):
    contrast = matlin.contrast(null.contrast_kind, dataset.k)
    genes, sums, skips, n1_genes = [], [], dict(dataset.skipped), []
    for gene in dataset.genes:
        try:
            if null.kind == "equal_two_sample":
                cz, cy = dataset.conditions
                summary = summarize_for_kind(
                    dataset.observations[(gene, cz)].values, kind, null, contrast,
                    y_reps=dataset.observations[(gene, cy)].values,
                )
            else:
                summary = summarize_for_kind(
                    dataset.replicates(gene).values, kind, null, contrast,
                )
        except InsufficientReplicates as exc:
            if dataset.replicates(gene).n == 1 and null.kind in ("zero_mean", "known_mean"):
                n1_genes.append(gene)
            else:
                skips[gene] = str(exc)
            continue
        genes.append(gene)
        sums.append(summary)
    return genes, sums, skips, n1_genes


def _estimate_sigma_diag(gene_summaries, p: float, overrides: dict) -> ebayes.Hyperparameters:
    dim = gene_summaries[0].dim
    d = np.array([g.n - 1 for g in gene_summaries], dtype=float)
    nu_d = overrides.get("nu")
    lam_d = overrides.get("lambda_sq")
    prov = {}
    if nu_d is None or lam_d is None:
        fits = [ebayes.fit_log_variance_prior(
            np.array([g.s[j, j] for g in gene_summaries]), d) for j in range(dim)]
        finite = [f[0] for f in fits if math.isfinite(f[0])]
        if nu_d is None:
            nu_d = float(np.mean(finite)) if len(finite) == dim else math.inf
            prov["nu"] = "estimated"
        if lam_d is None:
            lam_d = float(np.mean([f[1] for f in fits]))
            prov["lambda_sq"] = "estimated"
    eta = overrides.get("eta")
    if eta is None and math.isfinite(nu_d):
        s2 = np.array([[g.s[j, j] for j in range(dim)] for g in gene_summaries])
        xb = np.array([g.xbar for g in gene_summaries])
        root_n = np.array([math.sqrt(g.n) for g in gene_summaries])
        s2_tilde = (d[:, None] * s2 + nu_d * lam_d) / (d[:, None] + nu_d)
        tmat = root_n[:, None] * xb / np.sqrt(s2_tilde)
        n_eff = float(np.median([g.n for g in gene_summaries]))
        eta, _ = ebayes.estimate_eta(tmat, p, n_eff, nu_d, float(np.median(d)))
        prov["eta"] = "estimated"
    elif eta is None:
        eta = 1.0
        prov["eta"] = "estimated"
    return ebayes.Hyperparameters(nu=nu_d, lambda_mat=np.eye(dim), lambda_sq=lam_d,
                                  eta=eta, p=p, provenance=prov)


def _estimate_for_kind(kind: StatisticKind, null: sm.NullSpec, gene_summaries,
                       p: float, overrides: dict) -> ebayes.Hyperparameters:
    """Per-statistic estimation policy shared by rank_genes and the study runs."""
    if kind == StatisticKind.MB_NU_ZERO:
        return ebayes.Hyperparameters(nu=0.0, lambda_mat=np.eye(gene_summaries[0].dim),
                                      eta=overrides.get("eta", 1.0), p=p,
                                      provenance={"eta": "estimated"})
    if kind == StatisticKind.MB_NU_INF:
        lam = overrides.get("lambda_mat")
        prov = {}
        if lam is None:
            # in the nu -> inf model the gene-averaged S estimates the prior mean
            lam = matlin.symmetrize(np.mean([g.s for g in gene_summaries], axis=0))
            prov["lambda_mat"] = "estimated"
        return ebayes.Hyperparameters(nu=math.inf, lambda_mat=lam,
                                      eta=overrides.get("eta", 1.0), p=p, provenance=prov)
    if kind == StatisticKind.MB_SIGMA_DIAG:
        return _estimate_sigma_diag(gene_summaries, p, overrides)
    kw = dict(p=p, nu0=overrides.get("nu"), lambda0=overrides.get("lambda_mat"),
              eta0=overrides.get("eta"))
    if kind in (StatisticKind.MODERATED_LR, StatisticKind.MODERATED_HOTELLING) \
            and kw["eta0"] is None:
        kw["eta0"] = 1.0  # the likelihood route never reads eta
    if kind == StatisticKind.MB_CONSTANCY:
        return ebayes.estimate_constancy_hypers(gene_summaries, **kw)
    return ebayes.estimate_hyperparameters(gene_summaries, **kw)


def _score_gene(kind: StatisticKind, summary: sm.GeneSummary | None, replicates,
                hypers: ebayes.Hyperparameters | None, extra: dict):
    """(ranking value, t2 or None, mb score or None) for one gene."""
    if kind == StatisticKind.REPLICATE_VARIANCE:
        return replicate_variance(replicates), None, None
    if kind == StatisticKind.ANOVA_F:
        return anova_f(replicates)[0], None, None
    if kind == StatisticKind.PARTLY_MODERATED_F:
        return partly_moderated_f(replicates, extra["d0"], extra["s0_sq"])[0], None, None
    if kind == StatisticKind.MB_SIGMA_DIAG:
        if math.isinf(hypers.nu):
            _, score = mb_limit_nu_inf(summary.xbar, summary.effective_n,
                                       hypers.lambda_sq, hypers.eta, hypers.p)
        else:
            _, score = mb_sigma_diag(summary.xbar, np.diag(summary.s), summary.n,
                                     hypers.nu, hypers.lambda_sq, hypers.eta, hypers.p)
        return score, None, score
    if kind == StatisticKind.MB_NU_INF:
        _, score = mb_limit_nu_inf(summary.xbar, summary.effective_n,
                                   hypers.lambda_mat, hypers.eta, hypers.p)
        root = matlin.inv_sqrt(hypers.lambda_mat)
        tvec = math.sqrt(summary.effective_n) * (root @ summary.xbar)
        return score, float(tvec @ tvec), score
    if kind == StatisticKind.MB_NU_ZERO:
        _, score, t2 = mb_limit_nu_zero(summary.xbar, summary.s, summary.effective_n,
                                        hypers.eta, hypers.p)
        return score, t2, score
    if kind in (StatisticKind.MODERATED_LR, StatisticKind.MODERATED_HOTELLING):
        if summary.design == sm.UNPAIRED:
            s_tilde = moderate_covariance(summary.s, summary.m + summary.n - 1,
                                          hypers.nu, hypers.lambda_mat)
            lr, quad = moderated_lr(summary.xbar, s_tilde, summary.n, m=summary.m)
        else:
            s_tilde = moderate_covariance(summary.s, summary.n, hypers.nu, hypers.lambda_mat)
            d = summary.xbar
            if extra["null_kind"] == "constant_mean":
                _, d = constancy_mle_shift(summary.xbar, s_tilde)
            lr, quad = moderated_lr(d, s_tilde, summary.n)
        value = lr if kind == StatisticKind.MODERATED_LR else quad
        return value, quad, None
    if kind == StatisticKind.MB_TWO_SAMPLE:
        _, score, t2 = mb_two_sample(summary.xbar, summary.s, summary.m, summary.n,
                                     hypers.nu, hypers.lambda_mat, hypers.eta, hypers.p)
        return score, t2, score
    if kind == StatisticKind.MB_CONSTANCY:
        _, score, t2 = mb_constancy(summary, hypers.nu, hypers.lambda_mat,
                                    hypers.eta, hypers.p)
        return score, t2, score
    # plain one-sample MB on whatever channel the summary carries
    nu = hypers.nu
    if math.isinf(nu):
        _, score = mb_limit_nu_inf(summary.xbar, summary.effective_n,
                                   hypers.lambda_mat, hypers.eta, hypers.p)
        root = matlin.inv_sqrt(hypers.lambda_mat)
        tvec = math.sqrt(summary.effective_n) * (root @ summary.xbar)
        return score, float(tvec @ tvec), score
    if 0.0 <= nu < NU_ZERO_THRESHOLD:
        _, score, t2 = mb_limit_nu_zero(summary.xbar, summary.s, summary.effective_n,
                                        hypers.eta, hypers.p)
        return score, t2, score
    s_tilde = moderate_covariance(summary.s, summary.n, nu, hypers.lambda_mat)
    _, t2 = moderated_t(summary.xbar, s_tilde, summary.effective_n)
    _, score = mb_one_sample(t2, summary.n, summary.dim, nu, hypers.eta, hypers.p)
    return score, t2, score


def _estimate_likelihood_route_constancy(dataset: sm.ExpressionDataset, null: sm.NullSpec,
                                         p: float, overrides: dict) -> ebayes.Hyperparameters:
    """Moderation inputs for the likelihood route under the constancy null.

    The estimation runs on the transformed channels; the raw-channel common
    matrix is then assembled by rotating the block diagonal (grand-mean scale,
    contrast scale matrix) back through the orthonormal contrast, so it
    commutes with the constant-profile projection by construction.
    """
    helm_null = sm.NullSpec(kind="constant_mean", contrast_kind="helmert")
    _, con_sums, _, _ = _collect_summaries(dataset, StatisticKind.MB_CONSTANCY, helm_null)
    base = ebayes.estimate_constancy_hypers(con_sums, p=p, nu0=overrides.get("nu"), eta0=1.0)
    lam = overrides.get("lambda_mat")
    prov = {"nu": base.provenance["nu"], "eta": "user_set"}
    if lam is None:
        k = dataset.k
        rows = matlin.helmert(k).rows
        block = np.zeros((k, k))
        block[0, 0] = base.lambda_sq
        block[1:, 1:] = base.lambda_mat
        lam = rows.T @ block @ rows
        lam = (lam + lam.T) / 2.0
        prov["lambda_mat"] = "estimated"
    else:
        prov["lambda_mat"] = "user_set"
    return ebayes.Hyperparameters(nu=base.nu, lambda_mat=lam, eta=1.0, p=p,
                                  provenance=prov, nu_stage1=base.nu_stage1)


def _fit_partly_moderated(dataset: sm.ExpressionDataset, genes) -> tuple[float, float]:
    ms_res, d_res = [], []
    for gene in genes:
        x = dataset.replicates(gene).values
        f, ms_time, flag = anova_f(x)
        if flag is None:
            ms_res.append(ms_time / f)
            d_res.append((x.shape[0] - 1.0) * (x.shape[1] - 1.0))
    return ebayes.fit_log_variance_prior(np.array(ms_res), np.array(d_res))


def rank_genes(dataset: sm.ExpressionDataset, kind: StatisticKind | str,
               hypers: ebayes.Hyperparameters | None = None,
               null: sm.NullSpec | None = None, p: float = ebayes.DEFAULT_P,
               rank_by: str = "value") -> RankingResult:
    """Score every gene, order descending (larger = more evidence), and report
    skipped genes alongside.

    Ties break by input gene order; infinite-F sentinels order among
    themselves by the time mean square, descending.  Per-gene failures land in
    the skip list instead of aborting the run.
    """
    kind = StatisticKind(kind)
    if null is None:
        null = sm.NullSpec(kind="constant_mean")
    kind = _resolve_kind(kind, null)
    genes, gene_sums, skips, n1_genes = _collect_summaries(dataset, kind, null)

    overrides = {}
    if hypers is not None:
        p = hypers.p
        for name in ("nu", "lambda_mat", "eta", "lambda_sq"):
            if hypers.provenance.get(name) == "user_set":
                overrides[name] = getattr(hypers, name)

    needs = _NEEDS.get(kind, ())
    resolved = None
    if needs and genes:
        if hypers is not None and all(hypers.provenance.get(f) == "user_set" for f in needs):
            resolved = hypers
        elif kind == StatisticKind.MB_CONSTANCY and null.contrast_kind != "helmert":
            # estimate nu and eta on the orthonormal channel so the scores do
            # not depend on which contrast basis was requested; the common
            # matrix transforms equivariantly onto the requested basis
            helm_null = sm.NullSpec(kind="constant_mean", contrast_kind="helmert")
            _, helm_sums, _, _ = _collect_summaries(dataset, kind, helm_null)
            base = _estimate_for_kind(kind, helm_null, helm_sums, p, overrides)
            lam = overrides.get("lambda_mat")
            prov = dict(base.provenance)
            if lam is None:
                sbar = np.mean([g.s for g in gene_sums], axis=0)
                lam = ebayes.estimate_lambda(sbar, base.nu_stage1, gene_sums[0].dim)
                prov["lambda_mat"] = "estimated"
            else:
                prov["lambda_mat"] = "user_set"
            resolved = ebayes.Hyperparameters(
                nu=base.nu, lambda_mat=lam, eta=base.eta, p=p,
                xi=base.xi, lambda_sq=base.lambda_sq,
                provenance=prov, eta_fallback=base.eta_fallback,
                nu_stage1=base.nu_stage1,
            )
        elif kind in (StatisticKind.MODERATED_LR, StatisticKind.MODERATED_HOTELLING) \
                and null.kind == "constant_mean":
            resolved = _estimate_likelihood_route_constancy(dataset, null, p, overrides)
        else:
            resolved = _estimate_for_kind(kind, null, gene_sums, p, overrides)

    extra = {"null_kind": null.kind}
    if kind == StatisticKind.PARTLY_MODERATED_F and genes:
        d0, s0_sq = _fit_partly_moderated(dataset, genes)
        extra.update(d0=d0, s0_sq=s0_sq)

    values, t2s, mbs, tiebreak, n_used = [], [], [], [], []
    kept_genes = []
    for gene, summary in zip(genes, gene_sums):
        reps = dataset.replicates(gene).values if null.kind != "equal_two_sample" else None
        try:
            value, t2, mb = _score_gene(kind, summary, reps, resolved, extra)
        except (NotPositiveDefinite, ParameterOutOfRange, DegenerateLayout) as exc:
            skips[gene] = str(exc)
            continue
        kept_genes.append(gene)
        values.append(value)
        t2s.append(np.nan if t2 is None else t2)
        mbs.append(np.nan if mb is None else mb)
        n_used.append(summary.n if summary.m is None else summary.m + summary.n)
        if math.isinf(value) and kind in (StatisticKind.ANOVA_F, StatisticKind.PARTLY_MODERATED_F):
            tiebreak.append(anova_f(reps)[1])
        else:
            tiebreak.append(0.0)

    # unreplicated genes are rankable only with fully user-set hyperparameters
    for gene in n1_genes:
        if kind == StatisticKind.MB and hypers is not None:
            x = dataset.replicates(gene).values[0]
            if null.kind == "known_mean":
                x = x - null.mu0
            try:
                _, score, t2 = mb_n1(x, hypers)
            except MissingHyperparameters as exc:
                skips[gene] = str(exc)
                continue
            kept_genes.append(gene)
            values.append(score)
            t2s.append(t2)
            mbs.append(score)
            n_used.append(1)
            tiebreak.append(0.0)
        else:
            skips[gene] = "single replicate: rankable only by mb with user-set hyperparameters"

    values = np.asarray(values, dtype=float)
    t2s = np.asarray(t2s, dtype=float)
    mbs = np.asarray(mbs, dtype=float)
    sort_key = t2s if rank_by == "t2" else values
    order = sorted(range(len(kept_genes)), key=lambda i: (-sort_key[i], -tiebreak[i], i))
    order = np.array(order, dtype=int)

    metadata = {"rank_by": rank_by, "null": null.kind, "contrast": null.contrast_kind,
                "unequal_n": len(set(n_used)) > 1}
    if metadata["unequal_n"]:
        metadata["note"] = "per-gene replicate counts differ; ordering follows the posterior log-odds"
    return RankingResult(
        kind=kind,
        genes=tuple(kept_genes[i] for i in order),
        values=values[order] if len(order) else values,
        t2=None if not len(order) or np.all(np.isnan(t2s)) else t2s[order],
        mb=None if not len(order) or np.all(np.isnan(mbs)) else mbs[order],
        n_used=tuple(n_used[i] for i in order),
        skips=skips,
        hypers=resolved,
        metadata=metadata,
    )
