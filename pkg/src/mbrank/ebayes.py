"""Empirical-Bayes estimation of the prior hyperparameters.

The prior degrees of freedom and scale matrix are fitted from the whole gene
set by log-variance moment matching; the alternative-prior scale eta is fitted
from the top-ranked moderated t values per time point.  A user may override
any field, and every field records whether it was estimated or user-set.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import matlin
from .errors import (
    ConfigError,
    NotPositiveDefinite,
    TooFewGenes,
    TooFewTopGenes,
)

MIN_GENES_FOR_NU = 50
MIN_TOP_GENES_FOR_ETA = 10
DEFAULT_P = 0.02


@dataclass(frozen=True)
class Hyperparameters:
    """Prior parameters for the moderated statistics.

    lambda_mat is k x k for the raw channel or (k-1) x (k-1) for the constancy
    channel.  xi/lambda_sq/theta/kappa/tau belong to the constancy model's
    grand-mean channel; they cancel out of the posterior odds and are carried
    for reporting only.
    """

    nu: float
    lambda_mat: np.ndarray
    eta: float
    p: float = DEFAULT_P
    xi: float = 1.0
    lambda_sq: float = 1.0
    theta: float = 0.0
    kappa: float = 1.0
    tau: float = 1.0
    provenance: dict = field(default_factory=dict)
    eta_fallback: bool = False
    nu_stage1: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "lambda_mat", np.atleast_2d(np.asarray(self.lambda_mat, dtype=float)))
        prov = dict(self.provenance)
        for name in ("nu", "lambda_mat", "eta", "p", "xi", "lambda_sq", "theta", "kappa", "tau"):
            prov.setdefault(name, "user_set")
        object.__setattr__(self, "provenance", prov)

    @property
    def dim(self) -> int:
        return self.lambda_mat.shape[0]


def trigamma_inverse(y: float) -> float:
    """Solve psi'(x) = y for x > 0; +inf when y <= 0 (no excess dispersion)."""
    if y <= 0.0:
        return math.inf
    if y > 1e7:
        return 1.0 / math.sqrt(y)
    if y < 1e-6:
        return 1.0 / y
    x = 0.5 + 1.0 / y
    for _ in range(50):
        tri = matlin.digamma_trigamma(x)[1]
        dif = tri * (1.0 - tri / y) / matlin.tetragamma(x)
        x += dif
        if abs(dif) < 1e-8 * x:
            break
    return x


def fit_log_variance_prior(variances, d) -> tuple[float, float]:
    """Moment-match a scaled-inverse-chi-square prior to observed variances.

    variances are per-gene sample variances with residual degrees of freedom d
    (scalar or per-gene array).  Returns (prior df, prior scale); the df is
    +inf when the observed log-variance dispersion does not exceed the
    sampling dispersion.
    """
    v = np.asarray(variances, dtype=float)
    d = np.broadcast_to(np.asarray(d, dtype=float), v.shape)
    keep = np.isfinite(v) & (v > 0.0) & (d >= 1.0)
    v, d = v[keep], d[keep]
    if v.size < 2:
        raise TooFewGenes(f"need at least 2 usable variances, got {v.size}")
    z = np.log(v)
    dig = np.array([matlin.digamma_trigamma(x / 2.0)[0] for x in np.unique(d)])
    tri = np.array([matlin.digamma_trigamma(x / 2.0)[1] for x in np.unique(d)])
    lookup = {x: (dg, tr) for x, dg, tr in zip(np.unique(d), dig, tri)}
    adj = np.array([lookup[x][0] - math.log(x / 2.0) for x in d])
    e = z - adj
    evar = np.var(e, ddof=1) - float(np.mean([lookup[x][1] for x in d]))
    if evar <= 0.0:
        return math.inf, float(np.exp(e.mean()))
    df0 = 2.0 * trigamma_inverse(evar)
    scale = math.exp(e.mean() + matlin.digamma_trigamma(df0 / 2.0)[0] - math.log(df0 / 2.0))
    return df0, scale


def estimate_nu_per_timepoint(variances, d) -> float:
    """Prior df fitted to one time point's replicate variances across genes."""
    v = np.asarray(variances, dtype=float)
    usable = int(np.sum(np.isfinite(v) & (v > 0.0)))
    if usable < MIN_GENES_FOR_NU:
        raise TooFewGenes(f"need >= {MIN_GENES_FOR_NU} genes, got {usable}")
    return fit_log_variance_prior(v, d)[0]


def estimate_nu(summaries, nu0: float | None = None) -> tuple[float, float]:
    """(stage-1, final) prior df for a channel of summaries.

    Stage 1 floors at dim + 6 and exists only to scale the Lambda estimate;
    the final value is the plain per-timepoint mean (or the user's nu0).
    +inf sentinels propagate through the mean.
    """
    dim = summaries[0].dim
    if nu0 is not None:
        return max(nu0, dim + 6.0), float(nu0)
    d = np.array([g.n - 1 for g in summaries], dtype=float)
    if summaries[0].design == "unpaired_two_sample":
        d = np.array([g.m + g.n - 2 for g in summaries], dtype=float)
    nuj = []
    for j in range(dim):
        vj = np.array([g.s[j, j] for g in summaries])
        nuj.append(estimate_nu_per_timepoint(vj, d))
    final = math.inf if any(math.isinf(x) for x in nuj) else float(np.mean(nuj))
    return max(final, dim + 6.0), final


def estimate_lambda(mean_of_s, nu_stage1: float, k: int) -> np.ndarray:
    """Prior scale matrix from the gene-averaged sample covariance."""
    sbar = matlin.symmetrize(mean_of_s)
    if sbar.shape[0] != k:
        raise NotPositiveDefinite(f"mean covariance is {sbar.shape[0]}x{sbar.shape[0]}, expected {k}")
    matlin.cholesky(sbar)  # raises NotPositiveDefinite when degenerate
    if math.isinf(nu_stage1):
        return sbar
    return (nu_stage1 - k - 1.0) / nu_stage1 * sbar


def t_tilde_matrix(summaries, nu: float, lambda_mat) -> np.ndarray:
    """Moderated multivariate t vectors, one row per gene (equal dims required)."""
    lam = np.atleast_2d(np.asarray(lambda_mat, dtype=float))
    rows = []
    for g in summaries:
        df = g.n - 1 if g.m is None else g.m + g.n - 2
        if math.isinf(nu):
            s_tilde = lam
        else:
            s_tilde = (df * g.s + nu * lam) / (df + nu)
        rows.append(math.sqrt(g.effective_n) * (matlin.inv_sqrt(s_tilde) @ g.xbar))
    return np.array(rows)


def estimate_eta(t_tilde_mat, p: float, n: float, nu: float, d_within: float | None = None) -> tuple[float, bool]:
    """Alternative-prior scale from the top p/2 portion of each |t| column.

    Each top-ranked observation is matched against the quantile it should
    occupy under the null/alternative mixture, where the alternative law is a
    scaled t with the total moderated df (within-gene df + nu) and scale
    sqrt((n + eta) / eta) for effective precision n; admissible solutions are
    averaged.  Returns (eta_hat, fallback_flag); the flag is set when no
    column yielded an admissible solution.
    """
    t = np.atleast_2d(np.asarray(t_tilde_mat, dtype=float))
    ngenes, ncols = t.shape
    ntarget = math.ceil(p / 2.0 * ngenes)
    if ntarget < MIN_TOP_GENES_FOR_ETA:
        raise TooFewTopGenes(
            f"p*G/2 = {ntarget} top genes, need >= {MIN_TOP_GENES_FOR_ETA}"
        )
    if d_within is None:
        d_within = n - 1.0
    df = d_within + nu
    if math.isinf(nu):
        df = 1e12  # effectively normal tails
    pp = max(ntarget / ngenes, p)
    per_column = []
    any_admissible = False
    for j in range(ncols):
        top = np.sort(np.abs(t[:, j]))[::-1][:ntarget]
        solutions = []
        for r, tval in enumerate(top, start=1):
            if tval <= 0.0:
                continue
            p0 = 2.0 * matlin.student_t_sf(tval, df)
            ptarget = ((r - 0.5) / ngenes - (1.0 - pp) * p0) / pp
            if ptarget <= p0 or ptarget <= 0.0:
                continue
            qtarget = matlin.student_t_isf(ptarget / 2.0, df)
            scale_sq = (tval / qtarget) ** 2
            if scale_sq > 1.0:
                solutions.append(n / (scale_sq - 1.0))
        if solutions:
            per_column.append(float(np.mean(solutions)))
            any_admissible = True
        else:
            per_column.append(1.0)
    return float(np.mean(per_column)), not any_admissible


def estimate_hyperparameters(
    summaries,
    p: float = DEFAULT_P,
    nu0: float | None = None,
    lambda0=None,
    eta0: float | None = None,
) -> Hyperparameters:
    """Full estimation pass over one channel of summaries, honouring overrides."""
    dim = summaries[0].dim
    nu_stage1, nu_final = estimate_nu(summaries, nu0=nu0)
    prov = {"nu": "user_set" if nu0 is not None else "estimated", "p": "user_set"}
    if lambda0 is not None:
        lam = matlin.symmetrize(lambda0)
        prov["lambda_mat"] = "user_set"
    else:
        sbar = np.mean([g.s for g in summaries], axis=0)
        lam = estimate_lambda(sbar, nu_stage1, dim)
        prov["lambda_mat"] = "estimated"
    fallback = False
    if eta0 is not None:
        eta = eta0
        prov["eta"] = "user_set"
    else:
        tmat = t_tilde_matrix(summaries, nu_final, lam)
        n_eff = float(np.median([g.effective_n for g in summaries]))
        d_within = float(np.median([g.n - 1 if g.m is None else g.m + g.n - 2 for g in summaries]))
        eta, fallback = estimate_eta(tmat, p, n_eff, nu_final, d_within)
        prov["eta"] = "estimated"
    return Hyperparameters(
        nu=nu_final,
        lambda_mat=lam,
        eta=eta,
        p=p,
        provenance=prov,
        eta_fallback=fallback,
        nu_stage1=nu_stage1,
    )


def estimate_constancy_hypers(
    summaries,
    p: float = DEFAULT_P,
    nu0: float | None = None,
    lambda0=None,
    eta0: float | None = None,
) -> Hyperparameters:
    """Estimation on the contrast channel, plus the grand-mean channel's
    (xi, lambda_sq).  The latter are reported but cancel out of the odds."""
    base = estimate_hyperparameters(summaries, p=p, nu0=nu0, lambda0=lambda0, eta0=eta0)
    scalar_vars = np.array([g.scalar_var for g in summaries], dtype=float)
    d = np.array([g.n - 1 for g in summaries], dtype=float)
    xi, lam_sq = fit_log_variance_prior(scalar_vars, d)
    prov = dict(base.provenance)
    prov["xi"] = "estimated"
    prov["lambda_sq"] = "estimated"
    return replace(base, xi=xi, lambda_sq=lam_sq, provenance=prov)


# ---------------------------------------------------------------------------
# Flat key = value serialization, with the scale matrix in a CSV sidecar.
# ---------------------------------------------------------------------------

_SCALAR_FIELDS = ("nu", "eta", "p", "xi", "lambda_sq", "theta", "kappa", "tau")


def save_hyperparameters(hypers: Hyperparameters, path: str, lambda_path: str | None = None) -> None:
    if lambda_path is None:
        lambda_path = os.path.splitext(path)[0] + "_lambda.csv"
    np.savetxt(lambda_path, hypers.lambda_mat, delimiter=",", fmt="%.17g")
    lines = []
    for name in _SCALAR_FIELDS:
        lines.append(f"{name} = {getattr(hypers, name):.17g}")
    lines.append(f"lambda_file = {os.path.basename(lambda_path)}")
    for name in sorted(hypers.provenance):
        lines.append(f"provenance.{name} = {hypers.provenance[name]}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_hyperparameters(path: str) -> Hyperparameters:
    values: dict = {}
    provenance: dict = {}
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"malformed hyperparameter line: {line!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key.startswith("provenance."):
                provenance[key[len("provenance.") :]] = val
            else:
                values[key] = val
    if "lambda_file" not in values:
        raise ConfigError("hyperparameter file lacks lambda_file")
    lam_path = values.pop("lambda_file")
    if not os.path.isabs(lam_path):
        lam_path = os.path.join(os.path.dirname(os.path.abspath(path)), lam_path)
    lam = np.loadtxt(lam_path, delimiter=",", ndmin=2)
    kwargs = {}
    for name in _SCALAR_FIELDS:
        if name in values:
            kwargs[name] = float(values.pop(name))
    if values:
        raise ConfigError(f"unknown hyperparameter keys: {sorted(values)}")
    return Hyperparameters(lambda_mat=lam, provenance=provenance, **kwargs)
