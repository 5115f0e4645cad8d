"""Command-line entry point: ingest long-format CSVs, run rankings,
simulations, estimation, study comparisons and moderation sweeps.

Every command is deterministic given (inputs, config, seed): reruns produce
byte-identical outputs.  Exit codes: 0 success, 2 configuration error,
3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__, ebayes, evaluate, matlin, simulate, stats
from . import summaries as sm
from .errors import (
    ConfigError,
    MbrankError,
    NoConvergence,
    NotPositiveDefinite,
    ParameterOutOfRange,
    ParseError,
    TooFewGenes,
    TooFewTopGenes,
    TruthMismatch,
)

REQUIRED_COLUMNS = ("gene", "condition", "replicate", "time", "value")

DESIGNS = ("zero", "known-mean", "constant", "two-sample-paired", "two-sample-unpaired")

_FMT = "%.17g"


def _fmt(x: float) -> str:
    return _FMT % x


# ---------------------------------------------------------------------------
# Ingestion and emission of the long CSV format.
# ---------------------------------------------------------------------------

def ingest(path: str) -> sm.ExpressionDataset:
    """Parse a long-format CSV (gene,condition,replicate,time,value).

    '#'-prefixed lines before the header may carry metadata; 'time-order'
    fixes the time ordering explicitly, otherwise distinct time labels are
    sorted.  Genes with incomplete or non-finite replicate vectors land in the
    dataset's skip list rather than failing the parse.
    """
    meta: dict = {}
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = None
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" in body:
                    key, _, val = body.partition(":")
                    meta[key.strip()] = val.strip()
                continue
            cells = next(csv.reader([line]))
            if header is None:
                header = [c.strip() for c in cells]
                if sorted(header) != sorted(REQUIRED_COLUMNS):
                    raise ParseError(
                        f"header must have columns {','.join(REQUIRED_COLUMNS)}, got {','.join(header)}",
                        line=lineno,
                    )
                idx = {name: header.index(name) for name in REQUIRED_COLUMNS}
                continue
            if len(cells) != len(header):
                raise ParseError(f"expected {len(header)} cells, got {len(cells)}", line=lineno)
            gene = cells[idx["gene"]].strip()
            cond = cells[idx["condition"]].strip()
            rep = cells[idx["replicate"]].strip()
            time = cells[idx["time"]].strip()
            try:
                value = float(cells[idx["value"]])
            except ValueError:
                raise ParseError(f"non-numeric value {cells[idx['value']]!r}", line=lineno) from None
            rows.append((lineno, gene, cond, rep, time, value))
    if header is None:
        raise ParseError("empty file: no header found")

    seen: dict = {}
    for lineno, gene, cond, rep, time, value in rows:
        key = (gene, cond, rep, time)
        if key in seen:
            raise ParseError(
                f"duplicate (gene,condition,replicate,time) = {key}", line=lineno
            )
        seen[key] = value

    time_labels = sorted({r[4] for r in rows})
    if "time-order" in meta:
        explicit = [t.strip() for t in meta["time-order"].split(",")]
        if sorted(explicit) != time_labels:
            raise ParseError("time-order header does not match the time labels present")
        time_labels = explicit
    conditions = sorted({r[2] for r in rows})
    if len(conditions) not in (1, 2):
        raise ParseError(f"expected 1 or 2 conditions, found {len(conditions)}")
    k = len(time_labels)
    t_index = {t: i for i, t in enumerate(time_labels)}

    genes_in_order: list[str] = []
    gene_seen = set()
    cells: dict = {}  # gene -> cond -> rep -> {time: value}
    for lineno, gene, cond, rep, time, value in rows:
        if gene not in gene_seen:
            gene_seen.add(gene)
            genes_in_order.append(gene)
        cells.setdefault(gene, {}).setdefault(cond, {}).setdefault(rep, {})[time] = value

    observations: dict = {}
    skipped: dict = {}
    kept: list[str] = []
    for gene in genes_in_order:
        ok = True
        per_cond = {}
        for cond in conditions:
            by_rep = cells[gene].get(cond)
            if not by_rep:
                skipped[gene] = f"no observations under condition {cond!r}"
                ok = False
                break
            reps = sorted(by_rep)
            mat = np.empty((len(reps), k))
            for i, rep in enumerate(reps):
                series = by_rep[rep]
                if set(series) != set(time_labels):
                    missing = sorted(set(time_labels) - set(series))
                    skipped[gene] = f"replicate {rep!r} incomplete (missing {missing[0]!r}, ...)"
                    ok = False
                    break
                for t, v in series.items():
                    mat[i, t_index[t]] = v
            if not ok:
                break
            if not np.all(np.isfinite(mat)):
                skipped[gene] = "non-finite expression value"
                ok = False
                break
            per_cond[cond] = sm.Replicates(labels=tuple(reps), values=mat)
        if ok:
            kept.append(gene)
            for cond, reps_obj in per_cond.items():
                observations[(gene, cond)] = reps_obj
    return sm.ExpressionDataset(
        genes=tuple(kept),
        k=k,
        time_labels=tuple(time_labels),
        conditions=tuple(conditions),
        observations=observations,
        skipped=skipped,
    )


def emit(dataset: sm.ExpressionDataset, path: str) -> None:
    """Write a dataset back to the long CSV format (17 significant digits)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# time-order: " + ",".join(dataset.time_labels) + "\n")
        fh.write(",".join(REQUIRED_COLUMNS) + "\n")
        for gene in dataset.genes:
            for cond in dataset.conditions:
                reps = dataset.observations[(gene, cond)]
                for i, rep in enumerate(reps.labels):
                    for j, t in enumerate(dataset.time_labels):
                        fh.write(f"{gene},{cond},{rep},{t},{_fmt(reps.values[i, j])}\n")


def write_truth(labeled: simulate.LabeledDataset, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("gene,I,mahalanobis_deviation\n")
        for gene, flag, dev in zip(labeled.dataset.genes, labeled.truth, labeled.mahalanobis):
            fh.write(f"{gene},{int(flag)},{_fmt(dev)}\n")


def read_truth(path: str) -> tuple[dict, dict]:
    truth: dict = {}
    maha: dict = {}
    with open(path, encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            truth[row["gene"]] = int(row["I"])
            maha[row["gene"]] = float(row["mahalanobis_deviation"])
    return truth, maha


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Run configuration: config file values merged under command-line flags.
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    command: str
    inputs: list = field(default_factory=list)
    design: str = "constant"
    statistics: list = field(default_factory=lambda: ["mb"])
    nu: float | None = None
    eta: float | None = None
    p: float = ebayes.DEFAULT_P
    lambda_file: str | None = None
    mu0: np.ndarray | None = None
    contrast: str = "helmert"
    seed: int | None = None
    out: str = "."
    rank_by: str = "value"
    x_min: int = 400
    x_max: int = 800
    nu_grid: list = field(default_factory=lambda: [100.0, 12.0, 2.0, 1.0, 0.01])
    top_m: int = 859
    num_datasets: int = 100
    genes: int = 20000
    nonconstant: int = 400
    reps: int = 3
    timepoints: int = 8

    def null_spec(self, for_design: str | None = None) -> sm.NullSpec:
        design = for_design or self.design
        kind = {
            "zero": "zero_mean",
            "known-mean": "known_mean",
            "constant": "constant_mean",
            "two-sample-paired": "zero_mean",
            "two-sample-unpaired": "equal_two_sample",
        }[design]
        mu0 = self.mu0 if kind == "known_mean" else None
        contrast = "first_difference_style" if self.contrast == "diff" else "helmert"
        return sm.NullSpec(kind=kind, mu0=mu0, contrast_kind=contrast)

    def user_hypers(self, dim: int) -> ebayes.Hyperparameters | None:
        if self.nu is None and self.eta is None and self.lambda_file is None:
            return None
        # fields the user did not set carry placeholder values marked
        # "estimated"; rank_genes replaces them from the data
        prov = {
            "nu": "user_set" if self.nu is not None else "estimated",
            "eta": "user_set" if self.eta is not None else "estimated",
            "lambda_mat": "user_set" if self.lambda_file is not None else "estimated",
            "p": "user_set",
        }
        lam = (np.loadtxt(self.lambda_file, delimiter=",", ndmin=2)
               if self.lambda_file is not None else np.eye(dim))
        return ebayes.Hyperparameters(
            nu=self.nu if self.nu is not None else 1.0,
            lambda_mat=lam,
            eta=self.eta if self.eta is not None else 1.0,
            p=self.p,
            provenance=prov,
        )


def _parse_config_file(path: str) -> dict:
    values: dict = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
    with fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"malformed config line {line!r}")
            key, _, val = line.partition("=")
            values[key.strip().replace("-", "_")] = val.strip()
    return values


def _apply_config_file(cfg: RunConfig, values: dict, cli_given: set) -> None:
    converters = {
        "design": str, "contrast": str, "rank_by": str, "lambda_file": str, "out": str,
        "nu": float, "eta": float, "p": float,
        "seed": int, "x_min": int, "x_max": int, "top_m": int,
        "num_datasets": int, "genes": int, "nonconstant": int, "reps": int,
        "timepoints": int,
    }
    for key, raw in values.items():
        if key in cli_given:
            continue  # command line wins
        if key == "stat":
            cfg.statistics = [s.strip() for s in raw.split(",") if s.strip()]
        elif key == "mu0":
            cfg.mu0 = np.array([float(v) for v in raw.split(",")])
        elif key == "nu_grid":
            cfg.nu_grid = [float(v) for v in raw.split(",")]
        elif key in converters:
            setattr(cfg, key, converters[key](raw))
        else:
            raise ConfigError(f"unknown config key {key!r}")


# ---------------------------------------------------------------------------
# Commands.
# ---------------------------------------------------------------------------

def _prepare_dataset(cfg: RunConfig, path: str) -> sm.ExpressionDataset:
    dataset = ingest(path)
    if cfg.design in ("zero", "known-mean", "constant") and len(dataset.conditions) != 1:
        raise ConfigError(f"design {cfg.design!r} needs one condition, file has {len(dataset.conditions)}")
    if cfg.design.startswith("two-sample") and len(dataset.conditions) != 2:
        raise ConfigError(f"design {cfg.design!r} needs two conditions")
    if cfg.design == "two-sample-paired":
        dataset = sm.paired_differences(dataset)
    return dataset


def _hyper_header_lines(result: stats.RankingResult, cfg: RunConfig) -> list[str]:
    lines = [
        f"# version: {__version__}",
        f"# design: {cfg.design}",
        f"# statistic: {result.kind.value}",
        f"# null: {result.metadata.get('null')}",
        f"# rank_by: {result.metadata.get('rank_by')}",
        f"# p: {_fmt(cfg.p)}",
    ]
    if cfg.seed is not None:
        lines.append(f"# seed: {cfg.seed}")
    h = result.hypers
    if h is not None:
        for name in ("nu", "eta", "xi", "lambda_sq"):
            prov = h.provenance.get(name, "user_set")
            lines.append(f"# {name}: {_fmt(getattr(h, name))} ({prov})")
        lines.append(f"# lambda: ({h.provenance.get('lambda_mat', 'user_set')}, see lambda.csv)")
        if h.eta_fallback:
            lines.append("# eta_fallback: true (no admissible solution; eta = 1 used)")
    if result.metadata.get("unequal_n"):
        lines.append("# unequal_n: true")
    return lines


def _write_ranking(result: stats.RankingResult, cfg: RunConfig, out_dir: str, stem: str) -> str:
    path = os.path.join(out_dir, f"{stem}.tsv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in _hyper_header_lines(result, cfg):
            fh.write(line + "\n")
        fh.write("rank\tgene\tvalue\tt2\tmb\tn\n")
        for i, gene in enumerate(result.genes):
            t2 = "" if result.t2 is None or math.isnan(result.t2[i]) else _fmt(result.t2[i])
            mb = "" if result.mb is None or math.isnan(result.mb[i]) else _fmt(result.mb[i])
            fh.write(f"{i + 1}\t{gene}\t{_fmt(result.values[i])}\t{t2}\t{mb}\t{result.n_used[i]}\n")
    if result.hypers is not None:
        np.savetxt(os.path.join(out_dir, "lambda.csv"), result.hypers.lambda_mat,
                   delimiter=",", fmt=_FMT)
    if result.skips:
        with open(os.path.join(out_dir, "skips.tsv"), "w", encoding="utf-8", newline="") as fh:
            fh.write("gene\treason\n")
            for gene in sorted(result.skips):
                fh.write(f"{gene}\t{result.skips[gene]}\n")
    return path


def cmd_rank(cfg: RunConfig) -> int:
    if len(cfg.inputs) != 1:
        raise ConfigError("rank needs exactly one input CSV")
    dataset = _prepare_dataset(cfg, cfg.inputs[0])
    null = cfg.null_spec()
    os.makedirs(cfg.out, exist_ok=True)
    for kind in cfg.statistics:
        hypers = cfg.user_hypers(_channel_dim(dataset.k, kind, null))
        result = stats.rank_genes(dataset, kind, hypers=hypers, null=null, p=cfg.p,
                                  rank_by=cfg.rank_by)
        stem = "ranking" if len(cfg.statistics) == 1 else f"ranking_{kind}"
        path = _write_ranking(result, cfg, cfg.out, stem)
        print(f"wrote {path} ({len(result.genes)} genes, {len(result.skips)} skipped)")
    return 0


def _channel_dim(k: int, kind: str, null: sm.NullSpec) -> int:
    kind = stats.StatisticKind(kind)
    kind = stats._resolve_kind(kind, null)
    if kind in (stats.StatisticKind.MB_CONSTANCY, stats.StatisticKind.MB_FIRST_DIFF):
        return k - 1
    if null.kind == "constant_mean" and kind in (
            stats.StatisticKind.MB_SIGMA_DIAG, stats.StatisticKind.MB_NU_INF,
            stats.StatisticKind.MB_NU_ZERO):
        return k - 1
    return k


def cmd_simulate(cfg: RunConfig) -> int:
    if cfg.seed is None:
        raise ConfigError("simulate needs --seed for reproducibility")
    sim_cfg = simulate.SimulationConfig(
        num_datasets=cfg.num_datasets,
        genes_per_dataset=cfg.genes,
        nonconstant_count=cfg.nonconstant,
        n=cfg.reps,
        k=cfg.timepoints,
        seed=cfg.seed,
    )
    os.makedirs(cfg.out, exist_ok=True)
    width = max(3, len(str(sim_cfg.num_datasets - 1)))
    files = {}
    for labeled in simulate.simulate_study(sim_cfg):
        tag = f"{labeled.dataset_index:0{width}d}"
        data_path = os.path.join(cfg.out, f"dataset_{tag}.csv")
        truth_path = os.path.join(cfg.out, f"truth_{tag}.csv")
        emit(labeled.dataset, data_path)
        write_truth(labeled, truth_path)
        files[os.path.basename(data_path)] = _sha256(data_path)
        files[os.path.basename(truth_path)] = _sha256(truth_path)
    manifest = {
        "version": __version__,
        "rng": simulate.RNG_ALGORITHM,
        "config": {
            "num_datasets": sim_cfg.num_datasets,
            "genes_per_dataset": sim_cfg.genes_per_dataset,
            "nonconstant_count": sim_cfg.nonconstant_count,
            "n": sim_cfg.n,
            "k": sim_cfg.k,
            "nu": sim_cfg.nu,
            "xi": sim_cfg.xi,
            "lambda_sq": sim_cfg.lambda_sq,
            "theta": sim_cfg.theta,
            "kappa": sim_cfg.kappa,
            "eta": sim_cfg.eta,
            "lambda1": sim_cfg.lambda1.tolist(),
            "seed": sim_cfg.seed,
        },
        "files": files,
    }
    mpath = os.path.join(cfg.out, "manifest.json")
    with open(mpath, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {sim_cfg.num_datasets} datasets to {cfg.out}")
    return 0


def cmd_estimate(cfg: RunConfig) -> int:
    if len(cfg.inputs) != 1:
        raise ConfigError("estimate needs exactly one input CSV")
    dataset = _prepare_dataset(cfg, cfg.inputs[0])
    null = cfg.null_spec()
    contrast = matlin.contrast(null.contrast_kind, dataset.k)
    kind = stats._resolve_kind(stats.StatisticKind.MB, null)
    gene_sums = []
    for gene in dataset.genes:
        try:
            if null.kind == "equal_two_sample":
                cz, cy = dataset.conditions
                gene_sums.append(stats.summarize_for_kind(
                    dataset.observations[(gene, cz)].values, kind, null, contrast,
                    y_reps=dataset.observations[(gene, cy)].values))
            else:
                gene_sums.append(stats.summarize_for_kind(
                    dataset.replicates(gene).values, kind, null, contrast))
        except MbrankError:
            continue
    if null.kind == "constant_mean":
        hypers = ebayes.estimate_constancy_hypers(gene_sums, p=cfg.p, nu0=cfg.nu, eta0=cfg.eta)
    else:
        hypers = ebayes.estimate_hyperparameters(gene_sums, p=cfg.p, nu0=cfg.nu, eta0=cfg.eta)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "hyperparameters.txt")
    ebayes.save_hyperparameters(hypers, path)
    print(f"wrote {path} (nu = {hypers.nu:.6g}, eta = {hypers.eta:.6g})")
    return 0


def _load_study(sim_dir: str):
    mpath = os.path.join(sim_dir, "manifest.json")
    if not os.path.exists(mpath):
        raise ConfigError(f"no manifest.json in {sim_dir!r}; run simulate first")
    with open(mpath, encoding="utf-8") as fh:
        manifest = json.load(fh)
    pairs = []
    for name in sorted(manifest["files"]):
        if name.startswith("dataset_") and name.endswith(".csv"):
            truth_name = name.replace("dataset_", "truth_")
            if truth_name not in manifest["files"]:
                raise TruthMismatch(f"{name} has no matching {truth_name}")
            pairs.append((os.path.join(sim_dir, name), os.path.join(sim_dir, truth_name)))
    return manifest, pairs


def cmd_compare(cfg: RunConfig) -> int:
    if len(cfg.inputs) != 1:
        raise ConfigError("compare takes the simulate output directory")
    manifest, pairs = _load_study(cfg.inputs[0])
    null = sm.NullSpec(kind="constant_mean")
    curves: dict = {kind: [] for kind in cfg.statistics}
    estimates: dict = {}
    failures: dict = {}
    for data_path, truth_path in pairs:
        dataset = ingest(data_path)
        truth, _ = read_truth(truth_path)
        for kind in cfg.statistics:
            try:
                result = stats.rank_genes(dataset, kind, null=null, p=cfg.p)
            except MbrankError as exc:
                failures.setdefault(kind, []).append(f"{os.path.basename(data_path)}: {exc}")
                continue
            curves[kind].append(evaluate.fp_fn_curve(result, truth, cfg.x_min, cfg.x_max))
            resolved_kind = stats._resolve_kind(stats.StatisticKind(kind), null)
            if resolved_kind == stats.StatisticKind.MB_CONSTANCY and result.hypers is not None:
                estimates.setdefault("nu", []).append(result.hypers.nu)
                estimates.setdefault("eta", []).append(result.hypers.eta)
                for j, lam in enumerate(np.diag(result.hypers.lambda_mat), start=1):
                    estimates.setdefault(f"lambda1_{j}", []).append(lam)
    os.makedirs(cfg.out, exist_ok=True)

    cpath = os.path.join(cfg.out, "fpfn_curves.csv")
    with open(cpath, "w", encoding="utf-8", newline="") as fh:
        fh.write("statistic,x,mean_fp,mean_fn\n")
        for kind in cfg.statistics:
            if not curves[kind]:
                continue
            avg = evaluate.average_curves(curves[kind])
            for x, fp, fn in zip(avg.cutoffs, avg.fp, avg.fn):
                fh.write(f"{kind},{x},{_fmt(fp)},{_fmt(fn)}\n")

    if estimates and len(pairs) >= 2:
        sim_conf = manifest["config"]
        truth_vals = {"nu": sim_conf["nu"], "eta": sim_conf["eta"]}
        for j, lam in enumerate(np.diag(np.array(sim_conf["lambda1"])), start=1):
            truth_vals[f"lambda1_{j}"] = lam
        rpath = os.path.join(cfg.out, "recovery.csv")
        with open(rpath, "w", encoding="utf-8", newline="") as fh:
            fh.write("parameter,truth,mean,sd\n")
            for row in evaluate.recovery_table(estimates, truth_vals):
                truth_cell = "" if row.truth is None else _fmt(row.truth)
                fh.write(f"{row.parameter},{truth_cell},{_fmt(row.mean)},{_fmt(row.sd)}\n")

    if failures:
        fpath = os.path.join(cfg.out, "failures.txt")
        with open(fpath, "w", encoding="utf-8") as fh:
            for kind in sorted(failures):
                for msg in failures[kind]:
                    fh.write(f"{kind}\t{msg}\n")
        print(f"warning: {sum(len(v) for v in failures.values())} statistic runs failed; see {fpath}")
    print(f"wrote {cpath}")
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    if len(cfg.inputs) != 1:
        raise ConfigError("sweep needs exactly one input CSV")
    dataset = _prepare_dataset(cfg, cfg.inputs[0])
    null = cfg.null_spec()
    if cfg.lambda_file is not None:
        lam = np.loadtxt(cfg.lambda_file, delimiter=",", ndmin=2)
    else:
        contrast = matlin.contrast(null.contrast_kind, dataset.k)
        kind = stats._resolve_kind(stats.StatisticKind.MB, null)
        gene_sums = [stats.summarize_for_kind(dataset.replicates(g).values, kind, null, contrast)
                     for g in dataset.genes]
        nu_stage1, _ = ebayes.estimate_nu(gene_sums, nu0=cfg.nu)
        lam = ebayes.estimate_lambda(np.mean([g.s for g in gene_sums], axis=0),
                                     nu_stage1, gene_sums[0].dim)
    rows = evaluate.moderation_sweep(dataset, cfg.nu_grid, lam, null=null,
                                     baseline_nu=cfg.nu, top_m=cfg.top_m, p=cfg.p)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "sweep.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("nu,percent_moderation,rho_all,rho_top\n")
        for row in rows:
            fh.write(f"{_fmt(row.nu)},{_fmt(row.pct_moderation)},{_fmt(row.rho_all)},{_fmt(row.rho_top)}\n")
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing and dispatch.
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mbrank",
        description="Rank genes from replicated time-course data by moderated "
                    "multivariate evidence of temporal change.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file; flags override")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--p", type=float, default=None, help="prior proportion of nonnull genes")
        p.add_argument("--nu", type=float, default=None, help="user-set prior degrees of freedom")
        p.add_argument("--eta", type=float, default=None, help="user-set alternative-prior scale")
        p.add_argument("--lambda-file", default=None, help="CSV with the common scale matrix")
        p.add_argument("--seed", type=int, default=None)

    p_rank = sub.add_parser("rank", help="rank genes in one dataset")
    p_rank.add_argument("input")
    p_rank.add_argument("--design", choices=DESIGNS, default=None)
    p_rank.add_argument("--stat", default=None, help="comma-separated statistic kinds")
    p_rank.add_argument("--rank-by", choices=("value", "t2"), default=None)
    p_rank.add_argument("--contrast", choices=("helmert", "diff"), default=None)
    common(p_rank)

    p_sim = sub.add_parser("simulate", help="generate truth-labelled datasets")
    p_sim.add_argument("--num-datasets", type=int, default=None)
    p_sim.add_argument("--genes", type=int, default=None)
    p_sim.add_argument("--nonconstant", type=int, default=None)
    p_sim.add_argument("--reps", type=int, default=None)
    p_sim.add_argument("--timepoints", type=int, default=None)
    common(p_sim)

    p_est = sub.add_parser("estimate", help="estimate hyperparameters from one dataset")
    p_est.add_argument("input")
    p_est.add_argument("--design", choices=DESIGNS, default=None)
    p_est.add_argument("--contrast", choices=("helmert", "diff"), default=None)
    common(p_est)

    p_cmp = sub.add_parser("compare", help="run statistics over a simulated study")
    p_cmp.add_argument("input", help="directory produced by `mbrank simulate`")
    p_cmp.add_argument("--stat", default=None, help="comma-separated statistic kinds")
    p_cmp.add_argument("--x-min", type=int, default=None)
    p_cmp.add_argument("--x-max", type=int, default=None)
    common(p_cmp)

    p_swp = sub.add_parser("sweep", help="rank stability across moderation levels")
    p_swp.add_argument("input")
    p_swp.add_argument("--design", choices=DESIGNS, default=None)
    p_swp.add_argument("--contrast", choices=("helmert", "diff"), default=None)
    p_swp.add_argument("--nu-grid", default=None, help="comma-separated nu values")
    p_swp.add_argument("--top-m", type=int, default=None)
    common(p_swp)
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=args.command)
    cli_given = set()

    def take(name, attr=None):
        attr = attr or name
        if hasattr(args, name) and getattr(args, name) is not None:
            setattr(cfg, attr, getattr(args, name))
            cli_given.add(attr)

    if hasattr(args, "input"):
        cfg.inputs = [args.input]
    take("design")
    take("contrast")
    take("rank_by")
    take("out")
    take("p")
    take("nu")
    take("eta")
    take("lambda_file")
    take("seed")
    take("x_min")
    take("x_max")
    take("top_m")
    take("num_datasets")
    take("genes")
    take("nonconstant")
    take("reps")
    take("timepoints")
    if getattr(args, "stat", None):
        cfg.statistics = [s.strip() for s in args.stat.split(",") if s.strip()]
        cli_given.add("statistics")
    if getattr(args, "nu_grid", None):
        cfg.nu_grid = [float(v) for v in args.nu_grid.split(",")]
        cli_given.add("nu_grid")
    if getattr(args, "config", None):
        _apply_config_file(cfg, _parse_config_file(args.config), cli_given)
    for path in cfg.inputs:
        if not os.path.exists(path):
            raise ConfigError(f"input path {path!r} does not exist")
    for kind in cfg.statistics:
        try:
            stats.StatisticKind(kind)
        except ValueError:
            raise ConfigError(f"unknown statistic kind {kind!r}") from None
    if cfg.contrast not in ("helmert", "diff", "first_difference_style"):
        raise ConfigError(f"unknown contrast {cfg.contrast!r}")
    return cfg


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if cfg.out is None:
            cfg.out = "."
        handler = {
            "rank": cmd_rank,
            "simulate": cmd_simulate,
            "estimate": cmd_estimate,
            "compare": cmd_compare,
            "sweep": cmd_sweep,
        }[cfg.command]
        return handler(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ParseError, TruthMismatch, TooFewGenes, TooFewTopGenes) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NotPositiveDefinite, NoConvergence, ParameterOutOfRange) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except MbrankError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
