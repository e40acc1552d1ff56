"""Chain quality metrics: autocorrelation functions, RMSE against a
reference, ancestor-update rates, two-sample agreement tests, batch-means
standard errors and histogram summaries.  All summaries are deterministic
functions of the chain record."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats


class ZeroVariance(Exception):
    """The series has no variance; autocorrelation is undefined."""


def acf(series, max_lag: int) -> np.ndarray:
    """Empirical autocorrelation up to ``max_lag``.

    Uses the biased (divide-by-length) autocovariance estimator, which keeps
    the sequence positive semidefinite; entry 0 is exactly 1.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("acf expects a one-dimensional series")
    if x.size <= max_lag:
        raise ValueError("series shorter than max_lag")
    return acf_matrix(x[:, None], max_lag)[0]


def acf_matrix(series: np.ndarray, max_lag: int) -> np.ndarray:
    """Column-wise ACF of a (length, variables) matrix, vectorised over
    variables; returns (variables, max_lag + 1)."""
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    if n <= max_lag:
        raise ValueError("series shorter than max_lag")
    centered = x - x.mean(axis=0)
    c0 = np.einsum("ij,ij->j", centered, centered) / n
    if np.any(c0 <= 0):
        raise ZeroVariance("constant series")
    out = np.empty((x.shape[1], max_lag + 1))
    out[:, 0] = 1.0
    for k in range(1, max_lag + 1):
        ck = np.einsum("ij,ij->j", centered[:-k], centered[k:]) / n
        out[:, k] = ck / c0
    return out


def posterior_rmse(chain_means, reference_means) -> float:
    """Root mean squared error between two per-time mean arrays, averaged over
    time steps and components."""
    a = np.asarray(chain_means, dtype=float)
    b = np.asarray(reference_means, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def update_rate(change_log) -> np.ndarray:
    """Fraction of sweeps in which the reference ancestry changed, per time
    step; ``change_log`` is (sweeps, steps) boolean."""
    log = np.asarray(change_log)
    if log.size == 0:
        raise ValueError("empty sweep log")
    return log.mean(axis=0)


@dataclass
class KsResult:
    statistic: float
    pvalue: float


def ks_two_sample(samples_a, samples_b) -> KsResult:
    """Two-sample Kolmogorov-Smirnov test with asymptotic p-value."""
    a = np.asarray(samples_a, dtype=float)
    b = np.asarray(samples_b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    res = stats.ks_2samp(a, b, method="asymp")
    return KsResult(statistic=float(res.statistic), pvalue=float(res.pvalue))


def batch_means_se(series, n_batches: int = 20) -> float:
    """Batch-means standard error of the series mean.

    The series is truncated to a multiple of ``n_batches``; the SE is the
    standard deviation of the batch means over sqrt(n_batches).
    """
    if n_batches < 10:
        raise ValueError("use at least 10 batches")
    x = np.asarray(series, dtype=float)
    if x.size < 2 * n_batches:
        raise ValueError("series too short for the requested batches")
    size = x.size // n_batches
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))


def histogram(samples, bins="fd"):
    """Histogram counts and edges; Freedman-Diaconis bins by default, or pass
    explicit edges to reproduce a fixed figure layout."""
    counts, edges = np.histogram(np.asarray(samples, dtype=float), bins=bins)
    return counts, edges


@dataclass
class ChainSummary:
    """Per-variable diagnostics of one chain: ACF rows, batch-means standard
    errors, per-step ancestor-update rates and a histogram per variable."""

    acf: np.ndarray
    batch_se: np.ndarray
    update_rate: np.ndarray
    hist_counts: list
    hist_edges: list


def summarize_chain(samples: np.ndarray, change_log, max_lag: int = 50, n_batches: int = 20) -> ChainSummary:
    """Summarise a (iterations, variables) sample matrix plus the sweep change
    log into a :class:`ChainSummary`."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    rates = update_rate(change_log) if change_log is not None else np.empty(0)
    ses = np.array([batch_means_se(x[:, j], n_batches) for j in range(x.shape[1])])
    counts, edges = [], []
    for j in range(x.shape[1]):
        c, e = histogram(x[:, j])
        counts.append(c)
        edges.append(e)
    return ChainSummary(
        acf=acf_matrix(x, max_lag),
        batch_se=ses,
        update_rate=np.asarray(rates, dtype=float),
        hist_counts=counts,
        hist_edges=edges,
    )


def write_metric_csv(path, header: list[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def save_summary_csv(summary: ChainSummary, outdir) -> None:
    """One CSV per metric, columns (index/lag, value...), for external
    plotting."""
    outdir = Path(outdir)
    lags = np.arange(summary.acf.shape[1])
    write_metric_csv(
        outdir / "acf.csv",
        ["lag", "median", "q05", "q95"],
        zip(
            lags,
            np.median(summary.acf, axis=0),
            np.quantile(summary.acf, 0.05, axis=0),
            np.quantile(summary.acf, 0.95, axis=0),
        ),
    )
    write_metric_csv(
        outdir / "batch_se.csv",
        ["variable", "se"],
        enumerate(summary.batch_se),
    )
    if summary.update_rate.size:
        write_metric_csv(
            outdir / "update_rate.csv",
            ["t", "rate"],
            enumerate(summary.update_rate, start=1),
        )
    rows = []
    for j, (counts, edges) in enumerate(zip(summary.hist_counts, summary.hist_edges)):
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            rows.append((j, lo, hi, c))
    write_metric_csv(outdir / "histograms.csv", ["variable", "lo", "hi", "count"], rows)
