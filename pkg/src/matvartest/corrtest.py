"""Large-scale correlation testing with correlated samples.

Pearson-correlation z statistics sqrt(n) rho_hat_ij are miscalibrated
when the n samples are correlated: their null variance is B_n rather
than 1, and dividing by sqrt(B_n) restores the variance but not the
cross-pair dependence. The sandwich route fixes both: it estimates the
sample-side precision matrix Gamma = Psi^{-1} column by column from the
cross-sample covariance, then studentizes the de-correlated covariances

    sigma_hat_ij,Y = (1/n) (X_i - xbar_i 1)' Gamma (X_j - xbar_j 1),

whose correlations behave like iid-sample correlations again. Pair
discoveries are then controlled by a Benjamini-Hochberg threshold on
the absolute statistics.

Statistics matrices are p x p with a zero diagonal; serialized pair
indices are 1-based.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .covmodel import DataMatrix
from .errors import (
    DataError,
    DegenerateSandwichError,
    InfeasibleError,
    ParameterError,
    TuningError,
)
from .quadfunc import _as_values, col_sample_corr, row_sample_cov
from ._simplex import solve_column_path

__all__ = [
    "PrecisionEstimate",
    "MtcResult",
    "naive_stats",
    "corrected_stats",
    "clime_column",
    "clime_precision",
    "sandwich_corr",
    "sandwich_stats",
    "default_lambda_grid",
    "tune_lambda",
    "bh_threshold",
    "bh_cap",
    "evaluate",
]


@dataclass(frozen=True)
class PrecisionEstimate:
    """Column-wise l1 precision estimate after symmetrization.

    residuals[i] is the pre-symmetrization constraint residual
    ||R beta_i - e_i||_inf, which certifies feasibility within the
    solver tolerance.
    """

    gamma: np.ndarray = field(repr=False)
    lam: float
    residuals: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class MtcResult:
    """One multiple-testing pass: statistics, threshold, discoveries."""

    statistics: np.ndarray = field(repr=False)
    t_hat: float
    rejections: list[tuple[int, int]] = field(repr=False)
    method: str
    alpha: float
    lam: float | None = None
    fdp: float | None = None
    power: float | None = None

    def summary_dict(self) -> dict:
        return {
            "t_hat": self.t_hat,
            "alpha": self.alpha,
            "method": self.method,
            "lambda": self.lam,
            "rejections": len(self.rejections),
            "fdp": self.fdp,
            "power": self.power,
        }

    def write_csv(self, path_or_buf) -> None:
        """All pairs i<j with their statistic and rejection flag.

        Pair indices are 1-based; statistics carry 17 significant
        digits so values round-trip exactly.
        """
        close = False
        if hasattr(path_or_buf, "write"):
            fh = path_or_buf
        else:
            fh = open(path_or_buf, "w", encoding="utf-8", newline="")
            close = True
        try:
            wr = csv.writer(fh)
            wr.writerow(["i", "j", "statistic", "rejected"])
            rej = set(self.rejections)
            p = self.statistics.shape[0]
            for i in range(p - 1):
                row = self.statistics[i]
                for j in range(i + 1, p):
                    wr.writerow(
                        [i + 1, j + 1, format(row[j], ".17g"),
                         int((i, j) in rej)]
                    )
        finally:
            if close:
                fh.close()

    def write_json(self, path_or_buf) -> None:
        payload = {"schema": "v1", **self.summary_dict()}
        if hasattr(path_or_buf, "write"):
            json.dump(payload, path_or_buf, indent=2)
        else:
            with open(path_or_buf, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, indent=2)


def _zero_diag(mat: np.ndarray) -> np.ndarray:
    np.fill_diagonal(mat, 0.0)
    return mat


def naive_stats(x) -> np.ndarray:
    """sqrt(n) times the sample correlations, valid for iid samples."""
    arr = _as_values(x)
    n = arr.shape[1]
    _, corr = col_sample_corr(arr)
    return _zero_diag(math.sqrt(n) * corr)


def corrected_stats(x, bn: float) -> np.ndarray:
    """Variance-corrected statistics sqrt(n) rho_hat / sqrt(B_n)."""
    if bn <= 0:
        raise ParameterError(f"bn must be positive, got {bn}")
    return naive_stats(x) / math.sqrt(bn)


def clime_column(R: np.ndarray, i: int, lam: float) -> np.ndarray:
    """One precision column: min ||beta||_1 s.t. ||R beta - e_i||_inf <= lam.

    Raises InfeasibleError when the constraint set is empty (lam below
    the attainable residual for this column).
    """
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ParameterError("R must be a square matrix")
    if not (0 <= i < R.shape[0]):
        raise ParameterError(f"column index {i} out of range for m={R.shape[0]}")
    if lam < 0:
        raise ParameterError(f"lam must be nonnegative, got {lam}")
    beta = solve_column_path(R, i, np.array([float(lam)]))[0]
    if beta is None:
        raise InfeasibleError(i, lam)
    return beta


def _symmetrize_min(g1: np.ndarray) -> np.ndarray:
    # keep, of the (i,j) and (j,i) candidates, the one smaller in magnitude
    gt = g1.T
    return np.where(np.abs(g1) <= np.abs(gt), g1, gt)


def _residuals(R: np.ndarray, cols: list[np.ndarray]) -> np.ndarray:
    m = R.shape[0]
    res = np.empty(m)
    for i, beta in enumerate(cols):
        r = R @ beta
        r[i] -= 1.0
        res[i] = np.abs(r).max()
    return res


def clime_precision(x, lam: float) -> PrecisionEstimate:
    """Column-wise precision estimate of the sample-side covariance.

    Builds R from the cross-sample covariances psi_hat, solves each
    column program at level lam, and symmetrizes by keeping the entry
    of smaller magnitude.
    """
    arr = _as_values(x)
    if lam < 0:
        raise ParameterError(f"lam must be nonnegative, got {lam}")
    R = row_sample_cov(arr).psi
    n = R.shape[0]
    cols = []
    for i in range(n):
        beta = solve_column_path(R, i, np.array([float(lam)]))[0]
        if beta is None:
            raise InfeasibleError(i, lam)
        cols.append(beta)
    g1 = np.column_stack(cols)
    return PrecisionEstimate(
        gamma=_symmetrize_min(g1), lam=float(lam), residuals=_residuals(R, cols)
    )


def sandwich_corr(x, gamma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """De-correlated covariances and correlations.

    sigma_Y = Xc Gamma Xc' / n computed as matrix products (never
    pairwise loops). A nonpositive de-correlated variance aborts with
    the offending variable index; no clamping is applied because such a
    Gamma cannot studentize anything.
    """
    arr = _as_values(x)
    gamma = np.asarray(gamma, dtype=np.float64)
    n = arr.shape[1]
    if gamma.shape != (n, n):
        raise ParameterError(
            f"gamma must be {n} x {n} to match the sample count, got {gamma.shape}"
        )
    xc = arr - arr.mean(axis=1, keepdims=True)
    sig_y = (xc @ gamma) @ xc.T / n
    dvar = np.diag(sig_y)
    bad = np.flatnonzero(dvar <= 0.0)
    if bad.size:
        raise DegenerateSandwichError(int(bad[0]), float(dvar[bad[0]]))
    d = np.sqrt(dvar)
    rho_y = sig_y / np.outer(d, d)
    return sig_y, rho_y


def sandwich_stats(x, gamma: np.ndarray) -> np.ndarray:
    """sqrt(n) times the de-correlated correlations, zero diagonal."""
    arr = _as_values(x)
    _, rho_y = sandwich_corr(arr, gamma)
    return _zero_diag(math.sqrt(arr.shape[1]) * rho_y)


def default_lambda_grid(n: int, p: int) -> np.ndarray:
    """20 log-spaced levels on [0.01, 1.0] times (1/n + sqrt(log n / p)).

    The bracket follows the constraint level's known rate; the constant
    is left to the data-driven tuning.
    """
    if n < 2 or p < 1:
        raise ParameterError("need n >= 2 and p >= 1")
    scale = 1.0 / n + math.sqrt(math.log(n) / p)
    return np.geomspace(0.01, 1.0, 20) * scale


def _tail_counts(stats: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    # ordered-pair counts #{i != j : |T_ij| >= c}; statistics are
    # symmetric so this is twice the i<j count
    p = stats.shape[0]
    iu = np.triu_indices(p, k=1)
    a = np.abs(stats[iu])
    return 2 * np.array([np.count_nonzero(a >= c) for c in thresholds])


def _calibration_objective(stats: np.ndarray) -> float:
    p = stats.shape[0]
    ks = np.arange(3, 10)
    thresholds = ndtri(1.0 - ks / 20.0)
    counts = _tail_counts(stats, thresholds)
    frac = counts / (ks * (p * p - p) / 10.0)
    return float(np.sum((frac - 1.0) ** 2))


def _tune_details(x, grid=None):
    """Shared tuning engine: returns (lam_hat, gamma_hat, stats_hat,
    per-lambda diagnostics)."""
    arr = _as_values(x)
    p, n = arr.shape
    if grid is None:
        grid = default_lambda_grid(n, p)
    grid = np.sort(np.asarray(grid, dtype=np.float64))
    if grid.size == 0:
        raise ParameterError("tuning grid is empty")
    if np.any(grid < 0):
        raise ParameterError("tuning grid values must be nonnegative")
    if np.unique(grid).size != grid.size:
        raise ParameterError("tuning grid values must be distinct")

    R = row_sample_cov(arr).psi
    desc = grid[::-1].copy()
    paths = [solve_column_path(R, i, desc) for i in range(n)]

    xc = arr - arr.mean(axis=1, keepdims=True)
    sqrt_n = math.sqrt(n)
    best = None
    diagnostics = []
    for k_desc, lam in enumerate(desc):
        cols = [paths[i][k_desc] for i in range(n)]
        if any(c is None for c in cols):
            diagnostics.append({"lambda": float(lam), "feasible": False,
                                "objective": None})
            continue
        gamma = _symmetrize_min(np.column_stack(cols))
        try:
            sig_y = (xc @ gamma) @ xc.T / n
            dvar = np.diag(sig_y)
            if np.any(dvar <= 0.0):
                raise DegenerateSandwichError(
                    int(np.argmax(dvar <= 0.0)), float(dvar.min())
                )
            d = np.sqrt(dvar)
            stats = sig_y / np.outer(d, d)
            stats *= sqrt_n
        except DegenerateSandwichError:
            diagnostics.append({"lambda": float(lam), "feasible": False,
                                "objective": None})
            continue
        obj = _calibration_objective(stats)
        diagnostics.append({"lambda": float(lam), "feasible": True,
                            "objective": obj})
        # the grid is traversed descending, so <= resolves objective
        # ties to the smallest lambda
        if best is None or obj <= best[0]:
            best = (obj, float(lam), gamma, _zero_diag(stats.copy()))
    if best is None:
        raise TuningError("no grid value produced a usable precision estimate")
    diagnostics.sort(key=lambda r: r["lambda"])
    return best[1], best[2], best[3], diagnostics


def tune_lambda(x, grid=None) -> float:
    """Data-driven level for the column programs.

    For each grid value, computes the de-correlated statistics and
    compares their tail counts at Phi^{-1}(1 - k/20), k = 3..9, against
    the null expectation; the objective is the summed squared relative
    miscalibration and ties resolve to the smallest level. Grid values
    whose programs are infeasible (or whose sandwich degenerates) are
    skipped; if none survive, TuningError.
    """
    lam_hat, _, _, _ = _tune_details(x, grid)
    return lam_hat


def bh_cap(p: int) -> float:
    """Upper end sqrt(4 log p - 2 log log p) of the threshold search."""
    if p < 2:
        raise ParameterError("p must be at least 2")
    val = 4.0 * math.log(p) - 2.0 * math.log(math.log(p))
    if val <= 0:
        raise ParameterError(f"p={p} is too small for the threshold cap")
    return math.sqrt(val)


def bh_threshold(stats: np.ndarray, alpha: float) -> tuple[float, list[tuple[int, int]]]:
    """Benjamini-Hochberg threshold over all pairs i < j.

    Finds the exact infimum of t in [0, cap] with
    (1 - Phi(t)) (p^2 - p) / max(R(t), 1) <= alpha, where R(t) counts
    pairs with |T_ij| >= t. R is constant between consecutive order
    statistics, so the infimum is the analytic crossing point inside
    one of those intervals; if no t qualifies the fallback threshold
    sqrt(4 log p) is used. Returns (t_hat, rejected pairs).
    """
    stats = np.asarray(stats, dtype=np.float64)
    p = stats.shape[0]
    if stats.ndim != 2 or stats.shape != (p, p):
        raise ParameterError("stats must be a square matrix")
    if p < 2:
        raise ParameterError("need at least 2 variables")
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"alpha must be in (0, 1), got {alpha}")

    cap = bh_cap(p)
    iu = np.triu_indices(p, k=1)
    a = np.abs(stats[iu])
    npairs = p * (p - 1)  # ordered count used by the criterion

    # distinct positive order statistics u_1 < ... < u_m; on each
    # interval (u_{k-1}, u_k] the count R(t) is the constant
    # c_k = #{|T| >= u_k}, and beyond u_m it is 0
    u = np.unique(a[a > 0.0])
    sorted_a = np.sort(a)
    c = a.size - np.searchsorted(sorted_a, u, side="left")

    lo = np.concatenate([[0.0], u])
    hi = np.concatenate([u, [np.inf]])
    counts = np.concatenate([c, [0]])

    # per-interval crossing point of (1 - Phi(t)) npairs / max(R, 1)
    # with alpha; crossings increase across intervals, so the first one
    # landing inside its interval is the global infimum
    targets = 1.0 - alpha * np.maximum(counts, 1) / npairs
    t_star = ndtri(targets)
    valid = (lo < cap) & (t_star <= np.minimum(hi, cap))
    idx = np.flatnonzero(valid)
    if idx.size:
        k = int(idx[0])
        t_hat = float(max(t_star[k], lo[k]))
    else:
        t_hat = math.sqrt(4.0 * math.log(p))

    keep = a >= t_hat
    rejections = [(int(i), int(j)) for i, j in zip(iu[0][keep], iu[1][keep])]
    return float(t_hat), rejections


def evaluate(
    rejections: list[tuple[int, int]],
    null_pairs,
    p: int,
) -> tuple[float, float]:
    """False discovery proportion and power of a rejection set.

    null_pairs lists the truly-null pairs, either as a set of 0-based
    (i, j) tuples with i < j or as a (p, p) boolean matrix whose upper
    triangle marks nulls; all other pairs are alternatives.
    FDP = |rej among nulls| / max(|rej|, 1) and
    power = |rej among alternatives| / max(#alternatives, 1).
    """
    if p < 2:
        raise ParameterError("p must be at least 2")
    total = p * (p - 1) // 2
    if isinstance(null_pairs, np.ndarray):
        if null_pairs.shape != (p, p):
            raise ParameterError("null mask must be p x p")
        iu = np.triu_indices(p, k=1)
        mask = null_pairs[iu].astype(bool)
        h0 = int(mask.sum())
        is_null = null_pairs.astype(bool)
    else:
        h0 = len(null_pairs)
        for (i, j) in null_pairs:
            if not (0 <= i < j < p):
                raise ParameterError(f"null pair ({i}, {j}) is not an i<j pair")
        is_null = None
    if h0 > total:
        raise ParameterError("null set is larger than the number of pairs")

    rej = set()
    for (i, j) in rejections:
        if not (0 <= i < j < p):
            raise ParameterError(f"rejection ({i}, {j}) is not an i<j pair")
        rej.add((i, j))
    if is_null is None:
        false_disc = len(rej & null_pairs)
    else:
        false_disc = sum(1 for (i, j) in rej if is_null[i, j])
    h1 = total - h0
    fdp = false_disc / max(len(rej), 1)
    power = (len(rej) - false_disc) / max(h1, 1)
    return fdp, power
