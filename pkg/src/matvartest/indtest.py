"""Test of sample independence for high-dimensional data.

The null hypothesis is Psi = I: the n samples (columns) are mutually
independent. The statistic scans all sample pairs for covariance after
a bias correction, studentizes by the estimated variable-covariance
functional A_p, and compares against a type-I extreme value limit:

    T = (p / A_p-hat) max_{i<j} T_ij^2 / (psi_hat_ii psi_hat_jj),
    P(T - 4 log n + log log n <= t) -> exp(-(8 pi)^{-1/2} e^{-t/2}).

Critical values come either from that limit or from a Monte Carlo null
calibration with a counter-based seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .covmodel import CovMatrix, DataMatrix, child_seed, normal_draws
from .errors import DataError, ParameterError
from .quadfunc import DELTA_DEFAULT, estimate_Bn, row_sample_cov, threshold_cov

__all__ = [
    "IndTestResult",
    "bias_corrected_T",
    "test_statistic",
    "evd_cdf",
    "evd_quantile",
    "mc_critical",
    "run_test",
    "dn_psi",
    "power_boundary",
]

_MC_STREAM_BASE = 1 << 48


@dataclass(frozen=True)
class IndTestResult:
    """Outcome of one independence test.

    argmax_i and argmax_j are 1-based sample indices of the pair
    attaining the maximum, ties broken toward the lexicographically
    smallest pair.
    """

    statistic: float
    centered: float
    critical_value: float
    alpha: float
    reject: bool
    ap_hat: float
    bn_hat: float
    argmax_i: int
    argmax_j: int
    mode: str

    def to_dict(self) -> dict:
        return asdict(self)


def bias_corrected_T(x) -> np.ndarray:
    """Pairwise cross-sample covariances with the mean-centering bias
    removed: T_ij = psi_hat_ij + (1/(np)) sum_k sigma_hat_kk.

    Returns the full n x n matrix; the diagonal is defined but not used
    by the test.
    """
    if isinstance(x, DataMatrix):
        arr = x.values
    else:
        arr = np.asarray(x, dtype=np.float64)
    rc = row_sample_cov(arr)
    n = rc.psi.shape[0]
    return rc.psi + rc.mean_var / n


def _statistic_parts(arr: np.ndarray, delta: float):
    p, n = arr.shape
    if n < 3:
        raise DataError(f"the test needs at least 3 samples, got {n}")
    rc = row_sample_cov(arr)
    dpsi = np.diag(rc.psi)
    if np.any(dpsi <= 0):
        bad = int(np.argmax(dpsi <= 0))
        raise DataError(
            f"sample {bad + 1} has zero cross-variable variance; "
            "the statistic is undefined"
        )
    t_mat = rc.psi + rc.mean_var / n
    ratio = (t_mat * t_mat) / np.outer(dpsi, dpsi)
    iu = np.triu_indices(n, k=1)
    vals = ratio[iu]
    k = int(np.argmax(vals))  # argmax returns the first maximum, which
    # is the lexicographically smallest (i, j) in row-major upper order
    i, j = int(iu[0][k]), int(iu[1][k])
    _, est = threshold_cov(arr, delta=delta)
    stat = p / est.ap_hat * float(vals[k])
    return stat, (i, j), est


def test_statistic(x, delta: float = DELTA_DEFAULT) -> float:
    """The studentized maximal pair statistic."""
    if isinstance(x, DataMatrix):
        arr = x.values
    else:
        arr = np.asarray(x, dtype=np.float64)
    stat, _, _ = _statistic_parts(arr, delta)
    return stat


def evd_cdf(t: float) -> float:
    """Limiting null CDF of the centered statistic."""
    return math.exp(-math.exp(-t / 2.0) / math.sqrt(8.0 * math.pi))


def evd_quantile(alpha: float) -> float:
    """Upper-alpha quantile q_alpha of the limiting distribution:
    q_alpha = -log(8 pi) - 2 log log (1 - alpha)^{-1}."""
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"alpha must be in (0, 1), got {alpha}")
    return -math.log(8.0 * math.pi) - 2.0 * math.log(-math.log(1.0 - alpha))


def _centering(n: int) -> float:
    return 4.0 * math.log(n) - math.log(math.log(n))


def mc_critical(
    n: int,
    p: int,
    reps: int,
    alpha: float,
    seed: int,
    delta: float = DELTA_DEFAULT,
) -> float:
    """Monte Carlo critical value under the global null.

    Simulates `reps` independent p x n standard normal matrices,
    computes the statistic for each, and returns the ceil((1-alpha) M)
    ascending order statistic; alpha = 0 gives the maximum. The draw
    for replication r comes from the stream child_seed(seed, r), so the
    result is reproducible and independent of any worker scheduling.
    """
    if n < 3:
        raise ParameterError(f"n must be at least 3, got {n}")
    if p < 2:
        raise ParameterError(f"p must be at least 2, got {p}")
    if reps < 1:
        raise ParameterError("reps must be positive")
    if not (0.0 <= alpha < 1.0):
        raise ParameterError(f"alpha must be in [0, 1), got {alpha}")
    stats = np.empty(reps)
    for r in range(reps):
        z = normal_draws(child_seed(seed, _MC_STREAM_BASE + r), (p, n))
        stats[r] = _statistic_parts(z, delta)[0]
    stats.sort()
    k = math.ceil((1.0 - alpha) * reps - 1e-9)
    k = min(max(k, 1), reps)
    return float(stats[k - 1])


def run_test(
    x,
    alpha: float = 0.05,
    delta: float = DELTA_DEFAULT,
    mode: str = "limiting",
    mc_reps: int = 2000,
    seed: int = 0,
    critical_value: float | None = None,
) -> IndTestResult:
    """Run the independence test at level alpha.

    mode "limiting" compares against 4 log n - log log n + q_alpha from
    the extreme value limit; mode "monte-carlo" calibrates the critical
    value by simulating mc_reps null statistics at the same (n, p) with
    the given seed. A precomputed critical_value (matching the data's
    dimensions) may be supplied to amortize calibration across calls.
    """
    if isinstance(x, DataMatrix):
        arr = x.values
    else:
        arr = np.asarray(x, dtype=np.float64)
        DataMatrix(arr)  # enforce the strict shape and finiteness rules
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"alpha must be in (0, 1), got {alpha}")
    if mode not in ("limiting", "monte-carlo"):
        raise ParameterError(f"mode must be 'limiting' or 'monte-carlo', got {mode!r}")

    p, n = arr.shape
    stat, (i, j), est = _statistic_parts(arr, delta)
    if critical_value is not None:
        crit = float(critical_value)
    elif mode == "limiting":
        crit = _centering(n) + evd_quantile(alpha)
    else:
        crit = mc_critical(n, p, mc_reps, alpha, seed, delta=delta)
    return IndTestResult(
        statistic=stat,
        centered=stat - _centering(n),
        critical_value=crit,
        alpha=alpha,
        reject=bool(stat >= crit),
        ap_hat=est.ap_hat,
        bn_hat=est.bn_hat,
        argmax_i=i + 1,
        argmax_j=j + 1,
        mode=mode,
    )


def dn_psi(psi: CovMatrix | np.ndarray) -> float:
    """Maximal centered dependence d_n = max_{i<j} |d_ij| where
    d_ij = psi_ij - rowsum_i/n - rowsum_j/n - offsum/(n^2 (n-1)),
    rowsum_i = sum_{k != i} psi_ik and offsum = sum over all ordered
    off-diagonal pairs. This is the quantity the test actually detects
    once sample means are removed.
    """
    arr = psi.values if isinstance(psi, CovMatrix) else np.asarray(psi, dtype=np.float64)
    n = arr.shape[0]
    if n < 2:
        raise ParameterError("psi must be at least 2 x 2")
    rowsum = arr.sum(axis=1) - np.diag(arr)
    offsum = float(arr.sum() - np.trace(arr))
    d = arr - rowsum[:, None] / n - rowsum[None, :] / n - offsum / (n * n * (n - 1))
    iu = np.triu_indices(n, k=1)
    return float(np.max(np.abs(d[iu])))


def power_boundary(a_p: float, n: int, p: int, delta_pow: float = 2.0) -> float:
    """Detection boundary delta_pow * sqrt(A_p log(n) / p); dependence
    with d_n beyond it is asymptotically always detected."""
    if a_p <= 0:
        raise ParameterError("a_p must be positive")
    if n < 2 or p < 1:
        raise ParameterError("need n >= 2 and p >= 1")
    return delta_pow * math.sqrt(a_p * math.log(n) / p)
