"""Covariance models and matrix-variate normal sampling.

Data matrices are p x n: rows are variables, columns are samples. The
sampling model is X = mu 1' + Sigma^{1/2} Z Psi^{1/2} with Z a p x n
matrix of independent standard normals, so that columns share the
variable covariance Sigma (p x p) while rows share the sample
covariance Psi (n x n). Psi is expected to have unit diagonal; the
sampler does not enforce that on user-supplied matrices.

Randomness is counter-based: a Philox stream keyed by a mixed
(seed, stream) pair, with normal deviates produced by the inverse CDF
applied to 53-bit uniforms. Identical (seed, shape) inputs therefore
give bit-identical draws regardless of how many worker processes are
running, and replication streams never overlap.

Conventions
-----------
- Generated covariance matrices are exactly symmetric with positive
  diagonals.
- CSV data files hold one variable per row and one sample per column,
  comma separated, '.' decimal point, with an optional single header
  row that is auto-detected on read.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .errors import DataError, NotPSDError, ParameterError

__all__ = [
    "CovMatrix",
    "DataMatrix",
    "gen_autocorr",
    "gen_banded",
    "gen_block",
    "gen_equicorr",
    "gen_identity",
    "gen_sparse_pair",
    "sym_sqrt",
    "sample_matnorm",
    "child_seed",
    "normal_draws",
    "read_data_csv",
    "write_data_csv",
]

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    # splitmix64 finalizer; bijective on 64-bit words
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def child_seed(seed: int, stream: int) -> int:
    """Derive an independent 64-bit stream key from a master seed.

    Used to give each replication (or other named stream) its own
    Philox key so parallel workers draw from disjoint streams.
    """
    if stream < 0:
        raise ParameterError("stream index must be nonnegative")
    return _mix64(((seed & _MASK64) * _GOLDEN + stream + 1) & _MASK64)


def normal_draws(seed: int, shape: tuple[int, ...]) -> np.ndarray:
    """Standard normal array from the counter-based stream `seed`.

    Entries are filled in row-major order: entry k of the flattened
    array consumes counter position k, so a draw of a given shape is a
    pure function of (seed, shape). Each uniform is (j + 0.5) / 2^53
    with j a 53-bit Philox integer, mapped through the inverse normal
    CDF; the uniform can never hit 0 or 1.
    """
    gen = np.random.Generator(np.random.Philox(key=seed & _MASK64))
    j = gen.integers(0, 1 << 53, size=shape, dtype=np.uint64)
    u = (j.astype(np.float64) + 0.5) * (2.0 ** -53)
    return ndtri(u)


class CovMatrix:
    """Symmetric covariance matrix with a lazily cached spectrum.

    The wrapped array is exactly symmetric (bitwise), has a strictly
    positive diagonal, and is marked read-only. The eigendecomposition
    and the symmetric square root are computed on first use and cached.
    """

    def __init__(self, values: np.ndarray):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DataError("covariance matrix must be square")
        if arr.shape[0] < 1:
            raise DataError("covariance matrix must be at least 1 x 1")
        if not np.all(np.isfinite(arr)):
            raise DataError("covariance matrix contains non-finite entries")
        if not np.array_equal(arr, arr.T):
            raise DataError("covariance matrix must be exactly symmetric")
        if np.any(np.diag(arr) <= 0):
            raise DataError("covariance diagonal entries must be positive")
        arr = arr.copy()
        arr.flags.writeable = False
        self.values = arr
        self._eig: tuple[np.ndarray, np.ndarray] | None = None
        self._sqrt: np.ndarray | None = None
        self._identity: bool | None = None

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def spectrum(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues (ascending) and orthonormal eigenvectors."""
        if self._eig is None:
            w, v = np.linalg.eigh(self.values)
            self._eig = (w, v)
        return self._eig

    def sqrt(self) -> np.ndarray:
        """Symmetric square root, cached."""
        if self._sqrt is None:
            self._sqrt = sym_sqrt(self.values, _spectrum=self.spectrum())
        return self._sqrt

    def is_identity(self) -> bool:
        if self._identity is None:
            self._identity = bool(
                np.array_equal(self.values, np.eye(self.dim))
            )
        return self._identity

    def fro2(self) -> float:
        """Squared Frobenius norm."""
        return float(np.sum(self.values * self.values))

    def trace(self) -> float:
        return float(np.trace(self.values))

    def __repr__(self) -> str:  # pragma: no cover
        return f"CovMatrix(dim={self.dim})"


@dataclass
class DataMatrix:
    """p x n data array: rows are variables, columns are samples.

    Requires p >= 2, n >= 3 and all entries finite. Estimators in the
    sibling modules also accept plain 2-D arrays with weaker minimums
    where their formulas allow it.
    """

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if arr.ndim != 2:
            raise DataError("data matrix must be 2-dimensional")
        p, n = arr.shape
        if p < 2:
            raise DataError(f"need at least 2 variables (rows), got {p}")
        if n < 3:
            raise DataError(f"need at least 3 samples (columns), got {n}")
        if not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise DataError(
                f"non-finite entry at row {bad[0] + 1}, column {bad[1] + 1}"
            )
        self.values = arr

    @property
    def p(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def __repr__(self) -> str:  # pragma: no cover
        return f"DataMatrix(p={self.p}, n={self.n})"


def gen_identity(dim: int) -> CovMatrix:
    """Identity covariance of the given dimension."""
    if dim < 1:
        raise ParameterError("dim must be positive")
    return CovMatrix(np.eye(dim))


def gen_autocorr(dim: int, rho: float) -> CovMatrix:
    """First-order autocorrelation matrix with entries rho^|i-j|.

    Parameters
    ----------
    dim : int
        Matrix dimension, at least 1.
    rho : float
        Decay parameter, must satisfy 0 <= rho < 1.

    Returns
    -------
    CovMatrix
        Positive definite with unit diagonal.
    """
    if dim < 1:
        raise ParameterError("dim must be positive")
    if not (0.0 <= rho < 1.0):
        raise ParameterError(f"rho must be in [0, 1), got {rho}")
    idx = np.arange(dim)
    return CovMatrix(rho ** np.abs(idx[:, None] - idx[None, :]))


def gen_banded(dim: int) -> CovMatrix:
    """Two-band covariance: 1 on the diagonal, 0.6 on the first
    off-diagonal, 0.3 on the second, zero beyond.

    Parameters
    ----------
    dim : int
        Matrix dimension, at least 3 so both bands are present.
    """
    if dim < 3:
        raise ParameterError(f"dim must be at least 3, got {dim}")
    idx = np.arange(dim)
    dist = np.abs(idx[:, None] - idx[None, :])
    out = np.zeros((dim, dim))
    out[dist == 0] = 1.0
    out[dist == 1] = 0.6
    out[dist == 2] = 0.3
    return CovMatrix(out)


def gen_block(dim: int, block: int = 10, offdiag: float = 0.5) -> CovMatrix:
    """Block-diagonal covariance with equicorrelated blocks.

    Each full block is (1 - offdiag) I + offdiag 11'. If block does not
    divide dim, the trailing partial positions are filled with an
    identity block.

    Parameters
    ----------
    dim : int
        Matrix dimension, at least 1.
    block : int
        Block size, at least 1.
    offdiag : float
        Within-block correlation; must lie in (-1/(block-1), 1) so each
        block is positive definite.
    """
    if dim < 1:
        raise ParameterError("dim must be positive")
    if block < 1:
        raise ParameterError("block size must be positive")
    if block > 1:
        lo = -1.0 / (block - 1)
        if not (lo < offdiag < 1.0):
            raise ParameterError(
                f"offdiag must be in ({lo:.6g}, 1) for block size {block}, "
                f"got {offdiag}"
            )
    out = np.eye(dim)
    nfull = dim // block
    for b in range(nfull):
        s = b * block
        blk = np.full((block, block), offdiag)
        np.fill_diagonal(blk, 1.0)
        out[s:s + block, s:s + block] = blk
    return CovMatrix(out)


def gen_equicorr(dim: int, rho: float) -> CovMatrix:
    """Equicorrelation matrix rho 11' + (1 - rho) I.

    rho must lie in (-1/(dim-1), 1) so the matrix is positive definite;
    its spectrum is 1 + (dim-1) rho once and 1 - rho with multiplicity
    dim - 1.
    """
    if dim < 1:
        raise ParameterError("dim must be positive")
    if dim > 1:
        lo = -1.0 / (dim - 1)
        if not (lo < rho < 1.0):
            raise ParameterError(
                f"rho must be in ({lo:.6g}, 1) for dim {dim}, got {rho}"
            )
    out = np.full((dim, dim), rho)
    np.fill_diagonal(out, 1.0)
    return CovMatrix(out)


def gen_sparse_pair(n: int, p: int, kappa: float) -> CovMatrix:
    """Identity except for one correlated sample pair.

    The (1, 2) entry is set to kappa * sqrt(log(n) / p), the smallest
    order of dependence the test statistic can detect; kappa scales the
    pair toward or away from the detection boundary.

    Parameters
    ----------
    n : int
        Matrix dimension (number of samples), at least 2.
    p : int
        Number of variables controlling the entry scale, at least 1.
    kappa : float
        Nonnegative multiplier; the resulting entry must stay below 1
        in magnitude for positive definiteness.
    """
    if n < 2:
        raise ParameterError(f"n must be at least 2, got {n}")
    if p < 1:
        raise ParameterError("p must be positive")
    if kappa < 0:
        raise ParameterError(f"kappa must be nonnegative, got {kappa}")
    level = kappa * np.sqrt(np.log(n) / p)
    if level >= 1.0:
        raise ParameterError(
            f"kappa {kappa} yields off-diagonal {level:.6g} >= 1 "
            f"at (n={n}, p={p}); matrix would not be positive definite"
        )
    out = np.eye(n)
    out[0, 1] = out[1, 0] = level
    return CovMatrix(out)


def sym_sqrt(
    mat: np.ndarray | CovMatrix,
    _spectrum: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """Symmetric square root via eigendecomposition.

    Eigenvalues in [-1e-8 * max|entry|, 0) are clamped to zero; anything
    below that tolerance raises NotPSDError.
    """
    if isinstance(mat, CovMatrix):
        return mat.sqrt()
    arr = np.asarray(mat, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DataError("matrix must be square")
    if _spectrum is None:
        w, v = np.linalg.eigh(arr)
    else:
        w, v = _spectrum
    tol = 1e-8 * float(np.max(np.abs(arr))) if arr.size else 0.0
    wmin = float(w[0]) if w.size else 0.0
    if wmin < -tol:
        raise NotPSDError(wmin, tol)
    w = np.where(w < 0.0, 0.0, w)
    return (v * np.sqrt(w)) @ v.T


def sample_matnorm(
    mu: float | np.ndarray,
    sigma: CovMatrix | np.ndarray,
    psi: CovMatrix | np.ndarray,
    seed: int,
) -> DataMatrix:
    """Draw X = mu 1' + Sigma^{1/2} Z Psi^{1/2} from the stream `seed`.

    Parameters
    ----------
    mu : float or (p,) array
        Mean per variable, constant across samples.
    sigma : CovMatrix or array
        Variable covariance (p x p).
    psi : CovMatrix or array
        Sample covariance (n x n); unit diagonal is assumed, not
        enforced.
    seed : int
        Counter-based stream key; same (mu, shapes, seed) gives a
        bit-identical matrix.

    Notes
    -----
    Exact identity factors are detected (and the detection cached on
    CovMatrix instances), skipping the corresponding multiplication, so
    null-model draws cost only the normal generation itself.
    """
    psi_cov = psi if isinstance(psi, CovMatrix) else CovMatrix(np.asarray(psi))
    sig_cov = sigma if isinstance(sigma, CovMatrix) else CovMatrix(np.asarray(sigma))
    p, n = sig_cov.dim, psi_cov.dim

    z = normal_draws(seed, (p, n))
    if not sig_cov.is_identity():
        z = sig_cov.sqrt() @ z
    if not psi_cov.is_identity():
        z = z @ psi_cov.sqrt()
    mu_col = np.asarray(mu, dtype=np.float64).reshape(-1)
    if mu_col.size == 1:
        mu_col = np.full(p, mu_col[0])
    elif mu_col.size != p:
        raise ParameterError(f"mu has length {mu_col.size}, expected {p}")
    return DataMatrix(z + mu_col[:, None])


def _parse_float(tok: str) -> float:
    # '.' decimal point only; reject thousands separators and blanks
    return float(tok.strip())


def read_data_csv(path_or_buf) -> DataMatrix:
    """Read a p x n data matrix from CSV (variables in rows).

    A single leading header row is skipped when any of its fields fails
    to parse as a number.
    """
    if hasattr(path_or_buf, "read"):
        text = path_or_buf.read()
    else:
        with open(path_or_buf, "r", encoding="utf-8") as fh:
            text = fh.read()
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(f.strip() for f in r)]
    if not rows:
        raise DataError("CSV file contains no data rows")
    start = 0
    try:
        [_parse_float(tok) for tok in rows[0]]
    except ValueError:
        start = 1
    if start == len(rows):
        raise DataError("CSV file contains a header but no data rows")
    width = len(rows[start])
    out = np.empty((len(rows) - start, width))
    for i, row in enumerate(rows[start:]):
        if len(row) != width:
            raise DataError(
                f"row {start + i + 1} has {len(row)} fields, expected {width}"
            )
        try:
            out[i] = [_parse_float(tok) for tok in row]
        except ValueError as exc:
            raise DataError(f"row {start + i + 1}: {exc}") from None
    return DataMatrix(out)


def write_data_csv(path_or_buf, data: DataMatrix | np.ndarray) -> None:
    """Write a data matrix as CSV with 17 significant digits.

    17 digits round-trip IEEE doubles exactly, so read_data_csv
    recovers the matrix bit for bit.
    """
    arr = data.values if isinstance(data, DataMatrix) else np.asarray(data)
    lines = "\n".join(",".join(format(v, ".17g") for v in row) for row in arr)
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(lines + "\n")
    else:
        with open(path_or_buf, "w", encoding="utf-8") as fh:
            fh.write(lines + "\n")
