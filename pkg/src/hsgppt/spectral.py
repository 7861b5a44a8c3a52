"""Beta-shaped spectral filter bank and frequency diagnostics.

The bank of order C holds the C+1 kernels

    g_{k,r}(lambda) = (lambda/2)^k (1 - lambda/2)^r / (2 B(k+1, r+1)),
    k + r = C,

over the normalized-Laplacian spectrum [0, 2]. g_{0,C} is the low-pass end,
g_{C,0} the high-pass end, interior members are band-pass. Filters are
applied with k+r iterated sparse matrix-vector products; the Laplacian is
never densified.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import Graph, edge_homophily, laplacian

DENSE_EIGEN_LIMIT = 5000

TRIPLE_FILTERS = ("low", "mid", "high")


def beta_constant(k: int, r: int) -> float:
    """1 / (2 B(k+1, r+1)) = (k+r+1) C(k+r, k) / 2.

    Integer arithmetic keeps small orders exact; the log-space form is the
    fallback once the value leaves float range, so large k+r cannot overflow
    intermediate factorials.
    """
    if k < 0 or r < 0:
        raise ValueError("filter indices must be non-negative")
    try:
        return (k + r + 1) * math.comb(k + r, k) / 2
    except OverflowError:
        log_beta = math.lgamma(k + 1) + math.lgamma(r + 1) - math.lgamma(k + r + 2)
        return math.exp(-math.log(2.0) - log_beta)


def filter_response(filt, lam):
    """Scalar response of a bank entry (k, r) or a reference filter name.

    Reference filters: low = 1 - lambda/2, mid = 1 - (lambda-1)^2,
    high = lambda/2. lambda must lie in [0, 2].
    """
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0) or np.any(lam > 2):
        raise ValueError("lambda outside [0, 2]")
    if isinstance(filt, str):
        if filt == "low":
            out = 1.0 - lam / 2.0
        elif filt == "mid":
            out = 1.0 - (lam - 1.0) ** 2
        elif filt == "high":
            out = lam / 2.0
        else:
            raise ValueError(f"unknown reference filter: {filt!r}")
    else:
        k, r = filt
        out = beta_constant(k, r) * (lam / 2.0) ** k * (1.0 - lam / 2.0) ** r
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class FilterBank:
    """Ordered collection of (k, r) kernel exponents with k + r = order."""

    filters: tuple

    def __post_init__(self):
        if not self.filters:
            raise ValueError("bank must hold at least one filter")
        order = sum(self.filters[0])
        for k, r in self.filters:
            if k < 0 or r < 0 or k + r != order:
                raise ValueError("all filters must satisfy k + r = order, k, r >= 0")

    @classmethod
    def full(cls, order: int) -> "FilterBank":
        """All C+1 kernels of the given order, low-pass first."""
        if order < 0:
            raise ValueError("order must be >= 0")
        return cls(tuple((k, order - k) for k in range(order + 1)))

    @classmethod
    def low_pass(cls, order: int) -> "FilterBank":
        """Single-kernel bank holding only the low-pass member g_{0,C}."""
        if order < 0:
            raise ValueError("order must be >= 0")
        return cls(((0, order),))

    @property
    def order(self) -> int:
        return sum(self.filters[0])

    @property
    def size(self) -> int:
        return len(self.filters)

    def constants(self):
        return [beta_constant(k, r) for k, r in self.filters]


def beta_filter_apply(L: sp.spmatrix, k: int, r: int, x: np.ndarray) -> np.ndarray:
    """g_{k,r}(L) x via k+r sparse matvecs. x may be a vector or a matrix."""
    x = np.asarray(x, dtype=np.float64)
    if L.shape[1] != x.shape[0]:
        raise ValueError(f"L is {L.shape}, signal has {x.shape[0]} rows")
    y = x
    for _ in range(r):
        y = y - 0.5 * (L @ y)
    for _ in range(k):
        y = 0.5 * (L @ y)
    return beta_constant(k, r) * y


def triple_filter_apply(L: sp.spmatrix, which: str, x: np.ndarray) -> np.ndarray:
    """Apply a reference filter (low/mid/high) as a polynomial in L."""
    x = np.asarray(x, dtype=np.float64)
    if L.shape[1] != x.shape[0]:
        raise ValueError(f"L is {L.shape}, signal has {x.shape[0]} rows")
    if which == "low":
        return x - 0.5 * (L @ x)
    if which == "mid":
        t = L @ x
        return 2.0 * t - L @ t
    if which == "high":
        return 0.5 * (L @ x)
    raise ValueError(f"unknown reference filter: {which!r}")


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # columns


def eigendecompose(L, limit: int = DENSE_EIGEN_LIMIT) -> SpectralDecomposition:
    """Dense symmetric eigendecomposition, refused above the size limit."""
    if sp.issparse(L):
        dense = L.toarray()
    else:
        dense = np.asarray(L, dtype=np.float64)
    n = dense.shape[0]
    if dense.shape != (n, n):
        raise ValueError("matrix must be square")
    if n > limit:
        raise ValueError(f"matrix size {n} exceeds dense eigensolver limit {limit}")
    asym = np.max(np.abs(dense - dense.T)) if n else 0.0
    if asym > 1e-10:
        raise ValueError(f"matrix asymmetry {asym:.3e} exceeds 1e-10")
    vals, vecs = np.linalg.eigh(dense)
    return SpectralDecomposition(eigenvalues=vals, eigenvectors=vecs)


def to_spectral(decomp: SpectralDecomposition, x: np.ndarray) -> np.ndarray:
    """Graph Fourier transform U^T x (norm-preserving)."""
    return decomp.eigenvectors.T @ np.asarray(x, dtype=np.float64)


def spectral_energy(decomp: SpectralDecomposition, x: np.ndarray) -> np.ndarray:
    """Distribution x_hat_i^2 / sum_j x_hat_j^2 over the eigenbasis."""
    xhat = to_spectral(decomp, x)
    total = float(xhat @ xhat)
    if total == 0.0:
        raise ValueError("zero signal has no spectral energy distribution")
    return xhat * xhat / total


def high_freq_area(L: sp.spmatrix, x: np.ndarray) -> float:
    """Rayleigh quotient x^T L x / x^T x (one sparse matvec)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    denom = float(x @ x)
    if denom == 0.0:
        raise ValueError("zero signal")
    return float(x @ (L @ x)) / denom


def high_freq_profile(g: Graph, kind: str = "normalized") -> np.ndarray:
    """Per-feature-column Rayleigh quotient; NaN marks zero-norm columns."""
    L = laplacian(g, kind)
    X = g.features
    num = np.einsum("ij,ij->j", X, L @ X)
    den = np.einsum("ij,ij->j", X, X)
    out = np.full(X.shape[1], np.nan)
    nz = den > 0
    out[nz] = num[nz] / den[nz]
    return out


def class_distance_expectations(g: Graph, x: np.ndarray):
    """Normalized expected squared edge differences, split by edge type.

    intra  = sum over same-label edges of (x_u - x_v)^2 / (h |E| x^T x)
    inter  = sum over cross-label edges of (x_u - x_v)^2 / ((1-h) |E| x^T x)

    Either value is None when its edge category is empty.
    """
    if g.labels is None:
        raise ValueError("labels absent")
    x = np.asarray(x, dtype=np.float64).ravel()
    sq = float(x @ x)
    if sq == 0.0:
        raise ValueError("zero signal")
    u, v = g.edges[:, 0], g.edges[:, 1]
    same = g.labels[u] == g.labels[v]
    m = g.n_edges
    diffs = (x[u] - x[v]) ** 2
    n_same = int(same.sum())
    n_diff = m - n_same
    # h |E| = n_same and (1 - h) |E| = n_diff, so the normalizers are counts
    intra = float(diffs[same].sum()) / (n_same * sq) if n_same else None
    inter = float(diffs[~same].sum()) / (n_diff * sq) if n_diff else None
    return intra, inter


@dataclass(frozen=True)
class EnergyIdentityReport:
    s_high: float  # x^T (D - A) x / x^T x
    mixture_rhs: float  # |E| (h intra + (1-h) inter)
    mixture_rhs_halved: float  # |E|/2 variant, reported for comparison
    abs_error: float
    homophily: float
    e_intra: float
    e_inter: float


def energy_identity_check(g: Graph, x: np.ndarray) -> EnergyIdentityReport:
    """Exact identity tying the unnormalized Rayleigh quotient to homophily.

    With single-counted undirected edges, x^T (D - A) x equals the sum of
    squared edge differences, hence

        S_high = |E| * (h * E_intra + (1 - h) * E_inter)

    which must hold to machine precision. The |E|/2 variant is reported as
    well but is not an identity.
    """
    if g.labels is None:
        raise ValueError("labels absent")
    intra, inter = class_distance_expectations(g, x)
    if intra is None or inter is None:
        raise ValueError("both intra- and inter-class edges are required")
    h = edge_homophily(g)
    lhs = high_freq_area(laplacian(g, "unnormalized"), x)
    rhs = g.n_edges * (h * intra + (1.0 - h) * inter)
    return EnergyIdentityReport(
        s_high=lhs,
        mixture_rhs=rhs,
        mixture_rhs_halved=rhs / 2.0,
        abs_error=abs(lhs - rhs),
        homophily=h,
        e_intra=intra,
        e_inter=inter,
    )


def spectral_regression_loss(g_at_eigs, x_hat, y_hat) -> float:
    """Squared distance between unit-scaled target and filtered spectra.

    sum_i ( y_hat_i / sqrt(N) - g_i x_hat_i / || g x_hat || )^2.
    Scale-invariant in g by construction.
    """
    g_at_eigs = np.asarray(g_at_eigs, dtype=np.float64).ravel()
    x_hat = np.asarray(x_hat, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if not (g_at_eigs.size == x_hat.size == y_hat.size):
        raise ValueError("inputs must share length")
    fx = g_at_eigs * x_hat
    nrm = math.sqrt(float(fx @ fx))
    if nrm == 0.0:
        raise ValueError("filtered signal is identically zero")
    n = x_hat.size
    resid = y_hat / math.sqrt(n) - fx / nrm
    return float(resid @ resid)


def response_grid(filters, n_points: int = 201):
    """(lambda grid, response per filter) rows for plotting/TSV export."""
    lam = np.linspace(0.0, 2.0, n_points)
    return lam, {str(f): np.asarray(filter_response(f, lam)) for f in filters}
