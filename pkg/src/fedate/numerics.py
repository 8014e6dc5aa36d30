"""Dense linear algebra and sampling primitives.

Everything here is sized for small covariate dimension (a few dozen columns)
and moderate row counts. All randomness goes through :class:`RngStream`.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import DimensionError, NoConvergence, NotPositiveDefinite, RankDeficient, ValidationError

__all__ = [
    "RngStream",
    "as_matrix",
    "as_vector",
    "solve_least_squares",
    "solve_gram",
    "full_column_rank",
    "max_eigenvalue",
    "sample_mvn",
]

DEFAULT_RANK_TOLERANCE = 1e-10


class RngStream:
    """Reproducible random stream keyed by ``(seed, stream_id)``.

    Streams with the same key produce bit-identical draws. Distinct stream
    ids map to distinct ``SeedSequence`` spawn keys, which numpy guarantees
    to be statistically independent.

    Parameters
    ----------
    seed : int
        Non-negative 64-bit base seed.
    stream_id : int
        Non-negative 64-bit stream identifier.
    """

    __slots__ = ("seed", "stream_id", "_path", "generator")

    def __init__(self, seed: int, stream_id: int = 0, _path: tuple[int, ...] = ()):
        for name, value in (("seed", seed), ("stream_id", stream_id)):
            if not isinstance(value, (int, np.integer)) or not 0 <= int(value) < 2**64:
                raise ValidationError(f"{name} must be an integer in [0, 2**64)")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._path = tuple(int(p) for p in _path)
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *self._path))
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def child(self, index: int) -> "RngStream":
        """Independent sub-stream, deterministic in ``index``.

        The child does not depend on how many draws the parent has made.
        """
        return RngStream(self.seed, self.stream_id, (*self._path, int(index)))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, path={self._path})"


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{name} has non-finite entries")
    return m


def as_vector(a, name: str = "vector") -> np.ndarray:
    """Validate a finite 1-D float64 array."""
    v = np.asarray(a, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} has non-finite entries")
    return v


def solve_least_squares(design, response, rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> np.ndarray:
    """Ordinary least squares through a Householder QR factorization.

    Parameters
    ----------
    design : array_like, shape (n, p)
        Design matrix with ``n >= p``.
    response : array_like, shape (n,)
    rank_tolerance : float
        Smallest admissible ratio between the smallest and the largest pivot
        of the Gram matrix ``XᵀX`` (the squared diagonal of ``R``).

    Returns
    -------
    numpy.ndarray, shape (p,)

    Raises
    ------
    RankDeficient
        If the relative pivot falls below ``rank_tolerance``.
    """
    X = as_matrix(design, "design")
    y = as_vector(response, "response")
    n, p = X.shape
    if y.shape[0] != n:
        raise DimensionError(f"response length {y.shape[0]} != design rows {n}")
    if n < p:
        raise RankDeficient(f"{n} rows cannot identify {p} coefficients")
    if p == 0:
        return np.zeros(0)
    q, r = np.linalg.qr(X, mode="reduced")
    pivots = np.abs(np.diag(r)) ** 2
    top = pivots.max()
    if top == 0.0 or pivots.min() < rank_tolerance * top:
        raise RankDeficient(
            f"relative Gram pivot {pivots.min() / top if top else 0.0:.3e} below {rank_tolerance:.1e}"
        )
    return _upper_solve(r, q.T @ y)


def full_column_rank(design, rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> bool:
    """Whether ``design`` passes the rank rule of :func:`solve_least_squares`."""
    X = as_matrix(design, "design")
    n, p = X.shape
    if n < p:
        return False
    if p == 0:
        return True
    pivots = np.abs(np.diag(np.linalg.qr(X, mode="r"))) ** 2
    top = pivots.max()
    return bool(top > 0.0 and pivots.min() >= rank_tolerance * top)


def _upper_solve(r: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    p = r.shape[0]
    x = np.empty(p)
    for i in range(p - 1, -1, -1):
        x[i] = (rhs[i] - r[i, i + 1:] @ x[i + 1:]) / r[i, i]
    return x


def solve_gram(gram, rhs, rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> np.ndarray:
    """Solve ``G x = rhs`` for a symmetric positive semi-definite ``G``.

    Uses a Cholesky factor and the same relative-pivot rank rule as
    :func:`solve_least_squares`.
    """
    G = as_matrix(gram, "gram")
    b = np.asarray(rhs, dtype=np.float64)
    if G.shape[0] != G.shape[1] or b.shape[0] != G.shape[0]:
        raise DimensionError("gram must be square and match rhs")
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise RankDeficient("Gram matrix is not positive definite") from exc
    pivots = np.diag(L) ** 2
    if pivots.max() == 0.0 or pivots.min() < rank_tolerance * pivots.max():
        raise RankDeficient("aggregate Gram matrix is rank deficient")
    z = np.linalg.solve(L, b)
    return np.linalg.solve(L.T, z)


def max_eigenvalue(gram, rel_tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    The iteration starts from the normalized all-ones vector. Because that
    vector can be exactly orthogonal to the leading eigenvector (for example
    ``[[2, -1], [-1, 2]]``), a second deterministic start ``v_i ∝ (i+1)^-1/2``
    is also run and the larger Rayleigh quotient is returned.

    Raises
    ------
    NoConvergence
        If either run needs more than ``max_iter`` iterations.
    """
    G = as_matrix(gram, "gram")
    if G.shape[0] != G.shape[1]:
        raise DimensionError("gram must be square")
    p = G.shape[0]
    if p == 0:
        return 0.0
    best = -np.inf
    for start in (np.ones(p), 1.0 / np.sqrt(np.arange(1, p + 1))):
        v0 = start / np.linalg.norm(start)
        lam, _, ok = kernels.power_iteration(np.ascontiguousarray(G), v0, rel_tol, max_iter)
        if not ok:
            raise NoConvergence(f"power iteration did not converge in {max_iter} steps")
        best = max(best, lam)
    return float(best)


def sample_mvn(mean, covariance, n: int, rng: RngStream) -> np.ndarray:
    """Draw ``n`` rows from ``N(mean, covariance)`` through a Cholesky factor.

    Raises
    ------
    NotPositiveDefinite
        If the covariance is not symmetric positive definite.
    """
    mu = as_vector(mean, "mean")
    S = as_matrix(covariance, "covariance")
    d = mu.shape[0]
    if S.shape != (d, d):
        raise DimensionError(f"covariance shape {S.shape} does not match mean length {d}")
    if not np.allclose(S, S.T, rtol=1e-12, atol=1e-12):
        raise NotPositiveDefinite("covariance is not symmetric")
    if n < 0:
        raise ValidationError("n must be non-negative")
    if d == 0:
        return np.zeros((n, 0))
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    piv = np.diag(L) ** 2
    if piv.min() <= 1e-12 * piv.max():
        raise NotPositiveDefinite("covariance is numerically singular")
    z = rng.generator.standard_normal((n, d))
    return mu + z @ L.T
