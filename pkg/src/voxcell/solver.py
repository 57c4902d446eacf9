"""Linear solvers for the symmetric positive (semi)definite FCM systems."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DivergenceError, RankError

PRECONDITIONERS = ("none", "jacobi")
METHODS = ("cg", "direct")


@dataclass(frozen=True)
class SolverConfig:
    rel_tolerance: float = 1e-10
    max_iterations: int = 20000
    preconditioner: str = "jacobi"
    method: str = "cg"

    def __post_init__(self):
        if not 0.0 < self.rel_tolerance < 1.0:
            raise ValueError(f"rel_tolerance must lie in (0, 1), got {self.rel_tolerance}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class SolverReport:
    method: str
    preconditioner: str
    iterations: int
    final_residual: float
    converged: bool
    seconds: float = 0.0
    n: int = 0
    energy_history: list = field(default_factory=list, repr=False)

    def to_dict(self, with_history: bool = False) -> dict:
        d = asdict(self)
        if not with_history:
            d.pop("energy_history")
        return d


def _as_matvec(A):
    if isinstance(A, np.ndarray) or sp.issparse(A):
        return lambda x: A @ x
    if hasattr(A, "matvec"):
        return A.matvec
    if callable(A):
        return A
    raise TypeError(f"cannot apply operator of type {type(A).__name__}")


def _diagonal(A) -> np.ndarray:
    if isinstance(A, np.ndarray):
        return np.diag(A).copy()
    if sp.issparse(A) or hasattr(A, "diagonal"):
        return np.asarray(A.diagonal(), dtype=float)
    raise TypeError("Jacobi preconditioning needs an operator exposing its diagonal")


def make_preconditioner(A, kind: str):
    """Return x -> M^{-1} x, or None for no preconditioning."""
    if kind == "none":
        return None
    if kind == "jacobi":
        d = _diagonal(A)
        if np.any(d <= 0):
            raise ValueError("Jacobi preconditioner needs a positive diagonal")
        inv = 1.0 / d
        return lambda r: inv * r
    raise ValueError(f"unknown preconditioner {kind!r}")


def solve_cg(A, b, cfg: SolverConfig | None = None, x0=None, precond=None):
    """Preconditioned conjugate gradients.

    Stops when ||r|| / ||b|| <= rel_tolerance.  Hitting ``max_iterations`` is
    reported through ``report.converged`` rather than raised.  The energy
    functional 0.5 x.A x - b.x is recorded every iteration; it equals the
    A-norm error squared up to a constant, so it must never increase.
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    apply_A = _as_matvec(A)
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b)):
        raise DivergenceError(0, "non-finite right-hand side")
    M = precond if precond is not None else make_preconditioner(A, cfg.preconditioner)
    n = b.shape[0]
    bnorm = float(np.linalg.norm(b))
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0 and x0 is None:
        return x, SolverReport("cg", cfg.preconditioner, 0, 0.0, True, 0.0, n, [0.0])
    r = b - apply_A(x) if x0 is not None else b.copy()
    scale = bnorm if bnorm > 0 else 1.0
    z = M(r) if M else r
    p = z.copy()
    rz = float(r @ z)
    history = [float(-0.5 * x @ (b + r))]
    res = float(np.linalg.norm(r)) / scale
    it = 0
    while res > cfg.rel_tolerance and it < cfg.max_iterations:
        Ap = apply_A(p)
        pAp = float(p @ Ap)
        if not np.isfinite(pAp):
            raise DivergenceError(it + 1)
        if pAp <= 0.0:
            break
        step = rz / pAp
        x += step * p
        r -= step * Ap
        it += 1
        res = float(np.linalg.norm(r)) / scale
        if not np.isfinite(res):
            raise DivergenceError(it)
        history.append(float(-0.5 * x @ (b + r)))
        z = M(r) if M else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    report = SolverReport("cg", cfg.preconditioner, it, res, res <= cfg.rel_tolerance,
                          time.perf_counter() - t0, n, history)
    return x, report


def solve_dense(A, b, least_squares: bool = False, rcond: float | None = None):
    """Dense LU solve with an explicit rank check.

    Rank-deficient matrices raise :class:`RankError` unless ``least_squares``
    is set, in which case the minimum-norm solution is returned.
    """
    A = np.asarray(A.toarray() if sp.issparse(A) else A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got shape {A.shape}")
    s = np.linalg.svd(A, compute_uv=False)
    tol = (rcond if rcond is not None else A.shape[0] * np.finfo(float).eps) * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    if rank < A.shape[0]:
        if not least_squares:
            raise RankError(f"matrix is rank deficient (rank {rank} < {A.shape[0]})")
        return np.linalg.lstsq(A, b, rcond=None)[0]
    return np.linalg.solve(A, b)


class _Cholesky:
    """Sparse Cholesky through CHOLMOD (shipped with cvxopt)."""

    def __init__(self, A: sp.spmatrix):
        from cvxopt import cholmod, matrix, spmatrix

        self._cholmod, self._matrix = cholmod, matrix
        L = sp.tril(A, format="coo")
        M = spmatrix(L.data.tolist(), L.row.tolist(), L.col.tolist(), size=L.shape)
        self._F = cholmod.symbolic(M)
        try:
            cholmod.numeric(M, self._F)
        except ArithmeticError as exc:
            raise RankError("matrix is not positive definite") from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        x = self._matrix(np.ascontiguousarray(b, dtype=float))
        self._cholmod.solve(self._F, x)
        return np.array(x).ravel()


def _factorize(S: sp.spmatrix):
    try:
        return _Cholesky(S)
    except ImportError:
        return spla.splu(sp.csc_matrix(S), permc_spec="COLAMD")


class Solver:
    """Prepared solver for one operator and many right-hand sides.

    ``method="direct"`` factorizes once (sparse Cholesky when available,
    sparse LU otherwise) and reuses the factor for every right-hand side.
    """

    def __init__(self, A, cfg: SolverConfig | None = None):
        self.cfg = cfg or SolverConfig()
        self.A = A
        t0 = time.perf_counter()
        if self.cfg.method == "direct":
            S = A.to_sparse() if hasattr(A, "to_sparse") else sp.csc_matrix(A)
            self._lu = _factorize(S)
            self._precond = None
        else:
            self._lu = None
            self._precond = make_preconditioner(A, self.cfg.preconditioner)
        self.setup_seconds = time.perf_counter() - t0

    def __call__(self, b):
        b = np.asarray(b, dtype=float)
        if self._lu is None:
            return solve_cg(self.A, b, self.cfg, precond=self._precond)
        t0 = time.perf_counter()
        x = self._lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(0, "non-finite direct solution")
        r = b - _as_matvec(self.A)(x)
        scale = np.linalg.norm(b) or 1.0
        res = float(np.linalg.norm(r) / scale)
        report = SolverReport("direct", "none", 1, res, res <= max(self.cfg.rel_tolerance, 1e-8),
                              time.perf_counter() - t0, b.shape[0])
        return x, report
