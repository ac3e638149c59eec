"""Sparse linear solves and backward-Euler stepping."""
import logging
import threading
import time
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..config import DEFAULT_TOL
from ..errors import SolverError
from .assembly import SparseOperator

logger = logging.getLogger(__name__)

METHODS = ("direct", "bicgstab")
MAX_REFINEMENTS = 3


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual: float
    wall_time: float
    method: str = "direct"

    def as_dict(self) -> dict:
        return {"iterations": self.iterations, "residual": self.residual,
                "wall_time": self.wall_time, "method": self.method}


def _matrix(op: Union[SparseOperator, sp.spmatrix]) -> sp.csr_matrix:
    return sp.csr_matrix(op.matrix if isinstance(op, SparseOperator) else op)


class LinearSolver:
    """
    Reusable solver for one sparse matrix.

    The direct method factorises once with SuperLU and applies up to
    ``MAX_REFINEMENTS`` steps of iterative refinement; ``bicgstab`` uses an
    incomplete-LU preconditioner. Either way the true relative residual is
    checked against ``tol``.

    Args:
        op: Operator or sparse matrix to invert.
        method: ``"direct"`` or ``"bicgstab"``.
        tol: Required relative residual ``||A x - b|| / ||b||``.
        maxiter: Iteration cap for ``bicgstab``; defaults to ``10 * N``.
    """

    def __init__(self, op: Union[SparseOperator, sp.spmatrix], method: str = "direct",
                 tol: float = DEFAULT_TOL, maxiter: Optional[int] = None):
        if method not in METHODS:
            raise ValueError(f"Unknown solver method '{method}', expected one of {METHODS}")
        self.matrix = _matrix(op)
        if self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError(f"Operator must be square, got shape {self.matrix.shape}")
        self.method = method
        self.tol = tol
        self.maxiter = maxiter or 10 * self.matrix.shape[0]
        # SuperLU factors are not safe for concurrent solves
        self._lock = threading.Lock()
        start = time.perf_counter()
        try:
            if method == "direct":
                self._lu = spla.splu(self.matrix.tocsc())
                self._preconditioner = None
            else:
                self._lu = None
                ilu = spla.spilu(self.matrix.tocsc())
                self._preconditioner = spla.LinearOperator(self.matrix.shape, ilu.solve)
        except RuntimeError as e:
            raise SolverError(f"Factorisation failed ({method}): {e}") from e
        self.setup_time = time.perf_counter() - start
        logger.debug(f"LinearSolver ready: n={self.matrix.shape[0]}, method={method}, "
                     f"setup {self.setup_time:.3g}s")

    def _residual(self, x: np.ndarray, rhs: np.ndarray, rhs_norm: float) -> float:
        return float(np.linalg.norm(self.matrix @ x - rhs) / rhs_norm)

    def solve(self, rhs: np.ndarray) -> Tuple[np.ndarray, SolveReport]:
        """
        Solves ``A x = rhs``.

        Raises:
            SolverError: On breakdown, non-finite output, or a residual above ``tol``.
        """
        rhs = np.asarray(rhs, dtype=float)
        start = time.perf_counter()
        rhs_norm = float(np.linalg.norm(rhs))
        if rhs_norm == 0.0:
            return np.zeros_like(rhs), SolveReport(0, 0.0, time.perf_counter() - start, self.method)

        if self.method == "direct":
            with self._lock:
                x = self._lu.solve(rhs)
            residual = self._residual(x, rhs, rhs_norm)
            iterations = 1
            while residual > self.tol and iterations <= MAX_REFINEMENTS and np.isfinite(residual):
                with self._lock:
                    x = x + self._lu.solve(rhs - self.matrix @ x)
                residual = self._residual(x, rhs, rhs_norm)
                iterations += 1
        else:
            counter = {"n": 0}

            def count(_):
                counter["n"] += 1

            x, info = spla.bicgstab(self.matrix, rhs, rtol=self.tol, atol=0.0, maxiter=self.maxiter,
                                    M=self._preconditioner, callback=count)
            iterations = counter["n"]
            residual = self._residual(x, rhs, rhs_norm)
            if info < 0:
                report = SolveReport(iterations, residual, time.perf_counter() - start, self.method)
                raise SolverError(f"BiCGSTAB breakdown (info={info})", report)

        report = SolveReport(iterations, residual, time.perf_counter() - start, self.method)
        if not np.all(np.isfinite(x)) or not residual <= self.tol:
            raise SolverError(f"Linear solve did not reach tolerance {self.tol:g}: "
                              f"relative residual {residual:.3g} after {iterations} iterations", report)
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(f"Solve converged: {report}")
        return x, report


def solve(op: Union[SparseOperator, sp.spmatrix], rhs: np.ndarray, tol: float = DEFAULT_TOL,
          method: str = "direct") -> Tuple[np.ndarray, SolveReport]:
    """Solves ``op x = rhs`` to relative residual ``tol``; see ``LinearSolver``."""
    return LinearSolver(op, method=method, tol=tol).solve(rhs)


class BackwardEuler:
    """
    Implicit Euler stepper ``(I - dt*A) P' = P + dt*source`` with a cached factorisation.
    """

    def __init__(self, op: Union[SparseOperator, sp.spmatrix], dt: float, tol: float = DEFAULT_TOL):
        if not dt > 0:
            raise ValueError(f"Time step must be positive, got {dt}")
        self.dt = float(dt)
        matrix = _matrix(op)
        system = sp.identity(matrix.shape[0], format="csr") - self.dt * matrix
        self._solver = LinearSolver(system, method="direct", tol=tol)

    def step(self, P: np.ndarray, source: np.ndarray) -> np.ndarray:
        rhs = P + self.dt * source
        try:
            P_next, _ = self._solver.solve(rhs)
        except SolverError as e:
            raise SolverError(f"Implicit step failed: {e}", e.report) from e
        return P_next


def step_implicit(op: Union[SparseOperator, sp.spmatrix], P: np.ndarray, source: np.ndarray,
                  dt: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    """One backward-Euler step of ``dP/dt = A P + source``."""
    return BackwardEuler(op, dt, tol=tol).step(P, source)
