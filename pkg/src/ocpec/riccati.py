"""Backward/forward block elimination for the block-tridiagonal KKT system."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import eigvalsh, lapack, lu_solve

from .kkt import KKTMatrix, KKTResidual, Layout

# reciprocal condition estimates below this are treated as singular
RCOND_MIN = 1e-14


class SingularStageBlock(np.linalg.LinAlgError):
    """A reduced stage block could not be factorized reliably."""

    def __init__(self, stage: int, rcond: float):
        self.stage = stage
        self.rcond = rcond
        super().__init__(f"reduced block of stage {stage} is singular (rcond={rcond:.2e})")


@dataclass
class StageFactorization:
    """LU factors of every reduced block, reusable for new right-hand sides."""

    factors: list  # (lu, piv) per stage, index 0 is stage 1
    layout: Layout
    valid: bool = True
    solves: int = field(default=0)
    # (positive, negative, zero) eigenvalue counts of K, if requested
    inertia: Optional[tuple] = None

    @property
    def expected_inertia(self) -> tuple:
        d = self.layout.dims
        return d.N * d.n_Z, d.N * (d.n_Y - d.n_Z), 0

    def _solve(self, n, rhs):
        return lu_solve(self.factors[n], rhs, check_finite=False)


def _rhs_array(rhs) -> np.ndarray:
    if isinstance(rhs, KKTResidual):
        return rhs.data
    return np.asarray(rhs, dtype=float)


def _factor(n: int, A: np.ndarray):
    lu, piv, info = lapack.dgetrf(A)
    if info > 0:
        raise SingularStageBlock(n + 1, 0.0)
    anorm = np.abs(A).sum(axis=0).max()
    rcond, _ = lapack.dgecon(lu, anorm, norm="1")
    if not rcond >= RCOND_MIN:
        raise SingularStageBlock(n + 1, float(rcond))
    return lu, piv


def _inertia(A: np.ndarray) -> np.ndarray:
    # signs only: near-singularity is already caught by the condition estimate,
    # and a relative zero cutoff would swallow the tiny -nu_J eigenvalues
    ev = eigvalsh(0.5 * (A + A.T), check_finite=False)
    return np.array([(ev > 0).sum(), (ev < 0).sum(), (ev == 0).sum()])


def factor_and_solve(kkt: KKTMatrix, rhs, structured: bool = True, inertia: bool = False):
    """Solve ``K dY = -T`` by the Riccati-like recursion.

    Backward: ``A_N = J_N``, ``A_n = J_n - B_U A_{n+1}^{-1} B_L``.  Since
    ``B_L`` only maps ``x_{n}`` into the defect rows of stage ``n+1``, the
    update touches just the ``(x, x)`` block of ``A_n`` with the ``(lam, lam)``
    block of ``A_{n+1}^{-1}``.  With ``structured=False`` the full product is
    formed instead (reference path).

    With ``inertia=True`` the eigenvalue counts of ``K`` are accumulated from
    the reduced blocks, which are the successive Schur complements of the
    symmetric ``K``.

    Returns ``(dY, factorization)`` with ``dY`` of shape ``(N, n_Y)``.
    """
    lay = kkt.layout
    N, nY = kkt.J.shape[:2]
    n_x = lay.dims.n_x
    lam_idx = np.arange(lay.lam.start, lay.lam.stop)
    x_idx = np.arange(lay.x.start, lay.x.stop)
    B = kkt.coupler() if not structured else None

    factors = [None] * N
    counts = np.zeros(3, dtype=int)
    A = kkt.J[N - 1]
    for n in range(N - 1, -1, -1):
        factors[n] = _factor(n, A)
        if inertia:
            counts += _inertia(A)
        if n == 0:
            break
        A = kkt.J[n - 1].copy()
        if n_x:
            if structured:
                E = np.zeros((nY, n_x))
                E[lam_idx, np.arange(n_x)] = 1.0
                inv_cols = lu_solve(factors[n], E, check_finite=False)
                A[np.ix_(x_idx, x_idx)] -= inv_cols[lam_idx]
            else:
                A -= B.T @ lu_solve(factors[n], B, check_finite=False)
    fact = StageFactorization(factors, lay, inertia=tuple(int(c) for c in counts) if inertia else None)
    return resolve(fact, rhs), fact


def resolve(fact: StageFactorization, rhs) -> np.ndarray:
    """Solve ``K dY = -rhs`` reusing stored factors (one backward + one forward sweep)."""
    if not fact.valid:
        raise ValueError("factorization has been invalidated")
    lay = fact.layout
    T = _rhs_array(rhs)
    N = len(fact.factors)
    if T.shape != (N, lay.n_Y):
        raise ValueError(f"rhs has shape {T.shape}, expected {(N, lay.n_Y)}")
    fact.solves += 1
    b = T.copy()
    # backward: b_n = T_n - B_U A_{n+1}^{-1} b_{n+1}
    for n in range(N - 1, 0, -1):
        y = fact._solve(n, b[n])
        b[n - 1, lay.x] -= y[lay.lam]
    # forward: dY_n = -A_n^{-1} (b_n + B_L dY_{n-1}), dY_0 = 0
    dY = np.empty_like(b)
    prev_x = np.zeros(lay.dims.n_x)
    for n in range(N):
        r = b[n].copy()
        r[lay.lam] += prev_x
        dY[n] = -fact._solve(n, r)
        prev_x = dY[n, lay.x]
    return dY
