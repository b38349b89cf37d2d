"""
Dense least-squares primitives
Projections, OLS by pivoted QR, residualization and conditioning diagnostics
"""

import logging
import warnings

import numpy as np
import scipy.linalg as sla

import config
from estimation.exceptions import (
    IllConditionedWarning,
    NonFiniteInput,
    RankDeficient,
)
from estimation.models import DesignMatrix, ProjectionResult, constant_columns

logger = logging.getLogger(__name__)


def _values(design):
    if isinstance(design, DesignMatrix):
        return design.values
    values = np.asarray(design, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    return values


def spectrum(matrix):
    """Numerical rank and condition number from the singular values"""
    sv = sla.svdvals(matrix)
    if sv.size == 0 or sv[0] == 0.0:
        return 0, float("inf")
    rank = int(np.count_nonzero(sv > config.RANK_TOLERANCE * sv[0]))
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    return rank, cond


def _decompose(values):
    """Pivoted economic QR with rank check on the triangular factor"""
    n, k = values.shape
    if n < k:
        raise RankDeficient(n, float("inf"), columns=k)
    q, r, piv = sla.qr(values, mode="economic", pivoting=True)
    rank, cond = spectrum(r)
    if rank < k:
        raise RankDeficient(rank, cond, columns=k)
    if cond > config.CONDITION_WARNING:
        logger.debug(f"Ill-conditioned design: condition number {cond:.3g}")
        warnings.warn(f"design condition number {cond:.3g} exceeds {config.CONDITION_WARNING:.0e}",
                      IllConditionedWarning, stacklevel=3)
    return q, r, piv, rank, cond


def ols_solve(design, target) -> ProjectionResult:
    """
    Least-squares projection of target on the columns of design

    Args:
        design: DesignMatrix (or n x k array)
        target: n-vector

    Returns:
        ProjectionResult with coefficients, fitted values and residuals

    Raises:
        RankDeficient: numerical rank below k at relative tolerance RANK_TOLERANCE
        NonFiniteInput: non-finite design or target entries
    """
    values = _values(design)
    y = np.asarray(target, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != values.shape[0]:
        raise ValueError(f"target must be a vector of length {values.shape[0]}. Got shape {y.shape}.")
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(y))):
        raise NonFiniteInput("non-finite values in least-squares inputs")

    q, r, piv, rank, cond = _decompose(values)
    qty = q.T @ y
    coefficients = np.empty(values.shape[1])
    coefficients[piv] = sla.solve_triangular(r, qty)
    fitted = q @ qty
    return ProjectionResult(
        coefficients=coefficients,
        fitted=fitted,
        residuals=y - fitted,
        rank=rank,
        condition_number=cond,
    )


def residualize(target_block, controls):
    """
    Remove the linear projection on controls from every target column

    Args:
        target_block: DesignMatrix, n x m array or n-vector
        controls: DesignMatrix containing a constant column

    Returns:
        Residual block of the same kind and shape as target_block
    """
    control_values = _values(controls)
    if not constant_columns(control_values).any():
        raise ValueError("controls must include a constant column")
    block = _values(target_block)
    if block.shape[0] != control_values.shape[0]:
        raise ValueError("target block and controls must have the same number of rows")
    if not (np.all(np.isfinite(block)) and np.all(np.isfinite(control_values))):
        raise NonFiniteInput("non-finite values in residualization inputs")

    q, _, _, _, _ = _decompose(control_values)
    residuals = block - q @ (q.T @ block)

    if isinstance(target_block, DesignMatrix):
        return DesignMatrix(residuals, target_block.column_labels)
    if np.ndim(target_block) == 1:
        return residuals[:, 0]
    return residuals


def checked_inverse(matrix, error_cls=None, what="matrix"):
    """
    Inverse of a symmetric matrix

    Raises error_cls(message) when the matrix is numerically singular, or
    RankDeficient when no error class is given.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.size == 0:
        return matrix.copy()
    rank, cond = spectrum(matrix)
    if rank < matrix.shape[0]:
        if error_cls is None:
            raise RankDeficient(rank, cond, columns=matrix.shape[0])
        raise error_cls(f"{what} is singular (rank {rank} of {matrix.shape[0]}, condition {cond:.3g})")
    inverse = np.linalg.inv(matrix)
    return 0.5 * (inverse + inverse.T)


def hc0_covariance(design, residuals):
    """Heteroskedasticity-robust (HC0) variance of OLS coefficients"""
    values = _values(design)
    n = values.shape[0]
    bread = checked_inverse(values.T @ values / n)
    meat = (values * residuals[:, None] ** 2).T @ values / n
    cov = bread @ meat @ bread / n
    return 0.5 * (cov + cov.T)
