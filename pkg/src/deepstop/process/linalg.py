from __future__ import annotations

import numpy as np


class NotPositiveSemidefinite(ValueError):
    def __init__(self, pivot: int, value: float):
        super().__init__(f"matrix not positive semidefinite (pivot {pivot} = {value:.3e})")
        self.pivot = pivot
        self.value = value


def apply_rows(x: np.ndarray, M: np.ndarray) -> np.ndarray:
    """``x @ M.T`` summed in a fixed order, so each row's result is bitwise
    independent of how many rows share the call (BLAS kernels are not)."""
    x = np.asarray(x)
    k = M.shape[1]
    if x.shape[-1] != k:
        raise ValueError(f"last axis has {x.shape[-1]} entries, expected {k}")
    if k == 0:
        return np.zeros(x.shape[:-1] + (M.shape[0],), dtype=np.result_type(x, M))
    out = x[..., 0:1] * M[:, 0]
    for j in range(1, k):
        out += x[..., j:j + 1] * M[:, j]
    return out


def _cholesky(cov: np.ndarray, min_pivot: float, strict: bool) -> np.ndarray:
    n = cov.shape[0]
    L = np.zeros_like(cov)
    for j in range(n):
        pivot = cov[j, j] - L[j, :j] @ L[j, :j]
        if pivot < min_pivot or (strict and pivot <= 0) or not np.isfinite(pivot):
            raise NotPositiveSemidefinite(j, float(pivot))
        L[j, j] = np.sqrt(pivot)
        L[j + 1:, j] = (cov[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def cholesky_factor(cov) -> np.ndarray:
    """Lower-triangular ``B`` with ``B @ B.T == cov``.

    A pivot below ``1e-12 * max(diag)`` triggers a single retry with that
    amount of diagonal jitter (needed e.g. for the rank-one fBm covariance
    at H = 1).
    """
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"covariance must be square, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(np.abs(cov).max(), 1.0)):
        raise ValueError("covariance must be symmetric")
    scale = float(np.max(np.diag(cov))) if cov.size else 0.0
    if scale <= 0:
        raise NotPositiveSemidefinite(0, scale)
    tol = 1e-12 * scale
    try:
        return _cholesky(cov, tol, strict=False)
    except NotPositiveSemidefinite:
        jittered = cov + tol * np.eye(cov.shape[0])
        return _cholesky(jittered, 0.0, strict=True)
