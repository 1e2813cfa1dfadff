"""Dense linear-algebra primitives used throughout the package.

All numeric data is carried by float64 ndarrays: rank-1 for vectors,
rank-2 (row-major) for matrices.  The routines here wrap numpy.linalg
behind the exact contracts the rest of the package relies on, most
importantly a deterministic eigenvector sign convention so that fitted
bases are stable across runs and survive persistence round-trips.
"""

from __future__ import annotations

import numpy as np
import numpy.typing as npt

from .errors import BasisError, ShapeError, SingularMatrixError, SymmetryError

FloatArray = npt.NDArray[np.float64]

#: relative tolerance for the symmetry check in sym_eig
SYMMETRY_RTOL = 1e-10


def as_matrix(m, name: str = "matrix") -> FloatArray:
    """Coerce to a finite float64 2-D array, raising ShapeError otherwise."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ShapeError(f"{name} contains non-finite entries")
    return a


def as_vector(v, name: str = "vector") -> FloatArray:
    """Coerce to a finite float64 1-D array, raising ShapeError otherwise."""
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ShapeError(f"{name} contains non-finite entries")
    return a


def fix_eigvec_signs(vecs: FloatArray) -> FloatArray:
    """Flip eigenvector columns so the largest-magnitude entry is positive.

    Ties resolve to the first maximal index, which makes the convention
    deterministic even for symmetric eigenvectors like (1, -1)/sqrt(2).
    """
    out = vecs.copy()
    for j in range(out.shape[1]):
        k = int(np.argmax(np.abs(out[:, j])))
        if out[k, j] < 0:
            out[:, j] = -out[:, j]
    return out


def sym_eig(m) -> tuple[FloatArray, FloatArray]:
    """Eigendecomposition of a symmetric matrix.

    Returns (eigenvalues, eigenvectors) with eigenvalues sorted in
    descending order and eigenvectors as orthonormal columns under the
    positive-largest-entry sign convention.
    """
    a = as_matrix(m)
    n, c = a.shape
    if n != c:
        raise ShapeError(f"sym_eig requires a square matrix, got {a.shape}")
    scale = np.linalg.norm(a)
    if np.linalg.norm(a - a.T) > SYMMETRY_RTOL * max(scale, 1e-300):
        raise SymmetryError("matrix is not symmetric within tolerance")
    # eigh works on the symmetrized matrix so tiny asymmetries cannot leak
    w, v = np.linalg.eigh((a + a.T) / 2.0)
    order = np.argsort(w)[::-1]
    return w[order], fix_eigvec_signs(v[:, order])


def random_orthogonal(dim: int, seed: int) -> FloatArray:
    """Haar-ish random orthogonal matrix, deterministic for a fixed seed."""
    if dim < 1:
        raise ShapeError(f"dimension must be >= 1, got {dim}")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    # normalize the QR gauge so the result depends only on the sampled matrix
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d


def spectral_norm(m) -> float:
    """Largest singular value."""
    a = as_matrix(m)
    return float(np.linalg.norm(a, 2))


def condition_number(m) -> float:
    """2-norm condition number ||m|| * ||m^-1|| of a square invertible matrix."""
    a = as_matrix(m)
    n, c = a.shape
    if n != c:
        raise ShapeError(f"condition number requires a square matrix, got {a.shape}")
    s = np.linalg.svd(a, compute_uv=False)
    if s[-1] <= s[0] * np.finfo(np.float64).eps * max(n, 1):
        raise SingularMatrixError("matrix is numerically singular")
    return float(s[0] / s[-1])


def invert(m) -> FloatArray:
    """Inverse of a square matrix, raising SingularMatrixError when rank-deficient."""
    a = as_matrix(m)
    condition_number(a)  # raises on singular input
    return np.linalg.inv(a)


def orthonormal_columns(m) -> FloatArray:
    """Orthonormal basis (QR) for the column span of a full-column-rank matrix."""
    a = as_matrix(m)
    if a.shape[1] > a.shape[0]:
        raise ShapeError(f"more columns than rows: {a.shape}")
    q, r = np.linalg.qr(a)
    if np.min(np.abs(np.diag(r))) <= 1e-12 * max(np.linalg.norm(a), 1e-300):
        raise SingularMatrixError("columns are numerically dependent")
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d


def check_orthonormal(v, tol: float = 1e-8, name: str = "basis") -> FloatArray:
    """Validate V^T V = I within tol, returning V as a float64 array."""
    a = as_matrix(v, name)
    g = a.T @ a
    if np.max(np.abs(g - np.eye(a.shape[1]))) > tol:
        raise BasisError(f"{name} columns are not orthonormal within {tol}")
    return a
