"""Euclidean trivialization of orthonormal frames through the matrix exponential.

A vector of ``D(D-1)/2`` coordinates fills the strict upper triangle of a
skew-symmetric ``A``; ``exp(A)`` is special orthogonal and its first ``K``
columns form the frame ``V``.  An optional orthogonal ``base`` shifts the
chart, ``V = (base @ exp(A))[:, :K]``, which lets a search start from any
frame, including the other connected component of ``O(D)``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

# Pade(13) coefficients and theta_13 for double precision
# (Higham, "The scaling and squaring method for the matrix exponential revisited").
_PADE13 = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)
_THETA13 = 5.371920351148152


def n_coords(dim: int) -> int:
    return dim * (dim - 1) // 2


@lru_cache(maxsize=64)
def _triu(dim: int):
    return np.triu_indices(dim, 1)


def skew_embed(params, dim: int) -> np.ndarray:
    """Skew-symmetric matrix (or stack) whose strict upper triangle is ``params``."""
    x = np.asarray(params, dtype=np.float64)
    if x.shape[-1] != n_coords(dim):
        raise ValueError(f"expected {n_coords(dim)} coordinates for dim={dim}, got {x.shape[-1]}")
    iu = _triu(dim)
    a = np.zeros(x.shape[:-1] + (dim, dim))
    a[..., iu[0], iu[1]] = x
    return a - np.swapaxes(a, -1, -2)


def skew_extract(a: np.ndarray) -> np.ndarray:
    iu = _triu(a.shape[-1])
    return a[..., iu[0], iu[1]]


def skew_gradient(g: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the coordinates given the gradient w.r.t. the full matrix ``A``."""
    iu = _triu(g.shape[-1])
    return g[..., iu[0], iu[1]] - g[..., iu[1], iu[0]]


def matrix_exponential(a) -> np.ndarray:
    """``exp(A)`` by scaling and squaring with a fixed degree-13 Pade approximant.

    Accepts a single square matrix or a stack ``(..., D, D)``; a common scaling
    power is used across the stack.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] != a.shape[-2]:
        raise ValueError("matrix_exponential needs square matrices")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix_exponential got non-finite entries")
    dim = a.shape[-1]
    if dim == 0:
        return a.copy()
    if not np.any(a):
        return np.broadcast_to(np.eye(dim), a.shape).copy()
    norm1 = np.max(np.sum(np.abs(a), axis=-2)) if a.size else 0.0
    s = max(0, int(np.ceil(np.log2(norm1 / _THETA13)))) if norm1 > _THETA13 else 0
    x = a / (2.0**s)
    b = _PADE13
    x2 = x @ x
    x4 = x2 @ x2
    x6 = x4 @ x2
    diag = np.arange(dim)
    w = b[7] * x6 + b[5] * x4 + b[3] * x2
    w[..., diag, diag] += b[1]
    u = x @ (x6 @ (b[13] * x6 + b[11] * x4 + b[9] * x2) + w)
    v = x6 @ (b[12] * x6 + b[10] * x4 + b[8] * x2) + b[6] * x6 + b[4] * x4 + b[2] * x2
    v[..., diag, diag] += b[0]
    r = np.linalg.solve(v - u, v + u)
    for _ in range(s):
        r = r @ r
    return r


def expm_frechet(a, e) -> np.ndarray:
    """Frechet derivative ``L(A, E)`` of the exponential, from the block identity
    ``exp([[A, E], [0, A]]) = [[exp(A), L(A, E)], [0, exp(A)]]``."""
    a = np.asarray(a, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    dim = a.shape[-1]
    block = np.zeros(a.shape[:-2] + (2 * dim, 2 * dim))
    block[..., :dim, :dim] = a
    block[..., dim:, dim:] = a
    block[..., :dim, dim:] = e
    return matrix_exponential(block)[..., :dim, dim:]


def trivialize(params, dim: int, ncols: int, base: np.ndarray | None = None) -> np.ndarray:
    """Orthonormal ``dim x ncols`` frame: first ``ncols`` columns of ``base @ exp(A)``."""
    if not 0 < ncols <= dim:
        raise ValueError(f"need 0 < ncols <= dim, got ncols={ncols}, dim={dim}")
    q = matrix_exponential(skew_embed(params, dim))
    if base is not None:
        q = base @ q
    return q[..., :, :ncols]


def pullback_gradient(params, dim: int, ncols: int, frame_gradient, base: np.ndarray | None = None) -> np.ndarray:
    """Chain rule from ``dloss/dV`` to ``dloss/dparams``.

    The adjoint of ``E -> L(A, E)`` is ``G -> L(A^T, G)``.
    """
    g = np.asarray(frame_gradient, dtype=np.float64)
    a = skew_embed(params, dim)
    gq = np.zeros(g.shape[:-1] + (dim,))
    gq[..., :ncols] = g
    if base is not None:
        gq = base.T @ gq
    return skew_gradient(expm_frechet(np.swapaxes(a, -1, -2), gq))


def frame_with_gradient(params, dim: int, ncols: int, frame_loss_grad, base=None):
    """Evaluate ``loss(V(params))`` and its coordinate gradient in one pass.

    ``frame_loss_grad(V) -> (loss, dloss/dV)``.
    """
    v = trivialize(params, dim, ncols, base)
    loss, gv = frame_loss_grad(v)
    return loss, pullback_gradient(params, dim, ncols, gv, base)


def haar_orthogonal(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed element of ``O(dim)`` (both determinants)."""
    z = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(z)
    return q * np.sign(np.diag(r))


def complete_frame(frame: np.ndarray) -> np.ndarray:
    """Orthogonal ``D x D`` matrix whose first ``K`` columns equal ``frame``."""
    v = np.asarray(frame, dtype=np.float64)
    dim, k = v.shape
    if not np.allclose(v.T @ v, np.eye(k), atol=1e-10):
        raise ValueError("frame columns are not orthonormal")
    if k == dim:
        return v.copy()
    # orthonormal complement from the projector onto the orthogonal space
    proj = np.eye(dim) - v @ v.T
    w, vecs = np.linalg.eigh(proj)
    return np.column_stack([v, vecs[:, -(dim - k):]])
