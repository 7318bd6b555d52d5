"""Dense tensor kernels shared by the MPS, MPO and TDVP code.

Tensors are plain ``numpy`` arrays (row-major). Every function here is pure: inputs
are never modified in place.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal, Sequence

import numpy as np
import scipy.linalg

if TYPE_CHECKING:
    from numpy.typing import NDArray

DENSE_EXPM_MAX_DIM = 64
KRYLOV_MAX_DIM = 16
KRYLOV_TOL = 1e-12


@dataclass(frozen=True)
class SvdSplit:
    """Result of a truncated SVD across one bond.

    Attributes:
        left_isometry: ``U`` reshaped to the left legs plus the new bond (last axis).
        singular_values: Kept singular values, descending.
        right_isometry: ``V^dagger`` reshaped to the new bond (first axis) plus the right legs.
        discarded_weight: Sum of squared dropped singular values.
    """

    left_isometry: NDArray[np.complex128]
    singular_values: NDArray[np.float64]
    right_isometry: NDArray[np.complex128]
    discarded_weight: float

    @property
    def bond_dim(self) -> int:
        return int(self.singular_values.shape[0])


def contract(
    a: NDArray[np.complex128],
    b: NDArray[np.complex128],
    paired_axes: Sequence[tuple[int, int]],
) -> NDArray[np.complex128]:
    """Sum over the paired axes of ``a`` and ``b``.

    The result carries the free axes of ``a`` followed by the free axes of ``b``.

    Raises:
        ValueError: If a paired axis has mismatched dimensions.
    """
    axes_a = [p[0] for p in paired_axes]
    axes_b = [p[1] for p in paired_axes]
    for ia, ib in zip(axes_a, axes_b):
        if a.shape[ia] != b.shape[ib]:
            msg = f"cannot pair axis {ia} (dim {a.shape[ia]}) with axis {ib} (dim {b.shape[ib]})"
            raise ValueError(msg)
    return np.tensordot(a, b, axes=(axes_a, axes_b))


def _as_matrix(t: NDArray[np.complex128], split_point: int) -> tuple[NDArray[np.complex128], tuple, tuple]:
    if not 0 < split_point < t.ndim:
        msg = f"split point {split_point} outside 1..{t.ndim - 1}"
        raise ValueError(msg)
    left_shape = t.shape[:split_point]
    right_shape = t.shape[split_point:]
    mat = t.reshape(int(np.prod(left_shape)), int(np.prod(right_shape)))
    return mat, left_shape, right_shape


def factorize_bond(
    t: NDArray[np.complex128],
    split_point: int,
    direction: Literal["left", "right"],
) -> tuple[NDArray[np.complex128], NDArray[np.complex128]]:
    """QR (``direction="left"``) or LQ (``direction="right"``) across ``split_point``.

    ``left`` returns ``(Q, R)`` with ``Q`` a left isometry; ``right`` returns ``(L, Q)``
    with ``Q`` a right isometry. Contracting the last axis of the first factor with the
    first axis of the second reproduces ``t``.
    """
    mat, left_shape, right_shape = _as_matrix(t, split_point)
    if direction == "left":
        q, r = np.linalg.qr(mat)
        k = q.shape[1]
        return q.reshape(*left_shape, k), r.reshape(k, *right_shape)
    if direction == "right":
        q, r = np.linalg.qr(mat.conj().T)
        k = q.shape[1]
        return r.conj().T.reshape(*left_shape, k), q.conj().T.reshape(k, *right_shape)
    msg = f"direction must be 'left' or 'right', got {direction!r}"
    raise ValueError(msg)


def svd_truncate(
    t: NDArray[np.complex128],
    split_point: int,
    chi_max: int,
    threshold: float,
) -> SvdSplit:
    """SVD across ``split_point`` keeping at most ``chi_max`` values above ``threshold * s_max``.

    At least one singular value is always kept. Ties are cut in the order returned by
    LAPACK, which is deterministic for a given input.
    """
    if chi_max < 1:
        msg = f"chi_max must be >= 1, got {chi_max}"
        raise ValueError(msg)
    if threshold < 0:
        msg = f"threshold must be >= 0, got {threshold}"
        raise ValueError(msg)
    mat, left_shape, right_shape = _as_matrix(t, split_point)
    try:
        u, s, vh = np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        u, s, vh = scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")
    n_above = int(np.count_nonzero(s > threshold * s[0])) if s[0] > 0 else 0
    keep = max(1, min(chi_max, n_above))
    discarded = float(np.sum(s[keep:] ** 2))
    return SvdSplit(
        left_isometry=u[:, :keep].reshape(*left_shape, keep),
        singular_values=s[:keep],
        right_isometry=vh[:keep].reshape(keep, *right_shape),
        discarded_weight=discarded,
    )


def _is_hermitian(h: NDArray[np.complex128]) -> bool:
    return np.allclose(h, h.conj().T, rtol=0.0, atol=1e-13 * max(1.0, float(np.abs(h).max(initial=0.0))))


def _expm_dense(h: NDArray[np.complex128], v: NDArray[np.complex128], scale: complex) -> NDArray[np.complex128]:
    if _is_hermitian(h):
        w, vecs = np.linalg.eigh(h)
        return vecs @ (np.exp(scale * w) * (vecs.conj().T @ v))
    return scipy.linalg.expm(scale * h) @ v


def _expm_lanczos(
    h: NDArray[np.complex128], v: NDArray[np.complex128], scale: complex
) -> NDArray[np.complex128] | None:
    """Single Lanczos projection; returns None when the residual estimate misses ``KRYLOV_TOL``."""
    beta0 = np.linalg.norm(v)
    if beta0 == 0:
        return v.copy()
    m = min(KRYLOV_MAX_DIM, v.shape[0])
    basis = np.zeros((m, v.shape[0]), dtype=complex)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    basis[0] = v / beta0
    k = m
    for j in range(m):
        w = h @ basis[j]
        alpha[j] = np.real(np.vdot(basis[j], w))
        w = w - alpha[j] * basis[j] - (beta[j - 1] * basis[j - 1] if j > 0 else 0)
        # full reorthogonalisation; m is tiny
        w -= basis[: j + 1].T @ (basis[: j + 1].conj() @ w)
        b = np.linalg.norm(w)
        beta[j] = b
        if b < 1e-14 * beta0:
            k = j + 1
            break
        if j + 1 < m:
            basis[j + 1] = w / b
    tri = np.diag(alpha[:k]) + np.diag(beta[: k - 1], 1) + np.diag(beta[: k - 1], -1)
    ew, ev = np.linalg.eigh(tri)
    coeffs = ev @ (np.exp(scale * ew) * ev[0].conj())
    if k == m and abs(beta[k - 1] * coeffs[-1]) > KRYLOV_TOL:
        return None
    return beta0 * (basis[:k].T @ coeffs)


def expm_apply(h: NDArray[np.complex128], v: NDArray[np.complex128], scale: complex) -> NDArray[np.complex128]:
    """Return ``exp(scale * h) @ v``.

    Dense eigendecomposition up to ``DENSE_EXPM_MAX_DIM``; Lanczos above that for
    Hermitian ``h``, falling back to the dense route if the Krylov residual is not met.
    """
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        msg = f"generator must be square, got shape {h.shape}"
        raise ValueError(msg)
    if h.shape[0] != v.shape[0]:
        msg = f"generator dim {h.shape[0]} does not match vector dim {v.shape[0]}"
        raise ValueError(msg)
    if scale == 0:
        return np.array(v, dtype=complex, copy=True)
    if h.shape[0] > DENSE_EXPM_MAX_DIM and _is_hermitian(h):
        out = _expm_lanczos(h, v.astype(complex), scale)
        if out is not None:
            return out
    return _expm_dense(h, v, scale)
