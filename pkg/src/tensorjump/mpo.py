"""Matrix product operators, legs ``(left bond, physical out, physical in, right bond)``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from numpy.typing import NDArray

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)

MPO_DENSE_CAP = 12


@dataclass(frozen=True)
class MpOperator:
    tensors: tuple[NDArray[np.complex128], ...]

    @property
    def n_sites(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> list[int]:
        return [t.shape[3] for t in self.tensors[:-1]]

    @classmethod
    def identity(cls, n: int) -> MpOperator:
        return cls(tuple(I2.reshape(1, 2, 2, 1).copy() for _ in range(n)))


def build_tfi(n: int, j_coupling: float, g_field: float) -> MpOperator:
    """Open-boundary transverse-field Ising chain ``-J sum Z_i Z_{i+1} - g sum X_i``.

    Bulk tensor in block form ``[[I, 0, 0], [Z, 0, 0], [-gX, -JZ, I]]`` (row = left bond,
    column = right bond); the first site keeps the last row, the last site the first column.
    """
    if n < 1:
        raise ValueError("need at least one site")
    w = np.zeros((3, 2, 2, 3), dtype=complex)
    w[0, :, :, 0] = I2
    w[1, :, :, 0] = Z
    w[2, :, :, 0] = -g_field * X
    w[2, :, :, 1] = -j_coupling * Z
    w[2, :, :, 2] = I2
    if n == 1:
        return MpOperator(((-g_field * X).reshape(1, 2, 2, 1),))
    first = w[2:3]
    last = w[:, :, :, 0:1]
    return MpOperator((first,) + tuple(w.copy() for _ in range(n - 2)) + (last,))


def mpo_to_dense(h: MpOperator, cap: int = MPO_DENSE_CAP) -> NDArray[np.complex128]:
    """``2**n x 2**n`` matrix of the MPO, site 0 most significant."""
    n = h.n_sites
    if n > cap:
        raise ValueError(f"mpo_to_dense refused: {n} sites exceeds cap {cap}")
    # running tensor: (out_0..out_k, in_0..in_k, right bond), kept as (dim_out, dim_in, bond)
    acc = h.tensors[0][0]  # (out, in, right)
    for w in h.tensors[1:]:
        acc = np.einsum("abx,xijy->aibjy", acc, w)
        d_out = acc.shape[0] * acc.shape[1]
        acc = acc.reshape(d_out, d_out, acc.shape[-1])
    return acc[:, :, 0]
