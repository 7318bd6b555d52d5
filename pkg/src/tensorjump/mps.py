"""Matrix product states in mixed-canonical form.

Site tensors have legs ``(left bond, physical, right bond)``. Tensors left of the
orthogonality center are left isometries, tensors right of it are right isometries, and
the center tensor carries the (deliberately unnormalized) norm of the state.

Basis convention: ``|0> = (1, 0)`` is spin down, ``|1> = (0, 1)`` is spin up; site 0 is
the most significant factor in dense (Kronecker) ordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .tensor_core import factorize_bond

if TYPE_CHECKING:
    from numpy.typing import NDArray

DENSE_CAP = 14


class AnnihilatedStateError(ArithmeticError):
    """A local operator mapped the state to (numerically) zero."""


@dataclass(frozen=True)
class MpsState:
    """Immutable MPS value; every operation returns a new state sharing untouched tensors."""

    tensors: tuple[NDArray[np.complex128], ...]
    center: int = 0

    def __post_init__(self) -> None:
        if not self.tensors:
            raise ValueError("an MPS needs at least one site")
        if not 0 <= self.center < len(self.tensors):
            raise ValueError(f"center {self.center} outside 0..{len(self.tensors) - 1}")

    @property
    def n_sites(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> list[int]:
        """Internal bond dimensions (length ``n_sites - 1``)."""
        return [t.shape[2] for t in self.tensors[:-1]]

    @property
    def max_bond(self) -> int:
        return max(self.bond_dims, default=1)

    def n_parameters(self) -> int:
        return int(sum(t.size for t in self.tensors))

    # constructors -----------------------------------------------------------------

    @classmethod
    def from_product_state(cls, bits: Sequence[int]) -> MpsState:
        """Computational-basis product state, all bonds of dimension 1, center at site 0."""
        if len(bits) == 0:
            raise ValueError("empty bit list")
        vectors = []
        for b in bits:
            if b not in (0, 1):
                raise ValueError(f"bits must be 0 or 1, got {b!r}")
            v = np.zeros(2, dtype=complex)
            v[b] = 1.0
            vectors.append(v)
        return cls.from_local_vectors(vectors)

    @classmethod
    def from_local_vectors(cls, vectors: Sequence[NDArray[np.complex128]]) -> MpsState:
        """Product state from per-site vectors (each normalized here)."""
        if len(vectors) == 0:
            raise ValueError("empty vector list")
        tensors = []
        for v in vectors:
            v = np.asarray(v, dtype=complex)
            nrm = np.linalg.norm(v)
            if v.shape != (2,) or nrm == 0:
                raise ValueError("local vectors must be non-zero 2-vectors")
            tensors.append((v / nrm).reshape(1, 2, 1))
        return cls(tuple(tensors), 0)

    @classmethod
    def from_dense(cls, psi: NDArray[np.complex128], n_sites: int) -> MpsState:
        """Exact MPS of a dense vector (no truncation, zero singular values kept).

        Bonds come out at their maximal dimension ``min(2**k, 2**(n-k))``. The center is
        the last site.
        """
        psi = np.asarray(psi, dtype=complex)
        if psi.shape != (2**n_sites,):
            raise ValueError(f"expected a vector of length {2**n_sites}")
        tensors = []
        rest = psi.reshape(1, -1)
        for _ in range(n_sites - 1):
            chi = rest.shape[0]
            mat = rest.reshape(chi * 2, -1)
            u, s, vh = np.linalg.svd(mat, full_matrices=False)
            tensors.append(u.reshape(chi, 2, -1))
            rest = s[:, None] * vh
        tensors.append(rest.reshape(rest.shape[0], 2, 1))
        return cls(tuple(tensors), n_sites - 1)

    # dense conversion -------------------------------------------------------------

    def to_dense(self, cap: int = DENSE_CAP) -> NDArray[np.complex128]:
        """All ``2**N`` amplitudes, site 0 most significant."""
        if self.n_sites > cap:
            raise ValueError(f"to_dense refused: {self.n_sites} sites exceeds cap {cap}")
        out = self.tensors[0]
        for t in self.tensors[1:]:
            out = np.tensordot(out, t, axes=(out.ndim - 1, 0))
        return out.reshape(-1)

    # gauge ------------------------------------------------------------------------

    def move_center(self, target: int) -> MpsState:
        """Shift the orthogonality center with QR sweeps (rightwards) or LQ sweeps (leftwards)."""
        if not 0 <= target < self.n_sites:
            raise ValueError(f"target {target} outside 0..{self.n_sites - 1}")
        if target == self.center:
            return self
        tensors = list(self.tensors)
        k = self.center
        while k < target:
            q, r = factorize_bond(tensors[k], 2, "left")
            tensors[k] = q
            tensors[k + 1] = np.tensordot(r, tensors[k + 1], axes=(1, 0))
            k += 1
        while k > target:
            l_fac, q = factorize_bond(tensors[k], 1, "right")
            tensors[k] = q
            tensors[k - 1] = np.tensordot(tensors[k - 1], l_fac, axes=(2, 0))
            k -= 1
        return MpsState(tuple(tensors), target)

    def recanonicalize_from_right(self) -> MpsState:
        """LQ sweep from the last site to site 0.

        Restores mixed-canonical form with center 0 whatever the current gauge, e.g. after
        non-unitary single-site operators were applied on every site.
        """
        tensors = list(self.tensors)
        for k in range(self.n_sites - 1, 0, -1):
            l_fac, q = factorize_bond(tensors[k], 1, "right")
            tensors[k] = q
            tensors[k - 1] = np.tensordot(tensors[k - 1], l_fac, axes=(2, 0))
        return MpsState(tuple(tensors), 0)

    def is_canonical(self, tol: float = 1e-10) -> bool:
        for k, t in enumerate(self.tensors):
            if k < self.center:
                g = np.einsum("aib,aic->bc", t.conj(), t)
            elif k > self.center:
                g = np.einsum("aib,cib->ac", t, t.conj())
            else:
                continue
            if not np.allclose(g, np.eye(g.shape[0]), atol=tol, rtol=0):
                return False
        return True

    # local algebra ----------------------------------------------------------------

    def norm_squared(self) -> float:
        """``<psi|psi>`` read off the center tensor."""
        c = self.tensors[self.center]
        return float(np.real(np.vdot(c, c)))

    def scaled(self, factor: complex) -> MpsState:
        tensors = list(self.tensors)
        tensors[self.center] = tensors[self.center] * factor
        return MpsState(tuple(tensors), self.center)

    def normalized(self) -> MpsState:
        nrm2 = self.norm_squared()
        if nrm2 <= 0:
            raise AnnihilatedStateError("cannot normalize a zero state")
        return self.scaled(1.0 / np.sqrt(nrm2))

    def apply_local(self, site: int, op: NDArray[np.complex128], renormalize: bool = False) -> MpsState:
        """Apply a single-site operator at ``site`` (the center moves there first).

        Raises:
            AnnihilatedStateError: If the result has zero norm.
        """
        op = np.asarray(op)
        if op.shape != (2, 2):
            raise ValueError(f"local operator must be 2x2, got {op.shape}")
        s = self.move_center(site)
        before = s.norm_squared()
        new = np.einsum("ij,ajb->aib", op, s.tensors[site])
        after = float(np.real(np.vdot(new, new)))
        if after <= 1e-28 * max(before, 1e-300):
            raise AnnihilatedStateError(f"operator annihilates the state at site {site}")
        if renormalize:
            new = new / np.sqrt(after)
        tensors = list(s.tensors)
        tensors[site] = new
        return MpsState(tuple(tensors), site)

    def expect_local(self, site: int, op: NDArray[np.complex128]) -> complex:
        """``<psi|op_site|psi> / <psi|psi>`` evaluated at the center."""
        s = self.move_center(site)
        c = s.tensors[site]
        num = np.einsum("aib,ij,ajb->", c.conj(), op, c)
        return complex(num / np.vdot(c, c))

    def local_density_matrices(self) -> tuple[MpsState, NDArray[np.complex128]]:
        """Normalized one-site reduced density matrices of every site, shape ``(N, 2, 2)``.

        Computed in a single center sweep to the right end. Returns the moved state too,
        so callers can keep using the gauge that was paid for.
        """
        s = self.move_center(0)
        tensors = list(s.tensors)
        nrm2 = s.norm_squared()
        if nrm2 <= 0:
            raise AnnihilatedStateError("zero state has no reduced density matrices")
        rhos = np.empty((self.n_sites, 2, 2), dtype=complex)
        for k in range(self.n_sites):
            c = tensors[k]
            rhos[k] = np.einsum("aib,ajb->ij", c, c.conj()) / nrm2
            if k < self.n_sites - 1:
                q, r = factorize_bond(c, 2, "left")
                tensors[k] = q
                tensors[k + 1] = np.tensordot(r, tensors[k + 1], axes=(1, 0))
        return MpsState(tuple(tensors), self.n_sites - 1), rhos
