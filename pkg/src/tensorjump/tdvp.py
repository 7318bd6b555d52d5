"""Symmetric one-site and two-site TDVP sweeps for ``exp(-i H dt)`` on an MPS.

Environment conventions: a left block ``L[x, w, a]`` and a right block ``R[y, w, b]``
carry the bra bond first, the MPO bond in the middle and the ket bond last.

Each sweep evolves local tensors forward by ``dt/2`` going left to right and again by
``dt/2`` going right to left; the bond (or site) tensor exposed between two local
updates is evolved backwards by ``dt/2``. The last site (pair) of the forward sweep is
evolved once by the full ``dt``. A sweep starts from and returns to center 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal

import numpy as np

from .mps import MpsState
from .tensor_core import factorize_bond, svd_truncate

if TYPE_CHECKING:
    from numpy.typing import NDArray

    from .mpo import MpOperator

DEFAULT_THRESHOLD = 1e-10

_EDGE = np.ones((1, 1, 1), dtype=complex)


def _left_step(left: NDArray, a: NDArray, w: NDArray) -> NDArray:
    t = np.tensordot(left, a, axes=(2, 0))  # (x, w, j, b)
    t = np.tensordot(t, w, axes=([1, 2], [0, 2]))  # (x, b, i, v)
    t = np.tensordot(a.conj(), t, axes=([0, 1], [0, 2]))  # (y, b, v)
    return t.transpose(0, 2, 1)


def _right_step(right: NDArray, a: NDArray, w: NDArray) -> NDArray:
    t = np.tensordot(a, right, axes=(2, 2))  # (b, j, y, v)
    t = np.tensordot(w, t, axes=([2, 3], [1, 3]))  # (u, i, b, y)
    t = np.tensordot(a.conj(), t, axes=([1, 2], [1, 3]))  # (x, u, b)
    return t


@dataclass
class EnvironmentStack:
    """Left blocks ``left[k]`` cover sites ``< k``; right blocks ``right[k]`` cover sites ``> k``."""

    left: list[NDArray | None]
    right: list[NDArray | None]

    @classmethod
    def build(cls, state: MpsState, h: MpOperator) -> EnvironmentStack:
        """Environments for a state whose center is site 0."""
        n = state.n_sites
        if h.n_sites != n:
            raise ValueError("state and operator lengths differ")
        left: list[NDArray | None] = [None] * n
        right: list[NDArray | None] = [None] * n
        left[0] = _EDGE
        right[n - 1] = _EDGE
        for k in range(n - 1, 0, -1):
            right[k - 1] = _right_step(right[k], state.tensors[k], h.tensors[k])
        return cls(left, right)


def expectation(state: MpsState, h: MpOperator) -> complex:
    """``<psi|H|psi> / <psi|psi>`` by full contraction."""
    env = _EDGE
    for a, w in zip(state.tensors, h.tensors):
        env = _left_step(env, a, w)
    c = state.tensors[state.center]
    return complex(env[0, 0, 0] / np.vdot(c, c))


def _site_matrix(left: NDArray, w: NDArray, right: NDArray) -> NDArray:
    h = np.einsum("xwa,wijv,yvb->xiyajb", left, w, right)
    d = left.shape[0] * w.shape[1] * right.shape[0]
    return h.reshape(d, d)


def _pair_matrix(left: NDArray, w1: NDArray, w2: NDArray, right: NDArray) -> NDArray:
    w12 = np.tensordot(w1, w2, axes=(3, 0))  # (w, i, j, k, l, u)
    h = np.einsum("xwa,wijklu,yub->xikyajlb", left, w12, right)
    d = left.shape[0] * w1.shape[1] * w2.shape[1] * right.shape[0]
    return h.reshape(d, d)


def _bond_matrix(left: NDArray, right: NDArray) -> NDArray:
    h = np.einsum("xwa,ywb->xyab", left, right)
    d = left.shape[0] * right.shape[0]
    return h.reshape(d, d)


def _evolve(h: NDArray, v: NDArray, tau: float) -> NDArray:
    """``exp(-i h tau) v`` for Hermitian ``h`` (dense; blocks here are at most 64 wide)."""
    h = 0.5 * (h + h.conj().T)
    w, vecs = np.linalg.eigh(h)
    flat = v.reshape(-1)
    return (vecs @ (np.exp(-1j * tau * w) * (vecs.conj().T @ flat))).reshape(v.shape)


def one_site_sweep(state: MpsState, h: MpOperator, dt: float) -> MpsState:
    n = state.n_sites
    s = state.move_center(0)
    tensors = list(s.tensors)
    env = EnvironmentStack.build(s, h)
    ws = h.tensors
    if n == 1:
        tensors[0] = _evolve(_site_matrix(env.left[0], ws[0], env.right[0]), tensors[0], dt)
        return MpsState(tuple(tensors), 0)
    half = 0.5 * dt
    for k in range(n - 1):
        m = _evolve(_site_matrix(env.left[k], ws[k], env.right[k]), tensors[k], half)
        q, c = factorize_bond(m, 2, "left")
        tensors[k] = q
        env.left[k + 1] = _left_step(env.left[k], q, ws[k])
        c = _evolve(_bond_matrix(env.left[k + 1], env.right[k]), c, -half)
        tensors[k + 1] = np.tensordot(c, tensors[k + 1], axes=(1, 0))
    last = n - 1
    tensors[last] = _evolve(_site_matrix(env.left[last], ws[last], env.right[last]), tensors[last], dt)
    for k in range(n - 1, 0, -1):
        c, q = factorize_bond(tensors[k], 1, "right")
        tensors[k] = q
        env.right[k - 1] = _right_step(env.right[k], q, ws[k])
        c = _evolve(_bond_matrix(env.left[k], env.right[k - 1]), c, -half)
        m = np.tensordot(tensors[k - 1], c, axes=(2, 0))
        tensors[k - 1] = _evolve(_site_matrix(env.left[k - 1], ws[k - 1], env.right[k - 1]), m, half)
    return MpsState(tuple(tensors), 0)


def two_site_sweep(
    state: MpsState,
    h: MpOperator,
    dt: float,
    chi_max: int,
    threshold: float = DEFAULT_THRESHOLD,
) -> MpsState:
    n = state.n_sites
    if n == 1:
        return one_site_sweep(state, h, dt)
    s = state.move_center(0)
    tensors = list(s.tensors)
    env = EnvironmentStack.build(s, h)
    ws = h.tensors
    half = 0.5 * dt

    def evolve_pair(k: int, tau: float) -> NDArray:
        theta = np.tensordot(tensors[k], tensors[k + 1], axes=(2, 0))
        return _evolve(_pair_matrix(env.left[k], ws[k], ws[k + 1], env.right[k + 1]), theta, tau)

    for k in range(n - 2):
        split = svd_truncate(evolve_pair(k, half), 2, chi_max, threshold)
        tensors[k] = split.left_isometry
        env.left[k + 1] = _left_step(env.left[k], tensors[k], ws[k])
        m = split.singular_values[:, None, None] * split.right_isometry
        tensors[k + 1] = _evolve(_site_matrix(env.left[k + 1], ws[k + 1], env.right[k + 1]), m, -half)
    k = n - 2
    split = svd_truncate(evolve_pair(k, dt), 2, chi_max, threshold)
    tensors[k + 1] = split.right_isometry
    env.right[k] = _right_step(env.right[k + 1], tensors[k + 1], ws[k + 1])
    tensors[k] = split.left_isometry * split.singular_values
    for k in range(n - 3, -1, -1):
        m = _evolve(_site_matrix(env.left[k + 1], ws[k + 1], env.right[k + 1]), tensors[k + 1], -half)
        tensors[k + 1] = m
        split = svd_truncate(evolve_pair(k, half), 2, chi_max, threshold)
        tensors[k + 1] = split.right_isometry
        env.right[k] = _right_step(env.right[k + 1], tensors[k + 1], ws[k + 1])
        tensors[k] = split.left_isometry * split.singular_values
    return MpsState(tuple(tensors), 0)


def tdvp_sweep(
    state: MpsState,
    h: MpOperator,
    dt: float,
    mode: Literal["one_site", "two_site"],
    chi_max: int,
    threshold: float = DEFAULT_THRESHOLD,
) -> MpsState:
    """One full symmetric TDVP step of length ``dt``; returns a state centered at site 0."""
    if dt == 0:
        return state
    if mode == "one_site":
        return one_site_sweep(state, h, dt)
    if mode == "two_site":
        return two_site_sweep(state, h, dt, chi_max, threshold)
    raise ValueError(f"unknown TDVP mode {mode!r}")


def choose_mode(state: MpsState, chi_max: int) -> Literal["one_site", "two_site"]:
    """Two-site while some bond is below its reachable cap, one-site afterwards.

    The cap of bond ``k`` is ``min(chi_max, 2**(k+1), 2**(N-k-1))``; bonds next to the
    chain ends can never grow past the exact Schmidt rank, so they do not count.
    """
    n = state.n_sites
    for k, d in enumerate(state.bond_dims):
        if d < min(chi_max, 2 ** min(k + 1, n - k - 1, 62)):
            return "two_site"
    return "one_site"


def dynamic_step(
    state: MpsState,
    h: MpOperator,
    dt: float,
    chi_max: int,
    threshold: float = DEFAULT_THRESHOLD,
) -> MpsState:
    return tdvp_sweep(state, h, dt, choose_mode(state, chi_max), chi_max, threshold)
