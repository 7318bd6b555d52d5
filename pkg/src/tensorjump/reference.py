"""Brute-force dense solvers used as ground truth for small chains.

``integrate_master`` integrates the time-local master equation on the full density
matrix. ``dense_trajectories`` repeats the tensor-jump stepper on dense state vectors,
batched over trajectories, with the same step schedule, rate times and random streams,
so any ensemble-level disagreement with the MPS stepper isolates tensor-network error.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import TYPE_CHECKING, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .mpo import I2, X, Z
from .noise import NoiseModel, gamma_at
from .tjm import (
    NEGATIVE_PROBABILITY_TOL,
    JumpEvent,
    RandomStream,
    TrajectoryResult,
    rates_at,
    step_schedule,
)

if TYPE_CHECKING:
    from numpy.typing import NDArray

MASTER_CAP = 6
TRAJECTORY_CAP = 12
RK4_SUBSTEPS = 10
DEFAULT_CHUNK = 256


class SizeCapError(ValueError):
    """A dense solver was asked for more sites than it supports."""


def _check_cap(n_sites: int, cap: int, what: str) -> None:
    if n_sites > cap:
        raise SizeCapError(f"{what} supports at most {cap} sites, got {n_sites}")


def embed(op: NDArray[np.complex128], site: int, n_sites: int) -> NDArray[np.complex128]:
    """``I x ... x op x ... x I`` with ``op`` at ``site`` (site 0 most significant)."""
    return reduce(np.kron, [op if k == site else I2 for k in range(n_sites)], np.eye(1, dtype=complex))


def tfi_dense(n_sites: int, j_coupling: float, g_field: float) -> NDArray[np.complex128]:
    """``-J sum Z_i Z_{i+1} - g sum X_i`` with open boundaries, built term by term."""
    h = np.zeros((2**n_sites, 2**n_sites), dtype=complex)
    for i in range(n_sites - 1):
        h -= j_coupling * embed(Z, i, n_sites) @ embed(Z, i + 1, n_sites)
    for i in range(n_sites):
        h -= g_field * embed(X, i, n_sites)
    return h


def local_expectations(rhos: NDArray[np.complex128], n_sites: int, op: NDArray[np.complex128]) -> NDArray[np.float64]:
    """``Tr(op_i rho)`` for every site, for a stack of density matrices ``(T, d, d)``.

    Returns:
        Array of shape ``(T, n_sites)``.
    """
    rhos = np.asarray(rhos)
    t = rhos.shape[0]
    out = np.empty((t, n_sites))
    for i in range(n_sites):
        left, right = 2**i, 2 ** (n_sites - i - 1)
        r = rhos.reshape(t, left, 2, right, left, 2, right)
        red = np.einsum("taibajb->tij", r)
        out[:, i] = np.einsum("tij,ji->t", red, op).real
    return out


# master equation ----------------------------------------------------------------------


def _dissipator_superop(l_op: sp.csr_matrix, dim: int) -> sp.csr_matrix:
    """Column-stacked ``rho -> L rho L^dagger - {L^dagger L, rho}/2``."""
    eye = sp.identity(dim, dtype=complex, format="csr")
    ldl = (l_op.conj().T @ l_op).tocsr()
    return (sp.kron(l_op.conj(), l_op) - 0.5 * sp.kron(eye, ldl) - 0.5 * sp.kron(ldl.T, eye)).tocsr()


@dataclass(frozen=True)
class MasterResult:
    """Density matrices on the output grid plus diagnostics.

    Attributes:
        times: Output times, shape ``(T,)``.
        rhos: Density matrices, shape ``(T, d, d)``.
        min_eigenvalues: Smallest eigenvalue of each ``rho`` (positivity is monitored,
            not enforced).
        trace_drift: ``max |Tr rho - 1|`` over the run.
    """

    times: NDArray[np.float64]
    rhos: NDArray[np.complex128]
    min_eigenvalues: NDArray[np.float64]
    trace_drift: float

    def local(self, op: NDArray[np.complex128]) -> NDArray[np.float64]:
        n = int(round(np.log2(self.rhos.shape[1])))
        return local_expectations(self.rhos, n, op)


def integrate_master(
    h: NDArray[np.complex128],
    noise: NoiseModel,
    rho0: NDArray[np.complex128],
    dt: float,
    n_steps: int,
    substeps: int = RK4_SUBSTEPS,
    sample_every: int = 1,
) -> MasterResult:
    """Classical RK4 on ``d rho/dt = -i[H, rho] + sum_k gamma_k(t) D[c L_k] rho``.

    Each output interval ``dt`` is split into ``substeps`` RK4 steps; the generator is
    evaluated at every stage time from the physical (unshifted) rates.

    Raises:
        SizeCapError: For more than ``MASTER_CAP`` sites.
    """
    dim = h.shape[0]
    n_sites = int(round(np.log2(dim)))
    _check_cap(n_sites, MASTER_CAP, "integrate_master")
    eye = sp.identity(dim, dtype=complex, format="csr")
    hs = sp.csr_matrix(h)
    l_h = (-1j * (sp.kron(eye, hs) - sp.kron(hs.T, eye))).tocsr()
    per_kind = {k: sp.csr_matrix((dim * dim, dim * dim), dtype=complex) for k in noise.kinds}
    for ch in noise.channels:
        per_kind[ch.kind] = per_kind[ch.kind] + _dissipator_superop(sp.csr_matrix(embed(ch.op, ch.site, n_sites)), dim)
    kinds = list(noise.kinds)
    supers = [per_kind[k].tocsr() for k in kinds]
    scheds = noise.schedules

    def rhs(t: float, v: NDArray[np.complex128]) -> NDArray[np.complex128]:
        out = l_h @ v
        for sched, s in zip(scheds, supers):
            out += gamma_at(sched, t) * (s @ v)
        return out

    v = np.asarray(rho0, dtype=complex).reshape(-1, order="F").copy()
    tau = dt / substeps
    times = [0.0]
    rhos = [np.asarray(rho0, dtype=complex).copy()]
    t = 0.0
    for step in range(1, n_steps + 1):
        t0 = (step - 1) * dt
        for sub in range(substeps):
            t = t0 + sub * tau
            k1 = rhs(t, v)
            k2 = rhs(t + 0.5 * tau, v + 0.5 * tau * k1)
            k3 = rhs(t + 0.5 * tau, v + 0.5 * tau * k2)
            k4 = rhs(t + tau, v + tau * k3)
            v = v + (tau / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if step % sample_every == 0 or step == n_steps:
            times.append(step * dt)
            rhos.append(v.reshape(dim, dim, order="F").copy())
    rho_arr = np.array(rhos)
    herm = 0.5 * (rho_arr + rho_arr.conj().transpose(0, 2, 1))
    min_eigs = np.array([np.linalg.eigvalsh(r)[0] for r in herm])
    drift = float(np.max(np.abs(np.trace(rho_arr, axis1=1, axis2=2) - 1.0)))
    return MasterResult(np.array(times), rho_arr, min_eigs, drift)


# dense trajectories -------------------------------------------------------------------


def _full_diagonal(site_factor: NDArray[np.complex128], n_sites: int) -> NDArray[np.float64]:
    d = np.diag(site_factor)
    if not np.allclose(site_factor, np.diag(d), rtol=0, atol=1e-15):
        raise NotImplementedError("dense trajectories assume diagonal local dissipators")
    return reduce(np.kron, [d.real] * n_sites, np.ones(1))


def _site_view(psi: NDArray[np.complex128], site: int, n_sites: int) -> NDArray[np.complex128]:
    return psi.reshape(psi.shape[0], 2**site, 2, 2 ** (n_sites - site - 1))


def _measure_batch(
    psi: NDArray[np.complex128], n_sites: int, observables: Sequence[str], sites: Sequence[int]
) -> NDArray[np.float64]:
    """Observable values of normalized states, shape ``(B, n_observables, n_sites_measured)``."""
    out = np.empty((psi.shape[0], len(observables), len(sites)))
    for j, site in enumerate(sites):
        v = _site_view(psi, site, n_sites)
        a0, a1 = v[:, :, 0, :], v[:, :, 1, :]
        for o, name in enumerate(observables):
            if name == "x":
                out[:, o, j] = 2.0 * np.einsum("blr,blr->b", a0.conj(), a1).real
            else:
                out[:, o, j] = (np.abs(a0) ** 2).sum(axis=(1, 2)) - (np.abs(a1) ** 2).sum(axis=(1, 2))
    return out


def _bit_marginals(probs: NDArray[np.float64], n_sites: int) -> NDArray[np.float64]:
    """``p[b, site, bit]``: unnormalized probability of each bit value at each site."""
    out = np.empty((probs.shape[0], n_sites, 2))
    for site in range(n_sites):
        v = probs.reshape(probs.shape[0], 2**site, 2, -1)
        out[:, site] = v.sum(axis=(1, 3))
    return out


def dense_trajectories(
    h: NDArray[np.complex128],
    noise: NoiseModel,
    psi0: NDArray[np.complex128],
    dt: float,
    n_steps: int,
    base_seed: int,
    indices: Sequence[int],
    sample_every: int = 1,
    observables: Sequence[str] = ("x",),
    sites: Sequence[int] | None = None,
    trotter_order: int = 2,
    jump_ratio_scale: float = 1.0,
    chunk: int = DEFAULT_CHUNK,
) -> list[TrajectoryResult]:
    """Dense-vector mirror of the tensor-jump stepper for the trajectories in ``indices``.

    Trajectories are processed in chunks of ``chunk``; chunking never changes results
    because every trajectory owns its random stream.

    Raises:
        SizeCapError: For more than ``TRAJECTORY_CAP`` sites.
    """
    dim = h.shape[0]
    n_sites = int(round(np.log2(dim)))
    _check_cap(n_sites, TRAJECTORY_CAP, "dense_trajectory")
    sites = tuple(range(n_sites)) if sites is None else tuple(sites)
    steps = step_schedule(n_steps, dt, trotter_order, sample_every)
    unitary_t = scipy.linalg.expm(-1j * dt * h).T
    step_rates = [rates_at(noise, s.rate_time, s.tau) for s in steps]
    diag = [_full_diagonal(r.site_factor, n_sites) for r in step_rates]
    sample_diag = [
        _full_diagonal(rates_at(noise, s.sample_rate_time, s.sample_tau).site_factor, n_sites)
        if s.sample_time is not None and not s.sample_after
        else None
        for s in steps
    ]
    kind_idx = noise.channel_kind_index()
    ch_sites = np.array([ch.site for ch in noise.channels], dtype=int)
    ldl_diag = np.array([np.diag(ch.op.conj().T @ ch.op).real for ch in noise.channels]).reshape(-1, 2)
    psi0 = np.asarray(psi0, dtype=complex)
    psi0 = psi0 / np.linalg.norm(psi0)

    results: list[TrajectoryResult] = []
    for start in range(0, len(indices), chunk):
        idx = list(indices[start : start + chunk])
        b = len(idx)
        streams = [RandomStream.for_trajectory(base_seed, i, n_steps) for i in idx]
        decision = np.array([s.decision for s in streams])
        chan_u = np.array([s.channel for s in streams])
        psi = np.tile(psi0, (b, 1))
        mu = np.ones(b)
        faults: list[str | None] = [None] * b
        jumps: list[list[JumpEvent]] = [[] for _ in range(b)]
        times = [0.0]
        values = [_measure_batch(psi, n_sites, observables, sites)]
        mus = [mu.copy()]
        for step, rates, d_full, d_sample in zip(steps, step_rates, diag, sample_diag):
            if step.tau == 0.0 and not step.unitary:
                continue
            if step.unitary:
                psi = psi @ unitary_t
            if d_sample is not None:
                samp = psi * d_sample
                samp /= np.linalg.norm(samp, axis=1, keepdims=True)
                times.append(step.sample_time)
                values.append(_measure_batch(samp, n_sites, observables, sites))
                mus.append(mu.copy())
            after = psi * d_full
            norm2 = np.einsum("bd,bd->b", after.conj(), after).real
            dp = 1.0 - norm2
            for t_i in np.flatnonzero(dp < -NEGATIVE_PROBABILITY_TOL):
                if faults[t_i] is None:
                    faults[t_i] = f"seed ({base_seed}, {idx[t_i]}) step {step.index}: norm grew (delta p = {dp[t_i]:.3e})"
            if rates.shift != 0.0:
                mu = mu * np.exp(rates.shift * step.tau)
            fired = np.flatnonzero(decision[:, step.index] < dp)
            if fired.size:
                probs = np.abs(after[fired]) ** 2
                marg = _bit_marginals(probs, n_sites)
                occ = (marg[:, ch_sites, :] * ldl_diag[None]).sum(axis=2)
                weights = step.tau * rates.shifted[kind_idx][None, :] * occ
                totals = weights.sum(axis=1)
                cdf = np.cumsum(weights, axis=1) / np.where(totals > 0, totals, 1.0)[:, None]
                for row, t_i in enumerate(fired):
                    if not totals[row] > 0:
                        faults[t_i] = faults[t_i] or f"seed ({base_seed}, {idx[t_i]}): jump fired with zero weights"
                        continue
                    k = int(min(np.searchsorted(cdf[row], chan_u[t_i, step.index], side="right"), len(cdf[row]) - 1))
                    ch = noise.channels[k]
                    v = _site_view(after[t_i : t_i + 1], ch.site, n_sites)
                    after[t_i] = np.einsum("ij,bljr->blir", ch.op, v).reshape(-1)
                    ratio = rates.gamma[kind_idx[k]] / rates.shifted[kind_idx[k]]
                    if ratio != 1.0 or jump_ratio_scale != 1.0:
                        mu[t_i] *= jump_ratio_scale * ratio
                    jumps[t_i].append(JumpEvent(step.index, k, step.rate_time))
            nrm = np.linalg.norm(after, axis=1, keepdims=True)
            psi = after / np.where(nrm > 0, nrm, 1.0)
            if step.sample_after and step.sample_time is not None:
                times.append(step.sample_time)
                values.append(_measure_batch(psi, n_sites, observables, sites))
                mus.append(mu.copy())
        t_arr = np.array(times)
        val_arr = np.array(values)  # (T, B, O, S)
        mu_arr = np.array(mus)  # (T, B)
        for row, i in enumerate(idx):
            results.append(
                TrajectoryResult(
                    t_arr, val_arr[:, row], mu_arr[:, row], tuple(jumps[row]), i,
                    fault=faults[row], max_bond=2 ** (n_sites // 2),
                )
            )
    return results


def dense_trajectory(
    h: NDArray[np.complex128],
    noise: NoiseModel,
    psi0: NDArray[np.complex128],
    dt: float,
    n_steps: int,
    seed: int,
    index: int = 0,
    **kwargs,
) -> TrajectoryResult:
    """Single-trajectory convenience wrapper around ``dense_trajectories``."""
    return dense_trajectories(h, noise, psi0, dt, n_steps, seed, [index], **kwargs)[0]
