"""Many tensor-jump trajectories advanced together on stacked MPS tensors.

When ``chi_max`` reaches the exact Schmidt rank of every bond, all trajectories share
the same bond dimensions and one-site TDVP is exact. Site tensors can then be stored as
arrays ``(n_traj, left, 2, right)`` and every QR, eigendecomposition and contraction is
done once for the whole stack. Results match ``run_trajectory`` to round-off; only the
cost per trajectory changes.
"""

from __future__ import annotations

import warnings
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .mps import MpsState
from .tjm import (
    COARSE_STEP_LIMIT,
    NEGATIVE_PROBABILITY_TOL,
    CoarseStepWarning,
    JumpEvent,
    RandomStream,
    SimulationContext,
    TrajectoryResult,
    initial_state,
)

if TYPE_CHECKING:
    from numpy.typing import NDArray

    from .tjm import StepRates

_EDGE_SHAPE = (1, 1, 1)


def full_bond_dims(n_sites: int) -> list[int]:
    return [2 ** min(k + 1, n_sites - k - 1) for k in range(n_sites - 1)]


def supports_batching(ctx: SimulationContext) -> bool:
    """True when ``chi_max`` covers the exact bond dimensions (and the chain is small)."""
    return ctx.n_sites <= 16 and ctx.chi_max >= max(full_bond_dims(ctx.n_sites), default=1)


# stacked linear algebra -----------------------------------------------------------------


def _qr_left(t: NDArray) -> tuple[NDArray, NDArray]:
    b, l, d, r = t.shape
    q, rr = np.linalg.qr(t.reshape(b, l * d, r))
    return q.reshape(b, l, d, q.shape[-1]), rr


def _lq_right(t: NDArray) -> tuple[NDArray, NDArray]:
    b, l, d, r = t.shape
    q, rr = np.linalg.qr(t.reshape(b, l, d * r).conj().transpose(0, 2, 1))
    k = q.shape[-1]
    return rr.conj().transpose(0, 2, 1), q.conj().transpose(0, 2, 1).reshape(b, k, d, r)


def _evolve(h: NDArray, v: NDArray, tau: float) -> NDArray:
    """``exp(-i h tau) v`` for a stack of small matrices.

    Local effective Hamiltonians times ``tau`` have small norms, so a Taylor series
    (split into substeps of norm at most 1/2) reaches round-off in a few products.
    """
    b = v.shape[0]
    scale = float(np.abs(tau) * np.sqrt(np.max(np.einsum("nij,nij->n", h.conj(), h).real, initial=0.0)))
    substeps = max(1, int(np.ceil(2.0 * scale)))
    step_norm = scale / substeps
    # truncation error of the order-K series is below step_norm**(K+1) / (K+1)!
    order, bound = 1, step_norm
    while bound > 1e-17 and order < 30:
        order += 1
        bound *= step_norm / order
    x = -1j * (tau / substeps) * h
    vec = v.reshape(b, -1, 1)
    for _ in range(substeps):
        term = vec
        total = vec
        for k in range(1, order + 1):
            term = (x @ term) / k
            total = total + term
        vec = total
    return vec.reshape(v.shape)


def _left_step(left: NDArray, a: NDArray, w: NDArray) -> NDArray:
    n, x, wd, al = left.shape
    _, _, j, b = a.shape
    i, v = w.shape[1], w.shape[3]
    t = (left.reshape(n, x * wd, al) @ a.reshape(n, al, j * b)).reshape(n, x, wd, j, b)
    t = t.transpose(0, 1, 4, 2, 3).reshape(n, x * b, wd * j) @ w.transpose(0, 2, 1, 3).reshape(wd * j, i * v)
    t = t.reshape(n, x, b, i, v).transpose(0, 2, 4, 1, 3).reshape(n, b * v, x * i)
    out = t @ a.conj().reshape(n, x * i, -1)
    return out.reshape(n, b, v, -1).transpose(0, 3, 2, 1)


def _right_step(right: NDArray, a: NDArray, w: NDArray) -> NDArray:
    n, al, j, b = a.shape
    y, v = right.shape[1], right.shape[2]
    wd, i = w.shape[0], w.shape[1]
    t = a.reshape(n, al * j, b) @ right.transpose(0, 3, 1, 2).reshape(n, b, y * v)
    t = t.reshape(n, al, j, y, v).transpose(0, 1, 3, 2, 4).reshape(n, al * y, j * v)
    t = t @ w.transpose(2, 3, 0, 1).reshape(j * v, wd * i)
    t = t.reshape(n, al, y, wd, i).transpose(0, 1, 3, 4, 2).reshape(n, al * wd, i * y)
    x = a.shape[1]
    out = t @ a.conj().reshape(n, x, i * y).transpose(0, 2, 1)
    return out.reshape(n, al, wd, x).transpose(0, 3, 2, 1)


def _site_matrix(left: NDArray, w: NDArray, right: NDArray) -> NDArray:
    n, x, wd, al = left.shape
    _, i, j, v = w.shape
    y, b = right.shape[1], right.shape[3]
    t = left.transpose(0, 1, 3, 2).reshape(n, x * al, wd) @ w.reshape(wd, i * j * v)
    t = t.reshape(n, x * al * i * j, v) @ right.transpose(0, 2, 1, 3).reshape(n, v, y * b)
    t = t.reshape(n, x, al, i, j, y, b).transpose(0, 1, 3, 5, 2, 4, 6)
    return t.reshape(n, x * i * y, al * j * b)


def _bond_matrix(left: NDArray, right: NDArray) -> NDArray:
    n, x, wd, al = left.shape
    y, b = right.shape[1], right.shape[3]
    t = left.transpose(0, 1, 3, 2).reshape(n, x * al, wd) @ right.transpose(0, 2, 1, 3).reshape(n, wd, y * b)
    return t.reshape(n, x, al, y, b).transpose(0, 1, 3, 2, 4).reshape(n, x * y, al * b)


def _absorb_right(c: NDArray, a: NDArray) -> NDArray:
    """``c @ a`` on the left bond of a stacked site tensor."""
    n, _, j, r = a.shape
    return (c @ a.reshape(n, a.shape[1], j * r)).reshape(n, c.shape[1], j, r)


def _absorb_left(a: NDArray, c: NDArray) -> NDArray:
    """``a @ c`` on the right bond of a stacked site tensor."""
    n, l, j, _ = a.shape
    return (a.reshape(n, l * j, a.shape[3]) @ c).reshape(n, l, j, c.shape[2])


def one_site_sweep(tensors: list[NDArray], mpo: Sequence[NDArray], dt: float) -> list[NDArray]:
    """Symmetric one-site TDVP step for a stack whose center is site 0."""
    n = len(tensors)
    b = tensors[0].shape[0]
    edge = np.ones((b,) + _EDGE_SHAPE, dtype=complex)
    a = list(tensors)
    left: list[NDArray | None] = [None] * n
    right: list[NDArray | None] = [None] * n
    left[0] = edge
    right[n - 1] = edge
    for k in range(n - 1, 0, -1):
        right[k - 1] = _right_step(right[k], a[k], mpo[k])
    half = 0.5 * dt
    for k in range(n - 1):
        m = _evolve(_site_matrix(left[k], mpo[k], right[k]), a[k], half)
        q, c = _qr_left(m)
        a[k] = q
        left[k + 1] = _left_step(left[k], q, mpo[k])
        c = _evolve(_bond_matrix(left[k + 1], right[k]), c, -half)
        a[k + 1] = _absorb_right(c, a[k + 1])
    last = n - 1
    a[last] = _evolve(_site_matrix(left[last], mpo[last], right[last]), a[last], dt)
    for k in range(n - 1, 0, -1):
        c, q = _lq_right(a[k])
        a[k] = q
        right[k - 1] = _right_step(right[k], q, mpo[k])
        c = _evolve(_bond_matrix(left[k], right[k - 1]), c, -half)
        m = _absorb_left(a[k - 1], c)
        a[k - 1] = _evolve(_site_matrix(left[k - 1], mpo[k - 1], right[k - 1]), m, half)
    return a


def recanonicalize(tensors: list[NDArray]) -> list[NDArray]:
    """LQ sweep from the right end; the center ends at site 0."""
    a = list(tensors)
    for k in range(len(a) - 1, 0, -1):
        c, q = _lq_right(a[k])
        a[k] = q
        a[k - 1] = _absorb_left(a[k - 1], c)
    return a


def norm_squared(tensors: list[NDArray]) -> NDArray[np.float64]:
    c = tensors[0]
    return np.einsum("najb,najb->n", c.conj(), c).real


def local_density_matrices(tensors: list[NDArray]) -> NDArray[np.complex128]:
    """Normalized one-site density matrices, shape ``(B, N, 2, 2)``; center must be 0."""
    a = list(tensors)
    nrm2 = norm_squared(a)
    out = np.empty((a[0].shape[0], len(a), 2, 2), dtype=complex)
    for k in range(len(a)):
        out[:, k] = np.einsum("naib,najb->nij", a[k], a[k].conj()) / nrm2[:, None, None]
        if k < len(a) - 1:
            q, r = _qr_left(a[k])
            a[k + 1] = _absorb_right(r, a[k + 1])
    return out


def apply_site_factor(tensors: list[NDArray], rates: StepRates) -> list[NDArray]:
    f = rates.site_factor
    if rates.factor_is_scalar:
        out = list(tensors)
        out[0] = out[0] * f[0, 0] ** len(tensors)
        return out
    return recanonicalize([np.einsum("ij,najb->naib", f, t) for t in tensors])


def _measure(rhos: NDArray, ctx: SimulationContext) -> NDArray[np.float64]:
    sel = rhos[:, list(ctx.measured_sites)]
    rows = []
    for name in ctx.observables:
        if name == "x":
            rows.append(2.0 * sel[:, :, 0, 1].real)
        else:
            rows.append((sel[:, :, 0, 0] - sel[:, :, 1, 1]).real)
    return np.stack(rows, axis=1)


def _stack_initial(psi0: MpsState, b: int) -> list[NDArray]:
    full = MpsState.from_dense(psi0.to_dense(), psi0.n_sites).move_center(0)
    return [np.broadcast_to(t, (b,) + t.shape).copy() for t in full.tensors]


# driver ---------------------------------------------------------------------------------


def run_batched(
    ctx: SimulationContext,
    base_seed: int,
    indices: Sequence[int],
    psi0: MpsState | None = None,
) -> list[TrajectoryResult]:
    """Trajectories ``indices`` advanced as one stack; same streams as ``run_trajectory``.

    Raises:
        ValueError: If ``ctx`` does not allow exact full-bond batching.
    """
    if not supports_batching(ctx):
        raise ValueError("batched trajectories need chi_max at or above the full bond dimension")
    idx = list(indices)
    b = len(idx)
    n = ctx.n_sites
    psi0 = (psi0 if psi0 is not None else initial_state(n)).normalized()
    a = _stack_initial(psi0, b)
    streams = [RandomStream.for_trajectory(base_seed, i, ctx.n_steps) for i in idx]
    decision = np.array([s.decision for s in streams])
    chan_u = np.array([s.channel for s in streams])
    mpo = [np.asarray(w) for w in ctx.hamiltonian.tensors]
    kind_idx = ctx.noise.channel_kind_index()
    ch_sites = np.array([ch.site for ch in ctx.noise.channels], dtype=int)
    ldl = np.array([ch.op.conj().T @ ch.op for ch in ctx.noise.channels]) if ctx.noise.channels else np.zeros((0, 2, 2))
    mu = np.ones(b)
    faults: list[str | None] = [None] * b
    jumps: list[list[JumpEvent]] = [[] for _ in range(b)]
    times = [0.0]
    values = [_measure(local_density_matrices(a), ctx)]
    mus = [mu.copy()]
    bond = max(full_bond_dims(n), default=1)
    for step, rates, srates in zip(ctx.steps, ctx.step_rates, ctx.sample_rates):
        if step.tau == 0.0 and not step.unitary:
            continue
        if step.unitary:
            a = one_site_sweep(a, mpo, ctx.dt)
        if srates is not None:
            samp = apply_site_factor(a, srates)
            times.append(step.sample_time)
            values.append(_measure(local_density_matrices(samp), ctx))
            mus.append(mu.copy())
        after = apply_site_factor(a, rates)
        norm2 = norm_squared(after)
        dp = 1.0 - norm2
        for t_i in np.flatnonzero(dp < -NEGATIVE_PROBABILITY_TOL):
            if faults[t_i] is None:
                faults[t_i] = f"seed ({base_seed}, {idx[t_i]}) step {step.index}: norm grew (delta p = {dp[t_i]:.3e})"
        if dp.max() > COARSE_STEP_LIMIT:
            warnings.warn(
                f"jump probability per step exceeds {COARSE_STEP_LIMIT}; reduce dt", CoarseStepWarning, stacklevel=2
            )
        if rates.shift != 0.0:
            mu = mu * np.exp(rates.shift * step.tau)
        fired = np.flatnonzero(decision[:, step.index] < dp)
        if fired.size:
            sub = [t[fired] for t in after]
            rhos = local_density_matrices(sub)
            gauge_broken = False
            occ = np.einsum("kij,bkji->bk", ldl, rhos[:, ch_sites]).real
            weights = step.tau * rates.shifted[kind_idx][None, :] * np.maximum(occ, 0.0) * norm2[fired, None]
            totals = weights.sum(axis=1)
            cdf = np.cumsum(weights, axis=1) / np.where(totals > 0, totals, 1.0)[:, None]
            for row, t_i in enumerate(fired):
                if not totals[row] > 0:
                    faults[t_i] = faults[t_i] or f"seed ({base_seed}, {idx[t_i]}): jump fired with zero weights"
                    continue
                k = int(min(np.searchsorted(cdf[row], chan_u[t_i, step.index], side="right"), len(cdf[row]) - 1))
                ch = ctx.noise.channels[k]
                gauge_broken |= ch.site != 0
                after[ch.site][t_i] = np.einsum("ij,ajb->aib", ch.op, after[ch.site][t_i])
                ratio = rates.gamma[kind_idx[k]] / rates.shifted[kind_idx[k]]
                if ratio != 1.0 or ctx.jump_ratio_scale != 1.0:
                    mu[t_i] *= ctx.jump_ratio_scale * ratio
                jumps[t_i].append(JumpEvent(step.index, k, step.rate_time))
            if gauge_broken:
                after = recanonicalize(after)
        nrm = np.sqrt(norm_squared(after))
        for t_i in np.flatnonzero(nrm == 0):
            faults[t_i] = faults[t_i] or f"seed ({base_seed}, {idx[t_i]}): a jump annihilated the state"
        after[0] = after[0] / np.where(nrm > 0, nrm, 1.0)[:, None, None, None]
        a = after
        if step.sample_after and step.sample_time is not None:
            times.append(step.sample_time)
            values.append(_measure(local_density_matrices(a), ctx))
            mus.append(mu.copy())
    t_arr = np.array(times)
    val_arr = np.array(values)
    mu_arr = np.array(mus)
    return [
        TrajectoryResult(t_arr, val_arr[:, row], mu_arr[:, row], tuple(jumps[row]), i, fault=faults[row], max_bond=bond)
        for row, i in enumerate(idx)
    ]
