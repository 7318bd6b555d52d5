"""Trajectory ensembles: parallel execution, weighted statistics and jump histograms.

Trajectory ``i`` always uses the random stream ``(base_seed, i)`` and results are merged
in index order, so an ensemble is a pure function of its inputs whatever the worker
count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal, Sequence

import numpy as np

from .batched import run_batched, supports_batching
from .mpo import mpo_to_dense
from .reference import DEFAULT_CHUNK, dense_trajectories
from .tjm import SimulationContext, TrajectoryResult, initial_state, run_trajectory

if TYPE_CHECKING:
    from numpy.typing import NDArray

    from .mps import MpsState
    from .tjm import JumpEvent

TrajectoryMode = Literal["tjm", "dense_trajectory"]
Engine = Literal["auto", "sequential", "batched"]


@dataclass(frozen=True)
class EnsembleResult:
    """Merged statistics of an ensemble.

    Attributes:
        times: Sample times, shape ``(T,)``.
        observables: Observable names (axis 1 of ``mean``).
        sites: Measured sites (axis 2 of ``mean``).
        mean: Weighted means ``E[mu <O>]``, shape ``(T, n_observables, n_sites)``.
        stderr: Standard errors of ``mean``.
        mu_mean: Mean martingale per sample time.
        mu_var: Sample variance of the martingale per sample time.
        jump_times: Midpoint time of each step's dissipator, shape ``(n_steps + 1,)``.
        channel_kinds: Channel-kind names (axis 1 of ``jump_counts``).
        jump_counts: Jumps per step and channel kind.
        n_traj: Trajectories that finished and enter the statistics.
        n_requested: Trajectories launched.
        faults: One message per aborted trajectory.
        max_bond: Largest bond dimension reached by any trajectory.
    """

    times: NDArray[np.float64]
    observables: tuple[str, ...]
    sites: tuple[int, ...]
    mean: NDArray[np.float64]
    stderr: NDArray[np.float64]
    mu_mean: NDArray[np.float64]
    mu_var: NDArray[np.float64]
    jump_times: NDArray[np.float64]
    channel_kinds: tuple[str, ...]
    jump_counts: NDArray[np.int64]
    n_traj: int
    n_requested: int
    faults: tuple[str, ...] = ()
    max_bond: int = 1

    @property
    def complete(self) -> bool:
        return self.n_traj == self.n_requested

    def series(self, observable: str = "x") -> NDArray[np.float64]:
        """Mean of one observable, shape ``(T, n_sites)``."""
        return self.mean[:, self.observables.index(observable), :]

    def series_stderr(self, observable: str = "x") -> NDArray[np.float64]:
        return self.stderr[:, self.observables.index(observable), :]


def weighted_observable(
    mu: Sequence[float] | NDArray[np.float64], values: Sequence[float] | NDArray[np.float64]
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Mean and standard error of ``mu * value`` over axis 0.

    The products are i.i.d. under the reference measure, so the plain sample standard
    deviation over ``sqrt(M)`` is the error estimate. With a single sample the error is
    undefined and returned as NaN.

    Raises:
        ValueError: On empty input.
    """
    mu = np.asarray(mu, dtype=float)
    values = np.asarray(values, dtype=float)
    if mu.shape[0] == 0:
        raise ValueError("weighted_observable needs at least one sample")
    prod = mu.reshape(mu.shape + (1,) * (values.ndim - mu.ndim)) * values
    mean = prod.mean(axis=0)
    m = prod.shape[0]
    if m < 2:
        return mean, np.full(mean.shape, np.nan)
    return mean, prod.std(axis=0, ddof=1) / np.sqrt(m)


def jump_histogram(
    logs: Sequence[Sequence[JumpEvent]],
    n_bins: int,
    channel_kind: Sequence[int] | NDArray[np.int64],
    n_kinds: int,
) -> NDArray[np.int64]:
    """Count jumps per step (one bin per step) and channel kind."""
    counts = np.zeros((n_bins, max(n_kinds, 1)), dtype=np.int64)
    for log in logs:
        for ev in log:
            counts[ev.step, channel_kind[ev.channel]] += 1
    return counts[:, :n_kinds]


def _run_tjm_chunk(args: tuple[SimulationContext, int, list[int], MpsState | None]) -> list[TrajectoryResult]:
    ctx, base_seed, indices, psi0 = args
    return [run_trajectory(ctx, base_seed, i, psi0) for i in indices]


def _run_batched_chunk(args: tuple[SimulationContext, int, list[int], MpsState | None]) -> list[TrajectoryResult]:
    ctx, base_seed, indices, psi0 = args
    return run_batched(ctx, base_seed, indices, psi0)


def _run_dense_chunk(
    args: tuple[SimulationContext, NDArray[np.complex128], NDArray[np.complex128], int, list[int]],
) -> list[TrajectoryResult]:
    ctx, h, psi0, base_seed, indices = args
    return dense_trajectories(
        h, ctx.noise, psi0, ctx.dt, ctx.n_steps, base_seed, indices,
        sample_every=ctx.sample_every, observables=ctx.observables, sites=ctx.measured_sites,
        trotter_order=ctx.trotter_order, jump_ratio_scale=ctx.jump_ratio_scale,
    )


def run_trajectories(
    ctx: SimulationContext,
    n_traj: int,
    base_seed: int,
    workers: int = 1,
    mode: TrajectoryMode = "tjm",
    psi0: MpsState | None = None,
    dense_h: NDArray[np.complex128] | None = None,
    engine: Engine = "auto",
) -> list[TrajectoryResult]:
    """Run trajectories ``0..n_traj-1`` and return them in index order.

    With ``engine="auto"`` TJM trajectories are stacked whenever ``chi_max`` covers the
    exact bond dimensions (see ``batched``), and run one by one otherwise.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if engine not in ("auto", "sequential", "batched"):
        raise ValueError(f"unknown engine {engine!r}")
    if mode == "tjm" and (engine == "batched" or (engine == "auto" and supports_batching(ctx))):
        chunks = [list(range(s, min(s + DEFAULT_CHUNK, n_traj))) for s in range(0, n_traj, DEFAULT_CHUNK)]
        jobs = [(ctx, base_seed, c, psi0) for c in chunks]
        runner = _run_batched_chunk
    elif mode == "tjm":
        per_chunk = max(1, -(-n_traj // (4 * workers))) if workers > 1 else n_traj
        chunks = [list(range(s, min(s + per_chunk, n_traj))) for s in range(0, n_traj, per_chunk)]
        jobs = [(ctx, base_seed, c, psi0) for c in chunks]
        runner = _run_tjm_chunk
    elif mode == "dense_trajectory":
        h = dense_h if dense_h is not None else mpo_to_dense(ctx.hamiltonian)
        vec = (psi0 if psi0 is not None else initial_state(ctx.n_sites)).to_dense()
        chunks = [list(range(s, min(s + DEFAULT_CHUNK, n_traj))) for s in range(0, n_traj, DEFAULT_CHUNK)]
        jobs = [(ctx, h, vec, base_seed, c) for c in chunks]
        runner = _run_dense_chunk
    else:
        raise ValueError(f"unknown trajectory mode {mode!r}")
    if workers == 1 or len(jobs) == 1:
        parts = [runner(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(runner, jobs))
    results = [r for part in parts for r in part]
    results.sort(key=lambda r: r.index)
    return results


def merge(results: Sequence[TrajectoryResult], ctx: SimulationContext) -> EnsembleResult:
    """Sequential reduction of per-trajectory results; faulted trajectories are excluded."""
    good = [r for r in results if r.fault is None]
    faults = tuple(r.fault for r in results if r.fault is not None)
    times = ctx.sample_times
    n_obs, n_sites = len(ctx.observables), len(ctx.measured_sites)
    if good:
        mu = np.array([r.mu for r in good])
        vals = np.array([r.values for r in good])
        mean, stderr = weighted_observable(mu, vals)
        mu_mean = mu.mean(axis=0)
        mu_var = mu.var(axis=0, ddof=1) if len(good) > 1 else np.zeros(len(times))
    else:
        mean = stderr = np.full((len(times), n_obs, n_sites), np.nan)
        mu_mean = mu_var = np.full(len(times), np.nan)
    jump_times = np.array([s.rate_time for s in ctx.steps])
    counts = jump_histogram(
        [r.jumps for r in good], len(ctx.steps), ctx.noise.channel_kind_index(), len(ctx.noise.kinds)
    )
    return EnsembleResult(
        times=times,
        observables=tuple(ctx.observables),
        sites=ctx.measured_sites,
        mean=mean,
        stderr=stderr,
        mu_mean=mu_mean,
        mu_var=mu_var,
        jump_times=jump_times,
        channel_kinds=tuple(ctx.noise.kinds),
        jump_counts=counts,
        n_traj=len(good),
        n_requested=len(results),
        faults=faults,
        max_bond=max((r.max_bond for r in results), default=1),
    )


def run_ensemble(
    ctx: SimulationContext,
    n_traj: int,
    base_seed: int,
    workers: int = 1,
    mode: TrajectoryMode = "tjm",
    psi0: MpsState | None = None,
    dense_h: NDArray[np.complex128] | None = None,
    engine: Engine = "auto",
) -> EnsembleResult:
    """Run and merge an ensemble; see ``run_trajectories`` for the arguments."""
    return merge(run_trajectories(ctx, n_traj, base_seed, workers, mode, psi0, dense_h, engine), ctx)
