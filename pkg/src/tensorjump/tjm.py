"""Tensor-jump trajectories with shifted rates and an influence martingale.

The auxiliary state ``Phi`` runs half a dissipator step ahead of the unitary part:

* step 0 applies ``D(dt/2)`` once,
* steps ``1..n-1`` apply ``D(dt) U(dt)``,
* step ``n`` applies ``D(dt/2) U(dt)``.

Every step ends with a jump check on the norm lost to the dissipator. The physical state
at an intermediate time ``j dt`` is ``D(dt/2) U(dt) Phi_{j-1}`` (deterministic, no jump
check); it is measured on a copy and the carried state continues from ``U(dt) Phi_{j-1}``,
so the unitary sweep is paid once per step.

Jumps are drawn with positive rates ``r_k = gamma_k + C`` where ``C`` is the global shift.
The trajectory weight ``mu`` grows by ``exp(C tau)`` over a dissipator of length ``tau``
and is multiplied by ``gamma_k / r_k`` at a jump in channel ``k``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal, Sequence

import numpy as np

from .mps import AnnihilatedStateError, MpsState
from .tdvp import DEFAULT_THRESHOLD, dynamic_step

if TYPE_CHECKING:
    from numpy.typing import NDArray

    from .mpo import MpOperator
    from .noise import NoiseModel

COARSE_STEP_LIMIT = 0.1
NEGATIVE_PROBABILITY_TOL = 1e-12

OBSERVABLE_NAMES = ("x", "z")


class IntegratorFault(RuntimeError):
    """The stepper reached a state its invariants rule out (e.g. norm growth)."""


class CoarseStepWarning(UserWarning):
    """Jump probability per step is large enough to make one-jump-per-step inaccurate."""


# step schedule ------------------------------------------------------------------------


@dataclass(frozen=True)
class StepOperators:
    """What one step applies and at which times the rates are read.

    Attributes:
        index: Step number ``j``; also indexes the random stream.
        role: ``first``, ``bulk`` or ``last`` for the symmetric scheme, ``lie`` for the
            first-order scheme.
        unitary: Whether ``U(dt)`` is applied before the dissipator.
        tau: Length of the dissipator ``D(tau)``.
        rate_time: Midpoint of the physical interval the dissipator covers.
        time: Physical time reached by the unitary part after this step.
        sample_time: Time of the physical state read during this step, or ``None``.
        sample_tau: Dissipator length of the deterministic sampling correction.
        sample_rate_time: Midpoint of the sampling correction's interval.
        sample_after: ``True`` when the sample is the post-step state itself (last and
            first-order steps), ``False`` when it is the corrected copy.
    """

    index: int
    role: Literal["first", "bulk", "last", "lie"]
    unitary: bool
    tau: float
    rate_time: float
    time: float
    sample_time: float | None = None
    sample_tau: float = 0.0
    sample_rate_time: float = 0.0
    sample_after: bool = False


def step_schedule(n_steps: int, dt: float, order: int = 2, sample_every: int = 1) -> list[StepOperators]:
    """Steps ``0..n_steps`` of the symmetric scheme (``order=2``) or ``1..n_steps`` of the
    first-order Lie scheme (``order=1``; its step 0 is a no-op kept for stream alignment).

    A sample is taken at ``m dt`` when ``m`` is a multiple of ``sample_every`` and always
    at the final time. Time 0 is sampled separately from the initial state.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if order not in (1, 2):
        raise ValueError(f"trotter order must be 1 or 2, got {order}")

    def sampled(m: int) -> bool:
        return m == n_steps or m % sample_every == 0

    steps: list[StepOperators] = []
    if order == 1:
        steps.append(StepOperators(0, "lie", False, 0.0, 0.0, 0.0))
        for j in range(1, n_steps + 1):
            steps.append(
                StepOperators(
                    j, "lie", True, dt, (j - 0.5) * dt, j * dt,
                    sample_time=j * dt if sampled(j) else None, sample_after=True,
                )
            )
        return steps
    steps.append(StepOperators(0, "first", False, 0.5 * dt, 0.25 * dt, 0.0))
    for j in range(1, n_steps):
        st = j * dt if sampled(j) else None
        steps.append(
            StepOperators(
                j, "bulk", True, dt, j * dt, j * dt,
                sample_time=st, sample_tau=0.5 * dt, sample_rate_time=(j - 0.25) * dt,
            )
        )
    steps.append(
        StepOperators(
            n_steps, "last", True, 0.5 * dt, (n_steps - 0.25) * dt, n_steps * dt,
            sample_time=n_steps * dt, sample_after=True,
        )
    )
    return steps


@dataclass(frozen=True)
class StepRates:
    """Rates per channel kind at one evaluation time, and the derived site factor."""

    gamma: NDArray[np.float64]
    shifted: NDArray[np.float64]
    shift: float
    site_factor: NDArray[np.complex128]

    @property
    def factor_is_scalar(self) -> bool:
        f = self.site_factor
        return bool(np.allclose(f, f[0, 0] * np.eye(2), rtol=0, atol=1e-15))


def rates_at(noise: NoiseModel, t: float, tau: float) -> StepRates:
    """Rates at time ``t`` and the site factor ``D(tau)`` built from the shifted rates."""
    if noise.is_empty:
        empty = np.zeros(0)
        return StepRates(empty, empty, 0.0, np.eye(2, dtype=complex))
    gamma, shifted, shift = noise.shifted_rates(t)
    return StepRates(gamma, shifted, shift, noise.site_factor(shifted, tau))


# context ------------------------------------------------------------------------------


@dataclass(frozen=True)
class SimulationContext:
    """Immutable inputs shared by every trajectory of an ensemble.

    Attributes:
        hamiltonian: Chain Hamiltonian as an MPO.
        noise: Normalized noise model.
        dt: Time step.
        n_steps: Number of steps; the final time is ``n_steps * dt``.
        chi_max: Bond-dimension cap for the TDVP sweeps.
        svd_threshold: Relative singular-value cutoff for two-site sweeps.
        sample_every: Measure every this many steps (and at the end).
        observables: Subset of ``("x", "z")``.
        sites: Sites to measure; ``None`` means all.
        trotter_order: 2 for the symmetric scheme; 1 is a first-order fault-injection hook.
        jump_ratio_scale: Multiplies the martingale jump factor; 1 except for fault
            injection.
    """

    hamiltonian: MpOperator
    noise: NoiseModel
    dt: float
    n_steps: int
    chi_max: int
    svd_threshold: float = DEFAULT_THRESHOLD
    sample_every: int = 1
    observables: tuple[str, ...] = ("x",)
    sites: tuple[int, ...] | None = None
    trotter_order: int = 2
    jump_ratio_scale: float = 1.0
    steps: tuple[StepOperators, ...] = field(init=False, repr=False)
    step_rates: tuple[StepRates, ...] = field(init=False, repr=False)
    sample_rates: tuple[StepRates | None, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.hamiltonian.n_sites != self.noise.n_sites:
            raise ValueError("Hamiltonian and noise model act on different chain lengths")
        if self.chi_max < 1:
            raise ValueError("chi_max must be >= 1")
        for name in self.observables:
            if name not in OBSERVABLE_NAMES:
                raise ValueError(f"unknown observable {name!r}")
        if self.sites is not None and any(not 0 <= s < self.n_sites for s in self.sites):
            raise ValueError(f"sites {self.sites} outside the chain")
        steps = step_schedule(self.n_steps, self.dt, self.trotter_order, self.sample_every)
        rates = tuple(rates_at(self.noise, s.rate_time, s.tau) for s in steps)
        samples = tuple(
            rates_at(self.noise, s.sample_rate_time, s.sample_tau)
            if s.sample_time is not None and not s.sample_after
            else None
            for s in steps
        )
        object.__setattr__(self, "steps", tuple(steps))
        object.__setattr__(self, "step_rates", rates)
        object.__setattr__(self, "sample_rates", samples)

    @property
    def n_sites(self) -> int:
        return self.hamiltonian.n_sites

    @property
    def measured_sites(self) -> tuple[int, ...]:
        return tuple(range(self.n_sites)) if self.sites is None else self.sites

    @property
    def sample_times(self) -> NDArray[np.float64]:
        return np.array([0.0] + [s.sample_time for s in self.steps if s.sample_time is not None])

    def max_step_probability(self) -> float:
        """Upper bound on the per-step jump probability, ``max_j sum_k r_k c^2 |L_k|^2 tau_j``."""
        if self.noise.is_empty:
            return 0.0
        kind_idx = self.noise.channel_kind_index()
        op_norms = np.array([np.linalg.norm(ch.op, 2) ** 2 for ch in self.noise.channels])
        worst = 0.0
        for s, r in zip(self.steps, self.step_rates):
            worst = max(worst, float(np.sum(r.shifted[kind_idx] * op_norms)) * s.tau)
        return worst


# trajectory state ---------------------------------------------------------------------


@dataclass(frozen=True)
class RandomStream:
    """Counter-indexed uniforms: entry ``j`` of each array belongs to step ``j``."""

    decision: NDArray[np.float64]
    channel: NDArray[np.float64]

    @classmethod
    def for_trajectory(cls, base_seed: int, index: int, n_steps: int) -> RandomStream:
        rng = np.random.default_rng([base_seed, index])
        return cls(rng.random(n_steps + 1), rng.random(n_steps + 1))


@dataclass(frozen=True)
class JumpEvent:
    step: int
    channel: int
    time: float


@dataclass(frozen=True)
class TrajectoryState:
    phi: MpsState
    mu: float
    t: float
    jump_log: tuple[JumpEvent, ...]
    stream: RandomStream


@dataclass(frozen=True)
class TrajectoryResult:
    """Samples of one trajectory.

    Attributes:
        times: Sample times, shape ``(T,)``.
        values: Observable values, shape ``(T, n_observables, n_measured_sites)``.
        mu: Martingale at the sample times, shape ``(T,)``.
        jumps: Every jump that fired.
        index: Trajectory index within the ensemble.
        fault: Error description if the trajectory aborted, else ``None``.
        max_bond: Largest bond dimension seen.
    """

    times: NDArray[np.float64]
    values: NDArray[np.float64]
    mu: NDArray[np.float64]
    jumps: tuple[JumpEvent, ...]
    index: int = 0
    fault: str | None = None
    max_bond: int = 1


# elementary operations ----------------------------------------------------------------


def apply_site_factor(state: MpsState, rates: StepRates) -> MpsState:
    """Apply the same local dissipator on every site; returns a state centered at 0."""
    f = rates.site_factor
    if rates.factor_is_scalar:
        return state.move_center(0).scaled(f[0, 0] ** state.n_sites)
    tensors = tuple(np.einsum("ij,ajb->aib", f, t) for t in state.tensors)
    return MpsState(tensors, state.center).recanonicalize_from_right()


def no_jump_step(
    phi: MpsState, step: StepOperators, rates: StepRates, ctx: SimulationContext
) -> tuple[MpsState, MpsState]:
    """Apply ``F_j`` without the jump to a normalized ``phi``.

    Returns:
        ``(after, unitary_part)``: the state after the dissipator, and the state after
        the unitary only (which the sampling correction starts from).
    """
    if step.unitary:
        phi = dynamic_step(phi, ctx.hamiltonian, ctx.dt, ctx.chi_max, ctx.svd_threshold)
    return apply_site_factor(phi, rates), phi


def jump_probability(before_norm2: float, after_norm2: float) -> float:
    """``1 - |F Phi|^2 / |Phi|^2``.

    Raises:
        IntegratorFault: If the norm grew beyond round-off.
    """
    dp = 1.0 - after_norm2 / before_norm2
    if dp < -NEGATIVE_PROBABILITY_TOL:
        raise IntegratorFault(f"norm grew during a step (delta p = {dp:.3e})")
    if dp > COARSE_STEP_LIMIT:
        warnings.warn(
            f"jump probability per step exceeds {COARSE_STEP_LIMIT}; reduce dt",
            CoarseStepWarning,
            stacklevel=2,
        )
    return max(dp, 0.0)


def channel_weights(state: MpsState, rates: StepRates, tau: float, ctx: SimulationContext) -> NDArray[np.float64]:
    """``tau r_k <L_k^dagger L_k>`` for every channel, in the noise model's channel order.

    Expectations are taken in the (unnormalized) state; its norm is folded in so the
    weights are absolute probabilities when the step began from a normalized state.
    """
    norm2 = state.norm_squared()
    _, rhos = state.local_density_matrices()
    out = np.empty(len(ctx.noise.channels))
    kind_idx = ctx.noise.channel_kind_index()
    for k, ch in enumerate(ctx.noise.channels):
        op = ch.op
        occ = float(np.real(np.trace(op.conj().T @ op @ rhos[ch.site])))
        out[k] = tau * rates.shifted[kind_idx[k]] * max(occ, 0.0) * norm2
    return out


def select_channel(weights: NDArray[np.float64], u: float) -> int:
    """Inverse-CDF choice over ``weights`` with a uniform ``u`` in ``[0, 1)``.

    Raises:
        IntegratorFault: If all weights vanish.
    """
    total = float(np.sum(weights))
    if not total > 0:
        raise IntegratorFault("a jump fired but every channel weight is zero")
    cdf = np.cumsum(weights) / total
    return int(min(np.searchsorted(cdf, u, side="right"), len(weights) - 1))


def sample_jump(
    state: MpsState, dp: float, epsilon: float, u_channel: float, rates: StepRates, tau: float, ctx: SimulationContext
) -> int | None:
    """Channel index if ``epsilon < dp``, else ``None``."""
    if not epsilon < dp:
        return None
    return select_channel(channel_weights(state, rates, tau, ctx), u_channel)


def apply_jump(state: MpsState, channel: int, ctx: SimulationContext) -> MpsState:
    """Apply the channel's jump operator at its site and renormalize."""
    ch = ctx.noise.channels[channel]
    try:
        return state.apply_local(ch.site, ch.op, renormalize=True)
    except AnnihilatedStateError as exc:
        raise IntegratorFault(f"jump {ch.kind} at site {ch.site} annihilated the state") from exc


def martingale_step(mu: float, rates: StepRates, tau: float, channel: int | None, ctx: SimulationContext) -> float:
    """Continuous factor ``exp(C tau)`` and, at a jump, ``gamma_k / r_k``."""
    if rates.shift != 0.0:
        mu *= math.exp(rates.shift * tau)
    if channel is not None:
        kind = ctx.noise.channel_kind_index()[channel]
        r = rates.shifted[kind]
        if r <= 0:
            raise IntegratorFault("jump through a channel with zero shifted rate")
        ratio = rates.gamma[kind] / r
        if ratio != 1.0 or ctx.jump_ratio_scale != 1.0:
            mu *= ctx.jump_ratio_scale * ratio
    return mu


def measure(state: MpsState, ctx: SimulationContext) -> NDArray[np.float64]:
    """Observable values of the normalized state, shape ``(n_observables, n_measured_sites)``."""
    _, rhos = state.local_density_matrices()
    sel = rhos[list(ctx.measured_sites)]
    rows = []
    for name in ctx.observables:
        if name == "x":
            rows.append(2.0 * sel[:, 0, 1].real)
        else:
            rows.append((sel[:, 0, 0] - sel[:, 1, 1]).real)
    return np.array(rows)


# drivers ------------------------------------------------------------------------------


def initial_state(n_sites: int, kind: str | Sequence[int] = "zeros") -> MpsState:
    """``zeros`` (all ``|0>``), ``plus`` (all ``|+>``) or an explicit bit sequence."""
    if isinstance(kind, str):
        if kind == "zeros":
            return MpsState.from_product_state([0] * n_sites)
        if kind == "plus":
            return MpsState.from_local_vectors([np.array([1.0, 1.0]) / np.sqrt(2)] * n_sites)
        if set(kind) <= {"0", "1"} and len(kind) == n_sites:
            return MpsState.from_product_state([int(b) for b in kind])
        raise ValueError(f"unknown initial state {kind!r}")
    return MpsState.from_product_state(list(kind))


def run_trajectory(
    ctx: SimulationContext,
    base_seed: int,
    index: int = 0,
    psi0: MpsState | None = None,
) -> TrajectoryResult:
    """One trajectory; faults are caught and reported in the result."""
    stream = RandomStream.for_trajectory(base_seed, index, ctx.n_steps)
    phi = (psi0 if psi0 is not None else initial_state(ctx.n_sites)).normalized()
    ts = TrajectoryState(phi, 1.0, 0.0, (), stream)
    times = [0.0]
    values = [measure(phi, ctx)]
    mus = [1.0]
    max_bond = phi.max_bond
    try:
        for step, rates, srates in zip(ctx.steps, ctx.step_rates, ctx.sample_rates):
            if step.tau == 0.0 and not step.unitary:
                continue
            after, unitary_part = no_jump_step(ts.phi, step, rates, ctx)
            max_bond = max(max_bond, unitary_part.max_bond)
            if srates is not None:
                sample = apply_site_factor(unitary_part, srates).normalized()
                times.append(step.sample_time)
                values.append(measure(sample, ctx))
                mus.append(ts.mu)
            dp = jump_probability(1.0, after.norm_squared())
            channel = sample_jump(
                after, dp, stream.decision[step.index], stream.channel[step.index], rates, step.tau, ctx
            )
            log = ts.jump_log
            if channel is None:
                new_phi = after.normalized()
            else:
                new_phi = apply_jump(after, channel, ctx)
                log = log + (JumpEvent(step.index, channel, step.rate_time),)
            mu = martingale_step(ts.mu, rates, step.tau, channel, ctx)
            ts = TrajectoryState(new_phi, mu, step.time, log, stream)
            if step.sample_after and step.sample_time is not None:
                times.append(step.sample_time)
                values.append(measure(ts.phi, ctx))
                mus.append(ts.mu)
    except (IntegratorFault, AnnihilatedStateError, np.linalg.LinAlgError) as exc:
        return TrajectoryResult(
            np.array(times), np.array(values), np.array(mus), ts.jump_log, index,
            fault=f"seed ({base_seed}, {index}) step at t={ts.t:.6g}: {exc}", max_bond=max_bond,
        )
    return TrajectoryResult(np.array(times), np.array(values), np.array(mus), ts.jump_log, index, max_bond=max_bond)


def propagate_no_jump(ctx: SimulationContext, psi0: MpsState) -> MpsState:
    """``prod_j F_j^{no-jump}`` applied to ``psi0`` without renormalization."""
    phi = psi0
    for step, rates in zip(ctx.steps, ctx.step_rates):
        if step.unitary:
            phi = dynamic_step(phi, ctx.hamiltonian, ctx.dt, ctx.chi_max, ctx.svd_threshold)
        if step.tau > 0:
            phi = apply_site_factor(phi, rates)
    return phi
