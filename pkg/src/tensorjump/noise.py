"""Site-local noise channels, time-dependent rates and the positivity shift.

A channel kind (dephasing, excitation, relaxation) is placed on every site and shares
one rate schedule across the chain. All channels carry a common normalization factor
chosen so that ``sum_k c^2 L_k^dagger L_k`` over every channel and site is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal, Sequence

import numpy as np

if TYPE_CHECKING:
    from numpy.typing import NDArray

ChannelKind = Literal["dephasing", "excitation", "relaxation"]

RAW_OPERATORS: dict[str, NDArray[np.complex128]] = {
    "dephasing": np.array([[1, 0], [0, -1]], dtype=complex),
    # sigma^+ takes |0> (down) to |1> (up)
    "excitation": np.array([[0, 0], [1, 0]], dtype=complex),
    "relaxation": np.array([[0, 1], [0, 0]], dtype=complex),
}


class ConfigurationError(ValueError):
    """The requested noise model cannot satisfy the completeness condition."""


@dataclass(frozen=True)
class RateSchedule:
    """Decay rate ``gamma(t) = gamma_inf - B exp(-c t^3) sin(omega t)``.

    ``kind="constant"`` ignores ``B``, ``omega`` and ``f_cubic_coeff``.
    """

    kind: Literal["constant", "damped_oscillatory"] = "constant"
    gamma_inf: float = 0.0
    B: float = 0.0
    omega: float = 0.0
    f_cubic_coeff: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "damped_oscillatory"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant" and self.gamma_inf < 0:
            raise ValueError("a constant schedule needs gamma_inf >= 0")

    def __call__(self, t: float | NDArray[np.float64]) -> float | NDArray[np.float64]:
        return gamma_at(self, t)


def gamma_at(sched: RateSchedule, t: float | NDArray[np.float64]) -> float | NDArray[np.float64]:
    t = np.asarray(t, dtype=float)
    if sched.kind == "constant":
        out = np.full(t.shape, sched.gamma_inf)
    else:
        out = sched.gamma_inf - sched.B * np.exp(-sched.f_cubic_coeff * t**3) * np.sin(sched.omega * t)
    return float(out) if out.ndim == 0 else out


def shift_at(rates: Sequence[float] | NDArray[np.float64]) -> float:
    """``C_t = -2 min(0, rates...)``: zero unless some rate is negative."""
    lowest = float(np.min(rates)) if len(rates) else 0.0
    return -2.0 * min(0.0, lowest)


@dataclass(frozen=True)
class NoiseChannel:
    kind: ChannelKind
    site: int
    operator: NDArray[np.complex128]
    schedule: RateSchedule
    norm_factor: float = 1.0

    @property
    def op(self) -> NDArray[np.complex128]:
        """The normalized jump operator ``c * L``."""
        return self.norm_factor * self.operator


def make_channel(kind: ChannelKind, site: int, schedule: RateSchedule) -> NoiseChannel:
    if kind not in RAW_OPERATORS:
        raise ValueError(f"unknown channel kind {kind!r}")
    return NoiseChannel(kind, site, RAW_OPERATORS[kind], schedule)


def normalize_channels(channels: Sequence[NoiseChannel], n_sites: int) -> list[NoiseChannel]:
    """Return copies with a common ``norm_factor`` so that ``sum c^2 L^dagger L = I``.

    Raises:
        ConfigurationError: If some site's ``sum L^dagger L`` is not proportional to the
            identity (e.g. excitation without relaxation), since no scalar factor can then
            give a complete set.
    """
    if not channels:
        return []
    per_site = np.zeros((n_sites, 2, 2), dtype=complex)
    for ch in channels:
        if not 0 <= ch.site < n_sites:
            raise ConfigurationError(f"channel site {ch.site} outside chain of {n_sites}")
        per_site[ch.site] += ch.operator.conj().T @ ch.operator
    total = 0.0
    for site, block in enumerate(per_site):
        a = block[0, 0].real
        if not np.allclose(block, a * np.eye(2), atol=1e-12):
            kinds = sorted({ch.kind for ch in channels if ch.site == site})
            raise ConfigurationError(
                f"channels {kinds} on site {site} give sum L^dagger L = {block.real.tolist()}, "
                "not proportional to the identity; add the complementary channel "
                "(excitation and relaxation must appear together)"
            )
        total += a
    c = 1.0 / np.sqrt(total)
    return [NoiseChannel(ch.kind, ch.site, ch.operator, ch.schedule, c) for ch in channels]


def dissipator_site_factor(
    channels_at_site: Sequence[NoiseChannel],
    rates: Sequence[float],
    dt: float,
) -> NDArray[np.complex128]:
    """``exp(-dt/2 sum_k r_k L_k^dagger L_k)`` for the channels acting on one site.

    Raises:
        ValueError: If a rate is negative; the shift has to be applied by the caller.
    """
    gen = np.zeros((2, 2), dtype=complex)
    for ch, r in zip(channels_at_site, rates, strict=True):
        if r < 0:
            raise ValueError(f"negative effective rate {r} for {ch.kind} on site {ch.site}")
        op = ch.op
        gen += r * (op.conj().T @ op)
    w, v = np.linalg.eigh(gen)
    return (v * np.exp(-0.5 * dt * w)) @ v.conj().T


@dataclass(frozen=True)
class NoiseModel:
    """Normalized channel list in fixed (site-major, then configuration) order."""

    channels: tuple[NoiseChannel, ...]
    n_sites: int
    kinds: tuple[str, ...] = field(default=())

    @classmethod
    def uniform(cls, n_sites: int, spec: Sequence[tuple[ChannelKind, RateSchedule]]) -> NoiseModel:
        """Place every ``(kind, schedule)`` pair on every site and normalize."""
        kinds = [k for k, _ in spec]
        if len(set(kinds)) != len(kinds):
            raise ConfigurationError(f"channel kinds repeated: {kinds}")
        raw = [make_channel(kind, site, sched) for site in range(n_sites) for kind, sched in spec]
        return cls(tuple(normalize_channels(raw, n_sites)), n_sites, tuple(kinds))

    @classmethod
    def noiseless(cls, n_sites: int) -> NoiseModel:
        return cls((), n_sites, ())

    @property
    def is_empty(self) -> bool:
        return not self.channels

    @property
    def schedules(self) -> tuple[RateSchedule, ...]:
        by_kind = {ch.kind: ch.schedule for ch in self.channels}
        return tuple(by_kind[k] for k in self.kinds)

    def kind_rates(self, t: float) -> NDArray[np.float64]:
        """Physical rates ``gamma(t)`` per kind (configuration order)."""
        return np.array([float(gamma_at(s, t)) for s in self.schedules])

    def kind_index(self, kind: str) -> int:
        return self.kinds.index(kind)

    def channel_kind_index(self) -> NDArray[np.int64]:
        return np.array([self.kinds.index(ch.kind) for ch in self.channels], dtype=int)

    def shifted_rates(self, t: float) -> tuple[NDArray[np.float64], NDArray[np.float64], float]:
        """``(gamma, r, C)`` per kind at time ``t``; one global shift over all channels."""
        gamma = self.kind_rates(t)
        c = shift_at(gamma)
        return gamma, gamma + c, c

    def site_factor(self, kind_rates: NDArray[np.float64], dt: float) -> NDArray[np.complex128]:
        """Local dissipator, identical on every site since channels are uniform."""
        chans = [ch for ch in self.channels if ch.site == 0]
        return dissipator_site_factor(chans, [kind_rates[self.kinds.index(ch.kind)] for ch in chans], dt)

    def completeness_residual(self) -> float:
        """``max |sum_k c^2 L_k^dagger L_k - I|`` over all channels of the chain.

        Each site block is proportional to the identity, so the chain operator reduces to
        the sum of the 2x2 blocks.
        """
        total = np.zeros((2, 2), dtype=complex)
        for ch in self.channels:
            total += ch.op.conj().T @ ch.op
        return float(np.abs(total - np.eye(2)).max())
