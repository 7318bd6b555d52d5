"""Run configuration: YAML text validated into a ``SimConfig``.

Grammar (YAML; unknown keys are rejected, omitted keys take the defaults shown)::

    system:
      n_sites: 5              # >= 1
      j_coupling: 1.0
      g_field: 0.5
      initial_state: zeros    # zeros | plus | bit string such as "01001"
    evolution:
      dt: 0.001               # > 0
      n_steps: 1000           # >= 1
      chi_max: 4              # >= 1
      svd_threshold: 1.0e-10
      sample_every: 1         # measure every k steps (the final step is always measured)
    noise:                    # one entry per channel kind, placed on every site
      - kind: dephasing       # dephasing | excitation | relaxation
        schedule:
          kind: damped_oscillatory   # constant | damped_oscillatory
          gamma_inf: 8.24
          B: 12.0
          omega: 7.5
          f_cubic_coeff: 0.25
    ensemble:
      n_traj: 1000
      base_seed: 0
      workers: 1
    mode: tjm                 # tjm | dense_trajectory | dense_master
    observables: [x]          # any of x, z
    sites: null               # list of site indices to measure; null = all
"""

from __future__ import annotations

from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .mpo import build_tfi
from .noise import ConfigurationError, NoiseModel, RateSchedule
from .reference import MASTER_CAP, TRAJECTORY_CAP
from .tjm import SimulationContext


class ConfigError(ValueError):
    """Malformed or semantically invalid configuration."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SystemSection(_Strict):
    n_sites: int = Field(5, ge=1)
    j_coupling: float = 1.0
    g_field: float = 0.5
    initial_state: str = "zeros"

    @model_validator(mode="after")
    def _check_initial(self) -> SystemSection:
        s = self.initial_state
        if s not in ("zeros", "plus") and not (set(s) <= {"0", "1"} and len(s) == self.n_sites):
            raise ValueError(f"initial_state must be zeros, plus or a bit string of length {self.n_sites}")
        return self


class EvolutionSection(_Strict):
    dt: float = Field(0.001, gt=0)
    n_steps: int = Field(1000, ge=1)
    chi_max: int = Field(4, ge=1)
    svd_threshold: float = Field(1e-10, ge=0)
    sample_every: int = Field(1, ge=1)


class ScheduleSection(_Strict):
    kind: Literal["constant", "damped_oscillatory"] = "constant"
    gamma_inf: float = 0.0
    B: float = 0.0
    omega: float = 0.0
    f_cubic_coeff: float = 0.0

    @model_validator(mode="after")
    def _check_constant(self) -> ScheduleSection:
        if self.kind == "constant" and self.gamma_inf < 0:
            raise ValueError("a constant schedule needs gamma_inf >= 0")
        return self

    def to_schedule(self) -> RateSchedule:
        return RateSchedule(self.kind, self.gamma_inf, self.B, self.omega, self.f_cubic_coeff)


class NoiseEntry(_Strict):
    kind: Literal["dephasing", "excitation", "relaxation"]
    schedule: ScheduleSection


class EnsembleSection(_Strict):
    n_traj: int = Field(100, ge=1)
    base_seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1)


class SimConfig(_Strict):
    system: SystemSection = SystemSection()
    evolution: EvolutionSection = EvolutionSection()
    noise: tuple[NoiseEntry, ...] = ()
    ensemble: EnsembleSection = EnsembleSection()
    mode: Literal["tjm", "dense_trajectory", "dense_master"] = "tjm"
    observables: tuple[Literal["x", "z"], ...] = ("x",)
    sites: tuple[int, ...] | None = None

    @field_validator("observables")
    @classmethod
    def _non_empty(cls, v: tuple[str, ...]) -> tuple[str, ...]:
        if not v:
            raise ValueError("at least one observable is required")
        if len(set(v)) != len(v):
            raise ValueError("observables repeated")
        return v

    @model_validator(mode="after")
    def _check_semantics(self) -> SimConfig:
        n = self.system.n_sites
        if self.sites is not None:
            bad = [s for s in self.sites if not 0 <= s < n]
            if bad or not self.sites:
                raise ValueError(f"sites must be a non-empty subset of 0..{n - 1}")
        # completeness of the channel set is a precondition of the method
        try:
            self.noise_model()
        except ConfigurationError as exc:
            raise ValueError(str(exc)) from None
        return self

    # builders ---------------------------------------------------------------------

    def noise_model(self) -> NoiseModel:
        n = self.system.n_sites
        if not self.noise:
            return NoiseModel.noiseless(n)
        return NoiseModel.uniform(n, [(e.kind, e.schedule.to_schedule()) for e in self.noise])

    def context(self, **hooks: int | float) -> SimulationContext:
        """Stepper context; ``hooks`` forwards ``trotter_order`` / ``jump_ratio_scale``."""
        ev = self.evolution
        return SimulationContext(
            hamiltonian=build_tfi(self.system.n_sites, self.system.j_coupling, self.system.g_field),
            noise=self.noise_model(),
            dt=ev.dt,
            n_steps=ev.n_steps,
            chi_max=ev.chi_max,
            svd_threshold=ev.svd_threshold,
            sample_every=ev.sample_every,
            observables=tuple(self.observables),
            sites=self.sites,
            **hooks,
        )

    def size_cap(self) -> int | None:
        return {"dense_master": MASTER_CAP, "dense_trajectory": TRAJECTORY_CAP}.get(self.mode)

    def echo(self) -> dict:
        """Plain-data form that ``config_from_mapping`` turns back into an equal config."""
        return self.model_dump(mode="json")


def _format_loc(loc: tuple) -> str:
    out = ""
    for part in loc:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "<root>"


def config_from_mapping(data: object) -> SimConfig:
    """Validate already-parsed data.

    Raises:
        ConfigError: With the field path of every violation.
    """
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping at the top level")
    try:
        return SimConfig.model_validate(data)
    except ValidationError as exc:
        lines = [f"{_format_loc(e['loc'])}: {e['msg']}" for e in exc.errors()]
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines)) from None


def parse_config(text: str) -> SimConfig:
    """Parse YAML text into a validated ``SimConfig``.

    Raises:
        ConfigError: On YAML syntax errors (with line and column) or invalid content.
    """
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"YAML syntax error at {where}: {exc.problem}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML error: {exc}") from None
    return config_from_mapping(data)
