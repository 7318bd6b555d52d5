"""Command-line entry point.

``tensorjump run --config cfg.yaml --out results/`` writes ``observables.csv``,
``martingale.csv``, ``jumps.csv``, ``run.json`` and PNG figures. ``run`` is the default
subcommand, so ``tensorjump --config cfg.yaml --out results/`` works too.
``tensorjump validate --scale quick`` runs the acceptance checks.

Exit codes: 0 success, 1 runtime fault, 2 configuration error, 3 size cap or failed
validation, 4 I/O error. Errors print as ``error[<category>]: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, SimConfig, config_from_mapping, parse_config
from .ensemble import EnsembleResult, run_ensemble
from .mpo import X, Z
from .reference import SizeCapError, integrate_master, tfi_dense
from .tjm import initial_state

if TYPE_CHECKING:
    from numpy.typing import NDArray

EXIT_RUNTIME, EXIT_CONFIG, EXIT_VALIDATION, EXIT_IO = 1, 2, 3, 4

OBSERVABLE_HEADER = ("time", "site", "observable", "mean", "stderr", "n_traj")
MARTINGALE_HEADER = ("time", "mean_mu", "var_mu")
JUMPS_HEADER = ("time_bin", "channel_kind", "count")


class CliError(Exception):
    def __init__(self, category: str, message: str, code: int) -> None:
        super().__init__(message)
        self.category = category
        self.code = code


# simulation -------------------------------------------------------------------------


def _pauli(name: str) -> NDArray[np.complex128]:
    return {"x": X, "z": Z}[name]


def _master_result(cfg: SimConfig) -> EnsembleResult:
    ctx = cfg.context()
    n = cfg.system.n_sites
    h = tfi_dense(n, cfg.system.j_coupling, cfg.system.g_field)
    psi = initial_state(n, cfg.system.initial_state).to_dense()
    rho0 = np.outer(psi, psi.conj())
    res = integrate_master(h, ctx.noise, rho0, ctx.dt, ctx.n_steps, sample_every=ctx.sample_every)
    sites = list(ctx.measured_sites)
    mean = np.stack([res.local(_pauli(o))[:, sites] for o in ctx.observables], axis=1)
    t = len(res.times)
    return EnsembleResult(
        times=res.times,
        observables=tuple(ctx.observables),
        sites=ctx.measured_sites,
        mean=mean,
        stderr=np.zeros_like(mean),
        mu_mean=np.ones(t),
        mu_var=np.zeros(t),
        jump_times=np.array([s.rate_time for s in ctx.steps]),
        channel_kinds=tuple(ctx.noise.kinds),
        jump_counts=np.zeros((len(ctx.steps), len(ctx.noise.kinds)), dtype=np.int64),
        n_traj=0,
        n_requested=0,
        max_bond=2 ** (n // 2),
    )


def simulate(cfg: SimConfig, **hooks: int | float) -> EnsembleResult:
    """Run the configured mode and return merged statistics.

    Raises:
        SizeCapError: When a dense mode is asked for too many sites.
    """
    cap = cfg.size_cap()
    if cap is not None and cfg.system.n_sites > cap:
        raise SizeCapError(f"mode {cfg.mode} supports at most {cap} sites, got {cfg.system.n_sites}")
    if cfg.mode == "dense_master":
        return _master_result(cfg)
    ctx = cfg.context(**hooks)
    psi0 = initial_state(cfg.system.n_sites, cfg.system.initial_state)
    dense_h = None
    if cfg.mode == "dense_trajectory":
        dense_h = tfi_dense(cfg.system.n_sites, cfg.system.j_coupling, cfg.system.g_field)
    ens = cfg.ensemble
    return run_ensemble(ctx, ens.n_traj, ens.base_seed, ens.workers, cfg.mode, psi0, dense_h)


# output -----------------------------------------------------------------------------


def _fmt(x: float) -> str:
    """Fixed-point, locale-independent number formatting."""
    if not np.isfinite(x):
        return "nan"
    return f"{x:.12f}"


def _write_csv(path: Path, header: Sequence[str], rows: list[tuple]) -> None:
    with path.open("w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_outputs(
    result: EnsembleResult, cfg: SimConfig, out_dir: Path, wall_time: float, plots: bool = True
) -> list[Path]:
    """Write CSVs, ``run.json`` and (optionally) PNG figures into ``out_dir``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    obs_rows = []
    for ti, t in enumerate(result.times):
        for oi, name in enumerate(result.observables):
            for si, site in enumerate(result.sites):
                obs_rows.append(
                    (f"{t:.6f}", site, name, _fmt(result.mean[ti, oi, si]), _fmt(result.stderr[ti, oi, si]), result.n_traj)
                )
    paths = [out_dir / "observables.csv", out_dir / "martingale.csv", out_dir / "jumps.csv", out_dir / "run.json"]
    _write_csv(paths[0], OBSERVABLE_HEADER, obs_rows)
    _write_csv(
        paths[1],
        MARTINGALE_HEADER,
        [(f"{t:.6f}", _fmt(m), _fmt(v)) for t, m, v in zip(result.times, result.mu_mean, result.mu_var)],
    )
    jump_rows = [
        (f"{t:.6f}", kind, int(result.jump_counts[b, k]))
        for b, t in enumerate(result.jump_times)
        for k, kind in enumerate(result.channel_kinds)
    ]
    _write_csv(paths[2], JUMPS_HEADER, jump_rows)
    meta = {
        "config": cfg.echo(),
        "seed": cfg.ensemble.base_seed,
        "versions": {
            "tensorjump": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "wall_time_s": round(wall_time, 3),
        "n_traj_completed": result.n_traj,
        "n_traj_requested": result.n_requested,
        "faults": list(result.faults),
        "max_bond": result.max_bond,
    }
    paths[3].write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    if plots:
        from .plotting import render_all

        paths += render_all(result, out_dir, title=f"{cfg.mode}, N={cfg.system.n_sites}")
    return paths


def load_run_config(path: Path) -> SimConfig:
    """Config stored in a ``run.json`` echo."""
    return config_from_mapping(json.loads(path.read_text(encoding="utf-8"))["config"])


# argument handling --------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tensorjump", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command")
    run = sub.add_parser("run", help="simulate a configuration and write CSV/JSON/PNG outputs")
    run.add_argument("--config", required=True, type=Path, help="YAML configuration file")
    run.add_argument("--out", required=True, type=Path, help="output directory")
    run.add_argument("--mode", choices=("tjm", "dense_trajectory", "dense_master"))
    run.add_argument("--trajectories", type=int, help="override ensemble.n_traj")
    run.add_argument("--seed", type=int, help="override ensemble.base_seed")
    run.add_argument("--workers", type=int, help="override ensemble.workers")
    run.add_argument("--no-plots", action="store_true", help="skip the PNG figures")
    val = sub.add_parser("validate", help="run the acceptance checks")
    val.add_argument("--scale", choices=("quick", "full"), default="quick")
    val.add_argument("--out", type=Path, help="write the JSON report here")
    return parser


def _apply_overrides(cfg: SimConfig, args: argparse.Namespace) -> SimConfig:
    data = cfg.echo()
    if args.mode:
        data["mode"] = args.mode
    for flag, key in (("trajectories", "n_traj"), ("seed", "base_seed"), ("workers", "workers")):
        value = getattr(args, flag)
        if value is not None:
            data["ensemble"][key] = value
    return config_from_mapping(data)


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        text = args.config.read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError("io", f"cannot read {args.config}: {exc.strerror}", EXIT_IO) from None
    try:
        cfg = _apply_overrides(parse_config(text), args)
    except ConfigError as exc:
        raise CliError("config", f"{args.config}: {exc}", EXIT_CONFIG) from None
    start = time.perf_counter()
    try:
        result = simulate(cfg)
    except SizeCapError as exc:
        raise CliError("size", str(exc), EXIT_VALIDATION) from None
    wall = time.perf_counter() - start
    try:
        paths = write_outputs(result, cfg, args.out, wall, plots=not args.no_plots)
    except OSError as exc:
        raise CliError("io", f"cannot write to {exc.filename or args.out}: {exc.strerror}", EXIT_IO) from None
    print(f"wrote {len(paths)} files to {args.out} ({wall:.1f} s, {result.n_traj}/{result.n_requested} trajectories)")
    if result.faults:
        print(f"warning: {len(result.faults)} trajectories aborted; see run.json", file=sys.stderr)
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    from .validation import format_summary, run_all

    reports = run_all(args.scale)
    print(format_summary(reports))
    if args.out:
        try:
            args.out.parent.mkdir(parents=True, exist_ok=True)
            args.out.write_text(json.dumps([r.to_dict() for r in reports], indent=2) + "\n", encoding="utf-8")
        except OSError as exc:
            raise CliError("io", f"cannot write {args.out}: {exc.strerror}", EXIT_IO) from None
    return 0 if all(r.passed for r in reports) else EXIT_VALIDATION


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] not in ("run", "validate", "-h", "--help"):
        argv.insert(0, "run")
    args = _build_parser().parse_args(argv)
    if args.command is None:
        _build_parser().print_help()
        return EXIT_CONFIG
    try:
        return _cmd_run(args) if args.command == "run" else _cmd_validate(args)
    except CliError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # noqa: BLE001 - last-resort category for unexpected faults
        print(f"error[runtime]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
