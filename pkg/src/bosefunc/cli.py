"""Command-line front end: functional curves, energy sweeps, derivatives, training, exact oracle.

Every CSV starts with ``#`` metadata lines (artifact version and the validated
run configuration).  JSON output carries the same record under ``metadata``.
Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import energy as energy_mod
from . import surrogate as sg
from .exact import build_hamiltonian, ground_state, interaction_expectation
from .fock import DimensionError
from .functional import (
    FunctionalConfig,
    dimer_exact_derivative,
    envelope_derivative,
    full_subspace,
    functional_derivative,
    lowdin_frame,
    minimize_functional,
    mott_subspace,
    normalize_curve,
)
from .rdm import UniformFamily, spectral

log = logging.getLogger("bosefunc")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


def parse_range(text: str, name: str = "grid") -> list[float]:
    """``a:b:step`` (inclusive end) or a single number."""
    parts = text.split(":")
    try:
        nums = [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r}") from None
    if len(nums) == 1:
        return nums
    if len(nums) != 3:
        raise ConfigError(f"{name}: expected a:b:step, got {text!r}")
    a, b, step = nums
    if step <= 0:
        raise ConfigError(f"{name}: step must be positive")
    if a > b:
        raise ConfigError(f"{name}: start {a} exceeds end {b}")
    count = int(math.floor((b - a) / step + 1e-9)) + 1
    return [round(a + i * step, 12) for i in range(count)]


@dataclass
class RunConfig:
    command: str
    sites: int
    filling: float
    particles: int
    t: float = 1.0
    u_over_t: list = field(default_factory=list)
    eta_grid: Optional[list] = None
    kappa_grid: Optional[list] = None
    subspace: str = "full"
    method: str = "rdmft1"
    seed: int = 0
    out: Optional[str] = None
    reference: Optional[str] = None
    checkpoint: Optional[str] = None
    workers: int = 1
    epochs: Optional[int] = None
    lr: Optional[float] = None
    hidden: Optional[list] = None

    def metadata(self) -> dict:
        return {"artifact": "bosefunc", "version": __version__, "config": asdict(self)}


def _positive_int(value, name):
    if value is None or int(value) != value or value < 1:
        raise ConfigError(f"{name} must be a positive integer")
    return int(value)


def build_config(args: argparse.Namespace) -> RunConfig:
    sites = _positive_int(args.sites, "--sites")
    if sites < 2:
        raise ConfigError("--sites must be at least 2")
    filling = float(args.filling)
    particles = filling * sites
    if filling <= 0 or abs(particles - round(particles)) > 1e-9:
        raise ConfigError(f"--filling {filling} does not give an integer particle number on {sites} sites")
    cfg = RunConfig(args.command, sites, filling, int(round(particles)))
    cfg.seed = int(args.seed)
    cfg.out = args.out
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
    cfg.workers = _positive_int(workers, "--workers")

    if args.eta_grid is not None:
        cfg.eta_grid = parse_range(args.eta_grid, "--eta-grid")
        if not cfg.eta_grid or min(cfg.eta_grid) < 0 or max(cfg.eta_grid) > 1:
            raise ConfigError("--eta-grid must lie inside [0, 1]")
    if getattr(args, "kappa_grid", None) is not None:
        cfg.kappa_grid = parse_range(args.kappa_grid, "--kappa-grid")
        if min(cfg.kappa_grid) < 2 or max(cfg.kappa_grid) > 8:
            raise ConfigError("--kappa-grid must lie inside [2, 8]")
    if getattr(args, "subspace", None) is not None:
        cfg.subspace = args.subspace
        if cfg.subspace == "mott" and cfg.particles % sites:
            raise ConfigError("the Mott subspace needs integer filling")
    if getattr(args, "method", None) is not None:
        cfg.method = args.method.replace("-", "_")
    if getattr(args, "u_over_t", None):
        for item in args.u_over_t:
            cfg.u_over_t.extend(parse_range(item, "--u-over-t"))
        if any(u < 0 for u in cfg.u_over_t):
            raise ConfigError("--u-over-t must be nonnegative")
    if getattr(args, "reference", None) is not None:
        if not Path(args.reference).is_file():
            raise ConfigError(f"reference file {args.reference} not found")
        cfg.reference = args.reference
    if getattr(args, "checkpoint", None) is not None:
        cfg.checkpoint = args.checkpoint
        if args.command == "derivative" and not Path(args.checkpoint).is_file():
            raise ConfigError(f"checkpoint {args.checkpoint} not found")
    if args.command == "train":
        if args.lr is not None and not args.lr > 0:
            raise ConfigError("--lr must be positive")
        if args.epochs is not None and args.epochs < 1:
            raise ConfigError("--epochs must be at least 1")
        cfg.lr, cfg.epochs = args.lr, args.epochs
        cfg.hidden = [int(h) for h in args.hidden.split(",")] if args.hidden else None
        if cfg.hidden is not None and (len(cfg.hidden) != 2 or min(cfg.hidden) < 1):
            raise ConfigError("--hidden needs two positive sizes, e.g. 20,20")
        if cfg.checkpoint is None:
            raise ConfigError("train needs --checkpoint for the output model")
    if args.command == "energy" and not cfg.u_over_t:
        raise ConfigError("energy needs at least one --u-over-t value")
    if args.command == "exact" and len(cfg.u_over_t) != 1:
        raise ConfigError("exact needs exactly one --u-over-t value")
    if args.command == "derivative" and cfg.checkpoint is None and cfg.method != "exact_functional":
        raise ConfigError("derivative needs --checkpoint or --method exact-functional")
    return cfg


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def render_csv(cfg: RunConfig, columns: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    meta = cfg.metadata()
    buf.write(f"# bosefunc {meta['version']}\n")
    buf.write(f"# command: {cfg.command}\n")
    buf.write(f"# seed: {cfg.seed}\n")
    buf.write("# config: " + json.dumps(meta["config"], sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _emit(text: str, path: Optional[str]) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _subspace(cfg: RunConfig):
    if cfg.subspace == "mott":
        return mott_subspace(cfg.sites, cfg.particles // cfg.sites)
    return full_subspace(cfg.sites, cfg.particles)


def _functional_point(args):
    cfg, sub, eta = args
    gamma = UniformFamily(cfg.sites, cfg.filling)(eta)
    if sub.label == "mott":
        fc = FunctionalConfig(seed=cfg.seed, restarts=0, zero_start=False)
        return minimize_functional(gamma, sub, fc, [lowdin_frame(spectral(gamma))])
    return minimize_functional(gamma, sub, FunctionalConfig(seed=cfg.seed, restarts=4, method="lbfgs"))


def _pool_map(fn, tasks, workers):
    if workers > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def cmd_functional(cfg: RunConfig) -> int:
    etas = cfg.eta_grid or parse_range("0:1:0.05")
    sub = _subspace(cfg)
    evs = _pool_map(_functional_point, [(cfg, sub, e) for e in etas], cfg.workers)
    values = np.array([ev.value for ev in evs])
    norm = normalize_curve(values) if len(values) > 1 and values[-1] != values[0] else np.full(len(values), math.nan)
    rows = [[cfg.sites, cfg.particles, cfg.filling, e, ev.value, fn, ev.converged, ev.iterations, ev.gradient_norm]
            for e, ev, fn in zip(etas, evs, norm)]
    cols = ["m", "n", "alpha", "eta", "f_raw", "f_normalized", "converged", "iterations", "gradient_norm"]
    _emit(render_csv(cfg, cols, rows), cfg.out)
    return EXIT_OK


def cmd_energy(cfg: RunConfig) -> int:
    results = energy_mod.sweep(cfg.sites, cfg.particles, cfg.t, cfg.u_over_t, cfg.method,
                               eta_grid=cfg.eta_grid, kappa_grid=cfg.kappa_grid,
                               config=energy_mod.default_config(cfg.method, cfg.seed), workers=cfg.workers)
    rows = [[r.u_over_t, r.method, r.eta, r.kappa, r.f_raw, r.energy, r.status] for r in results]
    cols = ["u_over_t", "method", "eta_star", "kappa_star", "f_raw", "e", "status"]
    _emit(render_csv(cfg, cols, rows), cfg.out)
    if cfg.reference is not None:
        cmp = energy_mod.compare_reference(results, energy_mod.read_reference_csv(cfg.reference))
        text = render_csv(cfg, ["u_over_t", "delta_over_eref"], [list(p) for p in zip(cmp.u_over_t, cmp.relative_errors)])
        text += f"# max_abs: {_fmt(cmp.max_abs)}\n# mean_abs: {_fmt(cmp.mean_abs)}\n"
        _emit(text, None if cfg.out is None else delta_path(cfg.out))
    if any(r.status.startswith("error") for r in results):
        return EXIT_NUMERIC
    return EXIT_OK


def delta_path(out: str) -> str:
    p = Path(out)
    return str(p.with_name(p.stem + "_delta" + (p.suffix or ".csv")))


def cmd_derivative(cfg: RunConfig) -> int:
    etas = cfg.eta_grid if cfg.eta_grid is not None else list(sg.default_eval_grid())
    if not etas:
        raise ConfigError("empty eta grid")
    family = UniformFamily(cfg.sites, cfg.filling)
    dimer = (cfg.sites, cfg.particles) == (2, 2)
    model = sg.load_checkpoint(cfg.checkpoint) if cfg.checkpoint else None
    if model is not None and (model.sites, model.particles) != (cfg.sites, cfg.particles):
        raise ConfigError(f"checkpoint is for M={model.sites}, N={model.particles}")
    sub = model.sub if model is not None else _subspace(cfg)
    fcfg = FunctionalConfig(seed=cfg.seed, restarts=4, method="lbfgs")
    rows = []
    for eta in etas:
        if model is not None:
            d_model = sg.derivative(model, family, eta)
        else:
            d_model = functional_derivative(family, eta, sub, "envelope", fcfg)
        if dimer:
            d_exact = dimer_exact_derivative(eta)
        else:
            d_exact = functional_derivative(family, eta, sub, "reoptimize", fcfg)
        rows.append([eta, 1.0 - eta, d_model, d_exact, abs(d_model - d_exact)])
    _emit(render_csv(cfg, ["eta", "one_minus_eta", "dfdeta_model", "dfdeta_exact", "abs_error"], rows), cfg.out)
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    overrides = {"seed": cfg.seed}
    if cfg.lr is not None:
        overrides["lr"] = cfg.lr
    if cfg.epochs is not None:
        overrides["epochs"] = cfg.epochs
    if cfg.hidden is not None:
        overrides["hidden"] = tuple(cfg.hidden)
    net = sg.NetworkConfig.defaults(cfg.sites, cfg.particles, **overrides)
    model = sg.SurrogateModel.create(cfg.sites, cfg.particles, cfg.subspace, net)
    family = UniformFamily(cfg.sites, cfg.filling)
    status = EXIT_OK
    try:
        sg.train(model, family, cfg.eta_grid)
    except sg.TrainingDivergence as exc:
        log.error("%s", exc)
        status = EXIT_NUMERIC
    else:
        sg.save_checkpoint(model, cfg.checkpoint)
    rows = [[i, loss] for i, loss in enumerate(model.history)]
    _emit(render_csv(cfg, ["epoch", "loss"], rows), cfg.out)
    return status


def cmd_exact(cfg: RunConfig) -> int:
    ham = build_hamiltonian(cfg.sites, cfg.particles, cfg.t, cfg.u_over_t[0])
    gs = ground_state(ham)
    payload = {
        "metadata": cfg.metadata(),
        "e0": gs.energy,
        "gamma": gs.gamma.matrix.tolist(),
        "interaction_expectation": interaction_expectation(gs.psi, ham.basis),
        "degenerate": gs.degenerate,
    }
    _emit(json.dumps(payload, indent=2, sort_keys=True) + "\n", cfg.out)
    return EXIT_OK


COMMANDS = {
    "functional": cmd_functional,
    "energy": cmd_energy,
    "derivative": cmd_derivative,
    "train": cmd_train,
    "exact": cmd_exact,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bosefunc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"bosefunc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--sites", type=int, required=True, help="number of lattice sites M")
        p.add_argument("--filling", type=float, default=1.0, help="particles per site alpha (N = alpha*M)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--workers", type=int, default=None, help="worker processes (default: logical cores)")
        p.add_argument("--eta-grid", help="a:b:step")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("functional", help="F_raw along the uniform family")
    common(p)
    p.add_argument("--subspace", choices=("full", "mott"), default="full")

    p = sub.add_parser("energy", help="ground-state energy sweep over U/t")
    common(p)
    p.add_argument("--u-over-t", action="append", required=True, help="value or a:b:step; repeatable")
    p.add_argument("--kappa-grid", help="a:b:step inside [2, 8]")
    p.add_argument("--method", choices=("rdmft1", "rdmft2", "exact-functional"), default="rdmft1")
    p.add_argument("--reference", help="CSV with header u_over_t,e_ref")

    p = sub.add_parser("derivative", help="dF/deta from a surrogate or the minimizer")
    common(p)
    p.add_argument("--checkpoint", help="trained surrogate checkpoint")
    p.add_argument("--method", choices=("exact-functional",), default=None)
    p.add_argument("--subspace", choices=("full", "mott"), default="full")

    p = sub.add_parser("train", help="train the surrogate and write a checkpoint")
    common(p)
    p.add_argument("--checkpoint", help="output checkpoint path")
    p.add_argument("--subspace", choices=("full", "mott"), default="full")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--hidden", help="two comma-separated sizes, e.g. 20,20")

    p = sub.add_parser("exact", help="exact-diagonalization ground state as JSON")
    common(p)
    p.add_argument("--u-over-t", action="append", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        return COMMANDS[cfg.command](cfg)
    except (ConfigError, DimensionError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
