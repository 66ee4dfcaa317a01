"""Ground-state energies from the 1RDM energy functional ``E = Tr[h gamma] + (U/2) F``.

The search runs over the circulant ansatz family (nearest-neighbour entry
``alpha*eta``, longer-range entries ``alpha*eta**kappa``): a grid scan over
``(eta, kappa)`` followed by golden-section refinement in ``eta``.  Since ``F``
does not depend on ``U``, a :class:`FunctionalTable` computed once serves a whole
``U/t`` sweep.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .exact import hopping_energy
from .functional import (
    FunctionalConfig,
    dimer_exact,
    full_subspace,
    lowdin_frame,
    minimize_functional,
    mott_subspace,
    rescaled_dimer,
)
from .rdm import OneBodyRDM, RepresentabilityError, build_ansatz_gamma, spectral

log = logging.getLogger(__name__)

METHODS = ("rdmft1", "rdmft2", "exact_functional")
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def default_eta_grid() -> np.ndarray:
    return np.round(np.arange(0, 201) * 0.005, 10)


def default_kappa_grid() -> np.ndarray:
    return np.round(np.arange(0, 13) * 0.5 + 2.0, 10)


def energy_functional(sites: int, t: float, u: float, eta1: float, f_raw: float) -> float:
    """``-2 t M eta1 + (U/2) F`` on a ring; the dimer has one bond, ``-2 t eta1``."""
    if sites < 2:
        raise ValueError("need at least two sites")
    bonds = 1 if sites == 2 else sites
    return -2.0 * t * bonds * eta1 + 0.5 * u * f_raw


class FunctionalProvider:
    """Maps a 1RDM from the ansatz family to ``F_raw``."""

    name = "provider"
    uses_kappa = True

    def __init__(self, sites: int, particles: int):
        self.sites = sites
        self.particles = particles
        self.filling = particles / sites

    def __call__(self, gamma: OneBodyRDM, eta: float) -> tuple[float, bool]:
        raise NotImplementedError


def default_config(method: str, seed: int = 0) -> FunctionalConfig:
    """Optimizer settings per method: the Mott search starts only from ``gamma^(1/2)``."""
    if method.replace("-", "_") == "rdmft1":
        return FunctionalConfig(seed=seed, restarts=0, zero_start=False)
    return FunctionalConfig(seed=seed, restarts=4, method="lbfgs")


class MottProvider(FunctionalProvider):
    """Frame minimization in ``span{b_i |alpha,...,alpha>}``, warm-started at ``d = gamma^(1/2)``."""

    name = "rdmft1"

    def __init__(self, sites: int, particles: int, config: FunctionalConfig | None = None):
        super().__init__(sites, particles)
        self.sub = mott_subspace(sites, particles // sites if particles % sites == 0 else self.filling)
        self.config = config or default_config("rdmft1")

    def __call__(self, gamma, eta):
        ev = minimize_functional(gamma, self.sub, self.config, [lowdin_frame(spectral(gamma))])
        return ev.value, ev.converged


class RescaledDimerProvider(FunctionalProvider):
    name = "rdmft2"
    uses_kappa = False

    def __call__(self, gamma, eta):
        return rescaled_dimer(self.sites, self.filling, eta), True


class DimerExactProvider(FunctionalProvider):
    name = "exact_functional"
    uses_kappa = False

    def __init__(self, sites: int = 2, particles: int = 2):
        if (sites, particles) != (2, 2):
            raise ValueError("the closed-form functional is only known for the two-boson dimer")
        super().__init__(sites, particles)

    def __call__(self, gamma, eta):
        return dimer_exact(float(gamma.matrix[0, 1])), True


class FullSubspaceProvider(FunctionalProvider):
    """Relaxed functional over the whole ``(N-1)``-particle space."""

    name = "exact_functional"

    def __init__(self, sites: int, particles: int, config: FunctionalConfig | None = None):
        super().__init__(sites, particles)
        self.sub = full_subspace(sites, particles)
        self.config = config or default_config("exact_functional")
        self.uses_kappa = sites > 3

    def __call__(self, gamma, eta):
        ev = minimize_functional(gamma, self.sub, self.config)
        return ev.value, ev.converged


def make_provider(method: str, sites: int, particles: int, config: FunctionalConfig | None = None):
    method = method.replace("-", "_")
    if method == "rdmft1":
        return MottProvider(sites, particles, config)
    if method == "rdmft2":
        return RescaledDimerProvider(sites, particles)
    if method == "exact_functional":
        if (sites, particles) == (2, 2):
            return DimerExactProvider()
        return FullSubspaceProvider(sites, particles, config)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def _ansatz(provider: FunctionalProvider, eta: float, kappa: float) -> OneBodyRDM:
    return build_ansatz_gamma(provider.sites, provider.filling, eta, kappa)


def _table_point(args):
    provider, eta, kappa = args
    try:
        gamma = _ansatz(provider, eta, kappa)
    except RepresentabilityError:
        return math.nan, False, True
    f, ok = provider(gamma, eta)
    return f, ok, False


@dataclass
class FunctionalTable:
    """``F_raw`` on the ``(eta, kappa)`` grid; ``nan`` marks non-representable points."""

    etas: np.ndarray
    kappas: np.ndarray
    values: np.ndarray
    converged: np.ndarray

    @property
    def skipped(self) -> list[tuple[float, float]]:
        i, j = np.nonzero(np.isnan(self.values))
        return [(float(self.etas[a]), float(self.kappas[b])) for a, b in zip(i, j)]


def functional_table(provider: FunctionalProvider, eta_grid=None, kappa_grid=None, workers: int = 1) -> FunctionalTable:
    etas = default_eta_grid() if eta_grid is None else np.asarray(eta_grid, dtype=np.float64)
    kappas = default_kappa_grid() if kappa_grid is None else np.asarray(kappa_grid, dtype=np.float64)
    if not provider.uses_kappa:
        kappas = kappas[:1]
    tasks = [(provider, float(e), float(k)) for e in etas for k in kappas]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_table_point, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        out = [_table_point(t) for t in tasks]
    vals = np.array([o[0] for o in out]).reshape(len(etas), len(kappas))
    conv = np.array([o[1] for o in out]).reshape(len(etas), len(kappas))
    return FunctionalTable(etas, kappas, vals, conv)


@dataclass
class EnergyResult:
    u_over_t: float
    method: str
    eta: float
    kappa: float
    f_raw: float
    energy: float
    status: str = "ok"
    skipped: list = field(default_factory=list)


def _golden(fun, lo: float, hi: float, tol: float = 1e-7, max_iter: int = 80) -> tuple[float, float]:
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fun(d)
    return (c, fc) if fc < fd else (d, fd)


def minimize_energy(sites: int, particles: int, t: float, u: float, provider: FunctionalProvider,
                    eta_grid=None, kappa_grid=None, table: FunctionalTable | None = None,
                    refine: bool = True, extra_candidates: Sequence[OneBodyRDM] = ()) -> EnergyResult:
    """Minimize ``E`` over the ansatz grid, then refine ``eta`` at the best ``kappa``.

    ``extra_candidates`` are arbitrary 1RDMs evaluated alongside the grid.
    """
    if table is None:
        table = functional_table(provider, eta_grid, kappa_grid)
    alpha = particles / sites
    etas, kappas = table.etas, table.kappas
    energies = np.full(table.values.shape, math.inf)
    ok = ~np.isnan(table.values)
    eta1 = alpha * etas[:, None] * np.ones_like(table.values)
    energies[ok] = np.array([energy_functional(sites, t, u, e1, f) for e1, f in zip(eta1[ok], table.values[ok])])
    if not np.any(ok) and not extra_candidates:
        raise RepresentabilityError("no representable point on the ansatz grid")

    best = None
    if np.any(ok):
        i, j = np.unravel_index(int(np.argmin(energies)), energies.shape)
        best = EnergyResult(u, provider.name, float(etas[i]), float(kappas[j]), float(table.values[i, j]),
                            float(energies[i, j]))
        if not table.converged[i, j]:
            best.status = "not_converged"
        if refine and len(etas) > 1:
            kappa = float(kappas[j])
            lo = float(etas[max(i - 1, 0)])
            hi = float(etas[min(i + 1, len(etas) - 1)])
            cache = {}

            def e_of(eta):
                try:
                    gamma = _ansatz(provider, eta, kappa)
                except RepresentabilityError:
                    return math.inf
                f, _ = provider(gamma, eta)
                cache[eta] = f
                return energy_functional(sites, t, u, alpha * eta, f)

            eta_r, e_r = _golden(e_of, lo, hi)
            if e_r < best.energy:
                best = EnergyResult(u, provider.name, eta_r, kappa, cache[eta_r], e_r, best.status)

    for gamma in extra_candidates:
        f, conv = provider(gamma, float(gamma.matrix[0, 1]) / alpha)
        e = hopping_energy(gamma, t) + 0.5 * u * f
        if best is None or e < best.energy:
            best = EnergyResult(u, provider.name, float(gamma.matrix[0, 1]) / alpha, math.nan, f, e,
                                "ok" if conv else "not_converged")
    best.skipped = table.skipped
    return best


def sweep(sites: int, particles: int, t: float, u_list: Iterable[float], method: str = "rdmft1",
          eta_grid=None, kappa_grid=None, config: FunctionalConfig | None = None, workers: int = 1,
          refine: bool = True) -> list[EnergyResult]:
    """One :class:`EnergyResult` per ``U/t``, in input order; failures are recorded, not raised."""
    u_list = [float(u) for u in u_list]
    if not u_list:
        raise ValueError("empty U/t list")
    provider = make_provider(method, sites, particles, config)
    table = functional_table(provider, eta_grid, kappa_grid, workers)
    results = []
    for u in u_list:
        try:
            results.append(minimize_energy(sites, particles, t, u, provider, table=table, refine=refine))
        except (ArithmeticError, ValueError) as exc:
            log.warning("U/t=%g failed: %s", u, exc)
            results.append(EnergyResult(u, provider.name, math.nan, math.nan, math.nan, math.nan, f"error: {exc}"))
    return results


@dataclass(frozen=True)
class ReferenceComparison:
    u_over_t: np.ndarray
    relative_errors: np.ndarray

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.relative_errors)))

    @property
    def mean_abs(self) -> float:
        return float(np.mean(np.abs(self.relative_errors)))


def compare_reference(results: Sequence[EnergyResult], reference: Sequence[tuple[float, float]],
                      atol: float = 1e-9) -> ReferenceComparison:
    """``(E - E_ref) / E_ref`` at each result's ``U/t``."""
    ref = [(float(u), float(e)) for u, e in reference]
    us, errs = [], []
    for r in results:
        match = [e for u, e in ref if abs(u - r.u_over_t) <= atol]
        if not match:
            raise KeyError(f"no reference energy for U/t={r.u_over_t}")
        us.append(r.u_over_t)
        errs.append((r.energy - match[0]) / match[0])
    return ReferenceComparison(np.array(us), np.array(errs))


def read_reference_csv(path) -> list[tuple[float, float]]:
    """Two-column CSV with header ``u_over_t,e_ref``; ``#`` lines are ignored."""
    with open(path, newline="") as fh:
        rows = [line for line in fh if line.strip() and not line.lstrip().startswith("#")]
    reader = csv.DictReader(rows)
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["u_over_t", "e_ref"]:
        raise ValueError(f"reference file {path} must have header 'u_over_t,e_ref'")
    return [(float(r["u_over_t"]), float(r["e_ref"])) for r in reader]
