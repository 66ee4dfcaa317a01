"""The universal functional as a minimization over orthonormal frames.

For a 1RDM with spectral decomposition ``gamma = U diag(n) U^T`` every set of
``(N-1)``-particle vectors ``Phi_i`` (rows of ``d``, expressed in a frame of the
search subspace) with Gram matrix ``gamma`` is ``d = U diag(sqrt(n)) V^T`` for
some frame ``V`` with orthonormal columns.  The interaction value is

    F(V) = sum_i <Phi_i| n_i |Phi_i> = sum_ab sqrt(n_a n_b) Delta_ab(U, V),

reported without the ``U/2`` prefactor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from . import manifold
from .exact import rdm_from_wavefunction
from .fock import (
    DimensionError,
    FockBasis,
    annihilation_matrix,
    count_dimension,
    enumerate_basis,
    subspace_number_matrices,
)
from .optim import AdamW
from .rdm import OneBodyRDM, SpectralDecomposition, spectral

DEFAULT_FRAME_CAP = 10**4


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal frame of the search space inside the ``(N-1)``-particle space.

    Fock-state frames are stored by their occupations (``K x M``) and never need
    the ambient basis; general frames carry dense ambient coordinates.
    """

    sites: int
    particles: int
    label: str
    occupations: Optional[np.ndarray] = None
    frame: Optional[np.ndarray] = field(default=None, repr=False)
    dense_number: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        if self.occupations is not None:
            return self.occupations.shape[0]
        return self.frame.shape[1]

    @property
    def diagonal(self) -> bool:
        return self.occupations is not None

    @cached_property
    def number_matrices(self) -> np.ndarray:
        """``(M, K, K)`` array of ``<m'|n_i|m>`` in the frame."""
        if self.dense_number is not None:
            return self.dense_number
        occ = self.occupations.astype(np.float64)
        out = np.zeros((self.sites, self.dim, self.dim))
        idx = np.arange(self.dim)
        out[:, idx, idx] = occ.T
        return out

    def ambient(self, cap: int = 10**6) -> FockBasis:
        return enumerate_basis(self.sites, self.particles - 1, cap)

    def frame_vectors(self, ambient: FockBasis) -> np.ndarray:
        """Frame columns in ambient Fock coordinates."""
        if self.frame is not None:
            return self.frame
        out = np.zeros((ambient.dim, self.dim))
        for k, occ in enumerate(self.occupations.tolist()):
            out[ambient.position(occ), k] = 1.0
        return out

    @classmethod
    def from_frame(cls, frame: np.ndarray, ambient: FockBasis, label: str = "custom") -> "SubspaceBasis":
        frame = np.asarray(frame, dtype=np.float64)
        mats = np.stack([subspace_number_matrices(frame, ambient, i) for i in range(ambient.sites)])
        return cls(ambient.sites, ambient.particles + 1, label, frame=frame, dense_number=mats)


def full_subspace(sites: int, particles: int, cap: int = DEFAULT_FRAME_CAP) -> SubspaceBasis:
    """Entire ``(N-1)``-particle Fock basis as the search frame."""
    if particles < 1:
        raise ValueError("need at least one particle")
    dim = count_dimension(sites, particles - 1)
    if dim > cap:
        raise DimensionError(f"H_(N-1) for M={sites}, N={particles} has {dim} states (cap {cap})")
    basis = enumerate_basis(sites, particles - 1, cap)
    return SubspaceBasis(sites, particles, "full", occupations=np.array(basis.states, dtype=np.int64))


def mott_subspace(sites: int, filling) -> SubspaceBasis:
    """Frame ``{b_i |alpha, ..., alpha>}``, normalized; frame vector ``i`` belongs to site ``i``."""
    if isinstance(filling, float) and not filling.is_integer():
        raise ValueError(f"Mott subspace needs integer filling, got {filling}")
    alpha = int(filling)
    if alpha != filling or alpha < 1:
        raise ValueError(f"Mott subspace needs integer filling >= 1, got {filling}")
    occ = np.full((sites, sites), alpha, dtype=np.int64)
    occ[np.arange(sites), np.arange(sites)] -= 1
    return SubspaceBasis(sites, sites * alpha, "mott", occupations=occ)


def _weights(spec: SpectralDecomposition) -> np.ndarray:
    n = spec.values
    if np.any(n < -1e-10):
        raise ValueError(f"negative occupation {n.min():.3e} in spectrum")
    return spec.vectors * np.sqrt(np.clip(n, 0.0, None))


def _check_shapes(spec: SpectralDecomposition, v: np.ndarray, sub: SubspaceBasis) -> None:
    m = spec.vectors.shape[0]
    if m != sub.sites:
        raise ValueError(f"1RDM has {m} sites but subspace has {sub.sites}")
    if v.shape != (sub.dim, m):
        raise ValueError(f"frame must be {(sub.dim, m)}, got {v.shape}")


def _apply_number(d: np.ndarray, sub: SubspaceBasis) -> np.ndarray:
    """Rows ``n_i Phi_i`` for the rows ``Phi_i`` of ``d``."""
    if sub.diagonal:
        return sub.occupations.T * d
    return np.einsum("imk,ik->im", sub.number_matrices, d)


def _interaction(d: np.ndarray, sub: SubspaceBasis) -> float:
    return float(np.sum(d * _apply_number(d, sub)))


def d_matrix(spec: SpectralDecomposition, v: np.ndarray, sub: SubspaceBasis | None = None) -> np.ndarray:
    """``d = U diag(sqrt(n)) V^T``; row ``i`` is ``Phi_i`` in frame coordinates."""
    return _weights(spec) @ np.asarray(v).T


def delta_matrix(spec: SpectralDecomposition, v: np.ndarray, sub: SubspaceBasis) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    _check_shapes(spec, v, sub)
    u = spec.vectors
    if sub.diagonal:
        blocks = np.einsum("ma,mi,mb->iab", v, sub.occupations.astype(np.float64), v)
    else:
        blocks = np.einsum("ma,imk,kb->iab", v, sub.number_matrices, v)
    delta = np.einsum("ia,ib,iab->ab", u, u, blocks)
    return 0.5 * (delta + delta.T)


def evaluate_functional(spec: SpectralDecomposition, v: np.ndarray, sub: SubspaceBasis) -> float:
    v = np.asarray(v, dtype=np.float64)
    _check_shapes(spec, v, sub)
    return _interaction(d_matrix(spec, v), sub)


def _value_and_frame_grad(spec: SpectralDecomposition, sub: SubspaceBasis) -> Callable:
    w = _weights(spec)

    def fn(v):
        d = w @ v.T
        p = _apply_number(d, sub)
        return float(np.sum(d * p)), 2.0 * p.T @ w

    return fn


@dataclass
class FunctionalConfig:
    max_iters: int = 5000
    tolerance: float = 1e-8
    lr: float = 1e-2
    seed: int = 0
    restarts: int = 3
    zero_start: bool = True
    method: str = "adam"  # or "lbfgs"

    def __post_init__(self):
        if self.method not in ("adam", "lbfgs"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.max_iters < 1 or self.tolerance <= 0 or self.lr <= 0 or self.restarts < 0:
            raise ValueError("invalid optimizer settings")


@dataclass
class FunctionalEvaluation:
    value: float
    params: np.ndarray
    base: Optional[np.ndarray]
    frame: np.ndarray
    iterations: int
    gradient_norm: float
    converged: bool
    spectrum: SpectralDecomposition
    start_values: list = field(default_factory=list)


def _run_adam(objective, x0, cfg: FunctionalConfig):
    x = x0.copy()
    opt = AdamW(x.size, cfg.lr)
    best = (math.inf, x, math.inf)
    it = 0
    for it in range(1, cfg.max_iters + 1):
        f, g = objective(x)
        gn = float(np.linalg.norm(g))
        if f < best[0] or gn < cfg.tolerance:
            best = (f, x, gn)
        if gn < cfg.tolerance:
            return f, x, gn, it, True
        x = opt.step(x, g)
    f, g = objective(best[1])
    return f, best[1], float(np.linalg.norm(g)), it, False


def _run_lbfgs(objective, x0, cfg: FunctionalConfig):
    x, nit = x0, 0
    # a line-search stall near round-off is retried from the end point with fresh memory
    for _ in range(4):
        res = minimize(objective, x, jac=True, method="L-BFGS-B",
                       options=dict(maxiter=cfg.max_iters - nit, gtol=cfg.tolerance * 1e-2, ftol=0.0, maxcor=20))
        x, nit = res.x, nit + int(res.nit)
        f, g = objective(x)
        gn = float(np.linalg.norm(g))
        if gn < cfg.tolerance or nit >= cfg.max_iters or res.nit == 0:
            break
    if gn >= cfg.tolerance:
        f, x, gn, nit = _polish(objective, f, x, g, gn, nit, cfg)
    return f, x, gn, nit, gn < cfg.tolerance


def _polish(objective, f, x, g, gn, nit, cfg: FunctionalConfig, steps: int = 200):
    """Barzilai-Borwein steps driven by the gradient alone.

    Value-based line searches stall once ``f`` changes drop below round-off,
    which leaves ``|grad|`` around ``sqrt(eps)``; the gradient is still informative
    there.  The best point by gradient norm is kept, and only if ``f`` did not rise.
    """
    best = (gn, f, x)
    xc, gc, alpha = x, g, 1e-3
    for _ in range(min(steps, max(cfg.max_iters - nit, 0))):
        xn = xc - alpha * gc
        fn, gn_vec = objective(xn)
        nit += 1
        if not np.isfinite(fn):
            break
        s, y = xn - xc, gn_vec - gc
        sy = float(s @ y)
        alpha = float(s @ s) / sy if sy > 0 else 1e-3
        xc, gc = xn, gn_vec
        norm = float(np.linalg.norm(gc))
        if norm < best[0] and fn <= f + 1e-12:
            best = (norm, fn, xc)
        if norm < cfg.tolerance * 1e-2:
            break
    gn, f, x = best
    return f, x, gn, nit


def lowdin_frame(spec: SpectralDecomposition) -> np.ndarray:
    """Frame ``V = U``, giving ``d = gamma^(1/2)``; needs a site-aligned ``K = M`` frame."""
    return spec.vectors.copy()


def minimize_functional(gamma: OneBodyRDM, sub: SubspaceBasis, config: FunctionalConfig | None = None,
                        initial_frames: Sequence[np.ndarray] = ()) -> FunctionalEvaluation:
    """Minimize ``F(V)`` over the frames of ``sub``.

    Starts: the zero coordinates (identity frame), one chart per entry in
    ``initial_frames`` and ``config.restarts`` Haar-random charts drawn from
    ``O(K)``.  The best end point is returned.
    """
    cfg = config or FunctionalConfig()
    if not isinstance(gamma, OneBodyRDM):
        gamma = OneBodyRDM.from_matrix(gamma)
    m, k = gamma.sites, sub.dim
    if m != sub.sites:
        raise ValueError(f"1RDM has {m} sites but subspace has {sub.sites}")
    if gamma.particles != sub.particles:
        raise ValueError(f"1RDM has N={gamma.particles} but subspace was built for N={sub.particles}")
    if k < m:
        raise ValueError(f"subspace dimension {k} is smaller than the number of sites {m}")
    spec = spectral(gamma)
    frame_fn = _value_and_frame_grad(spec, sub)
    rng = np.random.default_rng(cfg.seed)

    bases: list[Optional[np.ndarray]] = []
    if cfg.zero_start:
        bases.append(None)
    bases += [manifold.complete_frame(f) for f in initial_frames]
    bases += [manifold.haar_orthogonal(k, rng) for _ in range(cfg.restarts)]
    if not bases:
        raise ValueError("no starting points: enable zero_start, restarts or pass initial_frames")

    runner = _run_adam if cfg.method == "adam" else _run_lbfgs
    best = None
    values = []
    x0 = np.zeros(manifold.n_coords(k))
    for base in bases:
        def objective(x, base=base):
            return manifold.frame_with_gradient(x, k, m, frame_fn, base)

        f, x, gn, its, ok = runner(objective, x0, cfg)
        values.append(f)
        if best is None or f < best[0] - 1e-14 or (abs(f - best[0]) <= 1e-14 and ok and not best[4]):
            best = (f, x, gn, its, ok, base)
    f, x, gn, its, ok, base = best
    v = manifold.trivialize(x, k, m, base)
    return FunctionalEvaluation(f, x, base, v, its, gn, ok, spec, values)


def functional_curve(family, sub: SubspaceBasis, etas, config: FunctionalConfig | None = None,
                     warm_start: bool = True) -> list[FunctionalEvaluation]:
    """``minimize_functional`` along ``family(eta)``; each point also starts from the previous optimum."""
    out = []
    for eta in etas:
        gamma = family(float(eta))
        frames = []
        if sub.label == "mott":
            frames.append(lowdin_frame(spectral(gamma)))
        if warm_start and out:
            frames.append(out[-1].frame)
        out.append(minimize_functional(gamma, sub, config, frames))
    return out


def dimer_exact(eta: float) -> float:
    """Exact two-boson dimer functional ``1 - sqrt(1 - gamma_LR^2)``."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    return 1.0 - math.sqrt(1.0 - eta * eta)


def dimer_exact_derivative(eta: float) -> float:
    if not 0.0 <= eta < 1.0:
        raise ValueError(f"derivative diverges at eta=1; got {eta}")
    return eta / math.sqrt(1.0 - eta * eta)


def dimer_landscape(theta, theta_l):
    """Dimer objective for ``gamma_LR = cos(theta)`` at left-vector angle ``theta_l``."""
    return np.sin(theta_l) ** 2 + np.cos(theta + theta_l) ** 2


def dimer_landscape_minimum(theta: float, samples: int = 2001) -> tuple[float, float]:
    """``(theta_l*, J*)`` by a grid scan over one period refined with Brent's method."""
    grid = np.linspace(-np.pi / 2, np.pi / 2, samples)
    j = dimer_landscape(theta, grid)
    k = int(np.argmin(j))
    h = grid[1] - grid[0]
    res = minimize_scalar(lambda t: dimer_landscape(theta, t), bounds=(grid[k] - h, grid[k] + h),
                          method="bounded", options=dict(xatol=1e-12))
    return float(res.x), float(res.fun)


def rescaled_dimer(sites: int, filling: float, eta: float) -> float:
    """Bond-wise dimer value scaled to ``M`` sites at filling ``alpha``."""
    return 0.5 * sites * filling**2 * dimer_exact(eta)


def _fixed_basis_derivative(spec: SpectralDecomposition, dgamma: np.ndarray) -> np.ndarray:
    u = spec.vectors
    rot = u.T @ dgamma @ u
    off = rot - np.diag(np.diag(rot))
    if np.max(np.abs(off), initial=0.0) > 1e-10:
        raise ValueError("envelope derivative needs a family whose eigenvectors do not move "
                         "(circulant one-parameter families)")
    dn = np.diag(rot)
    n = spec.values
    dsqrt = np.zeros_like(n)
    for a in range(len(n)):
        if n[a] > 1e-14:
            dsqrt[a] = dn[a] / (2.0 * math.sqrt(n[a]))
        elif abs(dn[a]) > 1e-14:
            raise ArithmeticError("derivative diverges: an occupation vanishes while it changes")
    return dsqrt


def envelope_derivative(ev: FunctionalEvaluation, dgamma: np.ndarray, sub: SubspaceBasis) -> float:
    """``dF/deta`` holding the optimal frame fixed."""
    spec = ev.spectrum
    dsqrt = _fixed_basis_derivative(spec, dgamma)
    d = d_matrix(spec, ev.frame)
    dd = (spec.vectors * dsqrt) @ ev.frame.T
    return 2.0 * float(np.sum(dd * _apply_number(d, sub)))


def functional_derivative(family, eta: float, sub: SubspaceBasis, mode: str = "envelope",
                          config: FunctionalConfig | None = None, step: float = 1e-4,
                          initial_frames: Sequence[np.ndarray] = ()) -> float:
    cfg = config or FunctionalConfig()
    ev = minimize_functional(family(eta), sub, cfg, initial_frames)
    if not ev.converged:
        raise ArithmeticError(f"minimizer did not converge at eta={eta} (|grad|={ev.gradient_norm:.2e})")
    if mode == "envelope":
        return envelope_derivative(ev, family.derivative(eta), sub)
    if mode != "reoptimize":
        raise ValueError(f"unknown mode {mode!r}")
    lo, hi = max(0.0, eta - step), min(1.0, eta + step)
    warm = [ev.frame] + list(initial_frames)
    f_lo = ev.value if lo == eta else minimize_functional(family(lo), sub, cfg, warm).value
    f_hi = ev.value if hi == eta else minimize_functional(family(hi), sub, cfg, warm).value
    return (f_hi - f_lo) / (hi - lo)


@dataclass(frozen=True)
class BECSlopeFit:
    zeta: float
    eta_min: float
    eta_max: float
    residual: float
    etas: np.ndarray
    derivatives: np.ndarray


def fit_bec_slope(family, sub: SubspaceBasis, eta_grid, config: FunctionalConfig | None = None,
                  derivative: Callable[[float], float] | None = None) -> BECSlopeFit:
    """Exponent ``zeta`` of ``dF/deta ~ (1 - eta)^zeta`` near condensation."""
    etas = np.asarray(eta_grid, dtype=np.float64)
    if etas.size < 5:
        raise ValueError("need at least 5 grid points")
    if etas.min() < 0.9 or etas.max() > 0.9999:
        raise ValueError("grid must lie within [0.9, 0.9999]")
    if derivative is None:
        def derivative(e):
            return functional_derivative(family, e, sub, "envelope", config)
    ders = np.array([derivative(float(e)) for e in etas])
    if np.any(~np.isfinite(ders)) or np.any(ders <= 1e-12):
        raise ValueError("derivative does not grow towards condensation; no divergence to fit")
    x, y = np.log(1.0 - etas), np.log(ders)
    coef = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((np.polyval(coef, x) - y) ** 2)))
    return BECSlopeFit(float(coef[0]), float(etas.min()), float(etas.max()), resid, etas, ders)


def rotated_functional(ev: FunctionalEvaluation, sub: SubspaceBasis, i: int, j: int, theta: float) -> float:
    """Value after the Givens rotation ``Phi_i -> c Phi_i + s Phi_j``, ``Phi_j -> c Phi_j - s Phi_i``."""
    d = d_matrix(ev.spectrum, ev.frame)
    m = d.shape[0]
    if not (0 <= i < m and 0 <= j < m) or i == j:
        raise IndexError(f"need distinct site indices in [0, {m}), got ({i}, {j})")
    c, s = math.cos(theta), math.sin(theta)
    di, dj = d[i].copy(), d[j].copy()
    d[i] = c * di + s * dj
    d[j] = c * dj - s * di
    return _interaction(d, sub)


@dataclass(frozen=True)
class Reconstruction:
    psi: np.ndarray
    basis: FockBasis
    norm: float
    gamma_error: float


def reconstruct_wavefunction(spec: SpectralDecomposition, v: np.ndarray, sub: SubspaceBasis,
                             cap: int = 10**6) -> Reconstruction:
    """``Psi = (1/N) sum_i b_i^dagger |Phi_i>`` and how far its 1RDM is from ``gamma``."""
    v = np.asarray(v, dtype=np.float64)
    _check_shapes(spec, v, sub)
    n_particles = sub.particles
    lower = sub.ambient(cap)
    upper = enumerate_basis(sub.sites, n_particles, cap)
    phis = d_matrix(spec, v) @ sub.frame_vectors(lower).T
    psi = np.zeros(upper.dim)
    for i in range(sub.sites):
        psi += annihilation_matrix(upper, lower, i).T @ phis[i]
    psi /= n_particles
    norm = float(np.linalg.norm(psi))
    gamma = spec.reconstruct()
    if norm > 1e-14:
        err = float(np.max(np.abs(rdm_from_wavefunction(psi / norm, upper).matrix - gamma)))
    else:
        err = math.inf
    return Reconstruction(psi, upper, norm, err)


def normalize_curve(values) -> np.ndarray:
    """Affine map sending the first value to 0 and the last to 1."""
    y = np.asarray(values, dtype=np.float64)
    if y.size < 2:
        raise ValueError("need at least two points")
    span = y[-1] - y[0]
    if abs(span) < 1e-14:
        raise ValueError("curve endpoints coincide; cannot normalize")
    return (y - y[0]) / span
