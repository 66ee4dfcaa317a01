"""One-body reduced density matrices: construction, validation, spectra."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TRACE_TOL = 1e-10
SYMMETRY_TOL = 1e-12
PSD_TOL = -1e-10


class RepresentabilityError(ValueError):
    """The matrix cannot be the 1RDM of any bosonic state."""


@dataclass(frozen=True)
class OneBodyRDM:
    matrix: np.ndarray
    particles: int

    def __post_init__(self):
        g = np.array(self.matrix, dtype=np.float64)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError(f"1RDM must be square, got shape {g.shape}")
        if np.max(np.abs(g - g.T), initial=0.0) > SYMMETRY_TOL:
            raise RepresentabilityError("1RDM is not symmetric")
        if abs(np.trace(g) - self.particles) > TRACE_TOL:
            raise RepresentabilityError(f"trace {np.trace(g)!r} differs from N={self.particles}")
        lowest = np.linalg.eigvalsh(g)[0] if g.size else 0.0
        if lowest < PSD_TOL:
            raise RepresentabilityError(f"1RDM is not positive semidefinite (eigenvalue {lowest:.3e})")
        g.setflags(write=False)
        object.__setattr__(self, "matrix", g)

    @classmethod
    def from_matrix(cls, matrix) -> "OneBodyRDM":
        g = np.asarray(matrix, dtype=np.float64)
        return cls(g, int(round(np.trace(g))))

    @property
    def sites(self) -> int:
        return self.matrix.shape[0]

    @property
    def filling(self) -> float:
        return self.particles / self.sites


@dataclass(frozen=True)
class SpectralDecomposition:
    vectors: np.ndarray  # U, columns are natural orbitals
    values: np.ndarray  # n, nonincreasing occupations

    @property
    def condensate(self) -> float:
        return float(self.values[0])

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def ring_distance(i: int, j: int, sites: int) -> int:
    d = abs(i - j)
    return min(d, sites - d)


def circulant(first_row) -> np.ndarray:
    c = np.asarray(first_row, dtype=np.float64)
    m = len(c)
    idx = (np.arange(m)[None, :] - np.arange(m)[:, None]) % m
    return c[idx]


def is_circulant(matrix, atol: float = 1e-12) -> bool:
    g = np.asarray(matrix)
    return bool(np.allclose(g, circulant(g[0]), rtol=0.0, atol=atol))


def fourier_basis(sites: int) -> np.ndarray:
    """Real orthonormal eigenbasis shared by every symmetric circulant matrix.

    Column order: constant mode, then (cos k, sin k) pairs for increasing k,
    then the alternating mode for even ``sites``.
    """
    j = np.arange(sites)
    cols = [np.full(sites, 1.0 / np.sqrt(sites))]
    for k in range(1, (sites - 1) // 2 + 1):
        phase = 2.0 * np.pi * k * j / sites
        cols.append(np.cos(phase) * np.sqrt(2.0 / sites))
        cols.append(np.sin(phase) * np.sqrt(2.0 / sites))
    if sites % 2 == 0 and sites > 1:
        cols.append((-1.0) ** j / np.sqrt(sites))
    return np.column_stack(cols)


def circulant_eigenvalues(first_row) -> np.ndarray:
    """Eigenvalues of a symmetric circulant matrix in :func:`fourier_basis` column order."""
    c = np.asarray(first_row, dtype=np.float64)
    lam = np.fft.fft(c).real
    m = len(c)
    order = [0]
    for k in range(1, (m - 1) // 2 + 1):
        order += [k, k]
    if m % 2 == 0 and m > 1:
        order.append(m // 2)
    return lam[order]


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    out = vectors.copy()
    for a in range(out.shape[1]):
        nz = np.nonzero(np.abs(out[:, a]) > 1e-12)[0]
        if nz.size and out[nz[0], a] < 0:
            out[:, a] = -out[:, a]
    return out


def spectral(gamma) -> SpectralDecomposition:
    """Natural orbitals and occupations, sorted nonincreasing.

    Circulant inputs use the fixed Fourier basis so that ``U`` does not depend on
    the entries; ties are ordered by mode index. Each eigenvector has its first
    nonzero component positive.
    """
    g = gamma.matrix if isinstance(gamma, OneBodyRDM) else np.asarray(gamma, dtype=np.float64)
    if is_circulant(g):
        vecs = fourier_basis(g.shape[0])
        vals = np.einsum("ia,ij,ja->a", vecs, g, vecs)
    else:
        try:
            vals, vecs = np.linalg.eigh(g)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
            raise ArithmeticError(f"symmetric eigensolver failed: {exc}") from exc
        vals, vecs = vals[::-1], vecs[:, ::-1]
    order = np.lexsort((np.arange(len(vals)), -np.round(vals, 12)))
    vecs = _fix_signs(vecs[:, order])
    vals = np.where(np.abs(vals[order]) < 1e-14, 0.0, vals[order])
    return SpectralDecomposition(vecs, vals)


def build_uniform_gamma(sites: int, filling: float, eta: float) -> OneBodyRDM:
    """``gamma_ii = alpha``, ``gamma_ij = alpha * eta`` for ``i != j``."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    if filling <= 0:
        raise ValueError("filling must be positive")
    g = filling * ((1.0 - eta) * np.eye(sites) + eta * np.ones((sites, sites)))
    return OneBodyRDM(g, int(round(filling * sites)))


def ansatz_first_row(sites: int, filling: float, eta: float, kappa: float) -> np.ndarray:
    d = np.array([ring_distance(0, j, sites) for j in range(sites)])
    row = np.where(d == 1, eta, eta**kappa) * filling
    row[0] = filling
    return row


def build_ansatz_gamma(sites: int, filling: float, eta: float, kappa: float) -> OneBodyRDM:
    """Circulant 1RDM: ``alpha`` on the diagonal, ``alpha*eta`` between ring
    neighbours and ``alpha*eta**kappa`` beyond."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    if not 2.0 <= kappa <= 8.0:
        raise ValueError(f"kappa must lie in [2, 8], got {kappa}")
    g = circulant(ansatz_first_row(sites, filling, eta, kappa))
    return OneBodyRDM(g, int(round(filling * sites)))


@dataclass(frozen=True)
class RepresentabilityReport:
    trace_ok: bool
    symmetric_ok: bool
    psd_ok: bool
    cauchy_schwarz_ok: bool
    min_eigenvalue: float
    angles: np.ndarray  # theta_ij = arccos(gamma_ij / sqrt(gamma_ii gamma_jj)), nan on the diagonal

    @property
    def ok(self) -> bool:
        return self.trace_ok and self.symmetric_ok and self.psd_ok and self.cauchy_schwarz_ok


def check_representability(gamma, particles: int | None = None) -> RepresentabilityReport:
    g = np.asarray(gamma.matrix if isinstance(gamma, OneBodyRDM) else gamma, dtype=np.float64)
    tr = np.trace(g)
    n = int(round(tr)) if particles is None else particles
    diag = np.clip(np.diag(g), 0.0, None)
    bound = np.outer(diag, diag)
    cs_ok = bool(np.all(g**2 <= bound + 1e-12))
    with np.errstate(divide="ignore", invalid="ignore"):
        cosines = g / np.sqrt(bound)
    angles = np.arccos(np.clip(cosines, -1.0, 1.0))
    angles[~np.isfinite(cosines)] = np.nan
    np.fill_diagonal(angles, np.nan)
    lowest = float(np.linalg.eigvalsh(0.5 * (g + g.T))[0])
    return RepresentabilityReport(
        trace_ok=abs(tr - n) <= TRACE_TOL,
        symmetric_ok=bool(np.max(np.abs(g - g.T), initial=0.0) <= SYMMETRY_TOL),
        psd_ok=lowest >= PSD_TOL,
        cauchy_schwarz_ok=cs_ok,
        min_eigenvalue=lowest,
        angles=angles,
    )


class UniformFamily:
    """``eta -> build_uniform_gamma(M, alpha, eta)`` with its exact eta-derivative."""

    def __init__(self, sites: int, filling: float):
        self.sites = sites
        self.filling = filling

    def __call__(self, eta: float) -> OneBodyRDM:
        return build_uniform_gamma(self.sites, self.filling, eta)

    def derivative(self, eta: float) -> np.ndarray:
        return self.filling * (np.ones((self.sites, self.sites)) - np.eye(self.sites))

    def __repr__(self):
        return f"UniformFamily(sites={self.sites}, filling={self.filling})"


class AnsatzFamily:
    """``eta -> build_ansatz_gamma(M, alpha, eta, kappa)`` at fixed ``kappa``."""

    def __init__(self, sites: int, filling: float, kappa: float):
        self.sites = sites
        self.filling = filling
        self.kappa = kappa

    def __call__(self, eta: float) -> OneBodyRDM:
        return build_ansatz_gamma(self.sites, self.filling, eta, self.kappa)

    def derivative(self, eta: float) -> np.ndarray:
        d = np.array([ring_distance(0, j, self.sites) for j in range(self.sites)])
        row = np.where(d == 1, 1.0, self.kappa * eta ** (self.kappa - 1.0)) * self.filling
        row[0] = 0.0
        return circulant(row)

    def __repr__(self):
        return f"AnsatzFamily(sites={self.sites}, filling={self.filling}, kappa={self.kappa})"


class ConstantFamily:
    """Family that ignores ``eta``; useful as a degenerate input."""

    def __init__(self, gamma: OneBodyRDM):
        self.gamma = gamma
        self.sites = gamma.sites
        self.filling = gamma.filling

    def __call__(self, eta: float) -> OneBodyRDM:
        return self.gamma

    def derivative(self, eta: float) -> np.ndarray:
        return np.zeros_like(self.gamma.matrix)
