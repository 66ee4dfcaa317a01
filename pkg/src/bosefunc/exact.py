"""Exact diagonalization of the Bose-Hubbard model on small lattices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .fock import DimensionError, FockBasis, annihilation_matrix, count_dimension, enumerate_basis
from .rdm import OneBodyRDM

DENSE_CAP = 10**4
DENSE_SOLVER_LIMIT = 2000


def bonds(sites: int, periodic: bool = True) -> list[tuple[int, int]]:
    """Nearest-neighbour bonds; the dimer has a single bond even when periodic."""
    if sites < 2:
        return []
    if sites == 2:
        return [(0, 1)]
    out = [(i, i + 1) for i in range(sites - 1)]
    if periodic:
        out.append((sites - 1, 0))
    return out


@dataclass(frozen=True)
class HamiltonianMatrix:
    matrix: np.ndarray
    basis: FockBasis
    t: float
    u: float
    periodic: bool


def build_hamiltonian(sites: int, particles: int, t: float, u: float, periodic: bool = True,
                      cap: int = DENSE_CAP) -> HamiltonianMatrix:
    dim = count_dimension(sites, particles)
    if dim > cap:
        raise DimensionError(f"dense Hamiltonian would have {dim} states (cap {cap})")
    basis = enumerate_basis(sites, particles)
    occ = basis.states.astype(np.float64)
    h = np.diag(0.5 * u * np.sum(occ * (occ - 1.0), axis=1))
    for i, j in bonds(sites, periodic):
        for src, dst in ((j, i), (i, j)):
            # b_dst^dagger b_src
            n_src = basis.states[:, src].astype(np.int64)
            cols = np.nonzero(n_src)[0]
            moved = basis.states[cols].astype(np.int64)
            moved[:, src] -= 1
            moved[:, dst] += 1
            rows = [basis.index[tuple(r)] for r in moved.tolist()]
            amp = np.sqrt(n_src[cols] * moved[:, dst].astype(np.float64))
            np.add.at(h, (rows, cols), -t * amp)
    return HamiltonianMatrix(h, basis, t, u, periodic)


def rdm_from_wavefunction(psi: np.ndarray, basis: FockBasis, atol: float = 1e-8) -> OneBodyRDM:
    """``gamma_ij = <Psi| b_i^dagger b_j |Psi> = <Phi_i|Phi_j>`` with ``Phi_j = b_j Psi``."""
    psi = np.asarray(psi, dtype=np.float64)
    if abs(np.linalg.norm(psi) - 1.0) > atol:
        raise ValueError(f"wavefunction norm {np.linalg.norm(psi):.10f} is not 1")
    if basis.particles == 0:
        return OneBodyRDM(np.zeros((basis.sites, basis.sites)), 0)
    lower = enumerate_basis(basis.sites, basis.particles - 1)
    phis = np.stack([annihilation_matrix(basis, lower, i) @ psi for i in range(basis.sites)])
    g = phis @ phis.T
    g = 0.5 * (g + g.T)
    # trace equals N * |psi|^2 exactly up to roundoff of the norm
    g *= basis.particles / np.trace(g)
    return OneBodyRDM(g, basis.particles)


def interaction_expectation(psi: np.ndarray, basis: FockBasis) -> float:
    """``sum_i <n_i (n_i - 1)>`` without the ``U/2`` prefactor."""
    occ = basis.states.astype(np.float64)
    w = np.sum(occ * (occ - 1.0), axis=1)
    return float(np.sum(np.asarray(psi) ** 2 * w))


@dataclass(frozen=True)
class GroundState:
    energy: float
    psi: np.ndarray
    gamma: OneBodyRDM
    degenerate: bool
    residual: float


def ground_state(ham: HamiltonianMatrix) -> GroundState:
    h = ham.matrix
    dim = h.shape[0]
    if dim <= DENSE_SOLVER_LIMIT:
        vals, vecs = np.linalg.eigh(h)
    else:
        try:
            vals, vecs = spla.eigsh(h, k=2, which="SA", tol=1e-12)
        except spla.ArpackNoConvergence as exc:
            raise ArithmeticError("Lanczos solver did not converge") from exc
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
    e0 = float(vals[0])
    psi = vecs[:, 0].copy()
    k = int(np.argmax(np.abs(psi)))
    if psi[k] < 0:
        psi = -psi
    scale = max(np.max(np.abs(h)), 1e-300)
    degenerate = dim > 1 and (vals[1] - vals[0]) < 1e-10 * scale
    residual = float(np.linalg.norm(h @ psi - e0 * psi))
    if residual > 1e-8 * np.linalg.norm(h, 2) + 1e-300:
        raise ArithmeticError(f"ground-state residual {residual:.2e} too large")
    return GroundState(e0, psi, rdm_from_wavefunction(psi, ham.basis), bool(degenerate), residual)


def hopping_energy(gamma, t: float, periodic: bool = True) -> float:
    """``Tr[h gamma]`` for the nearest-neighbour hopping ``h``."""
    g = np.asarray(gamma.matrix if isinstance(gamma, OneBodyRDM) else gamma)
    return float(sum(-t * (g[i, j] + g[j, i]) for i, j in bonds(g.shape[0], periodic)))
