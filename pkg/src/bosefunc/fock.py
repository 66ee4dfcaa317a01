"""Bosonic occupation-number bases and second-quantized ladder operators.

States of ``N`` bosons on ``M`` sites are occupation tuples ``(n_0, ..., n_{M-1})``
enumerated in lexicographically descending order, so that for the dimer with two
particles the basis reads ``(2,0), (1,1), (0,2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

DEFAULT_DIMENSION_CAP = 10**7

OccupationVector = tuple[int, ...]


class DimensionError(ValueError):
    """Raised when a Hilbert space is too large to enumerate."""


def count_dimension(sites: int, particles: int) -> int:
    """Exact number of bosonic Fock states, ``binomial(N + M - 1, N)``."""
    if sites < 1 or particles < 0:
        raise ValueError(f"need sites >= 1 and particles >= 0, got ({sites}, {particles})")
    return math.comb(particles + sites - 1, particles)


def _descending_states(sites: int, particles: int):
    if sites == 1:
        yield (particles,)
        return
    for first in range(particles, -1, -1):
        for rest in _descending_states(sites - 1, particles - first):
            yield (first,) + rest


@dataclass(frozen=True)
class FockBasis:
    sites: int
    particles: int
    states: np.ndarray  # (dim, sites), read-only
    index: dict = field(repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.states.shape[0]

    def __len__(self) -> int:
        return self.dim

    def position(self, state: Sequence[int]) -> int:
        return self.index[tuple(int(n) for n in state)]

    def state(self, k: int) -> OccupationVector:
        return tuple(int(n) for n in self.states[k])


def enumerate_basis(sites: int, particles: int, cap: int = DEFAULT_DIMENSION_CAP) -> FockBasis:
    dim = count_dimension(sites, particles)
    if dim > cap:
        raise DimensionError(
            f"Fock space for M={sites}, N={particles} has {dim} states (cap {cap})"
        )
    dtype = np.uint8 if particles < 256 else np.uint16
    states = np.array(list(_descending_states(sites, particles)), dtype=dtype).reshape(dim, sites)
    states.setflags(write=False)
    index = {tuple(int(n) for n in row): k for k, row in enumerate(states)}
    return FockBasis(sites, particles, states, index)


def _check_site(state: Sequence[int], site: int) -> None:
    if not 0 <= site < len(state):
        raise IndexError(f"site {site} out of range for {len(state)} sites")


def apply_annihilation(state: Sequence[int], site: int) -> Optional[tuple[float, OccupationVector]]:
    """``b_site |state>`` as ``(sqrt(n_site), lowered state)``, or ``None`` if it vanishes."""
    _check_site(state, site)
    n = int(state[site])
    if n == 0:
        return None
    out = [int(x) for x in state]
    out[site] = n - 1
    return math.sqrt(n), tuple(out)


def apply_creation(state: Sequence[int], site: int) -> tuple[float, OccupationVector]:
    """``b_site^dagger |state>`` as ``(sqrt(n_site + 1), raised state)``."""
    _check_site(state, site)
    out = [int(x) for x in state]
    out[site] += 1
    return math.sqrt(out[site]), tuple(out)


def number_diagonal(basis: FockBasis, site: int) -> np.ndarray:
    if not 0 <= site < basis.sites:
        raise IndexError(f"site {site} out of range for {basis.sites} sites")
    return basis.states[:, site].astype(np.float64)


def annihilation_matrix(source: FockBasis, target: FockBasis, site: int) -> sp.csr_matrix:
    """Sparse matrix of ``b_site`` mapping ``source`` (N particles) into ``target`` (N-1)."""
    if target.particles != source.particles - 1 or target.sites != source.sites:
        raise ValueError("target basis must have one particle less on the same sites")
    if not 0 <= site < source.sites:
        raise IndexError(f"site {site} out of range for {source.sites} sites")
    occ = source.states[:, site].astype(np.int64)
    cols = np.nonzero(occ)[0]
    lowered = source.states[cols].astype(np.int64)
    lowered[:, site] -= 1
    rows = np.fromiter((target.index[tuple(r)] for r in lowered.tolist()), dtype=np.int64, count=len(cols))
    data = np.sqrt(occ[cols].astype(np.float64))
    return sp.csr_matrix((data, (rows, cols)), shape=(target.dim, source.dim))


def subspace_number_matrices(frame: np.ndarray, basis: FockBasis, site: int, atol: float = 1e-10) -> np.ndarray:
    """Matrix elements ``<m'|n_site|m>`` between the orthonormal columns of ``frame``."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2 or frame.shape[0] != basis.dim:
        raise ValueError(f"frame must have {basis.dim} rows, got shape {frame.shape}")
    gram = frame.T @ frame
    if not np.allclose(gram, np.eye(frame.shape[1]), rtol=0.0, atol=atol):
        raise ValueError("frame columns are not orthonormal")
    occ = number_diagonal(basis, site)
    out = frame.T @ (occ[:, None] * frame)
    return 0.5 * (out + out.T)
