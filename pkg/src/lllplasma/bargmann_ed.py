"""Exact diagonalization of the lowest-Landau-level contact interaction.

Bosonic Fock states over the orbitals f_l(z) = (pi l!)^{-1/2} z^l at fixed
total angular momentum L. The interaction I_N = sum_{i<j} delta_ij is built in
second quantization from the pair matrix element

    V(m1, m2, m3, m4) = (1/2pi) 2^{-L} L! / sqrt(m1! m2! m3! m4!),  L = m1 + m2,

which vanishes unless m1 + m2 = m3 + m4.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import eigsh

from .errors import DomainError, ResourceError, UnboundedError
from .params import ModelParams

log = logging.getLogger(__name__)

ZERO_TOL = 1e-10
QUARANTINE_TOL = 1e-7
DENSE_LIMIT = 2000
MAX_DIM = 200_000


@dataclass(frozen=True, order=True)
class FockState:
    """Occupations (n_0, n_1, ..., n_lmax) with no trailing zeros."""

    occupations: tuple

    def __post_init__(self):
        occ = tuple(int(n) for n in self.occupations)
        if any(n < 0 for n in occ):
            raise DomainError("occupations must be nonnegative")
        while occ and occ[-1] == 0:
            occ = occ[:-1]
        object.__setattr__(self, "occupations", occ)

    @classmethod
    def from_partition(cls, N: int, parts) -> "FockState":
        parts = [int(p) for p in parts if p > 0]
        if len(parts) > N:
            raise DomainError("more nonzero parts than particles")
        occ = [0] * (max(parts, default=0) + 1)
        occ[0] = N - len(parts)
        for p in parts:
            occ[p] += 1
        return cls(tuple(occ))

    @property
    def N(self) -> int:
        return sum(self.occupations)

    @property
    def L(self) -> int:
        return sum(l * n for l, n in enumerate(self.occupations))

    def occupation(self, l: int) -> int:
        return self.occupations[l] if l < len(self.occupations) else 0

    def __repr__(self):
        occ = ", ".join(f"n{l}={n}" for l, n in enumerate(self.occupations) if n)
        return f"FockState({occ})"


def _partitions(q: int, max_parts: int, max_part: int):
    """Partitions of q into at most max_parts parts, each <= max_part, in
    reverse lexicographic order."""
    if q == 0:
        yield ()
        return
    if max_parts == 0:
        return
    for first in range(min(q, max_part), 0, -1):
        if first * max_parts < q:
            break
        for rest in _partitions(q - first, max_parts - 1, first):
            yield (first,) + rest


def enumerate_basis(N: int, L: int) -> list[FockState]:
    """All bosonic Fock states of N particles with total angular momentum L."""
    if N < 1 or L < 0:
        raise DomainError("need N >= 1 and L >= 0")
    return [FockState.from_partition(N, p) for p in _partitions(L, N, L)]


@lru_cache(maxsize=None)
def partition_count(q: int, k: int) -> int:
    """Number of partitions of q into at most k parts."""
    if q < 0 or k < 0:
        return 0
    if q == 0:
        return 1
    if k == 0:
        return 0
    # either fewer than k parts, or k parts each reduced by one
    return partition_count(q, k - 1) + partition_count(q - k, k)


def _log_fact(n: int) -> float:
    return math.lgamma(n + 1.0)


def pair_matrix_element(m1: int, m2: int, m3: int, m4: int) -> float:
    """<f_m1 f_m2 | delta_12 | f_m3 f_m4> in the Bargmann space."""
    if min(m1, m2, m3, m4) < 0:
        raise DomainError("orbital indices must be >= 0")
    L = m1 + m2
    if L != m3 + m4:
        return 0.0
    logv = (
        -L * math.log(2.0)
        + _log_fact(L)
        - 0.5 * (_log_fact(m1) + _log_fact(m2) + _log_fact(m3) + _log_fact(m4))
    )
    return math.exp(logv) / (2.0 * math.pi)


def _pairs_with_sum(s: int):
    for a in range(s // 2 + 1):
        yield a, s - a


def build_interaction(N: int, L: int, basis=None, dense: bool | None = None, max_dim: int = MAX_DIM):
    """Matrix of I_N in the orthonormal Fock basis of the sector (N, L).

    Returns a dense ndarray when ``dense`` (default: dimension <= 2000), else a
    CSR matrix.
    """
    basis = basis if basis is not None else enumerate_basis(N, L)
    dim = len(basis)
    if dim > max_dim:
        raise ResourceError(f"sector (N={N}, L={L}) has dimension {dim} > budget {max_dim}")
    dense = dim <= DENSE_LIMIT if dense is None else dense
    index = {s.occupations: i for i, s in enumerate(basis)}
    rows, cols, vals = [], [], []
    for j, state in enumerate(basis):
        occ = list(state.occupations) + [0] * (L + 1 - len(state.occupations))
        occupied = [l for l, n in enumerate(occ) if n]
        for ia, a in enumerate(occupied):
            for b in occupied[ia:]:
                if a == b and occ[a] < 2:
                    continue
                # annihilate a then b
                amp = math.sqrt(occ[a])
                occ[a] -= 1
                amp *= math.sqrt(occ[b])
                occ[b] -= 1
                c34 = 1 if a == b else 2
                for c, d in _pairs_with_sum(a + b):
                    c12 = 1 if c == d else 2
                    occ[d] += 1
                    amp2 = amp * math.sqrt(occ[d])
                    occ[c] += 1
                    amp2 *= math.sqrt(occ[c])
                    target = tuple(occ)
                    while target and target[-1] == 0:
                        target = target[:-1]
                    i = index[target]
                    rows.append(i)
                    cols.append(j)
                    vals.append(0.5 * c12 * c34 * pair_matrix_element(c, d, a, b) * amp2)
                    occ[c] -= 1
                    occ[d] -= 1
                occ[a] += 1
                occ[b] += 1
    mat = sparse.coo_matrix((vals, (rows, cols)), shape=(dim, dim)).tocsr()
    mat.sum_duplicates()
    if dense:
        return mat.toarray()
    return mat


@dataclass(frozen=True)
class SectorSpectrum:
    """Interaction spectrum of one (N, L) sector.

    ``interaction_eigenvalues`` holds the full spectrum for dense sectors and
    the lowest part otherwise (``complete`` tells which). Eigenvalues in
    [1e-10, 1e-7) are reported in ``quarantined`` and counted neither as zero
    nor as a gap.
    """

    N: int
    L: int
    basis_dim: int
    interaction_eigenvalues: np.ndarray = field(repr=False)
    kernel_dim: int
    gap: float | None
    quarantined: tuple = ()
    complete: bool = True

    @property
    def ground(self) -> float:
        """Lowest eigenvalue, i.e. I(L); exactly 0 when the kernel is nontrivial."""
        return 0.0 if self.kernel_dim else float(self.interaction_eigenvalues[0])

    @property
    def needs_review(self) -> bool:
        return bool(self.quarantined)


def _classify(N, L, dim, ev, complete):
    ev = np.sort(ev)
    a = np.abs(ev)
    kernel = int(np.count_nonzero(a < ZERO_TOL))
    band = tuple(float(v) for v in ev[(a >= ZERO_TOL) & (a < QUARANTINE_TOL)])
    if band:
        log.warning("sector N=%d L=%d: eigenvalues %s in the quarantine band", N, L, band)
    pos = ev[ev >= QUARANTINE_TOL]
    gap = float(pos[0]) if pos.size else None
    if ev.size and ev[0] < -ZERO_TOL:
        raise ArithmeticError(f"negative interaction eigenvalue {ev[0]:.3e} in sector N={N} L={L}")
    return SectorSpectrum(N, L, dim, ev, kernel, gap, band, complete)


def sector_spectrum(N: int, L: int, n_lowest: int | None = None) -> SectorSpectrum:
    """Spectrum of I_N restricted to total angular momentum L."""
    basis = enumerate_basis(N, L)
    dim = len(basis)
    if dim <= DENSE_LIMIT:
        H = build_interaction(N, L, basis, dense=True)
        return _classify(N, L, dim, linalg.eigvalsh(H), True)
    H = build_interaction(N, L, basis, dense=False)
    # grow the window until it reaches past the kernel and the quarantine band
    k = n_lowest or min(dim - 2, partition_count(max(L - N * (N - 1), -1), N) + 8)
    while True:
        ev = eigsh(H, k=k, sigma=-1e-3, which="LM", return_eigenvectors=False)
        ev = np.sort(ev)
        if ev[-1] >= QUARANTINE_TOL or k >= dim - 2:
            return _classify(N, L, dim, ev, False)
        k = min(dim - 2, 2 * k)


def yrast_curve(N: int, L_max: int) -> np.ndarray:
    """I(L) = lowest interaction eigenvalue for L = 0..L_max."""
    return np.array([sector_spectrum(N, L).ground for L in range(L_max + 1)])


@dataclass(frozen=True)
class GapTable:
    N: int
    L: tuple
    gaps: tuple
    reference_L: int
    conjecture_holds: bool | None

    def as_dict(self) -> dict:
        return dict(zip(self.L, self.gaps))


def gap_sequence(N: int, L_range) -> GapTable:
    """gap(L) over ``L_range`` and the status of the conjecture
    gap(L) = gap(N(N-1) - N) for every L >= N(N-1) - N (reported, not asserted)."""
    Ls = tuple(int(L) for L in L_range)
    gaps = tuple(sector_spectrum(N, L).gap for L in Ls)
    ref = N * (N - 1) - N
    status = None
    if ref >= 0:
        g_ref = dict(zip(Ls, gaps)).get(ref)
        if g_ref is None and any(L >= ref for L in Ls):
            g_ref = sector_spectrum(N, ref).gap
        tested = [g for L, g in zip(Ls, gaps) if L >= ref and g is not None]
        if tested and g_ref is not None:
            status = all(abs(g - g_ref) <= 1e-9 * max(1.0, g_ref) for g in tested)
    return GapTable(N, Ls, gaps, ref, status)


def single_particle_energy(params: ModelParams, l: int) -> float:
    """Eigenvalue (omega + 3k) l + k l^2 of the one-body operator on f_l."""
    if l < 0:
        raise DomainError("orbital index must be >= 0")
    return (params.omega + 3.0 * params.k) * l + params.k * l * l


def best_orbital(params: ModelParams) -> int:
    """Integer l >= 0 minimizing the one-body energy."""
    if params.k == 0:
        if params.omega + 3.0 * params.k < 0:
            raise UnboundedError("one-body energy unbounded below with k = 0 and omega < 0")
        return 0
    l_star = -(params.omega + 3.0 * params.k) / (2.0 * params.k)
    cands = {max(0, math.floor(l_star)), max(0, math.ceil(l_star))}
    return min(sorted(cands), key=lambda l: single_particle_energy(params, l))


def sector_one_body_minimum(params: ModelParams, L: int, N: int | None = None) -> float:
    """min over the (N, L) sector of <sum_j h_j>; h is diagonal in the Fock basis."""
    N = N or params.N
    best = math.inf
    for s in enumerate_basis(N, L):
        e = sum(n * single_particle_energy(params, l) for l, n in enumerate(s.occupations))
        best = min(best, e)
    return best


@dataclass(frozen=True)
class MomentumRegime:
    case: int
    L_qh: float | None
    window: tuple
    gap_label: str
    description: str


def momentum_regime(params: ModelParams) -> MomentumRegime:
    """Regime of the ground-state angular momentum.

    1: omega >= 0; 2: -2kN <= omega < 0 (both L_0 <= 2N^2); 3: omega < -2kN
    with |omega|/k < N^2 (|L_0 - L_qh| <= sqrt(3) N^2); 4: |omega|/k >= N^2
    (|L_0 - L_qh| <= sqrt(3) L_qh^{1/2} N). L_qh = -omega N/(2k).
    """
    N, w, k = params.N, params.omega, params.k
    if w < 0 and k == 0:
        raise UnboundedError("omega < 0 with k = 0: energy unbounded below")
    L_qh = -w * N / (2.0 * k) if k > 0 else None
    if w >= -2.0 * k * N:
        case = 1 if w >= 0 else 2
        return MomentumRegime(case, L_qh, (0.0, 2.0 * N * N), "Delta_1", "L_0 <= 2N^2")
    if abs(w) / k < N * N:
        half = math.sqrt(3.0) * N * N
        return MomentumRegime(3, L_qh, (L_qh - half, L_qh + half), "Delta_3", "|L_0 - L_qh| <= sqrt(3) N^2")
    half = math.sqrt(3.0) * math.sqrt(L_qh) * N
    return MomentumRegime(4, L_qh, (L_qh - half, L_qh + half), "Delta_4",
                          "|L_0 - L_qh| <= sqrt(3) L_qh^{1/2} N")


def gap_deltas(params: ModelParams) -> dict:
    """Delta_1 = gap(2N^2), Delta_3 = gap(L_qh + sqrt(3) N^2),
    Delta_4 = gap(L_qh + sqrt(3) L_qh^{1/2} N), momenta rounded to integers.
    Entries needing L_qh are None when k = 0."""
    N = params.N
    out = {"Delta_1": sector_spectrum(N, 2 * N * N).gap}
    if params.k > 0:
        L_qh = -params.omega * N / (2.0 * params.k)
        for name, L in (("Delta_3", L_qh + math.sqrt(3.0) * N * N),
                        ("Delta_4", L_qh + math.sqrt(3.0) * math.sqrt(max(L_qh, 0.0)) * N)):
            Li = int(round(L))
            out[name] = sector_spectrum(N, Li).gap if Li >= 0 else None
    else:
        out["Delta_3"] = out["Delta_4"] = None
    return out


def correlation_ratio(params: ModelParams, gap: float) -> float:
    """The quantity whose vanishing guarantees a strongly correlated ground state
    in the regime of ``momentum_regime(params)``; ``gap`` is the matching Delta."""
    if params.g <= 0 or gap is None or gap <= 0:
        return math.inf
    N, w, k = params.N, params.omega, params.k
    case = momentum_regime(params).case
    if case == 1:
        num = w * N**2 + k * N**3
    elif case == 2:
        num = N * w * w / k + w * N**2 + k * N**3
    elif case == 3:
        num = k * N**3
    else:
        num = abs(w) * N
    return num / (params.g * gap)


def laughlin_vector(N: int) -> tuple[list[FockState], np.ndarray]:
    """Kernel vector of the sector L = N(N-1) in occupation coordinates."""
    L = N * (N - 1)
    basis = enumerate_basis(N, L)
    H = build_interaction(N, L, basis, dense=True)
    w, v = linalg.eigh(H)
    vec = v[:, 0]
    i = int(np.argmax(np.abs(vec)))
    return basis, vec * np.sign(vec[i])
