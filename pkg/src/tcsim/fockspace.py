"""Truncated joint Hilbert space of a qubit chain, one photon mode and phonon modes.

Basis ordering
--------------
Subsystems are laid out as ``(qubit_0, ..., qubit_{N-1}, photon, phonon_0, ...)``
and flat indices follow C (row-major) order, so the last phonon varies fastest.
Each qubit has local index 0 for the ground state ``|alpha>`` and 1 for the
excited state ``|beta>``; each mode has local index equal to its occupation.

Operators are stored as canonical CSR matrices (sorted column indices, no
duplicates). ``scipy``'s CSR mat-vec accumulates each row left to right over
the stored columns, so results are bit-stable for a given operator.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import BasisMismatchError, CapacityError

DEFAULT_CAPACITY = 2_000_000
HERMITIAN_ATOL = 1e-12

GROUND = 0
EXCITED = 1


class Boundary(str, enum.Enum):
    OPEN = "open"
    PERIODIC = "periodic"


class ModeKind(str, enum.Enum):
    PHOTON = "photon"
    PHONON = "phonon"


@dataclass(frozen=True)
class QubitChainSpec:
    """Chain of two-level sites.

    ``transition_freqs[l]`` is the angular splitting between excited and
    ground state of site ``l`` (hbar = 1).
    """

    n_sites: int
    transition_freqs: tuple[float, ...]
    boundary: Boundary = Boundary.OPEN

    def __post_init__(self):
        freqs = tuple(float(w) for w in np.atleast_1d(self.transition_freqs))
        object.__setattr__(self, "transition_freqs", freqs)
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        if int(self.n_sites) != self.n_sites or self.n_sites < 1:
            raise ValueError(f"n_sites must be a positive integer, got {self.n_sites}")
        if len(freqs) != self.n_sites:
            raise ValueError(
                f"expected {self.n_sites} transition frequencies, got {len(freqs)}")
        if not all(math.isfinite(w) for w in freqs):
            raise ValueError("transition frequencies must be finite")

    @classmethod
    def uniform(cls, n_sites, omega, boundary=Boundary.OPEN):
        return cls(n_sites, (omega,) * n_sites, boundary)


@dataclass(frozen=True)
class ModeSpec:
    """Single bosonic mode truncated at ``cutoff`` quanta."""

    frequency: float
    cutoff: int
    kind: ModeKind = ModeKind.PHOTON

    def __post_init__(self):
        object.__setattr__(self, "kind", ModeKind(self.kind))
        object.__setattr__(self, "frequency", float(self.frequency))
        if int(self.cutoff) != self.cutoff or self.cutoff < 0:
            raise ValueError(f"cutoff must be a non-negative integer, got {self.cutoff}")
        object.__setattr__(self, "cutoff", int(self.cutoff))
        if not math.isfinite(self.frequency) or self.frequency < 0:
            raise ValueError(f"mode frequency must be finite and >= 0, got {self.frequency}")


@dataclass(frozen=True)
class BasisIndex:
    """Flat-index bookkeeping for the product basis.

    ``mode_kinds``/``mode_cutoffs`` list the bosonic modes in storage order:
    the photon (if any) first, then phonons.
    """

    n_sites: int
    mode_kinds: tuple[ModeKind, ...]
    mode_cutoffs: tuple[int, ...]
    dims: tuple[int, ...] = field(init=False)
    total_dim: int = field(init=False)

    def __post_init__(self):
        dims = (2,) * self.n_sites + tuple(c + 1 for c in self.mode_cutoffs)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "total_dim", math.prod(dims))

    @property
    def n_modes(self):
        return len(self.mode_kinds)

    @property
    def has_photon(self):
        return ModeKind.PHOTON in self.mode_kinds

    @property
    def photon_mode(self):
        """Mode index of the photon, or ``None``."""
        return self.mode_kinds.index(ModeKind.PHOTON) if self.has_photon else None

    @property
    def phonon_modes(self):
        return [i for i, k in enumerate(self.mode_kinds) if k is ModeKind.PHONON]

    def mode_axis(self, mode):
        if not 0 <= mode < self.n_modes:
            raise IndexError(f"mode {mode} out of range for {self.n_modes} modes")
        return self.n_sites + mode

    def site_axis(self, site):
        if not 0 <= site < self.n_sites:
            raise IndexError(f"site {site} out of range for {self.n_sites} sites")
        return site

    def flat_index(self, occupations: Sequence[int]) -> int:
        """Occupation tuple ``(q_0..q_{N-1}, n_photon, m_0, ...)`` to flat index."""
        return int(np.ravel_multi_index(tuple(occupations), self.dims))

    def occupations(self, index: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(index, self.dims))

    def occupation_table(self):
        """Array of shape ``(total_dim, len(dims))`` of all occupation tuples."""
        return np.stack(np.unravel_index(np.arange(self.total_dim), self.dims), axis=1)

    def embed(self, local, axis):
        """Kronecker-embed a local matrix acting on ``axis``."""
        left = math.prod(self.dims[:axis])
        right = math.prod(self.dims[axis + 1:])
        mat = sp.kron(sp.identity(left, format="csr"), sp.csr_matrix(local), format="csr")
        return sp.kron(mat, sp.identity(right, format="csr"), format="csr")


def build_basis(chain: QubitChainSpec, photon: ModeSpec | None = None,
                phonons: Iterable[ModeSpec] = (), capacity: int = DEFAULT_CAPACITY):
    phonons = list(phonons)
    kinds, cutoffs = [], []
    if photon is not None:
        if photon.kind is not ModeKind.PHOTON:
            raise ValueError("photon mode must have kind 'photon'")
        kinds.append(ModeKind.PHOTON)
        cutoffs.append(photon.cutoff)
    for m in phonons:
        if m.kind is not ModeKind.PHONON:
            raise ValueError("only one photon mode is supported; extra modes must be phonons")
        kinds.append(ModeKind.PHONON)
        cutoffs.append(m.cutoff)
    # checked before allocating anything
    total = 2 ** chain.n_sites * math.prod(c + 1 for c in cutoffs)
    if total > capacity:
        raise CapacityError(
            f"basis dimension {total} exceeds capacity {capacity}")
    return BasisIndex(chain.n_sites, tuple(kinds), tuple(cutoffs))


class SparseOperator:
    """Immutable sparse operator on a :class:`BasisIndex`.

    Parameters
    ----------
    basis : BasisIndex
    matrix : array_like or sparse matrix
        Converted to canonical complex CSR.
    hermitian : bool, optional
        Assert that the matrix is Hermitian. The assertion is checked against
        ``HERMITIAN_ATOL`` and a ``ValueError`` is raised if it fails.
    """

    __slots__ = ("basis", "_matrix", "hermitian")

    def __init__(self, basis: BasisIndex, matrix, hermitian: bool = False):
        mat = sp.csr_matrix(matrix, dtype=complex, copy=True)
        n = basis.total_dim
        if mat.shape != (n, n):
            raise ValueError(f"matrix shape {mat.shape} does not match basis dimension {n}")
        mat.sum_duplicates()
        mat.sort_indices()
        mat.eliminate_zeros()
        for arr in (mat.data, mat.indices, mat.indptr):
            arr.flags.writeable = False
        self.basis = basis
        self._matrix = mat
        self.hermitian = bool(hermitian)
        if hermitian and hermitian_error(mat) > HERMITIAN_ATOL:
            raise ValueError(
                f"operator flagged Hermitian but |H - H^dag|_max = {hermitian_error(mat):.3e}")

    @property
    def matrix(self) -> sp.csr_matrix:
        return self._matrix

    @property
    def shape(self):
        return self._matrix.shape

    @property
    def nnz(self):
        return self._matrix.nnz

    def entries(self):
        """``(row, col, value)`` triples in row-major order."""
        coo = self._matrix.tocoo()
        return list(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))

    def toarray(self):
        return self._matrix.toarray()

    def dag(self):
        return SparseOperator(self.basis, self._matrix.conj().T, self.hermitian)

    def is_hermitian(self, atol=HERMITIAN_ATOL):
        return hermitian_error(self._matrix) <= atol

    def _check(self, other):
        if other.basis != self.basis:
            raise BasisMismatchError("operators act on different bases")

    def __add__(self, other):
        if not isinstance(other, SparseOperator):
            return NotImplemented
        self._check(other)
        return SparseOperator(self.basis, self._matrix + other._matrix,
                              self.hermitian and other.hermitian)

    def __sub__(self, other):
        if not isinstance(other, SparseOperator):
            return NotImplemented
        self._check(other)
        return SparseOperator(self.basis, self._matrix - other._matrix,
                              self.hermitian and other.hermitian)

    def __neg__(self):
        return SparseOperator(self.basis, -self._matrix, self.hermitian)

    def __mul__(self, scalar):
        if isinstance(scalar, SparseOperator):
            return NotImplemented
        scalar = complex(scalar)
        herm = self.hermitian and scalar.imag == 0.0
        return SparseOperator(self.basis, self._matrix * scalar, herm)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            self._check(other)
            return SparseOperator(self.basis, self._matrix @ other._matrix)
        if isinstance(other, StateVector):
            return tensor_apply(self, other)
        return NotImplemented

    def __repr__(self):
        return (f"SparseOperator(dim={self.basis.total_dim}, nnz={self.nnz}, "
                f"hermitian={self.hermitian})")


def hermitian_error(mat) -> float:
    diff = (sp.csr_matrix(mat) - sp.csr_matrix(mat).conj().T).tocoo()
    return float(np.max(np.abs(diff.data))) if diff.nnz else 0.0


def commutator(a: SparseOperator, b: SparseOperator) -> SparseOperator:
    return a @ b - b @ a


def zero_operator(basis):
    return SparseOperator(basis, sp.csr_matrix((basis.total_dim, basis.total_dim)),
                          hermitian=True)


def identity(basis):
    return SparseOperator(basis, sp.identity(basis.total_dim, format="csr"), hermitian=True)


class StateVector:
    """Complex amplitude vector on a basis. Not renormalized implicitly."""

    __slots__ = ("basis", "_amps")

    def __init__(self, basis: BasisIndex, amplitudes):
        amps = np.array(amplitudes, dtype=complex).reshape(-1)
        if amps.size != basis.total_dim:
            raise ValueError(
                f"expected {basis.total_dim} amplitudes, got {amps.size}")
        amps.flags.writeable = False
        self.basis = basis
        self._amps = amps

    @property
    def amplitudes(self):
        return self._amps

    def norm(self):
        return float(np.linalg.norm(self._amps))

    def normalized(self):
        nrm = self.norm()
        if nrm == 0.0:
            raise ValueError("cannot normalize the zero vector")
        return StateVector(self.basis, self._amps / nrm)

    def inner(self, other: "StateVector") -> complex:
        if other.basis != self.basis:
            raise BasisMismatchError("states live on different bases")
        return complex(np.vdot(self._amps, other._amps))

    def fidelity(self, other: "StateVector") -> float:
        return abs(self.inner(other)) ** 2

    def __repr__(self):
        return f"StateVector(dim={self.basis.total_dim}, norm={self.norm():.12g})"


def basis_state(basis: BasisIndex, occupations: Sequence[int]) -> StateVector:
    amps = np.zeros(basis.total_dim, dtype=complex)
    amps[basis.flat_index(occupations)] = 1.0
    return StateVector(basis, amps)


# --- elementary operators -------------------------------------------------

# local index 0 = ground |alpha>, 1 = excited |beta>
_SIGMA_LOCAL = {
    "plus": np.array([[0.0, 0.0], [1.0, 0.0]]),
    "minus": np.array([[0.0, 1.0], [0.0, 0.0]]),
    "z": np.diag([-1.0, 1.0]),
}
_LEVEL = {"alpha": GROUND, "beta": EXCITED, GROUND: GROUND, EXCITED: EXCITED}


def sigma_operator(basis: BasisIndex, site: int, kind: str) -> SparseOperator:
    """Transition operator on ``site``: ``kind`` is ``'plus'``, ``'minus'`` or ``'z'``.

    ``plus`` raises ``|alpha> -> |beta>``; ``z`` has eigenvalue -1 on the ground
    state and +1 on the excited state.
    """
    try:
        local = _SIGMA_LOCAL[kind]
    except KeyError:
        raise ValueError(f"unknown sigma kind {kind!r}") from None
    axis = basis.site_axis(site)
    return SparseOperator(basis, basis.embed(local, axis), hermitian=(kind == "z"))


def transition_operator(basis: BasisIndex, site: int, bra_from, to) -> SparseOperator:
    """Projector-type operator ``|to><bra_from|`` on one site.

    Levels are given as ``'alpha'``/``'beta'`` or 0/1.
    """
    local = np.zeros((2, 2))
    local[_LEVEL[to], _LEVEL[bra_from]] = 1.0
    return SparseOperator(basis, basis.embed(local, basis.site_axis(site)),
                          hermitian=(_LEVEL[to] == _LEVEL[bra_from]))


def local_ladder(cutoff: int, kind: str = "annihilate"):
    """Truncated ladder matrix on ``cutoff + 1`` Fock states."""
    lower = sp.diags(np.sqrt(np.arange(1, cutoff + 1, dtype=float)), 1,
                     shape=(cutoff + 1, cutoff + 1), format="csr")
    if kind == "annihilate":
        return lower
    if kind == "create":
        return lower.T.tocsr()
    raise ValueError(f"unknown ladder kind {kind!r}")


def ladder_operator(basis: BasisIndex, mode: int, kind: str) -> SparseOperator:
    """Creation or annihilation operator on bosonic ``mode``.

    Hard truncation: ``create`` applied to the top Fock state gives zero.
    """
    axis = basis.mode_axis(mode)
    return SparseOperator(basis, basis.embed(local_ladder(basis.mode_cutoffs[mode], kind), axis))


def number_operator(basis: BasisIndex, mode: int) -> SparseOperator:
    axis = basis.mode_axis(mode)
    n = np.arange(basis.mode_cutoffs[mode] + 1, dtype=float)
    return SparseOperator(basis, basis.embed(sp.diags(n), axis), hermitian=True)


def excitation_number(basis: BasisIndex) -> SparseOperator:
    """Excited qubits plus photons, the quantity conserved by the RWA coupling."""
    occ = basis.occupation_table()
    diag = occ[:, :basis.n_sites].sum(axis=1).astype(float)
    if basis.has_photon:
        diag += occ[:, basis.mode_axis(basis.photon_mode)]
    return SparseOperator(basis, sp.diags(diag), hermitian=True)


def tensor_apply(op: SparseOperator, state: StateVector) -> StateVector:
    if op.basis != state.basis:
        raise BasisMismatchError("operator and state live on different bases")
    return StateVector(state.basis, op.matrix @ state.amplitudes)


# --- debug export ---------------------------------------------------------

def export_triples(op: SparseOperator) -> str:
    """Text dump: ``dim=<n>`` header then ``row col re im`` lines, row-major."""
    lines = [f"dim={op.basis.total_dim}"]
    for r, c, v in op.entries():
        lines.append(f"{r} {c} {v.real:.17g} {v.imag:.17g}")
    return "\n".join(lines) + "\n"


def import_triples(text: str, basis: BasisIndex, hermitian=False) -> SparseOperator:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("dim="):
        raise ValueError("missing 'dim=' header")
    dim = int(lines[0][4:])
    if dim != basis.total_dim:
        raise BasisMismatchError(f"file dimension {dim} != basis dimension {basis.total_dim}")
    rows, cols, vals = [], [], []
    for ln in lines[1:]:
        r, c, re_, im_ = ln.split()
        rows.append(int(r))
        cols.append(int(c))
        vals.append(complex(float(re_), float(im_)))
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim))
    return SparseOperator(basis, mat, hermitian=hermitian)
