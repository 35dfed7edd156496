"""Hamiltonian terms for the qubit chain + photon + phonon model (hbar = 1).

The total Hamiltonian is the sum

    H = H0 + HJ + HF + HCF + HPh + HCPh_z + HCPh_pm

with

* ``H0   = sum_l omega_l / 2 * sz_l``                 (traceless per site)
* ``HJ   = c_J * J * sum_<n,m> (sp_n sm_m + sm_n sp_m + sz_n sz_m / 2)``
* ``HF   = omega_c (a^dag a + 1/2)``
* ``HCF  = sum_l (g_l sx_l a + g_l^* sx_l a^dag)``     or, with RWA,
  ``sum_l (g_l sp_l a + g_l^* sm_l a^dag)``
* ``HPh  = sum_q omega_q (b_q^dag b_q + 1/2)``
* ``HCPh_z  = sum_{j,q} (lz_jq b_q + lz_jq^* b_q^dag) sz_j``
* ``HCPh_pm = sum_{j,q} (lpm_jq b_q + lpm_jq^* b_q^dag) sx_j``

where ``sx = sp + sm``. ``c_J = EXCHANGE_HC_FACTOR`` accounts for the
explicit "+ h.c." on an already Hermitian bond sum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .fockspace import (
    DEFAULT_CAPACITY,
    BasisIndex,
    Boundary,
    ModeKind,
    ModeSpec,
    QubitChainSpec,
    SparseOperator,
    build_basis,
    identity,
    ladder_operator,
    number_operator,
    sigma_operator,
    zero_operator,
)

# The bond sum is Hermitian on its own; adding its conjugate literally doubles it.
EXCHANGE_HC_FACTOR = 2.0


def _complex_array(values, shape, name):
    arr = np.asarray(values, dtype=complex)
    if arr.ndim == 0:
        arr = np.full(shape, complex(arr))
    if arr.shape != shape:
        raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class CouplingSpec:
    """Coupling constants in angular-frequency units.

    ``photon_couplings`` has one entry per site. The phonon couplings have
    shape ``(n_sites, n_phonons)``; scalars broadcast. ``None`` means zero.
    """

    photon_couplings: object = 0.0
    phonon_z_couplings: object = None
    phonon_pm_couplings: object = None
    exchange_J: float = 0.0
    rwa: bool = False

    def resolved(self, n_sites, n_phonons):
        """Copy with every array materialised at the right shape."""
        return CouplingSpec(
            photon_couplings=_complex_array(self.photon_couplings, (n_sites,), "photon_couplings"),
            phonon_z_couplings=_complex_array(
                0.0 if self.phonon_z_couplings is None else self.phonon_z_couplings,
                (n_sites, n_phonons), "phonon_z_couplings"),
            phonon_pm_couplings=_complex_array(
                0.0 if self.phonon_pm_couplings is None else self.phonon_pm_couplings,
                (n_sites, n_phonons), "phonon_pm_couplings"),
            exchange_J=float(self.exchange_J),
            rwa=bool(self.rwa),
        )


@dataclass(frozen=True, eq=False)
class SystemSpec:
    chain: QubitChainSpec
    photon: ModeSpec | None
    phonons: tuple[ModeSpec, ...] = ()
    couplings: CouplingSpec = field(default_factory=CouplingSpec)
    capacity: int = DEFAULT_CAPACITY

    def __post_init__(self):
        object.__setattr__(self, "phonons", tuple(self.phonons))
        for m in self.phonons:
            if m.kind is not ModeKind.PHONON:
                raise ValueError("phonon list may only hold phonon modes")
        cpl = self.couplings.resolved(self.chain.n_sites, len(self.phonons))
        if not math.isfinite(cpl.exchange_J):
            raise ValueError("exchange_J must be finite")
        if self.photon is None and np.any(cpl.photon_couplings != 0):
            raise ValueError("photon couplings given but no photon mode defined")
        object.__setattr__(self, "couplings", cpl)

    @cached_property
    def basis(self) -> BasisIndex:
        return build_basis(self.chain, self.photon, self.phonons, self.capacity)

    @property
    def n_sites(self):
        return self.chain.n_sites

    def phonon_mode_index(self, q):
        """Basis mode index of phonon ``q``."""
        return q + (1 if self.photon is not None else 0)

    def replace(self, **changes):
        import dataclasses
        return dataclasses.replace(self, **changes)

    # -- config (de)serialisation -----------------------------------------

    @classmethod
    def from_dict(cls, cfg: dict) -> "SystemSpec":
        """Build from the ``system`` block of an experiment config.

        Keys: ``chain.{n_sites, transition_freqs, boundary}``,
        ``photon.{frequency, cutoff}`` (or null), ``phonons[i].{frequency, cutoff}``,
        ``couplings.{g, lambda_z, lambda_pm, J}``, ``rwa``. Frequencies and
        couplings accept plain numbers (rad/time) or strings with a unit suffix.
        """
        from .units import parse_coupling, parse_frequency

        chain_cfg = cfg["chain"]
        n = int(chain_cfg.get("n_sites", 1))
        freqs = chain_cfg.get("transition_freqs", 1.0)
        freqs = [parse_frequency(f) for f in freqs] if isinstance(freqs, list) \
            else [parse_frequency(freqs)] * n
        chain = QubitChainSpec(n, tuple(freqs), chain_cfg.get("boundary", "open"))
        ph = cfg.get("photon")
        photon = None if ph is None else ModeSpec(
            parse_frequency(ph["frequency"]), int(ph["cutoff"]), ModeKind.PHOTON)
        phonons = tuple(ModeSpec(parse_frequency(p["frequency"]), int(p["cutoff"]), ModeKind.PHONON)
                        for p in cfg.get("phonons", []) or [])
        c = cfg.get("couplings", {}) or {}
        couplings = CouplingSpec(
            photon_couplings=parse_coupling(c.get("g", 0.0)),
            phonon_z_couplings=parse_coupling(c.get("lambda_z", 0.0)),
            phonon_pm_couplings=parse_coupling(c.get("lambda_pm", 0.0)),
            exchange_J=float(parse_frequency(c.get("J", 0.0))),
            rwa=bool(cfg.get("rwa", False)),
        )
        return cls(chain, photon, phonons, couplings,
                   int(cfg.get("capacity", DEFAULT_CAPACITY)))

    def to_dict(self) -> dict:
        def cplx(arr):
            arr = np.asarray(arr)
            if np.all(arr.imag == 0):
                return arr.real.tolist()
            return np.vectorize(lambda z: repr(complex(z)), otypes=[object])(arr).tolist()

        return {
            "chain": {"n_sites": self.chain.n_sites,
                      "transition_freqs": list(self.chain.transition_freqs),
                      "boundary": self.chain.boundary.value},
            "photon": None if self.photon is None else
            {"frequency": self.photon.frequency, "cutoff": self.photon.cutoff},
            "phonons": [{"frequency": p.frequency, "cutoff": p.cutoff} for p in self.phonons],
            "couplings": {"g": cplx(self.couplings.photon_couplings),
                          "lambda_z": cplx(self.couplings.phonon_z_couplings),
                          "lambda_pm": cplx(self.couplings.phonon_pm_couplings),
                          "J": self.couplings.exchange_J},
            "rwa": self.couplings.rwa,
        }


def jcm_spec(omega_qubit=1.0, omega_field=None, g=1.0, cutoff=10, rwa=True):
    """Single qubit coupled to a single photon mode."""
    omega_field = omega_qubit if omega_field is None else omega_field
    return SystemSpec(QubitChainSpec(1, (omega_qubit,)),
                      ModeSpec(omega_field, cutoff, ModeKind.PHOTON),
                      couplings=CouplingSpec(photon_couplings=g, rwa=rwa))


def _sx(basis, site):
    return sigma_operator(basis, site, "plus") + sigma_operator(basis, site, "minus")


def _bond_list(chain: QubitChainSpec):
    n = chain.n_sites
    bonds = [(i, i + 1) for i in range(n - 1)]
    # N = 2 periodic would repeat the single bond
    if chain.boundary is Boundary.PERIODIC and n > 2:
        bonds.append((n - 1, 0))
    return bonds


def build_h0(spec: SystemSpec) -> SparseOperator:
    basis = spec.basis
    h = zero_operator(basis)
    for l, w in enumerate(spec.chain.transition_freqs):
        h = h + (0.5 * w) * sigma_operator(basis, l, "z")
    return h


def build_hj(spec: SystemSpec) -> SparseOperator:
    basis = spec.basis
    J = spec.couplings.exchange_J
    h = zero_operator(basis)
    if J == 0.0:
        return h
    for n, m in _bond_list(spec.chain):
        sp_n, sm_n, sz_n = (sigma_operator(basis, n, k) for k in ("plus", "minus", "z"))
        sp_m, sm_m, sz_m = (sigma_operator(basis, m, k) for k in ("plus", "minus", "z"))
        bond = sp_n @ sm_m + sm_n @ sp_m + 0.5 * (sz_n @ sz_m)
        h = h + bond
    return SparseOperator(basis, (EXCHANGE_HC_FACTOR * J) * h.matrix, hermitian=True)


def build_hf(spec: SystemSpec) -> SparseOperator:
    basis = spec.basis
    if spec.photon is None:
        return zero_operator(basis)
    mode = basis.photon_mode
    return spec.photon.frequency * (number_operator(basis, mode) + 0.5 * identity(basis))


def build_hph(spec: SystemSpec) -> SparseOperator:
    basis = spec.basis
    h = zero_operator(basis)
    for q, mode in enumerate(spec.phonons):
        idx = spec.phonon_mode_index(q)
        h = h + mode.frequency * (number_operator(basis, idx) + 0.5 * identity(basis))
    return h


def build_hcf(spec: SystemSpec) -> SparseOperator:
    basis = spec.basis
    if spec.photon is None:
        return zero_operator(basis)
    a = ladder_operator(basis, basis.photon_mode, "annihilate")
    ad = ladder_operator(basis, basis.photon_mode, "create")
    mat = 0
    for l, g in enumerate(spec.couplings.photon_couplings):
        g = complex(g)
        if g == 0:
            continue
        if spec.couplings.rwa:
            term = g * (sigma_operator(basis, l, "plus") @ a) \
                + g.conjugate() * (sigma_operator(basis, l, "minus") @ ad)
        else:
            sx = _sx(basis, l)
            term = g * (sx @ a) + g.conjugate() * (sx @ ad)
        mat = mat + term.matrix
    if isinstance(mat, int):
        return zero_operator(basis)
    return SparseOperator(basis, mat, hermitian=True)


def _phonon_field(spec, coeffs_for_site):
    """``sum_q (c_q b_q + c_q^* b_q^dag)`` for one site's coefficient row."""
    basis = spec.basis
    mat = 0
    for q, c in enumerate(coeffs_for_site):
        c = complex(c)
        if c == 0:
            continue
        idx = spec.phonon_mode_index(q)
        b = ladder_operator(basis, idx, "annihilate")
        bd = ladder_operator(basis, idx, "create")
        mat = mat + (c * b + c.conjugate() * bd).matrix
    return None if isinstance(mat, int) else SparseOperator(basis, mat, hermitian=True)


def build_hcph_z(spec: SystemSpec) -> SparseOperator:
    basis = spec.basis
    h = zero_operator(basis)
    for j in range(spec.n_sites):
        field_op = _phonon_field(spec, spec.couplings.phonon_z_couplings[j])
        if field_op is not None:
            h = h + field_op @ sigma_operator(basis, j, "z")
    return SparseOperator(basis, h.matrix, hermitian=True)


def build_hcph_pm(spec: SystemSpec) -> SparseOperator:
    basis = spec.basis
    h = zero_operator(basis)
    for j in range(spec.n_sites):
        field_op = _phonon_field(spec, spec.couplings.phonon_pm_couplings[j])
        if field_op is not None:
            h = h + _sx(basis, j) @ field_op
    return SparseOperator(basis, h.matrix, hermitian=True)


BUILDERS = {
    "h0": build_h0,
    "hj": build_hj,
    "hf": build_hf,
    "hcf": build_hcf,
    "hph": build_hph,
    "hcph_z": build_hcph_z,
    "hcph_pm": build_hcph_pm,
}


def build_terms(spec: SystemSpec) -> dict[str, SparseOperator]:
    return {name: builder(spec) for name, builder in BUILDERS.items()}


def assemble_total(spec: SystemSpec) -> SparseOperator:
    terms = build_terms(spec)
    mat = sum(t.matrix for t in terms.values())
    return SparseOperator(spec.basis, mat, hermitian=True)
