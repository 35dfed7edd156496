"""Initial states, time propagation and the analytic JCM inversion.

Two engines share one interface:

* ``eigen_exact`` diagonalises the dense Hamiltonian once and evaluates
  ``psi(t) = V exp(-i E t) V^dag psi0`` directly at every sample time, so there
  is no error accumulation in ``t``.
* ``krylov`` advances sample to sample with a Lanczos approximation of
  ``exp(-i H tau) v``, shrinking ``tau`` until the a-posteriori error estimate
  is below ``step_tolerance``.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.special import gammaln
from scipy.stats import poisson

from .errors import BasisMismatchError, CapacityError, ConvergenceError, CutoffError
from .fockspace import (
    GROUND,
    BasisIndex,
    SparseOperator,
    StateVector,
    number_operator,
    sigma_operator,
)

EXACT_DIM_LIMIT = 4096
COHERENT_TAIL_LIMIT = 1e-8


class Engine(str, enum.Enum):
    EIGEN_EXACT = "eigen_exact"
    KRYLOV = "krylov"


@dataclass(frozen=True)
class EvolutionConfig:
    t_max: float
    dt_sample: float
    engine: Engine = Engine.EIGEN_EXACT
    krylov_dim: int = 30
    step_tolerance: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "engine", Engine(self.engine))
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if not self.dt_sample > 0:
            raise ValueError("dt_sample must be positive")
        if self.krylov_dim < 2:
            raise ValueError("krylov_dim must be at least 2")

    def times(self):
        """Uniform grid ``0, dt, 2 dt, ...`` up to and including ``t_max`` (within 1e-9 dt)."""
        n = int(math.floor(self.t_max / self.dt_sample + 1e-9)) + 1
        return self.dt_sample * np.arange(n)


@dataclass
class TimeSeries:
    """Sampled trajectories sharing one time grid. Channel order is insertion order."""

    times: np.ndarray
    channels: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be a strictly increasing 1-D grid")
        for name, values in list(self.channels.items()):
            self.add(name, values)

    def add(self, name, values):
        values = np.asarray(values)
        if values.shape != self.times.shape:
            raise ValueError(f"channel {name!r} has {values.size} samples, grid has {self.times.size}")
        self.channels[name] = values
        return self

    def __getitem__(self, name):
        return self.channels[name]

    def __contains__(self, name):
        return name in self.channels

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    def prefixed(self, prefix):
        return TimeSeries(self.times.copy(), {prefix + k: v for k, v in self.channels.items()})

    def to_csv(self, path=None):
        """Header ``t,<channel>,...``; complex channels split into ``.re``/``.im``."""
        names, cols = ["t"], [self.times]
        for name, values in self.channels.items():
            if np.iscomplexobj(values):
                names += [f"{name}.re", f"{name}.im"]
                cols += [values.real, values.imag]
            else:
                names.append(name)
                cols.append(np.asarray(values, dtype=float))
        buf = io.StringIO()
        buf.write(",".join(names) + "\n")
        for row in zip(*cols):
            buf.write(",".join(f"{float(x):.17g}" for x in row) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, data = rows[0], np.array(rows[1:], dtype=float)
        if header[0] != "t":
            raise ValueError("first column must be 't'")
        ts = cls(data[:, 0])
        i = 1
        while i < len(header):
            name = header[i]
            if name.endswith(".re") and i + 1 < len(header) and header[i + 1] == name[:-3] + ".im":
                ts.add(name[:-3], data[:, i] + 1j * data[:, i + 1])
                i += 2
            else:
                ts.add(name, data[:, i])
                i += 1
        return ts


# --- initial states -------------------------------------------------------

def coherent_cutoff(n_bar, tail=COHERENT_TAIL_LIMIT):
    """Smallest cutoff obeying ``n_bar + 7 sqrt(n_bar)`` and a Poisson tail below ``tail``."""
    n_bar = float(n_bar)
    if n_bar == 0.0:
        return 0
    c = int(math.ceil(n_bar + 7.0 * math.sqrt(n_bar)))
    while poisson.sf(c, n_bar) > tail:
        c += 1
    return c


def coherent_amplitudes(alpha, cutoff, max_tail=COHERENT_TAIL_LIMIT):
    """Fock amplitudes ``alpha^n / sqrt(n!)`` on ``0..cutoff``, renormalised.

    Raises :class:`CutoffError` when the discarded Poisson mass exceeds ``max_tail``.
    """
    alpha = complex(alpha)
    n_bar = abs(alpha) ** 2
    amps = np.zeros(cutoff + 1, dtype=complex)
    if n_bar == 0.0:
        amps[0] = 1.0
        return amps
    tail = poisson.sf(cutoff, n_bar)
    if tail > max_tail:
        raise CutoffError(
            f"cutoff {cutoff} discards Poisson mass {tail:.3e} for |alpha|^2={n_bar:g}; "
            f"use cutoff >= {coherent_cutoff(n_bar, max_tail)}")
    n = np.arange(cutoff + 1)
    log_mag = n * math.log(abs(alpha)) - 0.5 * gammaln(n + 1)
    log_mag -= log_mag.max()
    amps = np.exp(log_mag) * np.exp(1j * n * np.angle(alpha))
    return amps / np.linalg.norm(amps)


def fock_amplitudes(n, cutoff):
    if not 0 <= n <= cutoff:
        raise ValueError(f"Fock state {n} outside 0..{cutoff}")
    amps = np.zeros(cutoff + 1, dtype=complex)
    amps[n] = 1.0
    return amps


def product_initial_state(basis: BasisIndex, qubit_coeffs=None, field_states=None,
                          atol=1e-12) -> StateVector:
    """Tensor product of per-site qubit states and per-mode field states.

    Parameters
    ----------
    qubit_coeffs : sequence of (c1, c2), optional
        Ground and excited amplitudes for each site; default all ground.
        Each pair must be normalised within ``atol``.
    field_states : dict or array_like, optional
        Mapping from mode index to local Fock amplitudes. A bare array is
        taken as the photon state. Unlisted modes start in vacuum.
    """
    n_sites = basis.n_sites
    if qubit_coeffs is None:
        qubit_coeffs = [(1.0, 0.0)] * n_sites
    if len(qubit_coeffs) != n_sites:
        raise ValueError(f"need {n_sites} qubit coefficient pairs, got {len(qubit_coeffs)}")
    if field_states is None:
        field_states = {}
    elif not isinstance(field_states, dict):
        if basis.photon_mode is None:
            raise ValueError("bare field state given but basis has no photon mode")
        field_states = {basis.photon_mode: field_states}

    factors = []
    for l, (c1, c2) in enumerate(qubit_coeffs):
        vec = np.array([c1, c2], dtype=complex)
        if abs(np.linalg.norm(vec) - 1.0) > atol:
            raise ValueError(f"qubit {l} coefficients not normalised: |c1|^2+|c2|^2="
                             f"{np.linalg.norm(vec) ** 2:.15g}")
        factors.append(vec)
    for mode in range(basis.n_modes):
        dim = basis.mode_cutoffs[mode] + 1
        local = field_states.get(mode)
        if local is None:
            local = fock_amplitudes(0, dim - 1)
        local = np.asarray(local, dtype=complex)
        if local.shape != (dim,):
            raise ValueError(f"mode {mode} state has length {local.size}, expected {dim}")
        factors.append(local / np.linalg.norm(local))
    amps = factors[0]
    for f in factors[1:]:
        amps = np.kron(amps, f)
    return StateVector(basis, amps)


def coherent_state(basis: BasisIndex, mode: int, alpha, max_tail=COHERENT_TAIL_LIMIT):
    """Coherent ``alpha`` on ``mode``; all qubits ground, other modes vacuum."""
    local = coherent_amplitudes(alpha, basis.mode_cutoffs[mode], max_tail)
    return product_initial_state(basis, field_states={mode: local})


# --- observables ----------------------------------------------------------

def expect(op: SparseOperator, psi: StateVector):
    """``<psi|op|psi>``; returned as float when ``op`` is flagged Hermitian."""
    if op.basis != psi.basis:
        raise BasisMismatchError("operator and state live on different bases")
    val = complex(np.vdot(psi.amplitudes, op.matrix @ psi.amplitudes))
    if op.hermitian:
        scale = max(1.0, abs(val))
        if abs(val.imag) > 1e-10 * scale:
            raise ArithmeticError(f"Hermitian expectation has imaginary part {val.imag:.3e}")
        return val.real
    return val


def expect_many(op: SparseOperator, states: np.ndarray):
    """Expectation values for each row of ``states`` (shape ``(n_t, dim)``)."""
    vals = np.einsum("ij,ij->i", states.conj(), (op.matrix @ states.T).T)
    return vals.real if op.hermitian else vals


# --- engines --------------------------------------------------------------

def _as_states(basis, rows):
    return [StateVector(basis, r) for r in rows]


def exact_trajectory(H: SparseOperator, psi0: StateVector, times) -> np.ndarray:
    """Rows are ``psi(t)`` for each entry of ``times`` via dense diagonalisation."""
    if H.basis != psi0.basis:
        raise BasisMismatchError("Hamiltonian and state live on different bases")
    dim = H.basis.total_dim
    if dim > EXACT_DIM_LIMIT:
        raise CapacityError(
            f"dimension {dim} too large for eigen_exact (limit {EXACT_DIM_LIMIT}); "
            "use the krylov engine")
    energies, vecs = la.eigh(H.toarray())
    coeffs = vecs.conj().T @ psi0.amplitudes
    phases = np.exp(-1j * np.outer(np.asarray(times, dtype=float), energies))
    return (phases * coeffs) @ vecs.T


def evolve_exact(H: SparseOperator, psi0: StateVector, cfg: EvolutionConfig):
    return _as_states(H.basis, exact_trajectory(H, psi0, cfg.times()))


def _lanczos(matvec, v, m):
    """Orthonormal Krylov basis (rows) and tridiagonal coefficients for unit ``v``."""
    n = v.size
    m = min(m, n)
    basis = np.zeros((m + 1, n), dtype=complex)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    basis[0] = v
    k = m
    for j in range(m):
        w = matvec(basis[j])
        alpha[j] = np.vdot(basis[j], w).real
        w = w - alpha[j] * basis[j]
        if j > 0:
            w = w - beta[j - 1] * basis[j - 1]
        # full reorthogonalisation; m is small
        w = w - basis[:j + 1].T @ (basis[:j + 1].conj() @ w)
        beta[j] = np.linalg.norm(w)
        if beta[j] <= 1e-13 * max(1.0, abs(alpha[j])):
            k = j + 1
            beta[j] = 0.0
            break
        basis[j + 1] = w / beta[j]
    return basis[:k], alpha[:k], beta[:k], k < m or k == n


def krylov_step(matvec, v, tau_max, m, tol, min_tau=0.0):
    """Advance unit-norm ``v`` by as much of ``tau_max`` as ``tol`` allows.

    Returns ``(w, tau, err)`` with ``w ~= exp(-i H tau) v``.
    """
    basis, alpha, beta, invariant = _lanczos(matvec, v, m)
    theta, s = la.eigh_tridiagonal(alpha, beta[:-1]) if alpha.size > 1 \
        else (alpha.copy(), np.ones((1, 1)))
    s0 = s[0].conj()
    tau = tau_max
    while True:
        y = s @ (np.exp(-1j * tau * theta) * s0)
        err = 0.0 if invariant else abs(beta[-1] * y[-1])
        if err <= tol:
            return y @ basis, tau, err
        # the estimate scales roughly like tau^k; shrink conservatively
        tau *= max(0.1, 0.9 * (tol / err) ** (1.0 / max(alpha.size, 1)))
        if tau <= min_tau:
            raise ConvergenceError(
                "Krylov step underflow", tau=tau, error_estimate=err, krylov_dim=alpha.size)


def evolve_krylov(H: SparseOperator, psi0: StateVector, cfg: EvolutionConfig,
                  max_substeps=1_000_000):
    if H.basis != psi0.basis:
        raise BasisMismatchError("Hamiltonian and state live on different bases")
    mat = H.matrix
    matvec = mat.dot
    times = cfg.times()
    rows = np.empty((times.size, psi0.basis.total_dim), dtype=complex)
    v = psi0.amplitudes.copy()
    nrm0 = np.linalg.norm(v)
    v = v / nrm0
    rows[0] = v * nrm0
    t = 0.0
    substeps = 0
    min_tau = 1e-14 * max(cfg.t_max, 1.0)
    for i in range(1, times.size):
        target = times[i]
        while target - t > 1e-15 * max(1.0, target):
            try:
                w, tau, _ = krylov_step(matvec, v, target - t, cfg.krylov_dim,
                                        cfg.step_tolerance, min_tau)
            except ConvergenceError as exc:
                exc.diagnostics["time"] = t
                raise
            v = w
            t += tau
            substeps += 1
            if substeps > max_substeps:
                raise ConvergenceError("Krylov substep budget exhausted", time=t)
        t = target
        rows[i] = v * nrm0
    return _as_states(H.basis, rows)


def evolve(H: SparseOperator, psi0: StateVector, cfg: EvolutionConfig):
    if cfg.engine is Engine.KRYLOV:
        return evolve_krylov(H, psi0, cfg)
    return evolve_exact(H, psi0, cfg)


def trajectory(H, psi0, cfg) -> np.ndarray:
    """State rows ``(n_t, dim)`` from whichever engine ``cfg`` names."""
    if cfg.engine is Engine.EIGEN_EXACT:
        return exact_trajectory(H, psi0, cfg.times())
    return np.array([s.amplitudes for s in evolve_krylov(H, psi0, cfg)])


# --- analytic JCM ---------------------------------------------------------

def _poisson_support(n_bar, tail=1e-17):
    if n_bar == 0:
        return np.array([0]), np.array([1.0])
    top = int(math.ceil(n_bar + 12.0 * math.sqrt(n_bar) + 40))
    while poisson.sf(top, n_bar) > tail:
        top += 10
    n = np.arange(top + 1)
    w = poisson.pmf(n, n_bar)
    # the dropped tail is below 1e-17, so this only removes rounding drift
    return n, w / w.sum()


def jcm_sigma_z_analytic(t, n_bar, g, delta=0.0):
    """Atomic inversion of the RWA JCM for a ground-state qubit and coherent field.

    Resonant: ``-sum_n P(n) cos(2 g sqrt(n) t)``. Detuned by ``delta``:
    ``-sum_n P(n) [delta^2 + 4 g^2 n cos(Omega_n t)] / Omega_n^2`` with
    ``Omega_n = sqrt(delta^2 + 4 g^2 n)``. ``P`` is Poisson with mean ``n_bar``;
    the sum starts at ``n = 0``.
    """
    if n_bar < 0:
        raise ValueError("n_bar must be non-negative")
    t = np.asarray(t, dtype=float)
    n, w = _poisson_support(n_bar)
    if delta == 0.0:
        phase = np.multiply.outer(t, 2.0 * g * np.sqrt(n))
        out = -(np.cos(phase) @ w)
    else:
        omega = np.sqrt(delta ** 2 + 4.0 * g ** 2 * n)
        static = delta ** 2 / omega ** 2
        osc = 4.0 * g ** 2 * n / omega ** 2
        out = -(static @ w + np.cos(np.multiply.outer(t, omega)) @ (w * osc))
    return out if out.ndim else float(out)


def revival_time(n_bar, g, delta=0.0):
    """``pi / g^2 * sqrt(delta^2 + 4 g^2 n_bar)``."""
    return math.pi / g ** 2 * math.sqrt(delta ** 2 + 4.0 * g ** 2 * n_bar)


def collapse_time(g):
    return math.sqrt(2.0) / g


def ground_projector(basis: BasisIndex, sites=None) -> SparseOperator:
    """Projector onto the ground state of every listed site (default all)."""
    sites = range(basis.n_sites) if sites is None else sites
    occ = basis.occupation_table()
    mask = np.all(occ[:, list(sites)] == GROUND, axis=1).astype(float)
    return SparseOperator(basis, sp.diags(mask), hermitian=True)


def survival_probability(samples, basis=None, sites=None):
    """``sum_n |<ground, n | psi(t)>|^2`` for each sample.

    ``samples`` is a list of :class:`StateVector` or an ``(n_t, dim)`` array
    (then ``basis`` is required).
    """
    if isinstance(samples, np.ndarray):
        rows = samples
    else:
        basis = samples[0].basis
        rows = np.array([s.amplitudes for s in samples])
    proj = ground_projector(basis, sites)
    return expect_many(proj, rows)


def observe(rows: np.ndarray, spec, times, H: SparseOperator | None = None) -> TimeSeries:
    """Standard channels for a trajectory of system ``spec``.

    ``sigma_z_mean``, ``sigma_z_<l>`` (chains only), ``photon_number``,
    ``phonon_number_<q>``, ``survival_prob`` and, when ``H`` is given, ``energy``.
    """
    basis = spec.basis
    ts = TimeSeries(times)
    sz = [expect_many(sigma_operator(basis, l, "z"), rows) for l in range(basis.n_sites)]
    ts.add("sigma_z_mean", np.mean(sz, axis=0))
    if basis.n_sites > 1:
        for l, vals in enumerate(sz):
            ts.add(f"sigma_z_{l}", vals)
    if basis.has_photon:
        ts.add("photon_number", expect_many(number_operator(basis, basis.photon_mode), rows))
    for q in range(len(spec.phonons)):
        ts.add(f"phonon_number_{q}",
               expect_many(number_operator(basis, spec.phonon_mode_index(q)), rows))
    ts.add("survival_prob", survival_probability(rows, basis))
    if H is not None:
        ts.add("energy", expect_many(H, rows))
    return ts
