"""C-number equations of motion under a first-order (product of means) closure.

For every site ``l`` the state holds ``s_l = <sm_l>``, ``p_l = <sp_l>`` and
``z_l = <sz_l>``; for the photon ``A = <a>``, ``A^+ = <a^dag>``; for phonon ``q``
``B_q = <b_q>``, ``B_q^+ = <b_q^dag>``. With ``hbar = 1`` the right-hand sides,
obtained from ``d<X>/dt = i <[H, X]>`` with every product of operators replaced
by the product of their means, are

precession, exchange and photon drive (the ``sigma x G`` block)::

    ds_l/dt = -i w_l s_l + i f_l z_l + i cJ sum_m (z_l s_m - s_l z_m)
    dp_l/dt = +i w_l p_l - i f_l^+ z_l - i cJ sum_m (z_l p_m - p_l z_m)
    dz_l/dt = -2i f_l (p_l - s_l) + 2i cJ sum_m (s_l p_m - p_l s_m)

(with RWA the drive term of ``dz_l/dt`` is ``-2i (g_l A p_l - g_l^* A^+ s_l)``)

phonon terms::

    ds_l/dt += -2i Bz_l s_l + i Bpm_l z_l
    dp_l/dt += +2i Bz_l p_l - i Bpm_l z_l
    dz_l/dt += -2i Bpm_l (p_l - s_l)

field equations::

    dA/dt   = -i w_c A - i sum_l g_l^* (s_l + p_l)      (RWA: g_l^* s_l)
    dB_q/dt = -i w_q B_q - i sum_l (lz_lq^* z_l + lpm_lq^* (s_l + p_l))

where ``f_l = g_l A + g_l^* A^+`` (RWA: ``g_l A``), ``Bz_l = sum_q (lz_lq B_q +
lz_lq^* B_q^+)`` and likewise ``Bpm_l``. The overall constant in front of the
``sigma x G`` block is 1, fixed by requiring free precession at ``w_l`` and a
semiclassical Rabi frequency ``2 |g A|``.

Symmetrised (anticommutator) products reduce to plain products for
c-numbers, so they only matter for closures beyond first order. The closure
is a single function, :func:`first_order_closure`, so it can be swapped.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConvergenceError
from .hamiltonian import EXCHANGE_HC_FACTOR, SystemSpec, _bond_list
from .propagator import TimeSeries


def first_order_closure(x, y):
    """``<X Y> ~= <X><Y>``."""
    return x * y


@dataclass
class MeanFieldState:
    sigma_minus: np.ndarray
    sigma_z: np.ndarray
    a: complex = 0.0
    b: np.ndarray = None

    def __post_init__(self):
        self.sigma_minus = np.atleast_1d(np.asarray(self.sigma_minus, dtype=complex))
        self.sigma_z = np.atleast_1d(np.asarray(self.sigma_z, dtype=float))
        self.a = complex(self.a)
        self.b = np.zeros(0, dtype=complex) if self.b is None \
            else np.atleast_1d(np.asarray(self.b, dtype=complex))
        if self.sigma_minus.shape != self.sigma_z.shape:
            raise ValueError("sigma_minus and sigma_z must have one entry per site")

    @property
    def sigma_plus(self):
        return self.sigma_minus.conj()

    @property
    def a_dag(self):
        return self.a.conjugate()

    @property
    def b_dag(self):
        return self.b.conj()

    def bloch_length(self):
        """``4 |s|^2 + z^2`` per site; 1 for a pure product state."""
        return 4.0 * np.abs(self.sigma_minus) ** 2 + self.sigma_z ** 2

    @classmethod
    def product(cls, qubit_coeffs, photon_alpha=0.0, phonon_alphas=()):
        """Means of a product of qubit states ``c1|alpha> + c2|beta>`` and coherent fields."""
        c = np.asarray(qubit_coeffs, dtype=complex).reshape(-1, 2)
        s = c[:, 0].conj() * c[:, 1]
        z = np.abs(c[:, 1]) ** 2 - np.abs(c[:, 0]) ** 2
        return cls(s, z, photon_alpha, np.asarray(phonon_alphas, dtype=complex))

    # flat real packing for the integrators
    def pack(self):
        return np.concatenate([self.sigma_minus.real, self.sigma_minus.imag, self.sigma_z,
                               [self.a.real, self.a.imag], self.b.real, self.b.imag])

    @classmethod
    def unpack(cls, y, n_sites, n_phonons):
        n, q = n_sites, n_phonons
        s = y[:n] + 1j * y[n:2 * n]
        z = y[2 * n:3 * n]
        a = complex(y[3 * n], y[3 * n + 1])
        b = y[3 * n + 2:3 * n + 2 + q] + 1j * y[3 * n + 2 + q:3 * n + 2 + 2 * q]
        return cls(s, z, a, b)


@dataclass
class MeanFieldDerivative:
    """Time derivatives of all seven mean-field variables, each from its own equation."""

    sigma_minus: np.ndarray
    sigma_plus: np.ndarray
    sigma_z: np.ndarray
    a: complex
    a_dag: complex
    b: np.ndarray
    b_dag: np.ndarray

    def pack(self):
        return MeanFieldState(self.sigma_minus, self.sigma_z.real, self.a, self.b).pack()


class Integrator(str, enum.Enum):
    RK4 = "rk4"
    RK45_ADAPTIVE = "rk45_adaptive"


@dataclass(frozen=True)
class MeanFieldConfig:
    integrator: Integrator = Integrator.RK45_ADAPTIVE
    dt: float = 0.01
    tolerance: float = 1e-11
    dt_sample: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "integrator", Integrator(self.integrator))
        if not self.dt > 0:
            raise ValueError("dt must be positive")


def _neighbours(spec: SystemSpec):
    nbrs = [[] for _ in range(spec.n_sites)]
    for n, m in _bond_list(spec.chain):
        nbrs[n].append(m)
        nbrs[m].append(n)
    return nbrs


def _chain_block(state, spec, closure):
    """Precession, exchange and photon-drive terms for every site."""
    cpl = spec.couplings
    w = np.asarray(spec.chain.transition_freqs)
    g = cpl.photon_couplings
    s, p, z = state.sigma_minus, state.sigma_plus, state.sigma_z
    A, Ad = state.a, state.a_dag
    if cpl.rwa:
        f_minus = g * A            # multiplies z in ds/dt
        f_plus = g.conj() * Ad     # multiplies z in dp/dt
        dz_field = -2j * (closure(g * A, p) - closure(g.conj() * Ad, s))
    else:
        f_minus = f_plus = g * A + g.conj() * Ad
        dz_field = -2j * closure(f_minus, p - s)
    ds = -1j * w * s + 1j * closure(f_minus, z)
    dp = 1j * w * p - 1j * closure(f_plus, z)
    dz = dz_field

    cj = EXCHANGE_HC_FACTOR * cpl.exchange_J
    if cj != 0.0:
        for l, nbrs in enumerate(_neighbours(spec)):
            for m in nbrs:
                ds[l] += 1j * cj * (closure(z[l], s[m]) - closure(s[l], z[m]))
                dp[l] += -1j * cj * (closure(z[l], p[m]) - closure(p[l], z[m]))
                dz[l] += 2j * cj * (closure(s[l], p[m]) - closure(p[l], s[m]))
    return ds, dp, dz


def _phonon_fields(state, lam):
    """``sum_q (lam_lq B_q + lam_lq^* B_q^+)`` per site."""
    if lam.shape[1] == 0:
        return np.zeros(lam.shape[0], dtype=complex)
    return lam @ state.b + lam.conj() @ state.b_dag


def mf_rhs(state: MeanFieldState, spec: SystemSpec, t: float = 0.0,
           closure=first_order_closure) -> MeanFieldDerivative:
    cpl = spec.couplings
    s, p, z = state.sigma_minus, state.sigma_plus, state.sigma_z
    ds, dp, dz = _chain_block(state, spec, closure)

    bz = _phonon_fields(state, cpl.phonon_z_couplings)
    bpm = _phonon_fields(state, cpl.phonon_pm_couplings)
    ds = ds - 2j * closure(bz, s) + 1j * closure(bpm, z)
    dp = dp + 2j * closure(bz, p) - 1j * closure(bpm, z)
    dz = dz - 2j * closure(bpm, p - s)

    g = cpl.photon_couplings
    wc = spec.photon.frequency if spec.photon is not None else 0.0
    source = s if cpl.rwa else s + p
    source_dag = p if cpl.rwa else s + p
    da = -1j * wc * state.a - 1j * np.sum(g.conj() * source)
    dad = 1j * wc * state.a_dag + 1j * np.sum(g * source_dag)

    wq = np.array([m.frequency for m in spec.phonons])
    lz, lpm = cpl.phonon_z_couplings, cpl.phonon_pm_couplings
    drive = lz.conj().T @ z + lpm.conj().T @ (s + p)
    drive_dag = lz.T @ z + lpm.T @ (s + p)
    db = -1j * wq * state.b - 1j * drive
    dbd = 1j * wq * state.b_dag + 1j * drive_dag

    return MeanFieldDerivative(ds, dp, dz, complex(da), complex(dad), db, dbd)


def _rk4(f, y0, times, dt):
    out = np.empty((times.size, y0.size))
    out[0] = y0
    y, t = y0.copy(), 0.0
    for i in range(1, times.size):
        n_sub = max(1, int(round((times[i] - t) / dt)))
        h = (times[i] - t) / n_sub
        for _ in range(n_sub):
            k1 = f(t, y)
            k2 = f(t + h / 2, y + h / 2 * k1)
            k3 = f(t + h / 2, y + h / 2 * k2)
            k4 = f(t + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        t = times[i]
        out[i] = y
    return out


def integrate_mf(state0: MeanFieldState, spec: SystemSpec, cfg: MeanFieldConfig,
                 t_max: float, closure=first_order_closure) -> TimeSeries:
    """Integrate from ``t = 0`` to ``t_max``; samples every ``cfg.dt_sample`` (default ``cfg.dt``).

    Channels (all prefixed ``mf_``): ``sigma_z_mean``, ``sigma_z_<l>``,
    ``sigma_minus_<l>`` (complex), ``bloch_length_<l>``, ``photon_amplitude``
    (complex), ``photon_number``, ``phonon_amplitude_<q>`` (complex).
    """
    n, q = spec.n_sites, len(spec.phonons)
    if state0.sigma_minus.size != n or state0.b.size != q:
        raise ValueError("initial mean-field state does not match the system")

    def f(t, y):
        st = MeanFieldState.unpack(y, n, q)
        return mf_rhs(st, spec, t, closure).pack()

    dt_sample = cfg.dt_sample or cfg.dt
    times = dt_sample * np.arange(int(np.floor(t_max / dt_sample + 1e-9)) + 1)
    y0 = state0.pack()
    if cfg.integrator is Integrator.RK4:
        ys = _rk4(f, y0, times, cfg.dt)
    else:
        sol = solve_ivp(f, (0.0, times[-1]), y0, method="DOP853", t_eval=times,
                        rtol=cfg.tolerance, atol=cfg.tolerance, first_step=min(cfg.dt, dt_sample))
        if sol.status != 0:
            t_fail = float(sol.t[-1]) if sol.t.size else 0.0
            raise ConvergenceError(f"mean-field integration failed at t={t_fail:.6g}: {sol.message}",
                                   time=t_fail)
        ys = sol.y.T

    states = [MeanFieldState.unpack(y, n, q) for y in ys]
    ts = TimeSeries(times)
    sz = np.array([st.sigma_z for st in states])
    sm = np.array([st.sigma_minus for st in states])
    # conjugate pairing holds by construction: only sigma_minus, a and b are stored
    assert np.array_equal(np.array([st.sigma_plus for st in states]), sm.conj())
    ts.add("mf_sigma_z_mean", sz.mean(axis=1))
    for l in range(n):
        ts.add(f"mf_sigma_z_{l}", sz[:, l])
        ts.add(f"mf_sigma_minus_{l}", sm[:, l])
        ts.add(f"mf_bloch_length_{l}", 4.0 * np.abs(sm[:, l]) ** 2 + sz[:, l] ** 2)
    a = np.array([st.a for st in states])
    ts.add("mf_photon_amplitude", a)
    ts.add("mf_photon_number", np.abs(a) ** 2)
    for k in range(q):
        ts.add(f"mf_phonon_amplitude_{k}", np.array([st.b[k] for st in states]))
    return ts
