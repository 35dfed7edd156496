import math

import numpy as np
import pytest
from scipy.stats import poisson

from tcsim.errors import BasisMismatchError, CapacityError, ConvergenceError, CutoffError
from tcsim.fockspace import (ModeKind, ModeSpec, QubitChainSpec, SparseOperator, StateVector,
                             basis_state, build_basis, excitation_number, identity,
                             number_operator, sigma_operator)
from tcsim.hamiltonian import CouplingSpec, SystemSpec, assemble_total, jcm_spec
from tcsim.propagator import (
    Engine, EvolutionConfig, TimeSeries, coherent_amplitudes, coherent_cutoff, coherent_state,
    evolve, evolve_exact, evolve_krylov, exact_trajectory, expect, expect_many,
    jcm_sigma_z_analytic, krylov_step, observe, product_initial_state, revival_time,
    survival_probability, trajectory,
)


def jcm_run(n_bar, g=1.0, delta=0.0, t_max=50.0, dt=0.05, engine="eigen_exact", tail=1e-13,
            qubit=(1.0, 0.0)):
    cutoff = coherent_cutoff(n_bar, tail)
    spec = jcm_spec(omega_qubit=1.0 + delta, omega_field=1.0, g=g, cutoff=cutoff, rwa=True)
    psi0 = product_initial_state(spec.basis, [qubit],
                                 coherent_amplitudes(math.sqrt(n_bar), cutoff, tail))
    cfg = EvolutionConfig(t_max, dt, engine)
    H = assemble_total(spec)
    rows = trajectory(H, psi0, cfg)
    return spec, H, cfg.times(), rows


# --- states ----------------------------------------------------------------

def test_coherent_zero_is_vacuum():
    b = build_basis(QubitChainSpec.uniform(1, 1.0), ModeSpec(1.0, 5))
    psi = coherent_state(b, 0, 0.0)
    assert np.array_equal(psi.amplitudes, basis_state(b, (0, 0)).amplitudes)


@pytest.mark.parametrize("alpha, cutoff, tol", [(math.sqrt(50), 120, 1e-4), (1.0, 25, 1e-9),
                                                (2.0 * np.exp(0.7j), 40, 1e-9)])
def test_coherent_mean_photon_number(alpha, cutoff, tol):
    b = build_basis(QubitChainSpec.uniform(1, 1.0), ModeSpec(1.0, cutoff))
    psi = coherent_state(b, 0, alpha)
    assert abs(expect(number_operator(b, 0), psi) - abs(alpha) ** 2) < tol
    assert abs(psi.norm() - 1) < 1e-14


def test_coherent_amplitudes_match_poisson():
    amps = coherent_amplitudes(3.0, 60)
    assert np.allclose(np.abs(amps) ** 2, poisson.pmf(np.arange(61), 9.0), atol=1e-15)
    # alpha^n / sqrt(n!) phase structure
    amps = coherent_amplitudes(2j, 30)
    assert np.allclose(np.angle(amps[1:4]), [np.pi / 2, np.pi, -np.pi / 2])


def test_coherent_cutoff_rule():
    for nb in (1, 5, 50, 200):
        c = coherent_cutoff(nb)
        assert c >= nb + 7 * math.sqrt(nb)
        assert poisson.sf(c, nb) <= 1e-8
    with pytest.raises(CutoffError):
        coherent_amplitudes(math.sqrt(50), 60)


def test_product_states():
    b = build_basis(QubitChainSpec.uniform(2, 1.0), ModeSpec(1.0, 3))
    psi = product_initial_state(b)
    assert np.array_equal(psi.amplitudes, basis_state(b, (0, 0, 0)).amplitudes)
    h = 1 / math.sqrt(2)
    psi = product_initial_state(b, [(h, h), (1, 0)])
    assert abs(expect(sigma_operator(b, 0, "z"), psi)) < 1e-15
    with pytest.raises(ValueError):
        product_initial_state(b, [(1, 1), (1, 0)])
    with pytest.raises(ValueError):
        product_initial_state(b, [(1, 0)])


def test_ground_times_coherent():
    spec = jcm_spec(cutoff=120)
    psi = product_initial_state(spec.basis, [(1, 0)], coherent_amplitudes(math.sqrt(50), 120))
    assert expect(sigma_operator(spec.basis, 0, "z"), psi) == pytest.approx(-1, abs=1e-14)
    assert expect(identity(spec.basis), psi) == pytest.approx(1, abs=1e-14)


def test_expect_basis_mismatch():
    b1 = build_basis(QubitChainSpec.uniform(1, 1.0), ModeSpec(1.0, 2))
    b2 = build_basis(QubitChainSpec.uniform(1, 1.0), ModeSpec(1.0, 3))
    with pytest.raises(BasisMismatchError):
        expect(sigma_operator(b1, 0, "z"), basis_state(b2, (0, 0)))


# --- exact engine ------------------------------------------------------------

def test_diagonal_eigenstate_is_stationary():
    spec = jcm_spec(g=0.0, cutoff=3)
    psi0 = basis_state(spec.basis, (1, 2))
    states = evolve_exact(assemble_total(spec), psi0, EvolutionConfig(10.0, 0.5))
    for s in states:
        assert abs(s.fidelity(psi0) - 1) < 1e-14


def test_free_qubit_sigma_plus_phase():
    w0 = 1.7
    spec = SystemSpec(QubitChainSpec(1, (w0,)), None)
    h = 1 / math.sqrt(2)
    psi0 = product_initial_state(spec.basis, [(h, h)])
    cfg = EvolutionConfig(5.0, 0.25)
    rows = exact_trajectory(assemble_total(spec), psi0, cfg.times())
    sp_vals = expect_many(sigma_operator(spec.basis, 0, "plus"), rows)
    expected = 0.5 * np.exp(1j * w0 * cfg.times())
    assert np.max(np.abs(sp_vals - expected)) < 1e-13


def test_exact_capacity_limit():
    spec = jcm_spec(cutoff=2100)
    psi0 = product_initial_state(spec.basis, [(1, 0)])
    with pytest.raises(CapacityError, match="krylov"):
        evolve_exact(assemble_total(spec), psi0, EvolutionConfig(1.0, 0.5))


@pytest.mark.parametrize("n_bar", [1, 5, 10])
def test_analytic_matches_exact(n_bar):
    spec, H, times, rows = jcm_run(n_bar, t_max=50.0, dt=0.05)
    sz = expect_many(sigma_operator(spec.basis, 0, "z"), rows)
    assert np.max(np.abs(sz - jcm_sigma_z_analytic(times, n_bar, 1.0))) < 1e-8


@pytest.mark.parametrize("delta", [0.5, -1.3])
def test_detuned_analytic_matches_exact(delta):
    spec, H, times, rows = jcm_run(4, g=0.4, delta=delta, t_max=40.0, dt=0.1)
    sz = expect_many(sigma_operator(spec.basis, 0, "z"), rows)
    assert np.max(np.abs(sz - jcm_sigma_z_analytic(times, 4, 0.4, delta))) < 1e-8


def test_analytic_initial_value_and_vacuum():
    assert jcm_sigma_z_analytic(0.0, 50, 1.0) == pytest.approx(-1.0, abs=1e-15)
    t = np.linspace(0, 10, 50)
    assert np.allclose(jcm_sigma_z_analytic(t, 0, 1.0), -1.0)


def test_revival_time_formula():
    assert revival_time(50, 1.0) == pytest.approx(2 * math.pi * math.sqrt(50))
    assert revival_time(50, 1.0) == pytest.approx(44.43, abs=5e-3)
    assert revival_time(50, 1.0, 2 * math.sqrt(50)) == pytest.approx(math.sqrt(2) * revival_time(50, 1.0))


# --- krylov engine ----------------------------------------------------------------

def random_hermitian_op(rng, dim):
    b = build_basis(QubitChainSpec.uniform(1, 1.0), ModeSpec(1.0, dim // 2 - 1))
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return SparseOperator(b, (a + a.conj().T) / (2 * math.sqrt(dim)), hermitian=True)


def test_krylov_identity_hamiltonian():
    spec = jcm_spec(cutoff=4)
    b = spec.basis
    psi0 = product_initial_state(b, [(0.6, 0.8)], coherent_amplitudes(0.5, 4, 1e-3))
    states = evolve_krylov(identity(b), psi0, EvolutionConfig(3.0, 0.5, "krylov"))
    for k, s in enumerate(states):
        assert abs(s.fidelity(psi0) - 1) < 1e-13
        assert np.allclose(s.amplitudes, np.exp(-0.5j * k) * psi0.amplitudes, atol=1e-12)


def test_krylov_matches_exact_random(rng):
    for dim in (16, 64, 128):
        H = random_hermitian_op(rng, dim)
        v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
        psi0 = StateVector(H.basis, v / np.linalg.norm(v))
        cfg = EvolutionConfig(10.0, 1.0, "krylov")
        ex = exact_trajectory(H, psi0, cfg.times())
        kr = evolve_krylov(H, psi0, cfg)
        for e, k in zip(ex, kr):
            assert abs(abs(np.vdot(e, k.amplitudes)) ** 2 - 1) < 1e-8


@pytest.mark.slow
def test_krylov_reproduces_jcm_collapse_revival():
    dt = math.pi / (10 * math.sqrt(50))
    spec, H, times, ex = jcm_run(50, t_max=60.0, dt=dt, tail=1e-10)
    kr = trajectory(H, StateVector(spec.basis, ex[0]), EvolutionConfig(60.0, dt, "krylov"))
    a, b = observe(ex, spec, times, H), observe(kr, spec, times, H)
    for name in a.channels:
        assert np.max(np.abs(a[name] - b[name])) < 1e-4, name


def test_krylov_step_underflow_diagnostics(rng):
    H = random_hermitian_op(rng, 64)
    v = np.ones(64, complex) / 8
    with pytest.raises(ConvergenceError) as info:
        krylov_step(H.matrix.dot, v, tau_max=100.0, m=2, tol=1e-14, min_tau=1.0)
    assert {"tau", "error_estimate", "krylov_dim"} <= set(info.value.diagnostics)


def test_krylov_happy_breakdown():
    # 2-dim invariant subspace: Lanczos stops early and is exact
    spec = jcm_spec(g=0.3, cutoff=6)
    psi0 = basis_state(spec.basis, (1, 0))
    H = assemble_total(spec)
    cfg = EvolutionConfig(20.0, 1.0, "krylov", krylov_dim=10)
    ex = exact_trajectory(H, psi0, cfg.times())
    kr = np.array([s.amplitudes for s in evolve_krylov(H, psi0, cfg)])
    assert np.max(np.abs(ex - kr)) < 1e-12


# --- conservation --------------------------------------------------------------

def _mixed_spec(rwa, lam):
    return SystemSpec(
        QubitChainSpec(2, (1.0, 1.1)), ModeSpec(1.05, 4), (ModeSpec(0.9, 2, ModeKind.PHONON),),
        CouplingSpec(photon_couplings=[0.1, 0.07j], phonon_z_couplings=lam,
                     phonon_pm_couplings=lam, exchange_J=0.05, rwa=rwa))


@pytest.mark.parametrize("engine, norm_tol", [("eigen_exact", 1e-9), ("krylov", 1e-6)])
def test_norm_and_energy_conserved(engine, norm_tol):
    spec = _mixed_spec(rwa=False, lam=0.05)
    b = spec.basis
    psi0 = product_initial_state(b, [(0.6, 0.8), (1, 0)],
                                 {0: coherent_amplitudes(1.0, 4, 1e-2)})
    H = assemble_total(spec)
    cfg = EvolutionConfig(30.0, 0.5, engine)
    rows = trajectory(H, psi0, cfg)
    norms = np.linalg.norm(rows, axis=1)
    assert np.max(np.abs(norms - 1)) < norm_tol
    e = expect_many(H, rows)
    assert np.max(np.abs(e - e[0])) / abs(e[0]) < 1e-8


@pytest.mark.parametrize("engine", ["eigen_exact", "krylov"])
def test_excitation_number_conserved(engine):
    spec = _mixed_spec(rwa=True, lam=0.0)
    psi0 = product_initial_state(spec.basis, [(0, 1), (0.8, 0.6)],
                                 {0: coherent_amplitudes(1.0, 4, 1e-2)})
    rows = trajectory(assemble_total(spec), psi0, EvolutionConfig(30.0, 0.5, engine))
    n = expect_many(excitation_number(spec.basis), rows)
    assert np.max(np.abs(n - n[0])) < 1e-8


# --- survival / observe --------------------------------------------------------

def test_survival_probability_identities():
    spec, H, times, rows = jcm_run(5, t_max=20.0, dt=0.1)
    p = survival_probability(rows, spec.basis)
    assert p[0] == pytest.approx(1.0, abs=1e-14)
    sz = expect_many(sigma_operator(spec.basis, 0, "z"), rows)
    assert np.max(np.abs(p - (1 - sz) / 2)) < 1e-13
    states = [StateVector(spec.basis, r) for r in rows[:5]]
    assert np.allclose(survival_probability(states), p[:5])


def test_collapse_plateau_is_one_half():
    spec, H, times, rows = jcm_run(50, t_max=30.0, dt=0.05, tail=1e-10)
    p = survival_probability(rows, spec.basis)
    plateau = p[(times >= 10) & (times <= 30)]
    assert abs(plateau.mean() - 0.5) < 0.05
    assert np.max(np.abs(plateau - 0.5)) < 0.1


def test_observe_channels():
    spec = _mixed_spec(rwa=True, lam=0.0)
    psi0 = product_initial_state(spec.basis)
    cfg = EvolutionConfig(1.0, 0.5)
    H = assemble_total(spec)
    ts = observe(trajectory(H, psi0, cfg), spec, cfg.times(), H)
    assert list(ts.channels) == ["sigma_z_mean", "sigma_z_0", "sigma_z_1", "photon_number",
                                 "phonon_number_0", "survival_prob", "energy"]


# --- config / time series ---------------------------------------------------------

def test_evolution_config_grid():
    assert EvolutionConfig(1.0, 0.1).times()[-1] == pytest.approx(1.0)
    assert EvolutionConfig(1.0, 0.1).times().size == 11
    assert EvolutionConfig(1.05, 0.1).times()[-1] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        EvolutionConfig(-1.0, 0.1)
    with pytest.raises(ValueError):
        EvolutionConfig(1.0, 0.1, "rk4")
    assert EvolutionConfig(1.0, 0.1, "krylov").engine is Engine.KRYLOV


def test_timeseries_csv_roundtrip(tmp_path):
    t = np.linspace(0, 1, 7)
    ts = TimeSeries(t, {"x": np.sin(t), "z": np.exp(1j * t)})
    text = ts.to_csv(tmp_path / "a.csv")
    assert text.splitlines()[0] == "t,x,z.re,z.im"
    back = TimeSeries.from_csv(tmp_path / "a.csv")
    assert np.array_equal(back.times, t)
    assert np.array_equal(back["x"], ts["x"])
    assert np.array_equal(back["z"], ts["z"])
    assert back.to_csv() == text
    with pytest.raises(ValueError):
        ts.add("bad", np.zeros(3))


def test_evolve_dispatch():
    spec = jcm_spec(g=0.2, cutoff=3)
    psi0 = basis_state(spec.basis, (1, 0))
    H = assemble_total(spec)
    a = evolve(H, psi0, EvolutionConfig(2.0, 0.5, "eigen_exact"))
    b = evolve(H, psi0, EvolutionConfig(2.0, 0.5, "krylov"))
    assert len(a) == len(b) == 5
    assert all(abs(x.fidelity(y) - 1) < 1e-10 for x, y in zip(a, b))
