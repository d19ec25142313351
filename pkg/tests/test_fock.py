import numpy as np
import pytest
from scipy.linalg import expm

from qedmarkov.fock import (
    FockDimensionError,
    ModeSet,
    PropagationError,
    annihilator_evolution_check,
    build_fock_system,
    build_mode_set,
    cutoff_mass,
    evolved_states,
    mode_couplings,
    populations,
    propagate,
    read_state,
    reduce_states,
    reduced_observable,
    write_state,
)
from qedmarkov.model import ModelError

from conftest import GAUSS, VANISH


@pytest.fixture(scope="module")
def small_spin(spin):
    modes = build_mode_set(GAUSS, 12, sphere_order=2)
    return build_fock_system(spin, modes, n_max=2)


@pytest.fixture(scope="module")
def small_harmonic(harmonic1):
    modes = build_mode_set(GAUSS, 5, sphere_order=2, axis=1)
    return build_fock_system(harmonic1, modes, n_max=1)


def dense_H(sys, g):
    return sys.hamiltonian(g).toarray()


# -- modes ----------------------------------------------------------------------

def test_cutoff_mass_closed_form():
    # int 4 pi r^2 exp(-r^2) dr = pi^{3/2}
    assert cutoff_mass(GAUSS) == pytest.approx(np.pi**1.5, rel=1e-10)


def test_mode_set_captures_mass():
    modes = build_mode_set(GAUSS, 40, sphere_order=3)
    assert np.all(modes.omegas > 0)
    approx = np.sum(modes.w * GAUSS(modes.omegas) ** 2)
    assert approx == pytest.approx(cutoff_mass(GAUSS), rel=1e-3)


def test_mode_set_mass_check_fails_on_coarse_grid():
    with pytest.raises(ModelError):
        build_mode_set(GAUSS, 1, sphere_order=2)


def test_mode_set_validation():
    with pytest.raises(ModelError):
        ModeSet(k=np.zeros((1, 3)), w=np.ones(1), shell=np.zeros(1, int))
    with pytest.raises(ModelError):
        ModeSet(k=np.ones((1, 3)), w=-np.ones(1), shell=np.zeros(1, int))
    with pytest.raises(ModelError):
        build_mode_set(GAUSS, 0)


def test_compression_keeps_coupling_operator(spin):
    modes = build_mode_set(VANISH, 6, sphere_order=3)
    om_raw, C_raw = mode_couplings(spin, modes, compress=False)
    om, C = mode_couplings(spin, modes)
    assert len(om) <= 6 * spin.n_states**2
    # per shell, sum_e C_e^* (x) C_e is invariant under the unitary mixing
    for w in np.unique(np.round(om_raw, 10)):
        r, c = np.isclose(om_raw, w), np.isclose(om, w)
        a = np.einsum("qij,qkl->ijkl", C_raw[r].conj(), C_raw[r])
        b = np.einsum("qij,qkl->ijkl", C[c].conj(), C[c])
        assert np.allclose(a, b, atol=1e-14)


def test_compressed_and_raw_dynamics_agree(spin):
    modes = build_mode_set(GAUSS, 10, sphere_order=2)
    raw = build_fock_system(spin, modes, n_max=1, compress=False)
    comp = build_fock_system(spin, modes, n_max=1)
    assert comp.dim < raw.dim
    X = np.array([[0.0, 1.0], [1.0, 0.0]])
    a = reduced_observable(raw, X, 3.0, 0.5, tol=1e-12)
    b = reduced_observable(comp, X, 3.0, 0.5, tol=1e-12)
    assert np.allclose(a, b, atol=1e-10)


# -- Hamiltonian ----------------------------------------------------------------

def test_no_photons_means_no_interaction(spin):
    sys = build_fock_system(spin, build_mode_set(GAUSS, 10, sphere_order=2), n_max=0)
    assert sys.dim == spin.n_states
    assert sys.Hint.nnz == 0
    assert np.array_equal(sys.H0, spin.energies)


def test_hamiltonian_hermitian(small_spin, small_harmonic):
    for sys in (small_spin, small_harmonic):
        H = dense_H(sys, 0.7)
        assert np.allclose(H, H.conj().T, atol=1e-15)


def test_dimension_count(small_spin):
    Q, N = small_spin.n_modes, 2
    assert small_spin.dim == N * (1 + Q + Q * (Q + 1) // 2)


def test_single_mode_block():
    """One mode, n_max = 1: the 4-dim block coupling vacuum and one photon."""
    from qedmarkov.model import build_spin_model
    spin = build_spin_model(1.0)
    C = np.array([[[0.0, 0.3], [0.1j, 0.0]]])
    sys = build_fock_system(spin, omegas=[1.7], C=C, n_max=1)
    H = dense_H(sys, 0.5)
    H_ref = np.zeros((4, 4), dtype=complex)
    H_ref[:2, :2] = np.diag(spin.energies)
    H_ref[2:, 2:] = np.diag(spin.energies + 1.7)
    H_ref[2:, :2] = 0.5 * C[0]
    H_ref[:2, 2:] = 0.5 * C[0].conj().T
    assert np.allclose(H, H_ref, atol=1e-15)


def test_two_photon_amplitude():
    from qedmarkov.model import build_spin_model
    spin = build_spin_model(1.0)
    C = np.array([[[0.0, 1.0], [0.0, 0.0]]])
    sys = build_fock_system(spin, omegas=[1.0], C=C, n_max=2)
    H = dense_H(sys, 1.0)
    # <2 photons, down| H |1 photon, up> = sqrt(2) C[0, 1]
    assert H[2 * 2 + 0, 1 * 2 + 1] == pytest.approx(np.sqrt(2))


def test_dimension_cap(spin):
    modes = build_mode_set(GAUSS, 20, sphere_order=4)
    with pytest.raises(FockDimensionError):
        build_fock_system(spin, modes, n_max=2, dim_cap=1000, compress=False)
    with pytest.raises(ModelError):
        build_fock_system(spin, modes, n_max=3)


def test_annihilation_operator(small_spin):
    A = small_spin.annihilation(2)
    one = small_spin.vacuum_state(1)
    one = np.roll(one, 2 * (1 + 2))  # |1_2> (x) u_1
    assert np.allclose(A @ one, small_spin.vacuum_state(1))
    assert np.allclose(A @ small_spin.vacuum_state(0), 0)


# -- propagation ----------------------------------------------------------------

def test_propagate_t_zero_and_g_zero(small_spin):
    psi = small_spin.vacuum_state(1)
    assert np.array_equal(propagate((small_spin, 0.4), psi, 0.0), psi)
    out = propagate((small_spin, 0.0), psi, 2.5)
    assert np.allclose(out, np.exp(-2.5j * small_spin.model.energies[1]) * psi, atol=1e-12)


def test_propagate_matches_dense_expm(small_harmonic, rng):
    sys = small_harmonic
    assert sys.dim <= 500
    H = dense_H(sys, 0.8)
    psi = rng.normal(size=sys.dim) + 1j * rng.normal(size=sys.dim)
    psi /= np.linalg.norm(psi)
    for t in (0.3, 7.0, 50.0):
        ref = expm(-1j * t * H) @ psi
        out = propagate(sys.hamiltonian(0.8), psi, t, tol=1e-11)
        assert np.linalg.norm(out - ref) <= 1e-8
        assert abs(np.linalg.norm(out) - 1) <= 1e-12
        assert np.vdot(out, H @ out).real == pytest.approx(np.vdot(psi, H @ psi).real, abs=1e-10)


def test_propagate_negative_time_inverts(small_spin, rng):
    H = small_spin.hamiltonian(0.6)
    psi = rng.normal(size=small_spin.dim) + 0j
    psi /= np.linalg.norm(psi)
    back = propagate(H, propagate(H, psi, 4.0), -4.0)
    assert np.allclose(back, psi, atol=1e-9)


def test_propagate_requires_normalized_state(small_spin):
    with pytest.raises(ValueError):
        propagate((small_spin, 0.1), 2 * small_spin.vacuum_state(0), 1.0)


def test_propagation_error_has_achieved():
    err = PropagationError("x", achieved=1.5)
    assert err.achieved == 1.5


# -- reduction ------------------------------------------------------------------

def dense_reduced(sys, X, t, g):
    U = expm(-1j * t * dense_H(sys, g))
    N = sys.model.n_states
    psis = U[:, :N].T
    full = np.kron(np.eye(len(sys.occupations)), X)
    return psis.conj() @ full @ psis.T


def test_reduced_observable_t_zero(small_harmonic, rng):
    n = small_harmonic.model.n_states
    X = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    assert np.allclose(reduced_observable(small_harmonic, X, 0.0, 0.5), X)


def test_reduced_observable_free_phases(small_harmonic, rng):
    n = small_harmonic.model.n_states
    X = rng.normal(size=(n, n)) + 0j
    t = 1.3
    got = reduced_observable(small_harmonic, X, t, 0.0, tol=1e-12)
    mu = small_harmonic.model.energies
    assert np.allclose(got, np.exp(1j * t * (mu[:, None] - mu[None, :])) * X, atol=1e-10)


def test_reduced_observable_matches_dense(small_harmonic, rng):
    sys = small_harmonic
    n = sys.model.n_states
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    X = A + A.conj().T
    got = reduced_observable(sys, X, 6.0, 0.7, tol=1e-12)
    ref = dense_reduced(sys, X, 6.0, 0.7)
    assert np.allclose(got, ref, atol=1e-9)
    assert np.allclose(got, got.conj().T, atol=1e-12)
    ident = reduced_observable(sys, np.eye(n), 6.0, 0.7, tol=1e-12)
    assert np.trace(ident).real <= n + 1e-9


def test_reduced_observable_negative_time(small_spin):
    with pytest.raises(ValueError):
        reduced_observable(small_spin, np.eye(2), -1.0, 0.1)


def test_populations_are_probabilities(small_spin):
    psis = evolved_states(small_spin, 0.6, [0.0, 2.0, 9.0], tol=1e-11)
    for P in (populations(small_spin, p) for p in psis):
        assert np.all(P >= 0)
        assert np.all(P.sum(axis=1) <= 1 + 1e-10)
    assert np.allclose(populations(small_spin, psis[0]), np.eye(2))
    X = np.diag([1.0, 0.0])
    red = reduce_states(small_spin, psis[2], X)
    assert np.allclose(np.diag(red).real, populations(small_spin, psis[2])[:, 0])


def test_evolved_states_grid_validation(small_spin):
    with pytest.raises(ValueError):
        evolved_states(small_spin, 0.1, [2.0, 1.0])
    with pytest.raises(ValueError):
        evolved_states(small_spin, 0.1, [-1.0])


def test_leakage_out_of_vacuum_scales_as_g_squared(small_harmonic):
    """Weight outside the vacuum sector at fixed t is O(g^2)."""
    gs = np.array([0.04, 0.02, 0.01])
    leak = []
    for g in gs:
        psi = evolved_states(small_harmonic, g, [3.0], tol=1e-13)[0]
        n = small_harmonic.model.n_states
        leak.append(1 - np.linalg.norm(psi[1, :n]) ** 2)
    slope = np.polyfit(np.log(gs), np.log(leak), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.1)


# -- annihilator identity -------------------------------------------------------

def test_annihilator_identity_at_g_zero(small_spin):
    res, defect = annihilator_evolution_check(small_spin, 0, 2.0, 0.0, tol=1e-12)
    assert res <= 1e-10
    assert defect == 0.0


def test_annihilator_identity_holds(small_spin):
    res_loose, _ = annihilator_evolution_check(small_spin, 1, 3.0, 0.5, tol=1e-8)
    res_tight, defect = annihilator_evolution_check(small_spin, 1, 3.0, 0.5, tol=1e-12)
    assert res_tight <= 1e-9
    assert res_tight <= res_loose + 1e-12
    assert np.isfinite(defect)


def test_annihilator_residual_growth_at_most_linear(small_spin):
    r1, _ = annihilator_evolution_check(small_spin, 0, 2.0, 0.4, tol=1e-11)
    r2, _ = annihilator_evolution_check(small_spin, 0, 8.0, 0.4, tol=1e-11)
    assert r2 <= 4 * max(r1, 1e-13) + 1e-10


def test_annihilator_needs_photons(spin):
    sys = build_fock_system(spin, build_mode_set(GAUSS, 10, sphere_order=2), n_max=0)
    with pytest.raises(ModelError):
        annihilator_evolution_check(sys, 0, 1.0, 0.1)


# -- snapshots ------------------------------------------------------------------

def test_state_snapshot_round_trip(tmp_path, rng):
    psi = rng.normal(size=17) + 1j * rng.normal(size=17)
    path = tmp_path / "psi.txt"
    write_state(path, psi)
    assert np.array_equal(read_state(path), psi)
    first = path.read_text().splitlines()[0].split()
    assert first[0] == "0" and len(first) == 3
