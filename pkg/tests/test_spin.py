import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from ionmag.constants import B0_DEFAULT, HBAR, MU_B, TWO_PI, YB171_HYPERFINE
from ionmag.spin import (
    MINUS,
    PLUS,
    ZERO,
    ZERO_PRIME,
    DriveSet,
    HyperfineLevels,
    bare_energies,
    basis_state,
    build_lab_frame_hamiltonian,
    build_rotating_hamiltonian,
    build_two_level_hamiltonian,
    check_hermitian,
    detunings,
    dressed_basis,
    from_dressed_basis,
    ideal_two_level_population,
    integrate_lab_frame,
    propagate_segment,
    segment_unitary,
    to_dressed_basis,
    unitary_eigensystem,
    unitary_power_apply,
    zeeman_splittings,
)

LEVELS = HyperfineLevels()
fields = st.floats(min_value=0.5e-3, max_value=1.0e-3)
rates = st.floats(min_value=0.0, max_value=TWO_PI * 50e3)
phases = st.floats(min_value=-np.pi, max_value=np.pi)


def breit_rabi_oracle(B):
    """Exact I = J = 1/2 ground-state energies from the coupled-spin Hamiltonian.

    ``H = A I.J + (2 mu_B / hbar) B J_z`` in the product basis
    ``|m_I, m_J>``; the nuclear moment is neglected, as in the model.
    """
    sx = np.array([[0, 1], [1, 0]]) / 2
    sy = np.array([[0, -1j], [1j, 0]]) / 2
    sz = np.diag([0.5, -0.5])
    one = np.eye(2)
    A = YB171_HYPERFINE
    H = A * sum(np.kron(s, s) for s in (sx, sy, sz)) + 2 * MU_B / HBAR * B * np.kron(one, sz)
    E = np.linalg.eigvalsh(H)
    # ordering at weak field: 0', then |-1>, |0>, |+1> (F = 1 upper)
    Fz = np.kron(sz, one) + np.kron(one, sz)
    w, v = np.linalg.eigh(H)
    m = np.round(np.real(np.einsum("ij,ik,kj->j", v.conj(), Fz, v))).astype(int)
    e0p = w[(m == 0)][0]
    e0 = w[(m == 0)][1]
    em1 = w[m == -1][0]
    ep1 = w[m == 1][0]
    assert np.allclose(sorted(E), sorted([e0p, e0, em1, ep1]))
    return np.array([e0p, e0, em1, ep1]) - e0


class TestLevels:
    def test_breit_rabi_oracle_second_order(self):
        for B in (0.2e-3, B0_DEFAULT, 2e-3):
            exact = breit_rabi_oracle(B)
            model = bare_energies(LEVELS, B)
            # fourth-order corrections ~ (gamma B / omega_hfs)^2 relative to the quadratic term
            quad = LEVELS.quadratic_coeff * B**2
            assert np.allclose(model, exact, rtol=0, atol=quad * 1e-4 + 1e-3)

    def test_linear_model_has_symmetric_zeeman(self):
        wp, wm = zeeman_splittings(HyperfineLevels.linear(), B0_DEFAULT)
        assert wp == wm

    def test_dark_state_detuning_is_second_order(self):
        # 0-D detuning slope: d/dB of the mean of the +-1 detunings
        dB = 1e-9
        d = detunings(LEVELS, B0_DEFAULT + dB, B0_DEFAULT)
        mean_pm = 0.5 * (d[PLUS] + d[MINUS])
        expected = -2 * LEVELS.quadratic_coeff * B0_DEFAULT * dB
        assert mean_pm == pytest.approx(expected, rel=1e-5)
        # and about 2 pi x 2.38 kHz/G at the default field
        assert abs(mean_pm / dB) * 1e-4 / TWO_PI == pytest.approx(2378, rel=0.01)

    def test_negative_field_rejected(self):
        with pytest.raises(ValueError):
            zeeman_splittings(LEVELS, -1e-3)


class TestHamiltonian:
    @given(B=fields, mw=rates, s=rates, phi=phases, kind=st.sampled_from(["signal", "pi", "free"]))
    @settings(max_examples=50, deadline=None)
    def test_hermitian(self, B, mw, s, phi, kind):
        drives = DriveSet(omega_mw=mw, omega_s=s, omega_pi=s / 2, phi_s=phi, phi_pi=-phi)
        H = build_rotating_hamiltonian(LEVELS, drives, B, kind)
        check_hermitian(H)
        check_hermitian(build_two_level_hamiltonian(LEVELS, drives, B, kind))

    def test_matrix_elements(self):
        drives = DriveSet(omega_mw=TWO_PI * 25e3, omega_s=TWO_PI * 2.0, phi_s=0.3)
        H = build_rotating_hamiltonian(LEVELS, drives, B0_DEFAULT, "signal")
        assert H[PLUS, ZERO] == pytest.approx(0.5 * TWO_PI * 2.0 * np.exp(-0.3j))
        assert H[MINUS, ZERO_PRIME] == H[PLUS, ZERO_PRIME] == pytest.approx(0.5 * TWO_PI * 25e3)
        assert H[MINUS, ZERO] == 0
        assert np.allclose(np.diag(H), 0)  # resonant at the nominal field

    def test_mutually_exclusive_rf(self):
        drives = DriveSet(omega_s=1.0, omega_pi=2.0)
        assert build_rotating_hamiltonian(LEVELS, drives, B0_DEFAULT, "pi")[PLUS, ZERO] == 1.0
        assert build_rotating_hamiltonian(LEVELS, drives, B0_DEFAULT, "free")[PLUS, ZERO] == 0

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            build_rotating_hamiltonian(LEVELS, DriveSet(), B0_DEFAULT, "both")

    def test_broadcasting(self):
        B = B0_DEFAULT + np.linspace(-1e-7, 1e-7, 5)
        H = build_rotating_hamiltonian(LEVELS, DriveSet(omega_s=1.0), B, "signal", rf_scale=np.ones(5))
        assert H.shape == (5, 4, 4)

    def test_non_hermitian_rejected(self):
        H = np.zeros((4, 4), complex)
        H[0, 1] = 1.0
        with pytest.raises(ValueError):
            segment_unitary(H, 1.0)


class TestDressedBasis:
    def test_orthonormal(self):
        W = dressed_basis()
        assert np.allclose(W.T @ W, np.eye(4), atol=1e-15)

    def test_round_trip(self):
        rng = np.random.default_rng(1)
        psi = rng.normal(size=4) + 1j * rng.normal(size=4)
        assert np.allclose(from_dressed_basis(to_dressed_basis(psi)), psi)
        H = build_rotating_hamiltonian(LEVELS, DriveSet(omega_s=3.0), B0_DEFAULT, "signal")
        assert np.allclose(from_dressed_basis(to_dressed_basis(H)), H)

    def test_dressing_energies(self):
        mw = TWO_PI * 25e3
        H = to_dressed_basis(build_rotating_hamiltonian(LEVELS, DriveSet(omega_mw=mw), B0_DEFAULT, "free"))
        assert np.allclose(np.diag(H).real, [0, 0, mw / np.sqrt(2), -mw / np.sqrt(2)], atol=1e-9)
        assert np.allclose(H - np.diag(np.diag(H)), 0, atol=1e-9)

    def test_signal_couples_zero_and_dark(self):
        omega_s = 2.0
        H = to_dressed_basis(build_rotating_hamiltonian(LEVELS, DriveSet(omega_s=omega_s), B0_DEFAULT, "signal"))
        assert abs(H[1, 0]) == pytest.approx(0.5 * omega_s / np.sqrt(2))


class TestPropagation:
    @given(B=fields, s=rates, dt=st.floats(min_value=0, max_value=1e-2))
    @settings(max_examples=30, deadline=None)
    def test_matches_expm_oracle(self, B, s, dt):
        H = build_rotating_hamiltonian(LEVELS, DriveSet(omega_s=s), B, "signal")
        assert np.allclose(segment_unitary(H, dt), expm(-1j * H * dt), atol=1e-10)

    def test_unitarity_drift_long_run(self):
        # state norm after 10^5 exact segments (2.5e4 four-segment cycles)
        drives = DriveSet(omega_s=TWO_PI * np.sqrt(2), omega_pi=np.sqrt(2) * np.pi / 6.3e-3)
        B = B0_DEFAULT + 3e-8
        Us = segment_unitary(build_rotating_hamiltonian(LEVELS, drives, B, "signal"), 20e-3)
        Up = segment_unitary(build_rotating_hamiltonian(LEVELS, drives, B, "pi"), 6.3e-3)
        Z, theta = unitary_eigensystem(Up @ Us @ Up @ Us)
        psi0 = basis_state(ZERO)
        for k in (1, 1000, 25_000):
            assert abs(np.linalg.norm(unitary_power_apply(Z, theta, psi0, k)) - 1) < 1e-12

    def test_power_apply_matches_repeated_products(self):
        rng = np.random.default_rng(3)
        H = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        U = segment_unitary(H + H.conj().T, 0.37)
        Z, theta = unitary_eigensystem(U)
        psi = basis_state(1)
        ref = psi.copy()
        for _ in range(200):
            ref = U @ ref
        assert np.allclose(unitary_power_apply(Z, theta, psi, 200), ref, atol=1e-12)

    def test_power_apply_degenerate_spectrum(self):
        # identity-like blocks: Schur vectors stay orthonormal
        U = np.diag(np.exp(1j * np.array([0.3, 0.3, 0.3 + 1e-14, -1.0])))
        Z, theta = unitary_eigensystem(U)
        assert np.allclose(Z.conj().T @ Z, np.eye(4), atol=1e-14)
        psi = np.full(4, 0.5 + 0j)
        assert np.allclose(unitary_power_apply(Z, theta, psi, 7), np.diag(U) ** 7 * psi, atol=1e-12)

    def test_negative_duration(self):
        with pytest.raises(ValueError):
            segment_unitary(np.zeros((4, 4)), -1.0)

    def test_ideal_rabi(self):
        omega_0 = TWO_PI * 1.0
        drives = DriveSet.from_effective(omega_0)
        H = build_rotating_hamiltonian(LEVELS, drives, B0_DEFAULT, "signal")
        for t in (0.1, 0.25, 0.5, 0.8):
            P = abs(propagate_segment(basis_state(ZERO), H, t)[ZERO]) ** 2
            assert P == pytest.approx(ideal_two_level_population(omega_0, t), abs=2e-3)
        assert ideal_two_level_population(omega_0, 0.5) < 1e-30 + 1e-3

    def test_two_level_model_exact_rabi(self):
        omega_0 = TWO_PI * 1.0
        H = build_two_level_hamiltonian(LEVELS, DriveSet.from_effective(omega_0), B0_DEFAULT, "signal")
        psi = propagate_segment(basis_state(0, 2), H, 0.3)
        assert abs(psi[0]) ** 2 == pytest.approx(np.cos(omega_0 * 0.3 / 2) ** 2, abs=1e-12)


class TestLabFrame:
    def test_lab_hamiltonian_hermitian(self):
        drives = DriveSet(omega_s=10.0)
        for t in (0.0, 1.3e-7, 2e-3):
            check_hermitian(build_lab_frame_hamiltonian(LEVELS, drives, B0_DEFAULT, t, 1, 0))

    def test_exclusive_modulation(self):
        with pytest.raises(ValueError):
            integrate_lab_frame(LEVELS, DriveSet(), B0_DEFAULT, basis_state(ZERO), 1e-6, 1, 1)

    def test_raw_lab_frame_matches_interaction_picture(self):
        drives = DriveSet(omega_s=TWO_PI * 2e3)
        psi0 = basis_state(ZERO)
        t = 2e-9
        a = integrate_lab_frame(LEVELS, drives, B0_DEFAULT, psi0, t, steps_per_period=32, interaction_picture=False)
        b = integrate_lab_frame(LEVELS, drives, B0_DEFAULT, psi0, t, interaction_picture=True)
        assert np.allclose(abs(a) ** 2, abs(b) ** 2, atol=1e-9)

    def test_rwa_short_window(self):
        # strong RF for a visible rotation inside 1 ms
        drives = DriveSet(omega_pi=np.sqrt(2) * np.pi / 1e-3)
        psi0 = basis_state(ZERO)
        lab = integrate_lab_frame(LEVELS, drives, B0_DEFAULT, psi0, 1e-3, f1=0, f2=1)
        rot = propagate_segment(psi0, build_rotating_hamiltonian(LEVELS, drives, B0_DEFAULT, "pi"), 1e-3)
        assert np.max(abs(abs(lab) ** 2 - abs(rot) ** 2)) < 2e-3
