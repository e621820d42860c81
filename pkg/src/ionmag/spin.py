"""Four-level spin model of the 171Yb+ ground-state magnetometer.

States are ordered ``(|0'>, |0>, |-1>, |+1>)`` throughout.  Rabi frequencies
follow the usual convention: a resonant drive of Rabi frequency ``Omega`` has
rotating-frame matrix element ``Omega/2``.  With this choice the effective
``|0> <-> |D>`` Rabi frequency is ``Omega_s/sqrt(2)``, the dressed states
``|u>, |d>`` sit at ``+-Omega_mw/sqrt(2)`` and a population oscillation reads
``cos^2(Omega_0 t / 2)``.

Hamiltonians are built in the frame rotating at the three drive frequencies,
which are fixed by resonance at ``DriveSet.nominal_field``.  Field noise only
enters as diagonal detunings, so every constant-drive segment is
time-independent and is propagated exactly by eigendecomposition.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numba import njit
from scipy import linalg

from .constants import (
    B0_DEFAULT,
    OMEGA_MW_DEFAULT,
    YB171_GYROMAGNETIC,
    YB171_HYPERFINE,
)

ZERO_PRIME, ZERO, MINUS, PLUS = 0, 1, 2, 3
LEVEL_LABELS = ("0'", "0", "-1", "+1")
DRESSED_LABELS = ("0", "D", "u", "d")

SEGMENT_KINDS = ("signal", "pi", "free")

_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class HyperfineLevels:
    """Ground-state level structure.

    ``quadratic_coeff`` is the second-order Zeeman coefficient q (rad/s/T^2):
    ``|0>`` moves up by ``q B^2`` and ``|0'>`` down by the same amount while
    ``|+-1>`` stay linear (Breit-Rabi for I = J = 1/2).  For 171Yb+ this is
    ``gamma^2 / omega_hfs``; set it to 0 for the purely linear model.
    """

    omega_hfs: float = YB171_HYPERFINE
    gyromagnetic: float = YB171_GYROMAGNETIC
    quadratic_coeff: float = YB171_GYROMAGNETIC**2 / YB171_HYPERFINE

    def __post_init__(self):
        if not self.omega_hfs > 0:
            raise ValueError("omega_hfs must be positive")
        if not self.gyromagnetic > 0:
            raise ValueError("gyromagnetic must be positive")
        if self.quadratic_coeff < 0:
            raise ValueError("quadratic_coeff must be non-negative")

    @classmethod
    def linear(cls, **kwargs) -> "HyperfineLevels":
        return cls(quadratic_coeff=0.0, **kwargs)


@dataclass(frozen=True)
class DriveSet:
    """Drive amplitudes (Rabi frequencies, rad/s) and phases.

    All drive frequencies are resonant at ``nominal_field``.
    """

    omega_mw: float = OMEGA_MW_DEFAULT
    omega_s: float = 0.0
    omega_pi: float = 0.0
    phi_s: float = 0.0
    phi_pi: float = 0.0
    nominal_field: float = B0_DEFAULT

    def __post_init__(self):
        for name in ("omega_mw", "omega_s", "omega_pi"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def from_effective(cls, omega_0: float, omega_0_pi: float = 0.0, **kwargs) -> "DriveSet":
        """Build from effective ``|0> <-> |D>`` Rabi frequencies."""
        return cls(omega_s=_SQRT2 * omega_0, omega_pi=_SQRT2 * omega_0_pi, **kwargs)

    @property
    def omega_0(self) -> float:
        return self.omega_s / _SQRT2

    def with_(self, **kwargs) -> "DriveSet":
        return replace(self, **kwargs)


def zeeman_splittings(levels: HyperfineLevels, B):
    """Return ``(omega_plus, omega_minus)`` for field ``B`` (Tesla).

    ``omega_plus = E(+1) - E(0)`` and ``omega_minus = E(0) - E(-1)``.
    """
    B = np.asarray(B, dtype=float)
    if np.any(B < 0):
        raise ValueError("magnetic field must be non-negative")
    lin = levels.gyromagnetic * B
    quad = levels.quadratic_coeff * B * B
    w_plus, w_minus = lin - quad, lin + quad
    if w_plus.ndim == 0:
        return float(w_plus), float(w_minus)
    return w_plus, w_minus


def hyperfine_splitting(levels: HyperfineLevels, B):
    """Clock splitting ``E(0) - E(0')`` including its quadratic shift."""
    B = np.asarray(B, dtype=float)
    return levels.omega_hfs + 2.0 * levels.quadratic_coeff * B * B


def bare_energies(levels: HyperfineLevels, B) -> np.ndarray:
    """Diagonal of H_0 relative to ``|0>``: ``(-omega_0, 0, -omega_-, +omega_+)``."""
    B = np.asarray(B, dtype=float)
    w_plus, w_minus = zeeman_splittings(levels, B)
    w0 = hyperfine_splitting(levels, B)
    return np.stack(np.broadcast_arrays(-w0, np.zeros_like(B), -np.asarray(w_minus), np.asarray(w_plus)), axis=-1)


def detunings(levels: HyperfineLevels, B_actual, nominal_field: float) -> np.ndarray:
    """Rotating-frame diagonal ``H_0(B_actual) - H_0(B_0)`` (last axis = level)."""
    return bare_energies(levels, B_actual) - bare_energies(levels, nominal_field)


def build_rotating_hamiltonian(
    levels: HyperfineLevels,
    drives: DriveSet,
    B_actual,
    kind: str,
    rf_scale=1.0,
    mw_scale=1.0,
) -> np.ndarray:
    """Time-independent RWA Hamiltonian of one segment.

    ``kind`` is ``"signal"`` (signal RF on), ``"pi"`` (echo RF on) or
    ``"free"`` (dressing only).  The microwave dressing is on in every kind.
    ``B_actual``, ``rf_scale`` and ``mw_scale`` broadcast; the result has shape
    ``broadcast_shape + (4, 4)``.
    """
    if kind not in SEGMENT_KINDS:
        raise ValueError(f"unknown segment kind {kind!r}; expected one of {SEGMENT_KINDS}")
    diag = detunings(levels, B_actual, drives.nominal_field)
    shape = np.broadcast_shapes(diag.shape[:-1], np.shape(rf_scale), np.shape(mw_scale))
    H = np.zeros(shape + (4, 4), dtype=complex)
    idx = np.arange(4)
    H[..., idx, idx] = diag
    g_mw = 0.5 * drives.omega_mw * np.asarray(mw_scale, dtype=float)
    H[..., MINUS, ZERO_PRIME] = H[..., ZERO_PRIME, MINUS] = g_mw
    H[..., PLUS, ZERO_PRIME] = H[..., ZERO_PRIME, PLUS] = g_mw
    if kind != "free":
        omega, phi = (drives.omega_s, drives.phi_s) if kind == "signal" else (drives.omega_pi, drives.phi_pi)
        g_rf = 0.5 * omega * np.asarray(rf_scale, dtype=float) * np.exp(-1j * phi)
        H[..., PLUS, ZERO] = g_rf
        H[..., ZERO, PLUS] = np.conj(g_rf)
    return H


def build_two_level_hamiltonian(
    levels: HyperfineLevels,
    drives: DriveSet,
    B_actual,
    kind: str,
    rf_scale=1.0,
    extra_detuning=0.0,
) -> np.ndarray:
    """Idealized ``{|0>, |D>}`` model: dressing infinitely strong, no leakage.

    The ``|D>`` energy is the mean of the ``|+1>`` and ``|-1>`` detunings,
    i.e. only the field-asymmetric (second-order) part survives.
    """
    if kind not in SEGMENT_KINDS:
        raise ValueError(f"unknown segment kind {kind!r}; expected one of {SEGMENT_KINDS}")
    diag = detunings(levels, B_actual, drives.nominal_field)
    delta_d = 0.5 * (diag[..., PLUS] + diag[..., MINUS]) + extra_detuning
    shape = np.broadcast_shapes(np.shape(delta_d), np.shape(rf_scale))
    H = np.zeros(shape + (2, 2), dtype=complex)
    H[..., 1, 1] = delta_d
    if kind != "free":
        omega, phi = (drives.omega_s, drives.phi_s) if kind == "signal" else (drives.omega_pi, drives.phi_pi)
        g = 0.5 * (omega / _SQRT2) * np.asarray(rf_scale, dtype=float) * np.exp(-1j * phi)
        H[..., 1, 0] = g
        H[..., 0, 1] = np.conj(g)
    return H


def dressed_basis() -> np.ndarray:
    """Columns are the bare-basis components of ``|0>, |D>, |u>, |d>``."""
    s = 1.0 / _SQRT2
    W = np.zeros((4, 4))
    W[ZERO, 0] = 1.0
    W[MINUS, 1], W[PLUS, 1] = -s, s
    W[ZERO_PRIME, 2], W[MINUS, 2], W[PLUS, 2] = s, 0.5, 0.5
    W[ZERO_PRIME, 3], W[MINUS, 3], W[PLUS, 3] = -s, 0.5, 0.5
    return W


_W = dressed_basis()


def to_dressed_basis(x: np.ndarray) -> np.ndarray:
    """Rotate a state (``(..., 4)``) or operator (``(..., 4, 4)``) into the dressed basis."""
    x = np.asarray(x)
    if x.shape[-2:] == (4, 4):
        return _W.T @ x @ _W
    return x @ _W


def from_dressed_basis(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-2:] == (4, 4):
        return _W @ x @ _W.T
    return x @ _W.T


def check_hermitian(H: np.ndarray, rtol: float = 1e-12) -> None:
    H = np.asarray(H)
    scale = max(np.max(np.abs(H)), 1.0)
    if np.max(np.abs(H - np.conj(np.swapaxes(H, -1, -2)))) > rtol * scale:
        raise ValueError("Hamiltonian is not Hermitian")


def segment_unitary(H: np.ndarray, dt) -> np.ndarray:
    """``exp(-i H dt)`` for Hermitian ``H`` (batched over leading axes)."""
    check_hermitian(H)
    if np.any(np.asarray(dt) < 0):
        raise ValueError("segment duration must be non-negative")
    w, v = np.linalg.eigh(H)
    phase = np.exp(-1j * w * np.asarray(dt)[..., None])
    return (v * phase[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))


def propagate_segment(state: np.ndarray, H: np.ndarray, dt: float) -> np.ndarray:
    """Propagate ``state`` through a constant-Hamiltonian segment of length ``dt``."""
    U = segment_unitary(H, dt)
    return np.einsum("...ij,...j->...i", U, state)


def unitary_eigensystem(U: np.ndarray):
    """Orthonormal eigenvectors and eigenphases of unitary ``U`` (batched).

    Uses the complex Schur form, which is diagonal for a normal matrix; the
    Schur vectors stay orthonormal to machine precision even for nearly
    degenerate eigenvalues.  Returns ``(Z, theta)`` with
    ``U ~= Z diag(exp(i theta)) Z^H``.
    """
    U = np.asarray(U, dtype=complex)
    flat = U.reshape((-1,) + U.shape[-2:])
    Z = np.empty_like(flat)
    theta = np.empty(flat.shape[:2])
    for i, u in enumerate(flat):
        T, Z[i] = linalg.schur(u, output="complex")
        theta[i] = np.angle(np.diag(T))
    return Z.reshape(U.shape), theta.reshape(U.shape[:-1])


def unitary_power_apply(Z: np.ndarray, theta: np.ndarray, state: np.ndarray, k) -> np.ndarray:
    """``U^k state`` from :func:`unitary_eigensystem` output, without accumulating products."""
    coeff = np.einsum("...ji,...j->...i", np.conj(Z), state)
    return np.einsum("...ij,...j->...i", Z, coeff * np.exp(1j * theta * k))


def basis_state(index: int, dim: int = 4) -> np.ndarray:
    psi = np.zeros(dim, dtype=complex)
    psi[index] = 1.0
    return psi


def ideal_two_level_population(omega_0_eff, t):
    """Noiseless ``|0>`` population ``cos^2(Omega_0 t / 2)``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be non-negative")
    return np.cos(0.5 * omega_0_eff * t) ** 2


# --- lab frame -------------------------------------------------------------


def _lab_frequencies(levels: HyperfineLevels, drives: DriveSet):
    """Drive carrier frequencies (MW to |-1>, MW to |+1>, RF)."""
    B0 = drives.nominal_field
    w_plus, w_minus = zeeman_splittings(levels, B0)
    w0 = float(hyperfine_splitting(levels, B0))
    return w0 - w_minus, w0 + w_plus, w_plus


def build_lab_frame_hamiltonian(
    levels: HyperfineLevels, drives: DriveSet, B_actual: float, t: float, f1: int, f2: int
) -> np.ndarray:
    """Instantaneous lab-frame Hamiltonian, no rotating-wave approximation on the RF.

    The RF drives are real cosines ``Omega cos(omega_rf t + phi)``.  The
    microwave dressing is kept in its rotating exponential form, as written
    for the hyperfine transitions; a 12.6 GHz cosine would be untractable to
    integrate and its counter-rotating part is far off-resonant.
    """
    w_a, w_b, w_rf = _lab_frequencies(levels, drives)
    H = np.diag(bare_energies(levels, B_actual)).astype(complex)
    g = 0.5 * drives.omega_mw
    H[MINUS, ZERO_PRIME] = g * np.exp(-1j * w_a * t)
    H[PLUS, ZERO_PRIME] = g * np.exp(-1j * w_b * t)
    H[ZERO_PRIME, MINUS] = np.conj(H[MINUS, ZERO_PRIME])
    H[ZERO_PRIME, PLUS] = np.conj(H[PLUS, ZERO_PRIME])
    rf = f1 * drives.omega_s * np.cos(w_rf * t + drives.phi_s) + f2 * drives.omega_pi * np.cos(w_rf * t + drives.phi_pi)
    H[PLUS, ZERO] = H[ZERO, PLUS] = rf
    return H


@njit(cache=True)
def _lab_rhs(t, psi, diag, g_mw, w_a, w_b, a_rf, w_rf, phi, frame):
    # frame=1: interaction picture of the nominal bare Hamiltonian (exact).
    if frame:
        hm = g_mw + 0j
        hp = g_mw + 0j
        rf_pz = a_rf * np.cos(w_rf * t + phi) * np.exp(1j * w_rf * t)
    else:
        hm = g_mw * np.exp(-1j * w_a * t)
        hp = g_mw * np.exp(-1j * w_b * t)
        rf_pz = a_rf * np.cos(w_rf * t + phi) + 0j
    out = np.empty(4, dtype=np.complex128)
    out[0] = diag[0] * psi[0] + np.conj(hm) * psi[2] + np.conj(hp) * psi[3]
    out[1] = diag[1] * psi[1] + np.conj(rf_pz) * psi[3]
    out[2] = diag[2] * psi[2] + hm * psi[0]
    out[3] = diag[3] * psi[3] + hp * psi[0] + rf_pz * psi[1]
    return -1j * out


@njit(cache=True)
def _rk4_lab(psi, t0, dt, n_steps, diag, g_mw, w_a, w_b, a_rf, w_rf, phi, frame):
    t = t0
    for _ in range(n_steps):
        k1 = _lab_rhs(t, psi, diag, g_mw, w_a, w_b, a_rf, w_rf, phi, frame)
        k2 = _lab_rhs(t + 0.5 * dt, psi + 0.5 * dt * k1, diag, g_mw, w_a, w_b, a_rf, w_rf, phi, frame)
        k3 = _lab_rhs(t + 0.5 * dt, psi + 0.5 * dt * k2, diag, g_mw, w_a, w_b, a_rf, w_rf, phi, frame)
        k4 = _lab_rhs(t + dt, psi + dt * k3, diag, g_mw, w_a, w_b, a_rf, w_rf, phi, frame)
        psi = psi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += dt
    return psi


def integrate_lab_frame(
    levels: HyperfineLevels,
    drives: DriveSet,
    B_actual: float,
    psi0: np.ndarray,
    t_final: float,
    f1: int = 1,
    f2: int = 0,
    steps_per_period: int = 16,
    interaction_picture: bool = True,
):
    """Fixed-step RK4 integration of the lab-frame Schrodinger equation.

    With ``interaction_picture=True`` the equation is integrated after the
    exact unitary transformation ``exp(i H_0(B_0) t)``; the counter-rotating RF
    terms at ``2 omega_rf`` are retained and set the step.  Populations are
    invariant under this diagonal transformation.  With ``False`` the raw
    lab-frame equation is stepped, which resolves the 12.6 GHz clock phase and
    is only practical for nanosecond windows.

    Returns the final state in the bare basis of the chosen frame.
    """
    if f1 and f2:
        raise ValueError("signal and pi-pulse drives are mutually exclusive")
    w_a, w_b, w_rf = _lab_frequencies(levels, drives)
    if f1:
        a_rf, phi = drives.omega_s, drives.phi_s
    elif f2:
        a_rf, phi = drives.omega_pi, drives.phi_pi
    else:
        a_rf, phi = 0.0, 0.0
    if interaction_picture:
        diag = detunings(levels, B_actual, drives.nominal_field)
        fastest = 2.0 * w_rf
    else:
        diag = bare_energies(levels, B_actual)
        fastest = max(abs(diag).max(), w_b)
    dt_max = 2.0 * np.pi / fastest / steps_per_period
    n_steps = int(np.ceil(t_final / dt_max))
    dt = t_final / n_steps
    psi = np.asarray(psi0, dtype=np.complex128).copy()
    return _rk4_lab(
        psi, 0.0, dt, n_steps, np.asarray(diag, dtype=np.complex128),
        0.5 * drives.omega_mw, w_a, w_b, float(a_rf), w_rf, float(phi), int(interaction_picture),
    )
