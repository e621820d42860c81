"""Equilibrium Coulomb crystals in a 3D harmonic pseudopotential.

Internally everything is solved in trap units: lengths in
``l0 = (k q^2 / (m w_z^2))^(1/3)`` and energies in ``m w_z^2 l0^2``, where the
potential reads ``sum_i (ax x_i^2 + ay y_i^2 + z_i^2)/2 + sum_{i<j} 1/r_ij``
with ``ax = (w_x/w_z)^2``, ``ay = (w_y/w_z)^2``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit, prange
from scipy import optimize, special

from .constants import AMU, COULOMB_K, E_CHARGE, EPSILON_0, TWO_PI, YB171_MASS


class ConvergenceError(RuntimeError):
    """Raised when the crystal solver misses its force tolerance."""

    def __init__(self, message, ensemble=None):
        super().__init__(message)
        self.ensemble = ensemble


@dataclass(frozen=True)
class TrapConfig:
    omega_x: float = TWO_PI * 0.7e6
    omega_y: float = TWO_PI * 0.58e6
    omega_z: float = TWO_PI * 0.12e6
    mass: float = YB171_MASS
    charge: float = E_CHARGE

    def __post_init__(self):
        if min(self.omega_x, self.omega_y, self.omega_z) <= 0:
            raise ValueError("trap frequencies must be positive")
        if self.mass <= 0 or self.charge == 0:
            raise ValueError("mass must be positive and charge non-zero")

    @property
    def omegas(self) -> np.ndarray:
        return np.array([self.omega_x, self.omega_y, self.omega_z])

    @property
    def length_scale(self) -> float:
        return (COULOMB_K * self.charge**2 / (self.mass * self.omega_z**2)) ** (1.0 / 3.0)

    @property
    def force_scale(self) -> float:
        return self.mass * self.omega_z**2 * self.length_scale

    @property
    def energy_scale(self) -> float:
        return self.force_scale * self.length_scale

    @property
    def anisotropy(self) -> np.ndarray:
        return (self.omegas / self.omega_z) ** 2


SMALL_CRYSTAL = 200
SMALL_CRYSTAL_RESTARTS = 8


@dataclass(frozen=True)
class MDParams:
    """Damped molecular-dynamics settings (all times in units of ``1/w_z``
    unless ``timestep`` is given in seconds)."""

    timestep: float | None = None
    friction_start: float = 0.1
    friction_end: float = 1.0
    anneal_steps: int = 2000
    max_iterations: int = 20000
    force_tolerance: float = 1e-18
    initial_scale: float = 1.2
    restarts: int | None = None  # default: SMALL_CRYSTAL_RESTARTS up to SMALL_CRYSTAL ions, else 1
    polish: bool = True


@dataclass
class IonEnsemble:
    positions: np.ndarray
    converged_energy: float
    convergence_metric: float
    trap: TrapConfig = field(default_factory=TrapConfig)
    seed: int = 0

    def __len__(self):
        return len(self.positions)


# --- kernels -------------------------------------------------------------


@njit(parallel=True, cache=True)
def _coulomb_forces(pos):
    """Per-ion Coulomb force and pair-energy share (trap units).

    Every ion sums its partners in index order, so the result does not depend
    on how rows are distributed over threads.
    """
    n = pos.shape[0]
    f = np.zeros((n, 3))
    e = np.zeros(n)
    for i in prange(n):
        xi, yi, zi = pos[i, 0], pos[i, 1], pos[i, 2]
        fx = fy = fz = ei = 0.0
        for j in range(n):
            if j == i:
                continue
            dx = xi - pos[j, 0]
            dy = yi - pos[j, 1]
            dz = zi - pos[j, 2]
            r2 = dx * dx + dy * dy + dz * dz
            inv = 1.0 / np.sqrt(r2)
            inv3 = inv * inv * inv
            fx += dx * inv3
            fy += dy * inv3
            fz += dz * inv3
            ei += inv
        f[i, 0], f[i, 1], f[i, 2] = fx, fy, fz
        e[i] = 0.5 * ei
    return f, e


def _energy_forces(pos, aniso):
    fc, ec = _coulomb_forces(pos)
    trap_e = 0.5 * (pos * pos) @ aniso
    return float(np.sum(trap_e) + np.sum(ec)), fc - pos * aniso


def potential_energy(positions: np.ndarray, trap: TrapConfig) -> float:
    """Total potential energy (J) of SI positions (m)."""
    pos = np.ascontiguousarray(positions, dtype=float) / trap.length_scale
    return _energy_forces(pos, trap.anisotropy)[0] * trap.energy_scale


def net_forces(positions: np.ndarray, trap: TrapConfig) -> np.ndarray:
    """Per-ion net force (N) at SI positions (m)."""
    pos = np.ascontiguousarray(positions, dtype=float) / trap.length_scale
    return _energy_forces(pos, trap.anisotropy)[1] * trap.force_scale


# --- cold-fluid oracle ---------------------------------------------------


def cold_fluid_density(trap: TrapConfig) -> float:
    """Uniform density ``eps0 m (wx^2 + wy^2 + wz^2) / q^2`` (ions/m^3)."""
    return EPSILON_0 * trap.mass * float(np.sum(trap.omegas**2)) / trap.charge**2


def _depolarization(axes):
    a2 = np.asarray(axes) ** 2
    abc = float(np.prod(axes))
    return np.array([abc / 3.0 * special.elliprd(a2[(i + 1) % 3], a2[(i + 2) % 3], a2[i]) for i in range(3)])


def cold_fluid_ellipsoid(trap: TrapConfig, n_ions: int) -> np.ndarray:
    """Semi-axes (m) of the uniform-density spheroid holding ``n_ions``.

    Axis ratios follow from matching the depolarization factors of the
    ellipsoid to ``w_i^2 / sum w^2``; the volume from ``n_ions / n0``.
    """
    target = trap.omegas**2 / np.sum(trap.omegas**2)

    def resid(log_ratio):
        axes = np.exp(np.r_[0.0, log_ratio])
        return _depolarization(axes)[1:] - target[1:]

    guess = np.log(np.sqrt(target[0] / target[1:]))
    log_ratio = optimize.fsolve(resid, guess, xtol=1e-13)
    axes = np.exp(np.r_[0.0, log_ratio])
    volume = n_ions / cold_fluid_density(trap)
    axes *= (volume / (4.0 / 3.0 * np.pi * np.prod(axes))) ** (1.0 / 3.0)
    return axes


def bulk_density(positions: np.ndarray, inner_fraction: float = 0.5) -> float:
    """Density inside the inner ellipsoid of relative radius ``inner_fraction``.

    Semi-axes are estimated from second moments (``<x^2> = a^2/5`` for a
    uniform ellipsoid).
    """
    pos = np.asarray(positions) - np.mean(positions, axis=0)
    axes = np.sqrt(5.0 * np.mean(pos**2, axis=0))
    rho = np.sqrt(np.sum((pos / axes) ** 2, axis=1))
    count = np.count_nonzero(rho < inner_fraction)
    return count / (4.0 / 3.0 * np.pi * np.prod(axes) * inner_fraction**3)


# --- solver --------------------------------------------------------------


def _initial_positions(n, trap, params, rng):
    axes = cold_fluid_ellipsoid(trap, n) * params.initial_scale / trap.length_scale if n > 1 else np.ones(3)
    u = rng.standard_normal((n, 3))
    u /= np.linalg.norm(u, axis=1)[:, None]
    r = rng.random(n) ** (1.0 / 3.0)
    return u * r[:, None] * axes


def _damped_md(pos, aniso, params, dt, n_steps):
    """Velocity-Verlet with a friction ramp; returns positions and the energy log."""
    vel = np.zeros_like(pos)
    energy, force = _energy_forces(pos, aniso)
    log = np.empty(n_steps)
    ramp = np.geomspace(params.friction_start, params.friction_end, max(n_steps, 1))
    for step in range(n_steps):
        decay = np.exp(-ramp[step] * dt)
        vel = decay * (vel + 0.5 * dt * force)
        pos = pos + dt * vel
        energy, force = _energy_forces(pos, aniso)
        vel = vel + 0.5 * dt * force
        # drop velocity components pointing uphill (keeps the descent monotone)
        uphill = np.sum(vel * force) < 0
        if uphill:
            vel[:] = 0.0
        log[step] = energy
    return pos, log


def _polish(pos, aniso, tol, max_iter):
    n = len(pos)

    def fun(x):
        e, f = _energy_forces(x.reshape(n, 3), aniso)
        return e, -f.ravel()

    res = optimize.minimize(
        fun, pos.ravel(), jac=True, method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": tol, "ftol": 0.0, "maxcor": 30},
    )
    return res.x.reshape(n, 3)


def solve_equilibrium(n_ions: int, trap: TrapConfig = TrapConfig(), params: MDParams = MDParams(), seed: int = 0,
                      return_log: bool = False):
    """Equilibrium positions of ``n_ions`` by annealed damped MD plus L-BFGS polish.

    Each restart draws fresh initial positions from the seeded stream; the
    lowest-energy result is kept.  Raises :class:`ConvergenceError` (carrying
    the best ensemble) if the max residual force exceeds
    ``params.force_tolerance``.
    """
    if n_ions < 1:
        raise ValueError("n_ions must be >= 1")
    aniso = trap.anisotropy
    tol = params.force_tolerance / trap.force_scale
    if n_ions == 1:
        ens = IonEnsemble(np.zeros((1, 3)), 0.0, 0.0, trap, seed)
        return (ens, np.zeros(0)) if return_log else ens
    dt = 0.05 * trap.omega_z / trap.omegas.max() if params.timestep is None else params.timestep * trap.omega_z
    if dt * trap.omegas.max() / trap.omega_z >= 0.1:
        raise ValueError("timestep too large: need timestep * omega_max < 0.1")
    restarts = params.restarts
    if restarts is None:
        # small crystals have metastable shells within 0.1% of the ground state
        restarts = SMALL_CRYSTAL_RESTARTS if n_ions <= SMALL_CRYSTAL else 1
    best = None
    for restart in range(max(restarts, 1)):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, restart])))
        pos = _initial_positions(n_ions, trap, params, rng)
        pos, log = _damped_md(pos, aniso, params, dt, params.anneal_steps)
        remaining = params.max_iterations - params.anneal_steps
        if params.polish:
            pos = _polish(pos, aniso, tol, max(remaining, 1))
        else:
            pos, more = _damped_md(pos, aniso, MDParams(friction_start=params.friction_end,
                                                        friction_end=params.friction_end), dt, max(remaining, 0))
            log = np.concatenate([log, more])
        energy, force = _energy_forces(pos, aniso)
        if best is None or energy < best[0]:
            best = (energy, pos, force, log)
    energy, pos, force, log = best
    # center of charge exactly at the trap center
    pos = pos - pos.mean(axis=0)
    energy, force = _energy_forces(pos, aniso)
    residual = float(np.max(np.linalg.norm(force, axis=1))) * trap.force_scale
    ens = IonEnsemble(pos * trap.length_scale, energy * trap.energy_scale, residual, trap, seed)
    if residual > params.force_tolerance:
        raise ConvergenceError(
            f"crystal not converged: max residual force {residual:.3e} N > {params.force_tolerance:.3e} N", ens
        )
    return (ens, log * trap.energy_scale) if return_log else ens


def crystal_extents(ens) -> np.ndarray:
    """Full extent (max - min) along x, y, z in meters."""
    pos = ens.positions if isinstance(ens, IonEnsemble) else np.asarray(ens)
    return np.ptp(pos, axis=0)


def rabi_micromotion_factor(wavevector, micromotion_amplitude):
    """Rabi-frequency reduction factor ``J0(k x_m)``."""
    x = np.asarray(micromotion_amplitude, dtype=float)
    if np.any(x < 0):
        raise ValueError("micromotion amplitude must be non-negative")
    out = special.j0(np.asarray(wavevector) * x)
    return float(out) if np.ndim(out) == 0 else out


# --- files ---------------------------------------------------------------


def save_ensemble(ens: IonEnsemble, path) -> None:
    """Text table: JSON header line, then one ``x y z`` row per ion (meters)."""
    header = {
        "format": "ionmag-crystal/1",
        "n_ions": len(ens),
        "trap": asdict(ens.trap),
        "seed": ens.seed,
        "energy_J": ens.converged_energy,
        "max_residual_force_N": ens.convergence_metric,
    }
    lines = ["# " + json.dumps(header, sort_keys=True)]
    lines += [f"{x:.17e} {y:.17e} {z:.17e}" for x, y, z in ens.positions]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_ensemble(path) -> IonEnsemble:
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError(f"{path}: missing crystal header")
        header = json.loads(first[2:])
        if header.get("format") != "ionmag-crystal/1":
            raise ValueError(f"{path}: unsupported crystal format")
        pos = np.loadtxt(fh, ndmin=2)
    if pos.shape != (header["n_ions"], 3):
        raise ValueError(f"{path}: expected {header['n_ions']} rows of 3 coordinates, got {pos.shape}")
    return IonEnsemble(pos, header["energy_J"], header["max_residual_force_N"], TrapConfig(**header["trap"]),
                       header["seed"])


def export_csv(ens: IonEnsemble, path) -> None:
    with open(path, "w") as fh:
        fh.write("x_m,y_m,z_m\n")
        for x, y, z in ens.positions:
            fh.write(f"{x:.17e},{y:.17e},{z:.17e}\n")


REFERENCE_GEOMETRY_MASS = 39.962591 * AMU


def reference_crystal() -> IonEnsemble:
    """Bundled 10^4-ion equilibrium for the default trap frequencies.

    Solved with ion mass 39.96 u (``REFERENCE_GEOMETRY_MASS``), which reproduces
    the reference crystal dimensions of about 1.45 x 0.15 x 0.10 mm.
    """
    from importlib import resources

    with resources.as_file(resources.files("ionmag") / "data" / "crystal_ca40_10k.txt") as path:
        return load_ensemble(path)
