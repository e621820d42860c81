"""Static field of a coaxial coil pair and the per-ion inhomogeneity map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .constants import B0_DEFAULT, MU_0


def ellipke_agm(m):
    """Complete elliptic integrals ``K(m)``, ``E(m)`` and ``K - E`` by the AGM.

    ``m = k^2`` is the parameter.  ``K - E`` is accumulated from positive
    terms so it keeps full relative precision as ``m -> 0``.
    """
    m = np.asarray(m, dtype=float)
    if np.any((m < 0) | (m >= 1)):
        raise ValueError("parameter must satisfy 0 <= m < 1")
    a = np.ones_like(m)
    b = np.sqrt(1.0 - m)
    c = np.sqrt(m)
    s = 0.5 * m
    weight = 0.5
    for _ in range(64):
        a_next = 0.5 * (a + b)
        c = c * c / (4.0 * a_next)
        b = np.sqrt(a * b)
        a = a_next
        weight *= 2.0
        term = weight * c * c
        s = s + term
        if np.all(term <= 1e-17 * s):
            break
    K = np.pi / (2.0 * a)
    k_minus_e = K * s
    return K, K - k_minus_e, k_minus_e


def loop_field(radius: float, loop_center_z: float, r, z):
    """``(B_r, B_z)`` per ampere of a circular loop on the z axis (T/A).

    Off-axis solution in complete elliptic integrals; ``r`` and ``z`` broadcast.
    Points on the wire are rejected.
    """
    R = float(radius)
    r = np.abs(np.asarray(r, dtype=float))
    d = np.asarray(z, dtype=float) - loop_center_z
    r, d = np.broadcast_arrays(r, d)
    far2 = (R + r) ** 2 + d * d
    near2 = (R - r) ** 2 + d * d
    if np.any(near2 <= (1e-12 * R) ** 2):
        raise ValueError("field point lies on the current loop")
    m = 4.0 * R * r / far2
    K, E, KmE = ellipke_agm(m)
    pref = MU_0 / (2.0 * np.pi * np.sqrt(far2))
    b_z = pref * (K + (R * R - r * r - d * d) / near2 * E)
    # (R^2 + r^2 + d^2)/near2 * E - K == 2 R r E / near2 - (K - E)
    tiny = r < 1e-6 * R
    r_safe = np.where(tiny, 1.0, r)
    b_r_exact = pref * d / r_safe * (2.0 * R * r * E / near2 - KmE)
    b_r_axis = 0.75 * MU_0 * R * R * r * d / (R * R + d * d) ** 2.5
    b_r = np.where(tiny, b_r_axis, b_r_exact)
    if b_r.ndim == 0:
        return float(b_r), float(b_z)
    return b_r, b_z


def loop_field_on_axis(radius: float, loop_center_z: float, z):
    """Closed form ``mu0 R^2 / (2 (R^2 + d^2)^(3/2))`` per ampere."""
    d = np.asarray(z, dtype=float) - loop_center_z
    return MU_0 * radius**2 / (2.0 * (radius**2 + d * d) ** 1.5)


def loop_field_quadrature(radius: float, loop_center_z: float, r: float, z: float):
    """Reference ``(B_r, B_z)`` by direct quadrature of the Biot-Savart integrand."""
    R, d = float(radius), float(z) - loop_center_z

    def dist3(phi):
        return (r * r + R * R - 2.0 * r * R * np.cos(phi) + d * d) ** 1.5

    opts = dict(epsabs=0.0, epsrel=2e-14, limit=400)
    b_r = integrate.quad(lambda p: R * d * np.cos(p) / dist3(p), 0.0, np.pi, **opts)[0]
    b_z = integrate.quad(lambda p: R * (R - r * np.cos(p)) / dist3(p), 0.0, np.pi, **opts)[0]
    # integrand is even in phi, so twice the half-range
    scale = 2.0 * MU_0 / (4.0 * np.pi)
    return scale * b_r, scale * b_z


@dataclass(frozen=True)
class CoilPair:
    """Two coaxial loops at ``z = +-spacing/2`` with equal co-directional current,
    normalized so that ``B_z(0) = b0``."""

    radius: float = 0.05
    spacing: float = 0.10
    b0: float = B0_DEFAULT

    def __post_init__(self):
        if not (self.radius > 0 and self.spacing > 0):
            raise ValueError("radius and spacing must be positive")

    @property
    def current(self) -> float:
        """Current (A) giving ``b0`` at the center."""
        per_amp = 2.0 * loop_field_on_axis(self.radius, 0.5 * self.spacing, 0.0)
        return self.b0 / float(per_amp)


def coil_pair_field(pair: CoilPair, position) -> np.ndarray:
    """Field vector (T) at ``position`` (``(3,)`` or ``(N, 3)``, meters)."""
    p = np.asarray(position, dtype=float)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    r = np.hypot(x, y)
    if np.any(r > 0.9 * pair.radius):
        raise ValueError("position outside the modeled region (r > 0.9 coil radius)")
    h = 0.5 * pair.spacing
    br1, bz1 = loop_field(pair.radius, -h, r, z)
    br2, bz2 = loop_field(pair.radius, +h, r, z)
    I = pair.current
    br = I * (np.asarray(br1) + br2)
    bz = I * (np.asarray(bz1) + bz2)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_t = np.where(r > 0, x / np.where(r > 0, r, 1.0), 0.0)
        sin_t = np.where(r > 0, y / np.where(r > 0, r, 1.0), 0.0)
    out = np.stack([br * cos_t, br * sin_t, bz], axis=-1)
    # exact normalization at the geometric center
    out[..., 2] = np.where((r == 0) & (z == 0), pair.b0, out[..., 2])
    return out


def fractional_deviation(pair: CoilPair, position) -> np.ndarray:
    """``(B_z - B_z0) / B_z0``."""
    return coil_pair_field(pair, position)[..., 2] / pair.b0 - 1.0


@dataclass(frozen=True)
class InhomogeneityMap:
    fractional: np.ndarray
    positions: np.ndarray
    b0: float
    max_axial: float
    max_radial: float

    @property
    def offsets(self) -> np.ndarray:
        """Absolute ``Delta B_z`` per ion (T)."""
        return self.fractional * self.b0


def inhomogeneity_map(pair: CoilPair, ensemble) -> InhomogeneityMap:
    """Per-ion ``Delta B_z / B_z0``.

    ``max_axial`` is the largest deviation of the ions' axial coordinates on
    the axis; ``max_radial`` the largest deviation of their radial coordinates
    in the ``z = 0`` plane.
    """
    pos = ensemble.positions if hasattr(ensemble, "positions") else np.asarray(ensemble)
    pos = np.atleast_2d(np.asarray(pos, dtype=float))
    frac = fractional_deviation(pair, pos)
    on_axis = np.zeros_like(pos)
    on_axis[:, 2] = pos[:, 2]
    in_plane = pos.copy()
    in_plane[:, 2] = 0.0
    return InhomogeneityMap(
        fractional=frac,
        positions=pos,
        b0=pair.b0,
        max_axial=float(np.max(np.abs(fractional_deviation(pair, on_axis)))),
        max_radial=float(np.max(np.abs(fractional_deviation(pair, in_plane)))),
    )


def export_csv(fmap: InhomogeneityMap, path) -> None:
    with open(path, "w") as fh:
        fh.write("ion,x_m,y_m,z_m,dBz_over_Bz0\n")
        for i, ((x, y, z), f) in enumerate(zip(fmap.positions, fmap.fractional)):
            fh.write(f"{i},{x:.17e},{y:.17e},{z:.17e},{f:.17e}\n")
