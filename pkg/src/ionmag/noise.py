"""Shot-to-shot field noise and per-ion static disorder.

Random numbers come from the counter-based Philox generator keyed by
``(seed, stream)``.  Stream ``s`` always yields the same sequence, so draw
``k`` of stream ``s`` is a pure function of ``(seed, s, k)`` no matter which
subset of trajectories is evaluated, in which order, or by how many workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .constants import B0_DEFAULT

FWHM_PER_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))

# Streams used for the common-mode field drift (shared by all ions in a shot).
COMMON_STREAM = -1


def fwhm_to_sigma(fwhm):
    fwhm = np.asarray(fwhm, dtype=float)
    if np.any(fwhm < 0):
        raise ValueError("FWHM must be non-negative")
    out = fwhm / FWHM_PER_SIGMA
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ShotNoiseSpec:
    """Gaussian shot-to-shot field distribution.

    ``delta_b`` is read as a FWHM when ``width="fwhm"`` (default) and as the
    standard deviation when ``width="std"``.
    """

    b0: float = B0_DEFAULT
    delta_b: float = 0.0
    seed: int = 0
    width: str = "fwhm"

    def __post_init__(self):
        if self.delta_b < 0:
            raise ValueError("delta_b must be non-negative")
        if self.width not in ("fwhm", "std"):
            raise ValueError("width must be 'fwhm' or 'std'")

    @property
    def sigma(self) -> float:
        return fwhm_to_sigma(self.delta_b) if self.width == "fwhm" else float(self.delta_b)


@lru_cache(maxsize=64)
def _normals(seed: int, stream: int, count: int) -> np.ndarray:
    key = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream) & 0xFFFFFFFFFFFFFFFF])
    gen = np.random.Generator(np.random.Philox(key))
    out = gen.standard_normal(count)
    out.flags.writeable = False
    return out


def standard_normals(seed: int, stream: int, indices) -> np.ndarray:
    """Standard-normal draws ``indices`` of stream ``stream``."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        return np.zeros(idx.shape)
    if idx.min() < 0:
        raise ValueError("draw indices must be non-negative")
    # round the prefix length up so nearby requests share one cached block
    count = 1 << int(idx.max()).bit_length()
    return _normals(int(seed), int(stream), max(count, 64))[idx]


def sample_shot_field(spec: ShotNoiseSpec, shot, stream: int = COMMON_STREAM):
    """Field of shot(s) ``shot``: ``b0 + sigma * z`` (Tesla)."""
    z = standard_normals(spec.seed, stream, shot)
    out = spec.b0 + spec.sigma * z
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class IonDisorder:
    """Static per-ion offsets; arrays of equal length (one entry per ion)."""

    static_field_offset: np.ndarray
    rf_amplitude_scale: np.ndarray
    mw_amplitude_scale: np.ndarray

    @classmethod
    def uniform(cls, n_ions: int = 1) -> "IonDisorder":
        return cls(np.zeros(n_ions), np.ones(n_ions), np.ones(n_ions))

    @classmethod
    def from_fractional_map(
        cls, fractional, b0: float, rf_follows_field: bool = True, mw_fraction=None
    ) -> "IonDisorder":
        """Disorder from ``Delta B_z / B_z0`` per ion.

        The RF coil amplitude profile is taken equal to the static-field
        profile (same coil geometry); the microwave amplitude is uniform unless
        ``mw_fraction`` is given.
        """
        frac = np.asarray(fractional, dtype=float)
        rf = 1.0 + frac if rf_follows_field else np.ones_like(frac)
        mw = np.ones_like(frac) if mw_fraction is None else 1.0 + np.asarray(mw_fraction, dtype=float)
        return cls(frac * b0, rf, mw)

    def __len__(self):
        return len(self.static_field_offset)

    def subset(self, index) -> "IonDisorder":
        return IonDisorder(
            np.asarray(self.static_field_offset)[index],
            np.asarray(self.rf_amplitude_scale)[index],
            np.asarray(self.mw_amplitude_scale)[index],
        )


def compose_ion_field(shot, disorder: IonDisorder, ion=slice(None)):
    """``(B_eff, rf_scale, mw_scale)`` for ion(s) ``ion`` in a shot of field ``shot``."""
    offset = np.asarray(disorder.static_field_offset)[ion]
    return (
        np.asarray(shot) + offset,
        np.asarray(disorder.rf_amplitude_scale)[ion],
        np.asarray(disorder.mw_amplitude_scale)[ion],
    )
