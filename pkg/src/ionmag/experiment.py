"""Monte Carlo trajectories, ensemble averages, coherence fits and sensitivity.

A trajectory is one ion in one shot: the shot fixes a field sample, the ion
adds its static offset and drive-amplitude scales, and the state starts in
``|0>``.  Every segment has a constant Hamiltonian, so propagation is exact.

* dressed runs have a single signal segment; ``P(t)`` follows in closed form
  from one eigendecomposition per trajectory.
* MDD runs are sampled at cycle boundaries.  The cycle unitary
  ``U_pi U_s U_pi U_s`` is built once per trajectory from exact segment
  exponentials and brought to Schur form, so ``P`` after ``k`` cycles is a
  closed-form sum over its eigenphases.  Nothing is multiplied up step by
  step, so the norm does not drift with the number of cycles.

Trajectories are processed in fixed-size chunks in (ion, shot) order and the
weighted partial sums of each chunk are merged in chunk order, so results do
not depend on the number of workers.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit
from scipy.optimize import least_squares

from .constants import HBAR, MU_B, T_ADD_DEFAULT
from .noise import COMMON_STREAM, IonDisorder, ShotNoiseSpec, standard_normals
from .sequence import ProtocolConfig, omega_pi_for_duration
from .spin import (
    ZERO,
    DriveSet,
    HyperfineLevels,
    build_rotating_hamiltonian,
    build_two_level_hamiltonian,
    segment_unitary,
    unitary_eigensystem,
)

MODELS = ("four_level", "two_level")
SAMPLINGS = ("monte_carlo", "gauss_hermite")
INV_E = float(np.exp(-1.0))

_SELECTION_STREAM = 0x5E1EC7  # RNG stream for choosing ions within strata
_CHUNK_ELEMENTS = 1 << 23  # populations held per chunk of trajectories
_MAX_HERMITE_NODES = 150  # numpy's node weights overflow beyond this


# --- ensembles ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class IonSelection:
    """Ions entering an average, with their static disorder and weights.

    ``ion_ids`` refer to the source ion list; ``weights`` sum to one.
    """

    disorder: IonDisorder
    weights: np.ndarray
    ion_ids: np.ndarray
    population: int = 1

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(w) != len(self.disorder) or len(w) != len(self.ion_ids):
            raise ValueError("weights, ion_ids and disorder must have one entry per ion")
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0, rtol=0, atol=1e-12):
            raise ValueError("weights must be non-negative and sum to one")

    def __len__(self):
        return len(self.weights)

    @classmethod
    def single_center_ion(cls) -> "IonSelection":
        return cls(IonDisorder.uniform(1), np.ones(1), np.zeros(1, dtype=np.int64), 1)

    @classmethod
    def from_map(cls, fractional, b0: float, ion_ids=None, **disorder_kwargs) -> "IonSelection":
        """Equal-weight average over ``ion_ids`` (default: every ion)."""
        frac = np.asarray(fractional, dtype=float)
        ids = np.arange(len(frac)) if ion_ids is None else np.asarray(ion_ids, dtype=np.int64)
        disorder = IonDisorder.from_fractional_map(frac[ids], b0, **disorder_kwargs)
        return cls(disorder, np.full(len(ids), 1.0 / len(ids)), ids, len(frac))

    @classmethod
    def stratified(
        cls,
        positions,
        fractional,
        b0: float,
        n_select: int = 500,
        axial_bins: int = 10,
        radial_bins: int = 5,
        seed: int = 0,
        **disorder_kwargs,
    ) -> "IonSelection":
        """Stratified subsample weighted by stratum occupancy.

        Strata are equal-width bins of ``|z| / max|z|`` and of the elliptical
        radius ``sqrt((x/a)^2 + (y/b)^2)`` with ``a, b`` the largest ``|x|, |y|``.
        Each non-empty stratum gets at least one ion; the rest are allotted
        in proportion to occupancy by largest remainder.
        """
        pos = np.asarray(positions, dtype=float)
        frac = np.asarray(fractional, dtype=float)
        n = len(pos)
        if len(frac) != n:
            raise ValueError("positions and fractional map differ in length")
        if n_select >= n:
            return cls.from_map(frac, b0, **disorder_kwargs)
        ext = np.max(np.abs(pos), axis=0)
        ext = np.where(ext > 0, ext, 1.0)
        axial = np.abs(pos[:, 2]) / ext[2]
        radial = np.hypot(pos[:, 0] / ext[0], pos[:, 1] / ext[1]) / np.sqrt(2.0)
        a_idx = np.minimum((axial * axial_bins).astype(int), axial_bins - 1)
        r_idx = np.minimum((radial * radial_bins).astype(int), radial_bins - 1)
        stratum = a_idx * radial_bins + r_idx
        counts = np.bincount(stratum, minlength=axial_bins * radial_bins)
        occupied = np.flatnonzero(counts)
        if n_select < len(occupied):
            raise ValueError(f"need at least {len(occupied)} ions to cover every stratum")
        quota = n_select * counts[occupied] / n
        alloc = np.maximum(np.floor(quota).astype(int), 1)
        alloc = np.minimum(alloc, counts[occupied])
        remainder = quota - np.floor(quota)
        for j in np.argsort(-remainder, kind="stable"):
            if alloc.sum() >= n_select:
                break
            if alloc[j] < counts[occupied[j]]:
                alloc[j] += 1
        while alloc.sum() > n_select:
            j = int(np.argmax(alloc))
            alloc[j] -= 1
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), _SELECTION_STREAM])))
        ids, weights = [], []
        for s, k in zip(occupied, alloc):
            members = np.flatnonzero(stratum == s)
            pick = np.sort(rng.choice(members, size=int(k), replace=False))
            ids.append(pick)
            weights.append(np.full(int(k), counts[s] / (n * k)))
        ids = np.concatenate(ids)
        weights = np.concatenate(weights)
        order = np.argsort(ids)
        ids, weights = ids[order], weights[order] / weights.sum()
        disorder = IonDisorder.from_fractional_map(frac[ids], b0, **disorder_kwargs)
        return cls(disorder, weights, ids, n)


# --- run description ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RunSpec:
    """Everything needed to reproduce one population trace.

    ``times`` is the signal-time grid.  For MDD every entry must be a whole
    number of cycles (``2 t_s``).  The echo Rabi frequency of an MDD run is
    derived from ``protocol.t_pi`` and both phases come from ``protocol``.
    ``sampling="gauss_hermite"`` replaces Monte Carlo shots by
    ``shots_per_point`` Gauss-Hermite nodes of the field distribution; this
    converges only while the field-induced phase spread stays a few radians.
    """

    protocol: ProtocolConfig
    drives: DriveSet
    noise: ShotNoiseSpec
    times: np.ndarray
    ensemble: IonSelection = field(default_factory=IonSelection.single_center_ion)
    shots_per_point: int = 200
    levels: HyperfineLevels = field(default_factory=HyperfineLevels)
    model: str = "four_level"
    sampling: str = "monte_carlo"

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", t)
        if t.ndim != 1 or len(t) == 0:
            raise ValueError("time grid must be a non-empty 1-D array")
        if t[0] < 0 or np.any(np.diff(t) <= 0):
            raise ValueError("time grid must be non-negative and strictly increasing")
        if int(self.shots_per_point) != self.shots_per_point or self.shots_per_point < 1:
            raise ValueError("shots_per_point must be a positive integer")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.sampling not in SAMPLINGS:
            raise ValueError(f"sampling must be one of {SAMPLINGS}")
        if self.sampling == "gauss_hermite" and self.shots_per_point > _MAX_HERMITE_NODES:
            raise ValueError(f"gauss_hermite supports at most {_MAX_HERMITE_NODES} nodes")
        if self.protocol.method == "mdd":
            k = t / self.protocol.cycle_signal_time
            if np.any(np.abs(k - np.round(k)) > 1e-6):
                raise ValueError("MDD time grid must lie on cycle boundaries (multiples of 2 t_s)")

    @property
    def seed(self) -> int:
        return self.noise.seed

    @property
    def cycle_indices(self) -> np.ndarray:
        return np.round(self.times / self.protocol.cycle_signal_time).astype(np.int64)

    def effective_drives(self) -> DriveSet:
        p = self.protocol
        if p.method == "mdd":
            return self.drives.with_(phi_s=p.phi_s, phi_pi=p.phi_pi, omega_pi=omega_pi_for_duration(p.t_pi))
        return self.drives.with_(phi_s=p.phi_s)

    def shot_fields(self, shots=None):
        """``(field, weight)`` of each shot (weights sum to one)."""
        n = int(self.shots_per_point)
        shots = np.arange(n) if shots is None else np.asarray(shots, dtype=np.int64)
        if self.sampling == "monte_carlo":
            z = standard_normals(self.noise.seed, COMMON_STREAM, shots)
            w = np.full(len(shots), 1.0 / n)
        else:
            nodes, weights = np.polynomial.hermite_e.hermegauss(n)
            z, w = nodes[shots], (weights / weights.sum())[shots]
        return self.noise.b0 + self.noise.sigma * z, w

    def describe(self) -> dict:
        """JSON-friendly echo of the run parameters."""
        return {
            "protocol": asdict(self.protocol),
            "drives": asdict(self.effective_drives()),
            "noise": asdict(self.noise),
            "levels": asdict(self.levels),
            "model": self.model,
            "sampling": self.sampling,
            "shots_per_point": int(self.shots_per_point),
            "n_ions_simulated": len(self.ensemble),
            "ion_population": int(self.ensemble.population),
            "n_times": len(self.times),
            "t_max": float(self.times[-1]),
        }


# --- time grids --------------------------------------------------------------


def _thin_blocks(n_steps: int, block: int, max_points: int) -> np.ndarray:
    """Indices ``0..n_steps`` kept as evenly spread blocks of ``block`` consecutive steps."""
    if n_steps + 1 <= max_points:
        return np.arange(n_steps + 1)
    n_blocks = max(max_points // block, 2)
    starts = np.unique(np.round(np.linspace(0, n_steps - block + 1, n_blocks)).astype(np.int64))
    idx = (starts[:, None] + np.arange(block)[None, :]).ravel()
    return np.unique(np.concatenate([[0], idx[idx <= n_steps]]))


def rabi_time_grid(
    method: str,
    omega_0: float,
    t_max: float,
    t_s: float = 20e-3,
    points_per_period: int = 40,
    max_points: int = 20_000,
) -> np.ndarray:
    """Signal-time grid for a Rabi trace.

    Dressed: uniform with ``points_per_period`` per Rabi period.  MDD: every
    cycle boundary.  Longer grids are thinned into evenly spread blocks that
    each cover one Rabi period, so the contrast stays measurable along the
    whole trace.  Blocks span 1.5 periods so that a centered one-period
    window fits inside each.
    """
    if not (omega_0 > 0 and t_max > 0):
        raise ValueError("omega_0 and t_max must be positive")
    period = 2.0 * np.pi / omega_0
    if method == "dressed":
        step = period / points_per_period
        block = int(1.5 * points_per_period) + 1
    elif method == "mdd":
        step = 2.0 * t_s
        block = int(np.ceil(1.5 * period / step)) + 1
    else:
        raise ValueError(f"unknown method {method!r}")
    n_steps = max(int(np.floor(t_max / step + 1e-9)), 1)
    return _thin_blocks(n_steps, block, max_points) * step


# --- propagation -------------------------------------------------------------


def _hamiltonian(spec: RunSpec, drives: DriveSet, kind: str, B, rf, mw):
    if spec.model == "four_level":
        return build_rotating_hamiltonian(spec.levels, drives, B, kind, rf, mw)
    return build_two_level_hamiltonian(spec.levels, drives, B, kind, rf)


def _zero_index(spec: RunSpec) -> int:
    return ZERO if spec.model == "four_level" else 0


@njit(cache=True, nogil=True)
def _closed_form_kernel(c, rates, x, consecutive, base_step, resync):
    # serial and GIL-free: parallelism comes from the chunk thread pool
    n, d = c.shape
    out = np.empty((n, len(x)))
    for i in range(n):
        z = np.empty(d, dtype=np.complex128)
        s = np.empty(d, dtype=np.complex128)
        for j in range(d):
            s[j] = np.exp(-1j * rates[i, j] * base_step)
        run = resync
        for t in range(len(x)):
            if consecutive[t] and run < resync:
                for j in range(d):
                    z[j] *= s[j]
                run += 1
            else:
                for j in range(d):
                    z[j] = np.exp(-1j * rates[i, j] * x[t])
                run = 0
            re = 0.0
            im = 0.0
            for j in range(d):
                re += c[i, j] * z[j].real
                im += c[i, j] * z[j].imag
            out[i, t] = re * re + im * im
    return out


def _closed_form_populations(c: np.ndarray, rates: np.ndarray, x: np.ndarray, resync: int = 32) -> np.ndarray:
    """``|sum_j c_j exp(-i rates_j x)|^2`` for each trajectory and each ``x``.

    Along runs of equally spaced ``x`` the phasors are advanced by one
    complex multiplication per step and recomputed exactly every ``resync``
    steps; each output element depends only on its own trajectory.
    """
    x = np.ascontiguousarray(x, dtype=float)
    dx = np.diff(x)
    base = float(dx.min()) if len(dx) else 1.0
    consecutive = np.zeros(len(x), dtype=np.bool_)
    consecutive[1:] = np.abs(dx - base) <= 1e-9 * base
    return _closed_form_kernel(np.ascontiguousarray(c, dtype=float), np.ascontiguousarray(rates, dtype=float),
                               x, consecutive, base, resync)


def _dressed_populations(spec, drives, B, rf, mw) -> np.ndarray:
    H = _hamiltonian(spec, drives, "signal", B, rf, mw)
    w, v = np.linalg.eigh(H)
    c = np.abs(v[:, _zero_index(spec), :]) ** 2  # overlap of |0> with each eigenvector
    return _closed_form_populations(c, w, spec.times)


def _mdd_populations(spec, drives, B, rf, mw) -> np.ndarray:
    p = spec.protocol
    Us = segment_unitary(_hamiltonian(spec, drives, "signal", B, rf, mw), np.full(len(B), p.t_s))
    Up = segment_unitary(_hamiltonian(spec, drives, "pi", B, rf, mw), np.full(len(B), p.t_pi))
    Z, theta = unitary_eigensystem(Up @ Us @ Up @ Us)
    c = np.abs(Z[:, _zero_index(spec), :]) ** 2
    return _closed_form_populations(c, -theta, spec.cycle_indices.astype(float))


def _populations(spec: RunSpec, B, rf, mw) -> np.ndarray:
    drives = spec.effective_drives()
    B, rf, mw = (np.atleast_1d(np.asarray(x, dtype=float)) for x in np.broadcast_arrays(B, rf, mw))
    if spec.protocol.method == "dressed":
        P = _dressed_populations(spec, drives, B, rf, mw)
    else:
        P = _mdd_populations(spec, drives, B, rf, mw)
    return np.clip(P, 0.0, 1.0)


def simulate_trajectory(spec: RunSpec, ion_index: int = 0, shot_index: int = 0) -> np.ndarray:
    """Population of ``|0>`` on ``spec.times`` for one ion in one shot.

    ``ion_index`` indexes ``spec.ensemble``; ``shot_index`` selects the field
    draw (a Gauss-Hermite node when ``sampling="gauss_hermite"``).
    """
    if not 0 <= ion_index < len(spec.ensemble):
        raise IndexError("ion_index out of range")
    B_shot, _ = spec.shot_fields([shot_index])
    d = spec.ensemble.disorder
    return _populations(
        spec,
        B_shot + d.static_field_offset[ion_index],
        d.rf_amplitude_scale[ion_index],
        d.mw_amplitude_scale[ion_index],
    )[0]


def propagate_sequence(levels, drives, sequence, B: float, rf_scale=1.0, mw_scale=1.0, model="four_level"):
    """Brute-force segment-by-segment propagation of one trajectory.

    Returns ``(wall_time, signal_time, P)`` at every segment boundary; used as
    an independent route to the cycle-power evaluation.
    """
    build = build_rotating_hamiltonian if model == "four_level" else build_two_level_hamiltonian
    drives = drives.with_(phi_s=sequence.phi_s, phi_pi=sequence.phi_pi)
    zero = ZERO if model == "four_level" else 0
    dim = 4 if model == "four_level" else 2
    psi = np.zeros(dim, dtype=complex)
    psi[zero] = 1.0
    wall, sig, P = [0.0], [0.0], [1.0]
    cache = {}
    for seg in sequence.segments:
        key = (seg.kind, seg.duration)
        if key not in cache:
            args = (mw_scale,) if model == "four_level" else ()
            cache[key] = segment_unitary(build(levels, drives, B, seg.kind, rf_scale, *args), seg.duration)
        psi = cache[key] @ psi
        wall.append(wall[-1] + seg.duration)
        sig.append(sig[-1] + (seg.duration if seg.kind == "signal" else 0.0))
        P.append(abs(psi[zero]) ** 2)
    return np.array(wall), np.array(sig), np.array(P)


# --- averaging ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PopulationTrace:
    """Mean and spread of the ``|0>`` population over trajectories."""

    times: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if not (len(self.times) == len(self.mean) == len(self.std)):
            raise ValueError("times, mean and std must have equal length")

    def to_csv(self) -> str:
        rows = ["signal_time_s,P0_mean,P0_std"]
        rows += [f"{t:.12e},{m:.12e},{s:.12e}" for t, m, s in zip(self.times, self.mean, self.std)]
        return "\n".join(rows) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "PopulationTrace":
        data = np.loadtxt(text.splitlines(), delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], data[:, 2])


def _chunk_size(spec: RunSpec) -> int:
    return int(np.clip(_CHUNK_ELEMENTS // len(spec.times), 16, 4096))


def ensemble_average(spec: RunSpec, workers: int = 1) -> PopulationTrace:
    """Weighted mean and standard deviation of ``P`` over ions x shots."""
    B_shot, w_shot = spec.shot_fields()
    d = spec.ensemble.disorder
    n_ions, n_shots = len(spec.ensemble), len(B_shot)
    total = n_ions * n_shots
    chunk = _chunk_size(spec)
    w_ion = np.asarray(spec.ensemble.weights, dtype=float)

    def partial(start):
        traj = np.arange(start, min(start + chunk, total))
        ion, shot = traj // n_shots, traj % n_shots
        B = B_shot[shot] + d.static_field_offset[ion]
        P = _populations(spec, B, d.rf_amplitude_scale[ion], d.mw_amplitude_scale[ion])
        w = w_ion[ion] * w_shot[shot]
        return w @ P, w @ (P * P)

    starts = range(0, total, chunk)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(partial, starts))
    else:
        parts = [partial(s) for s in starts]
    s1 = np.zeros(len(spec.times))
    s2 = np.zeros(len(spec.times))
    for a, b in parts:  # fixed merge order
        s1 += a
        s2 += b
    var = np.maximum(s2 - s1 * s1, 0.0)
    return PopulationTrace(spec.times.copy(), np.clip(s1, 0.0, 1.0), np.sqrt(var))


# --- coherence time ----------------------------------------------------------


def contrast_model(t, t2: float, stretch: float, omega: float):
    """``1/2 + 1/2 exp(-(t/T2)^n) cos(omega t)``."""
    t = np.asarray(t, dtype=float)
    return 0.5 + 0.5 * np.exp(-((t / t2) ** stretch)) * np.cos(omega * t)


@dataclass(frozen=True)
class ContrastFit:
    t2: float
    stretch: float
    rabi_freq_fit: float
    residual: float
    converged: bool = True
    lower_bound: bool = False
    span: float = 0.0

    def __post_init__(self):
        if not self.t2 > 0:
            raise ValueError("t2 must be positive")
        if not 0 < self.stretch <= 4:
            raise ValueError("stretch must lie in (0, 4]")


_STRETCH_BOUNDS = (0.25, 4.0)


def _fit_window(t, P, omega, t2_starts, stretch_starts, omega_rel, t2_max):
    lo = [np.log(t2_starts.min() / 10.0), _STRETCH_BOUNDS[0], omega * (1 - omega_rel)]
    hi = [np.log(t2_max), _STRETCH_BOUNDS[1], omega * (1 + omega_rel)]

    def resid(x):
        return contrast_model(t, np.exp(x[0]), x[1], x[2]) - P

    best = None
    for t2 in t2_starts:
        for n in stretch_starts:
            x0 = np.clip([np.log(t2), n, omega], lo, hi)
            r = least_squares(resid, x0, bounds=(lo, hi), x_scale=[1.0, 1.0, omega * 1e-3],
                              xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=2000)
            if best is None or r.cost < best.cost:
                best = r
    return best


def fit_contrast(trace: PopulationTrace, omega_0_hint: float, stretch_starts=(1.0, 2.0)) -> ContrastFit:
    """Least-squares fit of ``P = 1/2 + 1/2 exp(-(t/T2)^n) cos(omega t)``.

    The frequency is refined on progressively longer leading windows (each
    four times the previous) so that the phase stays locked over long traces;
    the final window is the whole trace with a multi-start over ``(T2, n)``.
    A fitted ``T2`` beyond the trace end is flagged as a lower bound.
    """
    t = np.asarray(trace.times, dtype=float)
    P = np.asarray(trace.mean, dtype=float)
    if not omega_0_hint > 0:
        raise ValueError("omega_0_hint must be positive")
    period = 2.0 * np.pi / omega_0_hint
    span = float(t[-1] - t[0])
    if span < 3.0 * period:
        raise ValueError("trace must span at least three Rabi periods")
    t2_max = 1e3 * max(span, period)
    omega = float(omega_0_hint)
    end = min(t[-1], t[0] + 4.0 * period)
    omega_rel = 0.2
    t2_guess = None
    while True:
        sel = t <= end
        starts = np.geomspace(period, 10.0 * max(span, period), 6)
        if t2_guess is not None:
            starts = np.append(starts, t2_guess)
        final = end >= t[-1]
        best = _fit_window(t[sel], P[sel], omega, starts, stretch_starts if final else (1.0,), omega_rel, t2_max)
        omega = float(best.x[2])
        t2_guess = float(np.exp(best.x[0]))
        if final:
            break
        # window long enough to pin the frequency to a fraction of a cycle over the next one
        omega_rel = min(omega_rel, 2.0 * np.pi / (omega * (end - t[0])))
        end = min(t[-1], t[0] + 4.0 * (end - t[0]))
    t2 = float(np.exp(best.x[0]))
    return ContrastFit(
        t2=t2,
        stretch=float(best.x[1]),
        rabi_freq_fit=omega,
        residual=float(np.sqrt(np.mean(best.fun**2))),
        converged=bool(best.status > 0),
        lower_bound=bool(t2 > t[-1]),
        span=span,
    )


@dataclass(frozen=True)
class T2Crossing:
    t2: float
    lower_bound: bool


def contrast_envelope(times, population, omega_0: float, coverage: float = 0.9):
    """Peak-to-trough of ``P`` over a centered window of one Rabi period.

    Returns ``(times, envelope)`` at the samples whose window covers at least
    ``coverage`` of a period without a gap in the grid (a spacing above twice
    the finest one); other samples are dropped.  Each sample counts for one
    grid step, so coarse grids such as MDD cycle boundaries at high Rabi
    frequency still qualify.
    """
    t = np.asarray(times, dtype=float)
    P = np.asarray(population, dtype=float)
    period = 2.0 * np.pi / omega_0
    dt = np.diff(t)
    step = float(dt.min()) if len(dt) else 0.0
    gap = np.concatenate([[0], np.cumsum(dt > 2.0 * step)]) if len(t) > 1 else np.zeros(1, int)
    lo = np.searchsorted(t, t - 0.5 * period, side="left")
    hi = np.searchsorted(t, t + 0.5 * period, side="right")
    keep, env = [], []
    for i, (a, b) in enumerate(zip(lo, hi)):
        if b - a >= 4 and gap[a] == gap[b - 1] and t[b - 1] - t[a] + step >= coverage * period:
            w = P[a:b]
            keep.append(i)
            env.append(w.max() - w.min())
    return t[keep], np.array(env)


def t2_crossing(trace: PopulationTrace, omega_0: float) -> T2Crossing:
    """First signal time at which the contrast envelope drops below ``1/e``.

    Linear interpolation between the bracketing envelope samples; the
    envelope is taken as 1 at ``t = 0``.  A trace whose envelope never
    crosses reports its last time as a lower bound.
    """
    te, env = contrast_envelope(trace.times, trace.mean, omega_0)
    if len(te) == 0:
        raise ValueError("no window of the trace covers a full Rabi period")
    prev_t, prev_e = 0.0, 1.0
    for t, e in zip(te, env):
        if e < INV_E:
            if prev_e <= e:
                return T2Crossing(float(t), False)
            x = prev_t + (prev_e - INV_E) / (prev_e - e) * (t - prev_t)
            return T2Crossing(float(x), False)
        prev_t, prev_e = t, e
    return T2Crossing(float(trace.times[-1]), True)


# --- sensitivity -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SensitivityReport:
    S: float
    S_B: float
    optimal_time: float
    n_ions: int
    n_shots: int
    t_add: float
    duty: float
    times: np.ndarray = field(repr=False, default=None)
    curve: np.ndarray = field(repr=False, default=None)

    def summary(self) -> dict:
        return {k: getattr(self, k) for k in ("S", "S_B", "optimal_time", "n_ions", "n_shots", "t_add", "duty")}


def rabi_to_field_sensitivity(S):
    """Field sensitivity (T/sqrt(Hz)) from a Rabi-frequency sensitivity (rad/s/sqrt(Hz))."""
    return HBAR * np.asarray(S) / (np.sqrt(2.0) * MU_B)


def sensitivity_curve(t, fit: ContrastFit, omega_0: float, n_ions=1, n_shots=1, t_add=T_ADD_DEFAULT, duty=1.0):
    """Projection-noise-limited Rabi-frequency sensitivity at signal times ``t``.

    ``S = dP sqrt(T_tot) / (|dP/dt| t / omega_0 sqrt(N_i))`` with
    ``dP = sqrt(P (1 - P) / n)`` and ``T_tot = n (duty t + t_add)``; ``P`` and
    its slope come from the fitted model.
    """
    t = np.asarray(t, dtype=float)
    w, T, m = fit.rabi_freq_fit, fit.t2, fit.stretch
    decay = np.exp(-((t / T) ** m))
    P = 0.5 + 0.5 * decay * np.cos(w * t)
    ddecay = -decay * m * (t / T) ** m / np.where(t > 0, t, 1.0)
    slope = 0.5 * (ddecay * np.cos(w * t) - decay * w * np.sin(w * t))
    dP = np.sqrt(np.clip(P * (1.0 - P), 0.0, None) / n_shots)
    T_tot = n_shots * (duty * t + t_add)
    with np.errstate(divide="ignore", invalid="ignore"):
        S = dP * np.sqrt(T_tot) / (np.abs(slope) * t / omega_0 * np.sqrt(n_ions))
    return np.where(np.isfinite(S), S, np.inf)


def sensitivity(
    fit: ContrastFit,
    omega_0: float,
    n_ions: int = 1,
    n_shots: int = 1,
    t_add: float = T_ADD_DEFAULT,
    duty: float = 1.0,
    t_max: float | None = None,
    max_points: int = 2_000_000,
) -> SensitivityReport:
    """Optimal sensitivity over the maximum-slope points ``(k + 1/2) pi / omega``.

    ``t_max`` defaults to five coherence times.
    """
    if n_ions < 1 or n_shots < 1:
        raise ValueError("n_ions and n_shots must be >= 1")
    if t_add < 0 or duty < 1:
        raise ValueError("t_add must be >= 0 and duty >= 1")
    w = fit.rabi_freq_fit
    t_max = 5.0 * fit.t2 if t_max is None else t_max
    k_max = min(int(t_max * w / np.pi - 0.5), max_points)
    t = (np.arange(max(k_max, 0) + 1) + 0.5) * np.pi / w
    S = sensitivity_curve(t, fit, omega_0, n_ions, n_shots, t_add, duty)
    if not np.any(np.isfinite(S)):
        raise ValueError("population slope vanishes at every sampled time")
    i = int(np.argmin(S))
    return SensitivityReport(
        S=float(S[i]),
        S_B=float(rabi_to_field_sensitivity(S[i])),
        optimal_time=float(t[i]),
        n_ions=int(n_ions),
        n_shots=int(n_shots),
        t_add=float(t_add),
        duty=float(duty),
        times=t,
        curve=S,
    )


# --- studies -----------------------------------------------------------------


def make_spec(
    method: str,
    omega_0: float,
    delta_b: float,
    t_max: float,
    *,
    t_s: float = 20e-3,
    t_pi: float = 6.3e-3,
    phi_s: float = 0.0,
    phi_pi: float = 0.0,
    drives: DriveSet | None = None,
    noise_width: str = "std",
    seed: int = 0,
    shots: int = 200,
    ensemble: IonSelection | None = None,
    levels: HyperfineLevels | None = None,
    model: str = "four_level",
    sampling: str = "monte_carlo",
    max_points: int = 20_000,
) -> RunSpec:
    """Convenience constructor with the default timing and dressing."""
    drives = (drives or DriveSet()).with_(omega_s=np.sqrt(2.0) * omega_0)
    protocol = ProtocolConfig(method=method, t_s=t_s if method == "mdd" else t_max, t_pi=t_pi,
                              phi_s=phi_s, phi_pi=phi_pi)
    noise = ShotNoiseSpec(b0=drives.nominal_field, delta_b=delta_b, seed=seed, width=noise_width)
    return RunSpec(
        protocol=protocol,
        drives=drives,
        noise=noise,
        times=rabi_time_grid(method, omega_0, t_max, t_s=t_s, max_points=max_points),
        ensemble=ensemble or IonSelection.single_center_ion(),
        shots_per_point=shots,
        levels=levels or HyperfineLevels(),
        model=model,
        sampling=sampling,
    )


@dataclass(frozen=True, eq=False)
class T2Measurement:
    """Coherence time of one parameter set.

    ``t2`` is the fitted envelope scale when the envelope crosses ``1/e``
    inside the trace (``source="fit"``).  A fit whose stretch exponent sits
    on a bound has no interior optimum, as happens when the contrast is gone
    within about one Rabi period; the crossing time is reported instead
    (``source="crossing"``).  A trace that never crosses reports its end as a
    lower bound (``source="trace_end"``).
    """

    t2: float
    lower_bound: bool
    crossing: T2Crossing
    fit: ContrastFit | None
    trace: PopulationTrace = field(repr=False)
    spec: RunSpec = field(repr=False)
    source: str = "fit"


def stretch_at_bound(fit: ContrastFit, rel: float = 1e-3) -> bool:
    lo, hi = _STRETCH_BOUNDS
    return fit.stretch <= lo * (1 + rel) or fit.stretch >= hi * (1 - rel)


def measure_t2(
    method: str,
    omega_0: float,
    delta_b: float,
    *,
    t_start: float | None = None,
    t_cap: float | None = None,
    span_factor: float = 8.0,
    workers: int = 1,
    **spec_kwargs,
) -> T2Measurement:
    """Coherence time from a trace sized to the decay.

    The trace starts at ``t_start`` (default 8 Rabi periods for dressed, 64
    for MDD) and quadruples up to ``t_cap`` (default 1024 and 65536 periods)
    until the envelope crosses ``1/e``.  It is then extended to
    ``span_factor`` times the crossing time (at least 8 periods) so that the
    fit sees the decay tail, and fitted with :func:`fit_contrast`.  See
    :class:`T2Measurement` for which value is reported.
    """
    period = 2.0 * np.pi / omega_0
    t_max = t_start or period * (8 if method == "dressed" else 64)
    t_cap = t_cap or period * (1024 if method == "dressed" else 65536)
    while True:
        spec = make_spec(method, omega_0, delta_b, t_max, **spec_kwargs)
        trace = ensemble_average(spec, workers=workers)
        cross = t2_crossing(trace, omega_0)
        if not cross.lower_bound or t_max >= t_cap:
            break
        t_max = min(4.0 * t_max, t_cap)
    if cross.lower_bound:
        return T2Measurement(cross.t2, True, cross, None, trace, spec, source="trace_end")
    span = min(max(span_factor * cross.t2, 8.0 * period), t_cap)
    if span > t_max * (1 + 1e-9):
        spec = make_spec(method, omega_0, delta_b, span, **spec_kwargs)
        trace = ensemble_average(spec, workers=workers)
    fit = fit_contrast(trace, omega_0)
    if stretch_at_bound(fit):
        return T2Measurement(cross.t2, False, cross, fit, trace, spec, source="crossing")
    return T2Measurement(fit.t2, fit.lower_bound, cross, fit, trace, spec)


@dataclass(frozen=True, eq=False)
class T2Grid:
    delta_b: np.ndarray
    omega_0: np.ndarray
    method: str
    t2: np.ndarray
    lower_bound: np.ndarray

    def to_csv(self) -> str:
        rows = ["method,delta_b_T,omega_0_rad_s,t2_s,lower_bound"]
        for i, db in enumerate(self.delta_b):
            for j, om in enumerate(self.omega_0):
                rows.append(f"{self.method},{db:.6e},{om:.9e},{self.t2[i, j]:.9e},{int(self.lower_bound[i, j])}")
        return "\n".join(rows) + "\n"


def sweep_t2_grid(delta_b_values, omega_0_values, method: str, workers: int = 1, **kwargs) -> T2Grid:
    """:func:`measure_t2` for every ``(delta_b, omega_0)`` cell on the center ion.

    ``omega_0_values`` are effective Rabi frequencies ``Omega_s / sqrt(2)``.
    Timing and dressing take the module defaults unless overridden.
    """
    db = np.asarray(delta_b_values, dtype=float)
    om = np.asarray(omega_0_values, dtype=float)
    t2 = np.empty((len(db), len(om)))
    lb = np.zeros_like(t2, dtype=bool)
    for i, d in enumerate(db):
        for j, o in enumerate(om):
            m = measure_t2(method, float(o), float(d), workers=workers, **kwargs)
            t2[i, j], lb[i, j] = m.t2, m.lower_bound
    return T2Grid(db, om, method, t2, lb)


def scan_pi_duration(
    t_pi_values,
    omega_0: float = 2.0 * np.pi * 1.0,
    delta_b: float = 0.05e-6,
    model: str = "four_level",
    workers: int = 1,
    **kwargs,
):
    """MDD coherence time (:func:`measure_t2`) against pi-pulse duration.

    Returns ``(t_pi, t2, lower_bound)`` arrays.
    """
    tp = np.asarray(t_pi_values, dtype=float)
    t2 = np.empty(len(tp))
    lb = np.zeros(len(tp), dtype=bool)
    for i, t_pi in enumerate(tp):
        m = measure_t2("mdd", omega_0, delta_b, t_pi=float(t_pi), model=model, workers=workers, **kwargs)
        t2[i], lb[i] = m.t2, m.lower_bound
    return tp, t2, lb


def phase_scan(
    phase_offsets,
    omega_0: float = 2.0 * np.pi * 1.0,
    n_cycles: int | None = None,
    t_s: float = 20e-3,
    t_pi: float = 6.3e-3,
    drives: DriveSet | None = None,
    levels: HyperfineLevels | None = None,
):
    """Noiseless MDD contrast against the signal phase offset ``phi_s - phi_pi``.

    Contrast is ``max P - min P`` over the cycle boundaries of ``n_cycles``
    cycles (default: enough for one full Rabi period of signal time).
    Returns ``(offsets, contrast)``.
    """
    offsets = np.asarray(phase_offsets, dtype=float)
    if n_cycles is None:
        n_cycles = int(np.ceil(2.0 * np.pi / omega_0 / (2.0 * t_s)))
    times = np.arange(n_cycles + 1) * 2.0 * t_s
    contrast = np.empty(len(offsets))
    for i, off in enumerate(offsets):
        spec = RunSpec(
            protocol=ProtocolConfig("mdd", t_s=t_s, t_pi=t_pi, phi_s=float(off), phi_pi=0.0),
            drives=(drives or DriveSet()).with_(omega_s=np.sqrt(2.0) * omega_0),
            noise=ShotNoiseSpec(delta_b=0.0),
            times=times,
            shots_per_point=1,
            levels=levels or HyperfineLevels(),
        )
        P = simulate_trajectory(spec)
        contrast[i] = P.max() - P.min()
    return offsets, contrast


def summary_json(obj) -> str:
    """Deterministic JSON text (sorted keys, fixed float repr)."""

    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer, np.bool_)):
            return o.item()
        raise TypeError(f"not JSON serializable: {type(o).__name__}")

    return json.dumps(obj, sort_keys=True, indent=2, default=default) + "\n"
