"""Dressed-state and MDD (dressing + CPMG) pulse sequences.

A sequence is an ordered list of constant-drive segments.  The microwave
dressing is on throughout; ``signal`` segments have the RF signal on
(f1 = 1, f2 = 0) and ``pi`` segments the echo RF (f1 = 0, f2 = 1), so the
two modulation functions are never on together.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

_SQRT2 = np.sqrt(2.0)


class Segment(NamedTuple):
    kind: str
    duration: float


@dataclass(frozen=True)
class ProtocolConfig:
    """Timing of a protocol.  ``t_s`` is the total time for ``dressed``."""

    method: str = "mdd"
    t_s: float = 20e-3
    t_pi: float = 6.3e-3
    n_cycles: int = 1
    phi_s: float = 0.0
    phi_pi: float = 0.0
    sample_every_segment: bool = False

    def __post_init__(self):
        if self.method not in ("dressed", "mdd"):
            raise ValueError(f"unknown method {self.method!r}")
        if not self.t_s > 0:
            raise ValueError("t_s must be positive")
        if self.method == "mdd":
            if not self.t_pi > 0:
                raise ValueError("t_pi must be positive")
            if self.n_cycles < 1:
                raise ValueError("n_cycles must be >= 1")

    @property
    def duty_factor(self) -> float:
        """Wall time per unit signal time."""
        return 1.0 + self.t_pi / self.t_s if self.method == "mdd" else 1.0

    @property
    def cycle_signal_time(self) -> float:
        return 2.0 * self.t_s

    def build(self) -> "ScheduledSequence":
        if self.method == "dressed":
            return build_dressed_sequence(self.t_s, self.phi_s)
        return build_mdd_sequence(self.t_s, self.t_pi, self.n_cycles, self.phi_s, self.phi_pi)


@dataclass(frozen=True)
class ScheduledSequence:
    segments: tuple
    phi_s: float = 0.0
    phi_pi: float = 0.0

    @property
    def total_wall_time(self) -> float:
        return float(sum(s.duration for s in self.segments))

    @property
    def total_signal_time(self) -> float:
        return float(sum(s.duration for s in self.segments if s.kind == "signal"))

    def modulation(self, t: float) -> tuple[int, int]:
        """``(f1, f2)`` at wall time ``t`` (segments are half-open on the right)."""
        edge = 0.0
        for seg in self.segments:
            if edge <= t < edge + seg.duration:
                return (1, 0) if seg.kind == "signal" else (0, 1)
            edge += seg.duration
        return (0, 0)

    def dumps(self) -> str:
        """One line per segment: ``kind duration``; phases as a header comment."""
        lines = [f"# phi_s={self.phi_s!r} phi_pi={self.phi_pi!r}"]
        lines += [f"{s.kind} {s.duration!r}" for s in self.segments]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ScheduledSequence":
        phases = {"phi_s": 0.0, "phi_pi": 0.0}
        segments = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    key, _, val = tok.partition("=")
                    if key in phases:
                        phases[key] = float(val)
                continue
            kind, duration = line.split()
            if kind not in ("signal", "pi"):
                raise ValueError(f"unknown segment kind {kind!r}")
            segments.append(Segment(kind, float(duration)))
        return cls(tuple(segments), **phases)


def build_dressed_sequence(total_time: float, phi_s: float = 0.0) -> ScheduledSequence:
    if not total_time > 0:
        raise ValueError("total_time must be positive")
    return ScheduledSequence((Segment("signal", float(total_time)),), phi_s=phi_s, phi_pi=phi_s)


def build_mdd_sequence(
    t_s: float, t_pi: float, n_cycles: int, phi_s: float = 0.0, phi_pi: float = 0.0
) -> ScheduledSequence:
    """``(signal t_s, pi t_pi, signal t_s, pi t_pi)`` repeated ``n_cycles`` times."""
    if not (t_s > 0 and t_pi > 0):
        raise ValueError("t_s and t_pi must be positive")
    if int(n_cycles) != n_cycles or n_cycles < 1:
        raise ValueError("n_cycles must be a positive integer")
    cycle = (Segment("signal", float(t_s)), Segment("pi", float(t_pi))) * 2
    return ScheduledSequence(cycle * int(n_cycles), phi_s=phi_s, phi_pi=phi_pi)


def pi_pulse_duration(omega_pi: float) -> float:
    """Duration of a ``|0> <-> |D>`` pi pulse driven at echo Rabi frequency ``omega_pi``."""
    if not omega_pi > 0:
        raise ValueError("omega_pi must be positive")
    return np.pi / (omega_pi / _SQRT2)


def omega_pi_for_duration(t_pi: float) -> float:
    """Inverse of :func:`pi_pulse_duration`."""
    if not t_pi > 0:
        raise ValueError("t_pi must be positive")
    return _SQRT2 * np.pi / t_pi


def signal_time_axis(seq: ScheduledSequence) -> np.ndarray:
    """``(wall_time, signal_time)`` at every segment boundary, starting at (0, 0)."""
    out = np.zeros((len(seq.segments) + 1, 2))
    wall = sig = 0.0
    for i, s in enumerate(seq.segments, start=1):
        wall += s.duration
        if s.kind == "signal":
            sig += s.duration
        out[i] = wall, sig
    return out
