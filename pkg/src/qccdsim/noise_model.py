"""Anomalous-heating overlay from electric-field noise.

The heating rate of a mode at angular frequency w is S_E(w) e^2 / (4 m hbar w)
quanta per second.  The overlay is disabled unless a spectrum is configured.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .trap_model import BE9, DomainError, PhysicalConstants

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseSpectrum:
    """Power law S_E = A (w_ref / w)^exponent, or tabulated (w, S_E) with log-log interpolation."""

    amplitude: float = 0.0  # (V/m)^2/Hz at omega_ref
    exponent: float = 0.0
    omega_ref: float = 2 * np.pi * 1e6
    table: tuple | None = None  # ((w, S_E), ...)

    def __post_init__(self):
        if self.table is not None:
            w = np.array([p[0] for p in self.table], float)
            s = np.array([p[1] for p in self.table], float)
            if len(w) < 2 or np.any(np.diff(w) <= 0):
                raise ValueError("tabulated spectrum needs increasing frequencies")
            if np.any(s <= 0) or np.any(w <= 0):
                raise ValueError("tabulated spectrum must be positive")
        else:
            if self.amplitude < 0 or self.exponent < 0 or self.omega_ref <= 0:
                raise ValueError("need amplitude >= 0, exponent >= 0, omega_ref > 0")

    @classmethod
    def flat(cls, amplitude: float) -> "NoiseSpectrum":
        return cls(amplitude, 0.0)

    @classmethod
    def from_csv(cls, path) -> "NoiseSpectrum":
        with open(path, newline="") as f:
            rows = [r for r in csv.reader(f) if r and not r[0].startswith("#")]
        if rows and not _is_number(rows[0][0]):
            rows = rows[1:]
        return cls(table=tuple((float(a), float(b)) for a, b in rows))

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpectrum":
        if "table" in d:
            return cls(table=tuple(tuple(map(float, p)) for p in d["table"]))
        if "csv" in d:
            return cls.from_csv(Path(d["csv"]))
        return cls(float(d.get("amplitude", 0.0)), float(d.get("exponent", 0.0)),
                   float(d.get("omega_ref", 2 * np.pi * 1e6)))

    @property
    def is_zero(self) -> bool:
        return self.table is None and self.amplitude == 0.0

    def __call__(self, omega):
        w = np.asarray(omega, float)
        if np.any(w <= 0):
            raise DomainError("spectrum evaluated at non-positive frequency")
        if self.table is None:
            return self.amplitude * (self.omega_ref / w) ** self.exponent
        tw = np.log([p[0] for p in self.table])
        ts = np.log([p[1] for p in self.table])
        lw = np.log(w)
        if np.any(lw < tw[0] - 1e-12) or np.any(lw > tw[-1] + 1e-12):
            raise DomainError("frequency outside the tabulated spectrum")
        return np.exp(np.interp(lw, tw, ts))


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def heating_rate(spec: NoiseSpectrum, omega, c: PhysicalConstants = BE9):
    """Quanta per second at angular frequency omega."""
    w = np.asarray(omega, float)
    r = spec(w) * c.q ** 2 / (4 * c.m * c.hbar * w)
    return float(r) if r.ndim == 0 else r


def accumulate(n_start: float, schedule: Iterable[tuple[float, float]], spec: NoiseSpectrum,
               c: PhysicalConstants = BE9) -> float:
    """n_start + sum rate(w_i) T_i over (omega_i, T_i) pairs."""
    total = float(n_start)
    for omega, T in schedule:
        if T < 0:
            raise ValueError("durations must be non-negative")
        if T > 0 and not spec.is_zero:
            total += heating_rate(spec, omega, c) * T
    return total


def accumulate_trajectory(n_start: float, t: Sequence[float], omega: Sequence[float], spec: NoiseSpectrum,
                          c: PhysicalConstants = BE9) -> float:
    """Piecewise-constant accumulation on samples; each interval uses its left-end frequency."""
    t = np.asarray(t, float)
    w = np.asarray(omega, float)
    return accumulate(n_start, zip(w[:-1], np.diff(t)), spec, c)
