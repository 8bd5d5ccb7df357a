"""Idealized two-ion merge and split.

The two ions sit in a symmetric quartic-plus-quadratic well whose COM
frequency follows a prescribed schedule while their separation follows d(t).
The COM mode (mass 2m) sees only the frequency change; the stretch mode
(reduced mass m/2) is additionally driven by d(t).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import solve_ivp

from .oscillator_core import (ATOL, IntegrationError, FundamentalSolutions, ModeExcitation, amplitude,
                              husimi_q)
from .profiles import (SYMMETRIC_WIDTHS, FrequencyTrajectory, ReversedProfile, TanhProfile,
                       build_frequency_trajectory, build_merge_profile)
from .trap_model import BE9, TWO_PI, PhysicalConstants

# the crystal modes are composed into long chains, so they are integrated tighter than single ions
RTOL_CRYSTAL = 1e-12

log = logging.getLogger(__name__)


def coulomb_field(d, c: PhysicalConstants = BE9):
    """Field of one ion at the other's position, q/(4 pi eps0 d^2) in V/m."""
    d = np.asarray(d, float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    return c.k_coulomb / d ** 2


def critical_point(d, c: PhysicalConstants = BE9):
    """Pure quartic well holding the pair at separation d.

    Returns (beta [V/m^4], curvature at the ions [V/m^2], COM frequency [Hz]).
    """
    d = np.asarray(d, float)
    beta = c.q / (2 * np.pi * c.eps0 * d ** 5)
    curv = 3 * beta * d ** 2
    return beta, curv, c.frequency(curv)


def single_well(d, c: PhysicalConstants = BE9):
    """Pure quadratic well with equilibrium separation d: (alpha [V/m^2], curvature, frequency [Hz])."""
    d = np.asarray(d, float)
    alpha = c.q / (4 * np.pi * c.eps0 * d ** 3)
    curv = 2 * alpha
    return alpha, curv, c.frequency(curv)


def single_well_distance(nu, c: PhysicalConstants = BE9) -> float:
    """Equilibrium separation of two ions in a harmonic well of COM frequency nu."""
    return float((c.q / (2 * np.pi * c.eps0 * c.curvature(nu))) ** (1 / 3))


def critical_distance(nu, c: PhysicalConstants = BE9) -> float:
    """Separation at which a pure quartic well gives COM frequency nu."""
    return float((3 * c.q / (2 * np.pi * c.eps0 * c.curvature(nu))) ** (1 / 3))


def stretch_frequency(omega_com, d, c: PhysicalConstants = BE9):
    """omega_str^2 = omega_com^2 + q^2 / (pi eps0 m d^3)."""
    return np.sqrt(np.asarray(omega_com) ** 2 + c.q ** 2 / (np.pi * c.eps0 * c.m * np.asarray(d) ** 3))


@dataclass
class MergeSpec:
    """Merge or split of a two-ion crystal.

    The separation profile is stored in the split orientation
    (d(0) = d_final, d(T) = d_in); a merge runs it backwards.
    """

    T: float
    d_in: float = 100e-6
    d_crit: float = 27e-6
    d_final: float | None = None  # None: equilibrium separation at nu_final
    nu_in: float = 1e6
    nu_crit: float | None = None  # None: ideal critical-point frequency at d_crit
    nu_final: float = 1e6
    n_val: float = 3.0
    direction: str = "split"
    symmetry: str = "asymmetric"
    width: float = SYMMETRIC_WIDTHS["broad"]
    crossover: int = 16  # interior frequency anchors between d_final and d_crit (asymmetric only)
    constants: PhysicalConstants = BE9
    profile: object = field(init=False, repr=False)
    freq: FrequencyTrajectory = field(init=False, repr=False)

    def __post_init__(self):
        c = self.constants
        if self.direction not in ("merge", "split"):
            raise ValueError("direction must be 'merge' or 'split'")
        if self.d_final is None:
            self.d_final = single_well_distance(self.nu_final, c)
        if self.nu_crit is None:
            self.nu_crit = float(critical_point(self.d_crit, c)[2])
        if not self.d_final < self.d_crit < self.d_in:
            raise ValueError("need d_final < d_crit < d_in")
        if self.symmetry == "asymmetric":
            self.profile = build_merge_profile(self.T, self.d_in, self.d_crit, self.d_final, self.n_val)
        else:
            self.profile = TanhProfile(self.d_in - self.d_final, self.T, self.n_val, self.d_final)
        self.freq = build_frequency_trajectory(
            [(self.d_final, self.nu_final), (self.d_crit, self.nu_crit), (self.d_in, self.nu_in)],
            self.symmetry, self.width, self.crossover if self.symmetry == "asymmetric" else 0)

    def with_T(self, T: float) -> "MergeSpec":
        return replace(self, T=T)

    def reversed(self) -> "MergeSpec":
        return replace(self, direction="split" if self.direction == "merge" else "merge")

    # time functions in operation time
    def separation(self, t):
        """(d, d', d'') at operation time t."""
        if self.direction == "split":
            return self.profile.eval(t)
        return ReversedProfile(self.profile).eval(t)

    def _t_split(self, t):
        return np.asarray(t, float) if self.direction == "split" else self.T - np.asarray(t, float)

    def nu_com(self, t):
        return self.freq.nu_of_t(self._t_split(t), self.profile)

    def omega_com(self, t):
        return TWO_PI * self.nu_com(t)

    def omega_str(self, t):
        return stretch_frequency(self.omega_com(t), self.separation(t)[0], self.constants)

    @property
    def omega_final(self):
        return float(self.omega_com(self.T)), float(self.omega_str(self.T))

    @property
    def omega_initial(self):
        return float(self.omega_com(0.0)), float(self.omega_str(0.0))


MODE_MASS = {"com": 2.0, "str": 0.5}  # in units of the ion mass


def _mode_state(ex: ModeExcitation | None, mu, omega, hbar):
    """Invert alpha = sqrt(mu w/2 hbar)(s + i s'/w)."""
    if ex is None:
        return 0.0, 0.0
    k = np.sqrt(mu * omega / (2 * hbar))
    return ex.alpha.real / k, ex.alpha.imag * omega / k


@dataclass
class IdealizedResult:
    com: ModeExcitation
    str: ModeExcitation
    Q_com: float
    Q_str: float
    energy_gain: float  # classical energy in the co-moving mode frame, J
    M_com: np.ndarray = None  # (s, s') maps of the homogeneous mode equations
    M_str: np.ndarray = None
    omegas: dict = None  # mode -> (omega_in, omega_out), rad/s

    def as_dict(self):
        return {"n_com": self.com.n_bar, "n_str": self.str.n_bar}


def _fs(T, y, Ts):
    return FundamentalSolutions(T, y[0] * Ts, y[1], y[2], y[3] / Ts)


def simulate_idealized(spec: MergeSpec, init: dict | None = None, with_q: bool = True) -> IdealizedResult:
    """Integrate the coupled two-ion equations and project on the final COM/STR modes.

    init: optional {'com': ModeExcitation, 'str': ModeExcitation} at t = 0
    (amplitudes w.r.t. the initial mode frequencies).
    """
    c = spec.constants
    m, hbar = c.m, c.hbar
    init = init or {}
    wc0, ws0 = spec.omega_initial
    u0, ud0 = _mode_state(init.get("com"), 2 * m, wc0, hbar)
    r0, rd0 = _mode_state(init.get("str"), 0.5 * m, ws0, hbar)
    # ion coordinates relative to their targets -/+ d/2 (x1 on the right)
    Ls = np.sqrt(hbar / (m * wc0))
    Ts = 1.0 / wc0
    y0 = np.array([u0 + r0 / 2, u0 - r0 / 2, ud0 + rd0 / 2, ud0 - rd0 / 2])
    y0[:2] /= Ls
    y0[2:] *= Ts / Ls

    kc = c.q ** 2 / (np.pi * c.eps0 * m)
    T = spec.T
    split = spec.direction == "split"

    def rhs(tau, y):
        t = min(tau * Ts, T)
        ts = t if split else T - t
        d, _, dd = spec.profile.eval(ts)
        nu = spec.freq.nu_of_t(ts, spec.profile)
        wc2 = (TWO_PI * float(nu) * Ts) ** 2
        ws2 = wc2 + kc / d ** 3 * Ts * Ts
        k = 0.5 * (ws2 - wc2)
        s1, s2 = y[0], y[1]
        a = 0.5 * dd * Ts * Ts / Ls
        f1 = -wc2 * s1 - k * (s1 - s2) - a
        f2 = -wc2 * s2 + k * (s1 - s2) + a
        # fundamental solutions of both modes ride along
        return [y[2], y[3], f1, f2,
                y[5], -wc2 * y[4], y[7], -wc2 * y[6],
                y[9], -ws2 * y[8], y[11], -ws2 * y[10]]

    y0 = np.concatenate([y0, [0.0, 1.0, 1.0, 0.0], [0.0, 1.0, 1.0, 0.0]])
    sol = solve_ivp(rhs, (0.0, T / Ts), y0, method="DOP853", rtol=RTOL_CRYSTAL, atol=ATOL)
    if not sol.success:
        raise IntegrationError(f"two-ion integration failed: {sol.message}")
    yT = sol.y[:, -1]
    s1, s2, v1, v2 = yT[:4]
    s1, s2 = s1 * Ls, s2 * Ls
    v1, v2 = v1 * Ls / Ts, v2 * Ls / Ts
    u, ud = 0.5 * (s1 + s2), 0.5 * (v1 + v2)
    r, rd = s1 - s2, v1 - v2
    wcT, wsT = spec.omega_final
    fc, fs = _fs(T, yT[4:8], Ts), _fs(T, yT[8:12], Ts)
    if with_q:
        Qc = husimi_q(fc, wc0, wcT)
        Qs = husimi_q(fs, ws0, wsT)
    else:
        Qc = Qs = 1.0
    com = ModeExcitation(amplitude(u, ud, wcT, 2 * m, hbar), 0.5 * (Qc - 1))
    st = ModeExcitation(amplitude(r, rd, wsT, 0.5 * m, hbar), 0.5 * (Qs - 1))
    E = 0.5 * 2 * m * (ud ** 2 + wcT ** 2 * u ** 2) + 0.5 * 0.5 * m * (rd ** 2 + wsT ** 2 * r ** 2)
    return IdealizedResult(com, st, Qc, Qs, E, fc.matrix(), fs.matrix(),
                           {"com": (wc0, wcT), "str": (ws0, wsT)})


def sweep_heating(template: MergeSpec, T_values, n_vals=(2.7, 3.0, 3.3)) -> list[dict]:
    """Rows (T_us, n_val, nu_crit_kHz, n_com, n_str) over a (T, n_val) grid."""
    rows = []
    for nv in n_vals:
        for T in T_values:
            res = simulate_idealized(replace(template, T=float(T), n_val=float(nv)))
            rows.append({"T_us": T * 1e6, "n_val": nv, "nu_crit_kHz": template.nu_crit / 1e3,
                         "n_com": res.com.n_bar, "n_str": res.str.n_bar})
    return rows


def min_adiabatic_time(nu_crit: float, n_val: float = 3.0, threshold: float = 1.0,
                       T_min: float = 5e-6, T_max: float = 200e-6, step: float = 0.5e-6,
                       template: MergeSpec | None = None) -> float | None:
    """Smallest grid T with every mode below threshold (None when unattained)."""
    grid = np.arange(T_min, T_max + 0.5 * step, step)
    if not np.isfinite(threshold):
        return float(grid[0])
    base = template or MergeSpec(T=grid[0])
    d_crit = critical_distance(nu_crit, base.constants)
    for T in grid:
        spec = replace(base, T=float(T), n_val=n_val, d_crit=d_crit, nu_crit=nu_crit)
        res = simulate_idealized(spec)
        if max(res.com.n_bar, res.str.n_bar) < threshold:
            return float(T)
    log.info("threshold %.3g not reached below %.0f us", threshold, T_max * 1e6)
    return None
