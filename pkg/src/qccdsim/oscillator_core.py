"""Classical forced parametric oscillator and its phonon bookkeeping.

A harmonic mode with frequency w(t) whose potential minimum follows x0(t)
ends, starting from its ground state, with mean phonon number

    n = eta + (Q - 1)/2,

where eta is the classical energy (in quanta) of the trajectory launched from
rest and Q is the Husimi coefficient built from the fundamental solutions of
the homogeneous equation.  The generating function of the transition
probabilities out of the ground state serves as an independent check.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .trap_model import BE9

log = logging.getLogger(__name__)

RTOL = 1e-10
ATOL = 1e-14  # in scaled units (length ~ zero-point spread, time ~ 1/omega)


class IntegrationError(RuntimeError):
    pass


def _as_omega(omega) -> Callable:
    if callable(omega):
        return omega
    w = float(omega)
    return lambda t: w + 0.0 * np.asarray(t, float)


def _as_drive(drive) -> Callable:
    """Normalize a drive to t -> (x0, x0', x0'')."""
    if drive is None:
        return lambda t: (0.0, 0.0, 0.0)
    if hasattr(drive, "eval"):
        return drive.eval
    if callable(drive):
        def f(t, h=1e-9):
            out = drive(t)
            if isinstance(out, tuple):
                return out
            xp, xm = drive(t + h), drive(t - h)
            return out, (xp - xm) / (2 * h), (xp - 2 * out + xm) / (h * h)
        return f
    x = float(drive)
    return lambda t: (x, 0.0, 0.0)


@dataclass
class OscillatorSpec:
    mu: float
    omega: object  # rad/s or t -> rad/s
    drive: object = None  # profile with eval(t) -> (x, v, a), or t -> x
    T: float = 0.0

    def __post_init__(self):
        self.omega_fn = _as_omega(self.omega)
        self.drive_fn = _as_drive(self.drive)
        if self.T <= 0 and hasattr(self.drive, "T"):
            self.T = float(self.drive.T)
        if not self.T > 0:
            raise ValueError("oscillator span T must be positive")

    @property
    def omega0(self):
        return float(self.omega_fn(0.0))

    @property
    def omegaT(self):
        return float(self.omega_fn(self.T))


@dataclass
class ClassicalTrajectory:
    t: np.ndarray
    u: np.ndarray
    ud: np.ndarray
    s: np.ndarray  # u - x0
    sd: np.ndarray
    sol: object = None
    length_scale: float = 1.0
    time_scale: float = 1.0

    def at(self, t):
        """Dense-output (u - x0, u' - x0') at t."""
        y = self.sol.sol(np.asarray(t) / self.time_scale)
        return y[0] * self.length_scale, y[1] * self.length_scale / self.time_scale


@dataclass
class FundamentalSolutions:
    T: float
    X: float
    Xd: float
    Y: float
    Yd: float
    sol: object = None
    time_scale: float = 1.0

    @property
    def wronskian(self) -> float:
        return self.Xd * self.Y - self.X * self.Yd

    def at(self, t):
        y = self.sol.sol(np.asarray(t) / self.time_scale)
        ts = self.time_scale
        return y[0] * ts, y[1], y[2], y[3] / ts

    def matrix(self) -> np.ndarray:
        """Map (s0, s0') -> (s(T), s'(T))."""
        return np.array([[self.Y, self.X], [self.Yd, self.Xd]])


@dataclass(frozen=True)
class ModeExcitation:
    """Coherent amplitude alpha plus the incoherent parametric share (Q - 1)/2.

    alpha = sqrt(mu w / 2 hbar) (s + i s'/w); the coherent part evolves as
    exp(-i w t) under free evolution.  n_bar = |alpha|^2 + squeeze.
    """

    alpha: complex = 0j
    squeeze: float = 0.0

    @property
    def n_bar(self) -> float:
        return abs(self.alpha) ** 2 + self.squeeze

    @property
    def n_coherent(self) -> float:
        return abs(self.alpha) ** 2

    @property
    def phase(self) -> float:
        return float(np.angle(self.alpha)) if self.alpha != 0 else 0.0

    @classmethod
    def from_polar(cls, n_bar: float, phase: float, squeeze: float = 0.0) -> "ModeExcitation":
        return cls(np.sqrt(n_bar) * np.exp(1j * phase), squeeze)


def amplitude(s, sd, omega, mu, hbar=BE9.hbar) -> complex:
    return np.sqrt(mu * omega / (2 * hbar)) * (s + 1j * sd / omega)


def _scales(mu, omega_ref, hbar):
    return np.sqrt(hbar / (mu * omega_ref)), 1.0 / omega_ref


def solve_forced(spec: OscillatorSpec, init=(0.0, 0.0), hbar: float = BE9.hbar,
                 t_eval=None) -> ClassicalTrajectory:
    """Integrate s'' = -w(t)^2 s - x0''(t) for s = u - x0, the frame co-moving with the drive.

    init = (s0, s0') relative to the drive; the default starts the ion at rest
    in the trap frame, so only the inertial force m x0'' acts.  Tolerances are
    applied in units of the zero-point spread and 1/w0.
    """
    w0 = spec.omega0
    Ls, Ts = _scales(spec.mu, w0, hbar)
    s0 = init[0] / Ls
    sd0 = init[1] * Ts / Ls

    def rhs(tau, y):
        t = tau * Ts
        w = spec.omega_fn(t) * Ts
        a = spec.drive_fn(t)[2] * Ts * Ts / Ls
        return [y[1], -w * w * y[0] - a]

    tau_end = spec.T / Ts
    sol = solve_ivp(rhs, (0.0, tau_end), [s0, sd0], method="DOP853", rtol=RTOL, atol=ATOL, dense_output=True)
    if not sol.success:
        raise IntegrationError(f"forced oscillator integration failed: {sol.message}")
    tt = np.linspace(0, spec.T, 201) if t_eval is None else np.asarray(t_eval)
    y = sol.sol(tt / Ts)
    x0, v0, _ = spec.drive_fn(tt)
    s, sd = y[0] * Ls, y[1] * Ls / Ts
    return ClassicalTrajectory(tt, s + x0, sd + v0, s, sd, sol, Ls, Ts)


def fundamental_solutions(omega, T: float) -> FundamentalSolutions:
    """X, Y of x'' = -w(t)^2 x with X(0)=0, X'(0)=1, Y(0)=1, Y'(0)=0."""
    wf = _as_omega(omega)
    Ts = 1.0 / float(wf(0.0))

    def rhs(tau, y):
        w = wf(tau * Ts) * Ts
        w2 = w * w
        return [y[1], -w2 * y[0], y[3], -w2 * y[2]]

    sol = solve_ivp(rhs, (0.0, T / Ts), [0.0, 1.0, 1.0, 0.0], method="DOP853", rtol=RTOL, atol=ATOL,
                    dense_output=True)
    if not sol.success:
        raise IntegrationError(f"fundamental-solution integration failed: {sol.message}")
    Xs, Xds, Y, Yds = sol.y[:, -1]
    return FundamentalSolutions(T, Xs * Ts, Xds, Y, Yds / Ts, sol, Ts)


def husimi_q(fs: FundamentalSolutions, omega0: float, omegaT: float) -> float:
    X, Xd, Y, Yd = fs.X, fs.Xd, fs.Y, fs.Yd
    return (omega0 ** 2 * (omegaT ** 2 * X ** 2 + Xd ** 2) + omegaT ** 2 * Y ** 2 + Yd ** 2) / (2 * omega0 * omegaT)


def scaled_matrix(M: np.ndarray, omega_in: float, omega_out: float) -> np.ndarray:
    """(s, s') map expressed in (Re alpha, Im alpha) coordinates; the mode mass cancels."""
    S_in = np.diag([np.sqrt(omega_in), 1 / np.sqrt(omega_in)])
    S_out = np.diag([np.sqrt(omega_out), 1 / np.sqrt(omega_out)])
    return S_out @ M @ np.linalg.inv(S_in)


def q_from_matrix(Ms: np.ndarray) -> float:
    """Husimi coefficient of a scaled symplectic map, half its squared Frobenius norm."""
    return 0.5 * float(np.sum(np.asarray(Ms) ** 2))


def mean_phonons(traj_or_state, Q: float, omegaT: float, mu: float, hbar: float = BE9.hbar) -> ModeExcitation:
    """Phonon bookkeeping: coherent part from the final co-moving state plus (Q - 1)/2.

    traj_or_state: ClassicalTrajectory (its final sample is used) or a tuple (s(T), s'(T)).
    """
    if isinstance(traj_or_state, ClassicalTrajectory):
        s, sd = traj_or_state.s[-1], traj_or_state.sd[-1]
    else:
        s, sd = traj_or_state
    return ModeExcitation(amplitude(s, sd, omegaT, mu, hbar), 0.5 * (Q - 1.0))


def excite(spec: OscillatorSpec, init=(0.0, 0.0), hbar: float = BE9.hbar) -> ModeExcitation:
    """Full excitation of one mode: classical part plus the parametric Q term."""
    tr = solve_forced(spec, init, hbar, t_eval=[0.0, spec.T])
    if callable(spec.omega):
        Q = husimi_q(fundamental_solutions(spec.omega_fn, spec.T), spec.omega0, spec.omegaT)
    else:
        Q = 1.0
    return mean_phonons(tr, Q, spec.omegaT, spec.mu, hbar)


def wait(state: ModeExcitation, omega: float, dt: float) -> ModeExcitation:
    """Free evolution: alpha -> alpha exp(-i w dt)."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    return ModeExcitation(state.alpha * np.exp(-1j * omega * dt), state.squeeze)


# --- generating-function oracle ----------------------------------------------

def generating_function(w, eta: float, Q: float):
    """P(0, w) = sum_n P_n0 w^n for a ground state subject to forcing (eta) and modulation (Q)."""
    w = np.asarray(w, complex)
    D = Q * (1 - w * w) + 1 + w * w
    return np.sqrt(2.0 / D) * np.exp(-2.0 * eta * (1 - w) / D)


def transition_probabilities_oracle(eta: float, Q: float, n_max: int = 200, radius: float = 1.0,
                                    n_fft: int | None = None) -> np.ndarray:
    """P_n0 for n = 0..n_max from Taylor coefficients of the generating function.

    Coefficients come from an FFT of P(0, r e^{i theta}).  On the unit circle
    the function is bounded by one, so no rounding amplification occurs; the
    aliasing error is the tail mass beyond n_fft.
    """
    if Q < 1 - 1e-12 or eta < 0:
        raise ValueError("need Q >= 1 and eta >= 0")
    if n_max > 500:
        raise ValueError("n_max must not exceed 500")
    N = n_fft or max(4096, 8 * (n_max + 1))
    theta = 2 * np.pi * np.arange(N) / N
    vals = generating_function(radius * np.exp(1j * theta), eta, Q)
    c = np.fft.fft(vals) / N
    n = np.arange(n_max + 1)
    P = (c[: n_max + 1] / radius ** n).real
    P = np.where((P < 0) & (P > -1e-12), 0.0, P)
    tail = 1.0 - P.sum()
    mean_target = eta + 0.5 * (Q - 1)
    if tail > 1e-8 or abs(np.dot(n, P) - mean_target) > 1e-6 * max(1.0, mean_target):
        raise ArithmeticError(f"series not converged at n_max={n_max} (missing mass {tail:.2e}); increase n_max")
    return P


def fourier_eta(accel: Callable, T: float, omega: float, mu: float, hbar: float = BE9.hbar) -> float:
    """Classical energy gain (quanta) of a constant-frequency mode driven by x0'' over [0, T]."""
    import warnings

    from scipy.integrate import IntegrationWarning, quad

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        re = quad(accel, 0, T, weight="cos", wvar=omega, limit=500, epsabs=0, epsrel=1e-12)[0]
        im = quad(accel, 0, T, weight="sin", wvar=omega, limit=500, epsabs=0, epsrel=1e-12)[0]
    return mu * (re * re + im * im) / (2 * hbar * omega)
