"""Two-ion swap by rotating the local Hessian of the trap about z.

The potential at the rotation centre r_c is constrained to a Hessian
R(theta) diag(D_a, D_r, D_z) R^T with vanishing gradient.  A boost of the
axial eigen-curvature around theta = pi/2 pulls the ions closer while their
axis is perpendicular to the trap axis.  Two extra rows cancel the net
in-plane force on the ion pair at its nominal positions; without them the
cubic terms of the field displace the crystal centre during the rotation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .oscillator_core import ATOL, RTOL, IntegrationError, ModeExcitation
from .profiles import TanhProfile
from .trap_model import BE9, TWO_PI, PhysicalConstants, TrapLayout, find_rf_null, pseudopotential, \
    pseudopotential_gradient
from .voltage_solver import (Constraint, InfeasibleError, IonLossError, RealResult, Waveform, check_budget,
                             solve_series, solve_voltages, spec_hash)

log = logging.getLogger(__name__)

GAP_THRESHOLD = 200e3  # Hz
MODE_NAMES = ("axial_ip", "axial_oop", "radial_ip", "radial_oop")


class InstabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class SwapSpec:
    T: float
    n_val: float = 3.0
    nu_axial: float = 1e6  # base axial eigen-frequency, Hz
    boost: float = 1.75  # peak relative increase of the axial eigen-curvature at theta = pi/2
    nu_radial: float = 4.2e6  # in-plane radial eigen-frequency, Hz
    balance: bool = True  # cancel the net force on the pair at its nominal positions
    constants: PhysicalConstants = BE9

    @property
    def profile(self) -> TanhProfile:
        return TanhProfile(np.pi, self.T, self.n_val)

    def theta(self, t):
        return self.profile.eval(t)[0]

    def eigen_curvatures(self, theta, H_psd: np.ndarray) -> tuple[float, float, float]:
        """(D_a, D_r, D_z) in V/m^2; the raised-cosine boost sin^2 is mirror symmetric about pi/2."""
        c = self.constants
        Da = float(c.curvature(self.nu_axial)) * (1 + self.boost * np.sin(theta) ** 2)
        Dr = float(c.curvature(self.nu_radial))
        Dz = float(np.trace(H_psd)) - Da - Dr  # static part is traceless
        return Da, Dr, Dz

    def as_dict(self):
        return {"T": self.T, "n_val": self.n_val, "nu_axial": self.nu_axial, "boost": self.boost,
                "nu_radial": self.nu_radial, "balance": self.balance}


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def pair_distance(curvature: float, c: PhysicalConstants = BE9) -> float:
    """Separation of two ions in a harmonic well of the given curvature (V/m^2)."""
    return float((c.q / (2 * np.pi * c.eps0 * curvature)) ** (1 / 3))


def rotation_constraints(theta: float, spec: SwapSpec, layout: TrapLayout, r_c=None) -> list[Constraint]:
    r_c = find_rf_null(layout) if r_c is None else np.asarray(r_c, float)
    H_psd = pseudopotential(layout, r_c).hessian
    Da, Dr, Dz = spec.eigen_curvatures(theta, H_psd)
    R = rotation(theta)
    Ht = R @ np.diag([Da, Dr, Dz]) @ R.T
    p = tuple(r_c)
    out = [Constraint(p, "grad_full", 0.0)]
    for q in ("xx", "yy", "xy", "xz", "yz"):
        i, j = "xyz".index(q[0]), "xyz".index(q[1])
        out.append(Constraint(p, "hess_" + q, float(Ht[i, j]), "total"))
    if spec.balance:
        d = pair_distance(Da, spec.constants)
        e = np.array([np.cos(theta), np.sin(theta), 0.0]) * d / 2
        pts = (tuple(r_c + e), tuple(r_c - e))
        out += [Constraint(pts, "grad_x", 0.0, "total"), Constraint(pts, "grad_y", 0.0, "total")]
    return out


def swap_waveform(spec: SwapSpec, n_points: int, layout: TrapLayout) -> Waveform:
    if n_points < 10:
        raise ValueError("n_points must be at least 10")
    check_budget(spec.T, n_points, layout)
    r_c = find_rf_null(layout)
    groups = list(layout.gate_groups or layout.dc_groups)
    ts = np.linspace(0.0, spec.T, n_points)
    V = []
    sols, lam = solve_series([rotation_constraints(float(spec.theta(t)), spec, layout, r_c) for t in ts], layout,
                             groups)
    for k, (t, sol) in enumerate(zip(ts, sols)):
        if not sol.feasible:
            raise InfeasibleError(f"step {k} (t = {t * 1e6:.3f} us): max |V| = {sol.max_abs:.2f} V on "
                                  f"{sol.worst_group}")
        V.append(sol.voltages)
    return Waveform(ts, np.array(V), groups, 3, {"kind": "swap", "spec_hash": spec_hash(spec.as_dict()),
                                                 "tikhonov": lam})


# --- in-plane two-ion mechanics ----------------------------------------------

class PlaneModel:
    """Two ions moving in the x-y plane at the height of the RF null."""

    def __init__(self, layout: TrapLayout, groups, z: float):
        self.layout = layout
        self.groups = list(groups)
        self.z = z
        c = layout.constants
        self.qm = c.q / c.m
        self.kc = c.k_coulomb * c.q / c.m

    def accel(self, P: np.ndarray, v: np.ndarray, coulomb: bool = True) -> np.ndarray:
        """(2, 2) accelerations of ions at in-plane positions P for voltages v."""
        r = np.column_stack([P, np.full(len(P), self.z)])
        g = np.einsum("pgi,g->pi", self.layout.basis(r, 1, self.groups), v)
        g = g + pseudopotential_gradient(self.layout, r)
        a = -self.qm * g[:, :2]
        if coulomb:
            dv = P[0] - P[1]
            fc = self.kc * dv / np.linalg.norm(dv) ** 3
            a[0] += fc
            a[1] -= fc
        return a

    def hessian(self, x: np.ndarray, v: np.ndarray, coulomb: bool = True, h: float = 1e-9) -> np.ndarray:
        """Dynamical matrix (1/s^2) of the flattened coordinates (x1, y1, x2, y2)."""
        H = np.zeros((4, 4))
        for i in range(4):
            e = np.zeros(4)
            e[i] = h
            H[:, i] = -(self.accel((x + e).reshape(2, 2), v, coulomb)
                        - self.accel((x - e).reshape(2, 2), v, coulomb)).ravel() / (2 * h)
        return 0.5 * (H + H.T)

    def equilibrium(self, v, seed, tol: float = 1e-12, max_iter: int = 200, theta=None) -> np.ndarray:
        """Damped Newton on the 4D force; steps capped at 0.1 um."""
        x = np.asarray(seed, float).ravel().copy()
        for _ in range(max_iter):
            F = self.accel(x.reshape(2, 2), v).ravel()
            w, U = np.linalg.eigh(self.hessian(x, v))
            dx = U @ ((U.T @ F) / np.maximum(np.abs(w), 1e-3 * np.abs(w).max()))
            step = np.abs(dx).max()
            if step > 1e-7:
                dx *= 1e-7 / step
            x = x + dx
            if step < tol:
                if np.any(np.linalg.eigvalsh(self.hessian(x, v)) <= 0):
                    raise InstabilityError(f"equilibrium at theta={theta} is a saddle")
                return x.reshape(2, 2)
        raise InstabilityError(f"equilibrium search diverged at theta={theta}")


@dataclass
class ModeSpectrum:
    frequencies: dict[str, float]  # Hz
    vectors: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    @property
    def gap(self) -> float:
        """Lowest radial minus highest axial frequency."""
        f = self.frequencies
        return min(f["radial_ip"], f["radial_oop"]) - max(f["axial_ip"], f["axial_oop"])


def classify_modes(P: np.ndarray, w2: np.ndarray, U: np.ndarray) -> tuple[dict, dict]:
    """Label eigenvectors by their projection on the ion-ion axis and the relative phase."""
    ax = P[0] - P[1]
    ax = ax / np.linalg.norm(ax)
    if ax[0] < 0 or (ax[0] == 0 and ax[1] < 0):
        ax = -ax
    perp = np.array([-ax[1], ax[0]])
    right = int(np.argmax(P @ ax))  # positional signs: the ion further along ax is "right"
    freqs, vecs = {}, {}
    for k in range(4):
        e = U[:, k].reshape(2, 2)
        along = abs(e[0] @ ax) + abs(e[1] @ ax)
        kind = "axial" if along > np.sqrt(0.5) else "radial"
        phase = "ip" if e[0] @ e[1] > 0 else "oop"
        name = f"{kind}_{phase}"
        if name in freqs:  # fall back to frequency order on ambiguous labels
            order = np.argsort(w2)
            return ({n: float(np.sqrt(max(w2[i], 0)) / TWO_PI) for n, i in zip(MODE_NAMES, order)},
                    {n: U[:, i] for n, i in zip(MODE_NAMES, order)})
        if w2[k] <= 0:
            raise InstabilityError("negative eigenvalue in the mode spectrum")
        freqs[name] = float(np.sqrt(w2[k]) / TWO_PI)
        d = ax if kind == "axial" else perp
        ref = e[0] @ d + e[1] @ d if phase == "ip" else e[right] @ d
        vecs[name] = U[:, k] if ref >= 0 else -U[:, k]
    return freqs, vecs


def mode_spectrum(P, model: PlaneModel, v, coulomb: bool = True) -> ModeSpectrum:
    w2, U = np.linalg.eigh(model.hessian(np.asarray(P).ravel(), v, coulomb))
    if np.any(w2 <= 0):
        raise InstabilityError("negative eigenvalue in the mode spectrum")
    f, vec = classify_modes(np.asarray(P), w2, U)
    return ModeSpectrum(f, vec)


def equilibrium_positions(layout: TrapLayout, v, seed=None, spec: SwapSpec | None = None, groups=None,
                          theta=None) -> np.ndarray:
    r_c = find_rf_null(layout)
    model = PlaneModel(layout, groups or list(layout.gate_groups or layout.dc_groups), r_c[2])
    if seed is None:
        d = pair_distance(layout.constants.curvature((spec or SwapSpec(1.0)).nu_axial), layout.constants)
        seed = np.array([[r_c[0] + d / 2, r_c[1]], [r_c[0] - d / 2, r_c[1]]])
    return model.equilibrium(v, seed, theta=theta)


@dataclass
class SwapResult(RealResult):
    spectrum: list[dict] = field(default_factory=list)
    min_gap: float = float("nan")  # Hz

    @property
    def n_com(self):
        return self.modes["axial_ip"].n_bar

    @property
    def n_str(self):
        return self.modes["axial_oop"].n_bar

    @property
    def n_radial(self):
        return max(self.modes["radial_ip"].n_bar, self.modes["radial_oop"].n_bar)


def track(w: Waveform, layout: TrapLayout, spec: SwapSpec | None = None):
    """Equilibria and mode spectra at every calculation point (warm-started)."""
    r_c = find_rf_null(layout)
    model = PlaneModel(layout, w.groups, r_c[2])
    P = None
    rows, states = [], []
    for t, v in zip(w.times, w.voltages):
        th = float(spec.theta(t)) if spec else None
        P = equilibrium_positions(layout, v, P, spec, w.groups, th)
        ms = mode_spectrum(P, model, v)
        rows.append({"t_us": t * 1e6, **{f"f_{k}_MHz": ms.frequencies[k] / 1e6 for k in MODE_NAMES},
                     "gap_MHz": ms.gap / 1e6})
        states.append((P.copy(), ms))
    return rows, states


def simulate_swap_waveform(w: Waveform, layout: TrapLayout, spec: SwapSpec | None = None,
                           init: dict | None = None, monitor: bool = True) -> SwapResult:
    c = layout.constants
    r_c = find_rf_null(layout)
    model = PlaneModel(layout, w.groups, r_c[2])
    rows, states = track(w, layout, spec) if monitor else ([], [])
    P0 = states[0][0] if states else equilibrium_positions(layout, w.voltages[0], None, spec, w.groups)
    Pf = states[-1][0] if states else equilibrium_positions(layout, w.voltages[-1], P0[::-1], spec, w.groups)
    gap = min(r["gap_MHz"] for r in rows) * 1e6 if rows else float("nan")
    if rows and gap < GAP_THRESHOLD:
        log.warning("axial-radial gap %.0f kHz below the %.0f kHz threshold", gap / 1e3, GAP_THRESHOLD / 1e3)
    sp = w.spline()
    Ls, Ts = 1e-6, 1e-6
    y0 = np.concatenate([P0.ravel() / Ls, np.zeros(4)])
    if init:
        w2, U = np.linalg.eigh(model.hessian(P0.ravel(), w.voltages[0]))
        _, vecs = classify_modes(P0, w2, U)
        for name, ex in init.items():
            if name not in vecs:
                continue
            k = int(np.argmax([abs(U[:, i] @ vecs[name]) for i in range(4)]))
            wk = np.sqrt(w2[k])
            kk = np.sqrt(wk / (2 * c.hbar))
            qk, pk = ex.alpha.real / kk, ex.alpha.imag * wk / kk
            y0[:4] += vecs[name] * qk / np.sqrt(c.m) / Ls
            y0[4:] += vecs[name] * pk / np.sqrt(c.m) * Ts / Ls
    bound = 200e-6
    t0, T = w.times[0], w.T

    def rhs(tau, y):
        t = min(t0 + tau * Ts, t0 + T)
        a = model.accel(y[:4].reshape(2, 2) * Ls, sp(t)).ravel() * Ts * Ts / Ls
        return np.concatenate([y[4:], a])

    def escaped(tau, y):
        return bound - np.abs(y[:4] * Ls - np.tile(r_c[:2], 2)).max()
    escaped.terminal = True

    sol = solve_ivp(rhs, (0.0, T / Ts), y0, method="DOP853", rtol=RTOL, atol=ATOL, events=escaped)
    if sol.status == 1:
        raise IonLossError("ion left the rotation zone")
    if not sol.success:
        raise IntegrationError(sol.message)
    y = sol.y[:, -1]
    dx = y[:4] * Ls - Pf.ravel()
    dv = y[4:] * Ls / Ts
    w2, U = np.linalg.eigh(model.hessian(Pf.ravel(), w.voltages[-1]))
    freqs, vecs = classify_modes(Pf, w2, U)
    modes = {}
    for name, e in vecs.items():
        wk = TWO_PI * freqs[name]
        qk = np.sqrt(c.m) * e @ dx
        pk = np.sqrt(c.m) * e @ dv
        modes[name] = ModeExcitation(complex(np.sqrt(wk / (2 * c.hbar)) * (qk + 1j * pk / wk)))
    return SwapResult(modes, freqs, Pf, rows, gap)


def calculation_points(T: float, per_us: float = 2.5) -> int:
    """Default calculation-point count, 2.5 per microsecond (45 at 18 us, 50 at 20 us)."""
    return int(round(T * 1e6 * per_us))


def simulate_swap(spec: SwapSpec, layout: TrapLayout, n_points: int | None = None, init: dict | None = None,
                  monitor: bool = True) -> SwapResult:
    n_points = calculation_points(spec.T) if n_points is None else n_points
    w = swap_waveform(spec, n_points, layout)
    return simulate_swap_waveform(w, layout, spec, init, monitor)
