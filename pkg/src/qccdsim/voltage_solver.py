"""Electrode voltages from linear field constraints, waveforms and real-potential dynamics."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .merge_split import MergeSpec, coulomb_field
from .oscillator_core import ATOL, RTOL, IntegrationError, ModeExcitation
from .trap_model import TWO_PI, TrapLayout, find_rf_null, pseudopotential, pseudopotential_gradient

log = logging.getLogger(__name__)

TIKHONOV = 1e-8
LAM_FLOOR = 1e-14
RESIDUAL_FLAG = 1e-3


class InfeasibleError(RuntimeError):
    """A voltage solve exceeded the hardware limit or missed its targets."""


class IonLossError(RuntimeError):
    pass


_AX = {"x": 0, "y": 1, "z": 2}


def _quantity_rows(quantity: str, G: np.ndarray, H: np.ndarray) -> list[np.ndarray]:
    """Rows of a quantity given per-group gradients G (n, 3) and Hessians H (n, 3, 3)."""
    if quantity == "grad_full":
        return [G[..., 0], G[..., 1], G[..., 2]]
    if quantity.startswith("E_"):
        return [-G[..., _AX[quantity[2]]]]
    if quantity.startswith("grad_"):
        return [G[..., _AX[quantity[5]]]]
    if quantity.startswith("dEx_d"):
        return [-H[..., 0, _AX[quantity[5]]]]
    if quantity.startswith("curv_"):
        i = _AX[quantity[5]]
        return [H[..., i, i]]
    if quantity.startswith("hess_"):
        return [H[..., _AX[quantity[5]], _AX[quantity[6]]]]
    raise ValueError(f"unknown constraint quantity {quantity!r}")


@dataclass(frozen=True)
class Constraint:
    """Linear condition on the static (or static + pseudo) potential at a point.

    quantity: E_y, E_z, grad_x/y/z, dEx_dy, dEx_dz, curv_xx/yy/zz, hess_ij or
    grad_full (three rows, target per component).
    """

    point: tuple[float, float, float]
    quantity: str
    target: float | tuple = 0.0
    potential: str = "static"  # or "total": the pseudopotential part moves to the right-hand side

    def rows(self, layout: TrapLayout, groups=None):
        """Rows and targets; a (k, 3) point array constrains the sum over the k points."""
        r = np.asarray(self.point, float)
        pts = r.reshape(-1, 3)
        G = layout.basis(pts, 1, groups).sum(0)
        H = layout.basis(pts, 2, groups).sum(0)
        rows = _quantity_rows(self.quantity, G, H)
        tgt = np.broadcast_to(np.asarray(self.target, float), (len(rows),)).copy()
        if self.potential == "total":
            ps = pseudopotential(layout, pts)
            tgt -= np.ravel(_quantity_rows(self.quantity, ps.gradient.sum(0)[None], ps.hessian.sum(0)[None]))
        elif self.potential != "static":
            raise ValueError("potential must be 'static' or 'total'")
        return rows, tgt


def assemble(constraints: Sequence[Constraint], layout: TrapLayout, groups=None):
    A, b = [], []
    for c in constraints:
        rows, tgt = c.rows(layout, groups)
        A += rows
        b += list(tgt)
    return np.array(A), np.array(b)


@dataclass
class VoltageSolution:
    groups: list[str]
    voltages: np.ndarray
    residual: float  # relative, on the row-scaled system
    max_abs: float
    feasible: bool
    flagged: bool  # residual above RESIDUAL_FLAG

    def as_map(self) -> dict[str, float]:
        out = dict(zip(self.groups, map(float, self.voltages)))
        return out

    @property
    def worst_group(self) -> str:
        return self.groups[int(np.argmax(np.abs(self.voltages)))]


def tikhonov_solve(A: np.ndarray, b: np.ndarray, lam: float = TIKHONOV):
    """Minimum-norm regularized least squares on unit-norm rows.

    Filter factors s/(s^2 + lam s_max^2); returns (x, relative residual).
    """
    s = np.linalg.norm(A, axis=1)
    s[s == 0] = 1.0
    A2, b2 = A / s[:, None], b / s
    U, S, Vt = np.linalg.svd(A2, full_matrices=False)
    if S.size == 0 or S[0] == 0:
        return np.zeros(A.shape[1]), 0.0
    f = S / (S * S + lam * S[0] ** 2)
    x = Vt.T @ (f * (U.T @ b2))
    bn = np.linalg.norm(b2)
    res = np.linalg.norm(A2 @ x - b2) / bn if bn > 0 else 0.0
    return x, float(res)


def solve_voltages(constraints: Sequence[Constraint], layout: TrapLayout, groups=None,
                   lam: float = TIKHONOV, adaptive: bool = True) -> VoltageSolution:
    groups = list(layout.gate_groups or layout.dc_groups) if groups is None else list(groups)
    A, b = assemble(constraints, layout, groups)
    x, res = tikhonov_solve(A, b, lam)
    # relax the regularization while it costs more than the residual flag allows
    while adaptive and res > RESIDUAL_FLAG and lam > 1.5 * LAM_FLOOR:
        lam *= 1e-2
        x, res = tikhonov_solve(A, b, lam)
    mx = float(np.abs(x).max()) if x.size else 0.0
    flagged = res > RESIDUAL_FLAG
    if flagged:
        log.info("constraint residual %.2e above %.0e", res, RESIDUAL_FLAG)
    return VoltageSolution(groups, x, res, mx, mx <= layout.voltage_limit, flagged)


def solve_series(constraint_sets: Sequence[Sequence[Constraint]], layout: TrapLayout, groups=None,
                 lam: float = TIKHONOV) -> tuple[list[VoltageSolution], float]:
    """Solve a time series with one regularization strength for every step.

    A per-step choice would switch solution branches between neighbouring
    calculation points and make the interpolated waveform jump, so lam is
    lowered for the whole series until every residual is below the flag.
    """
    systems = [assemble(cs, layout, groups) for cs in constraint_sets]
    groups = list(layout.gate_groups or layout.dc_groups) if groups is None else list(groups)
    while True:
        sols = []
        for A, b in systems:
            x, res = tikhonov_solve(A, b, lam)
            mx = float(np.abs(x).max()) if x.size else 0.0
            sols.append(VoltageSolution(groups, x, res, mx, mx <= layout.voltage_limit, res > RESIDUAL_FLAG))
        if not any(s.flagged for s in sols) or lam <= 1.5 * LAM_FLOOR:
            break
        lam *= 1e-2
    if any(s.flagged for s in sols):
        log.info("series residual %.2e above %.0e at the regularization floor", max(s.residual for s in sols),
                 RESIDUAL_FLAG)
    return sols, lam


# --- merge/split constraints -------------------------------------------------

def merge_constraints(layout: TrapLayout, d: float, nu_com: float, r0=None) -> list[Constraint]:
    """Two-point set: ions at r0 -/+ d/2 x, radial field and axial-radial coupling cancelled,
    axial force balancing the Coulomb push, local curvature giving nu_com."""
    c = layout.constants
    r0 = find_rf_null(layout) if r0 is None else np.asarray(r0)
    ec = float(coulomb_field(d, c))
    k = float(c.curvature(nu_com))
    out = []
    for sgn in (-1, 1):
        p = tuple(r0 + np.array([sgn * d / 2, 0.0, 0.0]))
        out += [Constraint(p, "E_y"), Constraint(p, "E_z"), Constraint(p, "dEx_dy"), Constraint(p, "dEx_dz"),
                Constraint(p, "grad_x", sgn * ec), Constraint(p, "curv_xx", k)]
    return out


def single_well_constraints(layout: TrapLayout, nu: float, r0=None) -> list[Constraint]:
    c = layout.constants
    r0 = find_rf_null(layout) if r0 is None else np.asarray(r0)
    p = tuple(r0)
    return [Constraint(p, "grad_full", 0.0), Constraint(p, "dEx_dy"), Constraint(p, "dEx_dz"),
            Constraint(p, "curv_xx", float(c.curvature(nu)))]


def max_voltage_map(layout: TrapLayout, d_grid, nu_grid) -> list[dict]:
    """max |V| of the two-well constraint set over a (d, nu) grid."""
    r0 = find_rf_null(layout)
    rows = []
    for d in d_grid:
        for nu in nu_grid:
            sol = solve_voltages(merge_constraints(layout, float(d), float(nu), r0), layout)
            rows.append({"d_um": d * 1e6, "nu_kHz": nu / 1e3, "max_V": sol.max_abs, "feasible": sol.feasible})
    return rows


# --- waveforms ---------------------------------------------------------------

@dataclass
class Waveform:
    times: np.ndarray  # s, uniform
    voltages: np.ndarray  # (n_points, n_groups)
    groups: list[str]
    order: int = 3
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        self.voltages = np.asarray(self.voltages, float)
        if self.voltages.shape != (len(self.times), len(self.groups)):
            raise ValueError("voltage array shape does not match times x groups")
        self._spline = None

    @property
    def T(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def n_points(self) -> int:
        return len(self.times)

    @property
    def max_abs(self) -> float:
        return float(np.abs(self.voltages).max())

    def spline(self):
        if self._spline is None:
            if self.order != 3:
                raise ValueError("only third-order interpolation is supported")
            self._spline = CubicSpline(self.times, self.voltages, axis=0)
        return self._spline

    def at(self, t) -> np.ndarray:
        t = np.asarray(t, float)
        if np.any(t < self.times[0] - 1e-15) or np.any(t > self.times[-1] + 1e-15):
            raise ValueError("t outside the waveform span")
        return self.spline()(np.clip(t, self.times[0], self.times[-1]))

    def reversed(self) -> "Waveform":
        return Waveform(self.times[-1] + self.times[0] - self.times[::-1], self.voltages[::-1].copy(),
                        list(self.groups), self.order, dict(self.meta))

    # file format: CSV (t_us, groups...) plus JSON sidecar
    def save(self, path) -> tuple[Path, Path]:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_us"] + list(self.groups))
            for t, row in zip(self.times, self.voltages):
                w.writerow([repr(float(t * 1e6))] + [repr(float(v)) for v in row])
        side = path.with_suffix(".json")
        meta = {"T_us": self.T * 1e6, "n_points": self.n_points, "interpolation_order": self.order,
                "units": {"t": "us", "voltage": "V"}, **self.meta, "times_s": [float(t) for t in self.times]}
        side.write_text(json.dumps(meta, indent=2, sort_keys=True))
        return path, side

    @classmethod
    def load(cls, path) -> "Waveform":
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        groups = rows[0][1:]
        data = np.array([[float(x) for x in r] for r in rows[1:]])
        meta = {}
        side = path.with_suffix(".json")
        if side.exists():
            meta = json.loads(side.read_text())
        order = int(meta.pop("interpolation_order", 3))
        times = data[:, 0] * 1e-6
        exact = meta.pop("times_s", None)
        if exact is not None:
            exact = np.array(exact, float)
            if exact.shape != times.shape or not np.allclose(exact, times, rtol=0, atol=1e-15):
                raise ValueError(f"{side}: times_s disagrees with the CSV time column")
            times = exact  # the microsecond column is rounded by the unit conversion
        for k in ("T_us", "n_points", "units"):
            meta.pop(k, None)
        return cls(times, data[:, 1:], groups, order, meta)


def interpolate(w: Waveform, t) -> dict[str, float]:
    return dict(zip(w.groups, map(float, w.at(float(t)))))


def check_budget(T: float, n_points: int, layout: TrapLayout):
    budget = int(np.floor(T * layout.sample_rate + 1e-9))
    if n_points > budget:
        raise ValueError(f"{n_points} calculation points exceed the T*f_s budget of {budget}")


def spec_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _merge_spec_dict(spec: MergeSpec) -> dict:
    keys = ("T", "d_in", "d_crit", "d_final", "nu_in", "nu_crit", "nu_final", "n_val", "direction", "symmetry",
            "width")
    return {k: getattr(spec, k) for k in keys}


def merge_waveform(spec: MergeSpec, n_points: int, layout: TrapLayout, check_equilibrium: bool = True,
                   tol: float = 0.5e-6) -> Waveform:
    """Voltages at n_points uniform calculation points along a merge or split."""
    if n_points < 10:
        raise ValueError("n_points must be at least 10")
    check_budget(spec.T, n_points, layout)
    r0 = find_rf_null(layout)
    ts = np.linspace(0.0, spec.T, n_points)
    d = np.asarray(spec.separation(ts)[0])
    nu = np.asarray(spec.nu_com(ts))
    V = []
    groups = list(layout.gate_groups or layout.dc_groups)
    xi = None
    sols, lam = solve_series([merge_constraints(layout, float(dk), float(nk), r0) for dk, nk in zip(d, nu)],
                             layout, groups)
    for k, (t, dk, sol) in enumerate(zip(ts, d, sols)):
        if not sol.feasible:
            raise InfeasibleError(f"step {k} (t = {t * 1e6:.3f} us): max |V| = {sol.max_abs:.2f} V on "
                                  f"{sol.worst_group}, residual {sol.residual:.2e}")
        V.append(sol.voltages)
        if check_equilibrium:
            xi = axial_equilibrium(layout, groups, sol.voltages, r0,
                                   np.array([-dk / 2, dk / 2]) if xi is None else xi)
            dev = np.abs(xi - np.array([-dk / 2, dk / 2])).max()
            if dev > tol:
                raise InfeasibleError(f"step {k}: equilibrium deviates {dev * 1e6:.3f} um from the target")
    meta = {"kind": spec.direction, "spec_hash": spec_hash(_merge_spec_dict(spec)), "tikhonov": lam}
    return Waveform(ts, np.array(V), groups, 3, meta)


# --- real-potential dynamics -------------------------------------------------

def _axial_force(layout, groups, v, r0, x):
    """Axial acceleration of ions at r0 + x e_x in the static + pseudo potential, with Coulomb."""
    c = layout.constants
    P = np.column_stack([x, np.full(len(x), r0[1]), np.full(len(x), r0[2])])
    g = np.einsum("pgi,g->pi", layout.basis(P, 1, groups), v)[:, 0]
    g = g + pseudopotential_gradient(layout, P)[:, 0]
    a = -(c.q / c.m) * g
    dx = x[1] - x[0]
    fc = c.k_coulomb * c.q / c.m / (dx * abs(dx))
    a[0] -= fc
    a[1] += fc
    return a


def _axial_hessian(layout, groups, v, r0, x, h=1e-9):
    H = np.zeros((2, 2))
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        H[:, i] = -(_axial_force(layout, groups, v, r0, x + e) - _axial_force(layout, groups, v, r0, x - e)) / (2 * h)
    return 0.5 * (H + H.T)  # (q/m) d2U, units 1/s^2


def axial_equilibrium(layout, groups, v, r0, x0, tol=1e-12, max_iter=100):
    """Two-ion Newton iteration along the trap axis."""
    x = np.array(x0, float)
    for _ in range(max_iter):
        F = _axial_force(layout, groups, v, r0, x)
        H = _axial_hessian(layout, groups, v, r0, x)
        dx = np.linalg.solve(H, F)
        step = np.abs(dx).max()
        if step > 1e-6:
            dx *= 1e-6 / step
        x = x + dx
        if step < tol:
            return x
    raise InfeasibleError("axial equilibrium did not converge")


def _project_modes(dx, dv, w2, U, m, hbar):
    """Mass-weighted normal-mode amplitudes alpha_k = sqrt(w/2hbar)(q + i q'/w)."""
    out = []
    for k in range(len(w2)):
        if w2[k] <= 0:
            raise InfeasibleError("unstable final configuration")
        w = np.sqrt(w2[k])
        qk = np.sqrt(m) * U[:, k] @ dx
        pk = np.sqrt(m) * U[:, k] @ dv
        out.append((np.sqrt(w / (2 * hbar)) * (qk + 1j * pk / w), w))
    return out


@dataclass
class RealResult:
    modes: dict[str, ModeExcitation]
    frequencies: dict[str, float]  # Hz
    positions: np.ndarray

    def n_bar(self, mode: str) -> float:
        return self.modes[mode].n_bar


def simulate_real(w: Waveform, layout: TrapLayout, kind: str = "merge", init: dict | None = None,
                  swap_spec=None) -> RealResult:
    """Ion dynamics in the interpolated potential; projection on the final normal modes.

    merge/split integrate the two axial coordinates on the RF null; swap
    delegates to the in-plane four-coordinate model of the swap module.
    """
    if kind == "swap":
        from .swap import simulate_swap_waveform
        return simulate_swap_waveform(w, layout, swap_spec, init)
    if kind not in ("merge", "split"):
        raise ValueError(f"unknown operation kind {kind!r}")
    c = layout.constants
    groups = w.groups
    r0 = find_rf_null(layout)
    sp = w.spline()
    T = w.T
    t0 = w.times[0]
    d0 = w.meta.get("d0")
    V0, V1 = w.voltages[0], w.voltages[-1]
    guess = _initial_guess(layout, groups, V0, r0, d0)
    x0 = axial_equilibrium(layout, groups, V0, r0, guess)
    xf = axial_equilibrium(layout, groups, V1, r0, _initial_guess(layout, groups, V1, r0, w.meta.get("d1")))
    Ls, Ts = 1e-6, 1e-6
    bound = float(np.max(np.abs(layout.resting_positions)))
    y0 = np.concatenate([x0 / Ls, np.zeros(2)])
    if init:
        y0 = _apply_init(y0, init, layout, groups, V0, r0, x0, Ls, Ts)

    def rhs(tau, y):
        t = min(t0 + tau * Ts, t0 + T)
        x = y[:2] * Ls
        a = _axial_force(layout, groups, sp(t), r0, x) * Ts * Ts / Ls
        return [y[2], y[3], a[0], a[1]]

    def escaped(tau, y):
        return bound - np.abs(y[:2] * Ls).max()
    escaped.terminal = True

    sol = solve_ivp(rhs, (0.0, T / Ts), y0, method="DOP853", rtol=RTOL, atol=ATOL, events=escaped)
    if sol.status == 1:
        raise IonLossError("ion left the trapping region")
    if not sol.success:
        raise IntegrationError(sol.message)
    y = sol.y[:, -1]
    dx = y[:2] * Ls - xf
    dv = y[2:] * Ls / Ts
    w2, U = np.linalg.eigh(_axial_hessian(layout, groups, V1, r0, xf))
    modes, freqs = {}, {}
    for (alpha, wk), k in zip(_project_modes(dx, dv, w2, U, c.m, c.hbar), range(2)):
        name = "com" if U[0, k] * U[1, k] > 0 else "str"
        modes[name] = ModeExcitation(complex(alpha))
        freqs[name] = wk / TWO_PI
    return RealResult(modes, freqs, xf)


def _initial_guess(layout, groups, V, r0, d):
    if d is None:
        # curvature at the centre sets the single-well spacing
        c = layout.constants
        k = float(layout.basis(np.asarray(r0), 2, groups)[:, 0, 0] @ V)
        d = (c.q / (2 * np.pi * c.eps0 * max(k, 1e-3))) ** (1 / 3)
    return np.array([-d / 2, d / 2]) + r0[0]


def _apply_init(y0, init, layout, groups, V0, r0, x0, Ls, Ts):
    c = layout.constants
    w2, U = np.linalg.eigh(_axial_hessian(layout, groups, V0, r0, x0))
    y = y0.copy()
    for k in range(2):
        name = "com" if U[0, k] * U[1, k] > 0 else "str"
        ex = init.get(name)
        if ex is None:
            continue
        wk = np.sqrt(w2[k])
        kk = np.sqrt(wk / (2 * c.hbar))
        qk, pk = ex.alpha.real / kk, ex.alpha.imag * wk / kk
        y[:2] += U[:, k] * qk / np.sqrt(c.m) / Ls
        y[2:] += U[:, k] * pk / np.sqrt(c.m) * Ts / Ls
    return y


def merge_real(spec: MergeSpec, n_points: int, layout: TrapLayout) -> RealResult:
    """Waveform synthesis plus real-potential dynamics for a merge or split."""
    w = merge_waveform(spec, n_points, layout, check_equilibrium=False)
    d = spec.separation(np.array([0.0, spec.T]))[0]
    w.meta.update({"d0": float(d[0]), "d1": float(d[1])})
    return simulate_real(w, layout, spec.direction)
