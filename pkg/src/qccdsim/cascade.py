"""Algebraic composition of motional excitation across primitive operations.

Every mode is a complex amplitude alpha plus a 2x2 covariance of the
(Re alpha, Im alpha) fluctuations (vacuum: I/4).  A primitive maps

    alpha -> Theta alpha + alpha_inhom,   C -> Theta C Theta^T,

with Theta the fundamental matrix in scaled phase-space coordinates, so the
mean phonon number n = |alpha|^2 + tr C - 1/2 carries both the coherent
interference between operations and the parametric (Q) share.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import make_interp_spline

from .merge_split import MergeSpec, simulate_idealized
from .oscillator_core import (ModeExcitation, OscillatorSpec, amplitude, fundamental_solutions, scaled_matrix,
                              solve_forced)
from .profiles import TanhProfile
from .trap_model import BE9, TWO_PI, PhysicalConstants

log = logging.getLogger(__name__)

VACUUM = np.eye(2) / 4
DET_TOL = 1e-8


class ContractError(ValueError):
    pass


def rotation_matrix(phi: float) -> np.ndarray:
    """Free evolution by phi = w t in (Re alpha, Im alpha): alpha -> alpha exp(-i phi)."""
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, s], [-s, c]])


def _vec(a: complex) -> np.ndarray:
    return np.array([a.real, a.imag])


def _cplx(v) -> complex:
    return complex(v[0], v[1])


@dataclass(frozen=True)
class ModeState:
    alpha: complex = 0j
    cov: np.ndarray = field(default_factory=lambda: VACUUM.copy())
    omega: float = 0.0  # rad/s

    @property
    def n_bar(self) -> float:
        return abs(self.alpha) ** 2 + float(np.trace(self.cov)) - 0.5

    @property
    def n_coherent(self) -> float:
        return abs(self.alpha) ** 2

    @property
    def phase(self) -> float:
        return float(np.angle(self.alpha)) if self.alpha != 0 else 0.0

    @property
    def excitation(self) -> ModeExcitation:
        return ModeExcitation(self.alpha, float(np.trace(self.cov)) - 0.5)

    def evolve(self, theta: np.ndarray, inhom: complex, omega_out: float) -> "ModeState":
        a = theta @ _vec(self.alpha) + _vec(inhom)
        return ModeState(_cplx(a), theta @ self.cov @ theta.T, omega_out)

    def wait(self, dt: float) -> "ModeState":
        if dt < 0:
            raise ValueError("dt must be non-negative")
        R = rotation_matrix(self.omega * dt)
        return ModeState(self.alpha * np.exp(-1j * self.omega * dt), R @ self.cov @ R.T, self.omega)


def crystal_key(left, right, mode: str) -> str:
    return f"{left}+{right}:{mode}"


@dataclass(frozen=True)
class CascadeState:
    """Mode states keyed by ion label (single ions) or 'left+right:com|str' (crystals).

    cross holds the 2x2 covariance blocks <v_a v_b^T> between modes a and b
    (key (a, b) with a < b); absent blocks are zero.
    """

    modes: dict = field(default_factory=dict)
    elapsed: float = 0.0
    cross: dict = field(default_factory=dict)

    @classmethod
    def ground(cls, labels, omega: float) -> "CascadeState":
        return cls({str(k): ModeState(0j, VACUUM.copy(), omega) for k in labels}, 0.0)

    def n_bar(self, key: str) -> float:
        return self.modes[key].n_bar

    def ion_n_bar(self, label) -> float:
        """Single-ion n; an ion bound in a crystal reports the crystal total n_com + n_str."""
        label = str(label)
        if label in self.modes:
            return self.modes[label].n_bar
        tot = [m.n_bar for k, m in self.modes.items() if ":" in k and label in k.split(":")[0].split("+")]
        if not tot:
            raise KeyError(label)
        return float(sum(tot))

    def cross_block(self, a: str, b: str) -> np.ndarray:
        if a == b:
            return self.modes[a].cov
        if a < b:
            X = self.cross.get((a, b))
            return np.zeros((2, 2)) if X is None else X
        X = self.cross.get((b, a))
        return np.zeros((2, 2)) if X is None else X.T

    def with_modes(self, modes: dict, dt: float = 0.0, maps: dict | None = None) -> "CascadeState":
        """New mode states; maps {key: 2x2} are the linear maps applied to each mode (identity if absent)."""
        if not maps or not self.cross:
            return CascadeState(modes, self.elapsed + dt, dict(self.cross))
        cross = {}
        for (a, b), X in self.cross.items():
            La, Lb = maps.get(a), maps.get(b)
            if La is not None:
                X = La @ X
            if Lb is not None:
                X = X @ Lb.T
            cross[(a, b)] = X
        return CascadeState(modes, self.elapsed + dt, cross)

    def renamed(self, names: dict) -> "CascadeState":
        """Relabel modes {old: new}; cross blocks follow."""
        modes = {names.get(k, k): m for k, m in self.modes.items()}
        cross = {}
        for (a, b), X in self.cross.items():
            a2, b2 = names.get(a, a), names.get(b, b)
            cross[(a2, b2) if a2 < b2 else (b2, a2)] = X if a2 < b2 else X.T
        return CascadeState(modes, self.elapsed, cross)

    def joint_covariance(self, keys) -> np.ndarray:
        k = len(keys)
        C = np.zeros((2 * k, 2 * k))
        for i, a in enumerate(keys):
            for j, b in enumerate(keys):
                C[2 * i:2 * i + 2, 2 * j:2 * j + 2] = self.cross_block(a, b)
        return C

    def transform(self, in_keys, out_keys, B: np.ndarray, out_omegas) -> "CascadeState":
        """Linear phase-space map of the stacked in_keys amplitudes onto out_keys."""
        a = B @ np.concatenate([_vec(self.modes[k].alpha) for k in in_keys])
        C = B @ self.joint_covariance(in_keys) @ B.T
        modes = {k: m for k, m in self.modes.items() if k not in in_keys}
        others = list(modes)
        for i, (k, w) in enumerate(zip(out_keys, out_omegas)):
            modes[k] = ModeState(_cplx(a[2 * i:2 * i + 2]), C[2 * i:2 * i + 2, 2 * i:2 * i + 2], w)
        cross = {}
        for (x, y), X in self.cross.items():
            if x not in in_keys and y not in in_keys:
                cross[(x, y)] = X
        for i, ki in enumerate(out_keys):
            for j, kj in enumerate(out_keys):
                if ki < kj:
                    _put(cross, ki, kj, C[2 * i:2 * i + 2, 2 * j:2 * j + 2])
            for o in others:
                X = sum(B[2 * i:2 * i + 2, 2 * n:2 * n + 2] @ self.cross_block(kin, o)
                        for n, kin in enumerate(in_keys))
                _put(cross, ki, o, X)
        return CascadeState(modes, self.elapsed, cross)


def _put(cross: dict, a: str, b: str, X: np.ndarray):
    if not np.any(X):
        return
    if a < b:
        cross[(a, b)] = X
    else:
        cross[(b, a)] = X.T


@dataclass
class ModeRecord:
    theta: np.ndarray
    inhom: complex
    omega_in: float
    omega_out: float

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.theta))

    @property
    def excitation(self) -> ModeExcitation:
        return ModeExcitation(self.inhom)

    def to_dict(self):
        return {"theta": self.theta.tolist(), "inhom": [self.inhom.real, self.inhom.imag],
                "omega_in": self.omega_in, "omega_out": self.omega_out}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["theta"], float), complex(*d["inhom"]), float(d["omega_in"]), float(d["omega_out"]))


@dataclass
class PrimitiveCharacterization:
    kind: str  # transport | wait | merge | split | swap
    duration: float
    modes: dict  # mode name -> ModeRecord
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return {"kind": self.kind, "duration": self.duration, "params": self.params,
                "modes": {k: v.to_dict() for k, v in self.modes.items()}}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], float(d["duration"]), {k: ModeRecord.from_dict(v) for k, v in d["modes"].items()},
                   d.get("params", {}))

    def check_symplectic(self, tol: float = DET_TOL):
        for k, m in self.modes.items():
            if abs(m.det - 1) > tol:
                raise ContractError(f"{self.kind}/{k}: det(theta) = {m.det:.12g}")


def symplectic_projection(theta: np.ndarray) -> np.ndarray:
    d = np.linalg.det(theta)
    if d <= 0:
        raise ContractError("fundamental matrix with non-positive determinant")
    return theta / np.sqrt(d)


# --- characterization --------------------------------------------------------

def _phase(omega_fn, T: float) -> float:
    """Adiabatic phase: integral of omega over [0, T]; used as the reference when interpolating over T."""
    return float(quad(lambda t: float(omega_fn(t)), 0.0, T, limit=200)[0])


def characterize_wait(T: float, omegas: dict) -> PrimitiveCharacterization:
    if T < 0:
        raise ValueError("T must be non-negative")
    modes = {k: ModeRecord(rotation_matrix(w * T), 0j, w, w) for k, w in omegas.items()}
    return PrimitiveCharacterization("wait", T, modes, {"omegas": dict(omegas)})


def characterize_transport(L: float, T: float, n_val: float = 5.0, omega=TWO_PI * 1e6,
                           c: PhysicalConstants = BE9) -> PrimitiveCharacterization:
    """Single-ion transport over L; omega constant (rad/s) or a function of time."""
    prof = TanhProfile(L, T, n_val)
    spec = OscillatorSpec(c.m, omega, prof, T)
    tr = solve_forced(spec, hbar=c.hbar, t_eval=[0.0, T])
    w0, wT = spec.omega0, spec.omegaT
    M = fundamental_solutions(spec.omega_fn, T).matrix()
    rec = ModeRecord(scaled_matrix(M, w0, wT), complex(amplitude(tr.s[-1], tr.sd[-1], wT, c.m, c.hbar)), w0, wT)
    params = {"L": L, "n_val": n_val, "phase": {"x": _phase(spec.omega_fn, T)}}
    if not callable(omega):
        params["omega"] = float(omega)
    return PrimitiveCharacterization("transport", T, {"x": rec}, params)


def characterize_merge(spec: MergeSpec) -> PrimitiveCharacterization:
    res = simulate_idealized(spec)
    modes = {}
    for name, M, ex in (("com", res.M_com, res.com), ("str", res.M_str, res.str)):
        w0, wT = res.omegas[name]
        modes[name] = ModeRecord(scaled_matrix(M, w0, wT), complex(ex.alpha), w0, wT)
    params = {"d_in": spec.d_in, "d_crit": spec.d_crit, "d_final": spec.d_final, "nu_crit": spec.nu_crit,
              "n_val": spec.n_val, "symmetry": spec.symmetry, "crossover": spec.crossover,
              "phase": {"com": _phase(spec.omega_com, spec.T), "str": _phase(spec.omega_str, spec.T)}}
    return PrimitiveCharacterization(spec.direction, spec.T, modes, params)


SWAP_MODES = {"com": "axial_ip", "str": "axial_oop"}


def characterize_swap(spec, layout, n_points: int | None = None) -> PrimitiveCharacterization:
    """Axial COM/STR records of a swap from one from-rest and four basis simulations.

    Columns of Theta are the responses to a unit real and a unit imaginary
    initial amplitude minus the from-rest response.  Leakage into the radial
    modes and numerical noise are removed by rescaling to det = 1.
    """
    from .swap import calculation_points, simulate_swap_waveform, swap_waveform

    n_points = calculation_points(spec.T) if n_points is None else n_points
    w = swap_waveform(spec, n_points, layout)
    base = simulate_swap_waveform(w, layout, spec, monitor=True)
    omega_in = {k: 2 * np.pi * base.spectrum[0][f"f_{v}_MHz"] * 1e6 for k, v in SWAP_MODES.items()}
    modes = {}
    for name, real in SWAP_MODES.items():
        cols = []
        for a0 in (1.0, 1j):
            r = simulate_swap_waveform(w, layout, spec, init={real: ModeExcitation(a0)}, monitor=False)
            cols.append(_vec(r.modes[real].alpha - base.modes[real].alpha))
        theta = np.column_stack(cols)
        log.debug("swap %s raw det %.10f", name, np.linalg.det(theta))
        modes[name] = ModeRecord(symplectic_projection(theta), complex(base.modes[real].alpha), omega_in[name],
                                 2 * np.pi * base.frequencies[real])
    params = {**spec.as_dict(), "n_points": n_points, "min_gap_Hz": base.min_gap,
              "n_radial": base.n_radial}
    return PrimitiveCharacterization("swap", spec.T, modes, params)


def characterize(kind: str, T: float, **kw) -> PrimitiveCharacterization:
    """Dispatch: transport(L, n_val, omega) | wait(omegas) | merge/split(MergeSpec fields) | swap(spec, layout)."""
    if kind == "wait":
        return characterize_wait(T, kw["omegas"])
    if kind == "transport":
        return characterize_transport(kw["L"], T, kw.get("n_val", 5.0), kw.get("omega", TWO_PI * 1e6))
    if kind in ("merge", "split"):
        return characterize_merge(MergeSpec(T=T, direction=kind, **kw))
    if kind == "swap":
        from .swap import SwapSpec
        spec = kw.get("spec") or SwapSpec(T=T)
        return characterize_swap(replace(spec, T=T), kw["layout"], kw.get("n_points"))
    raise ValueError(f"unknown primitive kind {kind!r}")


# --- composition -------------------------------------------------------------

def compose(state: CascadeState, pc: PrimitiveCharacterization, mapping: dict,
            idle_wait: bool = True) -> CascadeState:
    """Apply pc to the state modes named in mapping {primitive mode: state key}.

    Modes outside the mapping evolve freely for the primitive's duration when
    idle_wait is set.
    """
    modes = dict(state.modes)
    maps = {}
    for pm, key in mapping.items():
        if pm not in pc.modes:
            raise ContractError(f"{pc.kind} has no mode {pm!r}")
        if key not in modes:
            raise ContractError(f"{pc.kind}: state has no mode {key!r}")
        rec = pc.modes[pm]
        modes[key] = modes[key].evolve(rec.theta, rec.inhom, rec.omega_out)
        maps[key] = rec.theta
    if idle_wait:
        used = set(mapping.values())
        for k in modes:
            if k not in used:
                maps[k] = rotation_matrix(modes[k].omega * pc.duration)
                modes[k] = modes[k].wait(pc.duration)
    return state.with_modes(modes, pc.duration, maps)


def wait_all(state: CascadeState, dt: float) -> CascadeState:
    """Free evolution of every mode for dt."""
    maps = {k: rotation_matrix(m.omega * dt) for k, m in state.modes.items()}
    return state.with_modes({k: m.wait(dt) for k, m in state.modes.items()}, dt, maps)


def interference_bounds(n_hom: float, n_inhom: float) -> tuple[float, float]:
    a, b = np.sqrt(n_hom), np.sqrt(n_inhom)
    return (a - b) ** 2, (a + b) ** 2


# --- mode rebase -------------------------------------------------------------

def _k(mass, omega):
    return np.sqrt(mass * omega / 2)


def rebase_matrix(omega_ion: float, omega_com: float, omega_str: float) -> np.ndarray:
    """(Re, Im) of (left, right) ion amplitudes -> (Re, Im) of (COM, STR); hbar = m = 1.

    COM u = (x_l + x_r)/2 with mass 2; STR r = x_r - x_l with mass 1/2.
    """
    kl = _k(1.0, omega_ion)
    D_in = np.diag([1 / kl, omega_ion / kl, 1 / kl, omega_ion / kl])
    A = np.array([[0.5, 0, 0.5, 0], [0, 0.5, 0, 0.5], [-1, 0, 1, 0], [0, -1, 0, 1]], float)
    kc, ks = _k(2.0, omega_com), _k(0.5, omega_str)
    D_out = np.diag([kc, kc / omega_com, ks, ks / omega_str])
    return D_out @ A @ D_in


def mode_rebase(state: CascadeState, event: str, left, right, omega_com: float | None = None,
                omega_str: float | None = None, omega_ion: float | None = None) -> CascadeState:
    """merge: ions left, right -> crystal COM/STR; split: back to single ions.

    An exact linear phase-space map; covariances with all other modes are carried along.
    """
    left, right = str(left), str(right)
    modes = state.modes
    kc, ks = crystal_key(left, right, "com"), crystal_key(left, right, "str")
    if event == "merge":
        if left not in modes or right not in modes:
            raise ContractError("merge rebase needs both ions as single modes")
        ml, mr = modes[left], modes[right]
        if abs(ml.omega - mr.omega) > 1e-9 * ml.omega:
            raise ContractError("merge rebase needs equal single-ion frequencies")
        w = ml.omega
        wc = w if omega_com is None else omega_com
        ws = w if omega_str is None else omega_str
        return state.transform([left, right], [kc, ks], rebase_matrix(w, wc, ws), [wc, ws])
    if event == "split":
        if kc not in modes or ks not in modes:
            raise ContractError(f"no crystal {left}+{right}")
        mc, ms = modes[kc], modes[ks]
        w = mc.omega if omega_ion is None else omega_ion
        B = np.linalg.inv(rebase_matrix(w, mc.omega, ms.omega))
        return state.transform([kc, ks], [left, right], B, [w, w])
    raise ContractError(f"unknown rebase event {event!r}")


def mode_energy(state: CascadeState, keys=None) -> float:
    """sum omega n over the chosen modes (units of hbar)."""
    keys = state.modes.keys() if keys is None else keys
    return float(sum(state.modes[k].omega * state.modes[k].n_bar for k in keys))


# --- families and interpolation ----------------------------------------------

@dataclass
class CharacterizationFamily:
    records: list  # PrimitiveCharacterization sorted by duration

    def __post_init__(self):
        self.records = sorted(self.records, key=lambda r: r.duration)
        if len({r.kind for r in self.records}) != 1:
            raise ValueError("family mixes primitive kinds")

    @property
    def durations(self) -> np.ndarray:
        return np.array([r.duration for r in self.records])


def build_family(builder: Callable[[float], PrimitiveCharacterization], T_values) -> CharacterizationFamily:
    return CharacterizationFamily([builder(float(T)) for T in T_values])


def interpolate_characterization(family: CharacterizationFamily, T: float) -> PrimitiveCharacterization:
    Ts = family.durations
    if T < Ts[0] - 1e-15 or T > Ts[-1] + 1e-15:
        raise ValueError(f"T = {T:g} outside the family range [{Ts[0]:g}, {Ts[-1]:g}]")
    hit = np.flatnonzero(np.isclose(Ts, T, rtol=0, atol=1e-15))
    if hit.size:
        return family.records[int(hit[0])]
    k = min(3, len(Ts) - 1)
    first = family.records[0]
    modes = {}
    for name in first.modes:
        om = np.array([[r.modes[name].omega_in, r.modes[name].omega_out] for r in family.records])
        # strip the accumulated rotation of each Theta so a coarse T grid does not alias the phase;
        # the adiabatic phase, when recorded, picks the branch
        ang = np.array([np.arctan2(t[0, 1] - t[1, 0], t[0, 0] + t[1, 1])
                        for t in (r.modes[name].theta for r in family.records)])
        ref = [r.params.get("phase", {}).get(name) for r in family.records]
        if all(v is not None for v in ref):
            ref = np.array(ref, float)
            phi = ref + np.angle(np.exp(1j * (ang - ref)))
        else:
            phi = np.unwrap(ang)
        undo = [rotation_matrix(-p) for p in phi]
        th = np.array([(u @ r.modes[name].theta).ravel() for u, r in zip(undo, family.records)])
        inh = np.array([u @ _vec(r.modes[name].inhom) for u, r in zip(undo, family.records)])
        w = make_interp_spline(Ts, om, k=1)(T)
        redo = rotation_matrix(float(make_interp_spline(Ts, phi, k=k)(T)))
        theta = redo @ make_interp_spline(Ts, th, k=k)(T).reshape(2, 2)
        a = redo @ make_interp_spline(Ts, inh, k=k)(T)
        modes[name] = ModeRecord(symplectic_projection(theta), _cplx(a), float(w[0]), float(w[1]))
    return PrimitiveCharacterization(first.kind, float(T), modes, {**first.params, "interpolated": True})


# --- disk cache --------------------------------------------------------------

def cache_dir() -> Path:
    return Path(os.environ.get("QCCDSIM_CACHE", Path.home() / ".cache" / "qccdsim"))


def cached(key: dict, builder: Callable[[], PrimitiveCharacterization],
           directory: Path | None = None) -> PrimitiveCharacterization:
    """Load a characterization from the JSON cache or build and store it."""
    from .voltage_solver import spec_hash

    d = Path(directory) if directory is not None else cache_dir()
    path = d / f"{key.get('kind', 'prim')}-{spec_hash(key)}.json"
    if path.exists():
        try:
            return PrimitiveCharacterization.from_dict(json.loads(path.read_text()))
        except (ValueError, KeyError) as e:
            log.warning("ignoring unreadable cache record %s: %s", path, e)
    pc = builder()
    try:
        d.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps({**pc.to_dict(), "key": key}, sort_keys=True))
        tmp.replace(path)
    except OSError as e:
        log.info("characterization cache not writable: %s", e)
    return pc
