"""Surface-electrode trap fields in the gapless-plane approximation.

Every electrode is a rectangle in the chip plane z = 0.  The potential of a
rectangle held at 1 V while the rest of the plane is grounded follows from the
solid angle it subtends, which has a closed form.  Gradients and Hessians of
that form are analytic as well, so all field quantities here are exact up to
rounding.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import jsonschema
import numpy as np
from scipy import constants as sc
from scipy.optimize import least_squares

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
UM = 1e-6


class DomainError(ValueError):
    """Evaluation point outside the half space above the chip."""


class LayoutError(ValueError):
    """Malformed or inconsistent trap layout."""


@dataclass(frozen=True)
class PhysicalConstants:
    q: float = sc.e
    m: float = 9.0121831 * sc.atomic_mass  # 9Be+
    eps0: float = sc.epsilon_0
    hbar: float = sc.hbar

    def __post_init__(self):
        for k in ("q", "m", "eps0", "hbar"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")

    @property
    def k_coulomb(self) -> float:
        """q/(4 pi eps0), the Coulomb field prefactor in V m."""
        return self.q / (4 * np.pi * self.eps0)

    def curvature(self, nu_hz):
        """Potential curvature (V/m^2) giving frequency nu for this ion."""
        return self.m * (TWO_PI * np.asarray(nu_hz)) ** 2 / self.q

    def frequency(self, curvature):
        return np.sqrt(self.q * np.asarray(curvature) / self.m) / TWO_PI


BE9 = PhysicalConstants()


@dataclass(frozen=True)
class RectElectrode:
    id: str
    x_span: tuple[float, float]
    y_span: tuple[float, float]
    role: str = "DC"
    group: str | None = None

    def __post_init__(self):
        if self.role not in ("DC", "RF"):
            raise LayoutError(f"electrode {self.id}: role must be DC or RF")
        if not (self.x_span[1] > self.x_span[0] and self.y_span[1] > self.y_span[0]):
            raise LayoutError(f"electrode {self.id}: degenerate span")
        if self.group is None:
            object.__setattr__(self, "group", self.id)

    @property
    def rect(self) -> np.ndarray:
        return np.array([*self.x_span, *self.y_span], float)


# --- closed-form rectangle potential ---------------------------------------

def _check_z(r):
    r = np.asarray(r, float)
    if r.shape[-1] != 3:
        raise ValueError("points must have a trailing dimension of 3")
    if np.any(r[..., 2] <= 0):
        raise DomainError("field points must lie above the chip plane (z > 0)")
    return r


def _corners(rects, r):
    rects = np.atleast_2d(np.asarray(rects, float))
    x = r[..., 0, None]
    y = r[..., 1, None]
    z = r[..., 2, None]
    x1, x2, y1, y2 = rects.T
    # (X, Y, sign) for the four corners
    return [(x - x2, y - y2, 1.0), (x - x1, y - y2, -1.0), (x - x2, y - y1, -1.0), (x - x1, y - y1, 1.0)], z


def unit_potential(rects, r) -> np.ndarray:
    """Potential per volt of each rectangle at points r.

    rects: (E, 4) array of [x1, x2, y1, y2] (or a single rectangle / RectElectrode).
    r: (..., 3) points.  Returns (..., E).
    """
    if isinstance(rects, RectElectrode):
        rects = rects.rect
    r = _check_z(r)
    cs, z = _corners(rects, r)
    out = 0.0
    for X, Y, s in cs:
        R = np.sqrt(X * X + Y * Y + z * z)
        out = out + s * np.arctan(X * Y / (z * R))
    return out / TWO_PI


def unit_gradient(rects, r) -> np.ndarray:
    """Gradient of unit_potential, shape (..., E, 3)."""
    if isinstance(rects, RectElectrode):
        rects = rects.rect
    r = _check_z(r)
    cs, z = _corners(rects, r)
    out = 0.0
    for X, Y, s in cs:
        R = np.sqrt(X * X + Y * Y + z * z)
        a = X * X + z * z
        b = Y * Y + z * z
        g = np.stack([z * Y / (a * R), z * X / (b * R), -X * Y * (R * R + z * z) / (a * b * R)], -1)
        out = out + s * g
    return out / TWO_PI


def unit_hessian(rects, r) -> np.ndarray:
    """Hessian of unit_potential, shape (..., E, 3, 3)."""
    if isinstance(rects, RectElectrode):
        rects = rects.rect
    r = _check_z(r)
    cs, z = _corners(rects, r)
    out = 0.0
    for X, Y, s in cs:
        R2 = X * X + Y * Y + z * z
        R = np.sqrt(R2)
        R3 = R * R2
        a = X * X + z * z
        b = Y * Y + z * z
        fxx = -z * X * Y * (2 * R2 + a) / (a * a * R3)
        fyy = -z * X * Y * (2 * R2 + b) / (b * b * R3)
        fxy = z / R3
        fxz = Y / (a * R) * (1 - 2 * z * z / a - z * z / R2)
        fyz = X / (b * R) * (1 - 2 * z * z / b - z * z / R2)
        fzz = -(fxx + fyy)
        H = np.stack([np.stack([fxx, fxy, fxz], -1),
                      np.stack([fxy, fyy, fyz], -1),
                      np.stack([fxz, fyz, fzz], -1)], -2)
        out = out + s * H
    return out / TWO_PI


# --- layout -----------------------------------------------------------------

_SPAN = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
LAYOUT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["electrodes", "rf", "resting_positions_um", "gate_slots", "voltage_limit_V", "sample_rate_MSps"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "electrodes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "role", "x_span_um", "y_span_um"],
                "properties": {
                    "id": {"type": "string"},
                    "role": {"enum": ["DC", "RF"]},
                    "group": {"type": "string"},
                    "x_span_um": _SPAN,
                    "y_span_um": _SPAN,
                },
            },
        },
        "gate_groups": {"type": "array", "items": {"type": "string"}},
        "rf": {
            "type": "object",
            "additionalProperties": False,
            "required": ["frequency_MHz", "amplitude_V"],
            "properties": {
                "frequency_MHz": {"type": "number", "exclusiveMinimum": 0},
                "amplitude_V": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "resting_positions_um": {"type": "array", "items": {"type": "number"}, "minItems": 20, "maxItems": 20},
        "gate_slots": {"type": "array", "items": {"type": "integer", "minimum": 0, "maximum": 19},
                       "minItems": 4, "maxItems": 4},
        "voltage_limit_V": {"type": "number", "exclusiveMinimum": 0},
        "sample_rate_MSps": {"type": "number", "exclusiveMinimum": 0},
        "ion_mass_u": {"type": "number", "exclusiveMinimum": 0},
    },
}


def layout_diagnostics(doc: dict) -> list[str]:
    """Schema and invariant violations of a layout document, as 'pointer: message'."""
    v = jsonschema.Draft202012Validator(LAYOUT_SCHEMA)
    out = []
    for err in sorted(v.iter_errors(doc), key=lambda e: list(e.absolute_path)):
        ptr = "/" + "/".join(str(p) for p in err.absolute_path)
        out.append(f"{ptr}: {err.message}")
    if out:
        return out
    ids = [e["id"] for e in doc["electrodes"]]
    for i, e in enumerate(doc["electrodes"]):
        if ids.index(e["id"]) != i:
            out.append(f"/electrodes/{i}/id: duplicate id {e['id']!r}")
        for k in ("x_span_um", "y_span_um"):
            a, b = e[k]
            if not b > a:
                out.append(f"/electrodes/{i}/{k}: interval must be non-degenerate and increasing")
    rp = doc["resting_positions_um"]
    if any(b <= a for a, b in zip(rp, rp[1:])):
        out.append("/resting_positions_um: positions must be strictly increasing")
    if len(set(doc["gate_slots"])) != 4:
        out.append("/gate_slots: four distinct slots required")
    groups = {e.get("group", e["id"]) for e in doc["electrodes"] if e["role"] == "DC"}
    gg = doc.get("gate_groups")
    if gg is not None:
        for j, g in enumerate(gg):
            if g not in groups:
                out.append(f"/gate_groups/{j}: unknown DC group {g!r}")
        if len(set(gg)) != 14:
            out.append("/gate_groups: exactly 14 independent gate-zone signals required")
    if not any(e["role"] == "RF" for e in doc["electrodes"]):
        out.append("/electrodes: at least one RF electrode required")
    return out


@dataclass(frozen=True)
class TrapLayout:
    electrodes: tuple[RectElectrode, ...]
    rf_frequency: float  # rad/s
    rf_amplitude: float  # V
    resting_positions: tuple[float, ...]
    gate_slots: tuple[int, ...]
    gate_groups: tuple[str, ...] = ()
    voltage_limit: float = 50.0
    sample_rate: float = 2.55e6
    constants: PhysicalConstants = BE9
    name: str = "layout"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.voltage_limit <= 0:
            raise LayoutError("voltage_limit must be positive")
        rp = np.asarray(self.resting_positions)
        if len(rp) != 20 or np.any(np.diff(rp) <= 0):
            raise LayoutError("20 strictly increasing resting positions required")

    # groups and rectangles
    @property
    def dc_groups(self) -> list[str]:
        seen = []
        for e in self.electrodes:
            if e.role == "DC" and e.group not in seen:
                seen.append(e.group)
        return seen

    @property
    def gate_positions(self) -> np.ndarray:
        return np.asarray(self.resting_positions)[list(self.gate_slots)]

    def rf_rects(self) -> np.ndarray:
        return np.array([e.rect for e in self.electrodes if e.role == "RF"])

    def group_rects(self, group: str) -> np.ndarray:
        return np.array([e.rect for e in self.electrodes if e.role == "DC" and e.group == group])

    def _group_index(self, groups):
        key = ("gidx", tuple(groups))
        if key not in self._cache:
            rects, idx = [], []
            for gi, g in enumerate(groups):
                rr = self.group_rects(g)
                if len(rr) == 0:
                    raise LayoutError(f"unknown DC group {g!r}")
                rects.append(rr)
                idx += [gi] * len(rr)
            self._cache[key] = (np.vstack(rects), np.array(idx))
        return self._cache[key]

    def basis(self, r, order: int = 1, groups: Sequence[str] | None = None) -> np.ndarray:
        """Per-group unit field quantity at r.

        order 0: (..., G) potentials; 1: (..., G, 3) gradients; 2: (..., G, 3, 3) Hessians.
        """
        groups = list(self.gate_groups or self.dc_groups) if groups is None else list(groups)
        rects, idx = self._group_index(groups)
        fn = (unit_potential, unit_gradient, unit_hessian)[order]
        per = fn(rects, r)
        ax = np.asarray(r).ndim - 1  # electrode axis
        per = np.moveaxis(per, ax, 0)
        out = np.zeros((len(groups),) + per.shape[1:])
        np.add.at(out, idx, per)
        return np.moveaxis(out, 0, ax)

    # serialization
    @classmethod
    def from_dict(cls, doc: dict) -> "TrapLayout":
        diags = layout_diagnostics(doc)
        if diags:
            raise LayoutError("; ".join(diags))
        els = tuple(
            RectElectrode(e["id"], tuple(np.multiply(e["x_span_um"], UM)), tuple(np.multiply(e["y_span_um"], UM)),
                          e["role"], e.get("group"))
            for e in doc["electrodes"]
        )
        const = BE9
        if "ion_mass_u" in doc:
            const = PhysicalConstants(m=doc["ion_mass_u"] * sc.atomic_mass)
        return cls(
            electrodes=els,
            rf_frequency=TWO_PI * doc["rf"]["frequency_MHz"] * 1e6,
            rf_amplitude=float(doc["rf"]["amplitude_V"]),
            resting_positions=tuple(np.multiply(doc["resting_positions_um"], UM)),
            gate_slots=tuple(doc["gate_slots"]),
            gate_groups=tuple(doc.get("gate_groups", ())),
            voltage_limit=float(doc["voltage_limit_V"]),
            sample_rate=doc["sample_rate_MSps"] * 1e6,
            constants=const,
            name=doc.get("name", "layout"),
        )

    @classmethod
    def load(cls, path) -> "TrapLayout":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        doc = {
            "name": self.name,
            "electrodes": [
                {"id": e.id, "role": e.role, "group": e.group,
                 "x_span_um": [round(v / UM, 9) for v in e.x_span],
                 "y_span_um": [round(v / UM, 9) for v in e.y_span]}
                for e in self.electrodes
            ],
            "rf": {"frequency_MHz": self.rf_frequency / TWO_PI / 1e6, "amplitude_V": self.rf_amplitude},
            "resting_positions_um": [round(v / UM, 9) for v in self.resting_positions],
            "gate_slots": list(self.gate_slots),
            "voltage_limit_V": self.voltage_limit,
            "sample_rate_MSps": self.sample_rate / 1e6,
        }
        if self.gate_groups:
            doc["gate_groups"] = list(self.gate_groups)
        return doc


def default_layout_path() -> Path:
    return Path(str(resources.files("qccdsim") / "data" / "default_layout.json"))


def default_layout() -> TrapLayout:
    return TrapLayout.load(default_layout_path())


# --- field evaluation --------------------------------------------------------

@dataclass(frozen=True)
class FieldSample:
    potential: np.ndarray
    gradient: np.ndarray
    hessian: np.ndarray


def _voltage_vector(layout: TrapLayout, voltages: Mapping[str, float], groups):
    missing = [g for g in groups if g not in voltages]
    if missing:
        raise LayoutError(f"no voltage given for group(s) {missing}")
    v = np.array([float(voltages[g]) for g in groups])
    if np.any(np.abs(v) > layout.voltage_limit):
        log.warning("voltage map exceeds the %.1f V limit (max |V| = %.2f)", layout.voltage_limit, np.abs(v).max())
    return v


def static_potential(layout: TrapLayout, voltages: Mapping[str, float], r) -> FieldSample:
    """Static DC potential (V) with gradient and Hessian at r.

    Groups absent from the layout's active set are ignored; every DC group of
    the layout must be present in `voltages`.
    """
    groups = layout.dc_groups
    v = _voltage_vector(layout, voltages, groups)
    r = np.asarray(r, float)
    return FieldSample(
        potential=layout.basis(r, 0, groups) @ v,
        gradient=np.einsum("...gi,g->...i", layout.basis(r, 1, groups), v),
        hessian=np.einsum("...gij,g->...ij", layout.basis(r, 2, groups), v),
    )


def rf_field(layout: TrapLayout, r) -> tuple[np.ndarray, np.ndarray]:
    """RF amplitude field E (V/m) and its Jacobian dE_i/dx_j at r."""
    rf = layout.rf_rects()
    E = -layout.rf_amplitude * unit_gradient(rf, r).sum(-2)
    J = -layout.rf_amplitude * unit_hessian(rf, r).sum(-3)
    return E, J


def _psd_prefactor(layout):
    c = layout.constants
    return c.q / (4 * c.m * layout.rf_frequency ** 2)


def pseudopotential_gradient(layout: TrapLayout, r) -> np.ndarray:
    E, J = rf_field(layout, r)
    return 2 * _psd_prefactor(layout) * np.einsum("...i,...ij->...j", E, J)


def pseudopotential(layout: TrapLayout, r, h: float = 1e-8) -> FieldSample:
    """Ponderomotive potential q|E_rf|^2/(4 m Omega^2), in volts."""
    r = _check_z(r)
    E, _ = rf_field(layout, r)
    pot = _psd_prefactor(layout) * np.sum(E * E, -1)
    grad = pseudopotential_gradient(layout, r)
    hess = np.stack(
        [(pseudopotential_gradient(layout, r + h * e) - pseudopotential_gradient(layout, r - h * e)) / (2 * h)
         for e in np.eye(3)], -2)
    hess = 0.5 * (hess + np.swapaxes(hess, -1, -2))
    return FieldSample(pot, grad, hess)


def pseudopotential_hessian_at_null(layout: TrapLayout, r) -> np.ndarray:
    """Exact Hessian where E_rf = 0: (q/(2 m Omega^2)) J^T J."""
    _, J = rf_field(layout, r)
    return 2 * _psd_prefactor(layout) * np.einsum("...ki,...kj->...ij", J, J)


def find_rf_null(layout: TrapLayout, x: float = 0.0, y_range=(-150e-6, 150e-6),
                 z_range=(10e-6, 400e-6)) -> np.ndarray:
    """RF null in the radial plane at axial coordinate x.

    The radial components of E_rf vanish there; a small axial component may
    remain near the ends of finite rails.
    """
    key = ("null", float(x))
    if key in layout._cache:
        return layout._cache[key].copy()
    Y, Z = np.meshgrid(np.linspace(*y_range, 61), np.linspace(*z_range, 100))
    P = np.stack([np.full_like(Y, x), Y, Z], -1)
    # weight by z so the far-field decay does not masquerade as a null
    mag = np.linalg.norm(rf_field(layout, P)[0], axis=-1) * Z
    i = np.unravel_index(np.argmin(mag), mag.shape)

    def res(p):
        return rf_field(layout, np.array([x, p[0], p[1]]))[0][1:]

    def jac(p):
        return rf_field(layout, np.array([x, p[0], p[1]]))[1][1:, 1:]

    lo, hi = [y_range[0], z_range[0]], [y_range[1], z_range[1]]
    sol = least_squares(res, [Y[i], Z[i]], jac=jac, bounds=(lo, hi), xtol=1e-15, ftol=1e-15, gtol=1e-15,
                        max_nfev=100)
    p = sol.x.copy()
    for _ in range(5):  # Newton polish
        p = p - np.linalg.solve(jac(p), res(p))
    r0 = np.array([x, *p])
    E0 = rf_field(layout, r0)[0]
    e = np.linalg.norm(E0[1:])
    if abs(E0[0]) > 1e-3:
        log.debug("axial RF field %.3g V/m at the null (finite rail length)", E0[0])
    if e > 1e-3 or np.any(np.linalg.eigvalsh(pseudopotential_hessian_at_null(layout, r0)[1:, 1:]) <= 0):
        raise RuntimeError(f"RF null search did not converge at x={x:g} m (|E|={e:.3g} V/m)")
    layout._cache[key] = r0
    return r0.copy()


def radial_frequencies(layout: TrapLayout, r0=None) -> np.ndarray:
    """Radial secular frequencies (Hz) of the pseudopotential at the null."""
    r0 = find_rf_null(layout) if r0 is None else r0
    H = pseudopotential_hessian_at_null(layout, r0)[1:, 1:]
    return layout.constants.frequency(np.linalg.eigvalsh(H))


def make_surface_layout(
    center_gap: float = 100e-6,
    rf_bottom: float = 20e-6,
    rf_top: float = 40e-6,
    gate_widths: Sequence[float] = (80e-6, 80e-6, 120e-6, 200e-6),
    register_width: float = 100e-6,
    register_count: int = 16,
    register_phases: int = 4,
    dc_extent: float = 1200e-6,
    rf_length: float = 6e-3,
    rf_frequency_hz: float = 88.8e6,
    rf_amplitude: float = 63.5,
    slot_pitch: float = 200e-6,
    center_slot: float = 50e-6,
    name: str = "default",
) -> TrapLayout:
    """Linear surface trap: two x-uniform RF rails, a 14-signal gate zone and multiplexed registers.

    The gate zone has seven DC electrodes above and seven below the RF rails,
    mirror-symmetric in x.  Register electrodes on each side share
    `register_phases` signals (top and bottom tied together).  Uncovered chip
    area, including the strip between the rails, is grounded.
    """
    c0, c1, c2, c3 = gate_widths
    edges = np.cumsum([c0 / 2, c1, c2, c3])
    xs = [(-edges[3], -edges[2]), (-edges[2], -edges[1]), (-edges[1], -edges[0]), (-edges[0], edges[0]),
          (edges[0], edges[1]), (edges[1], edges[2]), (edges[2], edges[3])]
    top = (center_gap / 2 + rf_top, dc_extent)
    bot = (-dc_extent, -center_gap / 2 - rf_bottom)
    els = []
    for row, ys in (("T", top), ("B", bot)):
        for k, xspan in enumerate(xs, 1):
            els.append(RectElectrode(f"{row}{k}", xspan, ys, "DC"))
    for side, sgn in (("L", -1), ("R", 1)):
        for k in range(register_count):
            a = edges[3] + k * register_width
            xspan = (a, a + register_width) if sgn > 0 else (-a - register_width, -a)
            grp = f"REG{side}{k % register_phases}"
            for row, ys in (("T", top), ("B", bot)):
                els.append(RectElectrode(f"{row}{side}{k:02d}", xspan, ys, "DC", grp))
    els.append(RectElectrode("RF_T", (-rf_length, rf_length), (center_gap / 2, center_gap / 2 + rf_top), "RF"))
    els.append(RectElectrode("RF_B", (-rf_length, rf_length), (-center_gap / 2 - rf_bottom, -center_gap / 2), "RF"))
    outer = center_slot + slot_pitch
    left = [-(outer + slot_pitch * (8 - k)) for k in range(8)]
    slots = left + [-outer, -center_slot, center_slot, outer] + [-v for v in reversed(left)]
    return TrapLayout(
        electrodes=tuple(els),
        rf_frequency=TWO_PI * rf_frequency_hz,
        rf_amplitude=rf_amplitude,
        resting_positions=tuple(slots),
        gate_slots=(8, 9, 10, 11),
        gate_groups=tuple(f"{r}{k}" for r in "TB" for k in range(1, 8)),
        name=name,
    )
