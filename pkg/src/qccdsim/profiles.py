"""Transport profiles and COM frequency trajectories."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

log = logging.getLogger(__name__)


class ProfileDomainError(ValueError):
    pass


def _check_t(t, T):
    if isinstance(t, float):
        if t < -1e-12 * T or t > T * (1 + 1e-12):
            raise ProfileDomainError(f"t outside [0, {T:g}]")
        return min(max(t, 0.0), T)
    t = np.asarray(t, float)
    tol = 1e-12 * T
    if np.any(t < -tol) or np.any(t > T + tol):
        raise ProfileDomainError(f"t outside [0, {T:g}]")
    return np.clip(t, 0.0, T)


def _tanh_unit(u, n):
    """Unit tanh step on u in [0, 1] with its first two derivatives in u."""
    if isinstance(u, float):
        th = math.tanh(n * (2 * u - 1))
        sech2 = 1.0 - th * th
        tn = math.tanh(n)
        return 0.5 * (1 + th / tn), n * sech2 / tn, -4 * n * n * th * sech2 / tn
    a = n * (2 * u - 1)
    th = np.tanh(a)
    sech2 = 1.0 - th * th
    tn = np.tanh(n)
    f = 0.5 * (1 + th / tn)
    df = n * sech2 / tn
    ddf = -4 * n * n * th * sech2 / tn
    return f, df, ddf


def edge_slope_factor(n: float) -> float:
    """Ratio of the tanh profile's boundary slope to the mean slope, 2n/sinh(2n)."""
    return 2 * n / np.sinh(2 * n) if n > 0 else 1.0


@dataclass(frozen=True)
class TanhProfile:
    """x0(t) = x_start + (L/2)[1 + tanh(n(2t-T)/T)/tanh n]."""

    L: float
    T: float
    n_val: float = 3.0
    x_start: float = 0.0

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not self.n_val > 0:
            raise ValueError("n_val must be positive")

    def eval(self, t):
        """Position, velocity and acceleration at t."""
        t = _check_t(t, self.T)
        f, df, ddf = _tanh_unit(t / self.T, self.n_val)
        return (self.x_start + self.L * f, self.L * df / self.T, self.L * ddf / self.T ** 2)

    __call__ = eval

    @property
    def duration(self):
        return self.T


@dataclass(frozen=True)
class CascadedProfile:
    """Piecewise tanh segments joined at vertices (t_i, d_i).

    Each segment runs a TanhProfile between consecutive anchor vertices; the
    midpoint of every segment is a further fixed point independent of n_val.
    """

    anchors: tuple[tuple[float, float], ...]
    n_vals: tuple[float, ...]

    def __post_init__(self):
        ts = [a[0] for a in self.anchors]
        if len(self.anchors) < 2 or len(self.n_vals) != len(self.anchors) - 1:
            raise ValueError("need k+1 anchors for k segments")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("anchors must be time-ordered")

    @property
    def T(self):
        return self.anchors[-1][0] - self.anchors[0][0]

    duration = T

    @property
    def vertices(self) -> list[tuple[float, float]]:
        """Anchors plus segment midpoints, time-ordered."""
        out = [self.anchors[0]]
        for (t0, d0), (t1, d1) in zip(self.anchors, self.anchors[1:]):
            out += [(0.5 * (t0 + t1), 0.5 * (d0 + d1)), (t1, d1)]
        return out

    @property
    def _segs(self):
        try:
            return self.__dict__["_seg_cache"]
        except KeyError:
            segs = list(self.segments())
            object.__setattr__(self, "_seg_cache", segs)
            return segs

    def segments(self):
        for (t0, d0), (t1, d1), n in zip(self.anchors, self.anchors[1:], self.n_vals):
            yield t0, TanhProfile(d1 - d0, t1 - t0, n, d0)

    def eval(self, t):
        t0g = self.anchors[0][0]
        if isinstance(t, float):
            t = _check_t(t - t0g, self.T) + t0g
            segs = self._segs
            for ts, p in segs[::-1]:
                if t >= ts:
                    return p.eval(min(t - ts, p.T))
            return segs[0][1].eval(0.0)
        t = _check_t(np.asarray(t, float) - t0g, self.T) + t0g
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        x, v, a = (np.empty_like(t) for _ in range(3))
        segs = self._segs
        edges = np.array([s[0] for s in segs[1:]])
        idx = np.searchsorted(edges, t, side="right")
        for k, (ts, p) in enumerate(segs):
            m = idx == k
            if m.any():
                x[m], v[m], a[m] = p.eval(np.clip(t[m] - ts, 0, p.T))
        if scalar:
            return x[0], v[0], a[0]
        return x, v, a

    __call__ = eval

    def reversed(self) -> "CascadedProfile":
        """Time reverse: d'(t) = d(T - t)."""
        t0 = self.anchors[0][0]
        t1 = self.anchors[-1][0]
        anchors = tuple((t0 + t1 - t, d) for t, d in reversed(self.anchors))
        return CascadedProfile(anchors, tuple(reversed(self.n_vals)))


@dataclass(frozen=True)
class ReversedProfile:
    """Time reverse of any profile exposing eval(t) and T."""

    base: object

    @property
    def T(self):
        return self.base.T

    def eval(self, t):
        x, v, a = self.base.eval(self.T - np.asarray(t, float))
        return x, -v, a

    __call__ = eval


def matched_n(L1: float, n1: float, L2: float, dt1: float = 1.0, dt2: float = 1.0) -> float:
    """n_val of a second tanh segment whose start slope equals the first segment's end slope."""
    target = (L1 / dt1) * edge_slope_factor(n1) / (L2 / dt2)
    if target >= 1.0:
        raise ValueError("slope cannot be matched: second segment would need n_val <= 0")
    return brentq(lambda n: edge_slope_factor(n) - target, 1e-9, 200.0, xtol=1e-14)


def build_merge_profile(T: float, d_in: float, d_crit: float, d_final: float, n_val: float = 3.0,
                        match_slopes: bool = True) -> CascadedProfile:
    """Five-vertex separation profile with d(0)=d_final, d(T/4)=d_crit, d(T)=d_in.

    This is the split direction; a merge runs it backwards in time.  The first
    segment spans [0, T/2] and is centred on d_crit, so d_crit is hit at T/4
    for any n_val.  With match_slopes the second segment's n_val is chosen so
    the velocity is continuous at T/2.
    """
    if not d_final < d_crit < d_in:
        raise ValueError("need d_final < d_crit < d_in")
    d_mid = 2 * d_crit - d_final
    if d_mid >= d_in:
        raise ValueError("d_crit too large for a two-segment profile")
    n2 = matched_n(d_mid - d_final, n_val, d_in - d_mid) if match_slopes else n_val
    return CascadedProfile(((0.0, d_final), (T / 2, d_mid), (T, d_in)), (n_val, n2))


@dataclass(frozen=True)
class FrequencyTrajectory:
    """COM frequency schedule.

    asymmetric: nu(d) by a monotone cubic (PCHIP) through the distance anchors,
    evaluated along the separation profile.
    symmetric: a dip in time centred on T/2, nu(t) = nu_in - (nu_in - nu_crit) f(|2t/T - 1|)
    with a Gaussian-shaped f of relative width `width` (small = sharp).
    """

    anchors: tuple[tuple[float, float], ...]  # (d, nu) sorted by d
    symmetry: str = "asymmetric"
    width: float = 0.35
    _interp: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.symmetry not in ("asymmetric", "symmetric"):
            raise ValueError("symmetry must be 'asymmetric' or 'symmetric'")
        d = np.array([a[0] for a in self.anchors])
        nu = np.array([a[1] for a in self.anchors])
        if np.any(nu <= 0):
            raise ValueError("frequencies must be positive")
        if len(d) > 1 and np.any(np.diff(d) <= 0):
            raise ValueError("anchor distances must be strictly increasing")
        if len(d) > 1:
            object.__setattr__(self, "_interp", PchipInterpolator(d, nu, extrapolate=False))

    @property
    def nu_in(self):
        return self.anchors[-1][1]

    @property
    def nu_crit(self):
        return min(a[1] for a in self.anchors)

    @property
    def d_crit(self):
        return min(self.anchors, key=lambda a: a[1])[0]

    def nu_of_d(self, d):
        if isinstance(d, float) and self._interp is not None:
            lo, hi = self.anchors[0][0], self.anchors[-1][0]
            return float(self._interp(min(max(d, lo), hi)))
        d = np.asarray(d, float)
        if self._interp is None:
            return np.full_like(d, self.anchors[0][1])
        lo, hi = self.anchors[0][0], self.anchors[-1][0]
        return self._interp(np.clip(d, lo, hi))

    def _dip(self, s):
        w = self.width
        e1 = np.exp(-1.0 / w ** 2)
        return (np.exp(-(s / w) ** 2) - e1) / (1 - e1)

    def nu_of_t(self, t, profile):
        if self.symmetry == "asymmetric":
            return self.nu_of_d(profile.eval(t)[0])
        s = np.abs(2 * np.asarray(t, float) / profile.T - 1)
        nu_end = self.anchors[-1][1]
        return nu_end - (nu_end - self.nu_crit) * self._dip(s)


def crossover_anchors(d_final: float, nu_final: float, d_crit: float, nu_crit: float,
                      count: int = 8) -> list[tuple[float, float]]:
    """Interior anchors on (d_final, d_crit) for a harmonic-to-quartic crossover.

    nu^2 = nu_final^2 (d_final/d)^3 [1 + (r - 1) u^p] with u the fractional
    distance and r = nu_crit^2 d_crit^3 / (nu_final^2 d_final^3) (3 for the
    ideal wells).  u^p is the share of the quartic term; p makes dnu/dd vanish
    at d_crit.  The quartic share stays small where the ions are close, which
    is where a quartic well is expensive in electrode voltage.
    """
    r = (nu_crit / nu_final) ** 2 * (d_crit / d_final) ** 3
    if r <= 1 or count <= 0:
        return []
    p = 3 * r * (d_crit - d_final) / ((r - 1) * d_crit)
    u = np.linspace(0, 1, count + 2)[1:-1]
    d = d_final + u * (d_crit - d_final)
    nu = nu_final * (d_final / d) ** 1.5 * np.sqrt(1 + (r - 1) * u ** p)
    return [(float(a), float(b)) for a, b in zip(d, nu)]


def build_frequency_trajectory(anchors: Sequence[tuple[float, float]], symmetry: str = "asymmetric",
                               width: float = 0.35, crossover: int = 0) -> FrequencyTrajectory:
    """anchors: [(d_in, nu_in), (d_crit, nu_crit), (d_final, nu_final)] in any order.

    The three-anchor form requires d_final < d_crit < d_in with nu_crit the
    smallest frequency; constant (single-valued) anchors give a flat trajectory.
    crossover > 0 inserts that many interior anchors between d_final and d_crit
    (see crossover_anchors).
    """
    anchors = sorted((float(d), float(nu)) for d, nu in anchors)
    if len(anchors) == 3:
        (df, nf), (dc, nc), (di, ni) = anchors
        if not df < dc < di:
            raise ValueError("anchor ordering must satisfy d_final < d_crit < d_in")
        if not (nc <= nf and nc <= ni):
            raise ValueError("nu_crit must be the minimum of the trajectory")
        if crossover:
            anchors = sorted(anchors + crossover_anchors(df, nf, dc, nc, crossover))
    return FrequencyTrajectory(tuple(anchors), symmetry, width)


# presets for the time-symmetric dips
SYMMETRIC_WIDTHS = {"broad": 0.5, "sharp": 0.2}


# --- scenario serialization ---------------------------------------------------

def profile_to_dict(p) -> dict:
    """JSON form in micrometres and microseconds."""
    if isinstance(p, TanhProfile):
        return {"type": "tanh", "L_um": p.L * 1e6, "T_us": p.T * 1e6, "n_val": p.n_val, "x_start_um": p.x_start * 1e6}
    if isinstance(p, CascadedProfile):
        return {"type": "cascaded", "anchors": [[t * 1e6, d * 1e6] for t, d in p.anchors], "n_vals": list(p.n_vals)}
    if isinstance(p, ReversedProfile):
        return {"type": "reversed", "base": profile_to_dict(p.base)}
    if isinstance(p, FrequencyTrajectory):
        return {"type": "frequency", "anchors": [[d * 1e6, nu / 1e3] for d, nu in p.anchors],
                "symmetry": p.symmetry, "width": p.width}
    raise TypeError(f"cannot serialize {type(p).__name__}")


def profile_from_dict(d: dict):
    kind = d.get("type")
    if kind == "tanh":
        return TanhProfile(d["L_um"] * 1e-6, d["T_us"] * 1e-6, d.get("n_val", 3.0), d.get("x_start_um", 0.0) * 1e-6)
    if kind == "cascaded":
        return CascadedProfile(tuple((t * 1e-6, x * 1e-6) for t, x in d["anchors"]), tuple(d["n_vals"]))
    if kind == "reversed":
        return ReversedProfile(profile_from_dict(d["base"]))
    if kind == "frequency":
        return FrequencyTrajectory(tuple((x * 1e-6, nu * 1e3) for x, nu in d["anchors"]),
                                   d.get("symmetry", "asymmetric"), d.get("width", 0.35))
    raise ValueError(f"unknown profile type {kind!r}")
