"""Configuration-network compiler over the transport instruction set.

Twenty resting slots: left register 0-7 (slot 7 next to the gate zone), gate
zone 8-11 (outer-left, centre-left, centre-right, outer-right) and right
register 12-19 (slot 12 next to the gate zone).  A merged crystal occupies
the two centre slots.
"""
from __future__ import annotations

import itertools
from decimal import Decimal
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from .cascade import (CascadeState, ModeState, PrimitiveCharacterization, cached, characterize_merge,
                      characterize_swap, characterize_transport, compose, crystal_key, mode_rebase,
                      rotation_matrix, wait_all)
from .merge_split import MergeSpec
from .noise_model import NoiseSpectrum, heating_rate
from .trap_model import TWO_PI, TrapLayout, default_layout

log = logging.getLogger(__name__)

N_SLOTS = 20
LEFT = tuple(range(0, 8))
RIGHT = tuple(range(12, 20))
G_LO, G_LC, G_RC, G_RO = 8, 9, 10, 11
CENTER = (G_LC, G_RC)
SWAP_CLEAR = (6, 7, 12, 13)  # first two register slots next to the gate zone
OMEGA_ION = TWO_PI * 1e6

OPS = ("RRR", "RRL", "GTRL", "GTRR", "GTLL", "GTLR", "LRR", "LRL", "GZ", "SWAP", "MERGE", "SPLIT", "WAIT")

# (duration, calculation points) per row of the transport-time summary; single-ion moves use n_val = 5
PRESETS = {
    "noisy": {"merge": 30e-6, "merge_points": 76, "swap": 18e-6, "swap_points": 45, "transport": 12e-6},
    "near-adiabatic": {"merge": 40e-6, "merge_points": 100, "swap": 20e-6, "swap_points": 50, "transport": 14e-6},
}
N_VAL_TWO_ION = 3.0
N_VAL_SINGLE = 5.0

PHYSICAL_THRESHOLD = 1e4
HARD_BOUND = 1e7
SOFT_BOUND = 1e8


class CompileError(RuntimeError):
    pass


class SearchFailure(CompileError):
    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


# --- configurations ------------------------------------------------------------

@dataclass(frozen=True)
class IonConfiguration:
    slots: tuple  # length 20, ion label or 0
    crystal: bool = False

    def __post_init__(self):
        if len(self.slots) != N_SLOTS:
            raise ValueError(f"need {N_SLOTS} slots")
        labels = [s for s in self.slots if s]
        if len(labels) != len(set(labels)):
            raise ValueError("duplicate ion label")
        if self.crystal and not (self.slots[G_LC] and self.slots[G_RC]):
            raise ValueError("crystal flag needs both centre slots occupied")

    @classmethod
    def reference(cls, n_ions: int = 8) -> "IonConfiguration":
        """All ions in the left register, ion 1 next to the gate zone and ion k at slot 8 - k."""
        s = [0] * N_SLOTS
        for k in range(1, n_ions + 1):
            s[8 - k] = k
        return cls(tuple(s))

    @classmethod
    def from_map(cls, mapping: dict, crystal: bool = False) -> "IonConfiguration":
        s = [0] * N_SLOTS
        for slot, lab in mapping.items():
            s[int(slot)] = int(lab)
        return cls(tuple(s), crystal)

    def to_map(self) -> dict:
        return {str(i): lab for i, lab in enumerate(self.slots) if lab}

    @property
    def labels(self) -> list[int]:
        return sorted(s for s in self.slots if s)

    def slot_of(self, label: int) -> int:
        return self.slots.index(label)

    @property
    def pair(self):
        return (self.slots[G_LC], self.slots[G_RC]) if self.crystal else None

    def __str__(self):
        ch = lambda v: str(v) if v else "."
        s = self.slots
        mid = f"{ch(s[8])} [{ch(s[9])}{'=' if self.crystal else ' '}{ch(s[10])}] {ch(s[11])}"
        return "".join(ch(v) for v in s[:8]) + " | " + mid + " | " + "".join(ch(v) for v in s[12:])


@dataclass(frozen=True)
class Instruction:
    """One instruction; inbound register moves (LRL, RRR) optionally take the
    outer gate ion into the register (handover), otherwise it stays put."""

    op: str
    dt: float = 0.0  # WAIT only
    handover: bool = False

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"unknown instruction {self.op!r}")
        if self.handover and self.op not in ("LRL", "RRR"):
            raise ValueError("handover applies to LRL and RRR only")

    def __str__(self):
        if self.op == "WAIT":
            # decimal shift of the shortest repr, so parse() returns the identical float
            return f"WAIT({Decimal(repr(self.dt)).scaleb(6).normalize():f}us)"
        return self.op + ("+" if self.handover else "")

    @classmethod
    def parse(cls, text: str) -> "Instruction":
        if text.startswith("WAIT"):
            return cls("WAIT", float(Decimal(text[5:-3]).scaleb(-6)))
        if text.endswith("+"):
            return cls(text[:-1], handover=True)
        return cls(text)


def _shift(slots, lo, hi, step):
    """Shift occupants of slots lo..hi by step; returns new slots and the moves."""
    s = list(slots)
    moves = []
    idx = range(hi, lo - 1, -1) if step > 0 else range(lo, hi + 1)
    for i in idx:
        if s[i]:
            s[i + step], s[i] = s[i], 0
            moves.append((s[i + step], i, i + step))
    return tuple(s), moves


def _legal_op(cfg: IonConfiguration, op: str, handover: bool = False) -> bool:
    s = cfg.slots
    if op == "LRR":  # left register one slot right, slot 7 hands over to the outer-left gate slot
        return any(s[i] for i in LEFT) and not (s[7] and s[G_LO])
    if op == "LRL":
        if handover:
            return s[0] == 0 and bool(s[G_LO])
        return s[0] == 0 and any(s[i] for i in range(1, 8))
    if op == "RRL":
        return any(s[i] for i in RIGHT) and not (s[12] and s[G_RO])
    if op == "RRR":
        if handover:
            return s[19] == 0 and bool(s[G_RO])
        return s[19] == 0 and any(s[i] for i in range(12, 19))
    if op == "GTLR":
        return bool(s[G_LO]) and not s[G_LC]
    if op == "GTLL":
        return bool(s[G_LC]) and not s[G_LO] and not cfg.crystal
    if op == "GTRR":
        return bool(s[G_RO]) and not s[G_RC]
    if op == "GTRL":
        return bool(s[G_RC]) and not s[G_RO] and not cfg.crystal
    if op == "GZ":
        return (bool(s[G_LC]) != bool(s[G_RC])) and not cfg.crystal
    if op == "MERGE":
        return bool(s[G_LC]) and bool(s[G_RC]) and not cfg.crystal
    if op == "SPLIT":
        return cfg.crystal
    if op == "SWAP":
        return cfg.crystal and not any(s[i] for i in SWAP_CLEAR)
    if op == "WAIT":
        return True
    raise ValueError(op)


def legal_instructions(cfg: IonConfiguration, waits: Iterable[float] = ()) -> list[Instruction]:
    out = [Instruction(op) for op in OPS if op != "WAIT" and _legal_op(cfg, op)]
    out += [Instruction(op, handover=True) for op in ("LRL", "RRR") if _legal_op(cfg, op, True)]
    return out + [Instruction("WAIT", dt) for dt in waits]


def step_config(cfg: IonConfiguration, ins: Instruction):
    """New configuration plus the single-ion moves (label, from, to) of the instruction."""
    if not _legal_op(cfg, ins.op, ins.handover):
        raise CompileError(f"{ins} illegal in {cfg}")
    s, op = cfg.slots, ins.op
    if op == "LRR":
        ns, mv = _shift(s, 0, 7, +1)
    elif op == "LRL":
        ns, mv = _shift(s, 1, 8 if ins.handover else 7, -1)
    elif op == "RRL":
        ns, mv = _shift(s, 12, 19, -1)
    elif op == "RRR":
        ns, mv = _shift(s, 11 if ins.handover else 12, 18, +1)
    elif op in ("GTLR", "GTLL", "GTRR", "GTRL", "GZ"):
        a, b = {"GTLR": (G_LO, G_LC), "GTLL": (G_LC, G_LO), "GTRR": (G_RO, G_RC),
                "GTRL": (G_RC, G_RO)}.get(op, (G_LC, G_RC) if s[G_LC] else (G_RC, G_LC))
        ns = list(s)
        ns[b], ns[a] = ns[a], 0
        ns, mv = tuple(ns), [(s[a], a, b)]
    elif op == "SWAP":
        ns = list(s)
        ns[G_LC], ns[G_RC] = s[G_RC], s[G_LC]
        return IonConfiguration(tuple(ns), True), []
    elif op == "MERGE":
        return IonConfiguration(s, True), []
    elif op == "SPLIT":
        return IonConfiguration(s, False), []
    else:
        return cfg, []
    return IonConfiguration(ns, cfg.crystal), mv


# --- primitive library -------------------------------------------------------

class PrimitiveLibrary:
    """Characterizations for one preset, built lazily and cached on disk."""

    def __init__(self, preset: str = "near-adiabatic", layout: TrapLayout | None = None, cache=None,
                 omega_ion: float = OMEGA_ION):
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}")
        self.preset = preset
        self.p = PRESETS[preset]
        self.layout = layout
        self.cache = cache
        self.omega_ion = omega_ion
        self._mem: dict = {}

    def _layout(self):
        if self.layout is None:
            self.layout = default_layout()
        return self.layout

    def slot_positions(self) -> np.ndarray:
        return np.asarray(self._layout().resting_positions, float)

    def transport(self, L: float) -> PrimitiveCharacterization:
        key = ("transport", round(L * 1e9))
        if key not in self._mem:
            T = self.p["transport"]
            spec = {"kind": "transport", "L": L, "T": T, "n_val": N_VAL_SINGLE, "omega": self.omega_ion}
            self._mem[key] = cached(spec, lambda: characterize_transport(L, T, N_VAL_SINGLE, self.omega_ion),
                                    self.cache)
        return self._mem[key]

    def merge(self, direction: str) -> PrimitiveCharacterization:
        if direction not in self._mem:
            spec = MergeSpec(T=self.p["merge"], n_val=N_VAL_TWO_ION, direction=direction)
            key = {"kind": direction, "T": spec.T, "n_val": spec.n_val, "d_in": spec.d_in, "d_crit": spec.d_crit,
                   "crossover": spec.crossover}
            self._mem[direction] = cached(key, lambda: characterize_merge(spec), self.cache)
        return self._mem[direction]

    def swap(self) -> PrimitiveCharacterization:
        if "swap" not in self._mem:
            from .swap import SwapSpec
            spec = SwapSpec(T=self.p["swap"])
            n = self.p["swap_points"]
            key = {"kind": "swap", **spec.as_dict(), "n_points": n, "layout": self._layout().to_dict()}
            self._mem["swap"] = cached(key, lambda: characterize_swap(spec, self._layout(), n), self.cache)
        return self._mem["swap"]

    def duration(self, ins: Instruction) -> float:
        if ins.op == "WAIT":
            return ins.dt
        if ins.op in ("MERGE", "SPLIT"):
            return self.p["merge"]
        if ins.op == "SWAP":
            return self.p["swap"]
        return self.p["transport"]


# --- cost policies and nodes -------------------------------------------------

@dataclass
class CostPolicy:
    objective: str = "moves"  # moves | time | max_n_targets | max_n_all
    targets: tuple = ()
    threshold: float = PHYSICAL_THRESHOLD
    hard_bound: float = HARD_BOUND
    soft_bound: float = SOFT_BOUND
    beam: int = 1000
    waits: tuple = ()  # WAIT durations offered to the search, s
    phonon_weight: float = 2.0  # ranking: moves per e-fold of (1 + n)
    wait_weight: float = 0.2  # ranking: moves charged per WAIT
    blocker_weight: float = 4.0  # heuristic moves per ion between the targets
    patience: int = 0  # extra layers searched after the first goal
    keep_nonphysical: bool = False  # approach A: keep nodes above the physical threshold
    noise: NoiseSpectrum | None = None

    def __post_init__(self):
        if self.objective not in ("moves", "time", "max_n_targets", "max_n_all"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if not self.threshold <= self.hard_bound <= self.soft_bound:
            raise ValueError("bounds must satisfy threshold <= hard <= soft")

    @property
    def tracks_motion(self) -> bool:
        return self.objective.startswith("max_n")


@dataclass(frozen=True)
class SearchNode:
    config: IonConfiguration
    motional: CascadeState | None
    elapsed: float = 0.0
    path: tuple = ()
    anomalous: tuple = ()  # (label, n) pairs
    nonphysical: bool = False

    @property
    def moves(self) -> int:
        return sum(1 for i in self.path if i.op != "WAIT")

    def anomalous_n(self, label) -> float:
        return dict(self.anomalous).get(int(label), 0.0)

    def ion_n(self, label) -> float:
        """Transport-induced plus anomalous mean phonon number of one ion."""
        return self.motional.ion_n_bar(label) + self.anomalous_n(label)

    def max_n(self, labels=None) -> float:
        labels = self.config.labels if not labels else labels
        return max(self.ion_n(k) for k in labels)


def initial_node(cfg: IonConfiguration, motional: CascadeState | None = None,
                 omega_ion: float = OMEGA_ION) -> SearchNode:
    motional = motional or CascadeState.ground(cfg.labels, omega_ion)
    return SearchNode(cfg, motional, motional.elapsed, (), tuple((k, 0.0) for k in cfg.labels))


def _motion_step(st: CascadeState, cfg: IonConfiguration, new: IonConfiguration, ins: Instruction, moves,
                 lib: PrimitiveLibrary) -> CascadeState:
    op = ins.op
    if op == "WAIT":
        return wait_all(st, ins.dt)
    if op == "MERGE":
        pc = lib.merge("merge")
        l, r = cfg.slots[G_LC], cfg.slots[G_RC]
        st = mode_rebase(st, "merge", l, r, pc.modes["com"].omega_in, pc.modes["str"].omega_in)
        return compose(st, pc, {"com": crystal_key(l, r, "com"), "str": crystal_key(l, r, "str")})
    if op == "SPLIT":
        pc = lib.merge("split")
        l, r = cfg.pair
        st = compose(st, pc, {"com": crystal_key(l, r, "com"), "str": crystal_key(l, r, "str")})
        return mode_rebase(st, "split", l, r, omega_ion=lib.omega_ion)
    if op == "SWAP":
        pc = lib.swap()
        l, r = cfg.pair
        kc, ks = crystal_key(l, r, "com"), crystal_key(l, r, "str")
        st = compose(st, pc, {"com": kc, "str": ks})
        # positional stretch convention: the crystal is relabelled, amplitudes stay
        return st.renamed({kc: crystal_key(r, l, "com"), ks: crystal_key(r, l, "str")})
    pos = lib.slot_positions()
    T = lib.duration(ins)
    modes, maps = dict(st.modes), {}
    for lab, a, b in moves:
        rec = lib.transport(abs(pos[b] - pos[a])).modes["x"]
        # a leftward move is the mirror image: the driven amplitude changes sign
        inhom = rec.inhom if pos[b] > pos[a] else -rec.inhom
        modes[str(lab)] = modes[str(lab)].evolve(rec.theta, inhom, rec.omega_out)
        maps[str(lab)] = rec.theta
    for k in modes:
        if k not in maps:
            maps[k] = rotation_matrix(modes[k].omega * T)
            modes[k] = modes[k].wait(T)
    return st.with_modes(modes, T, maps)


def _anomalous(node: SearchNode, st: CascadeState, T: float, noise: NoiseSpectrum | None) -> tuple:
    if noise is None or T == 0:
        return node.anomalous
    out = []
    for lab, n in node.anomalous:
        key = str(lab)
        if key in st.modes:
            w = st.modes[key].omega
        else:
            w = next(m.omega for k, m in st.modes.items() if k.endswith(":com") and key in k[:-4].split("+"))
        out.append((lab, n + heating_rate(noise, w) * T))
    return tuple(out)


def apply(node: SearchNode, ins: Instruction, lib: PrimitiveLibrary, policy: CostPolicy | None = None,
          track_motion: bool = True) -> SearchNode | None:
    """Child node; None when the hard phonon bound prunes it."""
    new, moves = step_config(node.config, ins)
    T = lib.duration(ins)
    st = node.motional
    anom = node.anomalous
    nonphys = node.nonphysical
    if track_motion and st is not None:
        st = _motion_step(st, node.config, new, ins, moves, lib)
        anom = _anomalous(node, st, T, policy.noise if policy else None)
    else:
        st = None
    child = SearchNode(new, st, node.elapsed + T, node.path + (ins,), anom, nonphys)
    if st is not None and policy is not None:
        nmax = child.max_n()
        bound = policy.soft_bound if policy.keep_nonphysical else policy.hard_bound
        if nmax > bound:
            return None
        if nmax > policy.threshold:
            if not policy.keep_nonphysical:
                return None
            child = replace(child, nonphysical=True)
    return child


def replay(start: SearchNode, path: Iterable[Instruction], lib: PrimitiveLibrary,
           policy: CostPolicy | None = None) -> SearchNode:
    node = start
    for ins in path:
        if ins not in legal_instructions(node.config, [ins.dt] if ins.op == "WAIT" else ()):
            raise CompileError(f"illegal step {ins} in {node.config}")
        nxt = apply(node, ins, lib, policy)
        if nxt is None:
            raise CompileError(f"phonon bound exceeded at {ins}")
        node = nxt
    return node


# --- goals, heuristic, search --------------------------------------------------

def pair_goal(a: int, b: int) -> Callable[[IonConfiguration], bool]:
    def goal(cfg: IonConfiguration) -> bool:
        return cfg.crystal and {cfg.slots[G_LC], cfg.slots[G_RC]} == {a, b}
    goal.targets = (a, b)
    return goal


def config_goal(target: IonConfiguration) -> Callable[[IonConfiguration], bool]:
    def goal(cfg):
        return cfg == target
    goal.target = target
    return goal


def heuristic(cfg: IonConfiguration, targets, blocker_weight: float = 4.0) -> float:
    """Moves-to-go estimate: slot distance of the targets to the two centre slots,
    plus a weight per ion standing between them, plus one for a missing merge."""
    if len(targets) != 2:
        return 0.0
    p = sorted(cfg.slot_of(t) for t in targets)
    h = abs(p[0] - G_LC) + abs(p[1] - G_RC)
    between = sum(1 for i in range(p[0] + 1, p[1]) if cfg.slots[i])
    h += blocker_weight * between
    if not (cfg.crystal and p == [G_LC, G_RC]):
        h += 1
    return float(h)


def _heuristic_for(goal, policy):
    if hasattr(goal, "targets"):
        return lambda cfg: heuristic(cfg, goal.targets, policy.blocker_weight)
    if hasattr(goal, "target"):
        tgt = goal.target

        def h(cfg):
            return float(sum(abs(cfg.slot_of(k) - tgt.slot_of(k)) for k in cfg.labels)) + (cfg.crystal != tgt.crystal)
        return h
    return lambda cfg: 0.0


def objective_value(node: SearchNode, policy: CostPolicy, lib: PrimitiveLibrary) -> float:
    if policy.objective == "moves":
        return float(node.moves)
    if policy.objective == "time":
        return node.elapsed / lib.p["transport"]
    labels = policy.targets if policy.objective == "max_n_targets" else None
    return node.max_n(labels)


def _rank(node, h, policy, lib):
    if policy.objective == "moves":
        return (node.moves + h, node.elapsed)
    if policy.objective == "time":
        return (node.elapsed / lib.p["transport"] + h, node.moves)
    waits = len(node.path) - node.moves
    n = objective_value(node, policy, lib)
    return (node.moves + h + policy.wait_weight * waits + policy.phonon_weight * np.log1p(n), node.elapsed)


def _final_key(node, policy, lib):
    if policy.objective == "moves":
        return (node.moves, node.elapsed)
    if policy.objective == "time":
        return (node.elapsed, node.moves)
    return (objective_value(node, policy, lib), node.elapsed)


def search(start: SearchNode, goal: Callable, policy: CostPolicy, lib: PrimitiveLibrary,
           max_depth: int = 200) -> SearchNode:
    """Beam-limited best-first search layer by layer.

    Positional duplicates are collapsed to their best-ranked node; with a
    motional objective the same configuration reached with a different
    motional state is kept only if it ranks better than every earlier visit.
    """
    if goal(start.config):
        return start
    track = policy.tracks_motion
    h = _heuristic_for(goal, policy)
    layer = [start if track else replace(start, motional=None)]
    seen: dict = {start.config: _rank(layer[0], h(start.config), policy, lib)}
    found: list = []
    extra = None
    best_partial = layer[0]
    for depth in range(max_depth):
        cand: dict = {}
        for node in layer:
            last_wait = bool(node.path) and node.path[-1].op == "WAIT"
            for ins in legal_instructions(node.config, () if last_wait else policy.waits):
                child = apply(node, ins, lib, policy, track_motion=track)
                if child is None:
                    continue
                r = _rank(child, h(child.config), policy, lib)
                # a WAIT only re-phases the motion: it competes within the layer, not with earlier visits
                key = (child.config, ins.op == "WAIT")
                prev = seen.get(child.config)
                if ins.op != "WAIT" and prev is not None and prev <= r:
                    continue
                old = cand.get(key)
                if old is None or r < old[0]:
                    cand[key] = (r, child)
        if not cand:
            break
        for (cfg, waited), (r, child) in cand.items():
            if not waited:
                seen[cfg] = min(r, seen.get(cfg, r))
            if goal(cfg):
                found.append(child)
        ranked = sorted(cand.values(), key=lambda x: (x[0], str(x[1].config)))
        layer = [c for _, c in ranked[: policy.beam] if not goal(c.config)]
        best_partial = ranked[0][1]
        if found:
            extra = policy.patience if extra is None else extra - 1
            if extra <= 0:
                break
        if not layer:
            break
    if not found:
        raise SearchFailure(f"no path within depth {max_depth} (beam {policy.beam})", best_partial)
    best = min(found, key=lambda n: _final_key(n, policy, lib))
    if not track:  # replay the path with motion for the report
        best = replay(start, best.path, lib, None)
    return best


# --- reports -----------------------------------------------------------------

def path_report(start: SearchNode, node: SearchNode, lib: PrimitiveLibrary, policy: CostPolicy | None = None) -> dict:
    """Per-step configuration, per-ion n and phase, and cumulative time."""
    steps = []
    cur = start
    for ins in node.path:
        cur = apply(cur, ins, lib, policy)
        ions = {}
        for lab in cur.config.labels:
            key = str(lab)
            m = cur.motional.modes.get(key)
            ions[key] = {"n_bar": cur.ion_n(lab), "n_transport": cur.motional.ion_n_bar(lab),
                         "n_anomalous": cur.anomalous_n(lab), "phase": m.phase if m else None}
        steps.append({"instruction": str(ins), "config": str(cur.config), "t_us": cur.elapsed * 1e6, "ions": ions})
    ops = [i.op for i in node.path]
    return {
        "moves": node.moves, "duration_us": (node.elapsed - start.elapsed) * 1e6,
        "swaps": ops.count("SWAP"), "merge_split": ops.count("MERGE") + ops.count("SPLIT"),
        "path": [str(i) for i in node.path], "final_config": node.config.to_map(),
        "max_n": node.max_n(), "steps": steps,
    }


def compare_policies(start_cfg: IonConfiguration, a: int, b: int, lib: PrimitiveLibrary, beam: int = 1000,
                     waits=(0.25e-6, 0.5e-6, 0.75e-6), **kw) -> dict:
    """Time-weighted versus phonon-weighted search for one pair."""
    goal = pair_goal(a, b)
    start = initial_node(start_cfg, omega_ion=lib.omega_ion)
    pt = CostPolicy("time", (a, b), beam=beam, **kw)
    pn = CostPolicy("max_n_targets", (a, b), beam=beam, waits=waits, patience=2, **kw)
    nt = search(start, goal, pt, lib)
    nt = replay(start, nt.path, lib, pt)
    nn = search(start, goal, pn, lib)
    out = {}
    for name, node in (("time", nt), ("phonon", nn)):
        out[name] = {"moves": node.moves, "instructions": len(node.path), "duration_us": node.elapsed * 1e6,
                     "max_target_n": node.max_n((a, b)), "path": [str(i) for i in node.path]}
    out["reduction"] = 1 - out["phonon"]["max_target_n"] / out["time"]["max_target_n"]
    return out


def edge_order(start_cfg: IonConfiguration, lib: PrimitiveLibrary, beam: int = 1000) -> list[tuple]:
    """All pairs sorted by unit-cost move count from start, ties by (min, max) label."""
    start = initial_node(start_cfg, omega_ion=lib.omega_ion)
    pol = CostPolicy("moves", beam=beam)
    rows = []
    for a, b in itertools.combinations(start_cfg.labels, 2):
        n = search(start, pair_goal(a, b), replace(pol, targets=(a, b)), lib)
        rows.append((n.moves, a, b))
    rows.sort()
    return [(a, b) for _, a, b in rows]


def _phonon_leg(start: SearchNode, goal, policy: CostPolicy, lib: PrimitiveLibrary) -> tuple[SearchNode, bool]:
    """Phonon-ranked leg, checked against the unit-cost path replayed with motion.

    The layered beam can wander or run out of depth on crowded configurations;
    the shortest path is then a valid candidate and the lower final objective wins.
    """
    try:
        unit = search(start, goal, replace(policy, objective="moves", waits=(), patience=0), lib)
        unit = replay(start, unit.path, lib, policy)
    except CompileError as e:
        log.info("unit-cost candidate unavailable: %s", e)
        unit = None
    try:
        best = search(start, goal, policy, lib)
    except SearchFailure as e:
        if unit is None:
            raise
        log.warning("phonon search failed (%s); using the unit-cost path", e)
        return unit, True
    if unit is not None and _final_key(unit, policy, lib) < _final_key(best, policy, lib):
        log.info("unit-cost path beats the phonon search (max n %.3g vs %.3g)", unit.max_n(), best.max_n())
        return unit, True
    return best, False


A2A_PHONON_WEIGHT = 0.5  # approach B ranking weight; heavier weights make the beam wander on crowded legs


def all_to_all(start_cfg: IonConfiguration, lib: PrimitiveLibrary, approach: str = "B", beam: int = 100,
               order: list | None = None, **kw) -> list[dict]:
    """Pair all ion combinations in sequence, carrying configuration and motion forward.

    approach A: time-weighted with the soft bound 1e8 and non-physical nodes
    kept; approach B: minimise the maximum per-ion n below the physical threshold.
    """
    order = order or edge_order(start_cfg, lib, beam)
    if approach == "A":
        policy = CostPolicy("time", beam=beam, keep_nonphysical=True, **kw)
    elif approach == "B":
        policy = CostPolicy("max_n_all", beam=beam, **{"phonon_weight": A2A_PHONON_WEIGHT, **kw})
    else:
        raise ValueError("approach must be 'A' or 'B'")
    node = initial_node(start_cfg, omega_ion=lib.omega_ion)
    rows = []
    for k, (a, b) in enumerate(order, 1):
        pol = replace(policy, targets=(a, b))
        start = replace(node, path=())
        fallback = False
        try:
            if approach == "A":
                nxt = replay(start, search(start, pair_goal(a, b), pol, lib).path, lib, pol)
            else:
                nxt, fallback = _phonon_leg(start, pair_goal(a, b), pol, lib)
        except SearchFailure as e:
            log.error("edge %d (%d, %d) failed: %s", k, a, b, e)
            rows.append({"edge": k, "pair": [a, b], "failed": True, "diagnostic": str(e)})
            break
        rows.append({"edge": k, "pair": [a, b], "moves": nxt.moves, "fallback": fallback,
                     "leg_time_us": (nxt.elapsed - node.elapsed) * 1e6,
                     "time_us": nxt.elapsed * 1e6, "max_n": nxt.max_n(), "nonphysical": nxt.nonphysical,
                     "n_per_ion": {str(l): nxt.ion_n(l) for l in nxt.config.labels},
                     "path": [str(i) for i in nxt.path], "config": nxt.config.to_map(), "crystal": nxt.config.crystal})
        node = nxt
    return rows
