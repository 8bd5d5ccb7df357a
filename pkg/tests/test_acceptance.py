"""Acceptance criteria 1-12; each test prints one PASS/FAIL line and fails when any sub-check fails."""
import time
from dataclasses import replace

import numpy as np
import pytest

from chains import run_chains
from qccdsim import compiler as cp
from qccdsim.merge_split import MergeSpec, critical_point, simulate_idealized, single_well, single_well_distance
from qccdsim.noise_model import NoiseSpectrum
from qccdsim.oscillator_core import (OscillatorSpec, excite, fourier_eta, fundamental_solutions, husimi_q,
                                     transition_probabilities_oracle)
from qccdsim.profiles import TanhProfile
from qccdsim.swap import SwapSpec, calculation_points, simulate_swap, swap_waveform
from qccdsim.trap_model import BE9, TWO_PI
from qccdsim.voltage_solver import check_budget, merge_real, merge_waveform

pytestmark = pytest.mark.slow
WAITS = (0.25e-6, 0.5e-6, 0.75e-6)
ETA_MAX = 40.0  # the oracle truncates at n = 500


@pytest.fixture
def record(request, capsys):
    def rec(k: int, checks: list):
        ok = all(c[1] for c in checks)
        detail = "; ".join(f"{name} {'ok' if good else 'FAILED'} ({info})" for name, good, info in checks)
        line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.__dict__.setdefault("_acceptance_lines", {})[k] = line
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return rec


def test_c01_oracle_equivalence(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst, etas = 0.0, []
    while len(etas) < 50:
        w = TWO_PI * rng.uniform(0.5e6, 2e6)
        prof = TanhProfile(rng.uniform(-300e-6, 300e-6), rng.uniform(4e-6, 15e-6), rng.uniform(1, 8))
        eta = fourier_eta(lambda t: prof.eval(t)[2], prof.T, w, BE9.m)
        if eta > ETA_MAX:  # outside the truncated oracle's convergent range
            continue
        etas.append(eta)
        n_ode = excite(OscillatorSpec(BE9.m, w, prof)).n_bar
        P = transition_probabilities_oracle(eta, 1.0, 500)
        n_or = float(np.arange(501) @ P)
        worst = max(worst, abs(n_ode - n_or) / max(n_or, 1e-300))
    dt = time.perf_counter() - t0
    record(1, [("rel err < 1e-6", worst < 1e-6, f"max {worst:.2e}, eta {min(etas):.1e}..{max(etas):.1f}"), ("runtime < 60 s", dt < 60, f"{dt:.1f} s")])


def test_c02_q_identities(record):
    w = TWO_PI * 1e6
    q_const = husimi_q(fundamental_solutions(w, 4.3e-6), w, w)
    q_jump = husimi_q(fundamental_solutions(w, 1e-15), w, 2 * w)
    rng = np.random.default_rng(102)
    q_min = np.inf
    for _ in range(100):
        a, f, ph = rng.uniform(-0.4, 0.4, 3), rng.uniform(0.1, 3, 3), rng.uniform(0, 2 * np.pi, 3)
        T = rng.uniform(1e-6, 8e-6)
        om = lambda t, a=a, f=f, ph=ph: w * (1 + 0.5 * float(np.sum(a * np.sin(f * w * t + ph))))  # noqa: E731
        q_min = min(q_min, husimi_q(fundamental_solutions(om, T), om(0.0), om(T)))
    record(2, [("constant Q = 1", abs(q_const - 1) <= 1e-10, f"{q_const - 1:.1e}"),
               ("jump Q = 1.25", abs(q_jump - 1.25) <= 1e-6, f"{q_jump:.9f}"),
               ("random Q >= 1", q_min >= 1 - 1e-12, f"min {q_min:.6f}")])


def test_c03_single_ion_regimes(record, layout):
    w = TWO_PI * 1e6
    dists = np.unique(np.round(np.diff(layout.resting_positions), 12))
    n = {T: max(excite(OscillatorSpec(BE9.m, w, TanhProfile(L, T * 1e-6, 5.0))).n_bar for L in dists)
         for T in (12, 14, 20)}
    record(3, [("12 us < 1", n[12] < 1, f"{n[12]:.3f}"), ("14 us < 0.1", n[14] < 0.1, f"{n[14]:.4f}"),
               ("20 us < 0.1", n[20] < 0.1, f"{n[20]:.2e}")])


def test_c04_quartic_quadratic_identities(record):
    d = np.random.default_rng(104).uniform(5e-6, 200e-6, 200)
    c = BE9
    beta, curv, _ = critical_point(d)
    alpha, curv2, _ = single_well(d)
    e12 = np.max(np.abs(curv / (3 * c.q / (2 * np.pi * c.eps0 * d ** 3)) - 1))
    e13 = np.max(np.abs(curv / (3 * beta * d ** 2) - 1))
    e13b = np.max(np.abs(curv2 / (2 * alpha) - 1))
    # stretch identity from the dynamical matrix of two ions at harmonic equilibrium
    wz = TWO_PI * 1e6
    deq = single_well_distance(1e6)
    k = c.q ** 2 / (2 * np.pi * c.eps0 * deq ** 3) / c.m
    ev = np.sort(np.linalg.eigvalsh(np.array([[wz ** 2 + k, -k], [-k, wz ** 2 + k]])))
    root3 = np.sqrt(ev[1] / ev[0])
    nu_c = critical_point(27e-6)[2]
    record(4, [("identities", max(e12, e13, e13b) < 1e-13, f"{max(e12, e13, e13b):.1e}"),
               ("sqrt 3", abs(root3 - np.sqrt(3)) < 1e-10, f"{root3 - np.sqrt(3):.1e}"),
               ("d_final 9.4 um +-1%", abs(deq / 9.4e-6 - 1) <= 0.01, f"{deq * 1e6:.3f} um"),
               ("nu_crit(27 um) 345 kHz +-2%", abs(nu_c / 345e3 - 1) <= 0.02, f"{nu_c / 1e3:.1f} kHz")])


def test_c05_merge_heating(record):
    out, slow = {}, 0.0
    for T in (40e-6, 30e-6):
        t0 = time.perf_counter()
        out[T] = simulate_idealized(MergeSpec(T=T, n_val=3.0, direction="merge"))
        slow = max(slow, time.perf_counter() - t0)
    n40 = max(out[40e-6].com.n_bar, out[40e-6].str.n_bar)
    n30 = out[30e-6].str.n_bar
    record(5, [("40 us < 0.1", n40 < 0.1, f"COM {out[40e-6].com.n_bar:.2e} STR {out[40e-6].str.n_bar:.4f}"),
               ("30 us in [0.3, 3]", 0.3 <= n30 <= 3, f"STR {n30:.3f} COM {out[30e-6].com.n_bar:.2e}"),
               ("runtime < 60 s per point", slow < 60, f"{slow:.1f} s")])


def test_c06_swap_heating(record, layout):
    res = {T: simulate_swap(SwapSpec(T=T * 1e-6), layout, calculation_points(T * 1e-6), monitor=T in (18, 20))
           for T in (10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20)}
    r20, r18 = res[20], res[18]
    bad = [T for T, r in res.items() if r.n_com < r.n_str]
    record(6, [("20 us axial < 0.1", max(r20.n_com, r20.n_str) < 0.1, f"COM {r20.n_com:.4f} STR {r20.n_str:.4f}"),
               ("18 us in [0.3, 3]", 0.3 <= max(r18.n_com, r18.n_str) <= 3,
                f"COM {r18.n_com:.3f} STR {r18.n_str:.3f}"),
               ("20 us radial <= 0.1", r20.n_radial <= 0.1, f"{r20.n_radial:.4f}"),
               ("COM >= STR for T >= 10 us", not bad, f"violated at {bad} us" if bad else "10-20 us")])


def test_c07_interpolation_sensitivity(record, layout):
    spec = MergeSpec(T=40e-6, direction="merge")
    ideal = simulate_idealized(spec).str.n_bar
    n = {p: merge_real(spec, p, layout).n_bar("str") for p in (20, 50, 100)}
    record(7, [("20 > 50 > 100 points", n[20] > n[50] > n[100], f"{n[20]:.4f} {n[50]:.4f} {n[100]:.4f}"),
               ("100 points within 3x of idealized", ideal / 3 <= n[100] <= 3 * ideal,
                f"{n[100]:.4f} vs {ideal:.4f} ({n[100] / ideal:.1f}x)")])


def test_c08_voltage_feasibility(record, layout):
    vmax, budgets = {}, []
    for preset, p in cp.PRESETS.items():
        for direction in ("merge", "split"):
            w = merge_waveform(MergeSpec(T=p["merge"], direction=direction), p["merge_points"], layout)
            vmax[f"{direction} {p['merge'] * 1e6:g} us"] = w.max_abs
            budgets.append(p["merge_points"] <= int(np.floor(p["merge"] * layout.sample_rate + 1e-9)))
        w = swap_waveform(SwapSpec(T=p["swap"]), p["swap_points"], layout)
        vmax[f"swap {p['swap'] * 1e6:g} us"] = w.max_abs
        budgets.append(p["swap_points"] <= int(np.floor(p["swap"] * layout.sample_rate + 1e-9)))
    budget40 = int(np.floor(40e-6 * layout.sample_rate + 1e-9))
    try:
        check_budget(40e-6, budget40 + 1, layout)
        enforced = False
    except ValueError:
        enforced = True
    worst = max(vmax, key=vmax.get)
    record(8, [("|V| <= 50 V", vmax[worst] <= layout.voltage_limit, f"max {vmax[worst]:.1f} V ({worst})"),
               ("budget at 40 us", budget40 == 102 and layout.sample_rate == 2.55e6, f"{budget40} points"),
               ("budget enforced", enforced and all(budgets), "defaults within budget")])


def test_c09_cascade_oracle(record):
    t0 = time.perf_counter()
    rel = ab = det = 0.0
    bounds = True
    count = 0
    for _, r, a, dets, ok in run_chains(100, seed=109):
        rel, ab = max(rel, r), max(ab, a)
        det = max([det] + [abs(x - 1) for x in dets])
        bounds &= ok
        count += 1
    dt = time.perf_counter() - t0
    record(9, [("rel err < 1e-6", rel < 1e-6, f"{count} chains, max {rel:.1e}"),
               ("tiny modes abs err < 1e-10", ab < 1e-10, f"max {ab:.1e}"),
               ("triangle bounds", bounds, "held" if bounds else "violated"),
               ("det = 1 +- 1e-8", det <= 1e-8, f"max dev {det:.1e}"),
               ("runtime < 10 min", dt < 600, f"{dt:.0f} s")])


@pytest.fixture(scope="module")
def c10_results(noisy_lib):
    t0 = time.perf_counter()
    ref = cp.IonConfiguration.reference()
    start = cp.initial_node(ref)
    unit = cp.search(start, cp.pair_goal(1, 8), cp.CostPolicy("moves", (1, 8), beam=1000), noisy_lib)
    legal = cp.replay(start, unit.path, noisy_lib).config == unit.config
    cmp_ = cp.compare_policies(ref, 1, 8, noisy_lib, beam=300)
    return unit, legal, cmp_, time.perf_counter() - t0


def test_c10_compiler_benchmark(record, c10_results):
    unit, legal, cmp_, dt = c10_results
    record(10, [("legal unit-cost path", legal, "replayed"),
                ("<= 54 moves", unit.moves <= 54, f"{unit.moves} moves"),
                ("phonon reduction >= 50%", cmp_["reduction"] >= 0.5,
                 f"{cmp_['time']['max_target_n']:.2f} -> {cmp_['phonon']['max_target_n']:.3f}, "
                 f"{100 * cmp_['reduction']:.0f}%"),
                ("runtime < 10 min", dt < 600, f"{dt:.0f} s")])


def _a2a_policy(a, b, noise=None):
    return cp.CostPolicy("max_n_all", (a, b), beam=100, waits=WAITS, phonon_weight=cp.A2A_PHONON_WEIGHT, noise=noise)


@pytest.fixture(scope="module")
def a2a(near_lib):
    t0 = time.perf_counter()
    ref = cp.IonConfiguration.reference()
    order = cp.edge_order(ref, near_lib, beam=200)
    rows = cp.all_to_all(ref, near_lib, "B", beam=100, order=order, waits=WAITS)
    return order, rows, time.perf_counter() - t0


def test_c11_all_to_all(record, near_lib, a2a):
    order, rows, dt = a2a
    done = [r for r in rows if not r.get("failed")]
    worst = max(r["max_n"] for r in done)
    # replay every leg from its serialized path and compare costs bit for bit
    node = cp.initial_node(cp.IonConfiguration.reference())
    identical = True
    for r in done:
        a, b = r["pair"]
        path = [cp.Instruction.parse(p) for p in r["path"]]
        nxt = cp.replay(replace(node, path=()), path, near_lib, _a2a_policy(a, b))
        same = (nxt.max_n() == r["max_n"] and nxt.elapsed * 1e6 == r["time_us"] and nxt.moves == r["moves"]
                and all(nxt.ion_n(k) == v for k, v in ((int(k), v) for k, v in r["n_per_ion"].items())))
        identical &= same
        node = nxt
    fb = sum(r["fallback"] for r in done)
    record(11, [("28 edges", len(done) == 28, f"{len(done)} edges, {fb} unit-path legs"),
                ("max n < 1e4 per edge", worst < 1e4, f"max {worst:.2f}"),
                ("bit-identical replay", identical, "all legs" if identical else "mismatch"),
                ("runtime < 30 min", dt < 1800, f"{dt:.0f} s")])


def _ion_omega(st, label):
    key = str(label)
    if key in st.modes:
        return st.modes[key].omega
    return next(m.omega for k, m in st.modes.items() if k.endswith(":com") and key in k.split(":")[0].split("+"))


def test_c12_noise_overlay(record, noisy_lib, near_lib, c10_results, a2a):
    zero = NoiseSpectrum.flat(0.0)
    _, _, cmp_, _ = c10_results
    cmp_zero = cp.compare_policies(cp.IonConfiguration.reference(), 1, 8, noisy_lib, beam=300, noise=zero)
    order, rows, _ = a2a
    rows_zero = cp.all_to_all(cp.IonConfiguration.reference(), near_lib, "B", beam=100, order=order[:6],
                              waits=WAITS, noise=zero)
    unchanged = cmp_zero == cmp_ and rows_zero == rows[:6]
    # flat spectrum on the time-weighted (1, 8) path: totals = transport + sum of rate * duration
    S = 1e-12
    path = [cp.Instruction.parse(p) for p in cmp_["time"]["path"]]
    start = cp.initial_node(cp.IonConfiguration.reference())
    noisy = cp.replay(start, path, noisy_lib, cp.CostPolicy("moves", noise=NoiseSpectrum.flat(S)))
    quiet, node = cp.replay(start, path, noisy_lib), start
    extra = dict.fromkeys(start.config.labels, 0.0)
    for ins in path:
        node = cp.apply(node, ins, noisy_lib)
        T = noisy_lib.duration(ins)
        for k in extra:
            extra[k] += S * BE9.q ** 2 / (4 * BE9.m * BE9.hbar * _ion_omega(node.motional, k)) * T
    err = max(abs(noisy.ion_n(k) - (quiet.ion_n(k) + extra[k])) / noisy.ion_n(k) for k in extra)
    record(12, [("zero spectrum unchanged", unchanged, "compare (1, 8) and first 6 all-to-all edges"),
                ("flat spectrum additive", err < 1e-10, f"rel err {err:.1e}, added up to {max(extra.values()):.3f}")])
