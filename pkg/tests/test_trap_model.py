import json

import numpy as np
import pytest
from scipy.integrate import dblquad

from qccdsim.trap_model import (DomainError, LayoutError, TrapLayout, default_layout_path, find_rf_null,
                                layout_diagnostics, pseudopotential, rf_field, static_potential, unit_gradient,
                                unit_potential)


def test_unit_potential_large_plate():
    # the exact edge deficit at z = 1 um over a 1 m plate is 1.8e-6
    v = unit_potential(np.array([-0.5, 0.5, -0.5, 0.5]), [0, 0, 1e-6])[0]
    assert 0 < 1 - v < 2e-6
    a = b = 0.5
    z = 1e-6
    omega = 4 * np.arcsin(a * b / np.sqrt((a * a + z * z) * (b * b + z * z)))  # centred-rectangle solid angle
    assert v == pytest.approx(omega / (2 * np.pi), abs=1e-9)


def test_unit_potential_far_field():
    v = unit_potential(np.array([0, 10e-6, 0, 10e-6]), [0, 0, 1.0])
    assert v[0] < 1e-8


def test_unit_potential_quadrature():
    # grounded-plane Green's function: phi = (z / 2 pi) * integral of dA / R^3
    z = 0.5
    val, _ = dblquad(lambda y, x: z / (2 * np.pi) / ((x - 0.5) ** 2 + (y - 0.5) ** 2 + z * z) ** 1.5,
                     0, 1, 0, 1, epsabs=1e-13, epsrel=1e-13)
    got = unit_potential(np.array([0, 1, 0, 1]), [0.5, 0.5, z])[0]
    assert abs(got - val) < 1e-6


def test_unit_potential_bounds_and_domain():
    rng = np.random.default_rng(0)
    r = np.column_stack([rng.uniform(-2e-4, 2e-4, 200), rng.uniform(-2e-4, 2e-4, 200), rng.uniform(1e-6, 3e-4, 200)])
    v = unit_potential(np.array([0, 50e-6, -20e-6, 30e-6]), r)
    assert np.all(v >= 0) and np.all(v <= 1)
    with pytest.raises(DomainError):
        unit_potential(np.array([0, 1, 0, 1]), [0, 0, 0.0])


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    rect = np.array([-30e-6, 40e-6, 10e-6, 90e-6])
    for _ in range(20):
        r = np.array([rng.uniform(-1e-4, 1e-4), rng.uniform(-1e-4, 1e-4), rng.uniform(3e-5, 1.5e-4)])
        g = unit_gradient(rect, r)[0]
        h = 1e-9
        fd = np.array([(unit_potential(rect, r + h * e) - unit_potential(rect, r - h * e))[0] / (2 * h)
                       for e in np.eye(3)])
        assert np.allclose(g, fd, rtol=1e-6, atol=1e-6 * np.abs(g).max())


def test_static_potential_zero_and_linearity(layout):
    r = np.array([0, -16e-6, 60e-6])
    zero = static_potential(layout, {g: 0.0 for g in layout.dc_groups}, r)
    assert zero.potential == 0 and not np.any(zero.gradient) and not np.any(zero.hessian)
    rng = np.random.default_rng(2)
    va = {g: rng.uniform(-5, 5) for g in layout.dc_groups}
    vb = {g: rng.uniform(-5, 5) for g in layout.dc_groups}
    fa, fb = static_potential(layout, va, r), static_potential(layout, vb, r)
    fab = static_potential(layout, {g: va[g] + vb[g] for g in va}, r)
    assert np.allclose(fab.potential, fa.potential + fb.potential, rtol=1e-12)
    assert np.allclose(fab.hessian, fa.hessian + fb.hessian, rtol=1e-10, atol=1e-6)
    f2 = static_potential(layout, {g: 2 * v for g, v in va.items()}, r)
    assert f2.potential == pytest.approx(2 * fa.potential, rel=1e-14)
    assert np.allclose(f2.gradient, 2 * fa.gradient, rtol=1e-14)


def test_static_potential_harmonic(layout):
    rng = np.random.default_rng(3)
    v = {g: rng.uniform(-5, 5) for g in layout.dc_groups}
    for _ in range(5):
        r = np.array([rng.uniform(-1e-4, 1e-4), rng.uniform(-5e-5, 5e-5), rng.uniform(4e-5, 1e-4)])
        H = static_potential(layout, v, r).hessian
        assert abs(np.trace(H)) < 1e-6 * np.abs(H).max()
        assert np.allclose(H, H.T, atol=1e-9 * np.abs(H).max())


def test_static_potential_missing_group(layout):
    with pytest.raises(LayoutError):
        static_potential(layout, {}, [0, 0, 5e-5])


def test_static_symmetry(layout):
    # mirror-symmetric gate zone: symmetric voltages give no axial field at x = 0
    gates = list(layout.gate_groups)
    rects = {g: layout.group_rects(g) for g in gates}
    v = {g: 0.0 for g in layout.dc_groups}
    for g in gates:
        cx = rects[g][:, :2].mean()
        if abs(cx) < 1e-9:
            v[g] = 3.0
    mirrored = {}
    for g in gates:
        cx = rects[g][:, :2].mean()
        mirrored[g] = 1.0 + abs(cx) * 1e4
    v.update(mirrored)
    f = static_potential(layout, v, [0, -16e-6, 60e-6])
    assert abs(f.gradient[0]) < 1e-9 * np.abs(f.gradient).max() + 1e-9


def test_pseudopotential_null(layout):
    r0 = find_rf_null(layout)
    E = rf_field(layout, r0)[0]
    assert np.linalg.norm(E[1:]) < 1e-3
    p = pseudopotential(layout, r0)
    assert p.potential >= 0
    assert np.linalg.norm(p.gradient[1:]) < 1e-3 * np.abs(p.hessian).max() * 1e-6
    Hr = p.hessian[1:, 1:]
    ev = np.linalg.eigvalsh(Hr)
    assert np.all(ev > 0)
    # a 2D quadrupole field makes the null isotropic in y-z; only finite-rail terms split it
    assert abs(Hr[0, 0] - Hr[1, 1]) < 1e-5 * ev.max()
    assert Hr[0, 0] == pytest.approx(1.00865e8, rel=1e-4)
    # regression baseline for the shipped layout
    assert r0[1] == pytest.approx(-16.66e-6, abs=0.05e-6)
    assert r0[2] == pytest.approx(59.62e-6, abs=0.05e-6)


def test_pseudopotential_scales_quadratically(layout):
    from dataclasses import replace
    r = np.array([0, 0, 70e-6])
    lay2 = replace(layout, rf_amplitude=2 * layout.rf_amplitude, _cache={})
    assert pseudopotential(lay2, r).potential == pytest.approx(4 * pseudopotential(layout, r).potential, rel=1e-12)


def test_null_translation_invariance(layout):
    a, b = find_rf_null(layout, 0.0), find_rf_null(layout, 30e-6)
    assert abs(a[2] - b[2]) < 1e-8


def test_symmetric_rf_pair_null_on_symmetry_plane():
    from qccdsim.trap_model import RectElectrode
    els = (RectElectrode("rf1", (-5e-3, 5e-3), (-150e-6, -50e-6), "RF"),
           RectElectrode("rf2", (-5e-3, 5e-3), (50e-6, 150e-6), "RF"),
           RectElectrode("dc", (-5e-3, 5e-3), (-50e-6, 50e-6), "DC"))
    pos = tuple(np.arange(20) * 50e-6 - 475e-6)
    lay = TrapLayout(els, 2 * np.pi * 88.8e6, 63.5, pos, (8, 9, 10, 11))
    r0 = find_rf_null(lay)
    assert abs(r0[1]) < 1e-9


def test_default_layout_diagnostics():
    doc = json.loads(default_layout_path().read_text())
    assert layout_diagnostics(doc) == []
    doc["voltage_limit_V"] = 0
    diags = layout_diagnostics(doc)
    assert diags and diags[0].startswith("/voltage_limit_V")
    doc["voltage_limit_V"] = 50
    doc["bogus"] = 1
    assert layout_diagnostics(doc)


def test_default_layout_structure(layout):
    assert len(layout.gate_groups) == 14
    assert len(layout.resting_positions) == 20
    assert np.all(np.diff(layout.resting_positions) > 0)
