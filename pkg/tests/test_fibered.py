from itertools import combinations

import numpy as np
import pytest

from strominger.fibered import (
    AnsatzData,
    AnsatzError,
    FiberedForm,
    build_omega_u,
    chi,
    d_total,
    del_total,
    delbar_total,
    fiber_wedge,
    psi_norm,
    psi_norm_from_metric,
    psi_norm_squared,
    structure_residuals,
    theta,
    thetabar,
)
from strominger.spectral import BaseForm, PeriodicGrid, asd_forms, kahler_form, scalar


@pytest.fixture(scope="module")
def grid():
    return PeriodicGrid(8)


@pytest.fixture(scope="module")
def data(grid):
    return AnsatzData.from_classes(grid, [1, 2, 0], [0, -1, 3])


def random_fibered(grid, rng, k):
    x1, x2, x3, x4 = grid.x
    slots = []
    for fd in (0, 1, 1, 2):
        bd = k - fd
        if not 0 <= bd <= 4:
            slots.append(None)
            continue
        terms = {m: rng.normal() * np.cos(x1 + 2 * x3) + 1j * rng.normal() * np.sin(x2 - x4) for m in combinations(range(4), bd)}
        slots.append(BaseForm(grid, terms))
    return FiberedForm(grid, *slots)


def test_d_theta(grid, data):
    out = d_total(theta(grid), data.W)
    assert (out.slots[0] - data.W).max_norm() == 0 and all(s.max_norm() == 0 for s in out.slots[1:])
    assert (d_total(thetabar(grid), data.W).slots[0] - data.W.conj()).max_norm() == 0


def test_d_chi(grid, data):
    W = data.W
    expected = FiberedForm(grid, s1=W.conj() * (-0.5j), s2=W * 0.5j)
    assert (d_total(chi(grid), W) - expected).max_norm() < 1e-15


def test_d_squared_and_splitting(grid, data):
    rng = np.random.default_rng(11)
    for k in range(6):
        f = random_fibered(grid, rng, k)
        scale = max(f.max_norm(), 1.0)
        assert d_total(d_total(f, data.W), data.W).max_norm() <= 1e-10 * scale
        split = del_total(f, data.W) + delbar_total(f, data.W) - d_total(f, data.W)
        assert split.max_norm() <= 1e-12 * scale


def test_mixed_degree_rejected(grid):
    with pytest.raises(AnsatzError):
        FiberedForm(grid, scalar(grid, 1.0), BaseForm(grid, {(0,): 1.0}))


def test_conj_and_wedge(grid):
    th, tb = theta(grid), thetabar(grid)
    assert (fiber_wedge(th, tb) + fiber_wedge(tb, th)).max_norm() == 0
    assert fiber_wedge(th, th).max_norm() == 0
    assert (chi(grid).conj() - chi(grid)).max_norm() == 0


def test_omega_u_examples(grid, data):
    w0 = build_omega_u(0.0, data)
    assert (w0.slots[0] - kahler_form(grid)).max_norm() == 0
    assert np.allclose(w0.slots[3].component(()), 0.5j)
    w2 = build_omega_u(np.log(2.0), data)
    assert (w2.slots[0] - kahler_form(grid) * 2.0).max_norm() < 1e-15
    assert np.allclose(w2.slots[3].component(()), 0.5j)


def test_psi_norm(grid, data):
    assert np.allclose(psi_norm(np.zeros(grid.shape), data), 1.0)
    assert np.allclose(psi_norm(np.full(grid.shape, np.log(2.0)), data), 0.5)
    assert np.allclose(psi_norm_squared(np.log(2.0)), 0.25)
    u = 0.1 * np.cos(grid.x[0]) * np.ones(grid.shape)
    assert np.allclose(psi_norm_from_metric(u, data), np.exp(-u), rtol=1e-12)
    assert np.allclose(psi_norm(u, data) ** 2, psi_norm_squared(u))


def test_ansatz_validation(grid):
    a = asd_forms(grid)
    with pytest.raises(AnsatzError, match="not primitive"):
        AnsatzData(a[0] + kahler_form(grid) * 0.3)
    with pytest.raises(AnsatzError, match="not closed"):
        AnsatzData(a[0] * np.cos(grid.x[0]) * np.ones(grid.shape))
    with pytest.raises(AnsatzError, match="type"):
        AnsatzData(BaseForm(grid, {(0, 1): 1.0}))
    AnsatzData(a[0] + kahler_form(grid) * 0.3, strict=False)


def test_structure_valid_constant(grid, data):
    rep = structure_residuals(np.zeros(grid.shape), data)
    assert rep.ok and max(rep.residuals.values()) <= 1e-10


def test_structure_varying_u():
    g = PeriodicGrid(16)
    data = AnsatzData.from_classes(g, [1, 0, -1], [2, 1, 0])
    u = 0.1 * np.cos(g.x[0]) * np.ones(g.shape)
    rep = structure_residuals(u, data)
    assert rep.residuals["conformally_balanced"] <= 1e-8 and rep.ok
    assert '"conformally_balanced"' in rep.to_json()


def test_balanced_iff_primitive(grid, data):
    assert structure_residuals(0.0, data).residuals["balanced"] <= 1e-12
    for bad_W in (data.W + kahler_form(grid) * 0.3, data.W + kahler_form(grid) * 0.2j):
        bad = AnsatzData(bad_W, strict=False)
        rep = structure_residuals(0.0, bad)
        assert not rep.passed["balanced"] and not rep.passed["omega_B_wedge_W"]
    rep = structure_residuals(0.0, AnsatzData(data.W + kahler_form(grid) * 0.3, strict=False))
    # |trace| * |omega_B^2/2|: trace of 0.3 omega_B is 0.6
    assert rep.residuals["omega_B_wedge_W"] == pytest.approx(0.6)


def test_wrong_weight_is_not_closed():
    g = PeriodicGrid(16)
    data = AnsatzData.from_classes(g, [1, 0, 0], [0, 1, 0])
    u = 0.1 * np.cos(g.x[0]) * np.ones(g.shape)
    omega = build_omega_u(u, data)
    weighted = fiber_wedge(omega, omega) * psi_norm_squared(u)
    assert d_total(weighted, data.W).max_norm() > 1e-3
