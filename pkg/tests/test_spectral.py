import json

import numpy as np
import pytest

from strominger.spectral import (
    BaseForm,
    BidegreeError,
    PeriodicGrid,
    asd_forms,
    complex_hessian,
    d,
    del_,
    delbar,
    holomorphic_volume,
    inner,
    integrate,
    kahler_form,
    load_form,
    monomials,
    save_form,
    scalar,
    star_base,
    top_density,
    trace_against,
    volume_form,
    wedge,
)


@pytest.fixture(scope="module")
def grid():
    return PeriodicGrid(8)


def random_form(grid, rng, p, q, kmax=2):
    x = grid.x
    terms = {}
    for m in monomials(p, q):
        f = np.zeros(grid.shape, dtype=complex)
        for _ in range(3):
            k = rng.integers(-kmax, kmax + 1, size=4)
            f = f + rng.normal() * np.exp(1j * sum(ki * xi for ki, xi in zip(k, x)))
        terms[m] = f
    return BaseForm(grid, terms)


def test_grid_validation():
    for n in (6, 9):
        with pytest.raises(ValueError):
            PeriodicGrid(n)
    g = PeriodicGrid(8)
    assert g.spacing == pytest.approx(2 * np.pi / 8)


def test_plane_wave_derivatives(grid):
    x1, x2, x3, x4 = grid.x
    f = np.exp(1j * (2 * x1 - x2 + 3 * x4)) * np.ones(grid.shape)
    dz1, dz2, dzb1, dzb2 = grid.partials(f)
    # d/dz1 = (d/dx1 - i d/dx2)/2
    assert np.max(np.abs(dz1 - 0.5 * (2j - 1j * (-1j)) * f)) < 1e-12
    assert np.max(np.abs(dzb2 - 0.5 * (0 + 1j * 3j) * f)) < 1e-12
    assert np.max(np.abs(dz2 - 0.5 * (0 - 1j * 3j) * f)) < 1e-12
    assert np.max(np.abs(dzb1 - 0.5 * (2j + 1j * (-1j)) * f)) < 1e-12


def test_kahler_and_volume(grid):
    w = kahler_form(grid)
    assert np.allclose(top_density(wedge(w, w)), 2.0)
    assert np.allclose(top_density(volume_form(grid)), 1.0)
    assert abs(integrate(volume_form(grid)) - (2 * np.pi) ** 4) < 1e-9


def test_star_examples(grid):
    assert np.allclose(top_density(star_base(scalar(grid, 1.0))), 1.0)
    w = kahler_form(grid)
    assert (star_base(w) - w).max_norm() < 1e-12
    omega1 = BaseForm(grid, {(0, 2): 0.5j, (1, 3): -0.5j})
    assert (star_base(omega1) + omega1).max_norm() < 1e-12


def test_trace_examples(grid):
    w = kahler_form(grid)
    assert np.allclose(trace_against(w), 2.0)
    assert np.allclose(trace_against(BaseForm(grid, {(0, 2): 0.5j, (1, 3): -0.5j})), 0.0)
    # Lambda(i dz1 ^ dz1b) = 2 with omega_B = (i/2) sum dz ^ dzb
    assert np.allclose(trace_against(BaseForm(grid, {(0, 2): 1j})), 2.0)
    with pytest.raises(BidegreeError):
        trace_against(BaseForm(grid, {(0, 1): 1.0}))


def test_integrate_examples(grid):
    x1 = grid.x[0]
    assert abs(integrate(volume_form(grid) * np.exp(1j * x1 * np.ones(grid.shape)))) < 1e-9
    omega1 = BaseForm(grid, {(0, 2): 0.5j, (1, 3): -0.5j})
    assert integrate(wedge(omega1, omega1)) == pytest.approx(-2 * (2 * np.pi) ** 4)
    with pytest.raises(BidegreeError):
        integrate(omega1)


def test_asd_basis(grid):
    for a in asd_forms(grid):
        assert a.bidegree == (1, 1) and a.is_real()
        assert np.allclose(trace_against(a), 0)
        assert (star_base(a) + a).max_norm() < 1e-12
        assert np.allclose(top_density(wedge(a, a)), -2)
    a = asd_forms(grid)
    for i in range(3):
        for j in range(i + 1, 3):
            assert np.allclose(top_density(wedge(a[i], a[j])), 0)


def test_holomorphic_volume_normalization(grid):
    psi = holomorphic_volume(grid)
    # i^4 psi ^ conj(psi) against vol: psi ^ psib = vol / 2
    assert np.allclose(top_density(wedge(psi, psi.conj())), 0.5)
    raw = holomorphic_volume(grid, normalized=False)
    assert np.allclose(top_density(wedge(raw, raw.conj())), 4.0)


def test_del_delbar_anticommute(grid):
    rng = np.random.default_rng(3)
    for p, q in [(0, 0), (1, 0), (0, 1), (1, 1)]:
        f = random_form(grid, rng, p, q)
        res = (del_(delbar(f)) + delbar(del_(f))).max_norm()
        assert res <= 1e-10 * max(f.max_norm(), 1)


def test_bidegree_overflow(grid):
    with pytest.raises(BidegreeError):
        del_(BaseForm(grid, {(0, 1): 1.0}))
    with pytest.raises(BidegreeError):
        delbar(BaseForm(grid, {(2, 3): 1.0}))


def test_stokes(grid):
    rng = np.random.default_rng(4)
    f = random_form(grid, rng, 2, 1) + random_form(grid, rng, 1, 2)
    assert abs(integrate(d(f))) <= 1e-10 * f.max_norm() * grid.volume


def test_star_involution_and_asd_primitive(grid):
    rng = np.random.default_rng(5)
    f = random_form(grid, rng, 1, 1) + random_form(grid, rng, 2, 0) + random_form(grid, rng, 0, 2)
    assert (star_base(star_base(f)) - f).max_norm() < 1e-10 * f.max_norm()
    # constant real primitive (1,1)-forms are anti-self-dual
    c = rng.normal(size=3)
    form = sum((a * ci for a, ci in zip(asd_forms(grid), c)), BaseForm(grid))
    assert np.allclose(trace_against(form), 0) and (star_base(form) + form).max_norm() < 1e-12


def test_inner_matches_star(grid):
    rng = np.random.default_rng(6)
    a, b = random_form(grid, rng, 1, 1), random_form(grid, rng, 1, 1)
    assert np.allclose(top_density(wedge(a, star_base(b))), inner(a, b))


def test_complex_hessian(grid):
    x1 = grid.x[0]
    u = np.broadcast_to(0.1 * np.cos(x1), grid.shape)
    H = complex_hessian(grid, u)
    assert np.allclose(H[..., 0, 0], -0.025 * np.cos(x1))
    assert np.allclose(H[..., 1, 1], 0) and np.allclose(H[..., 0, 1], 0)


def test_save_load_roundtrip(tmp_path, grid):
    rng = np.random.default_rng(7)
    f = random_form(grid, rng, 1, 1)
    save_form(tmp_path / "f", f, {"role": "test"})
    g = load_form(tmp_path / "f")
    assert (g - f).max_norm() == 0
    m = BaseForm(grid, {(2,): np.ones(grid.shape + (2, 1))}, (2, 1))
    save_form(tmp_path / "m", m)
    assert load_form(tmp_path / "m").value_shape == (2, 1)
    meta = json.loads((tmp_path / "f.json").read_text())
    assert meta["N"] == 8 and meta["bidegree"] == [1, 1]
