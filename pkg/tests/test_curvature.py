import numpy as np
import pytest

from strominger.curvature import (
    CurvatureError,
    HermitianMatrixField,
    PotentialMatrix,
    assemble_total_metric,
    curvature,
    hym_residual,
    rho_from_potential,
    rr_identity_residual,
    total_curvature,
    traceless_exp,
)
from strominger.spectral import (
    BaseForm,
    PeriodicGrid,
    asd_forms,
    del_,
    delbar,
    kahler_form,
    matrix_trace,
    scalar,
)


@pytest.fixture(scope="module")
def grid():
    return PeriodicGrid(16)


def metric(grid, amp=1.0):
    x1, x2, x3, x4 = grid.x
    return traceless_exp(grid, amp * (0.3 * np.cos(x1) + 0.1 * np.sin(x3 + x4)),
                         amp * (0.2 * np.exp(1j * x2) + 0.1 * np.sin(x1 - x3)))


def periodic_potential(grid):
    x1, x2, x3, x4 = grid.x
    ones = np.ones(grid.shape)
    return np.stack([(0.2 * np.sin(x1 + x4) + 0.1j * np.cos(x2)) * ones, 0.1 * np.cos(x3) * ones], -1)


LIN = np.array([[0.3, 0.1j], [0.0, -0.2]])


def test_flat_metrics_have_zero_curvature(grid):
    assert curvature(HermitianMatrixField.identity(grid)).max_norm() == 0
    M = np.array([[2.0, 0.5 - 0.3j], [0.5 + 0.3j, 1.0]])
    assert curvature(HermitianMatrixField(grid, M)).max_norm() < 1e-14


def test_line_bundle_curvature(grid):
    x1, x3 = grid.x[0], grid.x[2]
    u = np.broadcast_to(0.2 * np.cos(x1) + 0.1 * np.sin(x1 + x3), grid.shape)
    R = curvature(HermitianMatrixField(grid, np.exp(u)[..., None, None]))
    expected = delbar(del_(scalar(grid, u)))
    assert (R.map_values(lambda c: c[..., 0, 0]) - expected).max_norm() < 1e-10
    # same as -ddb u under del delbar = -delbar del
    assert (R.map_values(lambda c: c[..., 0, 0]) + del_(delbar(scalar(grid, u)))).max_norm() < 1e-10


def test_singular_metric_reports_location(grid):
    vals = np.broadcast_to(np.eye(2, dtype=complex), grid.shape + (2, 2)).copy()
    vals[1, 2, 3, 4] = np.diag([1.0, -1.0])
    with pytest.raises(CurvatureError, match=r"\(1, 2, 3, 4\)"):
        curvature(HermitianMatrixField(grid, vals))
    vals[1, 2, 3, 4] = [[1.0, 1.0], [0.0, 1.0]]
    with pytest.raises(CurvatureError, match="Hermitian"):
        HermitianMatrixField(grid, vals).check()


def test_curvature_reality(grid):
    G = metric(grid).scaled(0.2 * np.cos(grid.x[1] + grid.x[3]))
    X = curvature(G).map_values(lambda c: c @ G.values)
    assert (X.dagger() + X).max_norm() < 1e-8


def test_conformal_shift(grid):
    G = metric(grid)
    u = np.broadcast_to(0.1 * np.cos(grid.x[0]) + 0.05 * np.sin(grid.x[1] - grid.x[2]), grid.shape)
    shift = delbar(del_(scalar(grid, u))).map_values(lambda c: c[..., None, None] * np.eye(2))
    assert (curvature(G.scaled(u)) - curvature(G) - shift).max_norm() < 1e-9


def test_trace_is_log_det(grid):
    G = metric(grid).scaled(0.1 * np.sin(grid.x[3]))
    tr = matrix_trace(curvature(G))
    logdet = np.real(np.log(G.det()))
    assert (tr - delbar(del_(scalar(grid, logdet)))).max_norm() < 1e-9
    assert matrix_trace(curvature(metric(grid))).max_norm() < 1e-9


def test_assemble_examples(grid):
    G_B = metric(grid)
    zero = assemble_total_metric(G_B, PotentialMatrix(grid))
    assert np.allclose(zero.values[..., :2, :2], G_B.values) and np.allclose(zero.values[..., :2, 2], 0)
    c = 0.3 - 0.4j
    per = np.zeros(grid.shape + (2,), dtype=complex)
    per[..., 0] = c
    M = assemble_total_metric(HermitianMatrixField.identity(grid), PotentialMatrix(grid, per)).values
    assert np.allclose(M[..., 0, 0], 1 + abs(c) ** 2)
    assert np.allclose(M[..., 0, 2], c) and np.allclose(M[..., 2, 0], np.conj(c))
    full = assemble_total_metric(G_B, PotentialMatrix(grid, periodic_potential(grid), LIN))
    assert np.allclose(full.det(), G_B.det())


def test_gauge_factored_curvature_matches_direct(grid):
    G_B = metric(grid)
    A = PotentialMatrix(grid, periodic_potential(grid))
    R = curvature(assemble_total_metric(G_B, A))
    a = A.values()
    B = np.broadcast_to(np.eye(3, dtype=complex), grid.shape + (3, 3)).copy()
    B[..., :2, 2] = a
    Binv = np.linalg.inv(B)
    conj = R.map_values(lambda c: Binv @ c @ B)
    assert (conj - total_curvature(G_B, A)).max_norm() < 1e-7 * R.max_norm()


def test_potential_from_closed_form(grid):
    a = asd_forms(grid)
    W = a[0] * 0.3 + a[2] * 0.1j
    P = PotentialMatrix.from_closed_form(W)
    assert (P.dbar_alpha() - W).max_norm() < 1e-14


def test_rho_examples(grid):
    I = HermitianMatrixField.identity(grid)
    assert rho_from_potential(PotentialMatrix(grid), I).max_norm() == 0
    L = np.array([[0.3 + 0.1j, -0.2], [0.05j, 0.4]])
    rho = rho_from_potential(PotentialMatrix(grid, None, L), I)
    # hand expansion: rho = i sum_{l,j} (L^* L)_{lj} dz_l ^ dzb_j
    LL = L.conj().T @ L
    expected = BaseForm(grid, {(l, 2 + j): 1j * LL[l, j] for l in range(2) for j in range(2)})
    assert (rho - expected).max_norm() < 1e-14
    assert rho.is_real(1e-12) and rho.bidegree == (1, 1)


def test_rho_scaling_and_gauge(grid):
    G_B = metric(grid)
    u = 0.1 * np.cos(grid.x[0]) * np.ones(grid.shape)
    A = PotentialMatrix(grid, periodic_potential(grid), LIN)
    rho = rho_from_potential(A, G_B)
    assert (rho_from_potential(A, G_B.scaled(u)) - rho * np.exp(-u)).max_norm() < 1e-13
    shifted = PotentialMatrix(grid, periodic_potential(grid) + np.array([0.7, -0.2j]), LIN)
    assert (rho_from_potential(shifted, G_B) - rho).max_norm() < 1e-13


def test_rr_identity_trivial_cases(grid):
    I = HermitianMatrixField.identity(grid)
    assert rr_identity_residual(np.zeros(grid.shape), I, PotentialMatrix(grid)) == 0
    u = np.broadcast_to(0.1 * np.cos(grid.x[0]), grid.shape)
    assert rr_identity_residual(u, I, PotentialMatrix(grid)) <= 1e-8


def test_rr_identity_converges():
    res = []
    for n in (8, 12):
        g = PeriodicGrid(n)
        u = 0.1 * np.cos(g.x[0]) * np.ones(g.shape)
        res.append(rr_identity_residual(u, metric(g, 0.5), PotentialMatrix(g, None, LIN)))
    assert res[1] < res[0] / 10


def test_hym_examples(grid):
    assert hym_residual(BaseForm(grid, {}, (2, 2))) == (0.0, 0.0)
    diag = np.diag([1j, -1j])
    F = asd_forms(grid)[0].map_values(lambda c: c[..., None, None] * diag)
    first, second = hym_residual(F, kahler_form(grid))
    assert first <= 1e-10 and second <= 1e-10
    bad = kahler_form(grid).map_values(lambda c: c[..., None, None] * diag)
    first, _ = hym_residual(bad, kahler_form(grid))
    assert first == pytest.approx(2.0)
    mixed = BaseForm(grid, {(2, 3): 0.5}).map_values(lambda c: c[..., None, None] * diag)
    assert hym_residual(mixed)[1] == pytest.approx(0.5)
