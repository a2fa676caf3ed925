"""Chern curvature of Hermitian matrix fields on the flat torus.

Conventions (fixed once for the whole package): the Chern curvature of a
Hermitian matrix ``G`` in a holomorphic frame is ``delbar(del G . G^-1)``, and
``del delbar = -delbar del``.  With these, ``curvature(e^u G) = curvature(G)
+ delbar del u . I``.

The 3x3 metric of the torus-bundle ansatz is::

    G = [[G_B + A A^*, A],
         [A^*,         1]]

where ``A = (alpha_1, alpha_2)^t`` is a local potential, ``delbar alpha =
d theta``.  For constant ``d theta`` the potential is linear in ``zb`` and not
periodic, so the curvature of ``G`` is computed after the factorisation
``G = B diag(G_B, 1) B^*`` with ``B = [[I, A], [0, 1]]``: in the frame
``B`` the connection and curvature only involve ``del A`` and ``delbar A``,
which are periodic.  Conjugation by ``B`` leaves ``tr(R ^ R)`` unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import (
    BaseForm,
    PeriodicGrid,
    del_,
    delbar,
    kahler_form,
    matrix_trace,
    scalar,
    top_density,
    wedge,
)

__all__ = [
    "CurvatureError",
    "HermitianMatrixField",
    "PotentialMatrix",
    "curvature",
    "assemble_total_metric",
    "total_curvature",
    "rho_from_potential",
    "rr_identity_sides",
    "rr_identity_residual",
    "hym_residual",
    "traceless_exp",
]


class CurvatureError(ValueError):
    """Non-Hermitian or non-positive metric data."""


@dataclass(frozen=True)
class HermitianMatrixField:
    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.ndim == 2:
            v = np.broadcast_to(v, self.grid.shape + v.shape).copy()
        if v.shape[:4] != self.grid.shape or v.ndim != 6 or v.shape[-1] != v.shape[-2]:
            raise CurvatureError(f"expected shape {self.grid.shape} + (r, r), got {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def size(self) -> int:
        return self.values.shape[-1]

    @classmethod
    def identity(cls, grid: PeriodicGrid, r: int = 2) -> "HermitianMatrixField":
        return cls(grid, np.eye(r, dtype=complex))

    def scaled(self, u: np.ndarray) -> "HermitianMatrixField":
        """``e^u G`` for a real scalar field ``u``."""
        return HermitianMatrixField(self.grid, np.exp(u)[..., None, None] * self.values)

    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.values)

    def det(self) -> np.ndarray:
        return np.linalg.det(self.values)

    def check(self, atol: float = 1e-12) -> None:
        """Raise unless Hermitian and positive definite at every grid point."""
        v = self.values
        scale = max(float(np.max(np.abs(v))), 1.0)
        herm = np.max(np.abs(v - np.conj(np.swapaxes(v, -1, -2))))
        if herm > atol * scale:
            raise CurvatureError(f"matrix field is not Hermitian (defect {herm:.3e})")
        lam = np.linalg.eigvalsh(v)[..., 0]
        if np.min(lam) <= 0:
            where = np.unravel_index(np.argmin(lam), lam.shape)
            raise CurvatureError(
                f"matrix field is not positive definite at grid point {tuple(int(i) for i in where)} "
                f"(smallest eigenvalue {np.min(lam):.3e})"
            )


def traceless_exp(grid: PeriodicGrid, a: np.ndarray, b: np.ndarray) -> HermitianMatrixField:
    """``exp([[a, b], [conj b, -a]])`` for real ``a`` and complex ``b``: det = 1."""
    a = np.asarray(a, dtype=float) * np.ones(grid.shape)
    b = np.asarray(b, dtype=complex) * np.ones(grid.shape)
    lam = np.sqrt(a**2 + np.abs(b) ** 2)
    ch = np.cosh(lam)
    sh = np.where(lam > 0, np.sinh(lam) / np.where(lam > 0, lam, 1.0), 1.0)
    G = np.empty(grid.shape + (2, 2), dtype=complex)
    G[..., 0, 0] = ch + sh * a
    G[..., 1, 1] = ch - sh * a
    G[..., 0, 1] = sh * b
    G[..., 1, 0] = sh * np.conj(b)
    return HermitianMatrixField(grid, G)


@dataclass(frozen=True)
class PotentialMatrix:
    """Column ``A = (alpha_1, alpha_2)`` with ``alpha_k = alpha(d/dz_k)``.

    ``alpha_k = periodic_k + sum_j dbar_linear[k, j] * zb_j``; only the
    periodic part is sampled for derivatives, the linear part contributes the
    constant ``dbar_linear``.
    """

    grid: PeriodicGrid
    periodic: np.ndarray | None = None
    dbar_linear: np.ndarray | None = None

    def __post_init__(self):
        per = np.zeros(self.grid.shape + (2,), dtype=complex) if self.periodic is None else np.asarray(self.periodic, dtype=complex)
        lin = np.zeros((2, 2), dtype=complex) if self.dbar_linear is None else np.asarray(self.dbar_linear, dtype=complex)
        if per.shape != self.grid.shape + (2,) or lin.shape != (2, 2):
            raise CurvatureError("potential needs periodic part of shape grid+(2,) and a 2x2 linear part")
        object.__setattr__(self, "periodic", per)
        object.__setattr__(self, "dbar_linear", lin)

    @classmethod
    def from_closed_form(cls, W: BaseForm) -> "PotentialMatrix":
        """Linear potential with ``delbar alpha = W`` for a constant (1,1)-form ``W``.

        ``delbar(alpha_k dz_k) = -(d alpha_k / d zb_j) dz_k ^ dzb_j``.
        """
        lin = np.zeros((2, 2), dtype=complex)
        for k in range(2):
            for j in range(2):
                c = W.component((k, 2 + j))
                if np.ptp(c.real) > 1e-12 or np.ptp(c.imag) > 1e-12:
                    raise CurvatureError("from_closed_form needs constant coefficients")
                lin[k, j] = -c.flat[0]
        return cls(W.grid, None, lin)

    def values(self) -> np.ndarray:
        """Pointwise values on the fundamental domain (not periodic if linear part != 0)."""
        zb = [np.conj(z) for z in self.grid.z]
        out = self.periodic.copy()
        for k in range(2):
            out[..., k] = out[..., k] + self.dbar_linear[k, 0] * zb[0] + self.dbar_linear[k, 1] * zb[1]
        return out

    def dbar(self) -> BaseForm:
        """``delbar A`` as a (2,1)-matrix-valued (0,1)-form."""
        col = delbar(scalar(self.grid, self.periodic[..., None]))
        lin = BaseForm(self.grid, {(2 + j,): self.dbar_linear[:, j].reshape(2, 1) for j in range(2)}, (2, 1))
        return col + lin

    def del_(self) -> BaseForm:
        """``del A`` as a (2,1)-matrix-valued (1,0)-form."""
        return del_(scalar(self.grid, self.periodic[..., None]))

    def dbar_alpha(self) -> BaseForm:
        """The scalar (1,1)-form ``delbar alpha`` with ``alpha = sum alpha_k dz_k``."""
        a = self.dbar()
        out = None
        for k in range(2):
            comp = BaseForm(self.grid, {m: c[..., k, 0] for m, c in a.terms.items()})
            term = wedge(comp, BaseForm(self.grid, {(k,): 1.0}))
            out = term if out is None else out + term
        return out


def curvature(G: HermitianMatrixField) -> BaseForm:
    """Chern curvature ``delbar(del G . G^-1)`` of a periodic metric."""
    G.check()
    ginv = G.inverse()
    conn = del_(scalar(G.grid, G.values)).map_values(lambda c: c @ ginv)
    return delbar(conn)


def assemble_total_metric(G_B: HermitianMatrixField, A: PotentialMatrix) -> HermitianMatrixField:
    """The bordered 3x3 metric ``[[G_B + A A^*, A], [A^*, 1]]``."""
    a = A.values()
    out = np.zeros(G_B.grid.shape + (3, 3), dtype=complex)
    out[..., :2, :2] = G_B.values + a[..., :, None] * np.conj(a[..., None, :])
    out[..., :2, 2] = a
    out[..., 2, :2] = np.conj(a)
    out[..., 2, 2] = 1.0
    return HermitianMatrixField(G_B.grid, out)


def _blocks(grid: PeriodicGrid, tl=None, tr=None, bl=None, br=None) -> BaseForm:
    """Assemble a 3x3-valued form from a 2x2 / 2x1 / 1x2 / 1x1 block layout."""
    slots = [(tl, np.s_[..., :2, :2]), (tr, np.s_[..., :2, 2:]), (bl, np.s_[..., 2:, :2]), (br, np.s_[..., 2:, 2:])]
    monos = set()
    for f, _ in slots:
        if f is not None:
            monos |= set(f.terms)
    terms = {}
    for m in monos:
        c = np.zeros(grid.shape + (3, 3), dtype=complex)
        for f, sl in slots:
            if f is not None and m in f.terms:
                v = f.terms[m]
                c[sl] = v if v.ndim == 6 else v[..., None, None]
        terms[m] = c
    return BaseForm(grid, terms, (3, 3))


def total_curvature(G_B: HermitianMatrixField, A: PotentialMatrix) -> BaseForm:
    """Curvature of ``assemble_total_metric(G_B, A)`` in the frame ``B``.

    Returns ``B^-1 R B`` where ``R`` is the Chern curvature of the bordered
    metric.  With ``Theta = [[del G_B G_B^-1, del A], [del A^* G_B^-1, 0]]``
    and ``beta = [[0, delbar A], [0, 0]]`` this equals
    ``delbar Theta + beta ^ Theta + Theta ^ beta``.
    """
    G_B.check()
    grid = G_B.grid
    ginv = G_B.inverse()
    theta_b = del_(scalar(grid, G_B.values)).map_values(lambda c: c @ ginv)
    dA = A.del_()
    dbA = A.dbar()
    dAstar_g = dbA.dagger().map_values(lambda c: c @ ginv)
    Theta = _blocks(grid, tl=theta_b, tr=dA if dA.terms else None, bl=dAstar_g)
    beta = _blocks(grid, tr=dbA)
    return delbar(Theta) + wedge(beta, Theta) + wedge(Theta, beta)


def rho_from_potential(A: PotentialMatrix, G_B: HermitianMatrixField) -> BaseForm:
    """``rho = -i tr(delbar A ^ del A^* . G_B^-1)``, a real (1,1)-form.

    The conjugate transpose ``A^*`` is what makes ``rho`` real.
    """
    ginv = G_B.inverse()
    dbA = A.dbar()
    row = dbA.dagger().map_values(lambda c: c @ ginv)
    return matrix_trace(wedge(dbA, row)) * (-1j)


def rr_identity_sides(u: np.ndarray, G_B: HermitianMatrixField, A: PotentialMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Both sides of the trace identity as densities against ``omega_B^2/2``.

    left:  ``tr(R_u ^ R_u)`` from the bordered metric with ``e^u G_B``;
    right: ``tr(R_B ^ R_B) + 2 ddb u ^ ddb u + 2i ddb(e^-u rho)``.
    """
    grid = G_B.grid
    u = np.real(u)
    Ru = total_curvature(G_B.scaled(u), A)
    lhs = top_density(matrix_trace(wedge(Ru, Ru)))
    del Ru

    RB = curvature(G_B)
    rhs = top_density(matrix_trace(wedge(RB, RB)))
    del RB
    ddbu = del_(delbar(scalar(grid, u)))
    rhs = rhs + 2 * top_density(wedge(ddbu, ddbu))
    rho = rho_from_potential(A, G_B)
    rhs = rhs + 2j * top_density(del_(delbar(rho * np.exp(-u))))
    return lhs, rhs


def rr_identity_residual(u: np.ndarray, G_B: HermitianMatrixField, A: PotentialMatrix) -> float:
    """Max-norm of the trace-identity defect relative to the right side."""
    lhs, rhs = rr_identity_sides(u, G_B, A)
    diff = float(np.max(np.abs(lhs - rhs)))
    scale = float(np.max(np.abs(rhs)))
    return diff / scale if scale > 0 else diff


def hym_residual(F: BaseForm, omega: BaseForm | None = None) -> tuple[float, float]:
    """``(max |F ^ omega| as a top density, max |F^{2,0}| + |F^{0,2}|)``."""
    omega = kahler_form(F.grid) if omega is None else omega
    first = float(np.max(np.abs(top_density(wedge(F, omega))))) if F.terms else 0.0
    second = max(F.part(2, 0).max_norm(), F.part(0, 2).max_norm())
    return first, second
