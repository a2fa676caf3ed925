"""Forms on a principal T^2 bundle over the flat torus, written in the fiber coframe.

A form is stored as ``s0 + s1 ^ theta + s2 ^ thetab + s3 ^ theta ^ thetab`` with
basic coefficients ``s_i``.  The connection form ``theta`` is never sampled;
only its curvature ``W = d theta`` (a closed basic (1,1)-form) enters, via
``d theta = W`` and ``d thetab = conj(W)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .spectral import (
    BaseForm,
    PeriodicGrid,
    _apply_partial,
    asd_forms,
    d,
    holomorphic_volume,
    kahler_form,
    scalar,
    star_base,
    top_density,
    trace_against,
    wedge,
)

__all__ = [
    "AnsatzError",
    "FiberedForm",
    "AnsatzData",
    "fiber_wedge",
    "d_total",
    "del_total",
    "delbar_total",
    "theta",
    "thetabar",
    "chi",
    "build_omega_u",
    "holomorphic_three_form",
    "psi_norm",
    "psi_norm_squared",
    "psi_norm_from_metric",
    "StructureReport",
    "structure_residuals",
]

FIBER_DEGREE = (0, 1, 1, 2)
_FIBER_NAMES = ("1", "theta", "thetab", "theta^thetab")


class AnsatzError(ValueError):
    """Invalid connection curvature or inconsistent fibered data."""


def _deg(f: BaseForm) -> int:
    return f.degree


class FiberedForm:
    """Form on the total space, as four basic coefficient forms."""

    __slots__ = ("grid", "slots")

    def __init__(self, grid: PeriodicGrid, s0=None, s1=None, s2=None, s3=None):
        self.grid = grid
        slots = []
        for s in (s0, s1, s2, s3):
            if s is None:
                s = BaseForm(grid)
            if s.grid != grid:
                raise ValueError("slot lives on a different grid")
            slots.append(s)
        self.slots: tuple[BaseForm, ...] = tuple(slots)
        self.degree  # validates homogeneity

    @classmethod
    def basic(cls, f: BaseForm) -> "FiberedForm":
        return cls(f.grid, f)

    @property
    def degree(self) -> int:
        degs = {len(m) + FIBER_DEGREE[i] for i, s in enumerate(self.slots) for m in s.terms}
        if len(degs) > 1:
            raise AnsatzError(f"fibered form has mixed total degrees {sorted(degs)}")
        return degs.pop() if degs else 0

    @property
    def is_basic(self) -> bool:
        return all(not s.terms for s in self.slots[1:])

    def max_norm(self) -> float:
        return max(s.max_norm() for s in self.slots)

    def slot_norms(self) -> dict[str, float]:
        return {name: s.max_norm() for name, s in zip(_FIBER_NAMES, self.slots)}

    def __add__(self, other: "FiberedForm") -> "FiberedForm":
        return FiberedForm(self.grid, *(a + b for a, b in zip(self.slots, other.slots)))

    def __sub__(self, other: "FiberedForm") -> "FiberedForm":
        return FiberedForm(self.grid, *(a - b for a, b in zip(self.slots, other.slots)))

    def __neg__(self) -> "FiberedForm":
        return FiberedForm(self.grid, *(-s for s in self.slots))

    def __mul__(self, factor) -> "FiberedForm":
        """Multiply by a constant or a basic function."""
        return FiberedForm(self.grid, *(s * factor for s in self.slots))

    __rmul__ = __mul__

    def conj(self) -> "FiberedForm":
        s0, s1, s2, s3 = (s.conj() for s in self.slots)
        # conj(a ^ theta ^ thetab) = conj(a) ^ thetab ^ theta
        return FiberedForm(self.grid, s0, s2, s1, -s3)

    def __repr__(self):
        parts = [f"{n}: {sorted(s.terms)}" for n, s in zip(_FIBER_NAMES, self.slots) if s.terms]
        return f"FiberedForm(N={self.grid.n}, " + ", ".join(parts) + ")"


# fiber monomial products: (i, j) -> (slot, sign)
_FIBER_PRODUCT = {
    (0, 0): (0, 1), (0, 1): (1, 1), (0, 2): (2, 1), (0, 3): (3, 1),
    (1, 0): (1, 1), (2, 0): (2, 1), (3, 0): (3, 1),
    (1, 2): (3, 1), (2, 1): (3, -1),
}


def fiber_wedge(f: FiberedForm, g: FiberedForm) -> FiberedForm:
    """Exterior product on the total space (base 5-forms vanish)."""
    out = [BaseForm(f.grid) for _ in range(4)]
    for i, a in enumerate(f.slots):
        if not a.terms:
            continue
        for j, b in enumerate(g.slots):
            if not b.terms or (i, j) not in _FIBER_PRODUCT:
                continue
            slot, sign = _FIBER_PRODUCT[(i, j)]
            # move the fiber factor of f past the basic part of g
            if FIBER_DEGREE[i] * _deg(b) % 2:
                sign = -sign
            out[slot] = out[slot] + wedge(a, b, strict=False) * sign
    return FiberedForm(f.grid, *out)


def _total_derivative(f: FiberedForm, base_op, d_theta: BaseForm | None, d_thetab: BaseForm | None) -> FiberedForm:
    s0, s1, s2, s3 = f.slots
    grid = f.grid
    out = [base_op(s) for s in f.slots]

    def add(slot, a, form, sign):
        if form is None or not a.terms or not form.terms:
            return
        sgn = sign * (-1) ** _deg(a)
        out[slot] = out[slot] + wedge(a, form, strict=False) * sgn

    add(0, s1, d_theta, 1)
    add(0, s2, d_thetab, 1)
    # D(theta ^ thetab) = D theta ^ thetab - D thetab ^ theta
    add(2, s3, d_theta, 1)
    add(1, s3, d_thetab, -1)
    return FiberedForm(grid, *out)


def d_total(f: FiberedForm, W: BaseForm) -> FiberedForm:
    """Exterior derivative on the total space with ``d theta = W``."""
    return _total_derivative(f, d, W, W.conj())


def del_total(f: FiberedForm, W: BaseForm) -> FiberedForm:
    """(1,0) part of ``d_total`` for a (1,1) curvature ``W``: ``del theta = 0``."""
    return _total_derivative(f, lambda s: _apply_partial(s, (0, 1), None), None, W.conj())


def delbar_total(f: FiberedForm, W: BaseForm) -> FiberedForm:
    """(0,1) part of ``d_total``: ``delbar theta = W``, ``delbar thetab = 0``."""
    return _total_derivative(f, lambda s: _apply_partial(s, (2, 3), None), W, None)


def theta(grid: PeriodicGrid) -> FiberedForm:
    return FiberedForm(grid, s1=scalar(grid, 1.0))


def thetabar(grid: PeriodicGrid) -> FiberedForm:
    return FiberedForm(grid, s2=scalar(grid, 1.0))


def chi(grid: PeriodicGrid) -> FiberedForm:
    """The fiber form ``(i/2) theta ^ thetab``."""
    return FiberedForm(grid, s3=scalar(grid, 0.5j))


@dataclass(frozen=True)
class AnsatzData:
    """Connection curvature ``W`` plus the transverse Calabi-Yau pair.

    ``strict=False`` skips the primitivity and anti-self-duality checks so that
    invalid data can be fed to the structural residuals on purpose.
    """

    W: BaseForm
    omega_B: BaseForm | None = None
    psi_B: BaseForm | None = None
    strict: bool = True
    tol: float = 1e-10

    def __post_init__(self):
        grid = self.W.grid
        if self.omega_B is None:
            object.__setattr__(self, "omega_B", kahler_form(grid))
        if self.psi_B is None:
            object.__setattr__(self, "psi_B", holomorphic_volume(grid))
        W = self.W
        if W.terms and W.degree != 2:
            raise AnsatzError("connection curvature must be a 2-form")
        scale = max(W.max_norm(), 1.0)
        dW = d(W).max_norm()
        if dW > self.tol * scale:
            raise AnsatzError(f"connection curvature is not closed (|dW| = {dW:.3e})")
        if self.strict:
            if W.terms and W.bidegrees != {(1, 1)}:
                raise AnsatzError(f"connection curvature must be of type (1,1), got {sorted(W.bidegrees)}")
            for name, part in (("real", self.re), ("imaginary", self.im)):
                tr = float(np.max(np.abs(trace_against(part)))) if part.terms else 0.0
                if tr > self.tol * scale:
                    raise AnsatzError(f"{name} part of connection curvature is not primitive (trace {tr:.3e})")
                asd = (star_base(part) + part).max_norm()
                if asd > self.tol * scale:
                    raise AnsatzError(f"{name} part of connection curvature is not anti-self-dual ({asd:.3e})")

    @property
    def grid(self) -> PeriodicGrid:
        return self.W.grid

    @property
    def re(self) -> BaseForm:
        return (self.W + self.W.conj()) * 0.5

    @property
    def im(self) -> BaseForm:
        return (self.W - self.W.conj()) * (-0.5j)

    @classmethod
    def from_classes(cls, grid: PeriodicGrid, c1, c2, **kw) -> "AnsatzData":
        """``W = omega_1 + i omega_2`` with ``omega_i = (1/2pi) sum_k c_i[k] a_k``.

        ``a_k`` is the real anti-self-dual basis; the forms ``omega_i/2pi``
        are then the integral classes ``sum c_i[k] a_k / 4pi^2``.
        """
        a = asd_forms(grid)
        w1 = sum((a[k] * (float(c1[k]) / (2 * np.pi)) for k in range(3)), BaseForm(grid))
        w2 = sum((a[k] * (float(c2[k]) / (2 * np.pi)) for k in range(3)), BaseForm(grid))
        return cls(w1 + w2 * 1j, **kw)

    def dtheta_norm_sq(self) -> np.ndarray:
        """Density of ``|omega_1|^2 + |omega_2|^2``: ``-W ^ conj(W)`` for anti-self-dual ``W``."""
        return np.real(-top_density(wedge(self.W, self.W.conj())))


def _field(grid: PeriodicGrid, u) -> np.ndarray:
    return np.broadcast_to(np.real(np.asarray(u, dtype=float)), grid.shape)


def build_omega_u(u, data: AnsatzData) -> FiberedForm:
    """``e^u omega_B + (i/2) theta ^ thetab``."""
    grid = data.grid
    return FiberedForm(grid, s0=data.omega_B * np.exp(_field(grid, u))) + chi(grid)


def holomorphic_three_form(data: AnsatzData) -> FiberedForm:
    """``psi = psi_B ^ theta``."""
    return FiberedForm(data.grid, s1=data.psi_B)


def psi_norm_squared(u) -> np.ndarray:
    """``|psi|^2`` for ``omega_u``: ``e^{-2u}``."""
    return np.exp(-2.0 * np.asarray(u, dtype=float))


def psi_norm_from_metric(u, data: AnsatzData) -> np.ndarray:
    """``|psi|`` from ``i psi ^ conj(psi) = |psi|^2 omega_u^3/6``."""
    omega = build_omega_u(u, data)
    vol = fiber_wedge(fiber_wedge(omega, omega), omega) * (1.0 / 6.0)
    psi = holomorphic_three_form(data)
    num = fiber_wedge(psi, psi.conj()) * 1j
    ratio = top_density(num.slots[3]) / top_density(vol.slots[3])
    return np.sqrt(np.real(ratio))


def psi_norm(u, data: AnsatzData | None = None, rtol: float = 1e-9) -> np.ndarray:
    """``|psi|_{omega_u} = e^{-u}``.

    When ``data`` is given the value is cross-checked against the metric
    computation and a mismatch raises.
    """
    val = np.exp(-np.asarray(u, dtype=float))
    if data is not None:
        ref = psi_norm_from_metric(u, data)
        err = float(np.max(np.abs(ref - val) / np.abs(val)))
        if err > rtol:
            raise AnsatzError(f"|psi| closed form disagrees with metric computation (rel {err:.3e})")
    return np.broadcast_to(val, data.grid.shape).copy() if data is not None else val


@dataclass
class StructureReport:
    n: int
    residuals: dict[str, float]
    tolerance: float
    baseline: float
    passed: dict[str, bool] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def to_json(self) -> str:
        return json.dumps(
            {"N": self.n, "residuals": self.residuals, "tolerance": self.tolerance,
             "baseline": self.baseline, "passed": self.passed, "ok": self.ok},
            indent=2, sort_keys=True,
        )


def _structure_values(u, data: AnsatzData) -> dict[str, float]:
    W = data.W
    omega0 = build_omega_u(0.0, data)
    omega_u = build_omega_u(u, data)
    weighted = fiber_wedge(omega_u, omega_u) * psi_norm(u)
    return {
        "d_omega_B": d(data.omega_B).max_norm(),
        "omega_B_wedge_W": float(np.max(np.abs(top_density(wedge(data.omega_B, W))))) if W.terms else 0.0,
        "balanced": d_total(fiber_wedge(omega0, omega0), W).max_norm(),
        "conformally_balanced": d_total(weighted, W).max_norm(),
    }


def structure_residuals(u, data: AnsatzData, floor: float = 1e-10) -> StructureReport:
    """Closedness, primitivity, balanced and conformally balanced residuals.

    Tolerance: ten times the same residuals on the product case ``W = 0``
    (machine-level baseline), but never below ``floor``.
    """
    grid = data.grid
    u = _field(grid, u)
    vals = _structure_values(u, data)
    product = AnsatzData(BaseForm(grid), data.omega_B, data.psi_B, strict=False)
    baseline = max(_structure_values(u, product).values())
    tol = max(10.0 * baseline, floor)
    return StructureReport(grid.n, vals, tol, baseline, {k: v <= tol for k, v in vals.items()})
