"""Exact intersection arithmetic on blown-up K3 orbifolds.

The Picard lattice of a K3 orbifold ``X`` with isolated A1 points, blown up at
``k`` of them, is spanned by the pull-back of an ample class ``H`` and the
exceptional (-2)-curves ``E_1 .. E_k``.  The Gram matrix is
``diag(H.H, -2, ..., -2)``.  Everything in this module is done in
:class:`fractions.Fraction`; no floating point is involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import prod
from typing import Iterable, Sequence

__all__ = [
    "LatticeError",
    "OrbifoldSurface",
    "BlowupLattice",
    "DivisorClass",
    "BundleTopologyData",
    "IntegrabilityReport",
    "intersect",
    "weighted_ci_h_self",
    "nakai_positive",
    "traceless_divisor",
    "cormain_pair",
    "orbifold_euler",
    "classify_seifert5",
    "classify_t2_total",
    "integrability_check",
    "label_ranges",
    "to_fraction",
    "fraction_str",
]

K3_B2 = 22
K3_EULER = 24


class LatticeError(ValueError):
    """Raised for malformed lattice input."""


def to_fraction(value) -> Fraction:
    """Parse ints, Fractions or ``"p/q"`` strings.  Floats are rejected."""
    if isinstance(value, bool):
        raise LatticeError(f"expected a rational, got {value!r}")
    if isinstance(value, (int, Fraction)):
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise LatticeError(f"cannot parse rational {value!r}") from exc
    raise LatticeError(f"expected int or 'p/q' string, got {type(value).__name__} {value!r}")


def fraction_str(q: Fraction) -> str:
    """Serialize as ``"p/q"`` (always with a denominator)."""
    q = Fraction(q)
    return f"{q.numerator}/{q.denominator}"


@dataclass(frozen=True)
class OrbifoldSurface:
    name: str
    b2_orb: int
    num_A1: int
    h_self: Fraction

    def __post_init__(self):
        object.__setattr__(self, "h_self", to_fraction(self.h_self))
        if self.h_self <= 0:
            raise LatticeError(f"h_self must be positive, got {self.h_self}")
        if self.num_A1 < 0:
            raise LatticeError(f"num_A1 must be >= 0, got {self.num_A1}")
        if self.b2_orb < 1:
            raise LatticeError(f"b2_orb must be positive, got {self.b2_orb}")

    @classmethod
    def k3(cls, num_A1: int, h_self, name: str = "K3 orbifold") -> "OrbifoldSurface":
        """K3 orbifold with only A1 points; ``b2_orb`` follows from the resolution."""
        return cls(name=name, b2_orb=K3_B2 - num_A1, num_A1=num_A1, h_self=h_self)

    @property
    def consistent(self) -> bool:
        """Whether ``b2_orb = 22 - num_A1`` (minimal resolution is a K3)."""
        return self.b2_orb == K3_B2 - self.num_A1


@dataclass(frozen=True)
class BlowupLattice:
    base: OrbifoldSurface
    k_blown: int

    def __post_init__(self):
        if not 0 <= self.k_blown <= self.base.num_A1:
            raise LatticeError(
                f"k_blown must lie in [0, {self.base.num_A1}], got {self.k_blown}"
            )

    @property
    def dim(self) -> int:
        return 1 + self.k_blown

    @property
    def b2(self) -> int:
        """Rank of H^2 after the blow-ups (each one adds an exceptional curve)."""
        return self.base.b2_orb + self.k_blown

    def gram(self) -> list[list[Fraction]]:
        g = [[Fraction(0)] * self.dim for _ in range(self.dim)]
        g[0][0] = self.base.h_self
        for i in range(1, self.dim):
            g[i][i] = Fraction(-2)
        return g

    def H(self) -> "DivisorClass":
        return self.divisor(1)

    def E(self, i: int) -> "DivisorClass":
        """Exceptional curve ``E_i`` (1-based, as in the literature)."""
        if not 1 <= i <= self.k_blown:
            raise LatticeError(f"E_{i} does not exist for k_blown={self.k_blown}")
        coeffs = [0] * self.dim
        coeffs[i] = 1
        return DivisorClass(coeffs)

    def divisor(self, h: int | Fraction | str, *e) -> "DivisorClass":
        """``h*H + sum e_i E_i``; missing E-coefficients are zero."""
        if len(e) > self.k_blown:
            raise LatticeError(f"{len(e)} E-coefficients for k_blown={self.k_blown}")
        coeffs = [h, *e] + [0] * (self.k_blown - len(e))
        return DivisorClass(coeffs)


@dataclass(frozen=True)
class DivisorClass:
    coeffs: tuple[Fraction, ...]

    def __init__(self, coeffs: Iterable):
        object.__setattr__(self, "coeffs", tuple(to_fraction(c) for c in coeffs))

    def __len__(self):
        return len(self.coeffs)

    def __add__(self, other: "DivisorClass") -> "DivisorClass":
        _check_same_len(self, other)
        return DivisorClass(a + b for a, b in zip(self.coeffs, other.coeffs))

    def __sub__(self, other: "DivisorClass") -> "DivisorClass":
        _check_same_len(self, other)
        return DivisorClass(a - b for a, b in zip(self.coeffs, other.coeffs))

    def __neg__(self) -> "DivisorClass":
        return DivisorClass(-a for a in self.coeffs)

    def __mul__(self, scalar) -> "DivisorClass":
        s = to_fraction(scalar)
        return DivisorClass(s * a for a in self.coeffs)

    __rmul__ = __mul__

    @property
    def h(self) -> Fraction:
        return self.coeffs[0]

    @property
    def e(self) -> tuple[Fraction, ...]:
        return self.coeffs[1:]

    def to_json(self) -> list[str]:
        return [fraction_str(c) for c in self.coeffs]

    def __str__(self):
        parts = []
        for i, c in enumerate(self.coeffs):
            if c == 0:
                continue
            name = "H" if i == 0 else f"E{i}"
            parts.append(f"{c}*{name}")
        return " + ".join(parts) or "0"


def _check_same_len(a: DivisorClass, b: DivisorClass):
    if len(a) != len(b):
        raise LatticeError(f"dimension mismatch: {len(a)} vs {len(b)}")


def intersect(d1: DivisorClass, d2: DivisorClass, lattice: BlowupLattice) -> Fraction:
    """Intersection number ``d1 . d2`` over the Gram matrix of ``lattice``."""
    if len(d1) != lattice.dim or len(d2) != lattice.dim:
        raise LatticeError(
            f"dimension mismatch: divisors of length {len(d1)} and {len(d2)}, "
            f"lattice of dimension {lattice.dim}"
        )
    total = lattice.base.h_self * d1.h * d2.h
    for a, b in zip(d1.e, d2.e):
        total += -2 * a * b
    return total


def weighted_ci_h_self(weights: Sequence[int], degrees: Sequence[int]) -> Fraction:
    """H.H for a quasi-smooth complete intersection surface in P(weights).

    The hyperplane class satisfies ``H^2 = prod(degrees) / prod(weights)``.

    >>> weighted_ci_h_self([2, 2, 2, 3, 3], [6, 6])
    Fraction(1, 2)
    """
    if not weights or not degrees:
        raise LatticeError("weights and degrees must be non-empty")
    if any(int(w) != w or w <= 0 for w in weights) or any(int(d) != d or d <= 0 for d in degrees):
        raise LatticeError("weights and degrees must be positive integers")
    if len(weights) - len(degrees) != 3:
        raise LatticeError(
            f"a surface needs len(weights) - len(degrees) == 3, got {len(weights)} and {len(degrees)}"
        )
    return Fraction(prod(degrees), prod(weights))


def nakai_positive(lc: DivisorClass, lattice: BlowupLattice) -> bool:
    """Positivity of ``n H - sum a_i E_i`` on the blow-up.

    Curves are either pull-backs from ``X`` (handled by ``n > 0`` since H is
    ample) or exceptional, so testing against the E_i is enough.
    """
    if len(lc) != lattice.dim:
        return False
    n, a = lc.h, [-c for c in lc.e]
    if n <= 0 or any(ai <= 0 for ai in a):
        return False
    if intersect(lc, lc, lattice) <= 0:
        return False
    return all(intersect(lc, lattice.E(i), lattice) > 0 for i in range(1, lattice.k_blown + 1))


def _omega(lattice: BlowupLattice, n: int) -> DivisorClass:
    return lattice.divisor(n, *([-1] * lattice.k_blown))


def _search_n(lattice: BlowupLattice, m_of_n, m_min: int, limit: int = 100_000):
    # n*h_self must produce an integer m >= m_min; pick the smallest such n with omega positive
    for n in range(1, limit):
        m = m_of_n(Fraction(n) * lattice.base.h_self)
        if m.denominator != 1 or m < m_min:
            continue
        omega = _omega(lattice, n)
        if nakai_positive(omega, lattice):
            return n, int(m), omega
    raise LatticeError("no admissible (n, m) found")  # pragma: no cover


def traceless_divisor(lattice: BlowupLattice):
    """Return ``(D, omega, n, m)`` with ``D = H - m E_1`` and ``D.omega = 0``.

    ``omega = n H - E_1 - ... - E_k`` is Nakai positive, and
    ``D.omega = n H.H - 2m``; ``n`` is the smallest positive integer for which
    this vanishes with ``m >= 1`` and omega positive.
    """
    if lattice.k_blown < 1:
        raise LatticeError("traceless_divisor needs at least one blown-up point")
    n, m, omega = _search_n(lattice, lambda nh: nh / 2, 1)
    d = lattice.divisor(1, -m)
    assert intersect(d, omega, lattice) == 0
    return d, omega, n, m


def cormain_pair(lattice: BlowupLattice):
    """Return ``(D1, D2, omega, n, m)`` with both divisors traceless w.r.t. omega.

    ``D1 = H - m E_1 - E_2``, ``D2 = H - E_1 - m E_2`` and
    ``n H.H = 2m + 2``.  We require ``m >= 2`` so that the (E_1, E_2) minor
    ``m^2 - 1`` is nonzero and the pair is independent over Q.
    """
    if lattice.k_blown < 2:
        raise LatticeError("cormain_pair needs at least two blown-up points")
    n, m, omega = _search_n(lattice, lambda nh: (nh - 2) / 2, 2)
    d1 = lattice.divisor(1, -m, -1)
    d2 = lattice.divisor(1, -1, -m)
    assert intersect(d1, omega, lattice) == 0 and intersect(d2, omega, lattice) == 0
    return d1, d2, omega, n, m


def orbifold_euler(num_A1: int) -> int:
    """Orbifold Euler number of a K3 orbifold with ``num_A1`` isolated A1 points."""
    if isinstance(num_A1, bool) or not isinstance(num_A1, int) or not 0 <= num_A1 <= K3_EULER:
        raise LatticeError(f"num_A1 must be an integer in [0, 24], got {num_A1!r}")
    return K3_EULER - num_A1


def classify_seifert5(b2_orb: int) -> str:
    """Diffeomorphism type of the smooth Seifert S^1-bundle: ``#_k(S2xS3)``, k = b2 - 1."""
    if b2_orb < 2:
        raise LatticeError(f"b2_orb must be >= 2, got {b2_orb}")
    return f"#_{b2_orb - 1}(S2xS3)"


def classify_t2_total(b2_orb: int) -> str:
    """Diffeomorphism type of the T^2-bundle total space, r = b2 - 2."""
    if b2_orb < 3:
        raise LatticeError(f"b2_orb must be >= 3, got {b2_orb}")
    r = b2_orb - 2
    return f"#_{r}(S2xS4)#_{r + 1}(S3xS3)"


def label_ranges(surface: OrbifoldSurface) -> dict:
    """Index ranges of the two families obtained by partial resolution.

    Resolving ``j`` of the A1 points raises b2 from ``b2_orb`` to
    ``b2_orb + j``; the families are indexed by that b2.  The simply-connected
    family needs one more exceptional curve than the S^1 family.
    """
    b2_full = surface.b2_orb + surface.num_A1
    k_range = [surface.b2_orb, b2_full]
    # the second family needs at least one resolved point; empty without A1 points
    r_range = [surface.b2_orb + 1, b2_full] if surface.num_A1 > 0 else []
    return {
        "b2_full_resolution": b2_full,
        "k_range": k_range,
        "r_range": r_range,
        "k_labels": [f"S1x#_{k}(S2xS3)" for k in k_range],
        "r_labels": [f"#_{r}(S2xS4)#_{r + 1}(S3xS3)" for r in r_range],
    }


@dataclass(frozen=True)
class BundleTopologyData:
    rank: int
    c1_sq: Fraction
    c2: Fraction
    degree_zero: bool = True
    stable: bool = True

    def __post_init__(self):
        object.__setattr__(self, "c1_sq", to_fraction(self.c1_sq))
        object.__setattr__(self, "c2", to_fraction(self.c2))
        if self.rank < 1:
            raise LatticeError(f"bundle rank must be positive, got {self.rank}")

    @property
    def discriminant(self) -> Fraction:
        """``c2 - c1^2 / 2``."""
        return self.c2 - self.c1_sq / 2


@dataclass(frozen=True)
class IntegrabilityReport:
    alpha_prime: Fraction
    euler: int
    lhs: Fraction
    rhs: Fraction
    satisfied: bool
    residual: Fraction
    convention: str = field(
        default="omega_i = 2*pi*(integral ASD class); rhs = -(Q1+Q2) in intersection numbers"
    )

    def to_json(self) -> dict:
        return {
            "alpha_prime": fraction_str(self.alpha_prime),
            "euler": self.euler,
            "lhs": fraction_str(self.lhs),
            "rhs": fraction_str(self.rhs),
            "residual": fraction_str(self.residual),
            "satisfied": self.satisfied,
            "convention": self.convention,
        }


def integrability_check(alpha_prime, e: int, bundle: BundleTopologyData, q1, q2) -> IntegrabilityReport:
    """Topological balance ``alpha'(e - (c2 - c1^2/2)) = -(Q1 + Q2)``.

    The right side is the normalized integral of ``|omega_1|^2 + |omega_2|^2``:
    for an anti-self-dual ``omega_i = 2 pi eta_i`` with ``eta_i`` integral,
    ``(1/4pi^2) int |omega_i|^2 vol = -int eta_i ^ eta_i = -Q_i``.
    """
    if not bundle.degree_zero:
        raise LatticeError("degree-0 required")
    alpha_prime, q1, q2 = to_fraction(alpha_prime), to_fraction(q1), to_fraction(q2)
    if q1 > 0 or q2 > 0:
        raise LatticeError(f"anti-self-dual classes have Q <= 0, got Q1={q1}, Q2={q2}")
    lhs = alpha_prime * (e - bundle.discriminant)
    rhs = -(q1 + q2)
    return IntegrabilityReport(
        alpha_prime=alpha_prime,
        euler=e,
        lhs=lhs,
        rhs=rhs,
        satisfied=lhs == rhs,
        residual=lhs - rhs,
    )
