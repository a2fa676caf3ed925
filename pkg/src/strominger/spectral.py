"""Spectral exterior calculus on the flat torus T^4 = (R / 2 pi Z)^4.

Complex coordinates are ``z1 = x1 + i x2`` and ``z2 = x3 + i x4`` with the
flat Kahler form ``omega_B = (i/2)(dz1^dz1b + dz2^dz2b) = dx1^dx2 + dx3^dx4``
and volume form ``omega_B^2 / 2 = dx1^dx2^dx3^dx4``.

Forms are stored in the complex coframe ``(dz1, dz2, dz1b, dz2b)``, indexed
0..3.  A monomial is a sorted index tuple, so ``(0, 2)`` is ``dz1^dz1b`` and
every stored monomial reads ``dz^I ^ dzb^J``.  Coefficients are arrays whose
leading four axes are the grid; trailing axes hold matrix values, which lets
the same code carry scalar forms and matrix-valued forms (connection and
curvature matrices).

Products of fields are pointwise with no de-aliasing.
"""

from __future__ import annotations

import itertools
import json
import os
import tempfile
from dataclasses import dataclass
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np

__all__ = [
    "PeriodicGrid",
    "BaseForm",
    "BidegreeError",
    "scalar",
    "zero",
    "del_",
    "delbar",
    "d",
    "wedge",
    "star_base",
    "inner",
    "trace_against",
    "top_density",
    "integrate",
    "kahler_form",
    "volume_form",
    "holomorphic_volume",
    "asd_forms",
    "matrix_trace",
    "complex_hessian",
    "save_form",
    "load_form",
]

DIM = 4
GRID_AXES = (0, 1, 2, 3)
CONJ_INDEX = (2, 3, 0, 1)


class BidegreeError(ValueError):
    """Operation would leave the exterior algebra of a complex surface."""


@dataclass(frozen=True)
class PeriodicGrid:
    n: int

    def __post_init__(self):
        if self.n < 8 or self.n % 2:
            raise ValueError(f"grid size must be even and >= 8, got {self.n}")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.n,) * DIM

    @property
    def spacing(self) -> float:
        return 2 * np.pi / self.n

    @property
    def volume(self) -> float:
        return (2 * np.pi) ** DIM

    @cached_property
    def x(self) -> tuple[np.ndarray, ...]:
        """Broadcastable coordinate arrays ``(x1, x2, x3, x4)``."""
        pts = np.arange(self.n) * self.spacing
        return tuple(pts.reshape([-1 if a == b else 1 for b in range(DIM)]) for a in range(DIM))

    @cached_property
    def z(self) -> tuple[np.ndarray, np.ndarray]:
        x1, x2, x3, x4 = self.x
        return x1 + 1j * x2, x3 + 1j * x4

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        # Nyquist mode is zeroed so first derivatives of real fields stay real
        k = np.fft.fftfreq(self.n, 1.0 / self.n)
        k[self.n // 2] = 0.0
        return tuple(k.reshape([-1 if a == b else 1 for b in range(DIM)]) for a in range(DIM))

    @cached_property
    def wirtinger_symbols(self) -> tuple[np.ndarray, ...]:
        """Fourier symbols of d/dz1, d/dz2, d/dz1b, d/dz2b (coframe order)."""
        k1, k2, k3, k4 = self.wavenumbers
        return (
            0.5 * (1j * k1 + k2),
            0.5 * (1j * k3 + k4),
            0.5 * (1j * k1 - k2),
            0.5 * (1j * k3 - k4),
        )

    @cached_property
    def laplacian_symbol(self) -> np.ndarray:
        """Symbol of the flat real Laplacian.

        The Nyquist wavenumber is kept here: second derivatives of real fields
        stay real, and only constants lie in the kernel.
        """
        k = np.fft.fftfreq(self.n, 1.0 / self.n)
        k1, k2, k3, k4 = (k.reshape([-1 if a == b else 1 for b in range(DIM)]) for a in range(DIM))
        return -(k1**2 + k2**2 + k3**2 + k4**2)

    def fft(self, f: np.ndarray) -> np.ndarray:
        return np.fft.fftn(f, axes=GRID_AXES)

    def ifft(self, f: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(f, axes=GRID_AXES)

    def partials(self, f: np.ndarray, which=(0, 1, 2, 3)) -> list[np.ndarray]:
        """Wirtinger derivatives of ``f`` (one forward transform)."""
        fh = self.fft(f)
        extra = (1,) * (fh.ndim - DIM)
        out = []
        for w in which:
            sym = self.wirtinger_symbols[w].reshape(self.wirtinger_symbols[w].shape + extra)
            out.append(self.ifft(fh * sym))
        return out

    def mean(self, f: np.ndarray) -> np.ndarray:
        return f.mean(axis=GRID_AXES)


def _sign_of_sort(seq) -> tuple[int, tuple[int, ...]]:
    """Sign of the permutation sorting ``seq``; 0 if an index repeats."""
    seq = list(seq)
    if len(set(seq)) != len(seq):
        return 0, ()
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign, tuple(sorted(seq))


def _bideg(mono: tuple[int, ...]) -> tuple[int, int]:
    p = sum(1 for i in mono if i < 2)
    return p, len(mono) - p


def monomials(p: int, q: int) -> list[tuple[int, ...]]:
    """Lexicographic basis ``dz^I ^ dzb^J`` of (p, q)-forms."""
    return [I + J for I in itertools.combinations((0, 1), p) for J in itertools.combinations((2, 3), q)]


class BaseForm:
    """A (possibly mixed-degree, possibly matrix-valued) form on the grid."""

    __slots__ = ("grid", "terms", "value_shape")

    def __init__(self, grid: PeriodicGrid, terms: dict | None = None, value_shape: tuple = ()):
        self.grid = grid
        self.value_shape = tuple(value_shape)
        self.terms: dict[tuple[int, ...], np.ndarray] = {}
        shape = grid.shape + self.value_shape
        for mono, coef in (terms or {}).items():
            mono = tuple(mono)
            if list(mono) != sorted(set(mono)) or any(not 0 <= i < DIM for i in mono):
                raise ValueError(f"monomial {mono} is not a sorted index tuple")
            coef = np.asarray(coef, dtype=complex)
            if coef.shape != shape:
                coef = np.broadcast_to(coef, shape).copy()
            self.terms[mono] = coef

    # structure --------------------------------------------------------------

    @property
    def degrees(self) -> set[int]:
        return {len(m) for m in self.terms}

    @property
    def bidegrees(self) -> set[tuple[int, int]]:
        return {_bideg(m) for m in self.terms}

    @property
    def degree(self) -> int:
        degs = self.degrees
        if len(degs) > 1:
            raise BidegreeError(f"form has mixed degrees {sorted(degs)}")
        return degs.pop() if degs else 0

    @property
    def bidegree(self) -> tuple[int, int]:
        bd = self.bidegrees
        if len(bd) > 1:
            raise BidegreeError(f"form has mixed bidegrees {sorted(bd)}")
        return bd.pop() if bd else (0, 0)

    def component(self, mono) -> np.ndarray:
        mono = tuple(mono)
        if mono in self.terms:
            return self.terms[mono]
        return np.zeros(self.grid.shape + self.value_shape, dtype=complex)

    def part(self, p: int, q: int) -> "BaseForm":
        """The (p, q) component."""
        return BaseForm(self.grid, {m: c for m, c in self.terms.items() if _bideg(m) == (p, q)}, self.value_shape)

    def max_norm(self) -> float:
        if not self.terms:
            return 0.0
        return float(max(np.max(np.abs(c)) for c in self.terms.values()))

    def __repr__(self):
        shape = f", value_shape={self.value_shape}" if self.value_shape else ""
        return f"BaseForm(N={self.grid.n}, monomials={sorted(self.terms)}{shape})"

    # linear structure -------------------------------------------------------

    def _combine(self, other: "BaseForm", sign: float) -> "BaseForm":
        if not isinstance(other, BaseForm):
            return NotImplemented
        if other.grid != self.grid:
            raise ValueError("forms live on different grids")
        vs = self.value_shape
        if other.value_shape != vs:
            if not other.terms:
                return BaseForm(self.grid, dict(self.terms), vs)
            if not self.terms:
                vs = other.value_shape
            else:
                raise ValueError(f"value shapes differ: {vs} vs {other.value_shape}")
        terms = {m: np.broadcast_to(c, self.grid.shape + vs).copy() for m, c in self.terms.items()}
        for m, c in other.terms.items():
            if m in terms:
                terms[m] = terms[m] + sign * c
            else:
                terms[m] = sign * np.broadcast_to(c, self.grid.shape + vs)
        return BaseForm(self.grid, terms, vs)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __neg__(self):
        return BaseForm(self.grid, {m: -c for m, c in self.terms.items()}, self.value_shape)

    def __mul__(self, factor):
        """Multiply by a constant or by a scalar field (grid-shaped array)."""
        if isinstance(factor, BaseForm):
            return NotImplemented
        f = np.asarray(factor)
        if f.ndim == DIM and self.value_shape:
            f = f.reshape(f.shape + (1,) * len(self.value_shape))
        return BaseForm(self.grid, {m: c * f for m, c in self.terms.items()}, self.value_shape)

    __rmul__ = __mul__

    def conj(self) -> "BaseForm":
        """Complex conjugate (coefficients conjugated, dz <-> dzb).

        For matrix-valued forms this conjugates entries but does not transpose.
        """
        terms = {}
        for m, c in self.terms.items():
            sign, mono = _sign_of_sort(CONJ_INDEX[i] for i in m)
            terms[mono] = terms.get(mono, 0) + sign * np.conj(c)
        return BaseForm(self.grid, terms, self.value_shape)

    def dagger(self) -> "BaseForm":
        """Conjugate transpose of a matrix-valued form."""
        c = self.conj()
        return BaseForm(self.grid, {m: np.swapaxes(v, -1, -2) for m, v in c.terms.items()}, self.value_shape[::-1])

    def map_values(self, fn) -> "BaseForm":
        """Apply ``fn`` to every coefficient array (e.g. matrix products)."""
        terms = {m: fn(c) for m, c in self.terms.items()}
        vs = next(iter(terms.values())).shape[DIM:] if terms else self.value_shape
        return BaseForm(self.grid, terms, vs)

    def is_real(self, rtol: float = 1e-10) -> bool:
        scale = max(self.max_norm(), 1.0)
        return (self - self.conj()).max_norm() <= rtol * scale


# construction helpers -----------------------------------------------------


def scalar(grid: PeriodicGrid, f) -> BaseForm:
    """A 0-form (scalar or matrix field)."""
    f = np.asarray(f, dtype=complex)
    vs = f.shape[DIM:] if f.ndim >= DIM else f.shape
    return BaseForm(grid, {(): f}, vs)


def zero(grid: PeriodicGrid, value_shape: tuple = ()) -> BaseForm:
    return BaseForm(grid, {}, value_shape)


def kahler_form(grid: PeriodicGrid) -> BaseForm:
    """``omega_B = (i/2)(dz1^dz1b + dz2^dz2b)``."""
    return BaseForm(grid, {(0, 2): 0.5j, (1, 3): 0.5j})


def volume_form(grid: PeriodicGrid) -> BaseForm:
    """``omega_B^2 / 2 = dx1^dx2^dx3^dx4``."""
    return BaseForm(grid, {(0, 1, 2, 3): 1.0 / _TOP_FACTOR})


def holomorphic_volume(grid: PeriodicGrid, normalized: bool = True) -> BaseForm:
    """``psi_B`` proportional to ``dz1^dz2``.

    With ``normalized`` the constant is ``1 / (2 sqrt 2)``, which makes
    ``psi_B ^ theta`` unit length for ``omega_B + (i/2) theta^thetab``.
    """
    c = 1.0 / (2.0 * np.sqrt(2.0)) if normalized else 1.0
    return BaseForm(grid, {(0, 1): c})


def asd_forms(grid: PeriodicGrid) -> list[BaseForm]:
    """Real constant anti-self-dual basis ``dx12 - dx34, dx13 + dx24, dx14 - dx23``.

    Each is primitive of type (1,1); ``a ^ a = -2 vol`` and they are mutually
    orthogonal.
    """
    return [_real_two_form(grid, {(0, 1): 1, (2, 3): -1}),
            _real_two_form(grid, {(0, 2): 1, (1, 3): 1}),
            _real_two_form(grid, {(0, 3): 1, (1, 2): -1})]


# real <-> complex coframe --------------------------------------------------

# dz1 = dx1 + i dx2, dz2 = dx3 + i dx4, dz1b = dx1 - i dx2, dz2b = dx3 - i dx4
_M = np.array([[1, 1j, 0, 0], [0, 0, 1, 1j], [1, -1j, 0, 0], [0, 0, 1, -1j]])


@lru_cache(maxsize=None)
def _subsets(k: int) -> tuple[tuple[int, ...], ...]:
    return tuple(itertools.combinations(range(DIM), k))


@lru_cache(maxsize=None)
def _exterior_power(k: int) -> np.ndarray:
    """Matrix with ``e_S = sum_T P[S, T] dx_T`` for |S| = |T| = k."""
    subs = _subsets(k)
    P = np.empty((len(subs), len(subs)), dtype=complex)
    for a, S in enumerate(subs):
        for b, T in enumerate(subs):
            P[a, b] = np.linalg.det(_M[np.ix_(S, T)]) if k else 1.0
    return P


def _real_two_form(grid: PeriodicGrid, real_terms: dict) -> BaseForm:
    """Build a 2-form from coefficients on real monomials ``dx_i ^ dx_j``."""
    subs = _subsets(2)
    a = np.zeros(len(subs), dtype=complex)
    for T, v in real_terms.items():
        a[subs.index(T)] = v
    # a are dx-coefficients; complex coefficients c satisfy a = P^T c
    c = np.linalg.solve(_exterior_power(2).T, a)
    return BaseForm(grid, {S: c[i] for i, S in enumerate(subs) if abs(c[i]) > 1e-15})


@lru_cache(maxsize=None)
def _star_matrix(k: int) -> np.ndarray:
    """``*e_S = sum_V K[S, V] e_V`` for the flat metric, complex-linear."""
    subs_k, subs_c = _subsets(k), _subsets(DIM - k)
    Pk, Pc_inv = _exterior_power(k), np.linalg.inv(_exterior_power(DIM - k))
    real_star = np.zeros((len(subs_k), len(subs_c)))
    for a, T in enumerate(subs_k):
        Tc = tuple(i for i in range(DIM) if i not in T)
        sign, _ = _sign_of_sort(T + Tc)
        real_star[a, subs_c.index(Tc)] = sign
    K = Pk @ real_star @ Pc_inv
    K[np.abs(K) < 1e-14] = 0
    return K


_TOP_FACTOR = float(np.real(_exterior_power(4)[0, 0]))  # dz1^dz2^dz1b^dz2b = 4 vol


# differential operators ---------------------------------------------------


def _apply_partial(f: BaseForm, directions, check: str | None) -> BaseForm:
    if check is not None:
        idx = 0 if check == "p" else 1
        bad = [bd for bd in f.bidegrees if bd[idx] >= 2]
        if bad:
            op = "del" if check == "p" else "delbar"
            raise BidegreeError(f"{op} of a form with bidegree {bad[0]} overflows a complex surface")
    grid = f.grid
    out: dict[tuple[int, ...], np.ndarray] = {}
    for mono, coef in f.terms.items():
        dirs = [w for w in directions if w not in mono]
        if not dirs:
            continue
        for w, der in zip(dirs, grid.partials(coef, dirs)):
            sign, new = _sign_of_sort((w,) + mono)
            out[new] = out[new] + sign * der if new in out else sign * der
    return BaseForm(grid, out, f.value_shape)


def del_(f: BaseForm) -> BaseForm:
    """The (1,0) differential."""
    return _apply_partial(f, (0, 1), "p")


def delbar(f: BaseForm) -> BaseForm:
    """The (0,1) differential."""
    return _apply_partial(f, (2, 3), "q")


def d(f: BaseForm) -> BaseForm:
    """Exterior derivative ``d = del + delbar`` (top-degree parts map to zero)."""
    return _apply_partial(f, (0, 1, 2, 3), None)


def _coef_product(x: np.ndarray, y: np.ndarray, xs: tuple, ys: tuple) -> np.ndarray:
    if len(xs) == 2 and len(ys) == 2:
        return np.matmul(x, y)
    if not xs:
        return x.reshape(x.shape + (1,) * len(ys)) * y if ys else x * y
    if not ys:
        return x * y.reshape(y.shape + (1,) * len(xs))
    raise ValueError(f"cannot multiply values of shapes {xs} and {ys}")


def wedge(a: BaseForm, b: BaseForm, strict: bool = True) -> BaseForm:
    """Exterior product; matrix values are multiplied as matrices.

    With ``strict`` a product whose degree could exceed 4 raises; otherwise
    such products are dropped (they vanish on a surface).
    """
    if a.grid != b.grid:
        raise ValueError("forms live on different grids")
    if strict and a.terms and b.terms and max(a.degrees) + max(b.degrees) > DIM:
        raise BidegreeError(f"wedge of degrees {max(a.degrees)} and {max(b.degrees)} exceeds {DIM}")
    out: dict[tuple[int, ...], np.ndarray] = {}
    vs = None
    for ma, ca in a.terms.items():
        for mb, cb in b.terms.items():
            sign, mono = _sign_of_sort(ma + mb)
            if sign == 0:
                continue
            prod = _coef_product(ca, cb, a.value_shape, b.value_shape)
            if sign < 0:
                prod = -prod
            out[mono] = out[mono] + prod if mono in out else prod
            vs = prod.shape[DIM:]
    if vs is None:
        vs = _product_shape(a.value_shape, b.value_shape)
    return BaseForm(a.grid, out, vs)


def _product_shape(xs: tuple, ys: tuple) -> tuple:
    if len(xs) == 2 and len(ys) == 2:
        return (xs[0], ys[1])
    return xs or ys


def matrix_trace(f: BaseForm) -> BaseForm:
    """Trace of a square-matrix-valued form."""
    return BaseForm(f.grid, {m: np.trace(c, axis1=-2, axis2=-1) for m, c in f.terms.items()})


# metric operations --------------------------------------------------------


def star_base(f: BaseForm) -> BaseForm:
    """Complex-linear Hodge star of the flat metric.

    Satisfies ``eta ^ *beta = g(eta, beta) omega_B^2/2`` with ``g`` the
    complex-bilinear extension of the flat metric.
    """
    out: dict[tuple[int, ...], np.ndarray] = {}
    for mono, coef in f.terms.items():
        k = len(mono)
        K = _star_matrix(k)
        row = _subsets(k).index(mono)
        for col, target in enumerate(_subsets(DIM - k)):
            w = K[row, col]
            if w == 0:
                continue
            out[target] = out[target] + w * coef if target in out else w * coef
    return BaseForm(f.grid, out, f.value_shape)


def inner(a: BaseForm, b: BaseForm) -> np.ndarray:
    """Pointwise complex-bilinear metric pairing ``g(a, b)``, computed in the real coframe."""
    total = np.zeros(a.grid.shape, dtype=complex)
    for k in range(DIM + 1):
        subs = _subsets(k)
        P = _exterior_power(k)
        ra = _real_coefficients(a, k, subs, P)
        rb = _real_coefficients(b, k, subs, P)
        if ra is not None and rb is not None:
            total = total + np.einsum("t...,t...->...", ra, rb)
    return total


def _real_coefficients(f: BaseForm, k: int, subs, P):
    monos = [m for m in f.terms if len(m) == k]
    if not monos:
        return None
    c = np.stack([f.component(S) for S in subs])
    return np.tensordot(P.T, c, axes=(1, 0))


def top_density(f: BaseForm) -> np.ndarray:
    """Coefficient of a 4-form against the volume form ``omega_B^2/2``."""
    return f.component((0, 1, 2, 3)) * _TOP_FACTOR


def trace_against(f: BaseForm) -> np.ndarray:
    """``Lambda f`` for a (1,1)-form: ``f ^ omega_B = (Lambda f) omega_B^2/2``."""
    if f.terms and f.bidegree != (1, 1):
        raise BidegreeError(f"trace_against needs a (1,1)-form, got {f.bidegree}")
    return top_density(wedge(f, kahler_form(f.grid)))


def integrate(f: BaseForm) -> complex:
    """Integral of a top-degree form over T^4 (Riemann sum, exact for band-limited data)."""
    if f.terms and f.degrees != {DIM}:
        raise BidegreeError(f"can only integrate 4-forms, got degrees {sorted(f.degrees)}")
    dens = top_density(f)
    return complex(dens.sum() * f.grid.spacing**DIM) if not f.value_shape else dens.sum(axis=GRID_AXES) * f.grid.spacing**DIM


def complex_hessian(grid: PeriodicGrid, f: np.ndarray) -> np.ndarray:
    """``H[..., j, k] = d^2 f / dz_j dzb_k`` as a grid of 2x2 matrices."""
    fh = grid.fft(f)
    s = grid.wirtinger_symbols
    H = np.empty(grid.shape + (2, 2), dtype=complex)
    for j in range(2):
        for k in range(2):
            H[..., j, k] = grid.ifft(fh * s[j] * s[2 + k])
    return H


# serialization -------------------------------------------------------------


def _atomic_write(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_form(stem: str | os.PathLike, f: BaseForm, meta: dict | None = None) -> tuple[Path, Path]:
    """Write ``<stem>.bin`` (little-endian complex128, row-major, monomials in
    lexicographic order) and a ``<stem>.json`` sidecar."""
    stem = Path(stem)
    monos = sorted(f.terms, key=lambda m: (len(m), m))
    bidegs = sorted(f.bidegrees)
    sidecar = {
        "N": f.grid.n,
        "bidegree": list(bidegs[0]) if len(bidegs) == 1 else [list(b) for b in bidegs],
        "monomials": [list(m) for m in monos],
        "value_shape": list(f.value_shape),
        "dtype": "<c16",
        "layout": "row-major; per monomial: grid axes x1,x2,x3,x4 then value axes",
    }
    if meta:
        sidecar["meta"] = meta
    blob = b"".join(np.ascontiguousarray(f.terms[m], dtype="<c16").tobytes() for m in monos)
    bin_path, json_path = stem.with_suffix(".bin"), stem.with_suffix(".json")
    _atomic_write(bin_path, blob)
    _atomic_write(json_path, (json.dumps(sidecar, indent=2) + "\n").encode())
    return bin_path, json_path


def load_form(stem: str | os.PathLike) -> BaseForm:
    stem = Path(stem)
    sidecar = json.loads(stem.with_suffix(".json").read_text())
    grid = PeriodicGrid(int(sidecar["N"]))
    vs = tuple(sidecar.get("value_shape", []))
    raw = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<c16")
    per = int(np.prod(grid.shape + vs))
    monos = [tuple(m) for m in sidecar["monomials"]]
    if raw.size != per * len(monos):
        raise ValueError(f"{stem}.bin holds {raw.size} values, expected {per * len(monos)}")
    terms = {m: raw[i * per:(i + 1) * per].reshape(grid.shape + vs).astype(complex) for i, m in enumerate(monos)}
    return BaseForm(grid, terms, vs)
