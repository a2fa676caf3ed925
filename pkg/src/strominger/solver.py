"""Continuity-method Newton solver for the reduced scalar anomaly equation.

On the flat base the unknown is a real function ``u`` and the equation, as a
density against ``vol = omega_B^2/2``, reads::

    i ddb e^u ^ omega_B + s t a' i ddb(e^-u rho) - (a'/2) ddb u ^ ddb u + t mu vol = 0

with ``s = sign_rho``.  Every term except ``t mu`` is exact, so the left side
always integrates to ``t * integral(mu)`` and ``mu`` must have zero mean.

Solutions are normalised by ``integral(e^u vol) = A_norm``; Newton updates are
taken in the complement ``integral(e^{u0} v) = 0`` of the kernel direction and
followed by a constant shift restoring the normalisation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .spectral import BaseForm, PeriodicGrid, complex_hessian, del_, delbar, kahler_form, top_density

__all__ = [
    "SolverError",
    "UpsilonViolation",
    "PositivityLost",
    "NewtonDivergence",
    "EquationData",
    "SolverParams",
    "TraceRow",
    "SolverState",
    "residual",
    "manufacture",
    "linearize",
    "hessian_norm",
    "upsilon_check",
    "comparison_form",
    "comparison_positive",
    "solve_at_t",
    "continuity_solve",
    "linear_oracle",
]

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class UpsilonViolation(SolverError):
    def __init__(self, which: str, t: float | None = None):
        self.which, self.t = which, t
        at = "" if t is None else f" at t = {t:.6g}"
        super().__init__(f"left admissible set Upsilon{at}: {which} failed")


class PositivityLost(SolverError):
    def __init__(self, t: float | None = None, min_eig: float | None = None):
        self.t = t
        at = "" if t is None else f" at t = {t:.6g}"
        extra = "" if min_eig is None else f" (smallest eigenvalue {min_eig:.3e})"
        super().__init__(f"comparison form not positive{at}{extra}")


class NewtonDivergence(SolverError):
    def __init__(self, residual_norm: float, iterations: int, t: float | None = None):
        self.residual_norm, self.iterations, self.t = residual_norm, iterations, t
        at = "" if t is None else f" at t = {t:.6g}"
        super().__init__(f"Newton did not converge{at} after {iterations} iterations (residual {residual_norm:.3e})")


@dataclass(frozen=True)
class EquationData:
    grid: PeriodicGrid
    rho: BaseForm
    mu: np.ndarray
    alpha: float
    sign_rho: int = -1
    mean_rtol: float = 1e-10

    def __post_init__(self):
        if self.sign_rho not in (1, -1):
            raise ValueError("sign_rho must be +1 or -1")
        mu = np.broadcast_to(np.asarray(self.mu, dtype=float), self.grid.shape).copy()
        object.__setattr__(self, "mu", mu)
        if self.rho.terms and self.rho.bidegrees != {(1, 1)}:
            raise ValueError("rho must be a (1,1)-form")
        if self.rho.terms and not self.rho.is_real(1e-10):
            raise ValueError("rho must be a real form")
        scale = float(np.max(np.abs(mu)))
        mean = abs(float(mu.mean()))
        if scale > 0 and mean > self.mean_rtol * scale:
            raise ValueError(f"mu must integrate to zero (mean {mean:.3e}, scale {scale:.3e})")


@dataclass
class SolverParams:
    """Admissible-set constants, normalisation and iteration controls.

    ``gamma`` is accepted as another name for ``tau``.  ``track_tol`` is the
    looser Newton tolerance used for ``t < 1`` (``None``: use ``newton_tol``).
    """

    A_norm: float
    delta: float = 1e-2
    tau: float = 1e-2
    t_steps: int = 10
    newton_tol: float = 1e-10
    max_newton: int = 20
    gmres_rtol: float = 1e-12
    predictor: bool = True
    track_tol: float | None = 1e-6
    gamma: float | None = None

    def __post_init__(self):
        if self.gamma is not None:
            self.tau = self.gamma
        self.gamma = self.tau
        for name in ("A_norm", "delta", "tau", "newton_tol", "gmres_rtol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if int(self.t_steps) < 1 or int(self.max_newton) < 1:
            raise ValueError("t_steps and max_newton must be >= 1")


@dataclass
class TraceRow:
    t: float
    residual: float
    iterations: int


@dataclass
class SolverState:
    u: np.ndarray
    t: float
    residual_norm: float
    in_upsilon: bool
    omega_positive: bool
    newton_iterations: int
    trace: list[TraceRow] = field(default_factory=list)

    @property
    def total_iterations(self) -> int:
        return sum(r.iterations for r in self.trace) if self.trace else self.newton_iterations


# spectral helpers -------------------------------------------------------------


def _half_laplacian(grid: PeriodicGrid, f: np.ndarray) -> np.ndarray:
    """Density of ``i ddb f ^ omega_B``: half the flat Laplacian."""
    return np.real(grid.ifft(0.5 * grid.laplacian_symbol * grid.fft(f)))


def _i_ddb_density(rho: BaseForm, f: np.ndarray) -> np.ndarray:
    """Density of ``i ddb (f rho)`` for a (1,1)-form ``rho``."""
    if not rho.terms:
        return np.zeros(rho.grid.shape)
    return np.real(1j * top_density(del_(delbar(rho * f))))


def _ddb_square_density(H: np.ndarray) -> np.ndarray:
    """Density of ``ddb u ^ ddb u`` from the complex Hessian: ``-8 det``."""
    return -8.0 * np.real(H[..., 0, 0] * H[..., 1, 1] - H[..., 0, 1] * H[..., 1, 0])


def _field(grid: PeriodicGrid, u) -> np.ndarray:
    return np.broadcast_to(np.asarray(u, dtype=float), grid.shape)


def _integral(grid: PeriodicGrid, f: np.ndarray) -> float:
    return float(np.sum(f)) * grid.spacing**4


def residual(u, data: EquationData, t: float) -> np.ndarray:
    """Left side of the equation as a density against ``omega_B^2/2``."""
    grid = data.grid
    u = _field(grid, u)
    a = data.alpha
    out = _half_laplacian(grid, np.exp(u))
    out = out + data.sign_rho * t * a * _i_ddb_density(data.rho, np.exp(-u))
    if a != 0:
        out = out - 0.5 * a * _ddb_square_density(complex_hessian(grid, u))
    return out + t * data.mu


def manufacture(u_star, rho: BaseForm, alpha: float, sign_rho: int = -1, rtol: float = 1e-8) -> EquationData:
    """Source ``mu`` for which ``u_star`` solves the equation at ``t = 1``."""
    grid = rho.grid
    zero = EquationData(grid, rho, np.zeros(grid.shape), alpha, sign_rho)
    mu = -residual(u_star, zero, 1.0)
    scale = float(np.max(np.abs(mu)))
    mean = abs(float(mu.mean()))
    if scale > 0 and mean > rtol * scale:
        raise SolverError(f"manufactured source has nonzero mean {mean:.3e}: sign or normalisation convention broken")
    mu = mu - mu.mean()
    return EquationData(grid, rho, mu, alpha, sign_rho)


def linearize(u0, data: EquationData, t: float) -> Callable[[np.ndarray], np.ndarray]:
    """First variation ``v -> d/de residual(u0 + e v)``."""
    grid = data.grid
    u0 = _field(grid, u0)
    a = data.alpha
    eu, emu = np.exp(u0), np.exp(-u0)
    H0 = complex_hessian(grid, u0) if a != 0 else None
    coef_rho = data.sign_rho * t * a

    def apply(v: np.ndarray) -> np.ndarray:
        v = _field(grid, v)
        out = _half_laplacian(grid, eu * v)
        if coef_rho != 0 and data.rho.terms:
            out = out - coef_rho * _i_ddb_density(data.rho, emu * v)
        if a != 0:
            Hv = complex_hessian(grid, v)
            ddet = (H0[..., 0, 0] * Hv[..., 1, 1] + Hv[..., 0, 0] * H0[..., 1, 1]
                    - H0[..., 0, 1] * Hv[..., 1, 0] - Hv[..., 0, 1] * H0[..., 1, 0])
            out = out + 4.0 * a * np.real(ddet)
        return out

    return apply


def hessian_norm(grid: PeriodicGrid, u) -> np.ndarray:
    """Pointwise flat-metric norm of ``i ddb u``: ``2 sqrt(sum |u_{j kb}|^2)``."""
    H = complex_hessian(grid, _field(grid, u))
    return 2.0 * np.sqrt(np.sum(np.abs(H) ** 2, axis=(-2, -1)))


def upsilon_check(u, alpha: float, params: SolverParams, grid: PeriodicGrid | None = None) -> tuple[bool, bool]:
    """``(max e^{-2u} < delta, |alpha| |i ddb u| < e^u tau everywhere)``."""
    u = np.asarray(u, dtype=float)
    if grid is None:
        grid = PeriodicGrid(u.shape[0])
    u = _field(grid, u)
    first = bool(np.max(np.exp(-2.0 * u)) < params.delta)
    second = bool(np.all(abs(alpha) * hessian_norm(grid, u) < np.exp(u) * params.tau))
    return first, second


def comparison_form(u, data: EquationData, t: float) -> BaseForm:
    """``e^u omega_B - s t a' e^-u rho + a' i ddb u``."""
    grid = data.grid
    u = _field(grid, u)
    form = kahler_form(grid) * np.exp(u)
    if data.rho.terms:
        form = form - data.rho * (data.sign_rho * t * data.alpha * np.exp(-u))
    if data.alpha != 0:
        H = complex_hessian(grid, u)
        terms = {(j, 2 + k): 1j * data.alpha * H[..., j, k] for j in range(2) for k in range(2)}
        form = form + BaseForm(grid, terms)
    return form


def comparison_positive(u, data: EquationData, t: float) -> tuple[bool, float]:
    """Positivity of the comparison (1,1)-form via its Hermitian coefficient matrix."""
    f = comparison_form(u, data, t)
    h = np.empty(data.grid.shape + (2, 2), dtype=complex)
    for j in range(2):
        for k in range(2):
            h[..., j, k] = f.component((j, 2 + k)) / 1j
    h = 0.5 * (h + np.conj(np.swapaxes(h, -1, -2)))
    lam = float(np.min(np.linalg.eigvalsh(h)[..., 0]))
    return lam > 0, lam


def _normalize(grid: PeriodicGrid, u: np.ndarray, A_norm: float) -> np.ndarray:
    return u + np.log(A_norm / _integral(grid, np.exp(u)))


def _monitor(u, data: EquationData, t: float, params: SolverParams) -> tuple[bool, bool]:
    first, second = upsilon_check(u, data.alpha, params, data.grid)
    if not first:
        raise UpsilonViolation("e^{-2u} < delta", t)
    if not second:
        raise UpsilonViolation("|alpha| |i ddb u| < e^u tau", t)
    pos, lam = comparison_positive(u, data, t)
    if not pos:
        raise PositivityLost(t, lam)
    return True, True


def solve_at_t(u_init, data: EquationData, t: float, params: SolverParams, tol: float | None = None) -> SolverState:
    """Newton iteration at fixed ``t`` with GMRES linear solves."""
    grid = data.grid
    tol = params.newton_tol if tol is None else tol
    n = int(np.prod(grid.shape))
    u = _normalize(grid, np.array(_field(grid, u_init), dtype=float), params.A_norm)
    _monitor(u, data, t, params)
    r = residual(u, data, t)
    rnorm = float(np.max(np.abs(r)))
    it = 0
    while rnorm > tol:
        if it >= params.max_newton:
            raise NewtonDivergence(rnorm, it, t)
        L = linearize(u, data, t)
        w = np.exp(u)
        w = w / w.sum()
        lap = 0.5 * np.exp(float(np.mean(u))) * grid.laplacian_symbol
        inv = np.zeros_like(lap)
        np.divide(1.0, lap, out=inv, where=lap != 0)

        def project(y, w=w):
            y = y.reshape(grid.shape)
            return y - np.sum(w * y)

        def matvec(y, L=L, project=project):
            return L(project(y)).ravel()

        def precond(y):
            return np.real(grid.ifft(inv * grid.fft(y.reshape(grid.shape)))).ravel()

        A = LinearOperator((n, n), matvec=matvec, dtype=float)
        M = LinearOperator((n, n), matvec=precond, dtype=float)
        # absolute floor: no point solving below the Newton tolerance (inexact Newton)
        atol = 1e-2 * min(tol, params.newton_tol) * np.sqrt(n)
        y, info = gmres(A, -r.ravel(), M=M, rtol=params.gmres_rtol, atol=atol, restart=40, maxiter=3)
        if info < 0 or not np.all(np.isfinite(y)):
            raise NewtonDivergence(rnorm, it, t)
        u = _normalize(grid, u + project(y), params.A_norm)
        it += 1
        _monitor(u, data, t, params)
        r = residual(u, data, t)
        new = float(np.max(np.abs(r)))
        log.debug("t=%.4f newton %d residual %.3e", t, it, new)
        if not np.isfinite(new):
            raise NewtonDivergence(new, it, t)
        rnorm = new
    return SolverState(u, t, rnorm, True, True, it)


def continuity_solve(data: EquationData, params: SolverParams, u0=None) -> SolverState:
    """March ``t`` from 0 to 1, reusing each solution as the next initial guess.

    Intermediate values of ``t`` are solved to ``params.track_tol``, the final
    one to ``params.newton_tol``.  A failed step is retried once through its
    midpoint.  With
    ``params.predictor`` the initial guess is extrapolated linearly from the
    two previous solutions.
    """
    grid = data.grid
    if u0 is None:
        u0 = np.full(grid.shape, np.log(params.A_norm / grid.volume))
    u0 = np.array(_field(grid, u0), dtype=float)
    first, second = upsilon_check(u0, data.alpha, params, grid)
    if not (first and second):
        raise UpsilonViolation("e^{-2u} < delta" if not first else "|alpha| |i ddb u| < e^u tau", 0.0)

    trace: list[TraceRow] = []
    track = params.newton_tol if params.track_tol is None else max(params.track_tol, params.newton_tol)
    state = solve_at_t(u0, data, 0.0, params, track)
    trace.append(TraceRow(0.0, state.residual_norm, state.newton_iterations))
    prev: tuple[float, np.ndarray] | None = None
    ts = np.linspace(0.0, 1.0, int(params.t_steps) + 1)[1:]
    for t in ts:
        t = float(t)
        tol = params.newton_tol if t == ts[-1] else track
        guess = state.u
        if params.predictor and prev is not None:
            s = (t - state.t) / (state.t - prev[0])
            guess = state.u + s * (state.u - prev[1])
        try:
            new = solve_at_t(guess, data, t, params, tol)
        except NewtonDivergence:
            mid = 0.5 * (state.t + t)
            log.info("halving step: retry through t=%.4f", mid)
            half = solve_at_t(state.u, data, mid, params, track)
            trace.append(TraceRow(mid, half.residual_norm, half.newton_iterations))
            state, prev = half, (state.t, state.u)
            new = solve_at_t(state.u, data, t, params, tol)
        trace.append(TraceRow(t, new.residual_norm, new.newton_iterations))
        prev = (state.t, state.u)
        state = new
    return replace(state, trace=trace)


def linear_oracle(data: EquationData, A_norm: float) -> np.ndarray:
    """Direct solve for ``e^u`` when ``alpha = 0``: ``(1/2) Lap w = -mu``, ``integral(w) = A_norm``."""
    if data.alpha != 0:
        raise ValueError("the linear oracle needs alpha = 0")
    grid = data.grid
    sym = 0.5 * grid.laplacian_symbol
    inv = np.zeros_like(sym)
    np.divide(1.0, sym, out=inv, where=sym != 0)
    w = np.real(grid.ifft(inv * grid.fft(-data.mu)))
    return w - w.mean() + A_norm / grid.volume
