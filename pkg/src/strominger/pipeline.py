"""Config-driven orchestration: lattice report, data synthesis, solve, verify.

Geometric data on the flat torus is built from integer charges:

* ``omega_i = (1/2pi) sum_k c_i[k] a_k`` for the real anti-self-dual basis
  ``a_k``; ``d theta = omega_1 + i omega_2``.
* the bundle is a sum of line bundles; term ``{"asd": c, "charges": q}``
  contributes ``-i (1/2pi) (sum_k c[k] a_k) diag(q)`` to ``F_H``.

With these conventions every class is ``2 pi`` times an integral class and
the analytic integral of ``mu'`` equals ``2 pi^2 (rhs - lhs)`` of the lattice
balance.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np

from . import lattice as lat
from .curvature import HermitianMatrixField, PotentialMatrix, curvature, hym_residual, rho_from_potential, total_curvature
from .fibered import AnsatzData, build_omega_u, del_total, delbar_total, structure_residuals
from .solver import (
    EquationData,
    SolverError,
    SolverParams,
    SolverState,
    continuity_solve,
    manufacture,
    residual,
)
from .spectral import (
    BaseForm,
    PeriodicGrid,
    _atomic_write,
    asd_forms,
    kahler_form,
    load_form,
    matrix_trace,
    save_form,
    scalar,
    top_density,
    wedge,
)

__all__ = [
    "ConfigError",
    "IntegrabilityViolation",
    "RunConfig",
    "load_config",
    "parse_config",
    "Synthesis",
    "synthesize",
    "cmd_lattice",
    "cmd_synthesize",
    "cmd_solve",
    "cmd_verify",
    "CONVENTIONS",
]

CONVENTIONS = {
    "period": "2*pi on each axis; z1 = x1 + i x2, z2 = x3 + i x4",
    "kahler_form": "omega_B = (i/2)(dz1^dz1b + dz2^dz2b), vol = omega_B^2/2",
    "class_scaling": "omega_i = 2*pi * (integral ASD class) = (1/2pi) sum c_k a_k",
    "curvature": "R = delbar(del G . G^-1)",
    "rho": "rho = -i tr(delbar A ^ (del A)^* G_B^-1); equation uses rho/2",
    "integral_mu": "int mu' vol = 2*pi^2 * (rhs - lhs) of the lattice balance",
}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (usage error)."""


class IntegrabilityViolation(RuntimeError):
    def __init__(self, report: dict):
        self.report = report
        super().__init__(
            f"integrability violated: lhs = {report['lattice']['lhs']}, rhs = {report['lattice']['rhs']}, "
            f"imbalance = {report['lattice']['residual']}"
        )


# config ------------------------------------------------------------------------

_SECTIONS = {"lattice", "geometry", "solver", "verify", "output"}
_LATTICE_KEYS = {"name", "weights", "degrees", "h_self", "num_A1", "b2_orb", "k_blown",
                 "bundle", "alpha_prime", "Q1", "Q2", "alpha_grid"}
_BUNDLE_TOP_KEYS = {"rank", "c1_sq", "c2"}
_GEOMETRY_KEYS = {"N", "omega1", "omega2", "bundle", "alpha_prime", "sign_rho", "source", "u_star"}
_SOLVER_KEYS = {"delta", "tau", "gamma", "A_norm", "t_steps", "newton_tol", "max_newton", "track_tol", "predictor"}
_VERIFY_KEYS = {"anomaly_tol", "balanced_tol", "hym_tol"}
_OUTPUT_KEYS = {"dir"}


def _reject_unknown(section: str, data: dict, allowed: set):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{section}' must be an object")
    extra = sorted(set(data) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in '{section}': {', '.join(extra)}")


def _rational(value, what: str) -> Fraction:
    if isinstance(value, bool):
        raise ConfigError(f"{what}: expected a number, got {value!r}")
    try:
        if isinstance(value, float):
            return Fraction(repr(value))
        return lat.to_fraction(value)
    except (ValueError, TypeError, ZeroDivisionError) as exc:
        raise ConfigError(f"{what}: {exc}") from None


def _int(value, what: str, lo: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{what}: expected an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(f"{what}: must be >= {lo}, got {value}")
    return value


def _int_vec(value, what: str, length: int | None = None) -> tuple[int, ...]:
    if not isinstance(value, list):
        raise ConfigError(f"{what}: expected a list of integers")
    out = tuple(_int(v, what) for v in value)
    if length is not None and len(out) != length:
        raise ConfigError(f"{what}: expected {length} entries, got {len(out)}")
    return out


def _positive(value, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
        raise ConfigError(f"{what}: expected a positive number, got {value!r}")
    return float(value)


@dataclass(frozen=True)
class BundleTerm:
    asd: tuple[int, int, int]
    charges: tuple[int, ...]


@dataclass(frozen=True)
class Mode:
    amp: float
    k: tuple[int, int, int, int]
    phase: str = "cos"


@dataclass(frozen=True)
class GeometryConfig:
    N: int
    omega1: tuple[int, int, int]
    omega2: tuple[int, int, int]
    bundle: tuple[BundleTerm, ...]
    alpha_prime: Fraction
    sign_rho: int = -1
    source: str = "geometric"
    u_star: tuple[Mode, ...] = ()

    @property
    def rank(self) -> int:
        return len(self.bundle[0].charges) if self.bundle else 0

    def line_classes(self) -> list[tuple[int, int, int]]:
        """Integer class vector of each line-bundle summand."""
        out = []
        for j in range(self.rank):
            v = [0, 0, 0]
            for term in self.bundle:
                for k in range(3):
                    v[k] += term.charges[j] * term.asd[k]
            out.append(tuple(v))
        return out


@dataclass(frozen=True)
class RunConfig:
    lattice: dict | None = None
    geometry: GeometryConfig | None = None
    solver: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    output: str | None = None


def _parse_lattice(sec: dict) -> dict:
    _reject_unknown("lattice", sec, _LATTICE_KEYS)
    out: dict[str, Any] = {"name": str(sec.get("name", "K3 orbifold"))}
    if "num_A1" not in sec:
        raise ConfigError("lattice: 'num_A1' is required")
    out["num_A1"] = _int(sec["num_A1"], "lattice.num_A1", 0)
    h_from_ci = None
    if "weights" in sec or "degrees" in sec:
        w = _int_vec(sec.get("weights"), "lattice.weights")
        dg = _int_vec(sec.get("degrees"), "lattice.degrees")
        try:
            h_from_ci = lat.weighted_ci_h_self(w, dg)
        except lat.LatticeError as exc:
            raise ConfigError(f"lattice: {exc}") from None
        out["weights"], out["degrees"] = list(w), list(dg)
    if "h_self" in sec:
        h = _rational(sec["h_self"], "lattice.h_self")
        if h_from_ci is not None and h != h_from_ci:
            raise ConfigError(f"lattice: h_self {h} disagrees with weights/degrees ({h_from_ci})")
    elif h_from_ci is not None:
        h = h_from_ci
    else:
        raise ConfigError("lattice: give 'h_self' or 'weights' and 'degrees'")
    out["h_self"] = h
    out["b2_orb"] = _int(sec.get("b2_orb", lat.K3_B2 - out["num_A1"]), "lattice.b2_orb", 1)
    out["k_blown"] = _int(sec.get("k_blown", 0), "lattice.k_blown", 0)
    if "bundle" in sec:
        b = sec["bundle"]
        _reject_unknown("lattice.bundle", b, _BUNDLE_TOP_KEYS)
        out["bundle"] = lat.BundleTopologyData(
            rank=_int(b.get("rank", 1), "lattice.bundle.rank", 1),
            c1_sq=_rational(b.get("c1_sq", 0), "lattice.bundle.c1_sq"),
            c2=_rational(b.get("c2", 0), "lattice.bundle.c2"),
        )
    for key in ("alpha_prime", "Q1", "Q2"):
        if key in sec:
            out[key] = _rational(sec[key], f"lattice.{key}")
    grid = sec.get("alpha_grid", [])
    if not isinstance(grid, list):
        raise ConfigError("lattice.alpha_grid must be a list")
    out["alpha_grid"] = [_rational(a, "lattice.alpha_grid") for a in grid]
    try:
        surf = lat.OrbifoldSurface(out["name"], out["b2_orb"], out["num_A1"], h)
        lat.BlowupLattice(surf, out["k_blown"])
    except lat.LatticeError as exc:
        raise ConfigError(f"lattice: {exc}") from None
    return out


def _parse_geometry(sec: dict) -> GeometryConfig:
    _reject_unknown("geometry", sec, _GEOMETRY_KEYS)
    N = _int(sec.get("N", 16), "geometry.N", 8)
    if N % 2:
        raise ConfigError("geometry.N must be even")
    o1 = _int_vec(sec.get("omega1", [0, 0, 0]), "geometry.omega1", 3)
    o2 = _int_vec(sec.get("omega2", [0, 0, 0]), "geometry.omega2", 3)
    terms = []
    raw = sec.get("bundle", [])
    if not isinstance(raw, list):
        raise ConfigError("geometry.bundle must be a list")
    for i, t in enumerate(raw):
        _reject_unknown(f"geometry.bundle[{i}]", t, {"asd", "charges"})
        terms.append(BundleTerm(_int_vec(t.get("asd"), f"geometry.bundle[{i}].asd", 3),
                                _int_vec(t.get("charges"), f"geometry.bundle[{i}].charges")))
    if terms and len({len(t.charges) for t in terms}) != 1:
        raise ConfigError("geometry.bundle: all terms need the same number of charges (the rank)")
    if terms and len(terms[0].charges) < 1:
        raise ConfigError("geometry.bundle: charges must be non-empty")
    if "alpha_prime" not in sec:
        raise ConfigError("geometry: 'alpha_prime' is required")
    alpha = _rational(sec["alpha_prime"], "geometry.alpha_prime")
    sign = sec.get("sign_rho", -1)
    if sign not in (1, -1) or isinstance(sign, bool):
        raise ConfigError("geometry.sign_rho must be +1 or -1")
    source = sec.get("source", "geometric")
    if source not in ("geometric", "manufactured"):
        raise ConfigError("geometry.source must be 'geometric' or 'manufactured'")
    modes = []
    for i, m in enumerate(sec.get("u_star", [])):
        _reject_unknown(f"geometry.u_star[{i}]", m, {"amp", "k", "phase"})
        amp = m.get("amp")
        if isinstance(amp, bool) or not isinstance(amp, (int, float)):
            raise ConfigError(f"geometry.u_star[{i}].amp must be a number")
        k = _int_vec(m.get("k"), f"geometry.u_star[{i}].k", 4)
        if max(abs(x) for x in k) >= N // 3:
            raise ConfigError(f"geometry.u_star[{i}].k exceeds the 1/3 band limit for N = {N}")
        phase = m.get("phase", "cos")
        if phase not in ("cos", "sin"):
            raise ConfigError(f"geometry.u_star[{i}].phase must be 'cos' or 'sin'")
        modes.append(Mode(float(amp), k, phase))
    if source == "manufactured" and not modes:
        raise ConfigError("geometry: manufactured source needs 'u_star'")
    if source == "geometric" and modes:
        raise ConfigError("geometry: 'u_star' only applies to the manufactured source")
    return GeometryConfig(N, o1, o2, tuple(terms), alpha, int(sign), source, tuple(modes))


def _parse_solver(sec: dict) -> dict:
    _reject_unknown("solver", sec, _SOLVER_KEYS)
    out: dict[str, Any] = {}
    for key in ("delta", "tau", "gamma", "A_norm", "newton_tol", "track_tol"):
        if key in sec and sec[key] is not None:
            out[key] = _positive(sec[key], f"solver.{key}")
    if "tau" in out and "gamma" in out and out["tau"] != out["gamma"]:
        raise ConfigError("solver: 'tau' and 'gamma' name the same constant and must agree")
    for key in ("t_steps", "max_newton"):
        if key in sec:
            out[key] = _int(sec[key], f"solver.{key}", 1)
    if "predictor" in sec:
        if not isinstance(sec["predictor"], bool):
            raise ConfigError("solver.predictor must be true or false")
        out["predictor"] = sec["predictor"]
    return out


def _parse_verify(sec: dict) -> dict:
    _reject_unknown("verify", sec, _VERIFY_KEYS)
    out = {"anomaly_tol": 1e-6, "balanced_tol": 1e-8, "hym_tol": 1e-8}
    for key in _VERIFY_KEYS:
        if key in sec:
            out[key] = _positive(sec[key], f"verify.{key}")
    return out


def parse_config(doc: dict) -> RunConfig:
    """Validate every section before anything is computed."""
    _reject_unknown("config", doc, _SECTIONS)
    lattice = _parse_lattice(doc["lattice"]) if "lattice" in doc else None
    geometry = _parse_geometry(doc["geometry"]) if "geometry" in doc else None
    solver = _parse_solver(doc.get("solver", {}))
    verify = _parse_verify(doc.get("verify", {}))
    out = doc.get("output", {})
    _reject_unknown("output", out, _OUTPUT_KEYS)
    directory = out.get("dir")
    if directory is not None and not isinstance(directory, str):
        raise ConfigError("output.dir must be a string")
    return RunConfig(lattice, geometry, solver, verify, directory)


def load_config(path: str | Path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return parse_config(doc)


# artifacts -----------------------------------------------------------------------


def _json_default(obj):
    if isinstance(obj, Fraction):
        return lat.fraction_str(obj)
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path: Path, doc: dict) -> Path:
    text = json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"
    _atomic_write(Path(path), text.encode())
    return Path(path)


def write_csv(path: Path, header: list[str], rows: list[list]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    _atomic_write(Path(path), buf.getvalue().encode())
    return Path(path)


# lattice ------------------------------------------------------------------------------


def cmd_lattice(cfg: RunConfig) -> dict:
    if cfg.lattice is None:
        raise ConfigError("the lattice command needs a 'lattice' section")
    L = cfg.lattice
    surf = lat.OrbifoldSurface(L["name"], L["b2_orb"], L["num_A1"], L["h_self"])
    blown = lat.BlowupLattice(surf, L["k_blown"])
    report: dict[str, Any] = {
        "surface": {"name": surf.name, "h_self": surf.h_self, "b2_orb": surf.b2_orb,
                    "num_A1": surf.num_A1, "consistent": surf.consistent},
        "b2_chain": [surf.b2_orb + j for j in range(surf.num_A1 + 1)],
        "euler": lat.orbifold_euler(surf.num_A1),
        "k_blown": blown.k_blown,
        "b2_after_blowup": blown.b2,
        "labels": {"seifert5": lat.classify_seifert5(surf.b2_orb), "t2_total": lat.classify_t2_total(surf.b2_orb)},
        "ranges": lat.label_ranges(surf),
    }
    if "weights" in L:
        report["surface"]["weights"], report["surface"]["degrees"] = L["weights"], L["degrees"]
    if blown.k_blown >= 1:
        D, om, n, m = lat.traceless_divisor(blown)
        report["traceless"] = {"D": D.to_json(), "omega": om.to_json(), "n": n, "m": m,
                               "D.omega": lat.intersect(D, om, blown), "omega_positive": lat.nakai_positive(om, blown)}
    if blown.k_blown >= 2:
        D1, D2, om, n, m = lat.cormain_pair(blown)
        report["cormain_pair"] = {"D1": D1.to_json(), "D2": D2.to_json(), "omega": om.to_json(), "n": n, "m": m,
                                  "D1.omega": lat.intersect(D1, om, blown), "D2.omega": lat.intersect(D2, om, blown),
                                  "omega_positive": lat.nakai_positive(om, blown)}
    if "bundle" in L:
        q1, q2 = L.get("Q1", Fraction(0)), L.get("Q2", Fraction(0))
        e = report["euler"]
        table = []
        for a in L["alpha_grid"]:
            table.append(lat.integrability_check(a, e, L["bundle"], q1, q2).to_json())
        report["integrability_table"] = table
        if "alpha_prime" in L:
            report["integrability"] = lat.integrability_check(L["alpha_prime"], e, L["bundle"], q1, q2).to_json()
    return report


# synthesis -------------------------------------------------------------------------


@dataclass
class Synthesis:
    geometry: GeometryConfig
    grid: PeriodicGrid
    ansatz: AnsatzData
    potential: PotentialMatrix
    F: BaseForm | None
    equation: EquationData
    mu_geometric: np.ndarray
    u_star: np.ndarray | None
    report: dict


def _class_form(grid: PeriodicGrid, c) -> BaseForm:
    a = asd_forms(grid)
    return sum((a[k] * (float(c[k]) / (2 * math.pi)) for k in range(3)), BaseForm(grid))


def bundle_curvature(grid: PeriodicGrid, geo: GeometryConfig) -> BaseForm | None:
    if not geo.bundle:
        return None
    r = geo.rank
    F = BaseForm(grid, {}, (r, r))
    for term in geo.bundle:
        form = _class_form(grid, term.asd) * (-1j)
        diag = np.diag(np.asarray(term.charges, dtype=complex))
        F = F + form.map_values(lambda c, diag=diag: c[..., None, None] * diag)
    return F


def lattice_balance(geo: GeometryConfig) -> lat.IntegrabilityReport:
    """Lattice-side balance of the torus instance (``e = 0``)."""
    classes = geo.line_classes()
    sq = lambda v: sum(x * x for x in v)  # noqa: E731
    disc = sum(sq(v) for v in classes)
    c1 = [sum(v[k] for v in classes) for k in range(3)] if classes else [0, 0, 0]
    c1_sq = Fraction(-2 * sq(c1))
    bundle = lat.BundleTopologyData(rank=max(geo.rank, 1), c1_sq=c1_sq, c2=Fraction(disc) + c1_sq / 2)
    return lat.integrability_check(geo.alpha_prime, 0, bundle, -2 * sq(geo.omega1), -2 * sq(geo.omega2))


def _u_star(grid: PeriodicGrid, modes) -> np.ndarray:
    x = grid.x
    u = np.zeros(grid.shape)
    for m in modes:
        phase = sum(k * xi for k, xi in zip(m.k, x))
        u = u + m.amp * (np.cos(phase) if m.phase == "cos" else np.sin(phase))
    return u


def synthesize(geo: GeometryConfig, rtol: float = 1e-10) -> Synthesis:
    """Build ansatz and equation data; raise if the integral of ``mu'`` is nonzero."""
    grid = PeriodicGrid(geo.N)
    w = _class_form(grid, geo.omega1) + _class_form(grid, geo.omega2) * 1j
    ansatz = AnsatzData(w)
    pot = PotentialMatrix.from_closed_form(w)
    identity = HermitianMatrixField.identity(grid)
    rho_l = rho_from_potential(pot, identity)
    rho = rho_l * 0.5
    F = bundle_curvature(grid, geo)
    alpha = float(geo.alpha_prime)

    trRR = top_density(matrix_trace(wedge(curvature(identity), curvature(identity))))
    trFF = top_density(matrix_trace(wedge(F, F))) if F is not None else np.zeros(grid.shape)
    mu_geo = np.real(0.5 * ansatz.dtheta_norm_sq() - 0.25 * alpha * (trRR - trFF))
    mu_geo = np.broadcast_to(mu_geo, grid.shape).copy()
    integral = float(np.sum(mu_geo)) * grid.spacing**4

    balance = lattice_balance(geo)
    predicted = 2 * math.pi**2 * float(balance.rhs - balance.lhs)
    scale = 2 * math.pi**2 * max(abs(float(balance.lhs)), abs(float(balance.rhs)), 1.0)
    report = {
        "N": geo.N,
        "source": geo.source,
        "alpha_prime": geo.alpha_prime,
        "sign_rho": geo.sign_rho,
        "conventions": CONVENTIONS,
        "lattice": balance.to_json(),
        "integral_mu_geometric": integral,
        "integral_mu_predicted": predicted,
        "cross_check_rel": abs(integral - predicted) / scale,
        "rho_real": rho.is_real(1e-10),
        "rho_max": rho.max_norm(),
    }

    u_star = None
    if geo.source == "geometric":
        if abs(integral) > rtol * scale:
            raise IntegrabilityViolation(report)
        mu = mu_geo - mu_geo.mean()
        eq = EquationData(grid, rho, mu, alpha, geo.sign_rho)
    else:
        u_star = _u_star(grid, geo.u_star)
        eq = manufacture(u_star, rho, alpha, geo.sign_rho)
    report["mu_max"] = float(np.max(np.abs(eq.mu)))
    return Synthesis(geo, grid, ansatz, pot, F, eq, mu_geo, u_star, report)


def _out_dir(cfg: RunConfig, out: str | Path | None) -> Path:
    d = out if out is not None else cfg.output
    if d is None:
        raise ConfigError("no output directory: pass --out or set output.dir")
    return Path(d)


def _save_synthesis(syn: Synthesis, out: Path):
    save_form(out / "W", syn.ansatz.W, {"role": "d theta"})
    save_form(out / "rho", syn.equation.rho, {"role": "rho in the reduced equation"})
    save_form(out / "mu", scalar(syn.grid, syn.equation.mu), {"role": "mu' density against vol"})
    if syn.F is not None:
        save_form(out / "F", syn.F, {"role": "bundle curvature"})
    write_json(out / "synthesis.json", syn.report)


def _need_geometry(cfg: RunConfig) -> GeometryConfig:
    if cfg.geometry is None:
        raise ConfigError("this command needs a 'geometry' section")
    return cfg.geometry


def cmd_synthesize(cfg: RunConfig, out: str | Path | None = None) -> dict:
    geo = _need_geometry(cfg)
    out = _out_dir(cfg, out)
    try:
        syn = synthesize(geo)
    except IntegrabilityViolation as exc:
        write_json(out / "synthesis.json", {**exc.report, "status": "integrability violated"})
        raise
    _save_synthesis(syn, out)
    return syn.report


# solve ------------------------------------------------------------------------------


def solver_params(cfg: RunConfig, syn: Synthesis) -> SolverParams:
    kw = dict(cfg.solver)
    if "A_norm" not in kw:
        grid = syn.grid
        if syn.u_star is not None:
            kw["A_norm"] = float(np.sum(np.exp(syn.u_star))) * grid.spacing**4
        else:
            delta = kw.get("delta", 1e-2)
            kw["A_norm"] = grid.volume * math.exp(0.5 * math.log(1.0 / delta) + 0.5)
    return SolverParams(**kw)


def _spectrum_rows(grid: PeriodicGrid, r: np.ndarray) -> list[list]:
    """Max Fourier amplitude of the residual per shell ``|k|^2``."""
    rh = np.abs(grid.fft(r)) / r.size
    shell = np.rint(-grid.laplacian_symbol).astype(int)
    rows = []
    for s in np.unique(shell):
        rows.append([int(s), float(np.max(rh[shell == s]))])
    return rows


def cmd_solve(cfg: RunConfig, out: str | Path | None = None) -> dict:
    geo = _need_geometry(cfg)
    out = _out_dir(cfg, out)
    syn = synthesize(geo)
    _save_synthesis(syn, out)
    params = solver_params(cfg, syn)
    summary: dict[str, Any] = {
        "N": geo.N, "source": geo.source, "alpha_prime": geo.alpha_prime, "sign_rho": geo.sign_rho,
        "conventions": CONVENTIONS,
        "params": {k: getattr(params, k) for k in ("A_norm", "delta", "tau", "t_steps", "newton_tol",
                                                   "max_newton", "track_tol", "predictor")},
    }
    try:
        state = continuity_solve(syn.equation, params)
    except SolverError as exc:
        summary.update(status="failed", error=str(exc), error_type=type(exc).__name__)
        write_json(out / "solve.json", summary)
        raise
    _write_solution(out, syn, state, summary)
    return summary


def _write_solution(out: Path, syn: Synthesis, state: SolverState, summary: dict):
    grid = syn.grid
    save_form(out / "u", scalar(grid, state.u), {"role": "solution u", "t": state.t})
    write_csv(out / "trace.csv", ["t", "residual", "iterations"],
              [[f"{r.t:.6f}", f"{r.residual:.6e}", r.iterations] for r in state.trace])
    r = residual(state.u, syn.equation, 1.0)
    write_csv(out / "spectrum.csv", ["k_squared", "max_amplitude"],
              [[s, f"{a:.6e}"] for s, a in _spectrum_rows(grid, r)])
    integral = float(np.sum(np.exp(state.u))) * grid.spacing**4
    summary.update(
        status="converged",
        residual_norm=state.residual_norm,
        newton_iterations_total=state.total_iterations,
        normalization_error=abs(integral - summary["params"]["A_norm"]) / summary["params"]["A_norm"],
        u_min=float(state.u.min()),
        u_max=float(state.u.max()),
    )
    if syn.u_star is not None:
        summary["max_error_vs_u_star"] = float(np.max(np.abs(state.u - syn.u_star)))
    write_json(out / "solve.json", summary)


# verify ---------------------------------------------------------------------------


def anomaly_direct_density(u: np.ndarray, syn: Synthesis) -> np.ndarray:
    """``i ddb omega_u - (a'/4)(tr R^2 - tr F^2)`` as a density, from the total space.

    ``i ddb omega_u`` is taken with the fibered operators and ``tr R^2`` from
    the curvature of the bordered metric; nothing here uses the reduced
    equation.
    """
    grid = syn.grid
    W = syn.ansatz.W
    omega = build_omega_u(u, syn.ansatz)
    ddb = del_total(delbar_total(omega, W), W) * 1j
    if any(s.terms for s in ddb.slots[1:]):
        fiber = max(s.max_norm() for s in ddb.slots[1:])
        if fiber > 1e-10:
            raise RuntimeError(f"i ddb omega_u has fiber components ({fiber:.3e})")
    lhs = np.real(top_density(ddb.slots[0]))
    Gu = HermitianMatrixField(grid, np.eye(2, dtype=complex)).scaled(u)
    R = total_curvature(Gu, syn.potential)
    trRR = top_density(matrix_trace(wedge(R, R)))
    trFF = top_density(matrix_trace(wedge(syn.F, syn.F))) if syn.F is not None else 0.0
    return lhs - 0.25 * float(syn.geometry.alpha_prime) * np.real(trRR - trFF)


def cmd_verify(cfg: RunConfig, out: str | Path | None = None, solution: str | Path | None = None) -> dict:
    """Residuals of all four equations at a stored solution (or ``u = 0`` for ``"zero"``)."""
    geo = _need_geometry(cfg)
    out = _out_dir(cfg, out)
    syn = synthesize(geo)
    grid = syn.grid
    tol = cfg.verify or _parse_verify({})
    if solution == "zero":
        u = np.zeros(grid.shape)
        source = "u = 0"
    else:
        stem = Path(solution) if solution is not None else out / "u"
        if not stem.with_suffix(".bin").exists():
            raise ConfigError(f"no solution at {stem}.bin (run solve first or pass --solution)")
        f = load_form(stem)
        if f.grid != grid:
            raise ConfigError(f"solution grid N = {f.grid.n} differs from config N = {grid.n}")
        u = np.real(f.component(()))
        source = str(stem)

    reduced = residual(u, syn.equation, 1.0)
    direct = anomaly_direct_density(u, syn)
    reduction_gap = direct - (reduced - syn.equation.mu + syn.mu_geometric)
    struct = structure_residuals(u, syn.ansatz)

    checks: dict[str, dict] = {}

    def check(name, value, limit, note=None):
        entry = {"value": float(value), "tolerance": float(limit), "pass": bool(value <= limit)}
        if note:
            entry["note"] = note
        checks[name] = entry

    if geo.source == "geometric" and syn.F is not None:
        first, second = hym_residual(syn.F, kahler_form(grid) * np.exp(u))
        check("hym_trace", first, tol["hym_tol"])
        check("hym_type", second, tol["hym_tol"])
    elif geo.source == "geometric":
        checks["hym_trace"] = checks["hym_type"] = {"skipped": "no bundle"}
    else:
        checks["hym_trace"] = checks["hym_type"] = {"skipped": "synthetic data - skipped"}
    check("anomaly_reduced", float(np.max(np.abs(reduced))), tol["anomaly_tol"])
    if geo.source == "geometric":
        check("anomaly_direct", float(np.max(np.abs(direct))), tol["anomaly_tol"])
    check("reduction_consistency", float(np.max(np.abs(reduction_gap))), tol["anomaly_tol"],
          "total-space anomaly minus reduced residual, geometric source term restored")
    check("conformally_balanced", struct.residuals["conformally_balanced"], tol["balanced_tol"])
    check("balanced_u0", struct.residuals["balanced"], tol["balanced_tol"])

    passed = all(c.get("pass", True) for c in checks.values())
    report = {
        "N": geo.N, "source": geo.source, "solution": source,
        "alpha_prime": geo.alpha_prime, "sign_rho": geo.sign_rho,
        "conventions": CONVENTIONS,
        "integrability": syn.report["lattice"],
        "checks": checks,
        "pass": passed,
    }
    write_json(out / "verify.json", report)
    return report
