"""Acceptance criteria; each test prints one PASS/FAIL line (also collected in the terminal summary)."""

import json
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from strominger import lattice as lat
from strominger import pipeline
from strominger.cli import main
from strominger.curvature import PotentialMatrix, rr_identity_residual, traceless_exp
from strominger.fibered import AnsatzData, build_omega_u, d_total, fiber_wedge, psi_norm, structure_residuals
from strominger.solver import EquationData, SolverParams, UpsilonViolation, continuity_solve, linear_oracle
from strominger.spectral import BaseForm, PeriodicGrid, kahler_form

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_orbifold_arithmetic(criterion, capsys):
    t0 = time.perf_counter()
    assert main(["lattice", "--config", str(CONFIGS / "iano_fletcher_14.json")]) == 0
    rep = json.loads(capsys.readouterr().out)
    elapsed = time.perf_counter() - t0
    got = (rep["surface"]["h_self"], rep["surface"]["b2_orb"], rep["euler"],
           rep["ranges"]["k_range"], rep["ranges"]["r_range"])
    ok = got == ("1/2", 13, 15, [13, 22], [14, 22]) and elapsed < 1.0
    criterion("orbifold arithmetic", ok, f"h_self, b2, euler, k, r = {got} in {elapsed:.3f}s")


def test_divisor_constructions(criterion):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    bad = []
    for i in range(100):
        h = ["1/2", 1, 2, 4][rng.integers(4)]
        k = int(rng.integers(1, 11))
        L = lat.BlowupLattice(lat.OrbifoldSurface.k3(int(rng.integers(k, 17)), h), k)
        D, om, _, _ = lat.traceless_divisor(L)
        good = lat.intersect(D, om, L) == 0 and lat.nakai_positive(om, L)
        if k >= 2:
            D1, D2, om2, _, _ = lat.cormain_pair(L)
            good = good and lat.intersect(D1, om2, L) == 0 == lat.intersect(D2, om2, L)
            good = good and lat.nakai_positive(om2, L)
        if not good:
            bad.append((h, k))
    elapsed = time.perf_counter() - t0
    criterion("divisor constructions", not bad and elapsed < 1.0,
              f"100 lattices, {len(bad)} failures, {elapsed:.3f}s")


def _rr(n):
    g = PeriodicGrid(n)
    x1, x2, x3, x4 = g.x
    G_B = traceless_exp(g, 0.5 * np.cos(x1 + x2) * np.cos(x3), 0.25 * np.exp(1j * x4) * np.sin(x1 - x3))
    u = 0.1 * np.cos(x1) * np.ones(g.shape)
    A = PotentialMatrix(g, None, np.array([[0.3, 0.1j], [0.0, -0.2]]))
    return rr_identity_residual(u, G_B, A)


@pytest.mark.slow
def test_curvature_trace_identity(criterion):
    t0 = time.perf_counter()
    r16, r24, r32 = (_rr(n) for n in (16, 24, 32))
    elapsed = time.perf_counter() - t0
    ok = r32 <= r16 / 100 and r24 <= 1e-6 and elapsed < 120
    criterion("curvature trace identity", ok,
              f"relative residual N=16 {r16:.2e}, N=24 {r24:.2e}, N=32 {r32:.2e}, {elapsed:.1f}s")


def test_conformally_balanced(criterion):
    g = PeriodicGrid(16)
    data = AnsatzData.from_classes(g, [1, 0, -1], [0, 2, 1])
    t0 = time.perf_counter()
    worst = 0.0
    for eps in (0.01, 0.05, 0.1):
        u = eps * np.cos(g.x[0]) * np.ones(g.shape)
        omega = build_omega_u(u, data)
        worst = max(worst, d_total(fiber_wedge(omega, omega) * psi_norm(u, data), data.W).max_norm())
    elapsed = time.perf_counter() - t0
    criterion("conformally balanced identity", worst <= 1e-8 and elapsed < 30,
              f"max |d(|psi| omega_u^2)| = {worst:.2e} over eps in (0.01, 0.05, 0.1), {elapsed:.1f}s")


def test_manufactured_recovery(criterion):
    doc = json.loads((CONFIGS / "manufactured.json").read_text())
    t0 = time.perf_counter()
    rows = []
    for alpha in (-0.2, 0.2):
        doc["geometry"]["alpha_prime"] = alpha
        cfg = pipeline.parse_config(doc)
        syn = pipeline.synthesize(cfg.geometry)
        params = pipeline.solver_params(cfg, syn)
        state = continuity_solve(syn.equation, params)
        steps = sum(1 for r in state.trace if r.t > 0)
        rows.append((alpha, float(np.max(np.abs(state.u - syn.u_star))), state.total_iterations, steps))
    elapsed = time.perf_counter() - t0
    ok = all(err <= 1e-6 and its <= 20 and steps >= 10 for _, err, its, steps in rows) and elapsed < 300
    detail = "; ".join(f"alpha'={a:+.1f} err {e:.1e} newton {i} over {s} steps" for a, e, i, s in rows)
    criterion("manufactured recovery", ok, f"{detail}, {elapsed:.1f}s")


def _random_source(g, rng, amp):
    x = g.x
    mu = np.zeros(g.shape)
    for _ in range(6):
        k = rng.integers(-2, 3, size=4)
        if not k.any():
            continue
        mu = mu + rng.normal() * np.cos(sum(ki * xi for ki, xi in zip(k, x)) + rng.uniform(0, 2 * np.pi))
    mu = mu - mu.mean()
    return amp * mu / np.max(np.abs(mu))


def test_linear_oracle_equivalence(criterion):
    g = PeriodicGrid(16)
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(3):
        data = EquationData(g, BaseForm(g), _random_source(g, rng, 0.5), 0.0)
        A = 2.0 * g.volume
        state = continuity_solve(data, SolverParams(A_norm=A, delta=2.0, tau=0.1, t_steps=4))
        worst = max(worst, float(np.max(np.abs(np.exp(state.u) - linear_oracle(data, A)))))
    elapsed = time.perf_counter() - t0
    criterion("alpha'=0 oracle", worst <= 1e-8 and elapsed < 60,
              f"max |e^u - w| = {worst:.2e} over 3 random sources, {elapsed:.1f}s")


def _cross(geo):
    try:
        return pipeline.synthesize(geo).report
    except pipeline.IntegrabilityViolation as exc:
        return exc.report


def test_integrability_cross_check(criterion):
    rng = np.random.default_rng(11)
    t0 = time.perf_counter()
    worst_rel, worst_shift, balanced = 0.0, 0.0, 0
    for i in range(12):
        vec = lambda: [int(v) for v in rng.integers(-2, 3, size=3)]  # noqa: E731
        o1, o2 = vec(), vec()
        terms = [{"asd": vec(), "charges": [int(v) for v in rng.integers(-2, 3, size=2)]} for _ in range(2)]
        alpha = Fraction(int(rng.integers(-5, 6)) or 1, int(rng.integers(1, 4)))
        if i == 0:
            o1, o2, terms, alpha = [1, 0, 0], [0, 1, 0], [{"asd": [1, 0, 0], "charges": [1, -1]}], Fraction(-2)
        geo = pipeline.parse_config({"geometry": {"N": 8, "omega1": o1, "omega2": o2, "bundle": terms,
                                                  "alpha_prime": str(alpha)}}).geometry
        rep = _cross(geo)
        balanced += rep["lattice"]["satisfied"]
        worst_rel = max(worst_rel, rep["cross_check_rel"])

        terms[0]["charges"][0] += 1
        geo2 = pipeline.parse_config({"geometry": {"N": 8, "omega1": o1, "omega2": o2, "bundle": terms,
                                                   "alpha_prime": str(alpha)}}).geometry
        rep2 = _cross(geo2)
        lat_shift = Fraction(rep2["lattice"]["residual"]) - Fraction(rep["lattice"]["residual"])
        int_shift = (rep2["integral_mu_geometric"] - rep["integral_mu_geometric"]) / (2 * np.pi**2)
        worst_shift = max(worst_shift, abs(-float(lat_shift) - int_shift) / max(1.0, abs(float(lat_shift))))
    elapsed = time.perf_counter() - t0
    ok = worst_rel <= 1e-8 and worst_shift <= 1e-8 and balanced >= 1 and elapsed < 60
    criterion("integrability cross-check", ok,
              f"12 instances ({balanced} balanced): rel {worst_rel:.1e}, charge-shift mismatch {worst_shift:.1e}, "
              f"{elapsed:.1f}s")


def test_negative_controls(criterion, tmp_path, capsys):
    g = PeriodicGrid(16)
    good = AnsatzData.from_classes(g, [1, 0, 0], [0, 1, 0])
    bad = AnsatzData(good.W + kahler_form(g) * 0.3, strict=False)
    bal_good = structure_residuals(0.0, good).passed["balanced"]
    bal_bad = structure_residuals(0.0, bad).passed["balanced"]

    code = main(["synthesize", "--config", str(CONFIGS / "unbalanced.json"), "--out", str(tmp_path / "u")])
    capsys.readouterr()

    doc = json.loads((CONFIGS / "manufactured.json").read_text())
    caught = []
    for alpha in (0.2, -0.2):
        doc["geometry"]["alpha_prime"] = alpha * 100
        cfg = pipeline.parse_config(doc)
        syn = pipeline.synthesize(cfg.geometry)
        try:
            continuity_solve(syn.equation, pipeline.solver_params(cfg, syn))
            caught.append(None)
        except UpsilonViolation as exc:
            caught.append(exc.which)
    ok = bal_good and not bal_bad and code == 2 and all(caught)
    criterion("negative controls", ok,
              f"non-primitive W balanced={bal_bad}, unbalanced synthesize exit {code}, "
              f"alpha' x100 Upsilon: {caught}")
