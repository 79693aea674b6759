"""Built-in acceptance suite.

Each criterion returns a :class:`Outcome`; expensive shared work (cell
solves, the epsilon sweeps) is cached so the whole suite solves each problem
once.  ``run_all`` prints one PASS/FAIL line per criterion.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

from . import harness
from .bvp import BvpSpec, closed_form_effective, nodal_data, solve_homogenized, solve_multiscale
from .cell import (build_effective_table, corrector_energy, divergence_residual,
                   eval_effective, flux_corrector, reconstruction_residual, solve_corrector,
                   table_structure)
from .coefficients import BUILTIN_MODELS, get_model
from .mesh import DIRICHLET, PERIODIC, build_mesh, gradient, interpolate, mollify, norm
from .regularity import excess, excess_decay_check
from .solver import SolveOptions, contraction_factor

SQRT3 = math.sqrt(3.0)
TOL = 1e-10
SWEEP = (1 / 8, 1 / 16, 1 / 32)
CENTER = (0.5, 0.5)


@dataclass
class Outcome:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number:2d}. {self.title}: {self.detail} ({self.seconds:.1f}s)"


# -- shared solves -------------------------------------------------------------

@lru_cache(maxsize=None)
def cell_solution(model: str, xi: tuple, n: int):
    return solve_corrector(get_model(model), np.array(xi), n, SolveOptions(tol_rel=TOL))


@lru_cache(maxsize=None)
def structure_table(model: str):
    return build_effective_table(get_model(model), 4.0, 9, 32)[0]


@lru_cache(maxsize=None)
def _workdir() -> Path:
    return Path(tempfile.mkdtemp(prefix="quasihom-acceptance-"))


_WORKDIR = None


def workdir() -> Path:
    return Path(_WORKDIR) if _WORKDIR is not None else _workdir()


def rate_config() -> harness.StudyConfig:
    return harness.StudyConfig(
        model="nonlinear", study="rates", epsilons=list(SWEEP), n_per=32,
        g="affine(1,0.5,0)", F="bump", xi_table=harness.XiTable(g_max=2.0, m=17, n_cell=32),
        tolerances={"tol_rel": TOL}, write_fields=False)


@lru_cache(maxsize=1)
def rate_study() -> harness.RateStudy:
    cfg = rate_config()
    return harness.run_rate_study(cfg, workdir() / "rates")


@lru_cache(maxsize=1)
def laminate_sweep() -> dict:
    """Multiscale laminate solutions with ``g = x1`` and ``F = 0`` for each epsilon."""
    out = {}
    for eps in SWEEP:
        n = round(32 / eps)
        spec = BvpSpec("laminate", eps, n, F="zero", g="linear-x", opts=SolveOptions(tol_rel=TOL))
        u, rep = solve_multiscale(spec)
        out[eps] = (build_mesh(n, DIRICHLET), u, rep)
    return out


def sweep_config(study: str) -> harness.StudyConfig:
    return harness.StudyConfig(model="laminate", study=study, epsilons=list(SWEEP), n_per=32,
                               g="linear-x", F="zero", p=4.0, center=CENTER,
                               tolerances={"tol_rel": TOL})


# -- criteria ------------------------------------------------------------------

def c01_laminate_effective() -> Outcome:
    t0 = time.perf_counter()
    a1 = cell_solution("laminate", (1.0, 0.0), 256).A_eff
    a2 = cell_solution("laminate", (0.0, 1.0), 256).A_eff
    dt = time.perf_counter() - t0
    e1 = float(np.max(np.abs(a1 - [SQRT3, 0.0])))
    e2 = float(np.max(np.abs(a2 - [0.0, 2.0])))
    ok = e1 <= 1e-3 and e2 <= 1e-4 and dt <= 60.0
    return Outcome(1, "laminate effective coefficients", ok,
                   f"A(e1)=({a1[0]:.6f},{a1[1]:.1e}) err {e1:.1e}; "
                   f"A(e2)=({a2[0]:.1e},{a2[1]:.6f}) err {e2:.1e}; {dt:.1f}s")


def c02_corrector_energy() -> Outcome:
    _, g2 = corrector_energy(cell_solution("laminate", (1.0, 0.0), 256))
    exact = 2.0 / SQRT3 - 1.0
    err = abs(g2 - exact)
    return Outcome(2, "laminate corrector energy", err <= 1e-3,
                   f"mean|grad N|^2={g2:.6f} vs {exact:.6f} (err {err:.1e})")


def c03_identity_exact() -> Outcome:
    worst = 0.0
    for xi in [(0.0, 0.0), (1.0, 0.0), (0.3, -1.7), (2.5, 4.0)]:
        sol = cell_solution("identity", xi, 64)
        E = flux_corrector(sol).E12
        worst = max(worst, np.max(np.abs(sol.N)), np.max(np.abs(sol.b)), np.max(np.abs(E)),
                    np.max(np.abs(sol.A_eff - np.array(xi))))
    spec = BvpSpec("identity", 1 / 8, 256, F="zero", g="affine(1,0.5,0)",
                   opts=SolveOptions(tol_rel=TOL))
    u_eps, _ = solve_multiscale(spec)
    u0, _ = solve_homogenized(spec)
    du = float(np.max(np.abs(u_eps - u0)))
    ok = worst <= TOL and du <= TOL
    return Outcome(3, "identity model is exact", ok,
                   f"max |N|,|b|,|E|,|A-xi| = {worst:.1e}; max|u_eps-u0| = {du:.1e}")


def c04_effective_structure() -> Outcome:
    parts, ok = [], True
    for name in ("laminate", "nonlinear"):
        model, tab = get_model(name), structure_table(name)
        margin, lip = table_structure(tab, 200, seed=0)
        a0 = float(np.max(np.abs(eval_effective(tab, [0.0, 0.0]))))
        good = margin >= model.mu0 - 1e-3 and lip <= model.mu2 + 1e-3 and a0 <= 1e-8
        ok &= good
        parts.append(f"{name}: margin {margin:.4f}>={model.mu0}, ratio {lip:.4f}<={model.mu2}, "
                     f"|A(0)|={a0:.0e}")
    return Outcome(4, "effective operator structure", ok, "; ".join(parts))


def c05_flux_corrector() -> Outcome:
    t0 = time.perf_counter()
    rec, div = 0.0, 0.0
    cases = [("laminate", (1.0, 0.0), 256), ("smooth2d", (1.0, 0.5), 128),
             ("nonlinear", (1.0, 0.5), 128), ("nonlinear", (-2.0, 1.0), 128)]
    for name, xi, n in cases:
        sol = cell_solution(name, xi, n)
        rec = max(rec, reconstruction_residual(sol, flux_corrector(sol)))
        div = max(div, divergence_residual(sol))
    sol = cell_solution("laminate", (0.0, 1.0), 256)
    fc = flux_corrector(sol)
    e_norm = norm(sol.mesh, fc.E12)
    exact = 1.0 / (2.0 * math.pi * math.sqrt(2.0))
    dt = time.perf_counter() - t0
    ok = rec <= 1e-6 and div <= 1e-8 and abs(e_norm - exact) <= 1e-3 and dt <= 120.0
    return Outcome(5, "flux corrector", ok,
                   f"reconstruction {rec:.1e}, div b {div:.1e}, ||E12||={e_norm:.5f} "
                   f"vs {exact:.5f}")


def c06_contraction() -> Outcome:
    parts, ok = [], True
    for name, model in BUILTIN_MODELS.items():
        xi = (1.0, 0.5)
        sol = cell_solution(name, xi, 128)
        q = contraction_factor(sol.report.residual_history, start=3)
        bound = math.sqrt(1.0 - (model.mu0 / model.mu2) ** 2) + 0.02
        # a second, smooth nonzero start
        mesh = sol.mesh
        y = mesh.nodes
        init = 0.1 * np.sin(2 * np.pi * y[:, 0]) * np.cos(4 * np.pi * y[:, 1])
        other = solve_corrector(model, np.array(xi), 128, SolveOptions(tol_rel=TOL), init)
        diff = norm(mesh, gradient(mesh, sol.N - other.N))
        agree = diff <= 10 * TOL * float(np.linalg.norm(xi))
        good = q <= bound and agree
        ok &= good
        parts.append(f"{name} q={q:.3f}<={bound:.3f} dH1={diff:.0e}")
    return Outcome(6, "solver contraction and uniqueness", ok, "; ".join(parts))


def c07_rates() -> Outcome:
    t0 = time.perf_counter()
    st = rate_study()
    dt = time.perf_counter() - t0
    l2, h1 = st.fits["l2_error"], st.fits["h1_expansion_error"]
    ok = (l2.slope >= 0.45 and h1.slope >= 0.35 and l2.r_squared >= 0.98
          and h1.r_squared >= 0.98)
    return Outcome(7, "convergence rate", ok,
                   f"slope_l2={l2.slope:.3f} (R2 {l2.r_squared:.4f}), "
                   f"slope_h1={h1.slope:.3f} (R2 {h1.r_squared:.4f}); study {dt:.0f}s")


def c08_layer() -> Outcome:
    fit = rate_study().fits["layer_norm"]
    return Outcome(8, "layer norm decay", fit.slope >= 0.4, f"exponent {fit.slope:.3f}")


def c09_excess_decay() -> Outcome:
    n = 1024
    spec = BvpSpec("laminate", 0.0, n, F="bump", g="zero", opts=SolveOptions(tol_rel=TOL))
    u0, _ = solve_homogenized(spec, closed_form_effective("laminate"))
    mesh = build_mesh(n, DIRICHLET)
    F = nodal_data(mesh, "bump")
    r_list, thetas = (0.05, 0.1, 0.2), (0.25, 0.125, 0.0625)
    table = excess_decay_check(mesh, u0, F, CENTER, r_list, thetas, p=4.0)
    # manufactured quadratic: -div grad u = -1 with u = |x - c|^2 / 4
    uq = nodal_data(mesh, "quadratic-radial")
    Fq = np.full(mesh.n_nodes, -1.0)
    tq = excess_decay_check(mesh, uq, Fq, CENTER, r_list, thetas, p=4.0)
    resolved = [(r, t, q) for r, t, q in tq.rows if np.isfinite(q)]
    ratio_err = max(abs(q - t) for _, t, q in resolved)
    c = 1.0 + 1.0 / (8.0 * SQRT3)
    g_err = max(abs(excess(mesh, uq, Fq, CENTER, r).G / (r * c) - 1.0) for r in r_list)
    ok = table.decay_witnessed and ratio_err <= 1e-2 and g_err <= 1e-2
    return Outcome(9, "excess decay", ok,
                   f"witnesses {table.witnesses}; quadratic |ratio-theta| {ratio_err:.1e} over "
                   f"{len(resolved)} resolved pairs, G/oracle-1 {g_err:.1e}")


def c10_lipschitz() -> Outcome:
    res = harness.run_lipschitz_study(sweep_config("lipschitz"), workdir() / "lipschitz",
                                      solutions=laminate_sweep())
    vals = ", ".join(f"{v:.3f}" for v in res["measures"].values())
    return Outcome(10, "large-scale Lipschitz uniformity", res["spread"] <= 3.0,
                   f"normalized maxima [{vals}], spread {res['spread']:.3f}")


def c11_integrability() -> Outcome:
    res = harness.run_integrability_study(sweep_config("integrability"),
                                          workdir() / "integrability",
                                          solutions=laminate_sweep())
    spreads = res["spreads"]
    ok = all(s <= 2.0 for s in spreads.values())
    return Outcome(11, "gradient integrability", ok,
                   ", ".join(f"r={r}: spread {s:.3f}" for r, s in spreads.items()))


TRIG_BATTERY = (
    lambda x, y: np.sin(2 * np.pi * x),
    lambda x, y: np.cos(2 * np.pi * y),
    lambda x, y: np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y),
    lambda x, y: np.cos(4 * np.pi * x + 2 * np.pi * y),
    lambda x, y: 1.0 + np.sin(6 * np.pi * x) * np.cos(2 * np.pi * y),
)
WEIGHT_BATTERY = (
    lambda y1, y2: 2.0 + np.sin(2 * np.pi * y1),
    lambda y1, y2: 1.0 + 0.5 * np.sin(2 * np.pi * y1) * np.sin(2 * np.pi * y2),
    lambda y1, y2: np.where((y1 % 1.0 < 0.5) ^ (y2 % 1.0 < 0.5), 1.0, 3.0),
)


def mollifier_constants(n: int = 256, eps_list=(1 / 8, 1 / 16, 1 / 32)):
    """Worst stability and accuracy constants over the trigonometric battery."""
    mesh = build_mesh(n, PERIODIC)
    cell = build_mesh(n, PERIODIC)
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    stab, acc = 0.0, 0.0
    for f_fn in TRIG_BATTERY:
        f = f_fn(x, y)
        nf, ngrad = norm(mesh, f), norm(mesh, gradient(mesh, f))
        for eps in eps_list:
            sf = mollify(mesh, f, eps)
            acc = max(acc, norm(mesh, sf - f) / (eps * ngrad))
            for w_fn in WEIGHT_BATTERY:
                w_cell = norm(cell, interpolate(cell, w_fn))
                stab = max(stab, norm(mesh, w_fn(x / eps, y / eps) * sf) / (w_cell * nf))
    return stab, acc


def c12_mollifier() -> Outcome:
    stab, acc = mollifier_constants()
    return Outcome(12, "mollifier estimates", stab <= 2.0 and acc <= 1.0,
                   f"stability constant {stab:.3f} (<=2), accuracy constant {acc:.3f} (<=1)")


CRITERIA: dict[int, Callable[[], Outcome]] = {
    1: c01_laminate_effective, 2: c02_corrector_energy, 3: c03_identity_exact,
    4: c04_effective_structure, 5: c05_flux_corrector, 6: c06_contraction,
    7: c07_rates, 8: c08_layer, 9: c09_excess_decay, 10: c10_lipschitz,
    11: c11_integrability, 12: c12_mollifier,
}


def run_criterion(number: int) -> Outcome:
    t0 = time.perf_counter()
    try:
        out = CRITERIA[number]()
    except Exception as exc:  # a crash is a failure, reported like one
        out = Outcome(number, CRITERIA[number].__name__, False, f"{type(exc).__name__}: {exc}")
    out.seconds = time.perf_counter() - t0
    return out


def run_all(only=None, workdir=None, echo=print) -> list:
    global _WORKDIR
    if workdir is not None:
        _WORKDIR = workdir
    results = []
    for k in sorted(only or CRITERIA):
        res = run_criterion(k)
        if echo is not None:
            echo(res.line(), flush=True) if echo is print else echo(res.line())
        results.append(res)
    return results
