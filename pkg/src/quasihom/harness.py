"""Batch studies: epsilon sweeps, slope fits and report files.

A study is driven by a JSON config (see :class:`StudyConfig`).  Every CSV it
writes has a header row and ends with ``# config_hash=<hex>``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .bvp import BvpSpec, closed_form_effective, nodal_data, solve_homogenized, solve_multiscale
from .cell import (build_effective_table, corrector_energy, divergence_residual,
                   load_tables, save_tables, solve_corrector)
from .coefficients import get_model
from .errors import InvalidArgumentError
from .expansion import build_expansion, expansion_errors
from .mesh import DIRICHLET, build_mesh, write_field_csv
from .regularity import (DEFAULT_THETAS, excess_decay_check, gradient_integrability,
                         lipschitz_profile, source_average)
from .solver import SolveOptions

log = logging.getLogger(__name__)

STUDIES = ("rates", "excess", "lipschitz", "integrability", "cell")
RATE_COLUMNS = ("epsilon", "h", "l2_error", "h1_expansion_error", "layer_norm", "colayer_hess")
PROBE_COLUMNS = ("probe", "center_x", "center_y", "r", "theta", "p", "value")
FLOOR = float(np.finfo(float).eps)
DEGENERATE_TOL = 1e-10

# acceptance thresholds for fitted exponents
MIN_SLOPE_L2 = 0.45
MIN_SLOPE_H1 = 0.35
MIN_R2 = 0.98
MIN_SLOPE_LAYER = 0.4


class ConfigError(InvalidArgumentError):
    pass


def _parse_eps(v) -> float:
    if isinstance(v, str):
        try:
            return float(Fraction(v.strip()))
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"bad epsilon {v!r}") from None
    return float(v)


@dataclass
class XiTable:
    g_max: float = 2.0
    m: int = 17
    n_cell: Optional[int] = None  # None -> n_per


@dataclass
class StudyConfig:
    model: str
    study: str = "rates"
    epsilons: list = field(default_factory=lambda: [1 / 8, 1 / 16, 1 / 32])
    n_per: int = 32
    g: str = "zero"
    F: str = "zero"
    xi_table: XiTable = field(default_factory=XiTable)
    effective: str = "table"  # or "closed-form"
    output_dir: str = "study_out"
    seed: int = 0
    tolerances: dict = field(default_factory=dict)
    center: tuple = (0.5, 0.5)
    p: float = 4.0
    radii: Optional[list] = None
    n_radii: int = 6
    thetas: list = field(default_factory=lambda: list(DEFAULT_THETAS))
    r_list: list = field(default_factory=lambda: [0.05, 0.1, 0.2])
    n: int = 1024  # mesh for single-mesh studies (excess)
    xis: list = field(default_factory=lambda: [[1.0, 0.0], [0.0, 1.0]])
    write_fields: bool = True
    cache_dir: Optional[str] = None
    jobs: int = 1

    def __post_init__(self):
        if isinstance(self.xi_table, dict):
            self.xi_table = XiTable(**self.xi_table)
        elif isinstance(self.xi_table, (list, tuple)):
            self.xi_table = XiTable(*self.xi_table)
        self.epsilons = [_parse_eps(e) for e in self.epsilons]
        self.center = tuple(float(c) for c in self.center)

    def validate(self) -> "StudyConfig":
        get_model(self.model)
        if self.study not in STUDIES:
            raise ConfigError(f"unknown study {self.study!r}; expected one of {STUDIES}")
        if self.n_per < 32:
            raise ConfigError("n_per must be >= 32")
        if self.effective not in ("table", "closed-form"):
            raise ConfigError("effective must be 'table' or 'closed-form'")
        eps = self.epsilons
        if any(a <= b for a, b in zip(eps, eps[1:])):
            raise ConfigError("epsilons must be strictly decreasing")
        for e in eps:
            k = round(1.0 / e)
            if e <= 0 or abs(k * e - 1.0) > 1e-12:
                raise ConfigError(f"epsilon {e} is not 1/k for an integer k")
        return self

    def mesh_size(self, eps: float) -> int:
        return self.n_per * round(1.0 / eps)

    def solve_options(self) -> SolveOptions:
        return SolveOptions(**self.tolerances)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["center"] = list(self.center)
        return d

    def config_hash(self) -> str:
        d = self.to_dict()
        for volatile in ("output_dir", "jobs", "cache_dir", "write_fields"):
            d.pop(volatile)
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        names = set(cls.__dataclass_fields__)
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "model" not in d:
            raise ConfigError("config needs a 'model'")
        try:
            return cls(**d).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "StudyConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(d)


class SlopeFit(NamedTuple):
    slope: float
    intercept: float
    r_squared: float
    floored: bool = False


def fit_slope(points) -> SlopeFit:
    """Least-squares line through ``(log x, log y)``.

    Zero ``y`` values are floored at machine epsilon (``floored`` is set);
    negative values and nonpositive ``x`` are rejected.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise InvalidArgumentError("need at least two (x, y) points")
    x, y = pts[:, 0], pts[:, 1].copy()
    if np.any(x <= 0) or np.any(y < 0) or not np.all(np.isfinite(pts)):
        raise InvalidArgumentError("log-log fit needs positive coordinates")
    floored = bool(np.any(y == 0))
    y[y == 0] = FLOOR
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid ** 2)) / ss_tot
    return SlopeFit(float(slope), float(intercept), r2, floored)


@dataclass
class RateStudy:
    rows: list  # ErrorReport per epsilon, in config order
    fits: dict = field(default_factory=dict)  # column -> SlopeFit
    degenerate_exact: bool = False

    @property
    def slope_l2(self):
        f = self.fits.get("l2_error")
        return None if f is None else f.slope

    @property
    def slope_h1(self):
        f = self.fits.get("h1_expansion_error")
        return None if f is None else f.slope

    def criteria(self) -> dict:
        if self.degenerate_exact:
            return {"degenerate_exact": True}
        l2, h1 = self.fits["l2_error"], self.fits["h1_expansion_error"]
        layer = self.fits["layer_norm"]
        return {
            "slope_l2>=0.45": l2.slope >= MIN_SLOPE_L2,
            "slope_h1>=0.35": h1.slope >= MIN_SLOPE_H1,
            "r2_l2>=0.98": l2.r_squared >= MIN_R2,
            "r2_h1>=0.98": h1.r_squared >= MIN_R2,
            "slope_layer>=0.4": layer.slope >= MIN_SLOPE_LAYER,
        }

    def to_report(self) -> dict:
        return {
            "degenerate_exact": self.degenerate_exact,
            "fits": {k: f._asdict() for k, f in self.fits.items()},
            "slope_l2": self.slope_l2,
            "slope_h1": self.slope_h1,
            "criteria": self.criteria(),
        }


# -- output helpers ----------------------------------------------------------

def _write_csv(path: Path, columns, rows, config_hash: str) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
        fh.write(f"# config_hash={config_hash}\n")


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, default=_json_default, allow_nan=True))


# -- tables ------------------------------------------------------------------

def table_cache_key(model: str, g_max: float, m: int, n: int) -> str:
    blob = json.dumps({"model": model, "g_max": float(g_max), "m": int(m), "n": int(n)},
                      sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:24]


def get_tables(model: str, g_max: float, m: int, n: int, cache_dir=None, opts=None, jobs=1):
    """Build (or reuse a cached copy of) the effective and corrector tables."""
    if cache_dir is not None:
        d = Path(cache_dir) / table_cache_key(model, g_max, m, n)
        if (d / "effective.json").is_file() and (d / "correctors.json").is_file():
            eff, ctab = load_tables(d)
            if (eff.model, eff.g_max, eff.m, eff.n) == (model, float(g_max), m, n):
                log.info("reusing cached tables %s", d)
                return eff, ctab
    eff, ctab = build_effective_table(get_model(model), g_max, m, n, opts, jobs)
    if cache_dir is not None:
        save_tables(d, eff, ctab)
    return eff, ctab


# -- rate study ----------------------------------------------------------------

def _rate_job(args):
    cfg, eps, eff, ctab, out_dir = args
    n = cfg.mesh_size(eps)
    mesh = build_mesh(n, DIRICHLET)
    spec = BvpSpec(cfg.model, eps, n, F=cfg.F, g=cfg.g, opts=cfg.solve_options())
    u_eps, rep_eps = solve_multiscale(spec)
    u0, rep_0 = solve_homogenized(spec, eff)
    v_eps = u0 if ctab is None else build_expansion(u0, ctab, eps, mesh)
    report = expansion_errors(u_eps, u0, v_eps, mesh, eps)
    if out_dir is not None and cfg.write_fields:
        tag = f"eps_{round(1 / eps)}"
        write_field_csv(out_dir / f"u_eps_{tag}.csv", mesh, u_eps)
        write_field_csv(out_dir / f"u0_{tag}.csv", mesh, u0)
        write_field_csv(out_dir / f"v_eps_{tag}.csv", mesh, v_eps)
    log.info("eps=%g n=%d: %d / %d iterations, %s", eps, n, rep_eps.iterations,
             rep_0.iterations, report)
    return report, rep_eps.to_dict(), rep_0.to_dict()


def _effective_and_correctors(cfg: StudyConfig):
    n_cell = cfg.xi_table.n_cell or cfg.n_per
    if cfg.model == "identity":
        # N = 0 identically; no cell solves needed
        eff, ctab = closed_form_effective("identity"), None
        if cfg.effective == "table":
            eff, ctab = get_tables(cfg.model, cfg.xi_table.g_max, 3, 16, cfg.cache_dir)
        return eff, ctab
    eff, ctab = get_tables(cfg.model, cfg.xi_table.g_max, cfg.xi_table.m, n_cell,
                           cfg.cache_dir, cfg.solve_options(), cfg.jobs)
    if cfg.effective == "closed-form":
        eff = closed_form_effective(cfg.model)
    return eff, ctab


def run_rate_study(config: StudyConfig, output_dir=None) -> RateStudy:
    """Solve, expand and measure errors for every epsilon; fit log-log slopes."""
    cfg = config.validate()
    if len(cfg.epsilons) < 3:
        raise ConfigError("a rate study needs at least three epsilons")
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = cfg.config_hash()
    eff, ctab = _effective_and_correctors(cfg)
    jobs = [(cfg, eps, eff, ctab, out) for eps in cfg.epsilons]
    reports, solver_logs, rows = [], [], []
    try:
        if cfg.jobs > 1:
            with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
                results = pool.map(_rate_job, jobs)
                for res in results:
                    reports.append(res[0])
                    solver_logs.append(res[1:])
        else:
            for job in jobs:
                res = _rate_job(job)
                reports.append(res[0])
                solver_logs.append(res[1:])
    except Exception:
        rows = [[getattr(r, c) for c in RATE_COLUMNS] for r in reports]
        failed_eps = cfg.epsilons[len(reports)]
        rows.append([failed_eps] + ["FAILED"] * (len(RATE_COLUMNS) - 1))
        _write_csv(out / "study.csv", RATE_COLUMNS, rows, chash)
        raise
    study = _fit_rates(reports)
    rows = [[getattr(r, c) for c in RATE_COLUMNS] for r in reports]
    _write_csv(out / "study.csv", RATE_COLUMNS, rows, chash)
    rep = study.to_report()
    rep.update({"config_hash": chash, "config": cfg.to_dict(),
                "solves": [{"epsilon": e, "multiscale": a, "homogenized": b}
                           for e, (a, b) in zip(cfg.epsilons, solver_logs)]})
    _write_json(out / "report.json", rep)
    return study


def _fit_rates(reports) -> RateStudy:
    l2 = np.array([r.l2_error for r in reports])
    h1 = np.array([r.h1_expansion_error for r in reports])
    if max(l2.max(), h1.max()) <= DEGENERATE_TOL:
        return RateStudy(list(reports), {}, degenerate_exact=True)
    fits = {c: fit_slope([(r.epsilon, getattr(r, c)) for r in reports])
            for c in RATE_COLUMNS[2:]}
    return RateStudy(list(reports), fits)


# -- regularity studies --------------------------------------------------------

def default_radii(eps: float, n_radii: int = 6, r_max: float = 0.25) -> list:
    """Geometric radii from ``eps`` up to ``r_max``."""
    lo = min(eps, r_max)
    return list(np.geomspace(lo, r_max, n_radii)) if lo < r_max else [r_max]


def _multiscale_solution(cfg: StudyConfig, eps: float):
    n = cfg.mesh_size(eps)
    spec = BvpSpec(cfg.model, eps, n, F=cfg.F, g=cfg.g, opts=cfg.solve_options())
    u, rep = solve_multiscale(spec)
    return build_mesh(n, DIRICHLET), u, rep


def lipschitz_measure(mesh, u, F, center, radii, p, r_ref=0.25) -> float:
    """``max_r avg_grad(r) / (avg_grad(r_ref) + r_ref * (avg |F|^p)^(1/p))``."""
    prof = lipschitz_profile(mesh, u, F, center, sorted(set(radii) | {r_ref}), p)
    ref = dict(prof)[r_ref] + r_ref * source_average(mesh, F, center, r_ref, p)
    top = max(a for r, a in prof if r <= r_ref)
    return 0.0 if ref == 0.0 else top / ref


def run_lipschitz_study(config: StudyConfig, output_dir=None, solutions=None) -> dict:
    """Normalized large-scale gradient profiles across the epsilon sweep."""
    cfg = config.validate()
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, measures = [], {}
    for eps in cfg.epsilons:
        mesh, u, _ = solutions[eps] if solutions else _multiscale_solution(cfg, eps)
        F = nodal_data(mesh, cfg.F)
        radii = cfg.radii or default_radii(eps, cfg.n_radii)
        for r, a in lipschitz_profile(mesh, u, F, cfg.center, radii, cfg.p):
            rows.append([f"lipschitz@eps={eps:.17g}", *cfg.center, r, "", cfg.p, a])
        measures[eps] = lipschitz_measure(mesh, u, F, cfg.center, radii, cfg.p)
        rows.append([f"lipschitz_max_normalized@eps={eps:.17g}", *cfg.center, 0.25, "",
                     cfg.p, measures[eps]])
    vals = list(measures.values())
    spread = max(vals) / min(vals) if min(vals) > 0 else math.inf
    result = {"measures": {str(k): v for k, v in measures.items()}, "spread": spread,
              "criteria": {"spread<=3": spread <= 3.0}}
    chash = cfg.config_hash()
    _write_csv(out / "probes.csv", PROBE_COLUMNS, rows, chash)
    _write_json(out / "report.json", dict(result, config_hash=chash))
    return result


def run_integrability_study(config: StudyConfig, output_dir=None, solutions=None) -> dict:
    """Reverse-Hoelder ratios at fixed radii across the epsilon sweep."""
    cfg = config.validate()
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    radii = cfg.radii or [1 / 16, 1 / 8]
    rows, ratios = [], {r: {} for r in radii}
    for eps in cfg.epsilons:
        mesh, u, _ = solutions[eps] if solutions else _multiscale_solution(cfg, eps)
        for r, q in gradient_integrability(mesh, u, cfg.p, cfg.center, radii):
            ratios[r][eps] = q
            rows.append([f"integrability@eps={eps:.17g}", *cfg.center, r, "", cfg.p, q])
    spreads = {}
    for r, by_eps in ratios.items():
        v = list(by_eps.values())
        spreads[r] = max(v) / min(v) if min(v) > 0 else math.inf
    result = {"ratios": {str(r): {str(e): q for e, q in d.items()} for r, d in ratios.items()},
              "spreads": {str(r): s for r, s in spreads.items()},
              "criteria": {f"spread(r={r:g})<=2": s <= 2.0 for r, s in spreads.items()}}
    chash = cfg.config_hash()
    _write_csv(out / "probes.csv", PROBE_COLUMNS, rows, chash)
    _write_json(out / "report.json", dict(result, config_hash=chash))
    return result


def run_excess_study(config: StudyConfig, output_dir=None) -> dict:
    """Excess-decay table for the homogenized solution on an ``n x n`` mesh."""
    cfg = config.validate()
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = BvpSpec(cfg.model, 0.0, cfg.n, F=cfg.F, g=cfg.g, opts=cfg.solve_options())
    if cfg.effective == "closed-form":
        eff = closed_form_effective(cfg.model)
    else:
        eff, _ = get_tables(cfg.model, cfg.xi_table.g_max, cfg.xi_table.m,
                            cfg.xi_table.n_cell or cfg.n_per, cfg.cache_dir,
                            cfg.solve_options(), cfg.jobs)
    u0, _ = solve_homogenized(spec, eff)
    mesh = build_mesh(cfg.n, DIRICHLET)
    F = nodal_data(mesh, cfg.F)
    table = excess_decay_check(mesh, u0, F, cfg.center, cfg.r_list, cfg.thetas, cfg.p)
    rows = [["excess_decay", *cfg.center, r, t, cfg.p, q] for r, t, q in table.rows]
    result = {"decay_witnessed": table.decay_witnessed, "degenerate": table.degenerate,
              "witnesses": table.witnesses, "rows": table.rows,
              "criteria": {"decay_witnessed": table.decay_witnessed}}
    chash = cfg.config_hash()
    _write_csv(out / "probes.csv", PROBE_COLUMNS, rows, chash)
    _write_json(out / "report.json", dict(result, config_hash=chash))
    return result


def run_cell_study(config: StudyConfig, output_dir=None) -> dict:
    """Correctors at the configured slopes, on an ``n_cell`` torus."""
    cfg = config.validate()
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = get_model(cfg.model)
    n = cfg.xi_table.n_cell or cfg.n_per
    rows = []
    for xi in cfg.xis:
        sol = solve_corrector(model, xi, n, cfg.solve_options())
        mN, mG = corrector_energy(sol)
        rows.append([xi[0], xi[1], sol.A_eff[0], sol.A_eff[1], mN, mG,
                     divergence_residual(sol), sol.report.iterations])
    cols = ("xi1", "xi2", "A_eff1", "A_eff2", "mean_N2", "mean_gradN2", "div_b_residual",
            "iterations")
    chash = cfg.config_hash()
    _write_csv(out / "cells.csv", cols, rows, chash)
    result = {"rows": rows}
    _write_json(out / "report.json", dict(result, config_hash=chash))
    return result


def run_study(config: StudyConfig, output_dir=None):
    runners = {"rates": run_rate_study, "excess": run_excess_study,
               "lipschitz": run_lipschitz_study, "integrability": run_integrability_study,
               "cell": run_cell_study}
    return runners[config.study](config, output_dir)
