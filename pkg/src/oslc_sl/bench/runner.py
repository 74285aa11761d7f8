"""Experiment runner: solves, invariant checks and CSV/text artifacts."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..chain import TransitionOperators, make_rng, step_operator
from ..conservative import duality_gap, solve_forward
from ..fields import Coefficients, ConfigError, TimeGrid, check_oslc
from ..mesh import Mesh, MeshError, box_mesh_for_dx, interval_mesh_for_dx, read_triangle_files
from ..metrics import ConvergenceRow, ConvergenceTable, linf_gap, wasserstein1_1d
from ..transport import solve_backward
from .config import ExperimentConfig, physical_plus_margin, steps_for

logger = logging.getLogger(__name__)

COMMANDS = ("transport", "conservative", "ladder", "check")

# invariant tolerances
MASS_TOL = 1e-12
DUALITY_TOL = 1e-10
ROW_SUM_TOL = 1e-12


@dataclass
class Check:
    name: str
    value: float
    limit: float
    passed: bool
    note: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        note = f"  ({self.note})" if self.note else ""
        return f"{status}  {self.name}: {self.value:.6g} (limit {self.limit:.6g}){note}"


@dataclass
class RunReport:
    command: str
    out: Path
    checks: list = field(default_factory=list)
    info: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 2

    def summary(self) -> str:
        lines = [f"command: {self.command}"]
        lines += [f"{k}: {v}" for k, v in self.info.items()]
        lines.append("checks:")
        lines += ["  " + c.line() for c in self.checks] or ["  (none)"]
        lines.append("wall-clock seconds:")
        lines += [f"  {k}: {v:.3f}" for k, v in self.timings.items()]
        lines.append(f"result: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


class _Timer:
    def __init__(self, report, name):
        self.report, self.name = report, name

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.report.timings[self.name] = self.report.timings.get(self.name, 0.0) + time.perf_counter() - self.t0


# -- setup -----------------------------------------------------------------


@dataclass
class Setup:
    mesh: Mesh
    coeffs: Coefficients
    h: float
    margin: float
    coupling: str


def build_mesh(cfg: ExperimentConfig, prob, dx: float, margin: float) -> Mesh:
    """Built-in structured mesh of the enlarged box, or the configured Triangle import."""
    box = physical_plus_margin(prob.physical_box, margin)
    if cfg.mesh_node is not None:
        try:
            mesh = read_triangle_files(cfg.mesh_node, cfg.mesh_ele)
        except (OSError, MeshError) as exc:
            raise ConfigError(f"cannot import mesh: {exc}") from None
        lo, hi = mesh.bbox
        need = np.asarray(box, dtype=float).reshape(-1, 2)
        if np.any(lo > need[:, 0] + 1e-9) or np.any(hi < need[:, 1] - 1e-9):
            raise ConfigError(f"imported mesh bbox {lo.tolist()}..{hi.tolist()} does not cover {box}")
        return mesh
    if prob.dim == 1:
        return interval_mesh_for_dx(box[0], box[1], dx)
    return box_mesh_for_dx(box, dx)


def prepare(cfg: ExperimentConfig, prob, dx: float, equation: str) -> Setup:
    h, coupling, _ = cfg.time_step(prob, dx, equation)
    margin = cfg.margin_for(prob, h)
    mesh = build_mesh(cfg, prob, dx, margin)
    grid = TimeGrid(prob.T, steps_for(prob.T, h))
    coeffs = Coefficients(prob.drift, prob.diffusion, grid, prob.mollifier, prob.time_nodes)
    return Setup(mesh, coeffs, h, margin, coupling)


def _export_ids(cfg, mesh, roi):
    if cfg.snapshot_region == "all" or roi is None:
        return None
    return np.flatnonzero(mesh.vertices_in_box(roi))


def _stride(cfg, grid):
    return cfg.snapshot_stride if cfg.snapshot_stride is not None else grid.N


def _describe(report, cfg, setup):
    grid = setup.coeffs.grid
    report.info.update(
        test=cfg.test,
        seed=cfg.seed,
        dx=repr(cfg.dx),
        h=repr(grid.h),
        N=grid.N,
        coupling=setup.coupling,
        margin=repr(setup.margin),
        vertices=setup.mesh.n_vertices,
        simplices=setup.mesh.n_simplices,
        escape=cfg.escape,
    )


def _write_clamps(path, records):
    with open(path, "w") as fh:
        fh.write("k,vertex\n")
        for k, j in records:
            fh.write(f"{k},{j}\n")


# -- commands ----------------------------------------------------------------


def run_transport(cfg: ExperimentConfig, report: RunReport) -> None:
    prob = cfg.problem()
    with _Timer(report, "setup"):
        setup = prepare(cfg, prob, cfg.dx, "transport")
    _describe(report, cfg, setup)
    mesh, coeffs = setup.mesh, setup.coeffs
    ops = TransitionOperators(mesh, coeffs, escape=cfg.escape)
    with _Timer(report, "solve"):
        sol = solve_backward(mesh, coeffs, prob.terminal, operators=ops)
    uT = sol.values[-1]
    lo, hi = float(uT.min()), float(uT.max())
    scale = 1e-12 * max(1.0, abs(lo), abs(hi))
    excess = max(lo - float(sol.values.min()), float(sol.values.max()) - hi, 0.0)
    report.checks.append(Check("maximum principle excess", excess, scale, excess <= scale))
    report.info["clamped_rows"] = len(ops.clamped)
    if prob.exact_u is not None:
        err = linf_gap(sol.step(0), lambda x: prob.exact_u(0.0, x[:, 0]), roi=prob.roi)
        report.info["linf_error_t0"] = repr(err)
    with _Timer(report, "write"):
        ids = _export_ids(cfg, mesh, prob.roi)
        sol.to_csv(report.out / "snapshots_u.csv", _stride(cfg, coeffs.grid), vertices=ids)
        _write_clamps(report.out / "clamped.csv", [(c.k, c.vertex) for c in ops.clamped])


def run_conservative(cfg: ExperimentConfig, report: RunReport) -> None:
    prob = cfg.problem()
    with _Timer(report, "setup"):
        setup = prepare(cfg, prob, cfg.dx, "conservative")
    _describe(report, cfg, setup)
    mesh, coeffs = setup.mesh, setup.coeffs
    grid = coeffs.grid
    ops = TransitionOperators(mesh, coeffs, escape=cfg.escape)
    with _Timer(report, "solve"):
        path = solve_forward(mesh, coeffs, prob.initial, operators=ops)
    masses = path.masses
    drift = float(np.max(np.abs(masses - masses[0])))
    report.checks.append(Check("mass drift", drift, MASS_TOL, drift <= MASS_TOL))
    wmin = float(path.weights.min())
    report.checks.append(Check("minimum weight", wmin, 0.0, wmin >= 0.0))
    report.info["mass"] = repr(float(masses[0]))
    report.info["clamped_rows"] = len(path.ledger.clamped_rows)
    report.info["escaped_mass"] = repr(path.ledger.escaped_mass)
    if prob.exact_cdf is not None and mesh.dim == 1:
        report.info["w1_error_T"] = repr(wasserstein1_1d(path.step(grid.N), prob.exact_cdf(grid.T)))

    gaps = None
    if cfg.duality_samples:
        with _Timer(report, "duality"):
            rng = make_rng(cfg.seed, stream=1)
            g = rng.uniform(-1.0, 1.0, size=(mesh.n_vertices, cfg.duality_samples))
            gaps = np.atleast_1d(duality_gap(mesh, coeffs, prob.initial, g, grid.N, escape=cfg.escape))
            norms = np.abs(g).max(axis=0)
        ratio = float(np.max(gaps / norms))
        report.checks.append(Check("duality gap / |g|_inf", ratio, DUALITY_TOL, ratio <= DUALITY_TOL))

    with _Timer(report, "write"):
        ids = _export_ids(cfg, mesh, prob.roi)
        path.to_csv(report.out / "snapshots_f.csv", _stride(cfg, grid), vertices=ids)
        sel = np.arange(mesh.n_vertices) if ids is None else ids
        np.savetxt(
            report.out / "lumped_areas.csv",
            np.column_stack([sel, mesh.lumped_areas()[sel]]),
            fmt=["%d", "%.17g"],
            delimiter=",",
            header="vertex,area",
            comments="",
        )
        np.savetxt(
            report.out / "masses.csv",
            np.column_stack([np.arange(grid.N + 1), grid.times, masses, path.weights.min(axis=1)]),
            fmt=["%d", "%.17g", "%.17g", "%.17g"],
            delimiter=",",
            header="k,t_k,mass,min_weight",
            comments="",
        )
        if gaps is not None:
            np.savetxt(
                report.out / "duality.csv",
                np.column_stack([np.arange(gaps.size), gaps, norms]),
                fmt=["%d", "%.17g", "%.17g"],
                delimiter=",",
                header="sample,gap,g_sup",
                comments="",
            )
        with open(report.out / "clamped.csv", "w") as fh:
            fh.write("k,vertex\n")
            for k, j in path.ledger.clamped_rows:
                fh.write(f"{k},{j}\n")


def ladder_rung(cfg: ExperimentConfig, dx: float) -> ConvergenceRow:
    """Errors of one ladder resolution against the closed-form solution."""
    prob = cfg.problem()
    if prob.exact_u is None or prob.exact_cdf is None:
        raise ConfigError(f"the ladder needs a closed-form solution; {cfg.test} has none")
    st = prepare(cfg, prob, dx, "transport")
    sol = solve_backward(st.mesh, st.coeffs, prob.terminal, escape=cfg.escape)
    e_u = linf_gap(sol.step(0), lambda x: prob.exact_u(0.0, x[:, 0]), roi=prob.roi)
    sf = prepare(cfg, prob, dx, "conservative")
    path = solve_forward(sf.mesh, sf.coeffs, prob.initial, escape=cfg.escape)
    e_w = wasserstein1_1d(path.step(sf.coeffs.grid.N), prob.exact_cdf(sf.coeffs.grid.T))
    logger.info("ladder dx=%g: linf %.3e (h=%g), W1 %.3e (h=%g)", dx, e_u, st.h, e_w, sf.h)
    return ConvergenceRow(dx, st.h, e_u, e_w, sf.h)


def run_ladder(cfg: ExperimentConfig, report: RunReport) -> ConvergenceTable:
    if cfg.ladder is None:
        raise ConfigError("the ladder command needs 'ladder = dx1, dx2, ...'")
    prob = cfg.problem()
    if prob.exact_u is None or prob.exact_cdf is None:
        raise ConfigError(f"the ladder needs a closed-form solution; {cfg.test} has none")
    report.info.update(test=cfg.test, seed=cfg.seed, ladder=", ".join(repr(d) for d in cfg.ladder))
    table = ConvergenceTable()
    with _Timer(report, "solve"):
        if cfg.parallel:
            with ProcessPoolExecutor() as pool:
                rows = list(pool.map(ladder_rung, [cfg] * len(cfg.ladder), cfg.ladder))
        else:
            rows = [ladder_rung(cfg, dx) for dx in cfg.ladder]
    for row in rows:
        table.add(row)
    for col, label in (("error_linf", "L-inf(u) at t=0"), ("error_w1", "W1(f) at t=T")):
        orders = table.orders(col)
        worst = min((o for o in orders if o is not None), default=float("nan"))
        ok = all(o is not None and o > 0 for o in orders)
        report.checks.append(Check(f"min observed order, {label}", worst, 0.0, ok, "errors strictly decrease"))
    table.to_csv(report.out / "convergence.csv")
    (report.out / "convergence.txt").write_text(table.to_text())
    return table


def run_checks(cfg: ExperimentConfig, report: RunReport) -> None:
    """OSLC of the drift, transition-row properties and discrete duality."""
    prob = cfg.problem()
    with _Timer(report, "setup"):
        setup = prepare(cfg, prob, cfg.dx, "conservative")
    _describe(report, cfg, setup)
    mesh, coeffs = setup.mesh, setup.coeffs
    grid = coeffs.grid
    with _Timer(report, "oslc"):
        rep = check_oslc(prob.drift, grid, prob.physical_box, cfg.oslc_pairs, cfg.seed, declared=prob.drift.C1)
    if rep.declared is not None:
        report.checks.append(Check("one-sided Lipschitz estimate", rep.estimate, rep.declared, rep.passed))
    else:
        report.info["oslc_estimate"] = repr(rep.estimate)

    with _Timer(report, "rows"):
        rng = make_rng(cfg.seed, stream=2)
        pool = np.flatnonzero(mesh.vertices_in_box(prob.roi))
        rows = np.sort(rng.choice(pool, size=min(100, pool.size), replace=False))
        ks = rng.integers(0, grid.N, size=rows.size)
        sums, width, disp = 0.0, 0, 0.0
        for k in np.unique(ks):
            sel = rows[ks == k]
            op = step_operator(mesh, coeffs, int(k), sel, escape=cfg.escape)
            sums = max(sums, float(np.max(np.abs(op.weights.sum(axis=1) - 1.0))))
            width = max(width, int(max(np.unique(t[w > 0]).size for t, w in zip(op.targets, op.weights))))
            mean = np.einsum("nc,ncd->nd", op.weights, mesh.vertices[op.targets]) - mesh.vertices[sel]
            b, _ = coeffs.vertex_table(mesh, int(k), sel)
            disp = max(disp, float(np.max(np.linalg.norm(mean + grid.h * b, axis=1))))
    cap = 2 * coeffs.r * (coeffs.dim + 1)
    report.checks.append(Check("row sum deviation", sums, ROW_SUM_TOL, sums <= ROW_SUM_TOL))
    report.checks.append(Check("nonzeros per row", width, cap, width <= cap))
    report.checks.append(Check("mean displacement vs -h b", disp, mesh.dx, disp <= mesh.dx))

    if cfg.duality_samples:
        with _Timer(report, "duality"):
            g = make_rng(cfg.seed, stream=1).uniform(-1.0, 1.0, size=(mesh.n_vertices, cfg.duality_samples))
            gaps = np.atleast_1d(duality_gap(mesh, coeffs, prob.initial, g, grid.N, escape=cfg.escape))
        ratio = float(np.max(gaps / np.abs(g).max(axis=0)))
        report.checks.append(Check("duality gap / |g|_inf", ratio, DUALITY_TOL, ratio <= DUALITY_TOL))


_RUNNERS = {"transport": run_transport, "conservative": run_conservative, "ladder": run_ladder, "check": run_checks}


def run_experiment(cfg: ExperimentConfig, command: str = "transport") -> RunReport:
    """Run one subcommand and write its artifacts into ``cfg.out``.

    Writes ``config.txt`` (resolved echo, including the seed) before
    solving and ``summary.txt`` afterwards. Configuration problems
    raise ``ConfigError`` before any solve starts.
    """
    if command not in _RUNNERS:
        raise ConfigError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}")
    cfg.validate()
    if command == "ladder" and cfg.ladder is None:
        raise ConfigError("the ladder command needs 'ladder = dx1, dx2, ...'")
    prob = cfg.problem()
    cfg = cfg.resolved(prob)
    # reject bad margins and couplings before any work
    for dx in cfg.ladder if command == "ladder" else (cfg.dx,):
        for eq in ("transport", "conservative"):
            cfg.margin_for(prob, cfg.time_step(prob, dx, eq)[0])
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    report = RunReport(command, out)
    t0 = time.perf_counter()
    _RUNNERS[command](cfg, report)
    report.timings["total"] = time.perf_counter() - t0
    (out / "summary.txt").write_text(report.summary())
    logger.info("%s finished: %s", command, "PASS" if report.passed else "FAIL")
    return report

