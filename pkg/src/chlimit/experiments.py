"""Scenario catalog and the parameter sweeps built on the two solvers.

Scenarios carry their data as module-level functions so they pickle into
worker processes.  Every sweep accepts ``jobs``; points are evaluated in a
process pool when ``jobs > 1`` and always returned in parameter order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import analysis, fem, solver
from .analysis import ConvergenceRecord, EnergyReport, RateFit
from .graphs import GraphSpec, PiSpec, parse_graph

__all__ = [
    "Scenario",
    "ScenarioError",
    "SweepError",
    "Discretization",
    "AuditReport",
    "UniquenessReport",
    "SCENARIOS",
    "get_scenario",
    "lambda_bar",
    "manufactured_residual",
    "run_ch",
    "run_limit",
    "sweep_lambda",
    "sweep_eps",
    "sweep_kappa",
    "uniform_bound_audit",
    "uniqueness_probe",
]

AUDIT_RATIO = 10.0
KAPPA_REF = 1.0


class ScenarioError(ValueError):
    pass


class SweepError(RuntimeError):
    """A solver failure inside a sweep; names the parameter point."""

    def __init__(self, message, param_name=None, param_value=None):
        super().__init__(message)
        self.param_name = param_name
        self.param_value = param_value


# -- data generators ---------------------------------------------------------

def _zero_g(x, t):
    return np.zeros_like(x)


def _zero_h(t, kappa):
    return (0.0, 0.0)


def _bump(x):
    return np.exp(-50.0 * (x - 0.5) ** 2)


def _bump_g(x, t):
    return _bump(x)


def _bump2_g(x, t):
    return 2.0 * _bump(x)


def _s1_u0(x):
    return np.cos(x)


def _s1_exact(x, t):
    return math.exp(-t) * np.cos(x)


def _s1_h(t, kappa):
    e = math.exp(-t)
    return (kappa * e, e * (-math.sin(1.0) + kappa * math.cos(1.0)))


def _s2_u0(x):
    return np.maximum(0.0, 1.0 - 4.0 * (x - 0.5) ** 2)


def _s3_u0(x):
    return 2.5 - 5.0 * x


def _s3_g(x, t):
    return np.where(x < 0.5, 1.0, 0.0)


def _s3_h(t, kappa):
    # exterior temperatures +1 (left) and -1 (right)
    return (kappa * 1.0, kappa * -1.0)


def _s4_u0(x):
    return 1.0 + 0.5 * np.cos(np.pi * x)


def _s5_u0(x):
    return 0.5 + 0.4 * np.cos(np.pi * x)


@dataclass(frozen=True)
class Scenario:
    """Data ``(g, h, u0)`` for one graph on ``(0, 1)``.

    Route ``A4`` admits general ``(g, h)`` but needs the growth condition on
    the graph; route ``A6`` drops it in exchange for ``h = 0`` and
    ``sigma(eps) = sqrt(eps)``.
    """

    id: str
    title: str
    graph: GraphSpec
    route: str
    u0: Callable
    g: Callable = _zero_g
    h: Callable = _zero_h
    pi: PiSpec = field(default_factory=PiSpec)
    u_exact: Callable | None = None
    kappa: float = 1.0

    def __post_init__(self):
        if self.route not in ("A4", "A6"):
            raise ScenarioError(f"{self.id}: route must be 'A4' or 'A6', got {self.route!r}")
        if not self.kappa > 0:
            raise ScenarioError(f"{self.id}: kappa must be positive")
        if self.route == "A4" and not self.graph.a2_holds:
            raise ScenarioError(
                f"{self.id}: graph {self.graph.id} violates the growth condition; use route A6"
            )
        if self.route == "A6":
            if self.pi.sigma_kind != "sqrt":
                raise ScenarioError(f"{self.id}: route A6 needs sigma(eps) = sqrt(eps)")
            for t in (0.0, 0.37, 1.0):
                for kappa in (0.0, self.kappa):
                    if any(v != 0.0 for v in self.h(t, kappa)):
                        raise ScenarioError(f"{self.id}: route A6 needs h = 0")

    def with_route(self, route: str) -> "Scenario":
        return replace(self, route=route)

    def with_graph(self, graph: GraphSpec) -> "Scenario":
        return replace(self, graph=graph)

    def with_kappa(self, kappa: float) -> "Scenario":
        return replace(self, kappa=kappa)

    @property
    def expected_eps_slope(self) -> float:
        return 0.5 if self.route == "A6" else 1.0 / 3.0

    def samples(self, x, tau: float, T: float, kappa: float):
        """``g`` rows and ``(h_left, h_right)`` rows at ``t_k = k*tau``."""
        n = solver.n_steps_for(tau, T)
        t = tau * np.arange(n + 1)
        G = np.array([self.g(x, tk) for tk in t], dtype=float)
        H = np.array([self.h(tk, kappa) for tk in t], dtype=float)
        return G, H


SCENARIOS = {
    "S1": Scenario("S1", "linear-robin", parse_graph("identity"), "A4", _s1_u0,
                   h=_s1_h, u_exact=_s1_exact),
    "S2": Scenario("S2", "porous", parse_graph("porous:2"), "A6", _s2_u0, g=_bump_g),
    "S3": Scenario("S3", "stefan", parse_graph("stefan:1,1,1"), "A4", _s3_u0, g=_s3_g, h=_s3_h),
    "S4": Scenario("S4", "fast-diffusion", parse_graph("fast:0.5"), "A6", _s4_u0, g=_bump_g),
    "S5": Scenario("S5", "obstacle", parse_graph("double_obstacle:0,1"), "A6", _s5_u0, g=_bump2_g),
}


def get_scenario(sid: str) -> Scenario:
    try:
        return SCENARIOS[sid]
    except KeyError:
        raise ScenarioError(
            f"unknown scenario {sid!r}; available: {', '.join(sorted(SCENARIOS))}"
        ) from None


def lambda_bar(graph: GraphSpec) -> float:
    """``min(1, 1/(2 c1))`` under the growth condition, else 1."""
    if graph.a2_holds and graph.c1 > 0:
        return min(1.0, 1.0 / (2.0 * graph.c1))
    return 1.0


def manufactured_residual(scenario: Scenario, x, t, kappa=None, step=1e-3):
    """Largest finite-difference residual of the PDE and the Robin condition.

    Returns ``(bulk, boundary)``: ``|u_t - (beta(u))'' - g|`` at the sample
    points and ``|d_nu beta(u) + kappa beta(u) - h|`` at ``x = 0, 1``.
    """
    if scenario.u_exact is None:
        raise ScenarioError(f"{scenario.id} has no exact solution")
    kappa = scenario.kappa if kappa is None else kappa
    x = np.asarray(x, dtype=float)
    ue = scenario.u_exact
    b = scenario.graph.value
    d = step

    def xi(y, s):
        return b(ue(y, s))

    bulk = 0.0
    for s in np.atleast_1d(t):
        u_t = (ue(x, s + d) - ue(x, s - d)) / (2 * d)
        lap = (xi(x + d, s) - 2 * xi(x, s) + xi(x - d, s)) / (d * d)
        bulk = max(bulk, float(np.max(np.abs(u_t - lap - scenario.g(x, s)))))
    bnd = 0.0
    ends = np.array([0.0, 1.0])
    for s in np.atleast_1d(t):
        dx = (xi(ends + d, s) - xi(ends - d, s)) / (2 * d)
        flux = np.array([-dx[0], dx[1]]) + kappa * xi(ends, s)
        bnd = max(bnd, float(np.max(np.abs(flux - np.array(scenario.h(s, kappa))))))
    return bulk, bnd


@dataclass(frozen=True)
class Discretization:
    n_cells: int = 64
    tau: float = 1e-3
    T: float = 0.1

    def __post_init__(self):
        solver.n_steps_for(self.tau, self.T)


# -- single runs -------------------------------------------------------------

def run_ch(scenario: Scenario, eps: float, lam: float, disc: Discretization, kappa=None):
    """Relaxed run from the mollified initial datum; returns ``(ops, params, traj, G)``."""
    kappa = scenario.kappa if kappa is None else kappa
    ops = fem.assemble(fem.Mesh1D(0.0, 1.0, disc.n_cells), kappa)
    x = ops.mesh.nodes
    G, H = scenario.samples(x, disc.tau, disc.T, kappa)
    f = np.array([fem.build_f(ops, G[k], H[k]) for k in range(len(G))])
    params = solver.ChParams(eps=eps, lam=lam, kappa=kappa, tau=disc.tau, T=disc.T,
                             graph=scenario.graph, pi=scenario.pi)
    u0e = solver.initial_smoothing(ops, scenario.u0(x), eps)
    traj = solver.march_ch(ops, params, u0e, f)
    return ops, params, traj, G


def run_limit(scenario: Scenario, disc: Discretization, scheme="robin", kappa=None,
              data_kappa=None, lambda_ref=solver.LAMBDA_REF):
    """Limit-problem run; ``data_kappa`` fixes the ``kappa`` fed to ``h``."""
    kappa = scenario.kappa if kappa is None else kappa
    ops = fem.assemble(fem.Mesh1D(0.0, 1.0, disc.n_cells), 0.0 if scheme == "neumann" else kappa)
    x = ops.mesh.nodes
    G, H = scenario.samples(x, disc.tau, disc.T, kappa if data_kappa is None else data_kappa)
    traj = solver.limit_march(ops, scheme, scenario.graph, G, H, scenario.u0(x),
                              disc.tau, disc.T, lambda_ref=lambda_ref)
    return ops, traj


def _pool_map(fn, items, jobs):
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _check_decreasing(name, values, min_len):
    vals = [float(v) for v in values]
    if len(vals) < min_len:
        raise ValueError(f"{name} needs at least {min_len} values, got {len(vals)}")
    if any(b >= a for a, b in zip(vals, vals[1:])):
        raise ValueError(f"{name} must be strictly decreasing, got {vals}")
    return vals


def _strictly_decreasing(errs):
    return all(b < a for a, b in zip(errs, errs[1:]))


# -- lambda sweep ------------------------------------------------------------

def _ch_point(args):
    scenario, eps, lam, disc, kappa = args
    try:
        return run_ch(scenario, eps, lam, disc, kappa)[2]
    except solver.SolverError as exc:
        return exc


def _ch_trajectories(scenario, eps, lams, disc, kappa, jobs, param_name="lambda"):
    out = _pool_map(_ch_point, [(scenario, eps, lam, disc, kappa) for lam in lams], jobs)
    for lam, tr in zip(lams, out):
        if isinstance(tr, Exception):
            raise SweepError(f"solver failed at {param_name}={lam!r}: {tr}", param_name, lam) from tr
    return out


def sweep_lambda(scenario: Scenario, eps: float, lambdas, disc=Discretization(), kappa=None, jobs=1):
    """Cauchy gaps ``max_t |u_{lam_i} - u_{lam_(i+1)}|_H`` for a decreasing ``lambdas``.

    Gap ``i`` is recorded against ``lam_(i+1)``.  ``monotone`` holds when each
    gap is smaller than the previous one (or both vanish).
    """
    lams = _check_decreasing("lambda list", lambdas, 3)
    if not 0 < eps <= 1:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    trajs = _ch_trajectories(scenario, eps, lams, disc, kappa, jobs)
    ops = fem.assemble(fem.Mesh1D(0.0, 1.0, disc.n_cells), scenario.kappa if kappa is None else kappa)
    gaps = []
    for a, b in zip(trajs, trajs[1:]):
        d = a.u - b.u
        gaps.append(float(np.sqrt(np.max(np.einsum("ij,ij->i", d, d @ ops.M)))))
    monotone = all(b < a or (a == 0 and b == 0) for a, b in zip(gaps, gaps[1:]))
    fit = analysis.fit_rate(zip(lams[1:], gaps)) if len(gaps) >= 3 and min(gaps) > 0 else None
    rec = ConvergenceRecord(
        sweep_id="sweep-lambda", scenario=scenario.id, param_name="lambda",
        params=lams[1:], errors=gaps, metrics={"cauchy_gap_h": gaps}, fit=fit, monotone=monotone,
    )
    if not monotone:
        rec.notes.append("Cauchy gaps are not decreasing")
    return rec


# -- eps sweep ---------------------------------------------------------------

def sweep_eps(scenario: Scenario, eps_list, disc=Discretization(), jobs=1, tolerance=0.1):
    """Relaxed runs with ``lam = min(lambda_bar, eps^2)`` against the limit reference.

    The error is ``cvstar_error^2 + duality_gap``; the expected slope is 1/2
    on route A6 and 1/3 otherwise.  A non-monotone error sequence is noted
    in the record, not raised.
    """
    epss = _check_decreasing("eps list", eps_list, 3)
    if any(not 0 < e <= 1 for e in epss):
        raise ValueError("eps values must lie in (0, 1]")
    if scenario.pi.sigma_kind != "sqrt":
        raise ValueError("eps sweep needs sigma(eps) = sqrt(eps)")
    lb = lambda_bar(scenario.graph)
    args = [(scenario, e, min(lb, e * e), disc, None) for e in epss]
    out = _pool_map(_ch_point, args, jobs)
    for e, tr in zip(epss, out):
        if isinstance(tr, Exception):
            raise SweepError(f"solver failed at eps={e!r}: {tr}", "eps", e) from tr
    ops, ref = run_limit(scenario, disc)
    cv = [analysis.cvstar_error(ops, tr, ref) ** 2 for tr in out]
    gap = [analysis.duality_gap(ops, tr, ref) for tr in out]
    errs = [c + g for c, g in zip(cv, gap)]
    rec = ConvergenceRecord(
        sweep_id="sweep-eps", scenario=scenario.id, param_name="eps", params=epss, errors=errs,
        metrics={"cvstar_sq": cv, "duality_gap": gap, "lambda": [a[2] for a in args]},
        fit=analysis.fit_rate(zip(epss, errs)), expected_slope=scenario.expected_eps_slope,
        tolerance=tolerance, monotone=_strictly_decreasing(errs),
    )
    if not rec.monotone:
        rec.notes.append("error sequence is not strictly decreasing")
    return rec


# -- kappa sweep -------------------------------------------------------------

def _robin_point(args):
    scenario, disc, kappa = args
    try:
        return run_limit(scenario, disc, "robin", kappa=kappa, data_kappa=0.0)[1]
    except solver.SolverError as exc:
        return exc


def sweep_kappa(scenario: Scenario, kappas, disc=Discretization(), jobs=1, tolerance=0.2):
    """Robin limit runs against the Neumann limit with identical data.

    ``h`` is evaluated at ``kappa = 0`` for every run.  Errors are measured
    with the ``kappa = 1`` operators: ``cvstar^2 + 2*duality_gap``, plus the
    squared ``L^2(H)`` distance of ``xi`` when the graph is Lipschitz.
    """
    ks = _check_decreasing("kappa list", kappas, 3)
    if any(k <= 0 for k in ks):
        raise ValueError("kappa values must be positive")
    out = _pool_map(_robin_point, [(scenario, disc, k) for k in ks], jobs)
    for k, tr in zip(ks, out):
        if isinstance(tr, Exception):
            raise SweepError(f"solver failed at kappa={k!r}: {tr}", "kappa", k) from tr
    try:
        _, ref = run_limit(scenario, disc, "neumann", data_kappa=0.0)
    except solver.SolverError as exc:
        raise SweepError(f"Neumann reference failed: {exc}") from exc
    ops = fem.assemble(fem.Mesh1D(0.0, 1.0, disc.n_cells), KAPPA_REF)
    cv = [analysis.cvstar_error(ops, tr, ref) ** 2 for tr in out]
    gap = [analysis.duality_gap(ops, tr, ref) for tr in out]
    errs = [c + 2 * g for c, g in zip(cv, gap)]
    metrics = {"cvstar_sq": cv, "duality_gap": gap}
    aux = {}
    if math.isfinite(scenario.graph.lipschitz):
        l2 = [analysis.l2h_error(ops, tr, ref, "xi") for tr in out]
        metrics["l2h_xi_sq"] = l2
        aux["l2h_xi_sq"] = analysis.fit_rate(zip(ks, l2))
    rec = ConvergenceRecord(
        sweep_id="sweep-kappa", scenario=scenario.id, param_name="kappa", params=ks, errors=errs,
        metrics=metrics, fit=analysis.fit_rate(zip(ks, errs)), expected_slope=2.0,
        tolerance=tolerance, monotone=_strictly_decreasing(errs), aux_fits=aux,
    )
    return rec


# -- audit -------------------------------------------------------------------

@dataclass
class AuditCell:
    eps: float
    lam: float
    report: EnergyReport | None
    error: str = ""
    q_max: float = math.nan
    q_bound: float = math.nan

    @property
    def gronwall_ok(self) -> bool:
        return math.isnan(self.q_bound) or self.q_max <= self.q_bound


@dataclass
class AuditReport:
    scenario: str
    cells: list
    ratios: dict
    threshold: float = AUDIT_RATIO

    @property
    def failed_cells(self):
        return [c for c in self.cells if c.report is None]

    @property
    def worst_ratio(self) -> float:
        return max(self.ratios.values()) if self.ratios else math.nan

    @property
    def violations(self) -> dict:
        return {k: v for k, v in self.ratios.items() if not v <= self.threshold}

    @property
    def passes(self) -> bool:
        return (not self.failed_cells and not self.violations
                and all(c.gronwall_ok for c in self.cells))


def _audit_point(args):
    scenario, eps, lam, disc = args
    try:
        ops, params, traj, G = run_ch(scenario, eps, lam, disc)
    except solver.SolverError as exc:
        return AuditCell(eps, lam, None, str(exc))
    cell = AuditCell(eps, lam, analysis.energy_report(ops, traj, params))
    if scenario.route == "A6":
        cell.q_max, cell.q_bound = analysis.gronwall_bound(ops, traj, G, scenario.pi.c3)
    return cell


def uniform_bound_audit(scenario: Scenario, eps_grid, lambda_grid, disc=Discretization(), jobs=1):
    """Energy reports over the grid and each field's max/median ratio.

    On route A6 every cell also checks ``|u|_H^2 + lam |u|_V^2`` against the
    Gronwall bound of :func:`analysis.gronwall_bound`.  Failed cells are kept with
    their message and excluded from the ratios.
    """
    eps_grid = [float(e) for e in eps_grid]
    lambda_grid = [float(v) for v in lambda_grid]
    if not eps_grid or not lambda_grid:
        raise ValueError("audit grids must be nonempty")
    args = [(scenario, e, lam, disc) for e in eps_grid for lam in lambda_grid]
    cells = _pool_map(_audit_point, args, jobs)
    ok = [c.report for c in cells if c.report is not None]
    ratios = {}
    for name in analysis.ENERGY_FIELDS:
        v = np.array([getattr(r, name) for r in ok])
        if len(v) == 0:
            continue
        med = float(np.median(v))
        ratios[name] = float(v.max() / med) if med > 0 else (1.0 if v.max() == 0 else math.inf)
    return AuditReport(scenario.id, cells, ratios)


# -- uniqueness --------------------------------------------------------------

@dataclass(frozen=True)
class UniquenessReport:
    distance: float
    cauchy_gap: float
    path_a: tuple
    path_b: tuple
    factor: float = 10.0

    @property
    def passes(self) -> bool:
        return self.distance <= self.factor * self.cauchy_gap or self.distance == 0.0


def uniqueness_probe(scenario: Scenario, path_a, path_b, eps=0.01, disc=Discretization(), jobs=1):
    """``C([0,T];V*)`` distance between the terminal runs of two lambda paths.

    The reference scale is the Cauchy gap between the last two entries of
    the path that ends at the smaller lambda.
    """
    pa = _check_decreasing("lambda path A", path_a, 2)
    pb = _check_decreasing("lambda path B", path_b, 2)
    lams = sorted(set(pa) | set(pb), reverse=True)
    trajs = dict(zip(lams, _ch_trajectories(scenario, eps, lams, disc, None, jobs)))
    ops = fem.assemble(fem.Mesh1D(0.0, 1.0, disc.n_cells), scenario.kappa)
    dist = analysis.cvstar_error(ops, trajs[pa[-1]], trajs[pb[-1]])
    finer = pa if pa[-1] <= pb[-1] else pb
    gap = analysis.cvstar_error(ops, trajs[finer[-2]], trajs[finer[-1]])
    return UniquenessReport(dist, gap, tuple(pa), tuple(pb))
