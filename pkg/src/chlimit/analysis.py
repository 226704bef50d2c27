"""Energy monitors, trajectory error norms and rate fitting.

Time integrals are right-endpoint sums ``tau * sum_{n=1..N}``, the natural
quadrature of implicit Euler; maxima run over every snapshot including
``t = 0``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import fem
from .fem import FemOperators
from .graphs import hat_beta, moreau_yosida
from .solver import ChParams, Trajectory, discrete_energy

__all__ = [
    "EnergyReport",
    "ConvergenceRecord",
    "RateFit",
    "GridMismatchError",
    "energy_report",
    "lyapunov_check",
    "cvstar_error",
    "duality_gap",
    "l2h_error",
    "fit_rate",
    "initial_data_bounds",
    "gronwall_bound",
    "write_energy_csv",
    "write_sweep_csv",
    "ENERGY_FIELDS",
    "SWEEP_HEADER",
]

SWEEP_HEADER = (
    "sweep_id", "scenario", "param_name", "param_value",
    "cvstar_sq", "duality_gap", "l2h_xi_sq", "slope", "r2",
)


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class EnergyReport:
    int_du_vstar_sq: float
    int_du_h_sq_lam: float
    max_eps_u_v_sq: float
    max_hat_beta_l1: float
    max_u_h_sq: float
    int_mu_v_sq: float
    int_beta_h_sq: float
    int_eps_lap_sq: float

    def as_dict(self) -> dict:
        return asdict(self)


ENERGY_FIELDS = tuple(f.name for f in fields(EnergyReport))


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float


@dataclass
class ConvergenceRecord:
    """One sweep: parameter values (strictly decreasing) and per-point metrics.

    ``errors`` is the quantity the slope is fitted to; ``metrics`` holds the
    named components that make it up.  ``aux_fits`` are secondary rates held
    to the same expected slope.
    """

    sweep_id: str
    scenario: str
    param_name: str
    params: list
    errors: list
    metrics: dict = field(default_factory=dict)
    fit: RateFit | None = None
    expected_slope: float = math.nan
    tolerance: float = 0.1
    monotone: bool = True
    aux_fits: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def __post_init__(self):
        p = np.asarray(self.params, dtype=float)
        if len(p) != len(self.errors):
            raise ValueError("params and errors differ in length")
        if np.any(np.diff(p) >= 0):
            raise ValueError(f"{self.param_name} values must be strictly decreasing")

    @property
    def passes(self) -> bool:
        """Slopes at least ``expected - tolerance`` and errors strictly decreasing."""
        if self.fit is None or math.isnan(self.expected_slope):
            return self.monotone
        floor = self.expected_slope - self.tolerance
        return (self.monotone and self.fit.slope >= floor
                and all(f.slope >= floor for f in self.aux_fits.values()))


def _check_grids(a: Trajectory, b: Trajectory):
    if a.u.shape != b.u.shape or not np.allclose(a.times, b.times, rtol=0, atol=1e-12):
        raise GridMismatchError(
            f"trajectories live on different grids: {a.u.shape} vs {b.u.shape}"
        )


def energy_report(ops: FemOperators, traj: Trajectory, params: ChParams) -> EnergyReport:
    if traj.n_steps < 1:
        raise ValueError("trajectory has no steps")
    tau = traj.tau
    eps, lam = params.eps, params.lam
    M = ops.M
    du = traj.increments
    Mdu = du @ M  # rows are M du_n, M symmetric
    du_vstar = sum(fem.vstar_norm(ops, r) ** 2 for r in Mdu)
    du_h = float(np.einsum("ij,ij->", du, Mdu))
    v_sq = np.array([fem.v_norm(ops, u) ** 2 for u in traj.u])
    hat_l1 = moreau_yosida(params.graph, lam, traj.u) @ ops.M_L
    h_sq = np.einsum("ij,ij->i", traj.u, traj.u @ M)
    mu_v = sum(fem.v_norm(ops, m) ** 2 for m in traj.mu[1:])
    xi = traj.xi[1:]
    beta_h = float(np.einsum("ij,ij->", xi, xi @ M))
    lap = np.array([fem.robin_laplacian_apply(ops, u) for u in traj.u[1:]])
    lap_h = float(np.einsum("ij,ij->", lap, lap @ M))
    return EnergyReport(
        int_du_vstar_sq=tau * du_vstar,
        int_du_h_sq_lam=lam * tau * du_h,
        max_eps_u_v_sq=float(eps * v_sq.max()),
        max_hat_beta_l1=float(hat_l1.max()),
        max_u_h_sq=float(h_sq.max()),
        int_mu_v_sq=tau * mu_v,
        int_beta_h_sq=tau * beta_h,
        int_eps_lap_sq=eps * eps * tau * lap_h,
    )


def lyapunov_check(ops: FemOperators, traj: Trajectory, params: ChParams, slack: float = 1e-12):
    """Return ``(ok, worst)``: the discrete energy must not increase between steps.

    ``worst`` is the largest ``E^n - E^{n-1}`` (negative when strictly
    decreasing); the slack is relative to ``max(1, |E^{n-1}|)``.
    """
    E = np.array([discrete_energy(ops, params, u) for u in traj.u])
    if len(E) < 2:
        return True, 0.0
    inc = np.diff(E)
    ok = bool(np.all(inc <= slack * np.maximum(1.0, np.abs(E[:-1]))))
    return ok, float(inc.max())


def cvstar_error(ops: FemOperators, traj_a: Trajectory, traj_b: Trajectory) -> float:
    """``max_n |M (u_a^n - u_b^n)|_{V*}``; ``ops`` fixes the metric (needs ``kappa > 0``)."""
    _check_grids(traj_a, traj_b)
    d = (traj_a.u - traj_b.u) @ ops.M
    return max(fem.vstar_norm(ops, r) for r in d)


def duality_gap(ops: FemOperators, traj_eps: Trajectory, traj_lim: Trajectory) -> float:
    """``tau * sum_n (xi_e - xi)^T M_L (u_e - u)`` with the lumped mass.

    The nodal product makes each term a sum of monotone increments, so the
    result is nonnegative up to round-off for every catalog graph.
    """
    _check_grids(traj_eps, traj_lim)
    dxi = traj_eps.xi[1:] - traj_lim.xi[1:]
    du = traj_eps.u[1:] - traj_lim.u[1:]
    return float(traj_eps.tau * np.einsum("ij,j,ij->", dxi, ops.M_L, du))


def l2h_error(ops: FemOperators, traj_a: Trajectory, traj_b: Trajectory, field: str = "u") -> float:
    """Squared ``L^2(0,T;H)`` distance ``tau * sum_n d_n^T M d_n``."""
    if field not in ("u", "xi"):
        raise ValueError(f"field must be 'u' or 'xi', got {field!r}")
    _check_grids(traj_a, traj_b)
    d = getattr(traj_a, field)[1:] - getattr(traj_b, field)[1:]
    return float(traj_a.tau * np.einsum("ij,ij->", d, d @ ops.M))


def fit_rate(points) -> RateFit:
    """Least squares line through ``(log param, log error)``."""
    pts = [(float(p), float(e)) for p, e in points]
    if len(pts) < 3:
        raise ValueError(f"need at least 3 points for a rate, got {len(pts)}")
    x = np.array([p for p, _ in pts])
    y = np.array([e for _, e in pts])
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("rate fitting needs positive, finite parameters and errors")
    lx, ly = np.log(x), np.log(y)
    A = np.column_stack([lx, np.ones_like(lx)])
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2)


def initial_data_bounds(ops: FemOperators, graph, u0, u0e, eps: float) -> dict:
    """The four initial-data quantities bounded by ``c4``, their max, and ``|u0e - u0|_{V*}``."""
    u0 = np.asarray(u0, dtype=float)
    u0e = np.asarray(u0e, dtype=float)
    grad = float(u0e @ (ops.K @ u0e))
    bnd = float(u0e[0] ** 2 + u0e[-1] ** 2)
    out = {
        "h_sq": fem.h_norm(ops, u0e) ** 2,
        "hat_beta_l1": float(ops.M_L @ hat_beta(graph, u0e)),
        "eps_grad_sq": eps * grad,
        "eps_bnd_sq": eps * bnd,
    }
    out["c4"] = max(out.values())
    out["vstar_dist"] = fem.vstar_norm(ops, ops.M @ (u0e - u0))
    return out


def gronwall_bound(ops: FemOperators, traj: Trajectory, g_samples, c3: float):
    """Gronwall bound on ``Q = |u|_H^2 + lam |u|_V^2`` for ``h = 0`` data.

    Returns ``(max_t Q, bound)`` where the bound is
    ``(Q(0) + int |g|_H^2 + 2 c3^2 |Omega| T) exp((2 c3^2 + 1) T)``.
    """
    g = np.asarray(g_samples, dtype=float)
    lam = traj.lam
    Q = np.array([fem.h_norm(ops, u) ** 2 + lam * fem.v_norm(ops, u) ** 2 for u in traj.u])
    T = traj.times[-1] - traj.times[0]
    g_sq = traj.tau * float(np.einsum("ij,ij->", g[1:], g[1:] @ ops.M))
    bound = (Q[0] + g_sq + 2 * c3 ** 2 * ops.mesh.length * T) * math.exp((2 * c3 ** 2 + 1) * T)
    return float(Q.max()), float(bound)


def _fmt(x) -> str:
    return repr(float(x))


def write_energy_csv(rows, fh) -> None:
    """One row per run: ``scenario,eps,lambda`` then the eight report fields."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("scenario", "eps", "lambda") + ENERGY_FIELDS)
    for scenario, eps, lam, rep in rows:
        w.writerow([scenario, _fmt(eps), _fmt(lam)] + [_fmt(getattr(rep, k)) for k in ENERGY_FIELDS])


def write_sweep_csv(records, fh) -> None:
    """One row per parameter point, columns :data:`SWEEP_HEADER`; missing metrics are ``nan``."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for rec in records:
        slope = rec.fit.slope if rec.fit else math.nan
        r2 = rec.fit.r2 if rec.fit else math.nan
        for i, p in enumerate(rec.params):
            vals = [rec.metrics.get(k, [math.nan] * len(rec.params))[i]
                    for k in ("cvstar_sq", "duality_gap", "l2h_xi_sq")]
            w.writerow([rec.sweep_id, rec.scenario, rec.param_name, _fmt(p)]
                       + [_fmt(v) for v in vals] + [_fmt(slope), _fmt(r2)])
