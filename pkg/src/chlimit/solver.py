"""Implicit Euler for the viscous Cahn-Hilliard relaxation and its limits.

The relaxation is marched in mixed form, unknowns ``(u, mu)`` stacked::

    M (u+ - u)/tau + F mu+                                   = 0
    M mu+ - lam M (u+ - u)/tau - eps F u+ - M_L (b(u+) + p(u+)) + M f+ = 0

with ``b`` the Yosida approximation, ``p`` the anti-monotone perturbation and
``F = K + kappa*B``.  Nonlinear terms are nodal (lumped); linear ones use the
consistent mass matrix.  The limit problem is marched in ``u`` alone.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _banded as bd
from . import fem
from .fem import FemOperators
from .graphs import GraphSpec, PiSpec, hat_pi_eps, moreau_yosida, pi_eps, pi_eps_prime, yosida_with_prime

__all__ = [
    "ChParams",
    "ChState",
    "Trajectory",
    "StepFailure",
    "SolverError",
    "initial_smoothing",
    "ch_step",
    "march_ch",
    "limit_march",
    "limit_step",
    "discrete_energy",
    "n_steps_for",
    "write_trajectory_csv",
    "TRAJECTORY_HEADER",
]

log = logging.getLogger(__name__)

LAMBDA_REF = 1e-8
TRAJECTORY_HEADER = ("step", "t", "node_index", "x", "u", "mu", "xi")


class StepFailure(RuntimeError):
    """Newton did not converge; carries the last residual norm."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChParams:
    eps: float
    lam: float
    kappa: float
    tau: float
    T: float
    graph: GraphSpec
    pi: PiSpec = field(default_factory=PiSpec)
    newton_tol: float = 1e-10
    newton_max: int = 50

    def __post_init__(self):
        for name in ("eps", "lam"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not (self.tau > 0 and self.T > 0 and self.tau <= self.T):
            raise ValueError(f"need 0 < tau <= T, got tau={self.tau}, T={self.T}")


@dataclass(frozen=True)
class ChState:
    u: np.ndarray
    mu: np.ndarray
    t: float = 0.0
    step: int = 0


@dataclass
class Trajectory:
    """Snapshots at ``times`` (index 0 is the initial state)."""

    times: np.ndarray
    u: np.ndarray
    mu: np.ndarray
    xi: np.ndarray
    x: np.ndarray
    kind: str = "ch"
    eps: float = math.nan
    lam: float = math.nan
    kappa: float = math.nan
    newton_iters: list = field(default_factory=list)
    retries: int = 0

    @property
    def tau(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def increments(self) -> np.ndarray:
        """Backward differences ``(u^n - u^{n-1})/tau`` for ``n = 1..N``."""
        return np.diff(self.u, axis=0) / np.diff(self.times)[:, None]


def n_steps_for(tau: float, T: float) -> int:
    n = int(round(T / tau))
    if n < 1 or abs(n * tau - T) > 1e-9 * T:
        raise ValueError(f"T={T} is not an integer multiple of tau={tau}")
    return n


def initial_smoothing(ops: FemOperators, u0, eps: float) -> np.ndarray:
    """Elliptic mollification ``(M + sqrt(eps) F) u0e = M u0``."""
    if not 0 < eps <= 1:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    u0 = np.asarray(u0, dtype=float)
    return ops.shifted_solve(ops.M @ u0, math.sqrt(eps))


def discrete_energy(ops: FemOperators, params: ChParams, u) -> float:
    """``(eps/2)|u|_V^2 + sum_i M_L,i (hat_beta_lam + hat_pi)(u_i)``."""
    u = np.asarray(u, dtype=float)
    bulk = moreau_yosida(params.graph, params.lam, u) + hat_pi_eps(params.pi, params.eps, u)
    return 0.5 * params.eps * fem.v_norm(ops, u) ** 2 + float(ops.M_L @ bulk)


def _newton(fun, x0, scale, tol, maxit):
    """Damped Newton; ``fun(x)`` returns ``(residual, solve)`` with ``solve(r) = J(x)^-1 r``."""
    x = x0.copy()
    res, lin = fun(x)
    rnorm = np.max(np.abs(res))
    target = tol * (1.0 + scale)
    for it in range(maxit + 1):
        if rnorm <= target:
            return x, it, rnorm
        if it == maxit:
            break
        dx = lin(-res)
        if not np.all(np.isfinite(dx)):
            break
        # steep Yosida slopes (1/lambda) put a round-off floor on the residual;
        # a Newton update at machine precision means the iterate cannot improve
        if np.max(np.abs(dx)) <= 1e-14 * max(1.0, np.max(np.abs(x))):
            return x, it, rnorm
        step = 1.0
        for _ in range(30):
            trial = x + step * dx
            tres, tlin = fun(trial)
            tnorm = np.max(np.abs(tres))
            if np.isfinite(tnorm) and (tnorm < rnorm or tnorm <= target):
                break
            step *= 0.5
        else:
            break
        x, res, lin, rnorm = trial, tres, tlin, tnorm
    raise StepFailure(f"Newton failed: residual {rnorm:.3e} > {target:.3e}", rnorm)


def ch_step(ops: FemOperators, params: ChParams, state: ChState, f_next, tau=None):
    """One implicit Euler step of the relaxation; returns ``(state, newton_iters)``."""
    tau = params.tau if tau is None else tau
    u_old = np.asarray(state.u, dtype=float)
    f_next = np.asarray(f_next, dtype=float)
    n = ops.n
    Mt, Ft, ML = ops.m_tri, ops.F_bands(), ops.M_L
    eps, lam = params.eps, params.lam
    Mu_old = bd.matvec(Mt, u_old)
    Mf = bd.matvec(Mt, f_next)
    dpi = pi_eps_prime(params.pi, eps)
    A11 = bd.combine((1.0 / tau, Mt))
    A21_lin = bd.combine((-lam / tau, Mt), (-eps, Ft))

    def fun(x):
        u, mu = x[:n], x[n:]
        b, db = yosida_with_prime(params.graph, lam, u)
        du = (bd.matvec(Mt, u) - Mu_old) / tau
        r1 = du + bd.matvec(Ft, mu)
        r2 = bd.matvec(Mt, mu) - lam * du - eps * bd.matvec(Ft, u) - ML * (b + pi_eps(params.pi, eps, u)) + Mf

        def lin(r):
            lo, d, up = A21_lin
            a21 = (lo, d - ML * (db + dpi), up)
            z1, z2 = bd.solve_block(A11, Ft, a21, Mt, r[:n], r[n:])
            return np.concatenate([z1, z2])

        return np.concatenate([r1, r2]), lin

    scale = max(np.max(np.abs(Mu_old)) / tau, np.max(np.abs(Mf)))
    x0 = np.concatenate([u_old, np.asarray(state.mu, dtype=float)])
    x, iters, _ = _newton(fun, x0, scale, params.newton_tol, params.newton_max)
    return ChState(u=x[:n], mu=x[n:], t=state.t + tau, step=state.step + 1), iters


def march_ch(ops: FemOperators, params: ChParams, u0e, f_samples) -> Trajectory:
    """Repeated :func:`ch_step` from ``u0e``; ``f_samples[k]`` is ``f`` at ``k*tau``.

    A failed step is retried once as two half steps (``f`` interpolated
    linearly); a second failure raises :class:`SolverError`.
    """
    if abs(ops.kappa - params.kappa) > 1e-14 * max(1.0, params.kappa):
        raise ValueError("operators and parameters disagree on kappa")
    nsteps = n_steps_for(params.tau, params.T)
    f_samples = np.asarray(f_samples, dtype=float)
    if f_samples.shape != (nsteps + 1, ops.n):
        raise ValueError(f"f_samples must have shape {(nsteps + 1, ops.n)}, got {f_samples.shape}")
    u0e = np.asarray(u0e, dtype=float)
    times = params.tau * np.arange(nsteps + 1)
    U = np.empty((nsteps + 1, ops.n))
    MU = np.empty_like(U)
    U[0] = u0e
    # mu at t=0 from the second equation with u+ = u0e and no time derivative
    b0 = np.asarray(yosida_with_prime(params.graph, params.lam, u0e)[0])
    rhs0 = params.eps * fem.duality_map(ops, u0e) + ops.M_L * (b0 + pi_eps(params.pi, params.eps, u0e))
    MU[0] = ops.shifted_solve(rhs0, 0.0) - f_samples[0]
    state = ChState(u=U[0], mu=MU[0])
    traj = Trajectory(
        times=times, u=U, mu=MU, xi=np.empty_like(U), x=ops.mesh.nodes,
        kind="ch", eps=params.eps, lam=params.lam, kappa=params.kappa,
    )
    for k in range(nsteps):
        try:
            state, its = ch_step(ops, params, state, f_samples[k + 1])
            traj.newton_iters.append(its)
        except StepFailure as exc:
            log.warning("step %d failed (residual %.3e); retrying with tau/2", k + 1, exc.residual)
            half = 0.5 * params.tau
            f_mid = 0.5 * (f_samples[k] + f_samples[k + 1])
            try:
                mid, i1 = ch_step(ops, params, state, f_mid, tau=half)
                state, i2 = ch_step(ops, params, mid, f_samples[k + 1], tau=half)
            except StepFailure as exc2:
                raise SolverError(
                    f"relaxation step {k + 1} failed after tau halving: residual {exc2.residual:.3e}"
                ) from exc2
            traj.retries += 1
            traj.newton_iters.append(i1 + i2)
        state = ChState(u=state.u, mu=state.mu, t=times[k + 1], step=k + 1)
        U[k + 1] = state.u
        MU[k + 1] = state.mu
    traj.xi[:] = yosida_with_prime(params.graph, params.lam, U)[0]
    return traj


def limit_step(ops, graph, lam_ref, u_old, load, tau, kappa, tol=1e-10, maxit=50):
    """Solve ``M(u+ - u)/tau + (K + kappa B) beta_lam(u+) = load`` for ``u+``."""
    Mt = ops.m_tri
    Ft = ops.F_bands(kappa)
    Mu_old = bd.matvec(Mt, np.asarray(u_old, dtype=float))
    Mtau = bd.combine((1.0 / tau, Mt))
    scale = max(np.max(np.abs(Mu_old)) / tau, np.max(np.abs(load)))

    def solve_at(lam, x0):
        def fun(u):
            b, db = yosida_with_prime(graph, lam, u)
            r = (bd.matvec(Mt, u) - Mu_old) / tau + bd.matvec(Ft, b) - load

            def lin(rhs):
                return bd.solve(bd.combine((1.0, Mtau), (1.0, bd.scale_columns(Ft, db))), rhs)

            return r, lin

        return _newton(fun, x0, scale, tol, maxit)

    x0 = np.asarray(u_old, dtype=float)
    try:
        u, iters, _ = solve_at(lam_ref, x0)
        return u, iters
    except StepFailure:
        pass
    # continuation in lambda: damped Newton stalls on kinked graphs when 1/lam is huge
    total = 0
    u = x0
    lam = 1e-1
    while True:
        lam = max(lam, lam_ref)
        u, iters, _ = solve_at(lam, u)
        total += iters
        if lam == lam_ref:
            return u, total
        lam *= 0.1


def limit_march(
    ops: FemOperators,
    scheme: str,
    graph: GraphSpec,
    g_samples,
    h_samples,
    u0,
    tau: float,
    T: float,
    lambda_ref: float = LAMBDA_REF,
    newton_tol: float = 1e-10,
    newton_max: int = 50,
) -> Trajectory:
    """Implicit Euler for the degenerate limit with Robin or Neumann boundary.

    ``scheme`` is ``"robin"`` (uses ``ops.kappa > 0``) or ``"neumann"``
    (boundary matrix dropped).  ``g_samples`` has one nodal row per time level,
    ``h_samples`` one ``(h_left, h_right)`` pair per level.  ``mu`` is
    recorded as ``xi - f`` for Robin and left as NaN for Neumann, where no
    lifting exists.
    """
    if not lambda_ref > 0:
        raise ValueError("lambda_ref must be positive")
    if scheme == "robin":
        kappa = ops.kappa
        if not kappa > 0:
            raise ValueError("Robin scheme needs kappa > 0")
    elif scheme == "neumann":
        kappa = 0.0
    else:
        raise ValueError(f"unknown scheme {scheme!r}; expected 'robin' or 'neumann'")
    nsteps = n_steps_for(tau, T)
    g_samples = np.asarray(g_samples, dtype=float)
    h_samples = np.asarray(h_samples, dtype=float)
    if g_samples.shape != (nsteps + 1, ops.n) or h_samples.shape != (nsteps + 1, 2):
        raise ValueError("g_samples/h_samples do not match the time grid")
    times = tau * np.arange(nsteps + 1)
    U = np.empty((nsteps + 1, ops.n))
    U[0] = np.asarray(u0, dtype=float)
    loads = np.asarray(g_samples @ ops.M)
    loads[:, 0] += h_samples[:, 0]
    loads[:, -1] += h_samples[:, 1]
    traj = Trajectory(
        times=times, u=U, mu=np.full_like(U, np.nan), xi=np.empty_like(U), x=ops.mesh.nodes,
        kind=scheme, lam=lambda_ref, kappa=kappa,
    )
    for k in range(nsteps):
        try:
            U[k + 1], its = limit_step(ops, graph, lambda_ref, U[k], loads[k + 1], tau, kappa,
                                       newton_tol, newton_max)
        except StepFailure as exc:
            log.warning("limit step %d failed (residual %.3e); retrying with tau/2", k + 1, exc.residual)
            try:
                mid, i1 = limit_step(ops, graph, lambda_ref, U[k], 0.5 * (loads[k] + loads[k + 1]),
                                     0.5 * tau, kappa, newton_tol, newton_max)
                U[k + 1], i2 = limit_step(ops, graph, lambda_ref, mid, loads[k + 1], 0.5 * tau, kappa,
                                          newton_tol, newton_max)
            except StepFailure as exc2:
                raise SolverError(f"limit step {k + 1} failed after tau halving") from exc2
            its = i1 + i2
            traj.retries += 1
        traj.newton_iters.append(its)
    traj.xi[:] = yosida_with_prime(graph, lambda_ref, U)[0]
    if scheme == "robin":
        for k in range(nsteps + 1):
            traj.mu[k] = traj.xi[k] - fem.duality_solve(ops, loads[k])
    return traj


def write_trajectory_csv(traj: Trajectory, fh) -> None:
    """Long-format rows ``step,t,node_index,x,u,mu,xi``."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRAJECTORY_HEADER)
    for k, t in enumerate(traj.times):
        for i, x in enumerate(traj.x):
            w.writerow([k, repr(float(t)), i, repr(float(x)), repr(float(traj.u[k, i])),
                        repr(float(traj.mu[k, i])), repr(float(traj.xi[k, i]))])
