"""P1 finite elements on a uniform 1D mesh with a Robin (kappa-weighted) norm.

All matrices are tridiagonal.  The duality map ``F = K + kappa*B`` is the
Riesz map of the inner product ``int z' w' dx + kappa*(z w)|_boundary``;
solves with ``F`` and with ``M + s*F`` go through a banded LU.

Fields are plain numpy arrays of nodal values (primal) or of functional
values against the hat basis (dual).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

__all__ = [
    "Mesh1D",
    "FemOperators",
    "ConfigurationError",
    "SingularOperatorError",
    "assemble",
    "v_norm",
    "h_norm",
    "duality_map",
    "duality_solve",
    "vstar_norm",
    "boundary_load",
    "build_f",
    "boundary_flux",
    "robin_laplacian_apply",
    "norm_equivalence_constants",
    "riesz_constant",
    "write_matrix_csv",
]


class ConfigurationError(ValueError):
    pass


class SingularOperatorError(ValueError):
    """``K + kappa*B`` is singular for ``kappa <= 0`` (constants span its kernel)."""


@dataclass(frozen=True)
class Mesh1D:
    a: float = 0.0
    b: float = 1.0
    n_cells: int = 32

    def __post_init__(self):
        if not self.a < self.b:
            raise ConfigurationError(f"mesh needs a < b, got ({self.a}, {self.b})")
        if int(self.n_cells) != self.n_cells or self.n_cells < 2:
            raise ConfigurationError(f"n_cells must be an integer >= 2, got {self.n_cells}")

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.n_cells

    @property
    def n_nodes(self) -> int:
        return self.n_cells + 1

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.a, self.b, self.n_nodes)

    @property
    def length(self) -> float:
        return self.b - self.a


def _tridiag(lower, diag, upper):
    return sp.diags([lower, diag, upper], [-1, 0, 1], format="csr")


def _banded(lower, diag, upper):
    n = len(diag)
    ab = np.zeros((3, n))
    ab[0, 1:] = upper
    ab[1] = diag
    ab[2, :-1] = lower
    return ab


@dataclass(frozen=True, eq=False)
class FemOperators:
    """Mass, lumped mass, stiffness and boundary matrices for one ``kappa``.

    ``M_L`` and ``B`` are stored as their diagonals.
    """

    mesh: Mesh1D
    kappa: float
    M: sp.csr_matrix
    M_L: np.ndarray
    K: sp.csr_matrix
    B: np.ndarray
    _m_bands: tuple = field(repr=False)
    _k_bands: tuple = field(repr=False)

    @property
    def n(self) -> int:
        return self.mesh.n_nodes

    @property
    def F(self) -> sp.csr_matrix:
        return self.K + sp.diags(self.kappa * self.B)

    @property
    def m_tri(self):
        return self._m_bands

    @property
    def k_tri(self):
        return self._k_bands

    def F_bands(self, kappa=None):
        """Diagonals ``(lower, diag, upper)`` of ``K + kappa*B``."""
        kappa = self.kappa if kappa is None else kappa
        lo, d, up = self._k_bands
        return lo, d + kappa * self.B, up

    def shifted_solve(self, rhs, shift: float, kappa=None):
        """Solve ``(M + shift*F) x = rhs``; ``shift = inf`` means ``F x = rhs``."""
        flo, fd, fup = self.F_bands(kappa)
        if np.isinf(shift):
            ab = _banded(flo, fd, fup)
        else:
            mlo, md, mup = self._m_bands
            ab = _banded(mlo + shift * flo, md + shift * fd, mup + shift * fup)
        return scipy.linalg.solve_banded((1, 1), ab, rhs, check_finite=False)

    def with_kappa(self, kappa: float) -> "FemOperators":
        return assemble(self.mesh, kappa)


def assemble(mesh: Mesh1D, kappa: float) -> FemOperators:
    """Exact P1 matrices; ``kappa = 0`` is allowed for the Neumann limit."""
    if kappa < 0:
        raise ConfigurationError(f"kappa must be nonnegative, got {kappa}")
    n = mesh.n_nodes
    h = mesh.h
    m_diag = np.full(n, 4.0 * h / 6.0)
    m_diag[[0, -1]] = 2.0 * h / 6.0
    m_off = np.full(n - 1, h / 6.0)
    k_diag = np.full(n, 2.0 / h)
    k_diag[[0, -1]] = 1.0 / h
    k_off = np.full(n - 1, -1.0 / h)
    lumped = np.full(n, h)
    lumped[[0, -1]] = 0.5 * h
    bnd = np.zeros(n)
    bnd[[0, -1]] = 1.0
    return FemOperators(
        mesh=mesh,
        kappa=float(kappa),
        M=_tridiag(m_off, m_diag, m_off),
        M_L=lumped,
        K=_tridiag(k_off, k_diag, k_off),
        B=bnd,
        _m_bands=(m_off, m_diag, m_off),
        _k_bands=(k_off, k_diag, k_off),
    )


def h_norm(ops: FemOperators, u) -> float:
    u = np.asarray(u, dtype=float)
    return float(np.sqrt(max(u @ (ops.M @ u), 0.0)))


def v_norm(ops: FemOperators, z) -> float:
    """``(|z'|^2 + kappa |z|^2_boundary)^(1/2)``."""
    z = np.asarray(z, dtype=float)
    return float(np.sqrt(max(z @ (ops.K @ z) + ops.kappa * (z @ (ops.B * z)), 0.0)))


def duality_map(ops: FemOperators, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return ops.K @ z + ops.kappa * ops.B * z


def duality_solve(ops: FemOperators, L) -> np.ndarray:
    """Inverse duality map: the ``z`` with ``(K + kappa*B) z = L``."""
    if ops.kappa <= 0:
        raise SingularOperatorError("duality map is not invertible for kappa <= 0")
    return ops.shifted_solve(np.asarray(L, dtype=float), np.inf)


def vstar_norm(ops: FemOperators, L) -> float:
    L = np.asarray(L, dtype=float)
    return float(np.sqrt(max(L @ duality_solve(ops, L), 0.0)))


def boundary_load(ops: FemOperators, h_values) -> np.ndarray:
    """Dual field of ``z -> h(a) z(a) + h(b) z(b)``."""
    h_left, h_right = h_values
    out = np.zeros(ops.n)
    out[0] = h_left
    out[-1] = h_right
    return out


def build_f(ops: FemOperators, g, h_values) -> np.ndarray:
    """Lifted source: ``(K + kappa*B) f = M g + boundary_load(h)``."""
    g = np.asarray(g, dtype=float)
    return duality_solve(ops, ops.M @ g + boundary_load(ops, h_values))


def boundary_flux(ops: FemOperators, f, g) -> np.ndarray:
    """Discrete ``d_nu f + kappa f`` at the two endpoints, given ``-f'' = g``."""
    r = duality_map(ops, f) - ops.M @ np.asarray(g, dtype=float)
    return r[[0, -1]]


def robin_laplacian_apply(ops: FemOperators, u) -> np.ndarray:
    """``M^-1 (K + kappa*B) u``, the discrete Robin Laplacian ``-Delta``."""
    mlo, md, mup = ops._m_bands
    return scipy.linalg.solve_banded(
        (1, 1), _banded(mlo, md, mup), duality_map(ops, u), check_finite=False
    )


def norm_equivalence_constants(ops: FemOperators) -> tuple[float, float]:
    """Extreme generalised eigenvalues of ``(K + kappa B) v = c (K + M) v``.

    These bound ``|z|_V^2 / ||z||_{H^1}^2`` from below and above on the mesh.
    """
    A = ops.F.toarray()
    S = (ops.K + ops.M).toarray()
    w = scipy.linalg.eigh(A, S, eigvals_only=True)
    return float(w[0]), float(w[-1])


def riesz_constant(ops: FemOperators) -> float:
    """Smallest ``C`` with ``|M u|_{V*} <= C |u|_H`` for every nodal ``u``."""
    if ops.kappa <= 0:
        raise SingularOperatorError("V* norm needs kappa > 0")
    w = scipy.linalg.eigh(ops.M.toarray(), ops.F.toarray(), eigvals_only=True)
    return float(np.sqrt(w[-1]))


def write_matrix_csv(path, matrix) -> None:
    """Dump nonzeros as ``row,col,value`` lines."""
    coo = sp.coo_matrix(matrix if sp.issparse(matrix) else np.atleast_2d(matrix))
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "value"])
        for k in order:
            w.writerow([int(coo.row[k]), int(coo.col[k]), repr(float(coo.data[k]))])
