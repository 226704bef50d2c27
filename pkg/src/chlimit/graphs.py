"""Scalar maximal monotone graphs and their Yosida regularisations.

Every graph ``beta`` is the subdifferential of a convex potential ``hat``.
The functions at module level work elementwise on floats or numpy arrays:

* :func:`resolvent` -- ``J_lam = (I + lam*beta)^-1``
* :func:`yosida` -- ``beta_lam = (r - J_lam(r)) / lam``
* :func:`moreau_yosida` -- the inf-convolution envelope of ``hat``

Graphs are addressed by string ids such as ``"stefan:1,1,1"``; see
:func:`parse_graph`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GraphSpec",
    "Identity",
    "Cubic",
    "Stefan",
    "Porous",
    "Fast",
    "DoubleObstacle",
    "PenroseFife",
    "PiSpec",
    "GraphError",
    "RootFindingError",
    "parse_graph",
    "graph_catalog",
    "hat_beta",
    "resolvent",
    "yosida",
    "yosida_prime",
    "yosida_with_prime",
    "moreau_yosida",
    "beta_interval",
    "pi_eps",
    "pi_eps_prime",
    "hat_pi_eps",
]

_BISECT_WIDTH = 1e-13
_VALUE_WIDTH = 1e-11
_MAX_BISECT = 400
_MAX_POLISH = 5


class GraphError(ValueError):
    """Malformed graph id or parameters."""


class RootFindingError(RuntimeError):
    """Bracketing or bisection failed; for a monotone residual this is a bug."""


@dataclass(frozen=True)
class GraphSpec:
    """Base class of the catalog.

    Subclasses provide the minimal section ``value`` (finite inside the
    domain), its derivative ``slope`` (``inf`` allowed), the potential ``hat``
    and, when available, a closed-form resolvent.
    """

    kind: str = field(init=False, default="")
    domain: tuple[float, float] = field(init=False, default=(-math.inf, math.inf))
    a2_holds: bool = field(init=False, default=True)
    multivalued: bool = field(init=False, default=False)

    # growth constants of hat(r) >= c1 r^2 - c2; meaningful only when a2_holds
    @property
    def c1(self) -> float:
        return 0.0

    @property
    def c2(self) -> float:
        return 0.0

    @property
    def kinks(self) -> tuple[float, ...]:
        """Points of the domain where ``value`` is not continuously differentiable."""
        return ()

    @property
    def id(self) -> str:
        return self.kind

    @property
    def lipschitz(self) -> float:
        return math.inf

    def value(self, s):
        raise NotImplementedError

    def slope(self, s):
        raise NotImplementedError

    def hat(self, r):
        raise NotImplementedError

    def bounds(self, s):
        """Return ``(lo, hi)`` with ``beta(s) = [lo, hi]``; NaN pair when empty."""
        s = np.asarray(s, dtype=float)
        v = self.value(s)
        inside = self.in_domain(s)
        v = np.where(inside, v, np.nan)
        return v, v

    def in_domain(self, s):
        s = np.asarray(s, dtype=float)
        lo, hi = self.domain
        return (s > lo) & (s < hi) | (s == lo) & np.isfinite(lo) & self._closed_lo | (
            s == hi
        ) & np.isfinite(hi) & self._closed_hi

    _closed_lo = True
    _closed_hi = True

    def closed_resolvent(self, lam, r):
        return None

    def closed_yosida(self, lam, r):
        return None

    def closed_yosida_prime(self, lam, r):
        return None

    def bracket(self, lam, r):
        """Interval ``[lo, hi]`` containing the resolvent root of ``r``."""
        r = np.asarray(r, dtype=float)
        lo = np.minimum(r, 0.0) - 1.0
        hi = np.maximum(r, 0.0) + 1.0
        return lo, hi


def _as_float(x):
    return float(x) if np.ndim(x) == 0 else x


@dataclass(frozen=True)
class Identity(GraphSpec):
    kind: str = field(init=False, default="identity")

    c1 = property(lambda self: 0.5)
    lipschitz = property(lambda self: 1.0)

    def value(self, s):
        return np.asarray(s, dtype=float) * 1.0

    def slope(self, s):
        return np.ones_like(np.asarray(s, dtype=float))

    def hat(self, r):
        r = np.asarray(r, dtype=float)
        return 0.5 * r * r

    def closed_resolvent(self, lam, r):
        return np.asarray(r, dtype=float) / (1.0 + lam)

    def closed_yosida(self, lam, r):
        return np.asarray(r, dtype=float) / (1.0 + lam)

    def closed_yosida_prime(self, lam, r):
        return np.full_like(np.asarray(r, dtype=float), 1.0 / (1.0 + lam))


@dataclass(frozen=True)
class Cubic(GraphSpec):
    kind: str = field(init=False, default="cubic")

    # r^4/4 - r^2 + 1 = (r^2/2 - 1)^2 >= 0
    c1 = property(lambda self: 1.0)
    c2 = property(lambda self: 1.0)

    def value(self, s):
        s = np.asarray(s, dtype=float)
        return s * s * s

    def slope(self, s):
        s = np.asarray(s, dtype=float)
        return 3.0 * s * s

    def hat(self, r):
        r = np.asarray(r, dtype=float)
        return 0.25 * r**4


@dataclass(frozen=True)
class Stefan(GraphSpec):
    """Enthalpy-to-temperature map: slope ``k_s`` below 0, flat on ``[0, L]``, slope ``k_l`` above ``L``."""

    k_s: float = 1.0
    L: float = 1.0
    k_l: float = 1.0
    kind: str = field(init=False, default="stefan")

    def __post_init__(self):
        if not (self.k_s > 0 and self.k_l > 0 and self.L >= 0):
            raise GraphError(f"stefan needs k_s>0, L>=0, k_l>0, got {self}")

    @property
    def id(self):
        return f"stefan:{_fmt(self.k_s)},{_fmt(self.L)},{_fmt(self.k_l)}"

    @property
    def c1(self):
        return 0.25 * min(self.k_s, self.k_l)

    @property
    def c2(self):
        return max(self.k_s, self.k_l) * self.L**2

    @property
    def kinks(self):
        return (0.0, self.L)

    @property
    def lipschitz(self):
        return max(self.k_s, self.k_l)

    def value(self, s):
        s = np.asarray(s, dtype=float)
        return np.where(s < 0, self.k_s * s, np.where(s > self.L, self.k_l * (s - self.L), 0.0))

    def slope(self, s):
        s = np.asarray(s, dtype=float)
        # right derivative at the kinks
        return np.where(s < 0, self.k_s, np.where(s >= self.L, self.k_l, 0.0))

    def hat(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(
            r < 0,
            0.5 * self.k_s * r * r,
            np.where(r > self.L, 0.5 * self.k_l * (r - self.L) ** 2, 0.0),
        )

    def closed_resolvent(self, lam, r):
        r = np.asarray(r, dtype=float)
        return np.where(
            r < 0,
            r / (1.0 + lam * self.k_s),
            np.where(r > self.L, (r + lam * self.k_l * self.L) / (1.0 + lam * self.k_l), r),
        )

    def closed_yosida(self, lam, r):
        r = np.asarray(r, dtype=float)
        return np.where(
            r < 0,
            self.k_s * r / (1.0 + lam * self.k_s),
            np.where(r > self.L, self.k_l * (r - self.L) / (1.0 + lam * self.k_l), 0.0),
        )

    def closed_yosida_prime(self, lam, r):
        r = np.asarray(r, dtype=float)
        return np.where(
            r < 0,
            self.k_s / (1.0 + lam * self.k_s),
            np.where(r >= self.L, self.k_l / (1.0 + lam * self.k_l), 0.0),
        )


@dataclass(frozen=True)
class _PowerLaw(GraphSpec):
    """``beta(r) = |r|^(q-1) r`` with potential ``|r|^(q+1)/(q+1)``."""

    q: float = 2.0

    @property
    def id(self):
        return f"{self.kind}:{_fmt(self.q)}"

    @property
    def kinks(self):
        return (0.0,)

    def value(self, s):
        s = np.asarray(s, dtype=float)
        return np.sign(s) * np.abs(s) ** self.q

    def slope(self, s):
        s = np.asarray(s, dtype=float)
        a = np.abs(s)
        with np.errstate(divide="ignore"):
            return np.where(a > 0, self.q * a ** (self.q - 1.0), 0.0 if self.q > 1 else np.inf)

    def hat(self, r):
        r = np.asarray(r, dtype=float)
        return np.abs(r) ** (self.q + 1.0) / (self.q + 1.0)


@dataclass(frozen=True)
class Porous(_PowerLaw):
    kind: str = field(init=False, default="porous")

    def __post_init__(self):
        if not self.q > 1:
            raise GraphError(f"porous exponent must exceed 1, got {self.q}")

    # Young: r^2 <= 2|r|^(q+1)/(q+1) + (q-1)/(q+1)
    c1 = property(lambda self: 0.5)
    c2 = property(lambda self: 0.5 * (self.q - 1.0) / (self.q + 1.0))


@dataclass(frozen=True)
class Fast(_PowerLaw):
    kind: str = field(init=False, default="fast")
    a2_holds: bool = field(init=False, default=False)

    def __post_init__(self):
        if not 0 < self.q < 1:
            raise GraphError(f"fast-diffusion exponent must lie in (0,1), got {self.q}")


@dataclass(frozen=True)
class DoubleObstacle(GraphSpec):
    """Subdifferential of the indicator of ``[lo, hi]``."""

    lo: float = 0.0
    hi: float = 1.0
    kind: str = field(init=False, default="double_obstacle")
    multivalued: bool = field(init=False, default=True)

    def __post_init__(self):
        if not self.lo <= 0.0 <= self.hi or self.lo == self.hi:
            raise GraphError(f"double_obstacle needs lo <= 0 <= hi, lo < hi, got {self}")
        object.__setattr__(self, "domain", (self.lo, self.hi))

    @property
    def id(self):
        return f"double_obstacle:{_fmt(self.lo)},{_fmt(self.hi)}"

    c1 = property(lambda self: 1.0)
    c2 = property(lambda self: max(self.lo**2, self.hi**2))

    @property
    def kinks(self):
        return (self.lo, self.hi)

    def value(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))

    def slope(self, s):
        s = np.asarray(s, dtype=float)
        return np.where((s > self.lo) & (s < self.hi), 0.0, np.inf)

    def hat(self, r):
        r = np.asarray(r, dtype=float)
        return np.where((r >= self.lo) & (r <= self.hi), 0.0, np.inf)

    def bounds(self, s):
        s = np.asarray(s, dtype=float)
        lo = np.where(s == self.hi, 0.0, np.where(s == self.lo, -np.inf, 0.0))
        hi = np.where(s == self.lo, 0.0, np.where(s == self.hi, np.inf, 0.0))
        outside = (s < self.lo) | (s > self.hi)
        return np.where(outside, np.nan, lo), np.where(outside, np.nan, hi)

    def closed_resolvent(self, lam, r):
        return np.clip(np.asarray(r, dtype=float), self.lo, self.hi)

    def closed_yosida(self, lam, r):
        r = np.asarray(r, dtype=float)
        return (r - np.clip(r, self.lo, self.hi)) / lam

    def closed_yosida_prime(self, lam, r):
        r = np.asarray(r, dtype=float)
        return np.where((r >= self.lo) & (r < self.hi), 0.0, 1.0 / lam)


@dataclass(frozen=True)
class PenroseFife(GraphSpec):
    """``beta(r) = -1/r`` on ``(0, inf)`` with potential ``-ln r`` (zero at ``r = 1``).

    Outside the standing normalisation ``hat(0) = 0``: 0 is not in the domain.
    """

    kind: str = field(init=False, default="penrose_fife")
    domain: tuple[float, float] = field(init=False, default=(0.0, math.inf))
    a2_holds: bool = field(init=False, default=False)
    _closed_lo = False

    def value(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return np.where(s > 0, -1.0 / s, np.nan)

    def slope(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return np.where(s > 0, 1.0 / (s * s), np.nan)

    def hat(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return np.where(r > 0, -np.log(np.where(r > 0, r, 1.0)), np.inf)

    def bracket(self, lam, r):
        r = np.asarray(r, dtype=float)
        # s - lam/s is negative as s -> 0+ and positive at max(r, 0) + 1 + lam
        lo = np.full_like(r, 1e-300)
        hi = np.maximum(r, 0.0) + 1.0 + lam
        return lo, hi


def _fmt(x: float) -> str:
    return repr(float(x)).rstrip("0").rstrip(".") if float(x) != int(x) else str(int(x))


_SIMPLE = {"identity": Identity, "cubic": Cubic, "penrose_fife": PenroseFife}
_PARAM = {"stefan": (Stefan, 3), "porous": (Porous, 1), "fast": (Fast, 1), "double_obstacle": (DoubleObstacle, 2)}


def parse_graph(text: str) -> GraphSpec:
    """Build a graph from its catalog id, e.g. ``"porous:2"`` or ``"double_obstacle:0,1"``."""
    text = text.strip()
    name, _, args = text.partition(":")
    name = name.strip().lower()
    if name in _SIMPLE:
        if args:
            raise GraphError(f"graph '{name}' takes no parameters")
        return _SIMPLE[name]()
    if name not in _PARAM:
        known = ", ".join(sorted([*_SIMPLE, *_PARAM]))
        raise GraphError(f"unknown graph '{name}'; known graphs: {known}")
    cls, nargs = _PARAM[name]
    try:
        values = [float(a) for a in args.split(",")] if args else []
    except ValueError as exc:
        raise GraphError(f"non-numeric parameter in '{text}'") from exc
    if len(values) != nargs:
        raise GraphError(f"graph '{name}' expects {nargs} parameter(s), got {len(values)}")
    return cls(*values)


def graph_catalog() -> dict[str, GraphSpec]:
    """Representative instance of every catalog kind."""
    return {
        "identity": Identity(),
        "cubic": Cubic(),
        "stefan": Stefan(1.0, 1.0, 1.0),
        "porous": Porous(2.0),
        "fast": Fast(0.5),
        "double_obstacle": DoubleObstacle(0.0, 1.0),
        "penrose_fife": PenroseFife(),
    }


def hat_beta(spec: GraphSpec, r):
    """Convex potential, ``+inf`` outside the closed domain."""
    return _as_float(spec.hat(r))


def beta_interval(spec: GraphSpec, s):
    """The set ``beta(s)`` as a closed interval ``(lo, hi)``; NaNs when empty."""
    lo, hi = spec.bounds(s)
    return _as_float(lo), _as_float(hi)


def _root(spec: GraphSpec, lam: float, r):
    """Solve ``s + lam*value(s) = r`` elementwise by bisection plus Newton polish."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    lo, hi = spec.bracket(lam, r)
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)

    def phi(s):
        return s + lam * spec.value(s) - r

    # monotone expansion until the bracket is valid
    for _ in range(200):
        bad_lo = phi(lo) > 0
        bad_hi = phi(hi) < 0
        if not (bad_lo.any() or bad_hi.any()):
            break
        width = hi - lo
        lo = np.where(bad_lo, lo - 2 * width, lo)
        hi = np.where(bad_hi, hi + 2 * width, hi)
        lo = np.maximum(lo, spec.domain[0] if np.isfinite(spec.domain[0]) else -np.inf)
    else:
        raise RootFindingError(f"could not bracket resolvent root for {spec.id}")

    tol = _BISECT_WIDTH * np.maximum(1.0, np.abs(r))
    for _ in range(_MAX_BISECT):
        mid = 0.5 * (lo + hi)
        # steep branches (fast diffusion near 0) also need the values to agree
        vlo, vhi = spec.value(lo), spec.value(hi)
        vtol = _VALUE_WIDTH * np.maximum(1.0, np.abs(spec.value(mid)))
        active = ((hi - lo > tol) | (vhi - vlo > vtol)) & (mid != lo) & (mid != hi)
        if not active.any():
            break
        up = phi(mid) > 0
        hi = np.where(active & up, mid, hi)
        lo = np.where(active & ~up, mid, lo)
    else:
        raise RootFindingError(f"bisection did not reach width {_BISECT_WIDTH} for {spec.id}")

    s = 0.5 * (lo + hi)
    res = phi(s)
    for _ in range(_MAX_POLISH):
        d = 1.0 + lam * spec.slope(s)
        with np.errstate(invalid="ignore", divide="ignore"):
            trial = s - res / d
        ok = np.isfinite(trial) & (trial >= lo) & (trial <= hi)
        trial = np.where(ok, trial, s)
        tres = phi(trial)
        better = np.abs(tres) < np.abs(res)
        s = np.where(better, trial, s)
        res = np.where(better, tres, res)
        if not better.any():
            break
    return s


def _check_lam(lam):
    if not lam > 0:
        raise GraphError(f"lambda must be positive, got {lam}")


def _resolvent(spec, lam, r):
    out = spec.closed_resolvent(lam, r)
    if out is None:
        shape = np.shape(r)
        out = _root(spec, lam, r).reshape(shape)
    return np.asarray(out, dtype=float)


def resolvent(spec: GraphSpec, lam: float, r):
    """``J_lam(r)``: the unique ``s`` with ``r - s in lam * beta(s)``."""
    _check_lam(lam)
    return _as_float(_resolvent(spec, lam, r))


def _yosida_from(spec, lam, r, s):
    out = spec.closed_yosida(lam, r)
    if out is not None:
        return np.asarray(out, dtype=float)
    # beta(J) is exact for single-valued graphs and avoids (r - J)/lam cancellation
    return np.asarray(spec.value(s), dtype=float)


def yosida(spec: GraphSpec, lam: float, r):
    """Yosida approximation ``beta_lam(r) = (r - J_lam(r)) / lam``."""
    _check_lam(lam)
    s = _resolvent(spec, lam, r)
    return _as_float(_yosida_from(spec, lam, r, s))


def _prime_from(spec, lam, r, s):
    out = spec.closed_yosida_prime(lam, r)
    if out is not None:
        return np.asarray(out, dtype=float)
    b = np.asarray(spec.slope(s), dtype=float)
    with np.errstate(invalid="ignore"):
        return np.where(np.isinf(b), 1.0 / lam, b / (1.0 + lam * b))


def yosida_prime(spec: GraphSpec, lam: float, r):
    """Derivative of ``beta_lam``; right derivative where ``beta_lam`` has a kink."""
    _check_lam(lam)
    r = np.asarray(r, dtype=float)
    s = _resolvent(spec, lam, r)
    return _as_float(_prime_from(spec, lam, r, s))


def yosida_with_prime(spec: GraphSpec, lam: float, r):
    """``(beta_lam(r), beta_lam'(r))`` sharing one resolvent evaluation."""
    _check_lam(lam)
    r = np.asarray(r, dtype=float)
    s = _resolvent(spec, lam, r)
    return _yosida_from(spec, lam, r, s), _prime_from(spec, lam, r, s)


def moreau_yosida(spec: GraphSpec, lam: float, r):
    """Moreau-Yosida envelope ``|r - J|^2/(2 lam) + hat(J)``, finite everywhere."""
    _check_lam(lam)
    r = np.asarray(r, dtype=float)
    s = _resolvent(spec, lam, r)
    y = _yosida_from(spec, lam, r, s)
    return _as_float(0.5 * lam * y * y + spec.hat(s))


@dataclass(frozen=True)
class PiSpec:
    """Anti-monotone perturbation ``pi_eps(r) = -c3 * sigma(eps) * r``."""

    sigma_kind: str = "sqrt"
    c3: float = 1.0

    def __post_init__(self):
        if self.sigma_kind not in ("sqrt", "linear"):
            raise GraphError(f"sigma_kind must be 'sqrt' or 'linear', got {self.sigma_kind!r}")
        if not self.c3 > 0:
            raise GraphError("c3 must be positive")

    def sigma(self, eps: float) -> float:
        return math.sqrt(eps) if self.sigma_kind == "sqrt" else float(eps)


def _check_eps(eps):
    if not 0 < eps <= 1:
        raise GraphError(f"eps must lie in (0, 1], got {eps}")


def pi_eps(spec: PiSpec, eps: float, r):
    _check_eps(eps)
    return _as_float(-spec.c3 * spec.sigma(eps) * np.asarray(r, dtype=float))


def pi_eps_prime(spec: PiSpec, eps: float) -> float:
    _check_eps(eps)
    return -spec.c3 * spec.sigma(eps)


def hat_pi_eps(spec: PiSpec, eps: float, r):
    """Primitive of :func:`pi_eps` vanishing at 0."""
    _check_eps(eps)
    r = np.asarray(r, dtype=float)
    return _as_float(-0.5 * spec.c3 * spec.sigma(eps) * r * r)
