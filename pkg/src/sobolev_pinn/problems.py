"""PDE instances and toy regression targets.

Each problem carries its domain, coefficients, the residual operator with the
extra partials needed for Sobolev-type residual terms, initial and boundary
data, and (where one exists) a closed-form exact jet.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from . import reference
from .autodiff import multiindex as mi
from .autodiff.jet import JetValue
from .autodiff.multiindex import SumIndex, UnsupportedOrderError

KINDS = ("heat", "burgers", "fokker_planck", "poisson", "toy")


@dataclass(frozen=True)
class ProblemDef:
    name: str
    kind: str
    axes: tuple[str, ...]
    space_lo: tuple[float, ...]
    space_hi: tuple[float, ...]
    T: float | None = None
    vmax: float | None = None
    nu: float = 0.0
    beta: float = 0.0
    q_diff: float = 0.0
    k_freq: float = 1.0
    initial: str | None = None
    boundary: str = "dirichlet"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.T is not None and self.T <= 0:
            raise ValueError("T must be positive")
        if len(self.space_lo) != len(self.space_hi) or any(
            lo >= hi for lo, hi in zip(self.space_lo, self.space_hi)
        ):
            raise ValueError("spatial box must be nonempty")
        if self.kind == "fokker_planck" and (self.vmax != 5.0 or self.space_lo != (0.0,) or self.space_hi != (1.0,)):
            raise ValueError("Fokker-Planck instances live on x in [0,1], v in [-5,5]")

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def time_dependent(self) -> bool:
        return self.T is not None

    @property
    def space_dim(self) -> int:
        return len(self.space_lo)

    @property
    def omega_measure(self) -> float:
        """|Omega|, including the velocity interval for kinetic problems."""
        m = float(np.prod(np.subtract(self.space_hi, self.space_lo)))
        return m * 2.0 * self.vmax if self.vmax else m

    @property
    def boundary_measure(self) -> float:
        """|dOmega|: endpoint count in 1-D, face area of the unit cube, or the v-interval for periodic x."""
        if self.boundary == "periodic":
            return 2.0 * self.vmax
        if self.space_dim == 1:
            return 2.0
        widths = np.subtract(self.space_hi, self.space_lo)
        return float(sum(2.0 * np.prod(np.delete(widths, i)) for i in range(self.space_dim)))

    def index(self, spec: str) -> mi.MultiIndex:
        return mi.parse(spec, self.axes)


@dataclass(frozen=True)
class ToyTarget:
    family: str
    k: float

    def __post_init__(self):
        if self.family not in ("sin", "relu"):
            raise ValueError(f"unknown toy family {self.family!r}")
        if not self.k > 0:
            raise ValueError("k must be positive")

    @property
    def domain(self) -> tuple[float, float]:
        return (0.0, 2.0 * math.pi) if self.family == "sin" else (-1.0, 1.0)

    def derivative(self, x, n: int = 0) -> np.ndarray:
        """y^(n)(x). For relu, y'(0) = 0 and y'' = 0 everywhere."""
        x = np.asarray(x, dtype=np.float64)
        if self.family == "sin":
            return self.k ** n * _sin_derivative(self.k * x, n)
        if n == 0:
            return np.maximum(0.0, self.k * x)
        if n == 1:
            return np.where(x > 0, self.k, 0.0)
        return np.zeros_like(x)

    def y(self, x):
        return self.derivative(x, 0)

    def dy(self, x):
        return self.derivative(x, 1)

    def d2y(self, x):
        return self.derivative(x, 2)

    def points(self, n: int = 100) -> np.ndarray:
        return np.linspace(*self.domain, n)


def _sin_derivative(theta, n: int):
    r = n % 4
    if r == 0:
        return np.sin(theta)
    if r == 1:
        return np.cos(theta)
    if r == 2:
        return -np.sin(theta)
    return -np.cos(theta)


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------

CATALOG_EXAMPLES = (
    "heat", "burgers", "fp-f1", "fp-f2",
    "poisson-d{d}-k{k}", "toy-sin-k{k}", "toy-relu-k{k}",
)


def heat() -> ProblemDef:
    return ProblemDef("heat", "heat", ("t", "x"), (0.0,), (math.pi,), T=10.0, initial="sin")


def burgers(nu: float = 0.2) -> ProblemDef:
    return ProblemDef("burgers", "burgers", ("t", "x"), (0.0,), (1.0,), T=0.01, nu=nu, initial="-sin(pi x)")


def fokker_planck(initial: str = "f2") -> ProblemDef:
    if initial not in ("f1", "f2"):
        raise ValueError(f"unknown Fokker-Planck initial datum {initial!r}")
    return ProblemDef(
        f"fp-{initial}", "fokker_planck", ("t", "x", "v"), (0.0,), (1.0,),
        T=3.0, vmax=5.0, beta=0.1, q_diff=0.1, initial=initial, boundary="periodic",
    )


def poisson(d: int, k_freq: int = 1) -> ProblemDef:
    if d < 1:
        raise ValueError("dimension must be positive")
    axes = tuple(f"x{i + 1}" for i in range(d))
    return ProblemDef(f"poisson-d{d}-k{k_freq}", "poisson", axes, (0.0,) * d, (1.0,) * d, k_freq=float(k_freq))


def toy(family: str, k: float) -> tuple[ProblemDef, ToyTarget]:
    target = ToyTarget(family, k)
    lo, hi = target.domain
    return ProblemDef(f"toy-{family}-k{k:g}", "toy", ("x",), (lo,), (hi,), k_freq=float(k)), target


def get_problem(name: str) -> ProblemDef:
    """Look a problem up by catalog name ('heat', 'poisson-d10-k1', 'toy-sin-k3', ...)."""
    name = name.strip().lower()
    if name == "heat":
        return heat()
    if name == "burgers":
        return burgers()
    if name in ("fp-f1", "fp-f2"):
        return fokker_planck(name[3:])
    m = re.fullmatch(r"poisson-d(\d+)-k(\d+)", name)
    if m:
        return poisson(int(m.group(1)), int(m.group(2)))
    m = re.fullmatch(r"toy-(sin|relu)-k(\d+(?:\.\d+)?)", name)
    if m:
        return toy(m.group(1), float(m.group(2)))[0]
    raise KeyError(f"unknown problem {name!r}; catalog: {', '.join(CATALOG_EXAMPLES)}")


def toy_target(problem: ProblemDef) -> ToyTarget:
    if problem.kind != "toy":
        raise ValueError(f"{problem.name} is not a regression target")
    return ToyTarget(problem.name.split("-")[1], problem.k_freq)


# ---------------------------------------------------------------------------
# residual operators
# ---------------------------------------------------------------------------

def _get(jet, problem, spec):
    key = problem.index(spec)
    if key not in jet:
        raise KeyError(f"{problem.kind} residual needs u_{spec or '0'}; jet lacks it")
    return jet[key]


def _lap_grad(jet, i: int, d: int):
    s = SumIndex.laplacian_grad(i, d)
    if s in jet:
        return jet[s]
    missing = [m for m in s.members if m not in jet]
    if missing:
        raise KeyError(f"Poisson residual derivative needs {s} or its members; jet lacks {missing[:3]}")
    total = jet[s.members[0]]
    for m in s.members[1:]:
        total = total + jet[m]
    return total


def poisson_source(problem: ProblemDef, x) -> np.ndarray:
    k = problem.k_freq
    return (k * np.pi) ** 2 / 4.0 * np.sum(np.sin(k * np.pi * np.asarray(x) / 2.0), axis=-1)


def residual_request(problem: ProblemDef) -> list:
    p = problem.index
    if problem.kind == "heat":
        return [p("t"), p("xx")]
    if problem.kind == "burgers":
        return [p(""), p("t"), p("x"), p("xx")]
    if problem.kind == "fokker_planck":
        return [p(""), p("t"), p("x"), p("v"), p("vv")]
    if problem.kind == "poisson":
        return [mi.unit(i, problem.dim, 2) for i in range(problem.dim)]
    raise ValueError(f"{problem.kind} has no PDE residual")


def residual(problem: ProblemDef, jet, points):
    """P u - f at each point; entries may be arrays or tape handles."""
    g = lambda s: _get(jet, problem, s)
    if problem.kind == "heat":
        return g("t") - g("xx")
    if problem.kind == "burgers":
        return g("t") + g("") * g("x") - problem.nu * g("xx")
    if problem.kind == "fokker_planck":
        v = np.asarray(points)[..., 2]
        return g("t") + v * g("x") - problem.beta * (g("") + v * g("v")) - problem.q_diff * g("vv")
    if problem.kind == "poisson":
        lap = jet[mi.unit(0, problem.dim, 2)]
        for i in range(1, problem.dim):
            lap = lap + jet[mi.unit(i, problem.dim, 2)]
        return -1.0 * lap - poisson_source(problem, points)
    raise ValueError(f"{problem.kind} has no PDE residual")


def residual_time_request(problem: ProblemDef) -> list:
    p = problem.index
    if problem.kind == "heat":
        return [p("tt"), p("xxt")]
    if problem.kind == "burgers":
        return [p(""), p("t"), p("x"), p("tt"), p("xt"), p("xxt")]
    raise UnsupportedOrderError(f"no residual time derivative for {problem.kind}")


def residual_time_derivative(problem: ProblemDef, jet, points):
    g = lambda s: _get(jet, problem, s)
    if problem.kind == "heat":
        return g("tt") - g("xxt")
    if problem.kind == "burgers":
        return g("tt") + g("t") * g("x") + g("") * g("xt") - problem.nu * g("xxt")
    raise UnsupportedOrderError(f"no residual time derivative for {problem.kind}")


def residual_space_request(problem: ProblemDef) -> list:
    p = problem.index
    if problem.kind == "fokker_planck":
        return [p(s) for s in ("x", "v", "tx", "xx", "xv", "vv", "xvv", "tv", "vvv")]
    if problem.kind == "poisson":
        return [SumIndex.laplacian_grad(i, problem.dim) for i in range(problem.dim)]
    raise UnsupportedOrderError(f"no residual space derivatives for {problem.kind}")


def residual_space_derivatives(problem: ProblemDef, jet, points) -> list:
    """[d residual / d y for each non-time coordinate y]."""
    g = lambda s: _get(jet, problem, s)
    if problem.kind == "fokker_planck":
        v = np.asarray(points)[..., 2]
        beta, q = problem.beta, problem.q_diff
        rx = g("tx") + v * g("xx") - beta * (g("x") + v * g("xv")) - q * g("xvv")
        rv = g("tv") + g("x") + v * g("xv") - beta * (2.0 * g("v") + v * g("vv")) - q * g("vvv")
        return [rx, rv]
    if problem.kind == "poisson":
        k = problem.k_freq
        x = np.asarray(points)
        out = []
        for i in range(problem.dim):
            df = (k * np.pi) ** 3 / 8.0 * np.cos(k * np.pi * x[..., i] / 2.0)
            out.append(-1.0 * _lap_grad(jet, i, problem.dim) - df)
        return out
    raise UnsupportedOrderError(f"no residual space derivatives for {problem.kind}")


# ---------------------------------------------------------------------------
# initial and boundary data
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def fp_normalizer(vmax: float = 5.0) -> float:
    """int_{-V}^{V} exp(-v^2) dv by adaptive quadrature."""
    value, _ = integrate.quad(lambda v: math.exp(-v * v), -vmax, vmax, epsabs=0.0, epsrel=1e-13, limit=200)
    return value


def _gauss_derivative(v, n: int):
    # d^n/dv^n exp(-v^2) = (-1)^n H_n(v) exp(-v^2), physicists' Hermite H_n
    e = np.exp(-v * v)
    if n == 0:
        return e
    if n == 1:
        return -2.0 * v * e
    if n == 2:
        return (4.0 * v * v - 2.0) * e
    raise UnsupportedOrderError("initial data derivatives above order 2 are not provided")


def initial_data(problem: ProblemDef, y, order=None) -> np.ndarray:
    """D^alpha g at spatial points y, shape (N, d_space) or a scalar for 1-D.

    ``order`` is a multi-index over the non-time axes (total order <= 2).
    """
    y = np.asarray(y, dtype=np.float64)
    nsp = problem.dim - (1 if problem.time_dependent else 0)
    if order is None:
        order = (0,) * nsp
    order = tuple(order)
    if len(order) != nsp:
        raise ValueError(f"initial-data order {order} needs {nsp} entries")
    if sum(order) > 2:
        raise UnsupportedOrderError(f"initial-data derivative order {sum(order)} exceeds 2")
    if problem.kind == "heat":
        return _sin_derivative(y, order[0])
    if problem.kind == "burgers":
        n = order[0]
        return -(np.pi ** n) * _sin_derivative(np.pi * y, n)
    if problem.kind == "fokker_planck":
        x, v = y[..., 0], y[..., 1]
        a, b = order
        if problem.initial == "f1":
            xpart = np.ones_like(x) if a == 0 else np.zeros_like(x)
        else:
            w = 2.0 * np.pi
            xpart = 1.0 + np.cos(w * x) if a == 0 else w ** a * _cos_derivative(w * x, a)
        return xpart * _gauss_derivative(v, b) / fp_normalizer(problem.vmax)
    raise ValueError(f"{problem.kind} has no initial data")


def _cos_derivative(theta, n: int):
    return _sin_derivative(theta, n + 1)


def boundary_value(problem: ProblemDef, points) -> np.ndarray:
    """Dirichlet data h at boundary points."""
    points = np.asarray(points, dtype=np.float64)
    if problem.kind in ("heat", "burgers"):
        return np.zeros(points.shape[0])
    if problem.kind == "poisson":
        return reference.poisson_exact(points, problem.k_freq)
    raise ValueError(f"{problem.kind} has no Dirichlet data")


def boundary_gradient(problem: ProblemDef, points) -> list[np.ndarray]:
    """Gradient of the Dirichlet extension used by first-order boundary terms (Poisson only)."""
    if problem.kind != "poisson":
        raise UnsupportedOrderError(f"first-order boundary data not defined for {problem.kind}")
    k = problem.k_freq
    x = np.asarray(points, dtype=np.float64)
    return [k * np.pi / 2.0 * np.cos(k * np.pi * x[:, i] / 2.0) for i in range(problem.dim)]


# ---------------------------------------------------------------------------
# exact jets
# ---------------------------------------------------------------------------

def has_closed_form(problem: ProblemDef) -> bool:
    return problem.kind in ("heat", "burgers", "poisson", "toy")


def exact_partial(problem: ProblemDef, points, alpha) -> np.ndarray:
    """D^alpha of the exact solution at (N, dim) points, order <= 3."""
    points = np.asarray(points, dtype=np.float64)
    if isinstance(alpha, SumIndex):
        return sum(exact_partial(problem, points, m) for m in alpha.members)
    alpha = mi.validate(alpha, problem.dim)
    if problem.kind == "heat":
        a, b = alpha
        return (-1.0) ** a * _sin_derivative(points[:, 1], b) * np.exp(-points[:, 0])
    if problem.kind == "burgers":
        return _burgers_cached(problem, points)[alpha]
    if problem.kind == "poisson":
        nz = [i for i, a in enumerate(alpha) if a]
        k = problem.k_freq
        if not nz:
            return reference.poisson_exact(points, k)
        if len(nz) > 1:
            return np.zeros(points.shape[0])
        i, n = nz[0], alpha[nz[0]]
        w = k * np.pi / 2.0
        return w ** n * _sin_derivative(w * points[:, i], n)
    if problem.kind == "toy":
        return toy_target(problem).derivative(points[:, 0], alpha[0])
    raise ValueError(f"{problem.name} has no closed-form solution; use a reference grid")


_BURGERS_CACHE: dict = {}


def _burgers_cached(problem, points):
    key = (problem.nu, points.tobytes())
    if key not in _BURGERS_CACHE:
        if len(_BURGERS_CACHE) > 8:
            _BURGERS_CACHE.clear()
        _BURGERS_CACHE[key] = reference.burgers_jet(points[:, 0], points[:, 1], nu=problem.nu, order=3)
    return _BURGERS_CACHE[key]


def exact_jet(problem: ProblemDef, points, request) -> JetValue:
    req = list(request)
    if mi.zero(problem.dim) not in req:
        req.insert(0, mi.zero(problem.dim))
    return JetValue({a: exact_partial(problem, points, a) for a in req}, problem.axes)


def exact_value(problem: ProblemDef, points) -> np.ndarray:
    return exact_partial(problem, points, mi.zero(problem.dim))
