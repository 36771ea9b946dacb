"""Sobolev-type loss functionals and their Monte-Carlo discretizations.

Every loss is a weighted sum of squared residual-type quantities at sample
points. Fields supply jets (value plus partials) as plain arrays or as tape
handles, so the same code evaluates a loss and records it for gradients.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Protocol

import numpy as np

from . import problems as P
from .autodiff import JetValue, forward_jet, sum_squares
from .autodiff import multiindex as mi
from .autodiff.multiindex import UnsupportedOrderError
from .problems import ProblemDef, ToyTarget


@dataclass(frozen=True)
class SobolevOrders:
    """Derivative orders of a W^{k,p}-in-time, W^{l,q}-in-space(, W^{m,r}-in-velocity) term."""

    k: int = 0
    p: int = 2
    l: int = 0
    q: int = 2
    m_v: int | None = None
    r_v: int | None = None

    def __post_init__(self):
        for name in ("k", "l", "m_v"):
            val = getattr(self, name)
            if val is not None and val not in (0, 1, 2):
                raise ValueError(f"{name} must be 0, 1 or 2; got {val}")
        for name in ("p", "q", "r_v"):
            val = getattr(self, name)
            if val is not None and val != 2:
                raise ValueError(f"only exponent 2 is supported; {name}={val}")
        if (self.m_v is None) != (self.r_v is None):
            raise ValueError("velocity orders come as a pair")

    @property
    def v(self) -> int:
        return self.m_v or 0


def O(*args) -> SobolevOrders:
    """Orders from the flat tuple notation: (k,p,l,q[,m,r]) for GE/BC, (l,q[,m,r]) for IC."""
    if len(args) == 2:
        return SobolevOrders(l=args[0], q=args[1])
    if len(args) == 4:
        return SobolevOrders(*args)
    if len(args) == 6:
        return SobolevOrders(*args)
    raise ValueError(f"orders tuple of length {len(args)}")


def _ic(*args) -> SobolevOrders:
    if len(args) == 2:
        return SobolevOrders(l=args[0], q=args[1])
    return SobolevOrders(l=args[0], q=args[1], m_v=args[2], r_v=args[3])


FAMILY_KINDS = {
    "hb": ("heat", "burgers"),
    "fp": ("fokker_planck",),
    "po": ("poisson",),
    "toy": ("toy",),
}


@dataclass(frozen=True)
class LossVariant:
    tag: str
    family: str
    ge: SobolevOrders | None = None
    ic: SobolevOrders | None = None
    bc: SobolevOrders | None = None
    toy_order: int | None = None

    def compatible(self, problem: ProblemDef) -> bool:
        return problem.kind in FAMILY_KINDS[self.family]


VARIANTS: dict[str, LossVariant] = {
    "hb0": LossVariant("HB0", "hb", O(0, 2, 0, 2), _ic(0, 2), O(0, 2, 0, 2)),
    "hb1": LossVariant("HB1", "hb", O(0, 2, 0, 2), _ic(1, 2), O(0, 2, 0, 2)),
    "hb2": LossVariant("HB2", "hb", O(1, 2, 0, 2), _ic(2, 2), O(0, 2, 0, 2)),
    "fp0": LossVariant("FP0", "fp", O(0, 2, 0, 2, 0, 2), _ic(0, 2, 0, 2), O(0, 2, 0, 2, 0, 2)),
    "fp1": LossVariant("FP1", "fp", O(0, 2, 1, 2, 1, 2), _ic(1, 2, 1, 2), O(0, 2, 0, 2, 0, 2)),
    # Poisson has no time axis: the pair (l, q) is spatial
    "po0": LossVariant("PO0", "po", O(0, 2), None, O(0, 2)),
    "po1": LossVariant("PO1", "po", O(1, 2), None, O(0, 2)),
    "po2": LossVariant("PO2", "po", O(1, 2), None, O(1, 2)),
    "toy_l2": LossVariant("TOY_L2", "toy", toy_order=0),
    "toy_h1": LossVariant("TOY_H1", "toy", toy_order=1),
    "toy_h2": LossVariant("TOY_H2", "toy", toy_order=2),
}

FAMILIES = {
    "hb": ("hb0", "hb1", "hb2"),
    "fp": ("fp0", "fp1"),
    "po": ("po0", "po1", "po2"),
    "toy": ("toy_l2", "toy_h1", "toy_h2"),
}


def get_variant(name: str) -> LossVariant:
    key = name.strip().lower()
    key = {"l2": "toy_l2", "h1": "toy_h1", "h2": "toy_h2"}.get(key, key)
    if key not in VARIANTS:
        raise KeyError(f"unknown loss variant {name!r}; choose from {', '.join(VARIANTS)}")
    return VARIANTS[key]


def default_variant_for(problem: ProblemDef, level: int = 0) -> LossVariant:
    family = next(f for f, kinds in FAMILY_KINDS.items() if problem.kind in kinds)
    return VARIANTS[FAMILIES[family][level]]


# ---------------------------------------------------------------------------
# sample batches and fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SampleBatch:
    """Sample points with the domain measures that turn sums into Monte-Carlo integrals.

    ``boundary`` holds Dirichlet points, or the x=0 side of periodic pairs with
    ``boundary_right`` the matching x=1 points.
    """

    interior: np.ndarray
    interior_measure: float
    initial: np.ndarray | None = None
    initial_measure: float = 0.0
    boundary: np.ndarray | None = None
    boundary_measure: float = 0.0
    boundary_right: np.ndarray | None = None
    counts: dict = dc_field(default_factory=dict)

    @property
    def w_ge(self) -> float:
        return self.interior_measure / len(self.interior)

    @property
    def w_ic(self) -> float:
        return self.initial_measure / len(self.initial)

    @property
    def w_bc(self) -> float:
        return self.boundary_measure / len(self.boundary)


class Field(Protocol):
    def jet(self, points: np.ndarray, request) -> JetValue: ...


class NetworkField:
    """The network u_nn; with params registered on a tape the jets are tape handles."""

    def __init__(self, params, tape=None, axes=None):
        self.params = params
        self.tape = tape
        self.axes = axes

    def jet(self, points, request) -> JetValue:
        return forward_jet(self.params, points, request, tape=self.tape, axes=self.axes)


class ExactField:
    """Closed-form exact solution of a catalog problem."""

    def __init__(self, problem: ProblemDef):
        if not P.has_closed_form(problem):
            raise ValueError(f"{problem.name} has no closed-form solution")
        self.problem = problem

    def jet(self, points, request) -> JetValue:
        return P.exact_jet(self.problem, points, request)


class FunctionField:
    """Any field given by a partial-derivative evaluator ``partial(points, alpha) -> array``."""

    def __init__(self, partial: Callable, axes=None):
        self.partial = partial
        self.axes = axes

    def jet(self, points, request) -> JetValue:
        points = np.asarray(points, dtype=np.float64)
        req = list(request)
        zero = mi.zero(points.shape[1])
        if zero not in req:
            req.insert(0, zero)
        entries = {}
        for a in req:
            if isinstance(a, mi.SumIndex):
                entries[a] = sum(np.asarray(self.partial(points, m), dtype=np.float64) for m in a.members)
            else:
                entries[a] = np.broadcast_to(
                    np.asarray(self.partial(points, tuple(a)), dtype=np.float64), (len(points),)
                ).copy()
        return JetValue(entries, self.axes)


def _accumulate(terms):
    total = None
    for t in terms:
        total = t if total is None else total + t
    return total


# ---------------------------------------------------------------------------
# loss terms
# ---------------------------------------------------------------------------

def loss_ge(field, problem: ProblemDef, batch: SampleBatch, orders: SobolevOrders):
    """Weighted sum over interior samples of |r|^2 plus the requested residual derivatives squared.

    A first time derivative enters per sample as |d_t r|^2; first spatial and
    velocity derivatives as |d_x r|^2, |d_v r|^2 (or |d_i r|^2 per axis for
    Poisson), without mixed terms.
    """
    k, l, m = orders.k, orders.l, orders.v
    if max(k, l, m) > 1:
        raise UnsupportedOrderError("residual derivatives above first order would need jets beyond order 3")
    if k and problem.kind not in ("heat", "burgers"):
        raise UnsupportedOrderError(f"no residual time derivative for {problem.kind}")
    if (l or m) and problem.kind not in ("fokker_planck", "poisson"):
        raise UnsupportedOrderError(f"no residual space derivatives for {problem.kind}")
    if m and problem.kind != "fokker_planck":
        raise UnsupportedOrderError("velocity orders apply to kinetic problems only")
    request = list(P.residual_request(problem))
    if k:
        request += P.residual_time_request(problem)
    if l or m:
        request += P.residual_space_request(problem)
    pts = batch.interior
    jet = field.jet(pts, request)
    terms = [sum_squares(P.residual(problem, jet, pts))]
    if k:
        terms.append(sum_squares(P.residual_time_derivative(problem, jet, pts)))
    if l or m:
        derivs = P.residual_space_derivatives(problem, jet, pts)
        if problem.kind == "fokker_planck":
            derivs = ([derivs[0]] if l else []) + ([derivs[1]] if m else [])
        terms.extend(sum_squares(d) for d in derivs)
    return _accumulate(terms) * batch.w_ge


def _ic_indices(problem: ProblemDef, orders: SobolevOrders) -> list[tuple]:
    nsp = problem.dim - 1
    out = [(0,) * nsp]
    for a in range(1, orders.l + 1):
        out.append(mi.unit(0, nsp, a))
    if nsp > 1:
        for b in range(1, orders.v + 1):
            out.append(mi.unit(1, nsp, b))
    elif orders.v:
        raise UnsupportedOrderError("velocity orders apply to kinetic problems only")
    return out


def loss_ic(field, problem: ProblemDef, batch: SampleBatch, orders: SobolevOrders):
    """Weighted sum over initial samples of |D^a u(0, .) - D^a g|^2, |a| <= l (per axis for x, v)."""
    if not problem.time_dependent:
        raise ValueError(f"{problem.name} has no initial condition")
    spatial = _ic_indices(problem, orders)
    full = [(0,) + a for a in spatial]
    pts = batch.initial
    jet = field.jet(pts, full)
    y = pts[:, 1:] if problem.dim > 2 else pts[:, 1]
    terms = [sum_squares(jet[f] - P.initial_data(problem, y, a)) for f, a in zip(full, spatial)]
    return _accumulate(terms) * batch.w_ic


PERIODIC_INDICES = ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1))


def loss_bc(field, problem: ProblemDef, batch: SampleBatch, orders: SobolevOrders):
    """Dirichlet mismatch (with optional first time/space derivatives) or periodic matching.

    Periodic matching compares u, u_t, u_x, u_v at x=1 against x=0 regardless
    of ``orders``, which must then be all zero.
    """
    if problem.boundary == "periodic":
        if orders.k or orders.l or orders.v:
            raise UnsupportedOrderError("periodic matching uses the fixed set |alpha| <= 1")
        left = field.jet(batch.boundary, PERIODIC_INDICES)
        right = field.jet(batch.boundary_right, PERIODIC_INDICES)
        terms = [sum_squares(right[a] - left[a]) for a in PERIODIC_INDICES]
        return _accumulate(terms) * batch.w_bc

    pts = batch.boundary
    d = problem.dim
    if orders.k > 1 or orders.l > 1:
        raise UnsupportedOrderError("boundary derivative orders above 1 are not provided")
    if orders.k and not problem.time_dependent:
        raise UnsupportedOrderError(f"{problem.name} has no time axis")
    if orders.l and problem.kind != "poisson":
        raise UnsupportedOrderError(f"first-order boundary data not defined for {problem.kind}")
    request = [mi.zero(d)]
    if orders.k:
        request.append(mi.unit(0, d))
    if orders.l:
        request += [mi.unit(i, d) for i in range(d)]
    jet = field.jet(pts, request)
    terms = [sum_squares(jet[mi.zero(d)] - P.boundary_value(problem, pts))]
    if orders.k:
        # homogeneous, time-independent data: d_t h = 0
        terms.append(sum_squares(jet[mi.unit(0, d)]))
    if orders.l:
        grads = P.boundary_gradient(problem, pts)
        terms.extend(sum_squares(jet[mi.unit(i, d)] - grads[i]) for i in range(d))
    return _accumulate(terms) * batch.w_bc


def toy_loss(field, target: ToyTarget, points, order: int):
    """Plain sum of squared deviations of u, u', ..., u^(order) from the target."""
    if order not in (0, 1, 2):
        raise ValueError(f"toy loss order must be 0, 1 or 2; got {order}")
    x = np.asarray(points, dtype=np.float64).reshape(-1)
    request = [(n,) for n in range(order + 1)]
    jet = field.jet(x[:, None], request)
    return _accumulate(sum_squares(jet[(n,)] - target.derivative(x, n)) for n in range(order + 1))


def loss_components(field, problem: ProblemDef, batch: SampleBatch, variant: LossVariant) -> dict:
    if not variant.compatible(problem):
        raise ValueError(
            f"loss variant {variant.tag} is incompatible with problem {problem.name} ({problem.kind}); "
            f"use one of {', '.join(v.upper() for f, ks in FAMILY_KINDS.items() if problem.kind in ks for v in FAMILIES[f])}"
        )
    if variant.family == "toy":
        return {"fit": toy_loss(field, P.toy_target(problem), batch.interior, variant.toy_order)}
    out = {"ge": loss_ge(field, problem, batch, variant.ge)}
    if variant.ic is not None:
        out["ic"] = loss_ic(field, problem, batch, variant.ic)
    if variant.bc is not None:
        out["bc"] = loss_bc(field, problem, batch, variant.bc)
    return out


def total_loss(field, problem: ProblemDef, batch: SampleBatch, variant: LossVariant):
    return _accumulate(loss_components(field, problem, batch, variant).values())
