"""Multi-indices for mixed partial derivatives of low total order.

A multi-index is a plain tuple of nonnegative ints, one entry per input
coordinate: ``(1, 2)`` on axes ``("t", "x")`` means d/dt d^2/dx^2.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from itertools import product
from typing import Iterable, Sequence

MAX_ORDER = 3

MultiIndex = tuple[int, ...]


class UnsupportedOrderError(ValueError):
    """Raised when a derivative of total order above MAX_ORDER is requested."""


@dataclass(frozen=True)
class SumIndex:
    """A sum of same-order partials, sum_m D^{members[m]} u, carried as one jet row.

    Used where a loss needs only a contraction such as sum_j u_{ijj}; the
    members themselves are never materialized.
    """

    members: tuple[MultiIndex, ...]

    def __post_init__(self):
        members = tuple(tuple(int(a) for a in m) for m in self.members)
        object.__setattr__(self, "members", members)
        if not members:
            raise ValueError("empty SumIndex")
        if len({len(m) for m in members}) != 1 or len({sum(m) for m in members}) != 1:
            raise ValueError(f"SumIndex members must share dimension and order: {members}")
        if len(set(members)) != len(members):
            raise ValueError(f"duplicate SumIndex members: {members}")

    @property
    def order(self) -> int:
        return sum(self.members[0])

    def __len__(self) -> int:
        return len(self.members[0])

    @classmethod
    def laplacian_grad(cls, i: int, dim: int) -> "SumIndex":
        """d/dx_i of the Laplacian: members e_i + 2 e_j for every j."""
        return cls(tuple(add(unit(i, dim), unit(j, dim, 2)) for j in range(dim)))


def members(alpha) -> tuple[MultiIndex, ...]:
    return alpha.members if isinstance(alpha, SumIndex) else (alpha,)


def order(alpha) -> int:
    return alpha.order if isinstance(alpha, SumIndex) else sum(alpha)


def zero(dim: int) -> MultiIndex:
    return (0,) * dim


def unit(i: int, dim: int, times: int = 1) -> MultiIndex:
    alpha = [0] * dim
    alpha[i] = times
    return tuple(alpha)


def add(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    return tuple(x + y for x, y in zip(a, b))


def parse(spec: str, axes: Sequence[str]) -> MultiIndex:
    """Build a multi-index from a string of axis names.

    >>> parse("xxt", "tx")
    (1, 2)
    >>> parse("", "tx")
    (0, 0)
    """
    counts = [0] * len(axes)
    for ch in spec:
        if ch not in axes:
            raise ValueError(f"unknown axis {ch!r}; axes are {tuple(axes)}")
        counts[list(axes).index(ch)] += 1
    return tuple(counts)


def validate(alpha, dim: int):
    if isinstance(alpha, SumIndex):
        for m in alpha.members:
            validate(m, dim)
        return alpha
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != dim:
        raise ValueError(f"multi-index {alpha} has length {len(alpha)}, input dimension is {dim}")
    if any(a < 0 for a in alpha):
        raise ValueError(f"multi-index {alpha} has negative entries")
    if order(alpha) > MAX_ORDER:
        raise UnsupportedOrderError(
            f"derivative order {order(alpha)} of {alpha} exceeds the supported maximum {MAX_ORDER}"
        )
    return alpha


def closure(indices: Iterable[MultiIndex]) -> list[MultiIndex]:
    """All multi-indices below some member (componentwise), zero included.

    Sorted by total order, then lexicographically, so the zero index is first
    and every index appears after all of its sub-indices.
    """
    indices = list(indices)
    if not indices:
        raise ValueError("empty derivative request")
    out: set = set()
    for alpha in indices:
        if isinstance(alpha, SumIndex):
            out.add(alpha)
        for m in members(alpha):
            for beta in product(*(range(a + 1) for a in m)):
                if not (isinstance(alpha, SumIndex) and beta == m):
                    out.add(tuple(beta))
    return sorted(out, key=_sort_key)


def _sort_key(alpha):
    if isinstance(alpha, SumIndex):
        return (alpha.order, 1, alpha.members)
    return (order(alpha), 0, alpha)


def _set_partitions(items: list[int]) -> list[list[list[int]]]:
    if not items:
        return [[]]
    first, rest = items[0], items[1:]
    result = []
    for part in _set_partitions(rest):
        result.append([[first]] + part)
        for i in range(len(part)):
            result.append(part[:i] + [[first] + part[i]] + part[i + 1:])
    return result


def partitions(alpha: MultiIndex) -> list[tuple[int, tuple[MultiIndex, ...], int]]:
    """Faa di Bruno terms for D^alpha of a composition s(z(x)).

    D^alpha s(z) = sum over terms of coeff * s^(k)(z) * prod_b D^b z, where each
    term is ``(k, blocks, coeff)`` and ``k == len(blocks)``.
    """
    dim = len(alpha)
    positions = [i for i in range(dim) for _ in range(alpha[i])]
    counter: Counter = Counter()
    for part in _set_partitions(list(range(len(positions)))):
        blocks = []
        for block in part:
            beta = [0] * dim
            for p in block:
                beta[positions[p]] += 1
            blocks.append(tuple(beta))
        counter[tuple(sorted(blocks))] += 1
    return [(len(blocks), blocks, c) for blocks, c in sorted(counter.items())]
