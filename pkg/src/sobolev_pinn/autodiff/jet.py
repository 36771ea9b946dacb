"""Forward Taylor jets of a tanh multilayer perceptron.

Input partials up to total order 3 are pushed through the network layer by
layer; each layer is a single tape node with a hand-written adjoint, so
parameter gradients of anything built from the jet come from one backward
sweep.
"""
from __future__ import annotations

from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _kernels as _k
from . import multiindex as mi
from .tape import Tape, Var, add, matmul, take, value_of


def tanh_derivatives(s: np.ndarray, upto: int) -> list[np.ndarray]:
    """[tanh, tanh', ..., tanh^(upto)] evaluated from s = tanh(z)."""
    d = [s]
    if upto >= 1:
        d.append(1.0 - s * s)
    if upto >= 2:
        d.append(-2.0 * s * d[1])
    if upto >= 3:
        d.append(-2.0 * d[1] * d[1] - 2.0 * s * d[2])
    if upto >= 4:
        d.append(-6.0 * d[1] * d[2] - 2.0 * s * d[3])
    if upto >= 5:
        raise mi.UnsupportedOrderError("tanh derivatives above order 4 are not tabulated")
    return d


class JetValue(Mapping):
    """Field value and requested partials, keyed by multi-index.

    Entries are numpy arrays (one value per input point) or tape handles when
    the jet was recorded for differentiation. String keys are accepted via
    ``axes``: ``jet["xxt"]``.
    """

    def __init__(self, entries: dict, axes: Sequence[str] | None = None) -> None:
        self._entries = dict(entries)
        self.axes = tuple(axes) if axes is not None else None

    def _key(self, key):
        if isinstance(key, str):
            if self.axes is None:
                raise KeyError(f"no axis names to resolve {key!r}")
            return mi.parse(key, self.axes)
        if isinstance(key, mi.SumIndex):
            return key
        return tuple(key)

    def __getitem__(self, key):
        k = self._key(key)
        if k not in self._entries:
            raise KeyError(f"jet has no entry {key!r}; available: {list(self._entries)}")
        return self._entries[k]

    def __contains__(self, key) -> bool:
        try:
            return self._key(key) in self._entries
        except (KeyError, ValueError):
            return False

    def __iter__(self):
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def numpy(self) -> "JetValue":
        return JetValue({k: np.asarray(value_of(v)) for k, v in self._entries.items()}, self.axes)

    def with_axes(self, axes: Sequence[str]) -> "JetValue":
        return JetValue(self._entries, axes)


def _products(comps: tuple, w: np.ndarray) -> np.ndarray:
    """Row c: product over the derivative positions of comps[c] of the weight rows."""
    out = np.zeros((len(comps), w.shape[1]))
    for c, alpha in enumerate(comps):
        for m in mi.members(alpha):
            row = np.ones(w.shape[1])
            for i, a in enumerate(m):
                for _ in range(a):
                    row = row * w[i]
            out[c] += row
    return out


def jet_tanh_input(z0, w, comps):
    """Jet of tanh(x W + b) for raw input coordinates.

    The pre-activation is affine in x, so its only nonzero partials are the
    first-order ones (rows of W) and each output partial is a single term
    tanh^(|alpha|)(z0) * prod W[i].
    """
    comps = tuple(comps)
    korder = np.array([mi.order(a) for a in comps], dtype=np.int64)
    kmax = int(korder.max())

    def forward(z, weights):
        s = np.tanh(z)
        out = np.empty((len(comps),) + z.shape)
        _k.input_jet_forward(s, _products(comps, weights), korder, out, kmax)
        return out

    def vjp(g, vals, out):
        z, weights = vals
        gz = np.empty_like(z)
        col = np.empty((len(comps), weights.shape[1]))
        _k.input_jet_backward(np.ascontiguousarray(g), out[0], _products(comps, weights), korder, gz, col, kmax)
        gw = np.zeros_like(weights)
        for c, alpha in enumerate(comps[1:], start=1):
            for m in mi.members(alpha):
                positions = [i for i, a in enumerate(m) for _ in range(a)]
                for j, i in enumerate(positions):
                    others = col[c].copy()
                    for jj, ii in enumerate(positions):
                        if jj != j:
                            others = others * weights[ii]
                    gw[i] += others
        return gz, gw

    tape = z0.tape if isinstance(z0, Var) else (w.tape if isinstance(w, Var) else None)
    if tape is None:
        return forward(z0, w)
    return tape.record("jet_tanh_input", (z0, w), forward, vjp)


def jet_affine(a, w, b):
    """Apply x -> x W + b to a stacked jet (bias enters the value only)."""

    def forward(x, weights, bias):
        out = np.empty(x.shape[:-1] + (weights.shape[1],))
        # value row uses the same expression as network.evaluate, so the two agree bitwise
        out[0] = x[0] @ weights + bias
        if x.shape[0] > 1:
            rest = x[1:].reshape(-1, x.shape[-1]) @ weights
            out[1:] = rest.reshape(out[1:].shape)
        return out

    def vjp(g, vals, out):
        x, weights, _ = vals
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ weights.T).reshape(x.shape)
        gw = x.reshape(-1, x.shape[-1]).T @ g2
        gb = g[0].sum(axis=0)
        return gx, gw, gb

    tape = next((v.tape for v in (a, w, b) if isinstance(v, Var)), None)
    if tape is None:
        return forward(a, w, b)
    return tape.record("jet_affine", (a, w, b), forward, vjp)


@lru_cache(maxsize=None)
def _tanh_tables(comps: tuple):
    pos = {alpha: c for c, alpha in enumerate(comps)}
    rows = []
    for c, alpha in enumerate(comps):
        if mi.order(alpha) == 0:
            continue
        if isinstance(alpha, mi.SumIndex):
            # the single-block terms of all members add up to tanh' times this row
            rows.append((c, 1, 1.0, [c, 0, 0], 1))
        for m in mi.members(alpha):
            for k, blocks, coeff in mi.partitions(m):
                if isinstance(alpha, mi.SumIndex) and k == 1:
                    continue
                idx = [pos[b] for b in blocks] + [0] * (3 - len(blocks))
                rows.append((c, k, float(coeff), idx, len(blocks)))
    target = np.array([r[0] for r in rows], dtype=np.int64)
    korder = np.array([r[1] for r in rows], dtype=np.int64)
    coeff = np.array([r[2] for r in rows], dtype=np.float64)
    blocks = np.array([r[3] for r in rows], dtype=np.int64).reshape(-1, 3)
    nblocks = np.array([r[4] for r in rows], dtype=np.int64)
    return target, korder, coeff, blocks, nblocks


def jet_tanh(z, comps):
    """Jet of tanh applied to a jet with arbitrary (dense) partials."""
    comps = tuple(comps)
    tables = _tanh_tables(comps)
    kmax = max(mi.order(a) for a in comps)

    def forward(zz):
        flat = zz.reshape(zz.shape[0], -1)
        s = np.tanh(flat[0])
        out = np.empty_like(flat)
        _k.tanh_jet_forward(flat, s, out, *tables, kmax, _k.chunk_size(len(comps)))
        return out.reshape(zz.shape)

    def vjp(g, vals, out):
        zz = vals[0]
        flat = zz.reshape(zz.shape[0], -1)
        gz = np.empty_like(flat)
        _k.tanh_jet_backward(np.ascontiguousarray(g).reshape(flat.shape), flat, out[0].reshape(-1), gz, *tables, kmax, _k.chunk_size(len(comps)))
        return (gz.reshape(zz.shape),)

    if not isinstance(z, Var):
        return forward(z)
    return z.tape.record("jet_tanh", (z,), forward, vjp)


def jet_tanh_readout(z, comps, w, b):
    """tanh jet of the last hidden layer fused with the scalar output layer.

    Returns a (C, N) array of output partials. The adjoint forms the rank-one
    gradient w.r.t. the hidden jet chunk by chunk instead of in full.
    """
    comps = tuple(comps)
    tables = _tanh_tables(comps)
    kmax = max(mi.order(a) for a in comps)
    hidden = {}

    def forward(zz, weights, bias):
        flat = zz.reshape(zz.shape[0], -1)
        s = np.tanh(flat[0])
        a = np.empty_like(flat)
        _k.tanh_jet_forward(flat, s, a, *tables, kmax, _k.chunk_size(len(comps)))
        a = a.reshape(zz.shape)
        hidden["a"] = a
        out = np.empty(zz.shape[:2])
        # value row uses the same expression as network.evaluate, so the two agree bitwise
        out[0] = (a[0] @ weights + bias)[:, 0]
        if zz.shape[0] > 1:
            out[1:] = (a[1:].reshape(-1, a.shape[-1]) @ weights).reshape(out[1:].shape)
        return out

    def vjp(g, vals, out):
        zz, weights, _ = vals
        a = hidden["a"]
        flat = zz.reshape(zz.shape[0], -1)
        gz = np.empty_like(flat)
        _k.tanh_jet_backward_readout(
            np.ascontiguousarray(g), np.ascontiguousarray(weights[:, 0]), flat, a[0].reshape(-1), gz,
            *tables, kmax, _k.chunk_size(len(comps)),
        )
        gw = (g.reshape(1, -1) @ a.reshape(-1, a.shape[-1])).T
        gb = np.array([g[0].sum()])
        return gz.reshape(zz.shape), gw, gb

    tape = next((v.tape for v in (z, w, b) if isinstance(v, Var)), None)
    if tape is None:
        return forward(z, w, b)
    return tape.record("jet_tanh_readout", (z, w, b), forward, vjp)


def _as_request(request: Iterable, dim: int) -> list:
    req = []
    for alpha in request:
        alpha = mi.validate(alpha, dim)
        if alpha not in req:
            req.append(alpha)
    return req


def forward_jet(params, x, request: Iterable, tape: Tape | None = None, axes=None) -> JetValue:
    """Value and mixed input partials of a tanh MLP at one or many points.

    ``params`` needs ``weights`` and ``biases`` lists (arrays, or Vars already
    registered on ``tape``). ``x`` is a coordinate vector or an (N, d) array.
    Without a tape the result holds plain arrays; with one, tape handles.
    """
    weights, biases = list(params.weights), list(params.biases)
    d_in = np.shape(value_of(weights[0]))[0]
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    if pts.ndim != 2 or pts.shape[1] != d_in:
        raise ValueError(f"input has shape {x.shape}; network expects {d_in} coordinates per point")
    req = _as_request(request, d_in)
    comps = tuple(mi.closure(req))

    own_tape = tape is None
    if own_tape:
        tape = Tape()
        weights = [tape.parameter(value_of(w)) for w in weights]
        biases = [tape.parameter(value_of(b)) for b in biases]

    z0 = add(matmul(pts, weights[0]), biases[0])
    a = jet_tanh_input(z0, weights[0], comps)
    if len(weights) == 2:
        out = jet_affine(a, weights[-1], biases[-1])
        index = lambda c: (c, slice(None), 0)
    else:
        for w, b in zip(weights[1:-2], biases[1:-2]):
            a = jet_tanh(jet_affine(a, w, b), comps)
        out = jet_tanh_readout(jet_affine(a, weights[-2], biases[-2]), comps, weights[-1], biases[-1])
        index = lambda c: c

    entries = {}
    for alpha in req:
        entries[alpha] = take(out, index(comps.index(alpha)))
    jet = JetValue(entries, axes)
    if own_tape:
        jet = jet.numpy()
        if single:
            jet = JetValue({k: float(v[0]) for k, v in jet.items()}, axes)
    return jet


def param_gradient(tape: Tape, loss) -> np.ndarray:
    """Gradient of a scalar tape handle w.r.t. every parameter slot, flattened."""
    if not isinstance(loss, Var):
        raise ValueError("loss is not a recorded tape handle")
    grads = tape.gradient(loss)
    return np.concatenate([np.ravel(g) for g in grads]) if grads else np.zeros(0)
