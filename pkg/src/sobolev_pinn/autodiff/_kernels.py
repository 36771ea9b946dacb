"""Fused loops for the tanh jet rules.

Arrays are (C, M): one row per jet component, M = points * units. Work is
done in cache-sized chunks of M; the term order is fixed by the tables, so
results are deterministic.
"""
import numpy as np
from numba import njit


def chunk_size(n_rows: int) -> int:
    # keep a chunk of every component row (input and output) inside L2
    return max(64, min(4096, 16384 // max(n_rows, 1)))


@njit(cache=True, fastmath=True)
def _derivs(s, d, lo, hi, kmax):
    for i in range(hi - lo):
        v = s[lo + i]
        d[0, i] = v
        d1 = 1.0 - v * v
        if kmax >= 1:
            d[1, i] = d1
        if kmax >= 2:
            d2 = -2.0 * v * d1
            d[2, i] = d2
            if kmax >= 3:
                d3 = -2.0 * d1 * d1 - 2.0 * v * d2
                d[3, i] = d3
                if kmax >= 4:
                    d[4, i] = -6.0 * d1 * d2 - 2.0 * v * d3


@njit(cache=True, fastmath=True)
def tanh_jet_forward(z, s, out, target, korder, coeff, blocks, nblocks, kmax, CHUNK):
    C, M = z.shape
    T = target.shape[0]
    d = np.empty((kmax + 1, CHUNK))
    for lo in range(0, M, CHUNK):
        hi = min(M, lo + CHUNK)
        n = hi - lo
        _derivs(s, d, lo, hi, kmax)
        out[0, lo:hi] = d[0, :n]
        for c in range(1, C):
            out[c, lo:hi] = 0.0
        for t in range(T):
            o = out[target[t], lo:hi]
            dk = d[korder[t]]
            cf = coeff[t]
            z0 = z[blocks[t, 0], lo:hi]
            if nblocks[t] == 1:
                for i in range(n):
                    o[i] += cf * dk[i] * z0[i]
            elif nblocks[t] == 2:
                z1 = z[blocks[t, 1], lo:hi]
                for i in range(n):
                    o[i] += cf * dk[i] * z0[i] * z1[i]
            else:
                z1 = z[blocks[t, 1], lo:hi]
                z2 = z[blocks[t, 2], lo:hi]
                for i in range(n):
                    o[i] += cf * dk[i] * z0[i] * z1[i] * z2[i]


@njit(cache=True, fastmath=True)
def _backward_chunk(g, z, d, gz, lo, hi, target, korder, coeff, blocks, nblocks):
    # g is chunk-local (C, >= hi - lo); z and gz are full (C, M)
    C = z.shape[0]
    n = hi - lo
    for c in range(C):
        gz[c, lo:hi] = 0.0
    g0 = gz[0, lo:hi]
    for i in range(n):
        g0[i] = g[0, i] * d[1, i]
    for t in range(target.shape[0]):
        gt = g[target[t]]
        k = korder[t]
        dk = d[k]
        dk1 = d[k + 1]
        cf = coeff[t]
        b0 = blocks[t, 0]
        z0 = z[b0, lo:hi]
        gb0 = gz[b0, lo:hi]
        if nblocks[t] == 1:
            for i in range(n):
                gc = cf * gt[i]
                g0[i] += gc * dk1[i] * z0[i]
                gb0[i] += gc * dk[i]
        elif nblocks[t] == 2:
            z1 = z[blocks[t, 1], lo:hi]
            gb1 = gz[blocks[t, 1], lo:hi]
            for i in range(n):
                gc = cf * gt[i]
                gk = gc * dk[i]
                g0[i] += gc * dk1[i] * z0[i] * z1[i]
                gb0[i] += gk * z1[i]
                gb1[i] += gk * z0[i]
        else:
            z1 = z[blocks[t, 1], lo:hi]
            z2 = z[blocks[t, 2], lo:hi]
            gb1 = gz[blocks[t, 1], lo:hi]
            gb2 = gz[blocks[t, 2], lo:hi]
            for i in range(n):
                gc = cf * gt[i]
                gk = gc * dk[i]
                g0[i] += gc * dk1[i] * z0[i] * z1[i] * z2[i]
                gb0[i] += gk * z1[i] * z2[i]
                gb1[i] += gk * z0[i] * z2[i]
                gb2[i] += gk * z0[i] * z1[i]


@njit(cache=True, fastmath=True)
def tanh_jet_backward(g, z, s, gz, target, korder, coeff, blocks, nblocks, kmax, CHUNK):
    C, M = z.shape
    d = np.empty((kmax + 2, CHUNK))
    for lo in range(0, M, CHUNK):
        hi = min(M, lo + CHUNK)
        _derivs(s, d, lo, hi, kmax + 1)
        _backward_chunk(g[:, lo:hi], z, d, gz, lo, hi, target, korder, coeff, blocks, nblocks)


@njit(cache=True, fastmath=True)
def tanh_jet_backward_readout(gout, w, z, s, gz, target, korder, coeff, blocks, nblocks, kmax, CHUNK):
    """As tanh_jet_backward with g[c, n*W + u] = gout[c, n] * w[u] never stored in full."""
    C, M = z.shape
    W = w.shape[0]
    d = np.empty((kmax + 2, CHUNK))
    g = np.empty((C, CHUNK))
    for lo in range(0, M, CHUNK):
        hi = min(M, lo + CHUNK)
        for i in range(hi - lo):
            m = lo + i
            p = m // W
            wu = w[m - p * W]
            for c in range(C):
                g[c, i] = gout[c, p] * wu
        _derivs(s, d, lo, hi, kmax + 1)
        _backward_chunk(g, z, d, gz, lo, hi, target, korder, coeff, blocks, nblocks)


@njit(cache=True, fastmath=True)
def input_jet_forward(s, prods, korder, out, kmax):
    """out[c, n, u] = tanh^(k_c)(z)[n, u] * prods[c, u]; row 0 is tanh itself."""
    N, W = s.shape
    C = korder.shape[0]
    d = np.empty((kmax + 1, W))
    for n in range(N):
        _derivs(s[n], d, 0, W, kmax)
        for u in range(W):
            out[0, n, u] = d[0, u]
        for c in range(1, C):
            k = korder[c]
            for u in range(W):
                out[c, n, u] = d[k, u] * prods[c, u]


@njit(cache=True, fastmath=True)
def input_jet_backward(g, s, prods, korder, gz, col, kmax):
    """gz = sum_c g[c] * tanh^(k_c+1) * prods[c]; col[c] = sum_n g[c] * tanh^(k_c)."""
    N, W = s.shape
    C = korder.shape[0]
    d = np.empty((kmax + 2, W))
    for c in range(C):
        for u in range(W):
            col[c, u] = 0.0
    for n in range(N):
        _derivs(s[n], d, 0, W, kmax + 1)
        for u in range(W):
            gz[n, u] = g[0, n, u] * d[1, u]
        for c in range(1, C):
            k = korder[c]
            for u in range(W):
                gcu = g[c, n, u]
                gz[n, u] += gcu * d[k + 1, u] * prods[c, u]
                col[c, u] += gcu * d[k, u]
