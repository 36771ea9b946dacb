"""Ground-truth solutions used for test errors.

Closed forms for the heat and Poisson problems, a Cole-Hopf/Gauss-Hermite
evaluator (with partials) for viscous Burgers, and a conservative
finite-difference solver for the truncated kinetic Fokker-Planck equation.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_banded

BURGERS_NODES = 128


def heat_exact(t, x):
    return np.sin(x) * np.exp(-np.asarray(t, dtype=np.float64))


def poisson_exact(x, k_freq: float = 1.0):
    x = np.asarray(x, dtype=np.float64)
    return np.sum(np.sin(k_freq * np.pi * x / 2.0), axis=-1)


# ---------------------------------------------------------------------------
# Burgers via Cole-Hopf
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _hermite(n: int):
    if n < 32:
        raise ValueError(f"need at least 32 Gauss-Hermite nodes, got {n}")
    return np.polynomial.hermite.hermgauss(n)


def _cos_derivative(theta: np.ndarray, m: int) -> np.ndarray:
    # exact parity: d^m/dθ^m cos θ cycles cos, -sin, -cos, sin
    r = m % 4
    if r == 0:
        return np.cos(theta)
    if r == 1:
        return -np.sin(theta)
    if r == 2:
        return -np.cos(theta)
    return np.sin(theta)


def _heat_kernel_derivs(y: np.ndarray, nu: float, nmax: int) -> np.ndarray:
    """F^(n)(y), n = 0..nmax, for F(y) = exp(-cos(pi y) / (2 pi nu)).

    Taylor coefficients of the exponent are exponentiated with the usual
    power-series recurrence f_n = (1/n) sum_k k g_k f_{n-k}.
    """
    g = [None] + [
        -(math.pi ** m) * _cos_derivative(math.pi * y, m) / (2.0 * math.pi * nu) / math.factorial(m)
        for m in range(1, nmax + 1)
    ]
    f = [np.exp(-np.cos(math.pi * y) / (2.0 * math.pi * nu))]
    for n in range(1, nmax + 1):
        acc = np.zeros_like(y)
        for k in range(1, n + 1):
            acc = acc + k * g[k] * f[n - k]
        f.append(acc / n)
    return np.stack([math.factorial(n) * f[n] for n in range(nmax + 1)])


def burgers_jet(t, x, nu: float = 0.2, order: int = 3, nodes: int = BURGERS_NODES) -> dict:
    """Cole-Hopf solution of u_t + u u_x = nu u_xx, u(0,x) = -sin(pi x), and its partials.

    Returns {(a, b): d^a/dt^a d^b/dx^b u} for a + b <= order, evaluated at the
    broadcast (t, x) arrays. The heat-equation potential phi satisfies
    phi_t = nu phi_xx, so every time derivative is an x derivative of phi;
    u = -2 nu phi_x / phi is expanded as a truncated bivariate series.
    """
    t, x = np.broadcast_arrays(np.asarray(t, dtype=np.float64), np.asarray(x, dtype=np.float64))
    if np.any(t < 0):
        raise ValueError("Burgers reference needs t >= 0")
    s, w = _hermite(nodes)
    nmax = 2 * order + 1
    y = x[..., None] - 2.0 * np.sqrt(nu * t)[..., None] * s
    phi = np.tensordot(_heat_kernel_derivs(y, nu, nmax), w, axes=([-1], [0]))  # (nmax+1, ...)
    if not np.all(np.isfinite(phi)) or np.any(phi[0] <= 0):
        raise FloatingPointError("Cole-Hopf quadrature produced a non-finite ratio")

    # series coefficients of phi and phi_x around (t, x): c[a][b] multiplies tau^a xi^b
    c, dx = {}, {}
    for a in range(order + 1):
        for b in range(order + 1 - a):
            scale = nu ** a / (math.factorial(a) * math.factorial(b))
            c[a, b] = scale * phi[2 * a + b]
            dx[a, b] = scale * phi[2 * a + b + 1]
    q = {}
    keys = sorted(c, key=lambda ab: (ab[0] + ab[1], ab))
    for a, b in keys:
        acc = dx[a, b]
        for i in range(a + 1):
            for j in range(b + 1):
                if (i, j) != (0, 0):
                    acc = acc - c[i, j] * q[a - i, b - j]
        q[a, b] = acc / c[0, 0]
    out = {(a, b): -2.0 * nu * math.factorial(a) * math.factorial(b) * q[a, b] for a, b in keys}
    at_zero = t == 0
    if np.any(at_zero):
        out[0, 0] = np.where(at_zero, -np.sin(np.pi * x), out[0, 0])
    return out


def burgers_exact(t, x, nu: float = 0.2, nodes: int = BURGERS_NODES):
    return burgers_jet(t, x, nu=nu, order=0, nodes=nodes)[0, 0]


def burgers_fd(
    times: Sequence[float], nu: float = 0.2, nx: int = 4096, dt: float = 1e-6
) -> tuple[np.ndarray, np.ndarray]:
    """Crank-Nicolson / Adams-Bashforth finite differences for the same Burgers problem.

    Independent of the quadrature route; used only to check it. Returns the
    grid x (nx + 1 nodes on [0, 1]) and the solution at each requested time,
    each rounded to the nearest multiple of dt.
    """
    x = np.linspace(0.0, 1.0, nx + 1)
    h = 1.0 / nx
    u = -np.sin(np.pi * x)
    u[0] = u[-1] = 0.0
    steps = [int(round(t / dt)) for t in times]
    wanted = set(steps)
    n_int = nx - 1
    r = nu * dt / (2.0 * h * h)
    ab = np.zeros((3, n_int))
    ab[0, 1:] = -r
    ab[1, :] = 1.0 + 2.0 * r
    ab[2, :-1] = -r

    def advection(v):
        out = np.zeros_like(v)
        out[1:-1] = (v[2:] ** 2 - v[:-2] ** 2) / (4.0 * h)
        return out

    snaps = {}
    if 0 in steps:
        snaps[0] = u.copy()
    prev_adv = None
    for n in range(1, max(steps) + 1):
        adv = advection(u)
        nonlinear = adv if prev_adv is None else 1.5 * adv - 0.5 * prev_adv
        rhs = u[1:-1] + r * (u[2:] - 2.0 * u[1:-1] + u[:-2]) - dt * nonlinear[1:-1]
        prev_adv = adv
        u = np.concatenate(([0.0], solve_banded((1, 1), ab, rhs), [0.0]))
        if n in wanted:
            snaps[n] = u.copy()
    return x, np.stack([snaps[s] for s in steps])


# ---------------------------------------------------------------------------
# Kinetic Fokker-Planck
# ---------------------------------------------------------------------------

@dataclass
class ReferenceGrid:
    axes: dict[str, np.ndarray]
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = tuple(len(a) for a in self.axes.values())
        if self.values.shape != shape:
            raise ValueError(f"values have shape {self.values.shape}, axes give {shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("reference values must be finite")

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes.values(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def save(self, path: str | Path) -> None:
        arrays = {f"axis_{k}": v for k, v in self.axes.items()}
        arrays["values"] = self.values
        arrays["metadata"] = np.frombuffer(json.dumps(self.metadata, sort_keys=True).encode(), dtype=np.uint8)
        arrays["axis_order"] = np.frombuffer(json.dumps(list(self.axes)).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "ReferenceGrid":
        with np.load(path) as data:
            order = json.loads(bytes(data["axis_order"]).decode())
            axes = {k: data[f"axis_{k}"] for k in order}
            meta = json.loads(bytes(data["metadata"]).decode())
            return cls(axes, data["values"], meta)


class CFLError(ValueError):
    pass


def _fp_rhs(u, v, dx, dv, beta, q):
    # transport: centered, periodic in x
    du = -v[None, :] * (np.roll(u, -1, axis=0) - np.roll(u, 1, axis=0)) / (2.0 * dx)
    # drift-diffusion in conservative form with zero flux at v = +-V
    vf = 0.5 * (v[1:] + v[:-1])
    flux = beta * vf[None, :] * 0.5 * (u[:, 1:] + u[:, :-1]) + q * (u[:, 1:] - u[:, :-1]) / dv
    div = np.zeros_like(u)
    div[:, :-1] += flux
    div[:, 1:] -= flux
    return du + div / dv


def fp_stable_dt(nx: int, nv: int, vmax: float, beta: float, q: float) -> float:
    dx, dv = 1.0 / nx, 2.0 * vmax / nv
    spectral_radius = vmax / dx + 4.0 * q / dv ** 2 + 2.0 * beta * vmax / dv + beta
    return 2.0 / spectral_radius


def fp_solve(
    initial: Callable[[np.ndarray, np.ndarray], np.ndarray],
    nx: int = 64,
    nv: int = 128,
    nt: int | None = None,
    T: float = 3.0,
    vmax: float = 5.0,
    beta: float = 0.1,
    q: float = 0.1,
    snapshots: int = 31,
    name: str = "fokker_planck",
) -> ReferenceGrid:
    """Solve u_t + v u_x = d/dv(beta v u + q u_v) on [0,T] x [0,1) x [-V,V].

    Periodic in x (nodes j/nx), cell-centred in v with zero flux at +-V,
    classical RK4 in time. ``nt`` defaults to the smallest stable step count
    that is a multiple of ``snapshots - 1``.
    """
    if nx < 4 or nv < 4:
        raise ValueError("resolution too small")
    dt_max = fp_stable_dt(nx, nv, vmax, beta, q)
    per = snapshots - 1
    suggested = per * math.ceil(T / dt_max / per)
    if nt is None:
        nt = suggested
    if T / nt > dt_max:
        raise CFLError(f"nt={nt} violates the stability limit dt <= {dt_max:.3e}; use nt >= {suggested}")
    if nt % per:
        raise ValueError(f"nt must be a multiple of snapshots - 1 = {per}")
    dx, dv = 1.0 / nx, 2.0 * vmax / nv
    x = np.arange(nx) * dx
    v = -vmax + (np.arange(nv) + 0.5) * dv
    u = np.asarray(initial(x[:, None], v[None, :]), dtype=np.float64) * np.ones((nx, nv))
    dt = T / nt
    stride = nt // per
    out = [u.copy()]
    for n in range(1, nt + 1):
        k1 = _fp_rhs(u, v, dx, dv, beta, q)
        k2 = _fp_rhs(u + 0.5 * dt * k1, v, dx, dv, beta, q)
        k3 = _fp_rhs(u + 0.5 * dt * k2, v, dx, dv, beta, q)
        k4 = _fp_rhs(u + dt * k3, v, dx, dv, beta, q)
        u = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if n % stride == 0:
            out.append(u.copy())
    times = np.linspace(0.0, T, snapshots)
    values = np.stack(out)
    mass = values.sum(axis=(1, 2)) * dx * dv
    meta = {
        "problem": name,
        "nx": nx,
        "nv": nv,
        "nt": nt,
        "T": T,
        "vmax": vmax,
        "beta": beta,
        "q": q,
        "scheme": "centered-x conservative-v RK4",
        "mass_initial": float(mass[0]),
        "mass_final": float(mass[-1]),
    }
    return ReferenceGrid({"t": times, "x": x, "v": v}, values, meta)


def grid_mass(grid: ReferenceGrid) -> np.ndarray:
    dx = grid.axes["x"][1] - grid.axes["x"][0]
    dv = grid.axes["v"][1] - grid.axes["v"][0]
    return grid.values.sum(axis=(1, 2)) * dx * dv
