"""Sampling, the training loop, test errors, and multi-seed sweeps."""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

from . import problems as P
from . import reference
from .autodiff import Tape, param_gradient, value_of
from .losses import NetworkField, SampleBatch, get_variant, total_loss
from .network import Architecture, MlpParams, evaluate, init_uniform, save_checkpoint
from .optim import AdamState, NonFiniteGradientError, adam_step
from .problems import ProblemDef

DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class SamplingPlan:
    mode: str = "fixed"  # fixed | iterative
    n_t: int = 31
    n_x: int = 31
    n_b: int = 31
    n_v: int = 31
    n_points: int = 500
    n_boundary: int = 500
    seed: int | None = None  # None: derived from the run seed

    def __post_init__(self):
        if self.mode not in ("fixed", "iterative"):
            raise ValueError(f"sampling mode must be 'fixed' or 'iterative'; got {self.mode!r}")
        if self.mode == "fixed" and min(self.n_t, self.n_x, self.n_b, self.n_v) < 2:
            raise ValueError("fixed-grid counts must be at least 2")
        if self.mode == "iterative" and (self.n_points < 1 or self.n_boundary < 1):
            raise ValueError("iterative sampling needs at least one point per epoch")


@dataclass(frozen=True)
class TrainConfig:
    problem: str
    loss: str
    arch: str | None = None  # default: d-64-64-1
    lr: float | None = None  # default: 1e-4 for Poisson, else 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    sampling: SamplingPlan | None = None
    epochs: int = 1000
    threshold: float | None = None
    stop_at_threshold: bool = True
    metric: str | None = None  # linf_l2 | relative_l2
    eval_every: int = 10
    near_factor: float = 2.0
    test_resolution: int = 101
    reference: str | None = None  # ReferenceGrid file for kinetic problems
    seed: int = 0

    def validate(self) -> "TrainConfig":
        problem = P.get_problem(self.problem)
        variant = get_variant(self.loss)
        if not variant.compatible(problem):
            raise ValueError(f"loss variant {variant.tag} is incompatible with problem {problem.name}")
        if self.epochs < 1:
            raise ValueError(f"epoch budget must be at least 1; got {self.epochs}")
        if self.threshold is not None and not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if self.eval_every < 1:
            raise ValueError("eval_every must be at least 1")
        if self.metric not in (None, "linf_l2", "relative_l2"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.metric == "linf_l2" and not problem.time_dependent:
            raise ValueError("linf_l2 needs a time axis")
        arch = self.architecture(problem)
        if arch.input_dim != problem.dim:
            raise ValueError(f"architecture {arch} takes {arch.input_dim} inputs; {problem.name} has {problem.dim}")
        return self

    def architecture(self, problem: ProblemDef | None = None) -> Architecture:
        problem = problem or P.get_problem(self.problem)
        return Architecture.parse(self.arch) if self.arch else Architecture((problem.dim, 64, 64, 1))

    def learning_rate(self, problem: ProblemDef) -> float:
        if self.lr is not None:
            return self.lr
        return 1e-4 if problem.kind == "poisson" else 1e-3

    def plan(self, problem: ProblemDef) -> SamplingPlan:
        if self.sampling is not None:
            return self.sampling
        return SamplingPlan("iterative") if problem.kind == "poisson" else SamplingPlan("fixed")

    def default_metric(self, problem: ProblemDef) -> str:
        if self.metric:
            return self.metric
        return "linf_l2" if problem.time_dependent else "relative_l2"

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if isinstance(d.get("sampling"), dict):
            d["sampling"] = SamplingPlan(**d["sampling"])
        return cls(**d)


@dataclass
class TrainRecord:
    config: dict
    loss: list[float]
    eval_epochs: list[int]
    test_error: list[float]
    epochs_to_threshold: int | None
    final_error: float
    seconds: float
    diverged: bool = False
    diverge_reason: str | None = None
    checkpoint: str | None = None
    params: MlpParams | None = field(default=None, repr=False, compare=False)

    @property
    def seed(self) -> int:
        return self.config["seed"]

    def numeric(self) -> dict:
        """Everything except wall time and file references: the reproducible content."""
        return {
            "loss": self.loss,
            "eval_epochs": self.eval_epochs,
            "test_error": self.test_error,
            "epochs_to_threshold": self.epochs_to_threshold,
            "final_error": self.final_error,
            "diverged": self.diverged,
        }

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "summary": {
                "epochs_to_threshold": self.epochs_to_threshold,
                "final_error": self.final_error,
                "seconds": self.seconds,
                "diverged": self.diverged,
                "diverge_reason": self.diverge_reason,
                "epochs_run": len(self.loss),
            },
            "series": {"loss": self.loss, "eval_epochs": self.eval_epochs, "test_error": self.test_error},
            "checkpoint": self.checkpoint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainRecord":
        s = d["summary"]
        return cls(
            d["config"], d["series"]["loss"], d["series"]["eval_epochs"], d["series"]["test_error"],
            s["epochs_to_threshold"], s["final_error"], s["seconds"], s["diverged"], s.get("diverge_reason"),
            d.get("checkpoint"),
        )


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _uniform_open_left(rng, lo, hi, n):
    # samples in (lo, hi]
    return hi - (hi - lo) * rng.random(n)


def _space_box(problem: ProblemDef):
    lo = np.array(problem.space_lo, dtype=np.float64)
    hi = np.array(problem.space_hi, dtype=np.float64)
    if problem.vmax:
        lo = np.append(lo, -problem.vmax)
        hi = np.append(hi, problem.vmax)
    return lo, hi


def _mesh(*axes):
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def _face_points(rng, d: int, n: int) -> np.ndarray:
    pts = rng.random((n, d))
    faces = rng.integers(0, 2 * d, size=n)
    pts[np.arange(n), faces // 2] = (faces % 2).astype(np.float64)
    return pts


def make_fixed_grid(problem: ProblemDef, n_t=31, n_x=31, n_b=31, n_v=31, seed: int = 0) -> SampleBatch:
    """Tensor-product samples drawn once: interior t_i x x_j (x v_k), initial slice, boundary."""
    if min(n_t, n_x, n_b, n_v) < 2:
        raise ValueError("grid counts must be at least 2")
    rng = np.random.default_rng(seed)
    counts = {"N_t": n_t, "N_x": n_x, "N_B": n_b}
    if problem.kind == "toy":
        x = P.toy_target(problem).points(100)[:, None]
        return SampleBatch(x, float(problem.space_hi[0] - problem.space_lo[0]), counts={"N": len(x)})
    if problem.kind == "poisson":
        d = problem.dim
        interior = rng.random((n_x, d))
        boundary = _face_points(rng, d, n_b)
        return SampleBatch(interior, problem.omega_measure, boundary=boundary,
                           boundary_measure=problem.boundary_measure, counts={"N_x": n_x, "N_B": n_b})
    T = problem.T
    lo, hi = problem.space_lo[0], problem.space_hi[0]
    t = _uniform_open_left(rng, 0.0, T, n_t)
    x = lo + (hi - lo) * rng.random(n_x)
    tb = _uniform_open_left(rng, 0.0, T, n_b)
    if problem.kind == "fokker_planck":
        v = -problem.vmax + 2.0 * problem.vmax * rng.random(n_v)
        counts["N_v"] = n_v
        interior = _mesh(t, x, v)
        initial = _mesh([0.0], x, v)
        left = _mesh(tb, [lo], v)
        right = _mesh(tb, [hi], v)
        return SampleBatch(interior, T * problem.omega_measure, initial, problem.omega_measure,
                           left, T * problem.boundary_measure, right, counts)
    interior = _mesh(t, x)
    initial = _mesh([0.0], x)
    boundary = np.concatenate([_mesh(tb, [lo]), _mesh(tb, [hi])])
    return SampleBatch(interior, T * problem.omega_measure, initial, problem.omega_measure,
                       boundary, T * problem.boundary_measure, None, counts)


def resample_uniform(problem: ProblemDef, n_points: int, rng: np.random.Generator, n_boundary: int | None = None) -> SampleBatch:
    """Fresh i.i.d. interior draw plus a boundary draw (face-uniform for boxes)."""
    if n_points < 1:
        raise ValueError("need at least one point")
    nb = n_points if n_boundary is None else n_boundary
    if problem.kind == "poisson":
        d = problem.dim
        interior = rng.random((n_points, d))
        boundary = _face_points(rng, d, nb)
        return SampleBatch(interior, problem.omega_measure, boundary=boundary,
                           boundary_measure=problem.boundary_measure, counts={"N_x": n_points, "N_B": nb})
    if problem.kind == "toy":
        lo, hi = problem.space_lo[0], problem.space_hi[0]
        x = lo + (hi - lo) * rng.random((n_points, 1))
        return SampleBatch(x, hi - lo, counts={"N": n_points})
    lo, hi = _space_box(problem)
    T = problem.T
    t = _uniform_open_left(rng, 0.0, T, n_points)
    interior = np.column_stack([t, lo + (hi - lo) * rng.random((n_points, len(lo)))])
    initial = np.column_stack([np.zeros(n_points), lo + (hi - lo) * rng.random((n_points, len(lo)))])
    tb = _uniform_open_left(rng, 0.0, T, nb)
    if problem.boundary == "periodic":
        v = lo[1] + (hi[1] - lo[1]) * rng.random(nb)
        left = np.column_stack([tb, np.full(nb, lo[0]), v])
        right = np.column_stack([tb, np.full(nb, hi[0]), v])
        return SampleBatch(interior, T * problem.omega_measure, initial, problem.omega_measure,
                           left, T * problem.boundary_measure, right, {"N": n_points, "N_B": nb})
    side = np.where(rng.random(nb) < 0.5, lo[0], hi[0])
    boundary = np.column_stack([tb, side])
    return SampleBatch(interior, T * problem.omega_measure, initial, problem.omega_measure,
                       boundary, T * problem.boundary_measure, None, {"N": n_points, "N_B": nb})


# ---------------------------------------------------------------------------
# test grids and metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TestGrid:
    """Evaluation points with the exact values and per-time quadrature weights.

    Points are time-major: ``n_times`` blocks of ``len(weights)`` points.
    """

    points: np.ndarray
    exact: np.ndarray
    weights: np.ndarray
    n_times: int = 1

    __test__ = False  # not a pytest class


POISSON_TEST_POINTS = 10_000
POISSON_TEST_SEED = 20_210_101
TOY_TEST_POINTS = 1000


@lru_cache(maxsize=4)
def default_fp_reference(name: str) -> reference.ReferenceGrid:
    problem = P.get_problem(name)
    return reference.fp_solve(
        lambda x, v: P.initial_data(problem, np.stack(np.broadcast_arrays(x, v), axis=-1)),
        nx=64, nv=128, T=problem.T, vmax=problem.vmax, beta=problem.beta, q=problem.q_diff, name=problem.name,
    )


def make_test_grid(problem: ProblemDef, resolution: int = 101, grid: reference.ReferenceGrid | None = None) -> TestGrid:
    if problem.kind == "fokker_planck":
        grid = grid or default_fp_reference(problem.name)
        x, v = grid.axes["x"], grid.axes["v"]
        w = np.full(len(x) * len(v), (x[1] - x[0]) * (v[1] - v[0]))
        return TestGrid(grid.points(), grid.values.ravel(), w, len(grid.axes["t"]))
    if problem.kind == "poisson":
        pts = np.random.default_rng(POISSON_TEST_SEED).random((POISSON_TEST_POINTS, problem.dim))
        return TestGrid(pts, P.exact_value(problem, pts), np.ones(len(pts)))
    if problem.kind == "toy":
        x = np.linspace(problem.space_lo[0], problem.space_hi[0], TOY_TEST_POINTS)[:, None]
        return TestGrid(x, P.exact_value(problem, x), np.ones(len(x)))
    t = np.linspace(0.0, problem.T, resolution)
    x = np.linspace(problem.space_lo[0], problem.space_hi[0], resolution)
    pts = _mesh(t, x)
    w = np.full(resolution, x[1] - x[0])
    w[0] = w[-1] = 0.5 * (x[1] - x[0])
    return TestGrid(pts, P.exact_value(problem, pts), w, resolution)


def error_from_values(pred: np.ndarray, grid: TestGrid, metric: str) -> float:
    diff = np.asarray(pred) - grid.exact
    if metric == "linf_l2":
        per_time = np.sqrt((diff.reshape(grid.n_times, -1) ** 2 * grid.weights).sum(axis=1))
        return float(per_time.max())
    if metric == "relative_l2":
        w = np.tile(grid.weights, grid.n_times)
        return float(np.sqrt((w * diff ** 2).sum() / (w * grid.exact ** 2).sum()))
    raise ValueError(f"unknown metric {metric!r}")


def test_error(params, problem: ProblemDef, metric: str, grid: TestGrid | None = None) -> float:
    """L-infinity-in-time L2-in-space error, or relative L2 error, against the reference.

    ``params`` is MlpParams or any callable mapping (N, d) points to values.
    """
    if grid is None:
        if problem.kind == "fokker_planck":
            raise ValueError("Fokker-Planck test error needs a reference grid")
        grid = make_test_grid(problem)
    pred = params(grid.points) if callable(params) else evaluate(params, grid.points)
    return error_from_values(pred, grid, metric)


test_error.__test__ = False


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _sampling_seed(plan: SamplingPlan, seed: int) -> int:
    return plan.seed if plan.seed is not None else 1_000_003 * seed + 17


def train(config: TrainConfig, callback: Callable | None = None, test_grid: TestGrid | None = None) -> TrainRecord:
    """Adam on the chosen loss from a seeded uniform initialization.

    Test error is evaluated every ``eval_every`` epochs and every epoch once
    it is within ``near_factor`` of the threshold. ``callback(epoch, batch,
    params)`` runs before each update.
    """
    config.validate()
    problem = P.get_problem(config.problem)
    variant = get_variant(config.loss)
    arch = config.architecture(problem)
    plan = config.plan(problem)
    metric = config.default_metric(problem)
    if test_grid is None:
        grid_file = reference.ReferenceGrid.load(config.reference) if config.reference else None
        test_grid = make_test_grid(problem, config.test_resolution, grid_file)

    start = time.perf_counter()
    params = init_uniform(arch, config.seed)
    state = AdamState.zeros(params.size(), config.learning_rate(problem), config.beta1, config.beta2, config.eps)
    sseed = _sampling_seed(plan, config.seed)
    rng = np.random.default_rng(sseed)
    batch = make_fixed_grid(problem, plan.n_t, plan.n_x, plan.n_b, plan.n_v, sseed) if plan.mode == "fixed" else None

    losses: list[float] = []
    eval_epochs = [0]
    errors = [error_from_values(evaluate(params, test_grid.points), test_grid, metric)]
    reached = 0 if config.threshold is not None and errors[0] <= config.threshold else None
    diverged, reason = False, None

    for epoch in range(1, config.epochs + 1):
        if reached is not None and config.stop_at_threshold:
            break
        if plan.mode == "iterative":
            batch = resample_uniform(problem, plan.n_points, rng, plan.n_boundary)
        if callback is not None:
            callback(epoch, batch, params)
        tape = Tape()
        field = NetworkField(params.on_tape(tape), tape, problem.axes)
        loss = total_loss(field, problem, batch, variant)
        loss_value = float(value_of(loss))
        losses.append(loss_value)
        if not math.isfinite(loss_value):
            diverged, reason = True, f"non-finite loss at epoch {epoch}"
            break
        try:
            grad = param_gradient(tape, loss)
        finally:
            tape.clear()
        try:
            params, state = adam_step(state, params, grad)
        except NonFiniteGradientError as exc:
            diverged, reason = True, str(exc)
            break

        near = config.threshold is not None and errors[-1] <= config.near_factor * config.threshold
        if epoch % config.eval_every == 0 or near or epoch == config.epochs:
            err = error_from_values(evaluate(params, test_grid.points), test_grid, metric)
            eval_epochs.append(epoch)
            errors.append(err)
            if not math.isfinite(err) or err > DIVERGENCE_LIMIT:
                diverged, reason = True, f"test error {err:.3e} at epoch {epoch}"
                break
            if reached is None and config.threshold is not None and err <= config.threshold:
                reached = epoch

    return TrainRecord(
        config=config.to_dict(),
        loss=losses,
        eval_epochs=eval_epochs,
        test_error=errors,
        epochs_to_threshold=reached,
        final_error=errors[-1],
        seconds=time.perf_counter() - start,
        diverged=diverged,
        diverge_reason=reason,
        params=params,
    )


def epochs_to(record: TrainRecord, threshold: float) -> int | None:
    """First evaluated epoch whose test error is at or below ``threshold``."""
    for e, err in zip(record.eval_epochs, record.test_error):
        if err <= threshold:
            return e
    return None


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepResult:
    records: list[TrainRecord]
    summary: dict


def _run_seed(args):
    config, seed = args
    rec = train(replace(config, seed=seed))
    return rec


def censored_epochs(record: TrainRecord) -> int:
    """Epochs to threshold, or the epoch budget when the threshold was never reached."""
    if record.epochs_to_threshold is not None:
        return record.epochs_to_threshold
    return int(record.config["epochs"])


def aggregate(records: list[TrainRecord], bins: int = 10) -> dict:
    done = [r for r in records if not r.diverged]
    reached = [r.epochs_to_threshold for r in done if r.epochs_to_threshold is not None]
    finals = [r.final_error for r in done]
    out = {
        "n_runs": len(records),
        "n_diverged": len(records) - len(done),
        "n_reached": len(reached),
        "epochs_mean": float(np.mean(reached)) if reached else None,
        "epochs_std": float(np.std(reached)) if reached else None,
        "epochs_censored_mean": float(np.mean([censored_epochs(r) for r in done])) if done else None,
        "final_error_mean": float(np.mean(finals)) if finals else None,
        "final_error_std": float(np.std(finals)) if finals else None,
        "seconds_mean": float(np.mean([r.seconds for r in done])) if done else None,
    }
    if reached:
        counts, edges = np.histogram(reached, bins=bins)
        out["histogram"] = [(float(edges[i]), float(edges[i + 1]), int(c)) for i, c in enumerate(counts)]
    else:
        out["histogram"] = []
    return out


def sweep(config: TrainConfig, n_seeds: int, jobs: int = 1, base_seed: int | None = None) -> SweepResult:
    """Independent runs for seeds base..base+n-1, optionally in worker processes."""
    if n_seeds < 1:
        raise ValueError("n_seeds must be at least 1")
    config.validate()
    base = config.seed if base_seed is None else base_seed
    tasks = [(config, base + i) for i in range(n_seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_seed, tasks))
    else:
        records = [_run_seed(t) for t in tasks]
    return SweepResult(records, aggregate(records))


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def write_record(record: TrainRecord, out_dir: str | Path, stem: str, checkpoint: bool = True) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if checkpoint and record.params is not None:
        ck = out / f"{stem}.params.json"
        save_checkpoint(record.params, ck)
        record.checkpoint = ck.name
    path = out / f"{stem}.json"
    path.write_text(json.dumps(record.to_dict(), indent=1))
    errors = dict(zip(record.eval_epochs, record.test_error))
    with open(out / f"{stem}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "test_error"])
        for epoch in range(0, len(record.loss) + 1):
            loss = record.loss[epoch - 1] if epoch >= 1 else ""
            err = errors.get(epoch, "")
            w.writerow([epoch, repr(loss) if loss != "" else "", repr(err) if err != "" else ""])
    return path


def read_record(path: str | Path) -> TrainRecord:
    return TrainRecord.from_dict(json.loads(Path(path).read_text()))


def write_sweep(result: SweepResult, out_dir: str | Path, prefix: str) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = out / f"{prefix}_summary.csv"
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "epochs_to_threshold", "final_error", "seconds", "diverged"])
        for r in result.records:
            w.writerow([r.seed, "" if r.epochs_to_threshold is None else r.epochs_to_threshold,
                        repr(r.final_error), f"{r.seconds:.3f}", int(r.diverged)])
    hist = out / f"{prefix}_histogram.csv"
    with open(hist, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right", "count"])
        for left, right, count in result.summary["histogram"]:
            w.writerow([repr(left), repr(right), count])
    return summary, hist
