"""Fully-connected tanh networks: parameters, initialization, evaluation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import JetValue, Tape, forward_jet


@dataclass(frozen=True)
class Architecture:
    widths: tuple[int, ...]

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 3:
            raise ValueError(f"need input, at least one hidden layer and output; got {widths}")
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be positive: {widths}")
        if widths[-1] != 1:
            raise ValueError(f"output width must be 1 (scalar field); got {widths[-1]}")

    @classmethod
    def parse(cls, text: str) -> "Architecture":
        """'2-64-64-1' -> Architecture((2, 64, 64, 1))."""
        return cls(tuple(int(p) for p in text.split("-")))

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    def __str__(self) -> str:
        return "-".join(str(w) for w in self.widths)


@dataclass
class MlpParams:
    arch: Architecture
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int | None = None

    def __post_init__(self):
        if len(self.weights) != len(self.arch.widths) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("layer count does not match architecture")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.arch.widths[k], self.arch.widths[k + 1])
            if w.shape != shape or b.shape != (shape[1],):
                raise ValueError(f"layer {k}: weight {w.shape}, bias {b.shape}; expected {shape}")

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in slot order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def with_flat(self, flat: np.ndarray) -> "MlpParams":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.size(),):
            raise ValueError(f"flat vector has shape {flat.shape}, need ({self.size()},)")
        arrays, pos = [], 0
        for a in self.arrays():
            arrays.append(flat[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        return MlpParams(self.arch, arrays[0::2], arrays[1::2], self.seed)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def on_tape(self, tape: Tape) -> "TapedParams":
        ws, bs = [], []
        for w, b in zip(self.weights, self.biases):
            ws.append(tape.parameter(w))
            bs.append(tape.parameter(b))
        return TapedParams(self.arch, ws, bs)


@dataclass
class TapedParams:
    """Parameters registered as slots on a tape (same slot order as MlpParams.arrays)."""

    arch: Architecture
    weights: list
    biases: list


def init_uniform(arch: Architecture, seed: int) -> MlpParams:
    """Weights and biases i.i.d. uniform on +-1/sqrt(fan_in), layer by layer."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(arch.widths[:-1], arch.widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(arch, weights, biases, seed)


def evaluate(params: MlpParams, x) -> np.ndarray | float:
    """Plain forward pass; x is one coordinate vector or an (N, d) array."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.ndim != 2 or a.shape[1] != params.arch.input_dim:
        raise ValueError(f"input has shape {x.shape}; network expects {params.arch.input_dim} coordinates per point")
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        a = np.tanh(a @ w + b)
    out = (a @ params.weights[-1] + params.biases[-1])[:, 0]
    return float(out[0]) if single else out


def eval_derivs(params, x, request, tape: Tape | None = None, axes=None) -> JetValue:
    return forward_jet(params, x, request, tape=tape, axes=axes)


def save_checkpoint(params: MlpParams, path: str | Path) -> None:
    doc = {
        "architecture": list(params.arch.widths),
        "seed": params.seed,
        "layers": [
            {"weight": w.tolist(), "bias": b.tolist()} for w, b in zip(params.weights, params.biases)
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> MlpParams:
    doc = json.loads(Path(path).read_text())
    arch = Architecture(tuple(doc["architecture"]))
    weights = [np.array(layer["weight"], dtype=np.float64).reshape(arch.widths[k], arch.widths[k + 1])
               for k, layer in enumerate(doc["layers"])]
    biases = [np.array(layer["bias"], dtype=np.float64) for layer in doc["layers"]]
    return MlpParams(arch, weights, biases, doc.get("seed"))
