"""Minimal dense/GRU neural kernel with analytic gradients.

Everything is float64 numpy, value-semantic, and bias-free: a GRU cell is six
weight matrices (reset, update, candidate; each with an input block W and a
recurrent block U) plus a dense readout.  Forward passes accept either a
single vector ``(d,)`` or a batch ``(B, d)``; gradients are accumulated over
all leading axes.  The backward pass is hand-derived backprop through time,
checked against finite differences in the test suite.

For speed, sequence passes compute all input-side projections in one matrix
product per gate and defer the parameter-gradient products to a single
flattened pass over every (step, batch) pair; the recurrent chain itself is
unavoidably sequential.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

import numpy as np


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class GruCellParams:
    """Weights of one GRU cell: three gate blocks of identical shape."""

    w_reset: np.ndarray   # (n_hidden, d_in)
    u_reset: np.ndarray   # (n_hidden, n_hidden)
    w_update: np.ndarray
    u_update: np.ndarray
    w_cand: np.ndarray
    u_cand: np.ndarray

    def __post_init__(self):
        n_h, d_in = self.w_reset.shape
        for name, arr in self.items():
            want = (n_h, d_in) if name.startswith("w_") else (n_h, n_h)
            if arr.shape != want:
                raise ValueError(f"{name} has shape {arr.shape}, expected {want}")

    @property
    def hidden_dim(self) -> int:
        return self.w_reset.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_reset.shape[1]

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def copy(self) -> "GruCellParams":
        return GruCellParams(*(arr.copy() for _, arr in self.items()))

    @classmethod
    def zeros(cls, d_in: int, n_hidden: int) -> "GruCellParams":
        w = lambda: np.zeros((n_hidden, d_in))
        u = lambda: np.zeros((n_hidden, n_hidden))
        return cls(w(), u(), w(), u(), w(), u())


def init_gru(d_in: int, n_hidden: int, rng: np.random.Generator) -> GruCellParams:
    """Uniform init in [-1/sqrt(n_hidden), 1/sqrt(n_hidden)]; keeps gate
    pre-activations O(1) for O(1) inputs."""
    b = 1.0 / np.sqrt(n_hidden)
    w = lambda: rng.uniform(-b, b, size=(n_hidden, d_in))
    u = lambda: rng.uniform(-b, b, size=(n_hidden, n_hidden))
    return GruCellParams(w(), u(), w(), u(), w(), u())


def init_dense(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    b = 1.0 / np.sqrt(cols)
    return rng.uniform(-b, b, size=(rows, cols))


@dataclass
class GruStepCache:
    """Intermediates of one cell step."""

    x: np.ndarray
    h_prev: np.ndarray
    r: np.ndarray
    z: np.ndarray
    c: np.ndarray  # candidate state (tanh output)


def gru_cell_forward(params: GruCellParams, x, h_prev):
    """One GRU step.

    r = sigmoid(W_r x + U_r h);  z = sigmoid(W_z x + U_z h)
    c = tanh(W_c x + U_c (h * r));  h' = (1 - z) * c + z * h

    ``x``: (..., d_in), ``h_prev``: (..., n_hidden).  Returns (h_next, cache).
    """
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x.shape[-1] != params.input_dim:
        raise ValueError(f"input dim {x.shape[-1]} != {params.input_dim}")
    if h_prev.shape[-1] != params.hidden_dim:
        raise ValueError(f"hidden dim {h_prev.shape[-1]} != {params.hidden_dim}")
    r = sigmoid(x @ params.w_reset.T + h_prev @ params.u_reset.T)
    z = sigmoid(x @ params.w_update.T + h_prev @ params.u_update.T)
    c = np.tanh(x @ params.w_cand.T + (h_prev * r) @ params.u_cand.T)
    h_next = c + z * (h_prev - c)
    return h_next, GruStepCache(x, h_prev, r, z, c)


@dataclass
class GruTape:
    """Stacked intermediates of an unrolled sequence; leading axis is time."""

    xs: np.ndarray       # (K, ..., d_in)
    h_prev: np.ndarray   # (K, ..., n_hidden), hidden state entering each step
    r: np.ndarray
    z: np.ndarray
    c: np.ndarray
    h_final: np.ndarray  # (..., n_hidden)

    def __len__(self):
        return self.xs.shape[0]


def _project_inputs(params: GruCellParams, xs: np.ndarray):
    """Input-side pre-activations for all steps at once."""
    flat = xs.reshape(-1, xs.shape[-1])
    shape = xs.shape[:-1] + (params.hidden_dim,)
    return (
        (flat @ params.w_reset.T).reshape(shape),
        (flat @ params.w_update.T).reshape(shape),
        (flat @ params.w_cand.T).reshape(shape),
    )


def gru_sequence_forward(params: GruCellParams, out_weights: np.ndarray, inputs):
    """Unroll the cell over ``inputs`` (K, ..., d_in) from a zero hidden state
    and apply the dense readout: output = W_o h_K.  Returns (output, tape)."""
    xs = np.asarray(inputs, dtype=np.float64)
    if xs.ndim < 2 or xs.shape[0] < 1:
        raise ValueError("inputs must be a nonempty sequence of vectors")
    if xs.shape[-1] != params.input_dim:
        raise ValueError(f"input dim {xs.shape[-1]} != {params.input_dim}")
    if out_weights.shape[1] != params.hidden_dim:
        raise ValueError("readout width does not match hidden dim")
    ax_r, ax_z, ax_c = _project_inputs(params, xs)
    steps = xs.shape[0]
    hidden_shape = xs.shape[:-1] + (params.hidden_dim,)
    h_prev = np.empty(hidden_shape)
    rs = np.empty(hidden_shape)
    zs = np.empty(hidden_shape)
    cs = np.empty(hidden_shape)
    h = np.zeros(hidden_shape[1:])
    for t in range(steps):
        h_prev[t] = h
        r = sigmoid(ax_r[t] + h @ params.u_reset.T)
        z = sigmoid(ax_z[t] + h @ params.u_update.T)
        c = np.tanh(ax_c[t] + (h * r) @ params.u_cand.T)
        rs[t], zs[t], cs[t] = r, z, c
        h = c + z * (h - c)
    return h @ out_weights.T, GruTape(xs, h_prev, rs, zs, cs, h)


def gru_bptt(tape: GruTape, params: GruCellParams, dh_steps):
    """Backprop through time with per-step injected hidden-state gradients.

    ``dh_steps[t]`` (or None) is added to the gradient of step t's output
    hidden state.  Returns parameter gradients structured like ``params``.
    """
    if len(dh_steps) != len(tape):
        raise ValueError("one injected gradient slot per recorded step required")
    da_r = np.empty_like(tape.r)
    da_z = np.empty_like(tape.z)
    da_c = np.empty_like(tape.c)
    dh = np.zeros_like(tape.h_final)
    for t in reversed(range(len(tape))):
        inj = dh_steps[t]
        if inj is not None:
            dh = dh + inj
        r, z, c, h_prev = tape.r[t], tape.z[t], tape.c[t], tape.h_prev[t]
        dc = dh * (1.0 - z)
        dz = dh * (h_prev - c)
        gc = dc * (1.0 - c * c)
        gz = dz * z * (1.0 - z)
        dhr = gc @ params.u_cand           # grad w.r.t. (h_prev * r)
        dr = dhr * h_prev
        gr = dr * r * (1.0 - r)
        da_r[t], da_z[t], da_c[t] = gr, gz, gc
        dh = dh * z + gr @ params.u_reset + gz @ params.u_update + dhr * r
    flat = lambda a: a.reshape(-1, a.shape[-1])
    xs2, hp2 = flat(tape.xs), flat(tape.h_prev)
    fr, fz, fc = flat(da_r), flat(da_z), flat(da_c)
    return GruCellParams(
        w_reset=fr.T @ xs2, u_reset=fr.T @ hp2,
        w_update=fz.T @ xs2, u_update=fz.T @ hp2,
        w_cand=fc.T @ xs2, u_cand=fc.T @ flat(tape.h_prev * tape.r),
    )


def gru_sequence_backward(tape: GruTape, params: GruCellParams, out_weights: np.ndarray, output_grad):
    """Gradients of a scalar loss whose gradient at the readout is
    ``output_grad``.  Returns (gru_grads, out_weight_grad)."""
    output_grad = np.asarray(output_grad, dtype=np.float64)
    if output_grad.shape != tape.h_final.shape[:-1] + (out_weights.shape[0],):
        raise ValueError("output_grad shape does not match the forward pass")
    if tape.xs.shape[-1] != params.input_dim:
        raise ValueError("tape does not match params")
    og2 = output_grad.reshape(-1, output_grad.shape[-1])
    d_out = og2.T @ tape.h_final.reshape(-1, tape.h_final.shape[-1])
    dh_steps = [None] * (len(tape) - 1) + [output_grad @ out_weights]
    return gru_bptt(tape, params, dh_steps), d_out


def sgd_step(param: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    """Plain gradient step: param - lr * grad (new array)."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if param.shape != grad.shape:
        raise ValueError(f"shape mismatch {param.shape} vs {grad.shape}")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient entries")
    return param - lr * grad


def sgd_step_gru(params: GruCellParams, grads: GruCellParams, lr: float) -> GruCellParams:
    return GruCellParams(*(sgd_step(p, g, lr) for (_, p), (_, g) in zip(params.items(), grads.items())))


# ---------------------------------------------------------------------------
# checkpoint format: JSON with shape headers and row-major entry lists.
# json round-trips Python floats exactly, so load(save(x)) is bit-identical.

def save_arrays(path, arrays: dict, meta: dict | None = None) -> None:
    doc = {
        "meta": meta or {},
        "arrays": {
            name: {"shape": list(arr.shape), "data": np.asarray(arr, dtype=np.float64).ravel().tolist()}
            for name, arr in arrays.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_arrays(path):
    with open(path) as fh:
        doc = json.load(fh)
    arrays = {
        name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["arrays"].items()
    }
    return arrays, doc.get("meta", {})


def gru_to_arrays(params: GruCellParams, prefix: str = "") -> dict:
    return {prefix + name: arr for name, arr in params.items()}


def gru_from_arrays(arrays: dict, prefix: str = "") -> GruCellParams:
    names = [f.name for f in fields(GruCellParams)]
    return GruCellParams(*(arrays[prefix + n] for n in names))
