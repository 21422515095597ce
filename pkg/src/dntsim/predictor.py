"""Cloud-side GRU for next-state prediction.

The model maps the ``window`` most recent network states (positions of all
users, flattened to 2U reals) to the next state.  Coordinates pass through a
per-coordinate affine normalization (x - offset) / scale on the way in and
its inverse on the way out: raw coordinates up to 150 would saturate the
gates, and plain SGD at the default learning rate needs the standardized,
well-conditioned formulation to reach useful accuracy.  A fresh model
defaults to offset 0 and scale 150 (half the arena width); ``train``
re-estimates both from the training set unless told otherwise.

Training inputs come from recorded true trajectories; at run time the model
is fed twin states, which may contain its own past predictions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nncore
from .errors import DivergenceError
from .nncore import GruCellParams, gru_sequence_backward, gru_sequence_forward

LOSS_ABORT = 1e6
SCALE_FLOOR = 1e-3  # meters; keeps near-constant coordinates well-posed


@dataclass
class PredictorModel:
    gru: GruCellParams    # input dim 2U
    out: np.ndarray       # (2U, hidden)
    window: int
    offset: np.ndarray = None  # (2U,) coordinate shift
    scale: np.ndarray = None   # (2U,) coordinate divisor

    def __post_init__(self):
        dim = self.gru.input_dim
        if self.out.shape[0] != dim:
            raise ValueError("readout must produce one value per input coordinate")
        if self.window < 1:
            raise ValueError("window must be positive")
        if self.offset is None:
            self.offset = np.zeros(dim)
        if self.scale is None:
            self.scale = np.full(dim, 150.0)
        self.offset = np.broadcast_to(np.asarray(self.offset, dtype=np.float64), (dim,)).copy()
        self.scale = np.broadcast_to(np.asarray(self.scale, dtype=np.float64), (dim,)).copy()
        if np.any(self.scale <= 0):
            raise ValueError("scale entries must be positive")

    @property
    def num_users(self) -> int:
        return self.gru.input_dim // 2

    def copy(self) -> "PredictorModel":
        return PredictorModel(self.gru.copy(), self.out.copy(), self.window,
                              self.offset.copy(), self.scale.copy())

    def normalize(self, states):
        return (states - self.offset) / self.scale

    def denormalize(self, states):
        return states * self.scale + self.offset


def init_predictor(num_users: int, hidden: int, window: int,
                   rng: np.random.Generator, scale=150.0, offset=0.0) -> PredictorModel:
    """GRU blocks get the standard uniform init; the readout starts at zero
    so the untrained model predicts the normalization center rather than
    noise that must first be unlearned."""
    return PredictorModel(nncore.init_gru(2 * num_users, hidden, rng),
                          np.zeros((2 * num_users, hidden)),
                          window, np.asarray(offset) + np.zeros(2 * num_users),
                          np.asarray(scale) + np.zeros(2 * num_users))


def zero_predictor(num_users: int, hidden: int, window: int, scale=150.0) -> PredictorModel:
    return PredictorModel(GruCellParams.zeros(2 * num_users, hidden),
                          np.zeros((2 * num_users, hidden)), window,
                          np.zeros(2 * num_users), np.asarray(scale) + np.zeros(2 * num_users))


def _window_of(history, window: int) -> np.ndarray:
    """Last ``window`` states, left-padded by repeating the earliest one."""
    hist = np.asarray(history, dtype=np.float64)
    if hist.ndim == 3:   # (L, U, 2) -> (L, 2U)
        hist = hist.reshape(hist.shape[0], -1)
    if hist.ndim != 2 or hist.shape[0] < 1:
        raise ValueError("history must hold at least one state")
    if hist.shape[0] >= window:
        return hist[-window:]
    pad = np.repeat(hist[:1], window - hist.shape[0], axis=0)
    return np.concatenate([pad, hist], axis=0)


def predict_next(model: PredictorModel, history) -> np.ndarray:
    """One-step-ahead prediction from the most recent states; returns (U, 2)
    raw coordinates."""
    win = model.normalize(_window_of(history, model.window))
    y, _ = gru_sequence_forward(model.gru, model.out, win)
    return model.denormalize(y).reshape(model.num_users, 2)


def predict_batch(model: PredictorModel, inputs: np.ndarray) -> np.ndarray:
    """Predictions for pre-windowed raw inputs (S, K, 2U) -> (S, 2U)."""
    xs = model.normalize(np.transpose(inputs, (1, 0, 2)))
    y, _ = gru_sequence_forward(model.gru, model.out, xs)
    return model.denormalize(y)


def loss(pred, truth) -> float:
    """Half mean squared coordinate error: ||pred - truth||^2 / (2U)."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise ValueError("length mismatch")
    return float(np.sum((pred - truth) ** 2) / len(pred))


def build_windows(trajectories: np.ndarray, window: int):
    """Slice every trajectory into (window inputs, next-state target) pairs.

    ``trajectories``: (num_traj, traj_len, U, 2) raw coordinates.  Returns
    (inputs (S, window, 2U), targets (S, 2U)).
    """
    num_traj, traj_len, num_users, _ = trajectories.shape
    if traj_len < window + 1:
        raise ValueError(f"trajectories of length {traj_len} cannot yield "
                         f"windows of {window} states plus a target")
    flat = trajectories.reshape(num_traj, traj_len, 2 * num_users)
    per_traj = traj_len - window
    # (num_traj, per_traj + 1, window, 2U) sliding view; drop the last start
    slid = np.lib.stride_tricks.sliding_window_view(flat, window, axis=1)
    inputs = slid[:, :per_traj].transpose(0, 1, 3, 2).reshape(-1, window, 2 * num_users)
    targets = flat[:, window:].reshape(-1, 2 * num_users)
    return np.ascontiguousarray(inputs), np.ascontiguousarray(targets)


def fit_normalization(model: PredictorModel, inputs: np.ndarray,
                      targets: np.ndarray | None = None,
                      gain: float = 1.0) -> PredictorModel:
    """Set the model's affine normalization to standardize the given raw
    windows (and targets, when given) per coordinate; normalized values get
    standard deviation ``gain``.  Gains above 1 enlarge the hidden features
    and speed up SGD at a fixed learning rate, at the price of working
    deeper into the tanh."""
    model = model.copy()
    flat = inputs.reshape(-1, inputs.shape[-1])
    if targets is not None:
        flat = np.concatenate([flat, targets.reshape(-1, flat.shape[-1])])
    model.offset = flat.mean(axis=0)
    model.scale = np.maximum(flat.std(axis=0) / gain, SCALE_FLOOR)
    return model


def train(model: PredictorModel, inputs: np.ndarray, targets: np.ndarray,
          lr: float, batch_size: int, epochs: int, rng: np.random.Generator,
          standardize: bool = True, gain: float = 2.0):
    """Mini-batch SGD on the prediction loss.

    Each epoch shuffles the samples, averages gradients per batch, and steps
    all seven matrices.  Returns (trained model, per-epoch mean loss, in
    normalized units).  Raises DivergenceError if an epoch's loss exceeds
    1e6.  ``standardize=False`` keeps the model's current normalization.
    """
    if len(inputs) == 0:
        raise ValueError("empty training set")
    model = fit_normalization(model, inputs, targets, gain) if standardize else model.copy()
    # time-major contiguous layout so per-batch slices feed BLAS directly
    xs_all = np.ascontiguousarray(np.transpose(model.normalize(inputs), (1, 0, 2)))
    ys_all = model.normalize(targets)
    n = ys_all.shape[0]
    dim = ys_all.shape[1]
    curve = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            xs = xs_all[:, idx, :]  # (K, B, 2U)
            ys = ys_all[idx]
            pred, tape = gru_sequence_forward(model.gru, model.out, xs)
            err = pred - ys
            total += float(np.sum(err ** 2) / dim)
            # d/d pred of mean_i ||err_i||^2 / (2U)
            out_grad = err / (dim / 2) / len(idx)
            grads, d_out = gru_sequence_backward(tape, model.gru, model.out, out_grad)
            model.gru = nncore.sgd_step_gru(model.gru, grads, lr)
            model.out = nncore.sgd_step(model.out, d_out, lr)
        epoch_loss = total / n
        curve.append(epoch_loss)
        if not np.isfinite(epoch_loss) or epoch_loss > LOSS_ABORT:
            raise DivergenceError(f"predictor loss {epoch_loss} after epoch {len(curve)}")
    return model, curve


def evaluate_mse(model: PredictorModel, inputs: np.ndarray, targets: np.ndarray):
    """Per-user and aggregate positioning mean square error (raw units)."""
    pred = predict_batch(model, inputs)
    return _per_user_mse(pred, targets)


def persistence_mse(inputs: np.ndarray, targets: np.ndarray):
    """Baseline that predicts the last seen state."""
    return _per_user_mse(inputs[:, -1, :], targets)


def _per_user_mse(pred: np.ndarray, targets: np.ndarray):
    err = (pred - targets).reshape(len(targets), -1, 2)
    per_user = np.mean(np.sum(err ** 2, axis=2), axis=0)
    return per_user, float(per_user.mean())


def save_predictor(path, model: PredictorModel) -> None:
    arrays = nncore.gru_to_arrays(model.gru, "gru.")
    arrays["out"] = model.out
    arrays["offset"] = model.offset
    arrays["scale"] = model.scale
    nncore.save_arrays(path, arrays, meta={"kind": "predictor", "window": model.window})


def load_predictor(path) -> PredictorModel:
    arrays, meta = nncore.load_arrays(path)
    if meta.get("kind") != "predictor":
        raise ValueError(f"{path} is not a predictor checkpoint")
    return PredictorModel(nncore.gru_from_arrays(arrays, "gru."), arrays["out"],
                          int(meta["window"]), arrays["offset"], arrays["scale"])
