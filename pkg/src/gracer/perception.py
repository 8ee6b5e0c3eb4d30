"""Perception backends producing {x, v}: ground-truth oracle, noisy oracle, regressor.

The trainable backend is a from-scratch MLP (flatten -> ReLU hidden layers ->
tanh/tanh/sigmoid outputs) trained by plain gradient descent on the weighted
squared loss |x - x_g|^2 + gamma (v - v_g)^2. It exposes the usual estimator
surface (fit / predict / get_params / set_params) so it composes with the wider
ecosystem, plus raster-level helpers for the closed-loop stack.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import QuadState, RngStream, Track, clamp
from .expert import ExpertConfig, Label, expert_label, gate_passage_times
from .render import Raster
from .trajectory import Trajectory

CHECKPOINT_MAGIC = b"GRCM1"


@dataclass(frozen=True)
class Prediction:
    x: tuple[float, float]
    v: float


def loss(pred: Prediction, label: Label, gamma: float) -> float:
    """Weighted squared error on image coordinates and normalized speed."""
    if not label.valid:
        raise ValueError("loss is defined for valid labels only")
    dx0 = pred.x[0] - label.x_g[0]
    dx1 = pred.x[1] - label.x_g[1]
    dv = pred.v - label.v_g
    return dx0 * dx0 + dx1 * dx1 + gamma * dv * dv


# --------------------------------------------------------------------------
# oracle backends


@dataclass
class ExpertContext:
    """Privileged observation handed to non-raster backends by the simulator."""

    state: QuadState
    last_gate_index: int
    next_gate_index: int
    gate_offsets: np.ndarray | None = None
    # offsets evaluated a short lead time ahead, for aiming at moving gates
    gate_offsets_ahead: np.ndarray | None = None


def _smoothstep(x: float) -> float:
    x = clamp(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


class OraclePerception:
    """Expert labels served as predictions; remembers the last valid output.

    With moving gates the goal point is shifted onto the displaced position of
    the gate it approaches (ramped in over the approach, evaluated a short lead
    time ahead), standing in for perfect perception of the moving scene.
    """

    needs_raster = False
    aim_lead_s = 0.15

    def __init__(self, track: Track, traj: Trajectory, cfg: ExpertConfig):
        self.track = track
        self.traj = traj
        self.cfg = cfg
        self.gate_times = gate_passage_times(track, traj)
        self._last = Prediction(x=(0.0, 0.0), v=0.2)

    def predict(self, ctx: ExpertContext) -> Prediction:
        from .core import camera_pose_from_state, project_to_image
        from .trajectory import advance_along, project_onto
        from .expert import d_train

        state = ctx.state
        t_star, _, speed_at = project_onto(self.traj, state.position)

        def center(i: int):
            c = self.track.gates[i].center
            if ctx.gate_offsets is not None:
                c = c + ctx.gate_offsets[i]
            return c

        s_last = center(ctx.last_gate_index) - state.position
        s_next = center(ctx.next_gate_index) - state.position
        d = d_train(s_last, s_next, self.cfg)

        brake = 0.0
        if ctx.gate_offsets is None:
            p_goal = advance_along(self.traj, t_star, d)
        else:
            # moving gates: blend the static advance point into a direct aim at
            # the displaced opening (at its estimated arrival-time position)
            ahead = (
                ctx.gate_offsets_ahead
                if ctx.gate_offsets_ahead is not None
                else ctx.gate_offsets
            )
            gate = self.track.gates[ctx.next_gate_index]
            # hold the advance point at the static gate (measured from the
            # projection, as advance_along does), then displace it by the smooth
            # field interpolating the passed gate's offset into the next gate's
            # arrival-time offset, so transfers spread over the whole gap
            p_closest = self.traj.eval(t_star, 0)
            d_gate = float(np.linalg.norm(gate.center - p_closest))
            d_eff = max(self.cfg.d_min_train, min(d, d_gate + 0.8))
            p_goal = advance_along(self.traj, t_star, d_eff)
            lam = self._cursor_progress(t_star, ctx.last_gate_index, ctx.next_gate_index)
            s = _smoothstep(min(1.0, lam / 0.85))
            # climbs fight gravity, so the vertical component engages earlier
            s_z = _smoothstep(min(1.0, lam / 0.45))
            off_prev = ctx.gate_offsets[ctx.last_gate_index]
            off_next = ahead[ctx.next_gate_index]
            blend = (1.0 - s) * off_prev + s * off_next
            blend[2] = (1.0 - s_z) * off_prev[2] + s_z * off_next[2]
            p_goal = p_goal + blend
            # terminal guidance: counter the ballistic crossing miss, which the
            # bandwidth-limited receding horizon cannot absorb on its own
            # slow down in proportion to how far the opening sits off the line
            displacement = float(np.linalg.norm(ahead[ctx.next_gate_index]))
            brake = 0.2 * s * min(1.0, displacement / gate.base_size)
            n_hat = gate.normal()
            plane_pt = gate.center + ahead[ctx.next_gate_index]
            gap = float((plane_pt - state.position) @ n_hat)
            closing = max(float(state.velocity @ n_hat), 1.0)
            t_go = gap / closing
            if 0.0 < t_go < 1.0:
                p_pred = (
                    state.position
                    + state.velocity * t_go
                    + 0.5 * state.acceleration * t_go * t_go
                )
                missvec = p_pred - plane_pt
                lat = gate.lateral()
                e_u = float(missvec @ lat)
                e_w = float(missvec[2])
                mag = math.hypot(e_u, e_w)
                scale = min(1.0, 3.5 / max(mag, 1e-9))
                g_w = _smoothstep((1.0 - t_go) / 0.6)
                p_goal = p_goal - (1.0 * g_w * scale) * (
                    e_u * lat + np.array([0.0, 0.0, e_w])
                )

        pose = camera_pose_from_state(state, self.cfg.camera)
        x = project_to_image(p_goal, pose, self.cfg.camera)
        v_g = clamp(speed_at / self.traj.v_max_achieved, 0.0, 1.0) * (1.0 - brake)
        if x is None:
            return self._last
        pred = Prediction(x=x, v=v_g)
        self._last = pred
        return pred

    def _cursor_progress(self, t_star: float, last_gate: int, next_gate: int) -> float:
        """Vehicle progress in [0, 1] between the cursor gates, by arc time."""
        total = self.traj.total_duration
        t_prev = self.gate_times[last_gate]
        t_next = self.gate_times[next_gate]
        span = (t_next - t_prev) % total
        if span <= 1e-9:
            return 1.0
        return ((t_star - t_prev) % total) / span


class NoisyPerception:
    """Wraps a backend with zero-mean Gaussian output noise, then clamps."""

    def __init__(self, inner, sigma_x: float, sigma_v: float, stream: RngStream):
        self.inner = inner
        self.sigma_x = sigma_x
        self.sigma_v = sigma_v
        self._gen = stream.generator()

    @property
    def needs_raster(self):
        return self.inner.needs_raster

    def predict(self, obs) -> Prediction:
        pred = self.inner.predict(obs)
        nx = self._gen.normal(0.0, 1.0, size=2)
        nv = self._gen.normal(0.0, 1.0)
        return Prediction(
            x=(
                clamp(pred.x[0] + self.sigma_x * nx[0], -1.0, 1.0),
                clamp(pred.x[1] + self.sigma_x * nx[1], -1.0, 1.0),
            ),
            v=clamp(pred.v + self.sigma_v * nv, 0.0, 1.0),
        )


# --------------------------------------------------------------------------
# trainable regressor


@dataclass(frozen=True)
class RegressorConfig:
    capacity_factor: float = 1.0
    input_width: int = 64
    input_height: int = 48
    input_channels: int = 3
    hidden_widths_base: tuple[int, ...] = (64, 32)
    gamma: float = 0.1
    learning_rate: float = 1e-3
    epochs_per_round: int = 10

    def __post_init__(self):
        if self.capacity_factor <= 0:
            raise ValueError("capacity_factor must be positive")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")

    @property
    def input_dim(self) -> int:
        return self.input_width * self.input_height * self.input_channels


def capacity_widths(cfg: RegressorConfig) -> list[int]:
    """Hidden widths scaled by the capacity factor, rounded up, floored at 1."""
    return [max(1, math.ceil(cfg.capacity_factor * b)) for b in cfg.hidden_widths_base]


def check_raster_batch(X, cfg: RegressorConfig) -> np.ndarray:
    """Validate and normalize a raster batch to float64 rows in [0, 1]."""
    X = np.asarray(X)
    d = cfg.input_dim
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim == 4:
        if X.shape[1:] != (cfg.input_height, cfg.input_width, cfg.input_channels):
            raise ValueError(f"raster batch shape {X.shape} does not match config")
        X = X.reshape(X.shape[0], -1)
    if X.ndim != 2 or X.shape[1] != d:
        raise ValueError(f"expected (n, {d}) inputs, got {X.shape}")
    if X.dtype == np.uint8:
        return X.astype(np.float64) / 255.0
    X = X.astype(np.float64)
    if X.size and (X.min() < -1e-9 or X.max() > 1.0 + 1e-9):
        raise ValueError("float inputs must already be normalized to [0, 1]")
    return X


def check_label_array(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[None, :]
    if y.ndim != 2 or y.shape[1] != 3:
        raise ValueError(f"labels must be (n, 3) [x1, x2, v], got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("labels must be finite")
    if y.size and (np.abs(y[:, :2]).max() > 1 + 1e-9 or y[:, 2].min() < -1e-9 or y[:, 2].max() > 1 + 1e-9):
        raise ValueError("labels outside the normalized output ranges")
    return y


class WaypointRegressor:
    """MLP regressor mapping rasters to (x1, x2, v); estimator-style interface.

    Parameters mirror RegressorConfig; fit() continues training from the current
    weights so round-based retraining accumulates.
    """

    def __init__(
        self,
        capacity_factor: float = 1.0,
        input_width: int = 64,
        input_height: int = 48,
        input_channels: int = 3,
        hidden_widths_base: tuple[int, ...] = (64, 32),
        gamma: float = 0.1,
        learning_rate: float = 1e-3,
        epochs_per_round: int = 10,
        batch_size: int = 256,
        seed: int = 0,
    ):
        self.capacity_factor = capacity_factor
        self.input_width = input_width
        self.input_height = input_height
        self.input_channels = input_channels
        self.hidden_widths_base = tuple(hidden_widths_base)
        self.gamma = gamma
        self.learning_rate = learning_rate
        self.epochs_per_round = epochs_per_round
        self.batch_size = batch_size
        self.seed = seed
        self.weights_: list[np.ndarray] | None = None
        self.biases_: list[np.ndarray] | None = None
        self._shuffle_gen = None

    # -- estimator plumbing ------------------------------------------------

    _param_names = (
        "capacity_factor",
        "input_width",
        "input_height",
        "input_channels",
        "hidden_widths_base",
        "gamma",
        "learning_rate",
        "epochs_per_round",
        "batch_size",
        "seed",
    )

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names}

    def set_params(self, **params) -> "WaypointRegressor":
        for name, value in params.items():
            if name not in self._param_names:
                raise ValueError(f"unknown parameter {name!r}")
            setattr(self, name, value)
        self.weights_ = None
        self.biases_ = None
        return self

    @property
    def config(self) -> RegressorConfig:
        return RegressorConfig(
            capacity_factor=self.capacity_factor,
            input_width=self.input_width,
            input_height=self.input_height,
            input_channels=self.input_channels,
            hidden_widths_base=self.hidden_widths_base,
            gamma=self.gamma,
            learning_rate=self.learning_rate,
            epochs_per_round=self.epochs_per_round,
        )

    # -- initialization ------------------------------------------------------

    def _layer_sizes(self) -> list[int]:
        return [self.config.input_dim, *capacity_widths(self.config), 3]

    def ensure_initialized(self) -> None:
        if self.weights_ is not None:
            return
        gen = RngStream(seed=self.seed, stream_id=101).generator()
        sizes = self._layer_sizes()
        self.weights_ = []
        self.biases_ = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            scale = math.sqrt(2.0 / fan_in)
            self.weights_.append(gen.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases_.append(np.zeros(fan_out))
        self._shuffle_gen = RngStream(seed=self.seed, stream_id=202).generator()

    # -- forward / backward ----------------------------------------------------

    def _forward(self, X: np.ndarray):
        self.ensure_initialized()
        acts = [X]
        h = X
        n_layers = len(self.weights_)
        for i in range(n_layers - 1):
            h = np.maximum(h @ self.weights_[i] + self.biases_[i], 0.0)
            acts.append(h)
        z = h @ self.weights_[-1] + self.biases_[-1]
        out = np.empty_like(z)
        out[:, 0] = np.tanh(z[:, 0])
        out[:, 1] = np.tanh(z[:, 1])
        out[:, 2] = 1.0 / (1.0 + np.exp(-z[:, 2]))
        acts.append(out)
        return acts

    def _loss_and_grads(self, X: np.ndarray, y: np.ndarray):
        acts = self._forward(X)
        out = acts[-1]
        n = X.shape[0]
        res = out - y
        sample_loss = res[:, 0] ** 2 + res[:, 1] ** 2 + self.gamma * res[:, 2] ** 2
        mean_loss = float(np.mean(sample_loss))

        # d(mean loss)/d(out)
        d_out = np.empty_like(out)
        d_out[:, 0] = 2.0 * res[:, 0] / n
        d_out[:, 1] = 2.0 * res[:, 1] / n
        d_out[:, 2] = 2.0 * self.gamma * res[:, 2] / n
        # through output activations
        d_z = np.empty_like(d_out)
        d_z[:, 0] = d_out[:, 0] * (1.0 - out[:, 0] ** 2)
        d_z[:, 1] = d_out[:, 1] * (1.0 - out[:, 1] ** 2)
        d_z[:, 2] = d_out[:, 2] * out[:, 2] * (1.0 - out[:, 2])

        grads_w = [None] * len(self.weights_)
        grads_b = [None] * len(self.biases_)
        delta = d_z
        for i in range(len(self.weights_) - 1, -1, -1):
            grads_w[i] = acts[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights_[i].T) * (acts[i] > 0.0)
        return mean_loss, grads_w, grads_b

    def _apply(self, grads_w, grads_b, lr: float) -> None:
        for i in range(len(self.weights_)):
            self.weights_[i] -= lr * grads_w[i]
            self.biases_[i] -= lr * grads_b[i]

    # -- public training / inference -------------------------------------------

    def fit(self, X, y, epochs: int | None = None) -> "WaypointRegressor":
        """Gradient-descent training; continues from current weights when warm."""
        X = check_raster_batch(X, self.config)
        y = check_label_array(y)
        if len(X) != len(y):
            raise ValueError("X and y length mismatch")
        if len(X) == 0:
            raise ValueError("empty training set")
        self.ensure_initialized()
        n_epochs = self.epochs_per_round if epochs is None else epochs
        n = len(X)
        for _ in range(n_epochs):
            order = self._shuffle_gen.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = order[start : start + self.batch_size]
                mean_loss, gw, gb = self._loss_and_grads(X[idx], y[idx])
                if not math.isfinite(mean_loss):
                    raise FloatingPointError(
                        f"non-finite training loss {mean_loss}; lower the learning rate"
                    )
                self._apply(gw, gb, self.learning_rate)
        return self

    def predict(self, X) -> np.ndarray:
        X = check_raster_batch(X, self.config)
        return self._forward(X)[-1]

    def predict_raster(self, raster: Raster) -> Prediction:
        row = raster.pixels.reshape(1, -1)
        out = self.predict(row)[0]
        return Prediction(
            x=(clamp(float(out[0]), -1.0, 1.0), clamp(float(out[1]), -1.0, 1.0)),
            v=clamp(float(out[2]), 0.0, 1.0),
        )

    def mean_loss(self, X, y) -> float:
        X = check_raster_batch(X, self.config)
        y = check_label_array(y)
        out = self._forward(X)[-1]
        res = out - y
        return float(
            np.mean(res[:, 0] ** 2 + res[:, 1] ** 2 + self.gamma * res[:, 2] ** 2)
        )

    # -- flat parameter access (gradient checks, checkpoints) ---------------------

    def get_flat_params(self) -> np.ndarray:
        self.ensure_initialized()
        parts = []
        for w, b in zip(self.weights_, self.biases_):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def set_flat_params(self, flat: np.ndarray) -> None:
        self.ensure_initialized()
        pos = 0
        for i in range(len(self.weights_)):
            w = self.weights_[i]
            b = self.biases_[i]
            self.weights_[i] = flat[pos : pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases_[i] = flat[pos : pos + b.size].copy()
            pos += b.size
        if pos != len(flat):
            raise ValueError("flat parameter vector length mismatch")

    def flat_gradient(self, X, y) -> tuple[float, np.ndarray]:
        X = check_raster_batch(X, self.config)
        y = check_label_array(y)
        mean_loss, gw, gb = self._loss_and_grads(X, y)
        parts = []
        for w, b in zip(gw, gb):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return mean_loss, np.concatenate(parts)

    # -- checkpoint io ---------------------------------------------------------

    def save(self, path) -> None:
        self.ensure_initialized()
        cfg = {name: getattr(self, name) for name in self._param_names}
        cfg["hidden_widths_base"] = list(cfg["hidden_widths_base"])
        blob = json.dumps(cfg, sort_keys=True).encode("utf-8")
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)
            for w, b in zip(self.weights_, self.biases_):
                f.write(w.astype("<f8").tobytes())
                f.write(b.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "WaypointRegressor":
        with open(path, "rb") as f:
            magic = f.read(len(CHECKPOINT_MAGIC))
            if magic != CHECKPOINT_MAGIC:
                raise ValueError(f"not a model checkpoint: bad magic {magic!r}")
            (blob_len,) = struct.unpack("<Q", f.read(8))
            cfg = json.loads(f.read(blob_len).decode("utf-8"))
            cfg["hidden_widths_base"] = tuple(cfg["hidden_widths_base"])
            model = cls(**cfg)
            model.ensure_initialized()
            for i in range(len(model.weights_)):
                w = model.weights_[i]
                data = f.read(w.size * 8)
                model.weights_[i] = np.frombuffer(data, dtype="<f8").reshape(w.shape).copy()
                b = model.biases_[i]
                data = f.read(b.size * 8)
                model.biases_[i] = np.frombuffer(data, dtype="<f8").copy()
            trailing = f.read(1)
            if trailing:
                raise ValueError("checkpoint has trailing bytes")
        return model


def train_step(model: WaypointRegressor, batch, lr: float):
    """One full-batch gradient step on (Raster, Label) pairs; returns the pre-step loss."""
    if not batch:
        raise ValueError("empty batch")
    X = np.stack([r.pixels.reshape(-1) for r, _ in batch])
    y = np.array([[lab.x_g[0], lab.x_g[1], lab.v_g] for _, lab in batch])
    for _, lab in batch:
        if not lab.valid:
            raise ValueError("train_step requires valid labels")
    Xn = check_raster_batch(X, model.config)
    yn = check_label_array(y)
    mean_loss, gw, gb = model._loss_and_grads(Xn, yn)
    if not math.isfinite(mean_loss):
        raise FloatingPointError(f"non-finite training loss {mean_loss}")
    model._apply(gw, gb, lr)
    return mean_loss


class RegressorPerception:
    """Raster-consuming backend around a trained regressor."""

    needs_raster = True

    def __init__(self, model: WaypointRegressor):
        self.model = model

    def predict(self, raster: Raster) -> Prediction:
        return self.model.predict_raster(raster)
