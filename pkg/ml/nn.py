"""
Recurrent Autoencoder
Numpy GRU encoder/decoder, MSE loss, Adam with milestone learning-rate decay,
dropout, early stopping, window scoring, a finite-difference gradient check
and a versioned model container.

Architecture (recurrent variant):
    window (l, D) → GRU(D→256) → dropout → GRU(256→64) → last state
    → repeated l times → dropout → GRU(64→64) → dropout → GRU(64→256)
    → dropout → per-timestep linear 256→D

The dense variant flattens the window and runs tanh dense layers
[256, 64, 256] before a linear l·D output layer.
"""

import io
import json
import time
import logging
import zipfile
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import psutil
from scipy.special import expit

from ml.error_handling import (
    ArgusError,
    CompatibilityError,
    ModelFormatError,
    ShapeMismatchError,
    TrainingError,
)

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
GATES = ("z", "r", "n")
ZIP_DATE = (1980, 1, 1, 0, 0, 0)

Params = Dict[str, np.ndarray]


class ModelVariant(str, Enum):
    RECURRENT = "recurrent"
    DENSE = "dense"


class StopReason(str, Enum):
    MAX_EPOCHS = "max-epochs"
    EARLY_STOP = "early-stop"


# ─── Configuration ────────────────────────────────────────────


@dataclass(frozen=True)
class TrainConfig:
    lr_start: float = 1e-3
    lr_floor: float = 1e-6
    lr_decay_factor: float = 0.1
    lr_milestones: Tuple[int, ...] = (5000, 15000, 25000)
    dropout: float = 0.3
    max_epochs: int = 35000
    batch_size: int = 64
    early_stop_patience: int = 50
    early_stop_min_delta: float = 0.0
    validation_fraction: float = 0.1
    seed: int = 7
    variant: ModelVariant = ModelVariant.RECURRENT
    hidden: Tuple[int, int] = (256, 64)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    log_every: int = 100
    # None trains on disjoint windows; k trains on windows starting every k events
    window_stride: Optional[int] = None

    def __post_init__(self):
        if not (self.lr_start >= self.lr_floor > 0):
            raise ArgusError(f"need lr_start >= lr_floor > 0 (got {self.lr_start}, {self.lr_floor})")
        if not 0 <= self.dropout < 1:
            raise ArgusError(f"dropout must be in [0, 1) (got {self.dropout})")
        if self.batch_size < 1:
            raise ArgusError(f"batch_size must be >= 1 (got {self.batch_size})")
        if self.max_epochs < 1:
            raise ArgusError(f"max_epochs must be >= 1 (got {self.max_epochs})")
        if self.early_stop_patience < 1:
            raise ArgusError(f"early_stop_patience must be >= 1 (got {self.early_stop_patience})")
        if not 0 <= self.validation_fraction < 1:
            raise ArgusError(f"validation_fraction must be in [0, 1) (got {self.validation_fraction})")
        if len(self.hidden) != 2 or min(self.hidden) < 1:
            raise ArgusError(f"hidden must be two positive sizes (got {self.hidden})")
        if self.window_stride is not None and self.window_stride < 1:
            raise ArgusError(f"window_stride must be >= 1 (got {self.window_stride})")

    def lr_at(self, epoch: int) -> float:
        passed = sum(1 for m in self.lr_milestones if epoch >= m)
        return max(self.lr_start * self.lr_decay_factor ** passed, self.lr_floor)

    @classmethod
    def desk_scale(cls, **overrides) -> "TrainConfig":
        """Reduced profile for laptop/CI budgets: hidden 32/8, windows every four events, no dropout."""
        base = dict(
            hidden=(32, 8),
            max_epochs=2000,
            lr_milestones=(1000, 1500, 1800),
            dropout=0.0,
            early_stop_patience=200,
            window_stride=4,
        )
        base.update(overrides)
        return cls.from_dict(base)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ArgusError(f"unknown training options: {sorted(unknown)}")
        kwargs = dict(data)
        if "lr_milestones" in kwargs:
            kwargs["lr_milestones"] = tuple(int(m) for m in kwargs["lr_milestones"])
        if "hidden" in kwargs:
            kwargs["hidden"] = tuple(int(h) for h in kwargs["hidden"])
        if "variant" in kwargs:
            kwargs["variant"] = ModelVariant(kwargs["variant"])
        return cls(**kwargs)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["variant"] = self.variant.value
        data["lr_milestones"] = list(self.lr_milestones)
        data["hidden"] = list(self.hidden)
        return data


# ─── Parameters ───────────────────────────────────────────────


@dataclass(eq=False)
class GruLayerParams:
    """One GRU layer; input matrices are (hidden, input), recurrent ones (hidden, hidden)."""
    W_z: np.ndarray
    U_z: np.ndarray
    b_z: np.ndarray
    W_r: np.ndarray
    U_r: np.ndarray
    b_r: np.ndarray
    W_n: np.ndarray
    U_n: np.ndarray
    b_n: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.W_z.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W_z.shape[0]

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "GruLayerParams":
        arrays = {}
        for g in GATES:
            arrays[f"W_{g}"] = np.zeros((hidden_dim, input_dim))
            arrays[f"U_{g}"] = np.zeros((hidden_dim, hidden_dim))
            arrays[f"b_{g}"] = np.zeros(hidden_dim)
        return cls(**arrays)


def _gru_names(prefix: str) -> List[str]:
    return [f"{prefix}.{kind}_{g}" for g in GATES for kind in ("W", "U", "b")]


def _gru_view(params: Params, prefix: str) -> GruLayerParams:
    return GruLayerParams(**{name.split(".", 1)[1]: params[name] for name in _gru_names(prefix)})


def layer_shapes(variant: ModelVariant, n_devices: int, l: int, hidden: Tuple[int, int]) -> Dict[str, Tuple[int, ...]]:
    """Ordered parameter names and shapes for a model configuration."""
    big, small = hidden
    shapes: Dict[str, Tuple[int, ...]] = {}
    if variant == ModelVariant.RECURRENT:
        for prefix, (i, h) in (
            ("enc0", (n_devices, big)),
            ("enc1", (big, small)),
            ("dec0", (small, small)),
            ("dec1", (small, big)),
        ):
            for g in GATES:
                shapes[f"{prefix}.W_{g}"] = (h, i)
                shapes[f"{prefix}.U_{g}"] = (h, h)
                shapes[f"{prefix}.b_{g}"] = (h,)
        shapes["out.W"] = (n_devices, big)
        shapes["out.b"] = (n_devices,)
    else:
        sizes = [l * n_devices, big, small, big, l * n_devices]
        for k in range(4):
            shapes[f"dense{k}.W"] = (sizes[k + 1], sizes[k])
            shapes[f"dense{k}.b"] = (sizes[k + 1],)
    return shapes


def expected_parameter_count(variant: ModelVariant, n_devices: int, l: int, hidden: Tuple[int, int]) -> int:
    """
    Trainable parameter count for a layout.

    The full-size GRU model (hidden 256/64) over 18 devices has 548,754
    parameters, below the 1.0M-1.5M band usually quoted for this layout.
    """
    return int(sum(np.prod(s) for s in layer_shapes(variant, n_devices, l, hidden).values()))


@dataclass(eq=False)
class AutoencoderModel:
    variant: ModelVariant
    n_devices: int
    l: int
    hidden: Tuple[int, int]
    dropout_rate: float
    params: Params
    training_meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def encoder(self) -> List[GruLayerParams]:
        return [_gru_view(self.params, "enc0"), _gru_view(self.params, "enc1")]

    @property
    def decoder(self) -> List[GruLayerParams]:
        return [_gru_view(self.params, "dec0"), _gru_view(self.params, "dec1")]

    def copy(self) -> "AutoencoderModel":
        return AutoencoderModel(
            variant=self.variant,
            n_devices=self.n_devices,
            l=self.l,
            hidden=self.hidden,
            dropout_rate=self.dropout_rate,
            params={k: v.copy() for k, v in self.params.items()},
            training_meta=dict(self.training_meta),
        )


def count_parameters(model: AutoencoderModel) -> int:
    return int(sum(p.size for p in model.params.values()))


def init_model(
    n_devices: int,
    l: int,
    hidden: Tuple[int, int] = (256, 64),
    variant: ModelVariant = ModelVariant.RECURRENT,
    dropout: float = 0.3,
    rng: Optional[np.random.Generator] = None,
) -> AutoencoderModel:
    """Matrices uniform in ±1/sqrt(rows) (hidden size for GRU gates), biases zero."""
    if n_devices < 1 or l < 1:
        raise ArgusError(f"model needs n_devices >= 1 and l >= 1 (got {n_devices}, {l})")
    rng = rng if rng is not None else np.random.default_rng(0)
    params: Params = {}
    for name, shape in layer_shapes(variant, n_devices, l, hidden).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            fan = shape[1] if name.startswith(("out", "dense")) else shape[0]
            bound = 1.0 / np.sqrt(fan)
            params[name] = rng.uniform(-bound, bound, size=shape)
    return AutoencoderModel(variant, n_devices, l, tuple(hidden), dropout, params)


# ─── Forward / backward ───────────────────────────────────────


def gru_cell_forward(params: GruLayerParams, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Single step; x is (I,) or (B, I), h is (H,) or (B, H)."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.shape[-1] != params.input_dim or h.shape[-1] != params.hidden_dim:
        raise ShapeMismatchError(
            f"GRU expects input {params.input_dim} / hidden {params.hidden_dim}, "
            f"got {x.shape[-1]} / {h.shape[-1]}"
        )
    h_new, _ = _gru_step(params, x, h)
    return h_new


def _gru_step(p: GruLayerParams, x: np.ndarray, h: np.ndarray):
    z = expit(x @ p.W_z.T + h @ p.U_z.T + p.b_z)
    r = expit(x @ p.W_r.T + h @ p.U_r.T + p.b_r)
    n = np.tanh(x @ p.W_n.T + (r * h) @ p.U_n.T + p.b_n)
    h_new = (1.0 - z) * n + z * h
    return h_new, (x, h, z, r, n)


def _gru_sequence(p: GruLayerParams, X: np.ndarray):
    batch, steps, _ = X.shape
    h = np.zeros((batch, p.hidden_dim))
    out = np.empty((batch, steps, p.hidden_dim))
    cache = []
    for t in range(steps):
        h, step_cache = _gru_step(p, X[:, t], h)
        out[:, t] = h
        cache.append(step_cache)
    return out, cache


def _gru_sequence_backward(p: GruLayerParams, cache, dOut: np.ndarray):
    """BPTT through one layer. dOut holds dL/dh_t for every step; returns (dX, grads)."""
    grads = {k: np.zeros_like(v) for k, v in vars(p).items()}
    batch, steps, _ = dOut.shape
    dX = np.empty((batch, steps, p.input_dim))
    dh_next = np.zeros((batch, p.hidden_dim))
    for t in reversed(range(steps)):
        x, h_prev, z, r, n = cache[t]
        dh = dOut[:, t] + dh_next

        dn = dh * (1.0 - z)
        dz = dh * (h_prev - n)
        dh_prev = dh * z

        da_n = dn * (1.0 - n ** 2)
        grads["W_n"] += da_n.T @ x
        grads["U_n"] += da_n.T @ (r * h_prev)
        grads["b_n"] += da_n.sum(axis=0)
        d_rh = da_n @ p.U_n
        dr = d_rh * h_prev
        dh_prev += d_rh * r

        da_r = dr * r * (1.0 - r)
        da_z = dz * z * (1.0 - z)
        grads["W_r"] += da_r.T @ x
        grads["U_r"] += da_r.T @ h_prev
        grads["b_r"] += da_r.sum(axis=0)
        grads["W_z"] += da_z.T @ x
        grads["U_z"] += da_z.T @ h_prev
        grads["b_z"] += da_z.sum(axis=0)

        dX[:, t] = da_z @ p.W_z + da_r @ p.W_r + da_n @ p.W_n
        dh_next = dh_prev + da_r @ p.U_r + da_z @ p.U_z
    return dX, grads


def _mask(rng: Optional[np.random.Generator], shape, rate: float, train_mode: bool) -> Optional[np.ndarray]:
    """Inverted-dropout mask, or None outside training."""
    if not train_mode or rate <= 0.0:
        return None
    if rng is None:
        raise ArgusError("train_mode dropout needs an rng")
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _apply(a: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    return a if mask is None else a * mask


def _check_batch(model: AutoencoderModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != (model.l, model.n_devices):
        raise ShapeMismatchError(f"window shape {X.shape[-2:]} does not match model ({model.l}, {model.n_devices})")
    return X


def _forward(model: AutoencoderModel, X: np.ndarray, train_mode: bool, rng):
    P = model.params
    rate = model.dropout_rate
    batch, steps, devices = X.shape

    if model.variant == ModelVariant.DENSE:
        a = X.reshape(batch, steps * devices)
        layers = []
        for k in range(3):
            pre = a @ P[f"dense{k}.W"].T + P[f"dense{k}.b"]
            act = np.tanh(pre)
            mask = _mask(rng, act.shape, rate, train_mode)
            layers.append((a, act, mask))
            a = _apply(act, mask)
        Y = a @ P["dense3.W"].T + P["dense3.b"]
        return Y.reshape(batch, steps, devices), {"layers": layers, "last": a}

    enc0, enc1 = model.encoder
    dec0, dec1 = model.decoder
    A0, c0 = _gru_sequence(enc0, X)
    m0 = _mask(rng, A0.shape, rate, train_mode)
    A1, c1 = _gru_sequence(enc1, _apply(A0, m0))
    R = np.repeat(A1[:, -1:, :], steps, axis=1)
    m1 = _mask(rng, R.shape, rate, train_mode)
    A2, c2 = _gru_sequence(dec0, _apply(R, m1))
    m2 = _mask(rng, A2.shape, rate, train_mode)
    A3, c3 = _gru_sequence(dec1, _apply(A2, m2))
    m3 = _mask(rng, A3.shape, rate, train_mode)
    A3d = _apply(A3, m3)
    Y = A3d @ P["out.W"].T + P["out.b"]
    cache = {"c": (c0, c1, c2, c3), "m": (m0, m1, m2, m3), "A3d": A3d, "A1": A1}
    return Y, cache


def _backward(model: AutoencoderModel, cache, dY: np.ndarray) -> Params:
    P = model.params
    grads: Params = {}

    if model.variant == ModelVariant.DENSE:
        batch = dY.shape[0]
        d = dY.reshape(batch, -1)
        grads["dense3.W"] = d.T @ cache["last"]
        grads["dense3.b"] = d.sum(axis=0)
        da = d @ P["dense3.W"]
        for k in reversed(range(3)):
            a_in, act, mask = cache["layers"][k]
            d_pre = _apply(da, mask) * (1.0 - act ** 2)
            grads[f"dense{k}.W"] = d_pre.T @ a_in
            grads[f"dense{k}.b"] = d_pre.sum(axis=0)
            da = d_pre @ P[f"dense{k}.W"]
        return {name: grads[name] for name in P}

    c0, c1, c2, c3 = cache["c"]
    m0, m1, m2, m3 = cache["m"]
    enc0, enc1 = model.encoder
    dec0, dec1 = model.decoder

    grads["out.W"] = np.einsum("btd,bth->dh", dY, cache["A3d"])
    grads["out.b"] = dY.sum(axis=(0, 1))
    dA3 = _apply(dY @ P["out.W"], m3)

    dA2d, g = _gru_sequence_backward(dec1, c3, dA3)
    grads.update({f"dec1.{k}": v for k, v in g.items()})
    dRd, g = _gru_sequence_backward(dec0, c2, _apply(dA2d, m2))
    grads.update({f"dec0.{k}": v for k, v in g.items()})

    dA1 = np.zeros_like(cache["A1"])
    dA1[:, -1] = _apply(dRd, m1).sum(axis=1)
    dA0d, g = _gru_sequence_backward(enc1, c1, dA1)
    grads.update({f"enc1.{k}": v for k, v in g.items()})
    _, g = _gru_sequence_backward(enc0, c0, _apply(dA0d, m0))
    grads.update({f"enc0.{k}": v for k, v in g.items()})
    return {name: grads[name] for name in P}


def autoencoder_forward(
    model: AutoencoderModel,
    window: np.ndarray,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Reconstruct one (l, D) window or a (B, l, D) batch."""
    single = np.ndim(window) == 2
    Y, _ = _forward(model, _check_batch(model, window), train_mode, rng)
    return Y[0] if single else Y


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mse operands differ in shape: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def loss_and_gradients(
    model: AutoencoderModel,
    X: np.ndarray,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, Params]:
    """MSE over every cell of the batch and its gradient for every parameter."""
    X = _check_batch(model, X)
    Y, cache = _forward(model, X, train_mode, rng)
    diff = Y - X
    loss = float(np.mean(diff ** 2))
    dY = 2.0 * diff / diff.size
    return loss, _backward(model, cache, dY)


def score_window(model: AutoencoderModel, window: np.ndarray) -> float:
    return mse(autoencoder_forward(model, window, train_mode=False), window)


def score_windows(model: AutoencoderModel, windows: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Per-window reconstruction MSE for a (n, l, D) stack."""
    windows = np.asarray(windows, dtype=np.float64)
    scores = np.zeros(windows.shape[0])
    for start in range(0, windows.shape[0], batch_size):
        chunk = _check_batch(model, windows[start:start + batch_size])
        Y, _ = _forward(model, chunk, False, None)
        scores[start:start + chunk.shape[0]] = np.mean((Y - chunk) ** 2, axis=(1, 2))
    return scores


# ─── Training ─────────────────────────────────────────────────


class Adam:
    def __init__(self, params: Params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: Params, grads: Params, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            params[name] -= lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)


@dataclass
class TrainReport:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    stop_reason: StopReason = StopReason.MAX_EPOCHS
    epochs_run: int = 0
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    final_train_loss: float = float("nan")
    wall_time_s: float = 0.0
    peak_rss_mb: float = 0.0
    n_train_windows: int = 0
    n_val_windows: int = 0

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["stop_reason"] = self.stop_reason.value
        return data


def chronological_split(n_windows: int, validation_fraction: float) -> Tuple[int, int]:
    """(n_train, n_val) with the last floor(n·fraction) windows held out; training keeps at least one."""
    n_val = min(int(np.floor(n_windows * validation_fraction)), max(n_windows - 1, 0))
    return n_windows - n_val, n_val


def _windows_array(windows) -> np.ndarray:
    return np.asarray(getattr(windows, "windows", windows), dtype=np.float64)


def train_autoencoder(windows, config: TrainConfig) -> Tuple[AutoencoderModel, TrainReport]:
    """
    Fit an autoencoder on benign windows.

    The last validation_fraction of windows (chronological) are held out for
    early stopping; with none held out the training loss is monitored.
    Returns the parameters of the best monitored epoch. Deterministic given
    config.seed.
    """
    X = _windows_array(windows)
    if X.ndim != 3 or X.shape[0] == 0:
        raise TrainingError("no training windows")
    n_windows, l, n_devices = X.shape
    n_train, n_val = chronological_split(n_windows, config.validation_fraction)
    X_train, X_val = X[:n_train], X[n_train:]

    rng = np.random.default_rng(config.seed)
    model = init_model(n_devices, l, config.hidden, config.variant, config.dropout, rng)
    optimizer = Adam(model.params, config.beta1, config.beta2, config.adam_eps)
    process = psutil.Process()
    report = TrainReport(n_train_windows=n_train, n_val_windows=n_val)
    report.peak_rss_mb = process.memory_info().rss / 2 ** 20

    logger.info(
        f"Training {config.variant.value} autoencoder: {n_train} train / {n_val} validation windows, "
        f"{count_parameters(model)} parameters, seed={config.seed}"
    )
    started = time.perf_counter()
    best_params = {k: v.copy() for k, v in model.params.items()}
    best = float("inf")
    waited = 0

    for epoch in range(config.max_epochs):
        lr = config.lr_at(epoch)
        order = rng.permutation(n_train)
        total = 0.0
        for start in range(0, n_train, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = loss_and_gradients(model, X_train[idx], train_mode=True, rng=rng)
            if not np.isfinite(loss):
                raise TrainingError("non-finite training loss", epoch=epoch)
            optimizer.step(model.params, grads, lr)
            total += loss * len(idx)
        train_loss = total / n_train
        val_loss = float(np.mean(score_windows(model, X_val))) if n_val else train_loss
        if not np.isfinite(val_loss):
            raise TrainingError("non-finite validation loss", epoch=epoch)

        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        report.epochs_run = epoch + 1
        report.peak_rss_mb = max(report.peak_rss_mb, process.memory_info().rss / 2 ** 20)

        if val_loss < best - config.early_stop_min_delta:
            best = val_loss
            report.best_epoch = epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
            waited = 0
        else:
            waited += 1

        if config.log_every and epoch % config.log_every == 0:
            logger.debug(f"epoch {epoch}: lr={lr:.2e} train={train_loss:.6f} val={val_loss:.6f}")

        if waited >= config.early_stop_patience:
            report.stop_reason = StopReason.EARLY_STOP
            break

    model.params = best_params
    report.best_val_loss = best
    report.final_train_loss = float(np.mean(score_windows(model, X_train)))
    report.wall_time_s = time.perf_counter() - started
    model.training_meta = {
        "epochs_run": report.epochs_run,
        "best_epoch": report.best_epoch,
        "stop_reason": report.stop_reason.value,
        "final_train_loss": report.final_train_loss,
        "best_val_loss": report.best_val_loss,
        "seed": config.seed,
    }
    logger.info(
        f"Training stopped ({report.stop_reason.value}) after {report.epochs_run} epochs: "
        f"best epoch {report.best_epoch}, val={best:.6f}, train={report.final_train_loss:.6f}, "
        f"{report.wall_time_s:.1f}s, peak RSS {report.peak_rss_mb:.0f} MB"
    )
    return model, report


# ─── Gradient check ───────────────────────────────────────────


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    n_checked: int
    worst_parameter: str = ""
    tol: float = 1e-4
    eps: float = 1e-5

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


GradFn = Callable[[AutoencoderModel, np.ndarray, bool, Optional[np.random.Generator]], Tuple[float, Params]]


def numeric_gradient_check(
    model: AutoencoderModel,
    window: np.ndarray,
    eps: float = 1e-5,
    tol: float = 1e-4,
    n_checks: int = 200,
    seed: int = 0,
    grad_fn: Optional[GradFn] = None,
    train_mode: bool = False,
) -> GradCheckReport:
    """
    Compare analytic gradients of the MSE loss against central differences
    on a random subset of parameter entries (all entries when n_checks covers them).

    With train_mode the dropout rng is re-seeded for every loss evaluation,
    so all evaluations share one mask draw.
    """
    X = _check_batch(model, window)
    grad_fn = grad_fn or loss_and_gradients

    def fresh_rng():
        return np.random.default_rng(seed + 1) if train_mode else None

    _, analytic = grad_fn(model, X, train_mode, fresh_rng())

    entries = [(name, idx) for name, p in model.params.items() for idx in np.ndindex(p.shape)]
    if n_checks < len(entries):
        pick = np.random.default_rng(seed).choice(len(entries), size=n_checks, replace=False)
        entries = [entries[i] for i in sorted(pick)]

    worst, worst_name = 0.0, ""
    for name, idx in entries:
        p = model.params[name]
        original = p[idx]
        p[idx] = original + eps
        f_plus, _ = loss_and_gradients(model, X, train_mode, fresh_rng())
        p[idx] = original - eps
        f_minus, _ = loss_and_gradients(model, X, train_mode, fresh_rng())
        p[idx] = original
        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = float(analytic[name][idx])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
        if rel > worst:
            worst, worst_name = rel, f"{name}{list(idx)}"

    result = GradCheckReport(worst <= tol, worst, len(entries), worst_name, tol, eps)
    logger.info(f"Gradient check {'passed' if result.passed else 'FAILED'}: max rel error {worst:.3e} over {len(entries)} entries")
    return result


# ─── Model container ──────────────────────────────────────────


def zip_write(archive: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    archive.writestr(info, data)


def model_meta(model: AutoencoderModel, catalog_hash: Optional[str] = None) -> Dict[str, Any]:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "variant": model.variant.value,
        "n_devices": model.n_devices,
        "l": model.l,
        "hidden": list(model.hidden),
        "dropout": model.dropout_rate,
        "param_names": list(model.params),
        "training_meta": model.training_meta,
        "catalog_hash": catalog_hash,
    }


def write_model_entries(archive: zipfile.ZipFile, model: AutoencoderModel, catalog_hash: Optional[str] = None) -> None:
    zip_write(archive, "meta.json", json.dumps(model_meta(model, catalog_hash), sort_keys=True, indent=2).encode())
    for name, value in model.params.items():
        buf = io.BytesIO()
        np.save(buf, np.ascontiguousarray(value, dtype=np.float64), allow_pickle=False)
        zip_write(archive, f"params/{name}.npy", buf.getvalue())


def save_model(model: AutoencoderModel, catalog_hash: Optional[str] = None) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as archive:
        write_model_entries(archive, model, catalog_hash)
    return buf.getvalue()


def read_model_entries(archive: zipfile.ZipFile) -> Tuple[AutoencoderModel, Optional[str]]:
    try:
        meta = json.loads(archive.read("meta.json"))
    except (KeyError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"model container has no readable meta.json: {e}")
    if meta.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {meta.get('format_version')!r}")
    try:
        variant = ModelVariant(meta["variant"])
        n_devices, l, hidden = int(meta["n_devices"]), int(meta["l"]), tuple(meta["hidden"])
        shapes = layer_shapes(variant, n_devices, l, hidden)
        params: Params = {}
        for name in meta["param_names"]:
            value = np.load(io.BytesIO(archive.read(f"params/{name}.npy")), allow_pickle=False)
            if name not in shapes or value.shape != shapes[name]:
                raise ModelFormatError(f"parameter '{name}' has unexpected shape {value.shape}")
            params[name] = value
    except (KeyError, ValueError, zipfile.BadZipFile, EOFError) as e:
        if isinstance(e, ModelFormatError):
            raise
        raise ModelFormatError(f"corrupt model container: {e}")
    if set(params) != set(shapes):
        raise ModelFormatError("model container is missing parameters")
    model = AutoencoderModel(
        variant=variant,
        n_devices=n_devices,
        l=l,
        hidden=hidden,
        dropout_rate=float(meta["dropout"]),
        params={name: params[name] for name in shapes},
        training_meta=meta.get("training_meta", {}),
    )
    return model, meta.get("catalog_hash")


def load_model(
    data: bytes,
    expected_n_devices: Optional[int] = None,
    expected_catalog_hash: Optional[str] = None,
) -> AutoencoderModel:
    """
    Read a container written by save_model. Raises ModelFormatError for
    truncated/corrupt data and CompatibilityError when the stored dimensions
    or catalog hash disagree with the expected ones.
    """
    try:
        with zipfile.ZipFile(io.BytesIO(data)) as archive:
            model, stored_hash = read_model_entries(archive)
    except zipfile.BadZipFile as e:
        raise ModelFormatError(f"not a model container: {e}")
    check_compatibility(model, stored_hash, expected_n_devices, expected_catalog_hash)
    return model


def check_compatibility(
    model: AutoencoderModel,
    stored_hash: Optional[str],
    expected_n_devices: Optional[int] = None,
    expected_catalog_hash: Optional[str] = None,
) -> None:
    if expected_n_devices is not None and model.n_devices != expected_n_devices:
        raise CompatibilityError(
            f"model was trained on {model.n_devices} devices, catalog has {expected_n_devices}"
        )
    if expected_catalog_hash is not None and stored_hash is not None and stored_hash != expected_catalog_hash:
        raise CompatibilityError("model catalog hash does not match the state-map catalog")
