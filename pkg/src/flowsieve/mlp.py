"""Two-layer perceptron with tanh hidden units and sigmoid outputs.

The loss is the mean over examples of half the squared output error, so the
same objective is shared by the mini-batch gradient-descent trainer and the
damped-least-squares trainer. Output index 0 is NonTor, index 1 is Tor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingDiverged
from .lm import minimize_least_squares


@dataclass
class MlpModel:
    w1: np.ndarray  # (h, n)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (o, h)
    b2: np.ndarray  # (o,)

    @property
    def n_inputs(self) -> int:
        return self.w1.shape[1]

    @property
    def n_hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.w2.shape[0]

    @property
    def n_parameters(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size

    def copy(self) -> "MlpModel":
        return MlpModel(self.w1.copy(), self.b1.copy(),
                        self.w2.copy(), self.b2.copy())


@dataclass
class TrainConfig:
    mode: str = "lm"  # "bp-sgd" | "lm"
    max_epochs: int = 1000
    learning_rate: float = 0.01
    batch_size: int = 32
    lm_mu_init: float = 1e-3
    lm_mu_up: float = 10.0
    lm_mu_down: float = 0.1
    lm_mu_max: float = 1e10
    patience: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("bp-sgd", "lm"):
            raise ValueError(f"unknown training mode {self.mode!r}")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be positive")
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("learning_rate and batch_size must be positive")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    stopping_reason: str = ""


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def init_model(n_inputs: int, n_hidden: int, seed: int = 0,
               n_outputs: int = 2) -> MlpModel:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
    if n_inputs < 1 or n_hidden < 1 or n_outputs < 1:
        raise ValueError("all layer sizes must be at least 1")
    rng = np.random.default_rng(seed)
    limit1 = np.sqrt(6.0 / (n_inputs + n_hidden))
    limit2 = np.sqrt(6.0 / (n_hidden + n_outputs))
    return MlpModel(
        w1=rng.uniform(-limit1, limit1, (n_hidden, n_inputs)),
        b1=np.zeros(n_hidden),
        w2=rng.uniform(-limit2, limit2, (n_outputs, n_hidden)),
        b2=np.zeros(n_outputs),
    )


def _forward_batch(model: MlpModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    A = np.tanh(X @ model.w1.T + model.b1)
    Y = _sigmoid(A @ model.w2.T + model.b2)
    return A, Y


def forward(model: MlpModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Single-example pass; returns (hidden activations, output pair)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.n_inputs,):
        raise ValueError(f"expected input width {model.n_inputs}, got {x.shape}")
    A, Y = _forward_batch(model, x[None, :])
    return A[0], Y[0]


def loss(model: MlpModel, X: np.ndarray, T: np.ndarray) -> float:
    """Mean over examples of half the squared error of both outputs."""
    if len(X) == 0:
        raise ValueError("empty batch")
    _, Y = _forward_batch(model, X)
    return 0.5 * float(((Y - T) ** 2).sum(axis=1).mean())


def pack_parameters(model: MlpModel) -> np.ndarray:
    return np.concatenate([model.w1.ravel(), model.b1,
                           model.w2.ravel(), model.b2])


def unpack_parameters(theta: np.ndarray, n_inputs: int, n_hidden: int,
                      n_outputs: int = 2) -> MlpModel:
    sizes = [n_hidden * n_inputs, n_hidden, n_outputs * n_hidden, n_outputs]
    offsets = np.cumsum([0] + sizes)
    if len(theta) != offsets[-1]:
        raise ValueError("parameter vector length mismatch")
    return MlpModel(
        w1=theta[offsets[0]:offsets[1]].reshape(n_hidden, n_inputs).copy(),
        b1=theta[offsets[1]:offsets[2]].copy(),
        w2=theta[offsets[2]:offsets[3]].reshape(n_outputs, n_hidden).copy(),
        b2=theta[offsets[3]:offsets[4]].copy(),
    )


def gradient(model: MlpModel, X: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Analytic gradient of loss(), flattened in pack_parameters order."""
    if len(X) == 0:
        raise ValueError("empty batch")
    n = len(X)
    A, Y = _forward_batch(model, X)
    delta_out = (Y - T) * Y * (1.0 - Y)  # (N, o)
    d_w2 = delta_out.T @ A / n
    d_b2 = delta_out.mean(axis=0)
    delta_hidden = (delta_out @ model.w2) * (1.0 - A ** 2)  # (N, h)
    d_w1 = delta_hidden.T @ X / n
    d_b1 = delta_hidden.mean(axis=0)
    return np.concatenate([d_w1.ravel(), d_b1, d_w2.ravel(), d_b2])


def residual_jacobian(model: MlpModel, X: np.ndarray,
                      T: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Residuals (y - t) and their Jacobian, one row per (example, output)."""
    n = len(X)
    o = model.n_outputs
    h = model.n_hidden
    d = model.n_inputs
    A, Y = _forward_batch(model, X)
    residuals = (Y - T).ravel()  # row 2i+o corresponds to example i, output o
    jac = np.zeros((n * o, model.n_parameters))
    sens = Y * (1.0 - Y)  # (N, o)
    tanh_grad = 1.0 - A ** 2  # (N, h)
    w1_end = h * d
    b1_end = w1_end + h
    w2_end = b1_end + o * h
    for out in range(o):
        rows = slice(out, n * o, o)
        s = sens[:, out]  # (N,)
        delta_hidden = s[:, None] * model.w2[out][None, :] * tanh_grad  # (N, h)
        jac[rows, :w1_end] = np.einsum("nh,nd->nhd", delta_hidden, X).reshape(n, h * d)
        jac[rows, w1_end:b1_end] = delta_hidden
        jac[rows, b1_end + out * h:b1_end + (out + 1) * h] = s[:, None] * A
        jac[rows, w2_end + out] = s
    return residuals, jac


def predict(model: MlpModel, x: np.ndarray) -> int:
    """Class of the larger output; an exact tie maps to class 0."""
    _, y = forward(model, x)
    return int(np.argmax(y))


def predict_batch(model: MlpModel, X: np.ndarray) -> np.ndarray:
    _, Y = _forward_batch(model, X)
    return np.argmax(Y, axis=1)


def _check_finite(value: float, model: MlpModel, epoch: int) -> None:
    params_ok = all(np.isfinite(p).all() for p in
                    (model.w1, model.b1, model.w2, model.b2))
    if not np.isfinite(value) or not params_ok:
        raise TrainingDiverged(f"diverged at epoch {epoch}", epoch)


def train_bp(model: MlpModel, X: np.ndarray, T: np.ndarray,
             X_val: np.ndarray, T_val: np.ndarray,
             cfg: TrainConfig | None = None) -> tuple[MlpModel, TrainHistory]:
    """Seeded mini-batch gradient descent with validation early stopping.

    Returns the parameters from the best validation epoch. Raises
    TrainingDiverged when the loss or parameters go non-finite.
    """
    cfg = cfg or TrainConfig(mode="bp-sgd")
    if len(X_val) == 0:
        raise ValueError("validation set must be non-empty")
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    best_val = np.inf
    best_model = model.copy()
    failures = 0
    n = len(X)
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            grad = gradient(model, X[batch], T[batch])
            theta = pack_parameters(model) - cfg.learning_rate * grad
            model = unpack_parameters(theta, model.n_inputs, model.n_hidden,
                                      model.n_outputs)
        train_loss = loss(model, X, T)
        _check_finite(train_loss, model, epoch)
        val_loss = loss(model, X_val, T_val)
        _check_finite(val_loss, model, epoch)
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_model = model.copy()
            failures = 0
        else:
            failures += 1
            if failures >= cfg.patience:
                history.stopping_reason = "early_stop"
                break
    else:
        history.stopping_reason = "max_epochs"
    return best_model, history


def train_lm(model: MlpModel, X: np.ndarray, T: np.ndarray,
             X_val: np.ndarray, T_val: np.ndarray,
             cfg: TrainConfig | None = None) -> tuple[MlpModel, TrainHistory]:
    """Damped least-squares training of the full parameter vector.

    One history entry per accepted step; validation patience, a vanishing
    gradient, mu exceeding its cap, or the epoch budget stop the run.
    """
    cfg = cfg or TrainConfig(mode="lm")
    if len(X_val) == 0:
        raise ValueError("validation set must be non-empty")
    n_inputs, n_hidden, n_outputs = model.n_inputs, model.n_hidden, model.n_outputs
    n = len(X)
    history = TrainHistory()
    state = {"best_val": np.inf, "best_theta": pack_parameters(model),
             "failures": 0}

    def residual_fn(theta: np.ndarray) -> np.ndarray:
        m = unpack_parameters(theta, n_inputs, n_hidden, n_outputs)
        _, Y = _forward_batch(m, X)
        return (Y - T).ravel()

    def jacobian_fn(theta: np.ndarray) -> np.ndarray:
        m = unpack_parameters(theta, n_inputs, n_hidden, n_outputs)
        _, jac = residual_jacobian(m, X, T)
        return jac

    def on_step(theta: np.ndarray, cost: float) -> bool:
        m = unpack_parameters(theta, n_inputs, n_hidden, n_outputs)
        train_loss = cost / n  # cost is 0.5*||r||^2 over all examples
        epoch = len(history.train_loss)
        _check_finite(train_loss, m, epoch)
        val_loss = loss(m, X_val, T_val)
        _check_finite(val_loss, m, epoch)
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        if val_loss < state["best_val"]:
            state["best_val"] = val_loss
            state["best_theta"] = theta.copy()
            state["failures"] = 0
        else:
            state["failures"] += 1
            if state["failures"] >= cfg.patience:
                return False
        return True

    result = minimize_least_squares(
        residual_fn, jacobian_fn, pack_parameters(model),
        mu_init=cfg.lm_mu_init, mu_up=cfg.lm_mu_up, mu_down=cfg.lm_mu_down,
        mu_max=cfg.lm_mu_max, max_iterations=cfg.max_epochs,
        callback=on_step)
    history.stopping_reason = {
        "callback": "early_stop",
        "gradient": "converged: gradient",
        "mu_max": "converged: mu_max",
        "max_iterations": "max_epochs",
    }[result.reason]
    if not np.isfinite(state["best_val"]):
        state["best_theta"] = result.theta
    best = unpack_parameters(state["best_theta"], n_inputs, n_hidden, n_outputs)
    return best, history


def train(model: MlpModel, X: np.ndarray, T: np.ndarray,
          X_val: np.ndarray, T_val: np.ndarray,
          cfg: TrainConfig) -> tuple[MlpModel, TrainHistory]:
    if cfg.mode == "bp-sgd":
        return train_bp(model, X, T, X_val, T_val, cfg)
    return train_lm(model, X, T, X_val, T_val, cfg)


MODEL_FORMAT = "flowsieve-mlp 1"


def save_model(path, model: MlpModel, feature_names: tuple[str, ...],
               scaler=None, class_names: tuple[str, ...] = ("NonTor", "Tor")) -> None:
    """Versioned flat text format: metadata, layout line, parameter blocks."""
    def fmt(values) -> str:
        return " ".join(f"{v:.17g}" for v in np.asarray(values).ravel())

    with open(path, "w", encoding="utf-8") as handle:
        handle.write(MODEL_FORMAT + "\n")
        handle.write("features " + ",".join(feature_names) + "\n")
        handle.write("classes " + ",".join(class_names) + "\n")
        if scaler is not None:
            handle.write("scaler_mean " + fmt(scaler.mean) + "\n")
            handle.write("scaler_std " + fmt(scaler.std) + "\n")
            handle.write("scaler_passthrough "
                         + " ".join(str(int(v)) for v in scaler.passthrough) + "\n")
        handle.write(f"layout {model.n_inputs} {model.n_hidden} {model.n_outputs}\n")
        for name, block in (("w1", model.w1), ("b1", model.b1),
                            ("w2", model.w2), ("b2", model.b2)):
            handle.write(name + "\n")
            rows = block if block.ndim == 2 else block[None, :]
            for row in rows:
                handle.write(fmt(row) + "\n")


def _parse_floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split()], dtype=np.float64)


def load_model(path) -> tuple[MlpModel, dict]:
    """Inverse of save_model; returns (model, metadata dict)."""
    from .dataset import Scaler  # local import to avoid cycle at module load

    with open(path, "r", encoding="utf-8") as handle:
        lines = [line.rstrip("\n") for line in handle]
    if not lines or lines[0] != MODEL_FORMAT:
        raise ValueError(f"{path}: not a {MODEL_FORMAT} file")
    meta: dict = {"scaler": None}
    pos = 1
    scaler_parts = {}
    while not lines[pos].startswith("layout "):
        key, _, rest = lines[pos].partition(" ")
        if key == "features":
            meta["features"] = tuple(rest.split(","))
        elif key == "classes":
            meta["classes"] = tuple(rest.split(","))
        elif key.startswith("scaler_"):
            scaler_parts[key] = rest
        else:
            raise ValueError(f"{path}: unexpected line {lines[pos]!r}")
        pos += 1
    if scaler_parts:
        meta["scaler"] = Scaler(
            mean=_parse_floats(scaler_parts["scaler_mean"]),
            std=_parse_floats(scaler_parts["scaler_std"]),
            passthrough=_parse_floats(scaler_parts["scaler_passthrough"]).astype(bool),
        )
    n_inputs, n_hidden, n_outputs = (int(v) for v in lines[pos].split()[1:])
    pos += 1
    blocks = {}
    shapes = {"w1": (n_hidden, n_inputs), "b1": (1, n_hidden),
              "w2": (n_outputs, n_hidden), "b2": (1, n_outputs)}
    while pos < len(lines) and lines[pos]:
        name = lines[pos]
        rows, _ = shapes[name]
        data = [_parse_floats(lines[pos + 1 + r]) for r in range(rows)]
        blocks[name] = np.vstack(data)
        pos += 1 + rows
    model = MlpModel(w1=blocks["w1"], b1=blocks["b1"][0],
                     w2=blocks["w2"], b2=blocks["b2"][0])
    return model, meta
