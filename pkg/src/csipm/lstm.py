"""Two-layer LSTM with a fully connected head, trained with Adam.

Everything is plain numpy in float64, batched along the leading axis.
Gate blocks inside every 4H-row weight matrix are ordered (input, forget,
cell candidate, output).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySplit, ShapeMismatch, WidthMismatch


@dataclass
class LstmLayerParams:
    input_weights: np.ndarray      # (4H, D)
    recurrent_weights: np.ndarray  # (4H, H)
    biases: np.ndarray             # (4H,)

    @property
    def hidden_size(self) -> int:
        return self.recurrent_weights.shape[1]

    @property
    def input_size(self) -> int:
        return self.input_weights.shape[1]


@dataclass
class ModelParams:
    layer1: LstmLayerParams
    layer2: LstmLayerParams
    fc_weights: np.ndarray  # (2M, H)
    fc_bias: np.ndarray     # (2M,)

    def named(self) -> dict[str, np.ndarray]:
        """Parameter arrays by checkpoint name; the arrays are the live storage."""
        return {
            "layer1.input_weights": self.layer1.input_weights,
            "layer1.recurrent_weights": self.layer1.recurrent_weights,
            "layer1.biases": self.layer1.biases,
            "layer2.input_weights": self.layer2.input_weights,
            "layer2.recurrent_weights": self.layer2.recurrent_weights,
            "layer2.biases": self.layer2.biases,
            "fc_weights": self.fc_weights,
            "fc_bias": self.fc_bias,
        }

    @classmethod
    def from_named(cls, arrays: dict[str, np.ndarray]) -> "ModelParams":
        return cls(
            LstmLayerParams(arrays["layer1.input_weights"], arrays["layer1.recurrent_weights"],
                            arrays["layer1.biases"]),
            LstmLayerParams(arrays["layer2.input_weights"], arrays["layer2.recurrent_weights"],
                            arrays["layer2.biases"]),
            arrays["fc_weights"],
            arrays["fc_bias"],
        )

    def copy(self) -> "ModelParams":
        return ModelParams.from_named({k: v.copy() for k, v in self.named().items()})

    @property
    def feature_width(self) -> int:
        return self.layer1.input_size

    @property
    def hidden_size(self) -> int:
        return self.layer1.hidden_size

    @property
    def output_width(self) -> int:
        return self.fc_bias.shape[0]


@dataclass
class TrainConfig:
    learning_rate: float = 8e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 64
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        named = params.named()
        return cls({k: np.zeros_like(a) for k, a in named.items()},
                   {k: np.zeros_like(a) for k, a in named.items()}, 0)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(feature_width: int, num_antennas: int, seed: int, hidden_size: int = 10) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, forget-gate bias 1."""
    if feature_width < 1 or num_antennas < 1 or hidden_size < 1:
        raise ValueError("widths must be >= 1")
    rng = np.random.default_rng(seed)
    H = hidden_size

    def layer(d: int) -> LstmLayerParams:
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0
        return LstmLayerParams(_uniform(rng, (4 * H, d), d), _uniform(rng, (4 * H, H), H), b)

    l1 = layer(feature_width)
    l2 = layer(H)
    return ModelParams(l1, l2, _uniform(rng, (2 * num_antennas, H), H), np.zeros(2 * num_antennas))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is stable for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class _LayerCache:
    x: np.ndarray
    h: np.ndarray        # (B, T+1, H), h[:, 0] is the zero initial state
    c: np.ndarray        # (B, T+1, H)
    gates: np.ndarray    # (B, T, 4H) post-activation i, f, g, o
    tanh_c: np.ndarray   # (B, T, H)


def _lstm_forward(layer: LstmLayerParams, x: np.ndarray) -> _LayerCache:
    B, T, D = x.shape
    if D != layer.input_size:
        raise WidthMismatch(f"layer expects width {layer.input_size}, got {D}")
    H = layer.hidden_size
    pre_x = x @ layer.input_weights.T + layer.biases  # (B, T, 4H)
    h = np.zeros((B, T + 1, H))
    c = np.zeros((B, T + 1, H))
    gates = np.empty((B, T, 4 * H))
    tanh_c = np.empty((B, T, H))
    U_t = layer.recurrent_weights.T
    for t in range(T):
        z = pre_x[:, t] + h[:, t] @ U_t
        ifo = _sigmoid(z)
        g = np.tanh(z[:, 2 * H:3 * H])
        i, f, o = ifo[:, :H], ifo[:, H:2 * H], ifo[:, 3 * H:]
        c[:, t + 1] = f * c[:, t] + i * g
        tanh_c[:, t] = np.tanh(c[:, t + 1])
        h[:, t + 1] = o * tanh_c[:, t]
        gates[:, t, :H] = i
        gates[:, t, H:2 * H] = f
        gates[:, t, 2 * H:3 * H] = g
        gates[:, t, 3 * H:] = o
    return _LayerCache(x, h, c, gates, tanh_c)


def lstm_forward(layer: LstmLayerParams, input_sequence: np.ndarray):
    """Run one layer from zero state.

    Accepts (T, D) or (B, T, D). Returns the hidden sequence and the final
    (cell, hidden) pair with the batch axis kept only if it was given.
    """
    x = np.asarray(input_sequence, dtype=float)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.shape[1] == 0:
        raise ValueError("input sequence must be non-empty")
    cache = _lstm_forward(layer, x)
    hs, c_last, h_last = cache.h[:, 1:], cache.c[:, -1], cache.h[:, -1]
    if single:
        return hs[0], (c_last[0], h_last[0])
    return hs, (c_last, h_last)


def _lstm_backward(layer: LstmLayerParams, cache: _LayerCache, dh_seq: np.ndarray):
    """Gradients of a layer given dL/dh for each output timestep (B, T, H)."""
    B, T, H = dh_seq.shape
    gates = cache.gates
    dz = np.empty((B, T, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    U = layer.recurrent_weights
    for t in range(T - 1, -1, -1):
        i = gates[:, t, :H]
        f = gates[:, t, H:2 * H]
        g = gates[:, t, 2 * H:3 * H]
        o = gates[:, t, 3 * H:]
        tc = cache.tanh_c[:, t]
        dh = dh_seq[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz[:, t, :H] = dc * g * i * (1.0 - i)
        dz[:, t, H:2 * H] = dc * cache.c[:, t] * f * (1.0 - f)
        dz[:, t, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dz[:, t, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz[:, t] @ U
    flat_dz = dz.reshape(B * T, 4 * H)
    d_in = flat_dz.T @ cache.x.reshape(B * T, -1)
    d_rec = flat_dz.T @ cache.h[:, :-1].reshape(B * T, H)
    d_b = flat_dz.sum(axis=0)
    dx = dz @ layer.input_weights
    return LstmLayerParams(d_in, d_rec, d_b), dx


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[None] if x.ndim == 2 else x


def model_forward(params: ModelParams, window) -> np.ndarray:
    """Prediction(s) for window(s) of shape (T, D) or (B, T, D)."""
    x = np.asarray(window, dtype=float)
    single = x.ndim == 2
    out = _forward(params, _as_batch(x))[0]
    return out[0] if single else out


def _forward(params: ModelParams, x: np.ndarray):
    if x.shape[-1] != params.feature_width:
        raise WidthMismatch(f"model expects feature width {params.feature_width}, got {x.shape[-1]}")
    c1 = _lstm_forward(params.layer1, x)
    c2 = _lstm_forward(params.layer2, c1.h[:, 1:])
    last = c2.h[:, -1]
    return last @ params.fc_weights.T + params.fc_bias, c1, c2


def mse_loss(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(targets, dtype=float)
    if p.shape != y.shape:
        raise ShapeMismatch(f"prediction shape {p.shape} != target shape {y.shape}")
    return float(np.mean((p - y) ** 2))


def loss_and_grad(params: ModelParams, inputs, targets) -> tuple[float, ModelParams]:
    """MSE over batch and outputs, with its exact gradient for every parameter."""
    x = _as_batch(inputs)
    y = np.asarray(targets, dtype=float)
    if y.ndim == 1:
        y = y[None]
    if len(x) == 0:
        raise ShapeMismatch("empty batch")
    pred, c1, c2 = _forward(params, x)
    if pred.shape != y.shape:
        raise ShapeMismatch(f"prediction shape {pred.shape} != target shape {y.shape}")
    resid = pred - y
    loss = float(np.mean(resid ** 2))
    d_pred = 2.0 * resid / resid.size

    last = c2.h[:, -1]
    d_fc_w = d_pred.T @ last
    d_fc_b = d_pred.sum(axis=0)
    dh2 = np.zeros_like(c2.h[:, 1:])
    dh2[:, -1] = d_pred @ params.fc_weights
    g2, dx2 = _lstm_backward(params.layer2, c2, dh2)
    g1, _ = _lstm_backward(params.layer1, c1, dx2)
    return loss, ModelParams(g1, g2, d_fc_w, d_fc_b)


def backward(params: ModelParams, batch) -> ModelParams:
    """Gradient of the batch MSE; ``batch`` is an (inputs, targets) pair."""
    inputs, targets = batch
    return loss_and_grad(params, inputs, targets)[1]


def adam_step(params: ModelParams, grads: ModelParams, adam_state: AdamState,
              train_cfg: TrainConfig) -> tuple[ModelParams, AdamState]:
    """Bias-corrected Adam update, applied in place and returned for chaining."""
    adam_state.t += 1
    t = adam_state.t
    b1, b2 = train_cfg.beta1, train_cfg.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    g_named = grads.named()
    for name, theta in params.named().items():
        g = g_named[name]
        m = adam_state.m[name]
        v = adam_state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        theta -= train_cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + train_cfg.epsilon)
    return params, adam_state


@dataclass
class TargetScaler:
    """Affine map between raw CSI labels and the unit-scale training targets.

    Per-output mean, one shared scale, so training MSE is raw MSE / scale**2.
    """

    mean: np.ndarray
    scale: float

    @classmethod
    def identity(cls, width: int) -> "TargetScaler":
        return cls(np.zeros(width), 1.0)

    @classmethod
    def fit(cls, targets: np.ndarray) -> "TargetScaler":
        mean = targets.mean(axis=0)
        scale = float(np.sqrt(np.mean((targets - mean) ** 2)))
        return cls(mean, scale if scale > 0 else 1.0)

    def encode(self, y: np.ndarray) -> np.ndarray:
        return (y - self.mean) / self.scale

    def decode(self, z: np.ndarray) -> np.ndarray:
        return z * self.scale + self.mean


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    test_mse: float


@dataclass
class TrainResult:
    params: ModelParams
    adam: AdamState
    scaler: TargetScaler
    history: list[EpochRecord] = field(default_factory=list)
    initial_params: ModelParams | None = None
    initial_test_mse: float = float("nan")


def predict(params: ModelParams, scaler: TargetScaler, inputs: np.ndarray,
            chunk: int = 4096) -> np.ndarray:
    """Raw-scale predictions for a stack of windows."""
    x = _as_batch(inputs)
    out = [scaler.decode(_forward(params, x[s:s + chunk])[0]) for s in range(0, len(x), chunk)]
    return np.concatenate(out) if out else np.zeros((0, params.output_width))


def train(train_inputs: np.ndarray, train_targets: np.ndarray,
          test_inputs: np.ndarray, test_targets: np.ndarray,
          train_cfg: TrainConfig, hidden_size: int = 10,
          scaler: TargetScaler | None = None) -> TrainResult:
    """Mini-batch Adam on MSE; reported losses are on the raw label scale.

    Targets are centred and scaled with statistics of the training split
    before fitting; the scaler is part of the result and of checkpoints.
    """
    if len(train_inputs) == 0 or len(test_inputs) == 0:
        raise EmptySplit("train and test splits must be non-empty")
    width = train_inputs.shape[-1]
    out_width = train_targets.shape[-1]
    if out_width % 2:
        raise ShapeMismatch("targets must have an even width (real and imaginary halves)")
    params = init_params(width, out_width // 2, seed=train_cfg.seed, hidden_size=hidden_size)
    initial = params.copy()
    adam = AdamState.zeros_like(params)
    scaler = scaler or TargetScaler.fit(train_targets)
    z_train = scaler.encode(train_targets)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 1]))

    def test_mse() -> float:
        return mse_loss(predict(params, scaler, test_inputs), test_targets)

    result = TrainResult(params, adam, scaler, [], initial, test_mse())
    n = len(train_inputs)
    bs = train_cfg.batch_size
    scale2 = scaler.scale ** 2
    for epoch in range(1, train_cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            loss, grads = loss_and_grad(params, train_inputs[idx], z_train[idx])
            adam_step(params, grads, adam, train_cfg)
            total += loss * len(idx)
        result.history.append(EpochRecord(epoch, total / n * scale2, test_mse()))
    return result
