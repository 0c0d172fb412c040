"""Tiny CNN on raw numpy: inference, momentum-SGD training, saliency.

Fixed architecture for WxW single-channel frames:

    conv 5x5 (10 maps, zero pad 2) - relu - maxpool 2x2
    conv 5x5 (20 maps, zero pad 2) - relu - maxpool 2x2
    fc 100 - relu - fc 10 - softmax

Convolutions keep spatial size, each pool halves it (floor), so a 36 px
frame flows 36 -> 36 -> 18 -> 18 -> 9 and fc1 sees 20*9*9 = 1620 inputs.
All math is float64; tensors are batch-first (N, C, H, W).
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .events import Frame

KSIZE = 5
PAD = 2
N_CLASSES = 10
SUPPORTED_WIDTHS = (36, 54, 72)


@dataclass
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    weight_scale: float = 1.0  # multiplier on the uniform Glorot init limit


# ------------------------------------------------------------------ layers

def _im2col(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    """(N, C, H, W) -> (N, C*k*k, H*W) patch matrix for same-size conv."""
    n, c, h, w = x.shape
    padded = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    padded[:, :, pad:pad + h, pad:pad + w] = x
    cols = np.empty((n, c, k, k, h, w), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            cols[:, :, ki, kj] = padded[:, :, ki:ki + h, kj:kj + w]
    return cols.reshape(n, c * k * k, h * w)


def _col2im(dcols: np.ndarray, shape: tuple, k: int, pad: int) -> np.ndarray:
    """Adjoint of _im2col: scatter patch gradients back onto the input."""
    n, c, h, w = shape
    d = dcols.reshape(n, c, k, k, h, w)
    dpad = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    for ki in range(k):
        for kj in range(k):
            dpad[:, :, ki:ki + h, kj:kj + w] += d[:, :, ki, kj]
    return dpad[:, :, pad:pad + h, pad:pad + w]


class Conv2D:
    """5x5 same-padding convolution."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator,
                 scale: float = 1.0):
        fan_in = in_ch * KSIZE * KSIZE
        fan_out = out_ch * KSIZE * KSIZE
        limit = scale * np.sqrt(6.0 / (fan_in + fan_out))
        self.weights = rng.uniform(-limit, limit, (out_ch, in_ch, KSIZE, KSIZE))
        self.biases = np.zeros(out_ch)
        self._cache = None

    def forward(self, x: np.ndarray, keep: bool = False) -> np.ndarray:
        n, c, h, w = x.shape
        cols = _im2col(x, KSIZE, PAD)
        wmat = self.weights.reshape(self.weights.shape[0], -1)
        out = np.matmul(wmat, cols) + self.biases[:, None]
        if keep:
            self._cache = (cols, x.shape)
        return out.reshape(n, -1, h, w)

    def backward(self, dout: np.ndarray):
        cols, xshape = self._cache
        n, m, h, w = dout.shape
        dflat = dout.reshape(n, m, h * w)
        self.dbiases = dflat.sum(axis=(0, 2))
        self.dweights = np.matmul(dflat, cols.transpose(0, 2, 1)).sum(axis=0) \
            .reshape(self.weights.shape)
        wmat = self.weights.reshape(m, -1)
        dcols = np.matmul(wmat.T, dflat)
        return _col2im(dcols, xshape, KSIZE, PAD)

    def params(self):
        return [("weights", self.weights), ("biases", self.biases)]

    def grads(self):
        return [self.dweights, self.dbiases]


class ReLU:
    def forward(self, x: np.ndarray, keep: bool = False) -> np.ndarray:
        if keep:
            self._mask = x > 0
        return np.maximum(x, 0.0)

    def backward(self, dout: np.ndarray, guided: bool = False) -> np.ndarray:
        d = dout * self._mask
        if guided:
            d = np.where(d > 0, d, 0.0)  # also gate on positive gradient
        return d


class MaxPool2:
    """2x2 max pooling, stride 2; odd trailing rows or columns are dropped."""

    def forward(self, x: np.ndarray, keep: bool = False) -> np.ndarray:
        n, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        crop = x[:, :, :2 * h2, :2 * w2]
        windows = crop.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5) \
            .reshape(n, c, h2, w2, 4)
        idx = windows.argmax(axis=-1)
        out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
        if keep:
            self._cache = (idx, x.shape)
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        idx, (n, c, h, w) = self._cache
        h2, w2 = h // 2, w // 2
        dwin = np.zeros((n, c, h2, w2, 4), dtype=dout.dtype)
        np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
        dcrop = dwin.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5) \
            .reshape(n, c, 2 * h2, 2 * w2)
        if 2 * h2 == h and 2 * w2 == w:
            return dcrop
        dx = np.zeros((n, c, h, w), dtype=dout.dtype)
        dx[:, :, :2 * h2, :2 * w2] = dcrop
        return dx


class Dense:
    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator, scale: float = 1.0):
        limit = scale * np.sqrt(6.0 / (in_features + out_features))
        self.weights = rng.uniform(-limit, limit, (out_features, in_features))
        self.biases = np.zeros(out_features)

    def forward(self, x: np.ndarray, keep: bool = False) -> np.ndarray:
        if keep:
            self._x = x
        return x @ self.weights.T + self.biases

    def backward(self, dout: np.ndarray) -> np.ndarray:
        self.dweights = dout.T @ self._x
        self.dbiases = dout.sum(axis=0)
        return dout @ self.weights

    def backward_input(self, dout: np.ndarray) -> np.ndarray:
        return dout @ self.weights

    def params(self):
        return [("weights", self.weights), ("biases", self.biases)]

    def grads(self):
        return [self.dweights, self.dbiases]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ----------------------------------------------------------------- network

class Network:
    """The fixed detection stack for a given input width."""

    def __init__(self, input_width: int = 36, seed: int = 0, scale: float = 1.0):
        if input_width not in SUPPORTED_WIDTHS:
            raise ValueError(f"input width must be one of {SUPPORTED_WIDTHS}")
        rng = np.random.default_rng(seed)
        self.input_width = input_width
        w4 = input_width // 2 // 2
        self.conv1 = Conv2D(1, 10, rng, scale)
        self.relu1 = ReLU()
        self.pool1 = MaxPool2()
        self.conv2 = Conv2D(10, 20, rng, scale)
        self.relu2 = ReLU()
        self.pool2 = MaxPool2()
        self.fc1 = Dense(20 * w4 * w4, 100, rng, scale)
        self.relu3 = ReLU()
        self.fc2 = Dense(100, N_CLASSES, rng, scale)
        self.temperature = 1.0
        self._velocity = None

    def param_layers(self):
        return [("conv1", self.conv1), ("conv2", self.conv2),
                ("fc1", self.fc1), ("fc2", self.fc2)]

    def logits(self, x: np.ndarray, keep: bool = False) -> np.ndarray:
        """x is (N, 1, W, W); returns (N, 10) pre-softmax scores."""
        h = self.conv1.forward(x, keep)
        h = self.relu1.forward(h, keep)
        h = self.pool1.forward(h, keep)
        h = self.conv2.forward(h, keep)
        h = self.relu2.forward(h, keep)
        h = self.pool2.forward(h, keep)
        n = h.shape[0]
        self._pool2_shape = h.shape
        h = h.reshape(n, -1)
        h = self.fc1.forward(h, keep)
        h = self.relu3.forward(h, keep)
        return self.fc2.forward(h, keep)


def _as_batch(frames) -> np.ndarray:
    if isinstance(frames, Frame):
        frames = frames.pixels
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim == 3:
        x = x[:, None]
    return x


def forward(net: Network, frame) -> np.ndarray:
    """Class probabilities for one frame; accepts a Frame or a (W, W) array.

    Logits are divided by net.temperature before the softmax. Training
    always runs at temperature 1; a calibrated temperature only reshapes
    the published probabilities (the argmax is unchanged).
    """
    probs = softmax(net.logits(_as_batch(frame)) / net.temperature)
    return probs[0]


def predict_batch(net: Network, frames: np.ndarray, chunk: int = 512) -> np.ndarray:
    """(N, W, W) -> (N, 10) probabilities, evaluated in bounded chunks."""
    outs = []
    for i in range(0, len(frames), chunk):
        logits = net.logits(_as_batch(frames[i:i + chunk]))
        outs.append(softmax(logits / net.temperature))
    return np.concatenate(outs, axis=0)


def conv2d_forward(x: np.ndarray, kernels: np.ndarray, biases: np.ndarray) -> np.ndarray:
    """Standalone same-padding convolution. x is (C, H, W) or (N, C, H, W)."""
    single = x.ndim == 3
    if single:
        x = x[None]
    cols = _im2col(np.asarray(x, dtype=np.float64), KSIZE, PAD)
    wmat = kernels.reshape(kernels.shape[0], -1)
    out = (np.matmul(wmat, cols) + biases[:, None]) \
        .reshape(x.shape[0], -1, x.shape[2], x.shape[3])
    return out[0] if single else out


def maxpool_forward(x: np.ndarray):
    """Standalone 2x2 max pool. Returns (output, window argmax in 0..3)."""
    single = x.ndim == 3
    if single:
        x = x[None]
    pool = MaxPool2()
    out = pool.forward(np.asarray(x, dtype=np.float64), keep=True)
    idx = pool._cache[0]
    return (out[0], idx[0]) if single else (out, idx)


# ---------------------------------------------------------------- training

def loss_and_grads(net: Network, x: np.ndarray, y: np.ndarray) -> float:
    """Cross-entropy over a batch; leaves gradients on the layers."""
    logits = net.logits(x, keep=True)
    n = len(y)
    zmax = logits.max(axis=1, keepdims=True)
    logp = logits - zmax - np.log(np.exp(logits - zmax).sum(axis=1, keepdims=True))
    loss = -float(logp[np.arange(n), y].mean())
    probs = np.exp(logp)
    dlogits = probs
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n

    d = net.fc2.backward(dlogits)
    d = net.relu3.backward(d)
    d = net.fc1.backward(d)
    d = d.reshape(net._pool2_shape)
    d = net.pool2.backward(d)
    d = net.relu2.backward(d)
    d = net.conv2.backward(d)
    d = net.pool1.backward(d)
    d = net.relu1.backward(d)
    net.conv1.backward(d)
    return loss


def batch_loss(net: Network, x: np.ndarray, y: np.ndarray) -> float:
    """Cross-entropy without touching gradients or caches (for checks)."""
    logits = net.logits(np.asarray(x, dtype=np.float64))
    zmax = logits.max(axis=1, keepdims=True)
    logp = logits - zmax - np.log(np.exp(logits - zmax).sum(axis=1, keepdims=True))
    return -float(logp[np.arange(len(y)), y].mean())


def train_step(net: Network, batch: tuple, cfg: TrainConfig) -> float:
    """One momentum-SGD update on (frames, labels). Returns the batch loss."""
    frames, labels = batch
    x = _as_batch(frames)
    y = np.asarray(labels, dtype=np.int64)
    loss = loss_and_grads(net, x, y)
    if not np.isfinite(loss):
        raise ArithmeticError("training diverged: non-finite loss")
    if net._velocity is None:
        net._velocity = [np.zeros_like(p) for _, layer in net.param_layers()
                         for _, p in layer.params()]
    i = 0
    for _, layer in net.param_layers():
        for (_, p), g in zip(layer.params(), layer.grads()):
            v = net._velocity[i]
            v *= cfg.momentum
            v -= cfg.lr * g
            p += v
            i += 1
    return loss


def train_network(net: Network, frames: np.ndarray, labels: np.ndarray,
                  cfg: TrainConfig, log=None) -> list[float]:
    """Epoch loop with per-epoch reshuffling. Returns mean loss per epoch."""
    rng = np.random.default_rng(cfg.seed)
    n = len(labels)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for i in range(0, n, cfg.batch_size):
            sel = order[i:i + cfg.batch_size]
            total += train_step(net, (frames[sel], labels[sel]), cfg)
            batches += 1
        history.append(total / batches)
        if log:
            log(f"epoch {epoch + 1}/{cfg.epochs} loss {history[-1]:.4f}")
    return history


def accuracy(net: Network, frames: np.ndarray, labels: np.ndarray) -> float:
    probs = predict_batch(net, frames)
    return float((probs.argmax(axis=1) == np.asarray(labels)).mean())


# ---------------------------------------------------------------- saliency

def _saliency(net: Network, frame, unit: int, guided: bool) -> np.ndarray:
    x = _as_batch(frame)
    net.logits(x, keep=True)  # populate caches
    d = np.zeros((1, net.fc1.biases.size))
    d[0, unit] = 1.0
    d = net.fc1.backward_input(d)
    d = d.reshape(net._pool2_shape)
    d = net.pool2.backward(d)
    d = net.relu2.backward(d, guided=guided)
    d = net.conv2.backward(d)
    d = net.pool1.backward(d)
    d = net.relu1.backward(d, guided=guided)
    d = net.conv1.backward(d)
    return d[0, 0]


def guided_backprop(net: Network, frame, unit: int) -> np.ndarray:
    """Guided-backprop saliency of hidden fc unit `unit` as a (W, W) map.

    ReLU backward passes are additionally gated on positive gradients, so
    only evidence that excites the unit survives.
    """
    if not 0 <= unit < net.fc1.biases.size:
        raise ValueError("unit index out of range")
    return _saliency(net, frame, unit, guided=True)


def input_gradient(net: Network, frame, unit: int) -> np.ndarray:
    """Plain gradient of hidden fc unit `unit` with respect to the input."""
    return _saliency(net, frame, unit, guided=False)


# ------------------------------------------------------------- weight files

MAGIC = "PREYNET v1"
_FC1_WIDTHS = {1620: 36, 3380: 54, 6480: 72}


def save_weights(net: Network) -> bytes:
    """Serialize to the decimal text format (17 significant digits)."""
    out = io.StringIO()
    out.write(MAGIC + "\n")
    if net.temperature != 1.0:
        out.write(f"temperature {net.temperature:.17g}\n")
    for name, layer in net.param_layers():
        kind = "conv" if isinstance(layer, Conv2D) else "fc"
        dims = " ".join(str(d) for d in layer.weights.shape)
        out.write(f"layer {name} {kind} {dims}\n")
        for arr in (layer.weights, layer.biases):
            flat = arr.reshape(-1)
            for i in range(0, flat.size, 8):
                out.write(" ".join(f"{v:.17g}" for v in flat[i:i + 8]) + "\n")
    return out.getvalue().encode("ascii")


def load_weights(data) -> Network:
    """Parse save_weights output back into a Network."""
    if isinstance(data, bytes):
        data = data.decode("ascii")
    lines = data.split("\n", 1)
    if not lines or lines[0].strip() != MAGIC:
        raise ValueError(f"bad weight file header: expected {MAGIC!r}")
    tokens = lines[1].split() if len(lines) > 1 else []
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(tokens):
            raise ValueError("weight file ends early")
        out = tokens[pos:pos + n]
        pos += n
        return out

    temperature = 1.0
    if pos < len(tokens) and tokens[pos] == "temperature":
        pos += 1
        temperature = float(take(1)[0])
        if not (np.isfinite(temperature) and temperature > 0):
            raise ValueError("temperature must be finite and positive")

    parsed = {}
    order = []
    while pos < len(tokens):
        if tokens[pos] != "layer":
            raise ValueError(f"expected 'layer' marker, found {tokens[pos]!r}")
        pos += 1
        name, kind = take(2)
        ndim = 4 if kind == "conv" else 2
        dims = tuple(int(v) for v in take(ndim))
        n_w = int(np.prod(dims))
        weights = np.array([float(v) for v in take(n_w)]).reshape(dims)
        biases = np.array([float(v) for v in take(dims[0])])
        parsed[name] = (kind, weights, biases)
        order.append(name)

    expected = ["conv1", "conv2", "fc1", "fc2"]
    if order != expected:
        for i, want in enumerate(expected):
            got = order[i] if i < len(order) else "<missing>"
            if want != got:
                raise ValueError(f"expected layer {want}, found {got}")
        raise ValueError(f"unexpected extra layer {order[len(expected)]}")
    kind, w, _b = parsed["fc1"]
    if kind != "fc" or w.shape[1] not in _FC1_WIDTHS:
        raise ValueError(f"fc1 input size {w.shape[1]} matches no supported width")
    net = Network(input_width=_FC1_WIDTHS[w.shape[1]])
    for name, layer in net.param_layers():
        kind, weights, biases = parsed[name]
        if weights.shape != layer.weights.shape:
            raise ValueError(f"layer {name}: shape {weights.shape} does not match")
        layer.weights = weights
        layer.biases = biases
    net.temperature = temperature
    return net


def save_weights_file(net: Network, path: str) -> None:
    with open(path, "wb") as f:
        f.write(save_weights(net))


def load_weights_file(path: str) -> Network:
    with open(path, "rb") as f:
        return load_weights(f.read())


def count_parameters(net: Network) -> dict:
    """Weight and bias counts per layer plus the conv/fc split totals."""
    detail = {}
    for name, layer in net.param_layers():
        detail[name] = {"weights": int(layer.weights.size),
                        "biases": int(layer.biases.size)}
    detail["conv_weights"] = detail["conv1"]["weights"] + detail["conv2"]["weights"]
    detail["fc1_weights"] = detail["fc1"]["weights"]
    detail["total"] = sum(v["weights"] + v["biases"]
                          for k, v in detail.items() if isinstance(v, dict))
    return detail
