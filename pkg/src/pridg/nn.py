"""Small numpy layer library with hand-written reverse-mode gradients.

Layers keep the context of their last ``forward`` call and consume it in
``backward``.  There is no general graph: models are fixed sequential
stacks, and branching (label head vs. domain head) is wired by hand in
:mod:`pridg.model`.

Storage is float32.  Every layer is dtype-generic, so a float64 copy of a
stack (``astype(np.float64)``) serves as the shadow for finite-difference
checks.
"""
from __future__ import annotations

import copy
import json
import struct
from typing import BinaryIO, Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float32


class Tensor:
    """Dense array with an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad")

    def __init__(self, data, grad=None):
        self.data = np.asarray(data)
        if grad is not None:
            grad = np.asarray(grad)
            if grad.shape != self.data.shape:
                raise ValueError(f"grad shape {grad.shape} != data shape {self.data.shape}")
        self.grad = grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DTYPE)


class Layer:
    kind = "layer"

    def __init__(self):
        self._ctx = None

    def params(self) -> list[Tensor]:
        return []

    def config(self) -> dict:
        return {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _take_ctx(self):
        if self._ctx is None:
            raise RuntimeError(f"{self.kind}.backward called without a preceding forward")
        ctx, self._ctx = self._ctx, None
        return ctx

    def __call__(self, x):
        return self.forward(x)

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def astype(self, dtype) -> "Layer":
        other = copy.deepcopy(self)
        for p in other.params():
            p.data = p.data.astype(dtype)
            p.grad = None
        other._ctx = None
        return other

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v}" for k, v in self.config().items())
        return f"{type(self).__name__}({args})"


def _check_ndim(kind: str, x: np.ndarray, ndim: int, what: str) -> None:
    if x.ndim != ndim:
        raise ValueError(f"{kind} expects a {ndim}-d input {what}, got shape {x.shape}")


class Conv1d(Layer):
    """Valid cross-correlation over (batch, channels, length) input."""

    kind = "conv1d"

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1, rng=None):
        super().__init__()
        if min(in_ch, out_ch, kernel, stride) < 1:
            raise ValueError("conv1d sizes must be positive")
        self.in_ch, self.out_ch, self.kernel, self.stride = in_ch, out_ch, kernel, stride
        rng = np.random.default_rng() if rng is None else rng
        fan_in = in_ch * kernel
        self.weight = Tensor(kaiming_uniform(rng, (out_ch, in_ch, kernel), fan_in))
        self.bias = Tensor(np.zeros(out_ch, dtype=DTYPE))

    def params(self):
        return [self.weight, self.bias]

    def config(self):
        return {"in_ch": self.in_ch, "out_ch": self.out_ch, "kernel": self.kernel, "stride": self.stride}

    def output_length(self, length: int) -> int:
        return (length - self.kernel) // self.stride + 1

    def forward(self, x):
        _check_ndim(self.kind, x, 3, "(batch, channels, length)")
        B, C, L = x.shape
        if C != self.in_ch:
            raise ValueError(f"conv1d expected {self.in_ch} input channels, got {C}")
        if L < self.kernel:
            raise ValueError(f"conv1d expected length >= {self.kernel}, got {L}")
        # (B, C, Lout, K)
        win = sliding_window_view(x, self.kernel, axis=2)[:, :, :: self.stride]
        Lout = win.shape[2]
        cols = win.transpose(0, 2, 1, 3).reshape(B * Lout, C * self.kernel)
        w2 = self.weight.data.reshape(self.out_ch, -1)
        out = cols @ w2.T + self.bias.data
        self._ctx = (cols, x.shape, Lout)
        return np.ascontiguousarray(out.reshape(B, Lout, self.out_ch).transpose(0, 2, 1))

    def backward(self, grad):
        cols, (B, C, L), Lout = self._take_ctx()
        g2 = grad.transpose(0, 2, 1).reshape(B * Lout, self.out_ch)
        w2 = self.weight.data.reshape(self.out_ch, -1)
        _accumulate(self.weight, (g2.T @ cols).reshape(self.weight.shape))
        _accumulate(self.bias, grad.sum(axis=(0, 2)))
        if self.stride == 1:
            # input gradient = full correlation of the padded upstream grad with the flipped kernel
            K = self.kernel
            gpad = np.pad(grad, ((0, 0), (0, 0), (K - 1, K - 1)))
            gwin = sliding_window_view(gpad, K, axis=2)  # (B, O, L, K)
            gcols = gwin.transpose(0, 2, 1, 3).reshape(B * L, self.out_ch * K)
            wflip = self.weight.data[:, :, ::-1].transpose(0, 2, 1).reshape(self.out_ch * K, C)
            return np.ascontiguousarray((gcols @ wflip).reshape(B, L, C).transpose(0, 2, 1))
        dcols = (g2 @ w2).reshape(B, Lout, C, self.kernel)
        dx = np.zeros((B, C, L), dtype=grad.dtype)
        span = self.stride * (Lout - 1) + 1
        for k in range(self.kernel):
            dx[:, :, k : k + span : self.stride] += dcols[:, :, :, k].transpose(0, 2, 1)
        return dx


class Linear(Layer):
    kind = "linear"

    def __init__(self, n_in: int, n_out: int, rng=None):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        rng = np.random.default_rng() if rng is None else rng
        self.weight = Tensor(kaiming_uniform(rng, (n_out, n_in), n_in))
        self.bias = Tensor(np.zeros(n_out, dtype=DTYPE))

    def params(self):
        return [self.weight, self.bias]

    def config(self):
        return {"n_in": self.n_in, "n_out": self.n_out}

    def forward(self, x):
        _check_ndim(self.kind, x, 2, "(batch, features)")
        if x.shape[1] != self.n_in:
            raise ValueError(f"linear expected {self.n_in} input features, got {x.shape[1]}")
        self._ctx = x
        return x @ self.weight.data.T + self.bias.data

    def backward(self, grad):
        x = self._take_ctx()
        _accumulate(self.weight, grad.T @ x)
        _accumulate(self.bias, grad.sum(axis=0))
        return grad @ self.weight.data


class MaxPool1d(Layer):
    """Non-overlapping max pool; a trailing remainder shorter than the window is dropped.

    Ties route the gradient to the lowest index.
    """

    kind = "maxpool1d"

    def __init__(self, window: int):
        super().__init__()
        if window < 1:
            raise ValueError("pool window must be positive")
        self.window = window

    def config(self):
        return {"window": self.window}

    def output_length(self, length: int) -> int:
        return length // self.window

    def forward(self, x):
        _check_ndim(self.kind, x, 3, "(batch, channels, length)")
        B, C, L = x.shape
        Lout = L // self.window
        if Lout == 0:
            raise ValueError(f"maxpool1d window {self.window} longer than input length {L}")
        xr = x[:, :, : Lout * self.window].reshape(B, C, Lout, self.window)
        best = xr[..., 0].copy()
        idx = np.zeros(best.shape, dtype=np.int8)
        for j in range(1, self.window):
            cand = xr[..., j]
            better = cand > best  # strict: ties keep the lower index
            best = np.where(better, cand, best)
            idx[better] = j
        self._ctx = (idx, x.shape)
        return best

    def backward(self, grad):
        idx, (B, C, L) = self._take_ctx()
        Lout = idx.shape[2]
        dx = np.zeros((B, C, L), dtype=grad.dtype)
        view = dx[:, :, : Lout * self.window].reshape(B, C, Lout, self.window)
        for j in range(self.window):
            view[..., j] = np.where(idx == j, grad, 0)
        return dx


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        self._ctx = mask
        return np.where(mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, grad):
        return grad * self._take_ctx()


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x):
        y = softmax(x)
        self._ctx = y
        return y

    def backward(self, grad):
        y = self._take_ctx()
        return y * (grad - (grad * y).sum(axis=-1, keepdims=True))


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x):
        self._ctx = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._take_ctx())


class GradReverse(Layer):
    """Identity on the way forward; scales the gradient by ``-lam`` on the way back."""

    kind = "grad_reverse"

    def __init__(self, lam: float = 1.0):
        super().__init__()
        self.lam = lam

    @property
    def lam(self) -> float:
        return self._lam

    @lam.setter
    def lam(self, value: float) -> None:
        if value < 0:
            raise ValueError("reversal strength must be >= 0")
        self._lam = float(value)

    def config(self):
        return {"lam": self.lam}

    def forward(self, x):
        self._ctx = True
        return x

    def backward(self, grad):
        self._take_ctx()
        return grad * grad.dtype.type(-self.lam)


class Sequential(Layer):
    kind = "sequential"

    def __init__(self, *layers: Layer):
        super().__init__()
        self.layers = list(layers)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def astype(self, dtype):
        return Sequential(*(layer.astype(dtype) for layer in self.layers))

    def manifest(self) -> list[dict]:
        return [{"kind": layer.kind, **layer.config()} for layer in self.layers]

    def __repr__(self):
        inner = ",\n  ".join(repr(layer) for layer in self.layers)
        return f"Sequential(\n  {inner}\n)"


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad += g


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean categorical cross-entropy of softmax(logits) against one-hot targets.

    Returns the loss and its gradient with respect to ``logits``, which is
    ``(softmax(logits) - targets) / batch``.
    """
    if logits.shape != targets.shape or logits.ndim != 2:
        raise ValueError(f"logits {logits.shape} and targets {targets.shape} must both be (batch, classes)")
    is_binary = np.all((targets == 0) | (targets == 1))
    if not is_binary or not np.all(targets.sum(axis=1) == 1):
        raise ValueError("targets must be one-hot rows")
    B = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    probs = np.exp(log_probs)
    loss = -np.sum(targets * log_probs) / B
    grad = (probs - targets) / B
    return float(loss), grad.astype(logits.dtype, copy=False)


def one_hot(labels, n_classes: int, dtype=DTYPE) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels outside [0, {n_classes})")
    out = np.zeros((labels.size, n_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1
    return out


class SGD:
    """Momentum SGD: ``v <- mu*v + g; w <- w - lr*v``."""

    def __init__(self, params: Iterable[Tensor], lr: float = 0.01, momentum: float = 0.9):
        if lr < 0:
            raise ValueError("learning rate must be >= 0")
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient in parameter of shape {p.shape}")
        mu = np.float32(self.momentum)
        lr = np.float32(self.lr)
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= mu
            v += p.grad
            p.data -= lr * v


def sgd_step(params: Sequence[Tensor], velocity: Sequence[np.ndarray], lr: float, momentum: float) -> None:
    """Functional form of :class:`SGD` for callers that keep their own velocity buffers."""
    opt = SGD([], lr, momentum)
    opt.params, opt.velocity = list(params), list(velocity)
    opt.step()


# ---------------------------------------------------------------------------
# finite-difference verification


def _reversal_factors(fragment: Layer) -> tuple[list[float], float]:
    """Per-parameter factor that the hand-written backward applies relative to the true gradient.

    Parameters upstream of a GradReverse see their gradient multiplied by
    ``-lam``; finite differences of the forward pass do not.
    """
    layers = fragment.layers if isinstance(fragment, Sequential) else [fragment]
    factors: list[float] = []
    for i, layer in enumerate(layers):
        f = 1.0
        for later in layers[i + 1 :]:
            if isinstance(later, GradReverse):
                f *= -later.lam
        factors.extend([f] * len(layer.params()))
    input_factor = 1.0
    for layer in layers:
        if isinstance(layer, GradReverse):
            input_factor *= -layer.lam
    return factors, input_factor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    a, n = np.asarray(analytic, np.float64), np.asarray(numeric, np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def grad_check(
    fragment: Layer,
    x: np.ndarray,
    epsilon: float = 1e-6,
    loss: Callable[[np.ndarray], tuple[float, np.ndarray]] | None = None,
    seed: int = 0,
) -> float:
    """Largest relative error between backprop and central differences.

    The check runs on a float64 copy of ``fragment``.  Without ``loss`` the
    scalar objective is a fixed random projection of the output.  Every
    parameter element and every input element is perturbed.
    """
    frag = fragment.astype(np.float64)
    x = np.array(x, dtype=np.float64)
    if loss is None:
        probe = np.random.default_rng(seed).standard_normal(frag.forward(x).shape)

        def loss(out):
            return float(np.sum(probe * out)), probe

    def objective() -> float:
        return loss(frag.forward(x))[0]

    frag.zero_grad()
    _, g = loss(frag.forward(x))
    dx = frag.backward(g)

    factors, input_factor = _reversal_factors(frag)
    worst = 0.0
    for p, factor in zip(frag.params(), factors):
        num = _central_diff(objective, p.data, epsilon)
        worst = max(worst, relative_error(p.grad, factor * num))
    num_x = _central_diff(objective, x, epsilon)
    worst = max(worst, relative_error(dx, input_factor * num_x))
    return worst


def _central_diff(fn: Callable[[], float], arr: np.ndarray, eps: float) -> np.ndarray:
    out = np.zeros_like(arr, dtype=np.float64)
    flat, oflat = arr.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn()
        flat[i] = orig - eps
        lo = fn()
        flat[i] = orig
        oflat[i] = (hi - lo) / (2 * eps)
    return out


# ---------------------------------------------------------------------------
# checkpoint files
#
# Layout (all integers little-endian):
#   bytes 0-3   magic b"PRDG"
#   bytes 4-5   uint16 format version
#   bytes 6-9   uint32 N, length of the UTF-8 JSON manifest
#   bytes 10..  manifest: {"tensors": [{"name", "shape"}, ...], ...extra keys}
#   then each tensor in manifest order as row-major float32

MAGIC = b"PRDG"
CHECKPOINT_VERSION = 1


def write_checkpoint(fh: BinaryIO, named: Sequence[tuple[str, Tensor]], manifest: dict | None = None) -> None:
    head = dict(manifest or {})
    head["tensors"] = [{"name": name, "shape": list(t.shape)} for name, t in named]
    blob = json.dumps(head, sort_keys=True).encode("utf-8")
    fh.write(MAGIC)
    fh.write(struct.pack("<HI", CHECKPOINT_VERSION, len(blob)))
    fh.write(blob)
    for _, t in named:
        fh.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def read_checkpoint(fh: BinaryIO) -> tuple[dict, dict[str, np.ndarray]]:
    magic = fh.read(4)
    if magic != MAGIC:
        raise ValueError(f"not a checkpoint file (magic {magic!r})")
    version, n = struct.unpack("<HI", fh.read(6))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    manifest = json.loads(fh.read(n).decode("utf-8"))
    arrays = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        buf = fh.read(4 * count)
        if len(buf) != 4 * count:
            raise ValueError(f"truncated checkpoint at tensor {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(buf, dtype="<f4").reshape(shape).astype(DTYPE)
    return manifest, arrays
