"""A small NHWC gradient engine for the fixed operator set the trainer uses.

Every layer caches what its backward pass needs during ``forward`` and
returns the gradient with respect to its input from ``backward``. Trainable
layers expose their arrays through ``params`` and the matching gradients
through ``grads``; the arrays are updated in place by :class:`SGD`.
"""

import typing as t
from abc import ABC, abstractmethod

import numpy as np
from scipy.special import expit, log_softmax, softmax

from tpu_imac_sim.mptrain.quantize import ternarize_values


def patches(x: np.ndarray, fh: int, fw: int, stride: int) -> np.ndarray:
    """Gather sliding windows of an ``N x H x W x C`` batch.

    Returns:
        np.ndarray: ``N x OH x OW x FH x FW x C`` window tensor.
    """
    n, h, w, c = x.shape
    oh = (h - fh) // stride + 1
    ow = (w - fw) // stride + 1
    col = np.empty((n, oh, ow, fh, fw, c), dtype=x.dtype)
    for y in range(fh):
        y_max = y + stride * oh
        for xx in range(fw):
            x_max = xx + stride * ow
            col[:, :, :, y, xx, :] = x[:, y:y_max:stride, xx:x_max:stride, :]
    return col


def fold_patches(col: np.ndarray, x_shape, stride: int) -> np.ndarray:
    """Scatter-add a window tensor back onto an ifmap, inverse of :func:`patches`."""
    _, oh, ow, fh, fw, _ = col.shape
    dx = np.zeros(x_shape, dtype=col.dtype)
    for y in range(fh):
        y_max = y + stride * oh
        for xx in range(fw):
            x_max = xx + stride * ow
            dx[:, y:y_max:stride, xx:x_max:stride, :] += col[:, :, :, y, xx, :]
    return dx


class Layer(ABC):
    """Abstract base class for a layer of the gradient engine."""

    trainable = False

    def __init__(self, name: str):
        self.name = name

    def params(self) -> t.Dict[str, np.ndarray]:
        return {}

    def grads(self) -> t.Dict[str, np.ndarray]:
        return {}

    @abstractmethod
    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @abstractmethod
    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class Conv2D(Layer):
    trainable = True

    def __init__(self, name: str, weight: np.ndarray, bias: np.ndarray, stride: int = 1):
        super().__init__(name)
        self.weight = weight  # fh x fw x cin x cout
        self.bias = bias
        self.stride = stride
        self._cache = None
        self._grads = {}

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return self._grads

    def forward(self, x):
        fh, fw, cin, cout = self.weight.shape
        col = patches(x, fh, fw, self.stride)
        n, oh, ow = col.shape[:3]
        col2d = col.reshape(n * oh * ow, fh * fw * cin)
        self._cache = (x.shape, col2d, col.shape)
        out = col2d @ self.weight.reshape(-1, cout) + self.bias
        return out.reshape(n, oh, ow, cout)

    def backward(self, grad):
        x_shape, col2d, col_shape = self._cache
        cout = self.weight.shape[-1]
        g2d = grad.reshape(-1, cout)
        self._grads = {
            "weight": (col2d.T @ g2d).reshape(self.weight.shape),
            "bias": g2d.sum(axis=0),
        }
        dcol = g2d @ self.weight.reshape(-1, cout).T
        return fold_patches(dcol.reshape(col_shape), x_shape, self.stride)


class DepthwiseConv2D(Layer):
    trainable = True

    def __init__(self, name: str, weight: np.ndarray, bias: np.ndarray, stride: int = 1):
        super().__init__(name)
        self.weight = weight  # fh x fw x c
        self.bias = bias
        self.stride = stride
        self._cache = None
        self._grads = {}

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return self._grads

    def forward(self, x):
        fh, fw, _ = self.weight.shape
        col = patches(x, fh, fw, self.stride)
        self._cache = (x.shape, col)
        return np.einsum("nijyxc,yxc->nijc", col, self.weight) + self.bias

    def backward(self, grad):
        x_shape, col = self._cache
        self._grads = {
            "weight": np.einsum("nijyxc,nijc->yxc", col, grad),
            "bias": grad.sum(axis=(0, 1, 2)),
        }
        dcol = grad[:, :, :, None, None, :] * self.weight
        return fold_patches(dcol, x_shape, self.stride)


class MaxPool2D(Layer):
    def __init__(self, name: str, size: t.Tuple[int, int], stride: int):
        super().__init__(name)
        self.size = size
        self.stride = stride
        self._cache = None

    def forward(self, x):
        fh, fw = self.size
        col = patches(x, fh, fw, self.stride)
        n, oh, ow, _, _, c = col.shape
        flat = col.reshape(n, oh, ow, fh * fw, c)
        idx = flat.argmax(axis=3)
        self._cache = (x.shape, col.shape, idx)
        return np.take_along_axis(flat, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]

    def backward(self, grad):
        x_shape, col_shape, idx = self._cache
        n, oh, ow, fh, fw, c = col_shape
        dflat = np.zeros((n, oh, ow, fh * fw, c), dtype=grad.dtype)
        np.put_along_axis(dflat, idx[:, :, :, None, :], grad[:, :, :, None, :], axis=3)
        return fold_patches(dflat.reshape(col_shape), x_shape, self.stride)


class AvgPool2D(Layer):
    def __init__(self, name: str, size: t.Tuple[int, int], stride: int):
        super().__init__(name)
        self.size = size
        self.stride = stride
        self._cache = None

    def forward(self, x):
        fh, fw = self.size
        col = patches(x, fh, fw, self.stride)
        self._cache = (x.shape, col.shape)
        return col.mean(axis=(3, 4))

    def backward(self, grad):
        x_shape, col_shape = self._cache
        fh, fw = col_shape[3], col_shape[4]
        dcol = np.broadcast_to(
            grad[:, :, :, None, None, :] / (fh * fw), col_shape
        ).copy()
        return fold_patches(dcol, x_shape, self.stride)


class ZeroPad(Layer):
    """Symmetric zero halo for layers that declare pre-padded inputs."""

    def __init__(self, name: str, pad_h: int, pad_w: int):
        super().__init__(name)
        self.pad_h = pad_h
        self.pad_w = pad_w

    def forward(self, x):
        ph, pw = self.pad_h, self.pad_w
        return np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))

    def backward(self, grad):
        ph, pw = self.pad_h, self.pad_w
        return grad[:, ph : grad.shape[1] - ph, pw : grad.shape[2] - pw, :]


class Flatten(Layer):
    def __init__(self, name: str):
        super().__init__(name)
        self._shape = None

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(len(x), -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Dense(Layer):
    """Bias-free fully connected layer, ``y = x @ W.T`` with W ``out x in``."""

    trainable = True

    def __init__(self, name: str, weight: np.ndarray):
        super().__init__(name)
        self.weight = weight
        self._x = None
        self._grads = {}

    def params(self):
        return {"weight": self.weight}

    def grads(self):
        return self._grads

    def effective_weight(self) -> np.ndarray:
        return self.weight

    def forward(self, x):
        self._x = x
        return x @ self.effective_weight().T

    def backward(self, grad):
        self._grads = {"weight": grad.T @ self._x}
        return grad @ self.effective_weight()


class TernaryDense(Dense):
    """Dense layer whose forward pass uses the ternarized shadow weights.

    The gradient with respect to the shadow weights passes straight through
    the quantizer.
    """

    def __init__(self, name: str, weight: np.ndarray):
        super().__init__(name, weight)
        self._w = None

    def effective_weight(self) -> np.ndarray:
        return ternarize_values(self.weight).astype(self.weight.dtype)

    def forward(self, x):
        self._x = x
        self._w = self.effective_weight()
        return x @ self._w.T

    def backward(self, grad):
        self._grads = {"weight": grad.T @ self._x}
        return grad @ self._w


class ReLU(Layer):
    def __init__(self, name: str):
        super().__init__(name)
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return np.maximum(x, 0.0)

    def backward(self, grad):
        return grad * self._mask


class Tanh(Layer):
    def __init__(self, name: str):
        super().__init__(name)
        self._y = None

    def forward(self, x):
        self._y = np.tanh(x)
        return self._y

    def backward(self, grad):
        return grad * (1.0 - self._y**2)


class Sigmoid(Layer):
    def __init__(self, name: str, slope: float = 1.0):
        super().__init__(name)
        self.slope = slope
        self._y = None

    def forward(self, x):
        self._y = expit(self.slope * x)
        return self._y

    def backward(self, grad):
        return grad * self.slope * self._y * (1.0 - self._y)


class SignSTE(Layer):
    """Sign binarization (``>= 0`` maps to +1) with a clipped straight-through gradient."""

    def __init__(self, name: str):
        super().__init__(name)
        self._pass = None

    def forward(self, x):
        self._pass = np.abs(x) <= 1.0
        return np.where(x >= 0, 1.0, -1.0)

    def backward(self, grad):
        return grad * self._pass


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> t.Tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over a batch and its gradient."""
    n = len(labels)
    rows = np.arange(n)
    loss = -float(log_softmax(logits, axis=1)[rows, labels].mean())
    grad = softmax(logits, axis=1)
    grad[rows, labels] -= 1.0
    return loss, grad / n


class SGD:
    """Minibatch SGD with classical momentum."""

    def __init__(self, layers: t.Sequence[Layer], lr: float, momentum: float = 0.0):
        self.layers = [layer for layer in layers if layer.trainable]
        self.lr = lr
        self.momentum = momentum
        self._velocity = {
            (layer.name, key): np.zeros_like(value)
            for layer in self.layers
            for key, value in layer.params().items()
        }

    def step(self):
        for layer in self.layers:
            grads = layer.grads()
            for key, param in layer.params().items():
                v = self._velocity[(layer.name, key)]
                v *= self.momentum
                v -= self.lr * grads[key]
                param += v

    def params_finite(self) -> bool:
        return all(
            np.isfinite(param).all() for layer in self.layers for param in layer.params().values()
        )


def run_forward(layers: t.Sequence[Layer], x: np.ndarray) -> np.ndarray:
    for layer in layers:
        x = layer.forward(x)
    return x


def run_backward(layers: t.Sequence[Layer], grad: np.ndarray) -> np.ndarray:
    for layer in reversed(layers):
        grad = layer.backward(grad)
    return grad
