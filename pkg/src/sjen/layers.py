"""Neural layers on top of the autodiff tensor core.

Initialization is uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) everywhere, drawn
from an explicit ``numpy.random.Generator`` so that a run seed fixes every
parameter. fan_in follows the usual convention: receiving features times
receptive field (weight axis 1 for the conv kernels). The LSTM uses gate
order (input, forget, cell, output) with the forget-gate bias lifted by +1.

Each layer knows its own analytic multiply-accumulate cost via ``macs``;
the formulas count exactly what the fused tensor kernels execute, so the
analytic walk and the runtime instrumentation counter agree to the MAC.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    bound = float(np.sqrt(1.0 / fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Module:
    """Base container: walks attributes for parameters, buffers, children."""

    def __init__(self):
        self.training = True

    def _children(self):
        for name, value in self.__dict__.items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for name, value in self.__dict__.items():
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((prefix + name, value))
        for cname, child in self._children():
            out.extend(child.named_parameters(prefix + cname + "."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for name, value in self.__dict__.items():
            if isinstance(value, Tensor) and not value.requires_grad:
                out.append((prefix + name, value))
        for cname, child in self._children():
            out.extend(child.named_buffers(prefix + cname + "."))
        return out

    def state_items(self) -> list[tuple[str, Tensor]]:
        """Parameters then buffers, in deterministic traversal order."""
        return self.named_parameters() + self.named_buffers()

    def train(self, mode: bool = True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    """Affine map over the last axis: y = x @ w + b."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = _uniform(rng, in_features, (in_features, out_features))
        self.bias = _uniform(rng, in_features, (out_features,))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(
                f"linear expects last axis {self.in_features}, got {x.shape[-1]}"
            )
        lead = x.shape[:-1]
        flat = T.reshape(x, (-1, self.in_features))
        out = T.matmul(flat, self.weight) + self.bias
        return T.reshape(out, lead + (self.out_features,))

    def macs(self, input_shape) -> int:
        positions = int(np.prod(input_shape[:-1]))
        return positions * self.in_features * self.out_features


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, stride=(1, 1), padding=(0, 0), rng=None):
        super().__init__()
        kh, kw = kernel
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.padding = (kh, kw), tuple(stride), tuple(padding)
        fan_in = in_ch * kh * kw
        self.weight = _uniform(rng, fan_in, (out_ch, in_ch, kh, kw))
        self.bias = _uniform(rng, fan_in, (out_ch,))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def out_shape(self, input_shape) -> tuple[int, ...]:
        b, _, h, w = input_shape
        (kh, kw), (sh, sw), (ph, pw) = self.kernel, self.stride, self.padding
        return (b, self.out_ch, (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1)

    def macs(self, input_shape) -> int:
        b, _, ho, wo = self.out_shape(input_shape)
        kh, kw = self.kernel
        return b * ho * wo * self.in_ch * kh * kw * self.out_ch


class ConvTranspose2d(Module):
    def __init__(
        self,
        in_ch,
        out_ch,
        kernel,
        stride=(1, 1),
        padding=(0, 0),
        output_padding=(0, 0),
        rng=None,
    ):
        super().__init__()
        kh, kw = kernel
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.padding = (kh, kw), tuple(stride), tuple(padding)
        self.output_padding = tuple(output_padding)
        fan_in = out_ch * kh * kw
        self.weight = _uniform(rng, fan_in, (in_ch, out_ch, kh, kw))
        self.bias = _uniform(rng, fan_in, (out_ch,))

    def __call__(self, x: Tensor) -> Tensor:
        return T.deconv2d(
            x, self.weight, self.bias, self.stride, self.padding, self.output_padding
        )

    def out_shape(self, input_shape) -> tuple[int, ...]:
        b, _, h, w = input_shape
        (kh, kw), (sh, sw) = self.kernel, self.stride
        (ph, pw), (oph, opw) = self.padding, self.output_padding
        return (
            b,
            self.out_ch,
            (h - 1) * sh - 2 * ph + kh + oph,
            (w - 1) * sw - 2 * pw + kw + opw,
        )

    def macs(self, input_shape) -> int:
        b, _, h, w = input_shape
        kh, kw = self.kernel
        return b * h * w * self.in_ch * self.out_ch * kh * kw


class BatchNorm2d(Module):
    """Per-channel normalization over (batch, time, freq) with running stats."""

    EPS = 1e-5
    MOMENTUM = 0.1

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = Tensor(np.zeros(channels))
        self.running_var = Tensor(np.ones(channels))

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(
                f"batchnorm expects (B, {self.channels}, T, F), got {x.shape}"
            )
        b, _, h, w = x.shape
        n = b * h * w
        if n == 0:
            raise ShapeError("batchnorm on a zero-size batch")
        if self.training:
            mean = x.mean(axis=(0, 2, 3), keepdims=True)
            var = ((x - mean) ** 2.0).mean(axis=(0, 2, 3), keepdims=True)
            # running stats track the unbiased variance, torch-style
            m = self.MOMENTUM
            unbias = n / (n - 1) if n > 1 else 1.0
            self.running_mean.data = (1 - m) * self.running_mean.data + m * mean.data.ravel()
            self.running_var.data = (
                1 - m
            ) * self.running_var.data + m * unbias * var.data.ravel()
        else:
            mean = T.reshape(self.running_mean.detach(), (1, self.channels, 1, 1))
            var = T.reshape(self.running_var.detach(), (1, self.channels, 1, 1))
        xhat = (x - mean) / T.sqrt(var + self.EPS)
        g = T.reshape(self.gamma, (1, self.channels, 1, 1))
        bshift = T.reshape(self.beta, (1, self.channels, 1, 1))
        return g * xhat + bshift

    def macs(self, input_shape) -> int:
        return 0


class GlobalLayerNorm(Module):
    """Normalize over all channel/time/freq positions per batch element."""

    EPS = 1e-8

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"gln expects (B, {self.channels}, T, F), got {x.shape}")
        mean = x.mean(axis=(1, 2, 3), keepdims=True)
        var = ((x - mean) ** 2.0).mean(axis=(1, 2, 3), keepdims=True)
        xhat = (x - mean) / T.sqrt(var + self.EPS)
        g = T.reshape(self.gamma, (1, self.channels, 1, 1))
        b = T.reshape(self.beta, (1, self.channels, 1, 1))
        return g * xhat + b

    def macs(self, input_shape) -> int:
        return 0


class LSTM(Module):
    """Single-layer LSTM returning all hidden states.

    Gate order in the stacked weight matrices is (input, forget, cell,
    output); the input projection for the whole sequence is computed in one
    matmul, the recurrence loops over time.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.w_ih = _uniform(rng, input_size, (input_size, 4 * hidden_size))
        self.w_hh = _uniform(rng, hidden_size, (hidden_size, 4 * hidden_size))
        bias = _uniform(rng, hidden_size, (4 * hidden_size,))
        bias.data[hidden_size : 2 * hidden_size] += 1.0
        self.bias = bias

    def __call__(self, x: Tensor, h0: Tensor | None = None, c0: Tensor | None = None):
        if x.data.ndim != 3 or x.shape[2] != self.input_size:
            raise ShapeError(
                f"lstm expects (B, T, {self.input_size}), got {x.shape}"
            )
        b, t, d = x.shape
        hs = self.hidden_size
        if h0 is None:
            h0 = Tensor(np.zeros((b, hs)))
        if c0 is None:
            c0 = Tensor(np.zeros((b, hs)))
        if h0.shape != (b, hs) or c0.shape != (b, hs):
            raise ShapeError(
                f"lstm initial state must be ({b}, {hs}), got {h0.shape} and {c0.shape}"
            )
        xproj = T.matmul(T.reshape(x, (b * t, d)), self.w_ih) + self.bias
        xproj = T.reshape(xproj, (b, t, 4 * hs))
        h, c = h0, c0
        outs = []
        for step in range(t):
            gates = xproj[:, step, :] + T.matmul(h, self.w_hh)
            i = T.sigmoid(gates[:, 0:hs])
            f = T.sigmoid(gates[:, hs : 2 * hs])
            g = T.tanh(gates[:, 2 * hs : 3 * hs])
            o = T.sigmoid(gates[:, 3 * hs : 4 * hs])
            c = f * c + i * g
            h = o * T.tanh(c)
            outs.append(T.reshape(h, (b, 1, hs)))
        return T.concat(outs, axis=1)

    def macs(self, input_shape) -> int:
        b, t, d = input_shape
        return b * t * 4 * self.hidden_size * (d + self.hidden_size)
