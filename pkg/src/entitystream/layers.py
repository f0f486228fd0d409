"""Parameter containers built on top of ``numerics``."""

import numpy as np

from . import numerics as nx
from .errors import ShapeError
from .numerics import Tensor

PATCH_CHANNELS = 24


def uniform_init(rng, shape, fan_in, dtype=np.float32):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, dtype=dtype)


def zeros_param(shape, dtype=np.float32):
    return Tensor(np.zeros(shape), requires_grad=True, dtype=dtype)


class Module:
    """Minimal parameter tree: attributes that are trainable tensors, modules,
    or lists of modules are discovered in definition order."""

    training = True

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name in getattr(self, "_buffers", ()):
            yield f"{prefix}{name}", getattr(self, name)
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{name}.{i}.")

    def register_buffer(self, name, array):
        if "_buffers" not in vars(self):
            self._buffers = []
        self._buffers.append(name)
        setattr(self, name, array)

    def modules(self):
        yield self
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ShapeError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, p in params.items():
            if p.shape != tuple(state[name].shape):
                raise ShapeError(f"{name}: expected shape {p.shape}, got {state[name].shape}")
            p.data = np.array(state[name], dtype=p.dtype)
        for name, buf in buffers.items():
            if buf.shape != tuple(state[name].shape):
                raise ShapeError(f"{name}: expected shape {buf.shape}, got {state[name].shape}")
            buf[...] = state[name]


class Linear(Module):
    def __init__(self, n_in, n_out, rng, dtype=np.float32):
        self.weight = uniform_init(rng, (n_in, n_out), n_in, dtype)
        self.bias = zeros_param((n_out,), dtype)

    def __call__(self, x):
        return nx.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, n_in, n_out, rng, stride=2, padding=1, dtype=np.float32):
        self.kernels = uniform_init(rng, (n_out, n_in, 3, 3), n_in * 9, dtype)
        self.bias = zeros_param((n_out,), dtype)
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return nx.conv2d(x, self.kernels, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels, dtype=np.float32, momentum=0.1):
        self.gamma = Tensor(np.ones(channels), requires_grad=True, dtype=dtype)
        self.beta = zeros_param((channels,), dtype)
        self.momentum = momentum
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def __call__(self, x):
        return nx.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             training=self.training, momentum=self.momentum)


class GRUCell(Module):
    def __init__(self, d_in, d_h, rng, dtype=np.float32):
        fan_in = d_in + d_h
        self.w_gates = uniform_init(rng, (fan_in, 2 * d_h), fan_in, dtype)
        self.b_gates = zeros_param((2 * d_h,), dtype)
        self.w_cand = uniform_init(rng, (fan_in, d_h), fan_in, dtype)
        self.b_cand = zeros_param((d_h,), dtype)

    def __call__(self, x, h):
        return nx.gru_cell(x, h, self.w_gates, self.b_gates, self.w_cand, self.b_cand)


class StackedGRU(Module):
    """GRU layers applied one timestep at a time; layer k feeds layer k+1."""

    def __init__(self, d_in, d_h, rng, layers=2, dtype=np.float32):
        self.cells = [GRUCell(d_in if i == 0 else d_h, d_h, rng, dtype) for i in range(layers)]

    def step(self, x, hiddens):
        new = []
        for cell, h in zip(self.cells, hiddens):
            x = cell(x, h)
            new.append(x)
        return new


class MLP(Module):
    """ReLU multilayer perceptron; optional dropout just before the last layer."""

    def __init__(self, n_in, widths, rng, dropout_rate=0.0, dtype=np.float32):
        dims = [n_in, *widths]
        self.layers = [Linear(a, b, rng, dtype) for a, b in zip(dims[:-1], dims[1:])]
        self.dropout_rate = dropout_rate

    def __call__(self, x, rng=None):
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            if i == last and self.dropout_rate > 0:
                x = nx.dropout(x, self.dropout_rate, rng, training=self.training)
            x = layer(x)
            if i != last:
                x = nx.relu(x)
        return x


def grid_coordinates(grid, dtype=np.float32):
    """(grid*grid, 2) tags: patch (i, j) -> (2j/(grid-1) - 1, 2i/(grid-1) - 1)."""
    i, j = np.divmod(np.arange(grid * grid), grid)
    scale = 2.0 / (grid - 1)
    return np.stack([j * scale - 1.0, i * scale - 1.0], axis=1).astype(dtype)


class Encoder(Module):
    """Stride-2 3x3 conv stack: conv -> ReLU -> batch norm per layer, 24 channels.

    Returns the patch field as (B, grid*grid, 24) in row-major patch order.
    """

    def __init__(self, rng, image_size=75, conv_layers=4, use_batch_norm=True, dtype=np.float32):
        self.convs = []
        self.norms = []
        size, channels = image_size, 3
        for _ in range(conv_layers):
            self.convs.append(Conv2d(channels, PATCH_CHANNELS, rng, dtype=dtype))
            if use_batch_norm:
                self.norms.append(BatchNorm2d(PATCH_CHANNELS, dtype=dtype))
            size = nx.conv_output_size(size, 3, 2, 1)
            channels = PATCH_CHANNELS
        if size < 2:
            raise ShapeError(f"image size {image_size} collapses to a {size}x{size} patch grid")
        self.image_size = image_size
        self.grid = size
        self.dtype = dtype

    def __call__(self, images):
        if images.ndim != 4 or images.shape[1:] != (3, self.image_size, self.image_size):
            raise ShapeError(f"expected images of shape (B, 3, {self.image_size}, {self.image_size}), "
                             f"got {images.shape}")
        x = images
        for i, conv in enumerate(self.convs):
            x = nx.relu(conv(x))
            if self.norms:
                x = self.norms[i](x)
        b = x.shape[0]
        return nx.transpose(nx.reshape(x, (b, PATCH_CHANNELS, self.grid * self.grid)), (0, 2, 1))


def count_parameters(model):
    """Trainable element count and its size in bytes at 4 bytes per element."""
    count = int(sum(p.size for p in model.parameters()))
    return count, 4 * count
