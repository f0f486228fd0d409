"""Relation Network and CNN+MLP baselines on the same convolutional front end."""

from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigurationError, ShapeError
from .layers import PATCH_CHANNELS, MLP, Encoder, Module, grid_coordinates
from .numerics import Tensor
from .sortofclevr import IMAGE_SIZE, N_ANSWERS, QUESTION_DIM

COORD_DIM = 2


@dataclass
class RnConfig:
    g_layers: tuple = (256, 256, 256, 256)
    f_layers: tuple = (256, 256, N_ANSWERS)
    dropout_rate: float = 0.5
    use_batch_norm: bool = True
    image_size: int = IMAGE_SIZE
    conv_layers: int = 4

    def __post_init__(self):
        self.g_layers = tuple(self.g_layers)
        self.f_layers = tuple(self.f_layers)
        if self.f_layers[-1] != N_ANSWERS:
            raise ConfigurationError(f"last f layer must have {N_ANSWERS} units, got {self.f_layers[-1]}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    def to_dict(self):
        return asdict(self)


@dataclass
class CnnConfig:
    hidden_layers: tuple = (256, 256)
    use_batch_norm: bool = True
    image_size: int = IMAGE_SIZE
    conv_layers: int = 4

    def __post_init__(self):
        self.hidden_layers = tuple(self.hidden_layers)

    def to_dict(self):
        return asdict(self)


class PairRelation(Module):
    """g: an MLP applied to concat(o_i, o_j, question) for every ordered pair.

    The first layer's weight is split by input block so the 625 pair
    pre-activations are assembled by broadcasting instead of materializing
    625 concatenated vectors; the function computed is the same.
    """

    def __init__(self, object_dim, widths, rng, dtype=np.float32):
        self.object_dim = object_dim
        self.mlp = MLP(2 * object_dim + QUESTION_DIM, widths, rng, dtype=dtype)

    def __call__(self, objects, questions):
        b, p, d = objects.shape
        first = self.mlp.layers[0]
        w = first.weight
        a = nx.linear(objects, w[:d])                     # o_i block
        c = nx.linear(objects, w[d:2 * d])                # o_j block
        q = nx.linear(questions, w[2 * d:], first.bias)   # question block
        h = nx.reshape(a, (b, p, 1, -1)) + nx.reshape(c, (b, 1, p, -1)) + nx.reshape(q, (b, 1, 1, -1))
        h = nx.reshape(h, (b * p * p, -1))
        for layer in self.mlp.layers[1:]:
            h = layer(nx.relu(h))
        # reference implementations apply ReLU to the last g layer as well
        return nx.reshape(nx.relu(h), (b, p * p, -1))


class RNModel(Module):
    def __init__(self, config=None, rng=None, dtype=np.float32):
        config = config or RnConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        self.dtype = dtype
        self.encoder = Encoder(rng, config.image_size, config.conv_layers, config.use_batch_norm, dtype)
        self.g = PairRelation(PATCH_CHANNELS + COORD_DIM, config.g_layers, rng, dtype)
        self.f = MLP(config.g_layers[-1], config.f_layers, rng, config.dropout_rate, dtype)
        self._coords = grid_coordinates(self.encoder.grid, dtype)
        self.pair_evaluations = 0

    def objects(self, images):
        images = Tensor(images, dtype=self.dtype)
        patches = self.encoder(images)
        b, p, _ = patches.shape
        coords = Tensor(np.broadcast_to(self._coords, (b, p, COORD_DIM)), dtype=self.dtype)
        return nx.concat([patches, coords], -1)

    def relate(self, objects, questions):
        """Sum of g over all ordered object pairs, (B, g_width)."""
        questions = Tensor(questions, dtype=self.dtype)
        pairs = self.g(objects, questions)
        self.pair_evaluations = pairs.shape[1]
        return nx.tsum(pairs, axis=1)

    def forward(self, images, questions, rng=None):
        questions = np.asarray(questions)
        objects = self.objects(images)
        if objects.shape[0] != questions.shape[0]:
            raise ShapeError(f"{objects.shape[0]} images but {questions.shape[0]} questions")
        if self.training and self.config.dropout_rate > 0 and rng is None:
            raise ConfigurationError("training-mode dropout needs an rng")
        return self.f(self.relate(objects, questions), rng), None

    __call__ = forward

    def logits(self, images, questions, rng=None):
        with nx.no_grad():
            return self.forward(images, questions, rng)[0].data


class CNNModel(Module):
    def __init__(self, config=None, rng=None, dtype=np.float32):
        config = config or CnnConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        self.dtype = dtype
        self.encoder = Encoder(rng, config.image_size, config.conv_layers, config.use_batch_norm, dtype)
        flat = self.encoder.grid ** 2 * PATCH_CHANNELS
        self.mlp = MLP(flat + QUESTION_DIM, (*config.hidden_layers, N_ANSWERS), rng, dtype=dtype)

    def forward(self, images, questions, rng=None):
        images = Tensor(images, dtype=self.dtype)
        questions = Tensor(np.asarray(questions), dtype=self.dtype)
        patches = self.encoder(images)
        b = patches.shape[0]
        if questions.shape[0] != b:
            raise ShapeError(f"{b} images but {questions.shape[0]} questions")
        x = nx.concat([nx.reshape(patches, (b, -1)), questions], -1)
        return self.mlp(x), None

    __call__ = forward

    def logits(self, images, questions, rng=None):
        with nx.no_grad():
            return self.forward(images, questions, rng)[0].data


def rn_forward(model, images, questions, rng=None):
    return model.forward(images, questions, rng)[0]


def cnn_baseline_forward(model, images, questions):
    return model.forward(images, questions)[0]
