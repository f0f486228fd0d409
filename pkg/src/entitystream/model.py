"""Question answering over a stream of attended image entities.

An entity-finder GRU column attends over the encoded patch field, one patch
value per timestep, feeding each retrieved entity back as its next input.  The
resulting sequence of entities is read by a relationship-finder GRU
column whose final hidden state is projected to answer logits.  Attention is
either soft (softmax blend of patch values) or hard (Gumbel-max one-hot
selection with straight-through gradients).
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigurationError, ShapeError
from .layers import Encoder, Linear, Module, StackedGRU, count_parameters, grid_coordinates, zeros_param
from .numerics import Tensor
from .sortofclevr import IMAGE_SIZE, N_ANSWERS, QUESTION_DIM

KEY_DIM = 14
VALUE_DIM = 10
COORD_DIM = 2
ATTENTION_MODES = ("soft", "hard")


@dataclass
class ModelConfig:
    hidden_dim: int = 32
    stream_len: int = 8
    attention_mode: str = "soft"
    gumbel_temperature: float = 1.0
    use_batch_norm: bool = True
    answer_classes: int = N_ANSWERS
    image_size: int = IMAGE_SIZE
    conv_layers: int = 4

    def __post_init__(self):
        if self.hidden_dim < QUESTION_DIM:
            raise ConfigurationError(f"hidden_dim must be at least {QUESTION_DIM}, got {self.hidden_dim}")
        if self.stream_len < 1:
            raise ConfigurationError(f"stream_len must be at least 1, got {self.stream_len}")
        if self.attention_mode not in ATTENTION_MODES:
            raise ConfigurationError(f"attention_mode must be one of {ATTENTION_MODES}")
        if self.gumbel_temperature <= 0:
            raise ConfigurationError(f"gumbel_temperature must be positive, got {self.gumbel_temperature}")

    def to_dict(self):
        return asdict(self)


@dataclass
class PatchField:
    keys: Tensor      # (B, P, 16)
    values: Tensor    # (B, P, 12)
    grid: int


@dataclass
class AttentionTrace:
    """Per-sample, per-timestep attention record.

    ``weights`` holds the pre-hardening softmax weights (B, T, P) and
    ``applied`` the weights actually used to blend patch values (equal to
    ``weights`` in soft mode, one-hot rows in hard mode).  ``hard_index`` is
    (B, T) in hard mode and None otherwise.
    """

    weights: np.ndarray
    entities: np.ndarray
    grid: int
    hard_index: np.ndarray = None
    applied: np.ndarray = None

    def weight_grids(self, sample=0):
        return self.weights[sample].reshape(-1, self.grid, self.grid)


@dataclass
class Attention:
    entity: Tensor
    weights: Tensor
    soft_weights: np.ndarray
    hard_index: np.ndarray = None
    noise: np.ndarray = None
    surrogate: np.ndarray = None


def gumbel_noise(rng, shape):
    u = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=shape)
    return -np.log(-np.log(u))


def attend(query, keys, values, projection, mode="soft", rng=None, temperature=1.0,
           noise=None, index=None, reference=None):
    """Scaled dot-product attention of one query per sample over the patch field.

    ``query`` is (B, H), ``keys`` (B, P, K), ``values`` (B, P, V) and
    ``projection`` maps H to K.  In hard mode ``noise``/``index``/``reference``
    may replay a previous draw; see ``FrozenGumbel``.
    """
    if mode not in ATTENTION_MODES:
        raise ConfigurationError(f"unknown attention mode {mode!r}")
    if mode == "hard" and temperature <= 0:
        raise ConfigurationError(f"temperature must be positive, got {temperature}")
    b, p, k = keys.shape
    q = projection(query)
    if q.shape != (b, k):
        raise ShapeError(f"projected query {q.shape} does not match keys {keys.shape}")
    logits = nx.reshape(nx.matmul(keys, nx.reshape(q, (b, k, 1))), (b, p)) * (1.0 / np.sqrt(k))
    soft = nx.softmax(logits)

    if mode == "soft":
        weights, hard_index = soft, None
    else:
        if noise is None:
            noise = gumbel_noise(rng, (b, p))
        noisy = logits + noise.astype(logits.dtype)
        if index is None:
            index = np.argmax(noisy.data, axis=1)
        onehot = np.zeros((b, p), dtype=logits.dtype)
        onehot[np.arange(b), index] = 1.0
        surrogate = nx.softmax(noisy * (1.0 / temperature))
        weights = nx.straight_through(onehot, surrogate, reference)
        hard_index = index
    entity = nx.reshape(nx.matmul(nx.reshape(weights, (b, 1, p)), values), (b, values.shape[-1]))
    return Attention(entity, weights, soft.data, hard_index, noise,
                     surrogate.data if mode == "hard" else None)


class FrozenGumbel:
    """Records the Gumbel noise and selections of the first forward pass and
    replays them on later passes, so hard-mode models can be compared with
    finite differences."""

    def __init__(self):
        self.records = []

    def replay(self, t):
        if t < len(self.records):
            return self.records[t]
        return None

    def record(self, attention):
        self.records.append((attention.noise, attention.hard_index, attention.surrogate))


class RFSModel(Module):
    def __init__(self, config=None, rng=None, dtype=np.float32):
        config = config or ModelConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        self.dtype = dtype
        h = config.hidden_dim
        entity_dim = VALUE_DIM + COORD_DIM
        self.encoder = Encoder(rng, config.image_size, config.conv_layers, config.use_batch_norm, dtype)
        self.ef = StackedGRU(entity_dim, h, rng, layers=2, dtype=dtype)
        self.rf = StackedGRU(entity_dim, h, rng, layers=2, dtype=dtype)
        self.ef_pads = [zeros_param((h - QUESTION_DIM,), dtype) for _ in range(2)]
        self.rf_pads = [zeros_param((h - QUESTION_DIM,), dtype) for _ in range(2)]
        self.start_token = zeros_param((entity_dim,), dtype)
        self.query_proj = Linear(h, KEY_DIM + COORD_DIM, rng, dtype)
        self.head = Linear(h, config.answer_classes, rng, dtype)
        self._coords = grid_coordinates(self.encoder.grid, dtype)

    def encode_image(self, images):
        images = Tensor(images, dtype=self.dtype)
        single = images.ndim == 3
        if single:
            images = nx.reshape(images, (1,) + images.shape)
        patches = self.encoder(images)
        b, p, _ = patches.shape
        coords = Tensor(np.broadcast_to(self._coords, (b, p, COORD_DIM)), dtype=self.dtype)
        keys = nx.concat([patches[:, :, :KEY_DIM], coords], -1)
        values = nx.concat([patches[:, :, KEY_DIM:], coords], -1)
        return PatchField(keys, values, self.encoder.grid)

    def init_hidden(self, questions, pads):
        """Question vector padded with each layer's own trainable tail."""
        q = nx.as_tensor(np.asarray(questions, dtype=self.dtype))
        b = q.shape[0]
        hiddens = []
        for pad in pads:
            if pad.shape[0] == 0:
                hiddens.append(q)
                continue
            tail = nx.add(Tensor(np.zeros((b, pad.shape[0]), dtype=self.dtype)), pad)
            hiddens.append(nx.concat([q, tail], -1))
        return hiddens

    def forward_field(self, field, questions, rng=None, frozen=None):
        cfg = self.config
        questions = np.asarray(questions, dtype=self.dtype)
        b = questions.shape[0]
        ef_h = self.init_hidden(questions, self.ef_pads)
        entity = nx.add(Tensor(np.zeros((b, self.start_token.shape[0]), dtype=self.dtype)), self.start_token)
        stream, weights, applied, entities, hard = [], [], [], [], []
        for t in range(cfg.stream_len):
            ef_h = self.ef.step(entity, ef_h)
            replay = frozen.replay(t) if frozen is not None else None
            noise = index = reference = None
            if replay is not None:
                noise, index, reference = replay
            att = attend(ef_h[-1], field.keys, field.values, self.query_proj, cfg.attention_mode,
                         rng=rng, temperature=cfg.gumbel_temperature,
                         noise=noise, index=index, reference=reference)
            if frozen is not None and replay is None and cfg.attention_mode == "hard":
                frozen.record(att)
            entity = att.entity
            stream.append(entity)
            weights.append(att.soft_weights)
            applied.append(att.weights.data)
            entities.append(entity.data)
            if att.hard_index is not None:
                hard.append(att.hard_index)

        rf_h = self.init_hidden(questions, self.rf_pads)
        for entity in stream:
            rf_h = self.rf.step(entity, rf_h)
        logits = self.head(rf_h[-1])
        trace = AttentionTrace(np.stack(weights, axis=1), np.stack(entities, axis=1), field.grid,
                               np.stack(hard, axis=1) if hard else None, np.stack(applied, axis=1))
        return logits, trace

    def forward(self, images, questions, rng=None, frozen=None):
        """Returns (logits (B, 10), AttentionTrace)."""
        questions = np.asarray(questions)
        if questions.ndim == 1:
            questions = questions[None]
        field = self.encode_image(images)
        if field.keys.shape[0] != questions.shape[0]:
            raise ShapeError(f"{field.keys.shape[0]} images but {questions.shape[0]} questions")
        if self.config.attention_mode == "hard" and rng is None and frozen is None:
            raise ConfigurationError("hard attention needs an rng for Gumbel noise")
        return self.forward_field(field, questions, rng, frozen)

    __call__ = forward

    def logits(self, images, questions, rng=None):
        with nx.no_grad():
            return self.forward(images, questions, rng)[0].data


def loss(logits, answers):
    """Mean categorical cross-entropy over the batch."""
    return nx.cross_entropy(logits, answers)


__all__ = [
    "ATTENTION_MODES", "Attention", "AttentionTrace", "FrozenGumbel", "ModelConfig", "PatchField",
    "RFSModel", "attend", "count_parameters", "gumbel_noise", "loss",
]
