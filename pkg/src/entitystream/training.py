"""Training loop, evaluation and checkpointing for the four model kinds."""

from dataclasses import asdict, dataclass, field
import json
import logging
import os
import time

import numpy as np

from . import numerics as nx
from .baselines import CNNModel, CnnConfig, RNModel, RnConfig
from .checkpoint import read_archive, write_archive
from .errors import CompatibilityError, ConfigurationError, DivergenceError, NumericInputError
from .model import ModelConfig, RFSModel
from .sortofclevr import Dataset, read_dataset

log = logging.getLogger(__name__)

MODEL_KINDS = ("rn", "cnn", "rfs", "rfsh")
DEFAULT_HIDDEN = {"rfs": 32, "rfsh": 64}
METRICS_LOG = "metrics.jsonl"
TIMING_LOG = "timing.jsonl"
FINAL_CHECKPOINT = "final.ckpt"


@dataclass
class TrainConfig:
    model_kind: str = "rfs"
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-4
    seed: int = 0
    train_data: object = None
    test_data: object = None
    out_dir: str = None
    eval_every: int = 1
    hidden_dim: int = None
    stream_len: int = 8
    temperature: float = 1.0
    use_batch_norm: bool = True
    clip_norm: float = None
    eval_seeds: int = 3

    def __post_init__(self):
        self.model_kind = self.model_kind.lower()
        if self.model_kind not in MODEL_KINDS:
            raise ConfigurationError(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if self.use_batch_norm and self.batch_size < 2:
            raise ConfigurationError("batch_size must be at least 2 when batch normalization is on")
        if self.hidden_dim is None and self.model_kind in DEFAULT_HIDDEN:
            self.hidden_dim = DEFAULT_HIDDEN[self.model_kind]


@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    accuracy: float
    nonrel_accuracy: float
    birel_accuracy: float
    n_nonrel: int = 0
    n_birel: int = 0
    seconds: float = 0.0

    def log_entry(self):
        """Everything but wall-clock time, so repeated runs produce identical logs."""
        entry = asdict(self)
        del entry["seconds"]
        return {k: None if isinstance(v, float) and np.isnan(v) else v for k, v in entry.items()}


@dataclass
class Checkpoint:
    kind: str
    config: dict
    seed: int
    tensors: dict
    extra: dict = field(default_factory=dict)


def model_config_dict(kind, config):
    if kind in ("rfs", "rfsh"):
        return ModelConfig(hidden_dim=config.hidden_dim, stream_len=config.stream_len,
                           attention_mode="hard" if kind == "rfsh" else "soft",
                           gumbel_temperature=config.temperature,
                           use_batch_norm=config.use_batch_norm).to_dict()
    if kind == "rn":
        return RnConfig(use_batch_norm=config.use_batch_norm).to_dict()
    return CnnConfig(use_batch_norm=config.use_batch_norm).to_dict()


def build_model(kind, config=None, rng=None, dtype=np.float32):
    """``config`` is a ModelConfig / RnConfig / CnnConfig or its dict form."""
    kind = kind.lower()
    if kind in ("rfs", "rfsh"):
        if isinstance(config, dict):
            config = ModelConfig(**config)
        config = config or ModelConfig(hidden_dim=DEFAULT_HIDDEN[kind],
                                       attention_mode="hard" if kind == "rfsh" else "soft")
        return RFSModel(config, rng, dtype)
    if kind == "rn":
        return RNModel(RnConfig(**config) if isinstance(config, dict) else config, rng, dtype)
    if kind == "cnn":
        return CNNModel(CnnConfig(**config) if isinstance(config, dict) else config, rng, dtype)
    raise ConfigurationError(f"unknown model kind {kind!r}")


def is_stochastic(model):
    return isinstance(model, RFSModel) and model.config.attention_mode == "hard"


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, model, kind, seed, extra=None):
    manifest = {
        "model_kind": kind,
        "config": model.config.to_dict(),
        "seed": int(seed),
        "hidden_dim": getattr(model.config, "hidden_dim", None),
        "stream_len": getattr(model.config, "stream_len", None),
        "extra": extra or {},
    }
    write_archive(path, model.state_dict(), manifest)


def load_checkpoint(path):
    manifest, tensors = read_archive(path)
    try:
        return Checkpoint(manifest["model_kind"], manifest["config"], manifest["seed"], tensors,
                          manifest.get("extra", {}))
    except KeyError as exc:
        raise CompatibilityError(f"{path}: manifest lacks {exc}") from None


def restore_model(checkpoint):
    if isinstance(checkpoint, (str, os.PathLike)):
        checkpoint = load_checkpoint(checkpoint)
    model = build_model(checkpoint.kind, dict(checkpoint.config))
    try:
        model.load_state_dict(checkpoint.tensors)
    except ValueError as exc:
        raise CompatibilityError(f"checkpoint does not fit a {checkpoint.kind} model: {exc}") from None
    return model.eval()


# ---------------------------------------------------------------------------
# evaluation

def score(logits, answers, categories):
    """(overall, nonrel, birel, n_nonrel, n_birel) accuracies of argmax predictions."""
    correct = np.argmax(logits, axis=1) == np.asarray(answers)
    categories = np.asarray(categories)
    nonrel, birel = categories == 0, categories == 1

    def frac(mask):
        return float(correct[mask].mean()) if mask.any() else 0.0

    return frac(np.ones_like(correct)), frac(nonrel), frac(birel), int(nonrel.sum()), int(birel.sum())


def predict(model, dataset, rng=None, batch_size=256):
    model.eval()
    out = []
    for start in range(0, len(dataset), batch_size):
        images, questions, _ = dataset.batch(np.arange(start, min(start + batch_size, len(dataset))))
        out.append(model.logits(images, questions, rng))
    return np.concatenate(out) if out else np.zeros((0, 10), dtype=np.float32)


def evaluation_seeds(seed, count):
    return [[int(seed), 1000 + k] for k in range(count)]


def evaluate(model, dataset, seed=None, n_seeds=3, epoch=0, train_loss=float("nan")):
    """Accuracy overall and per question family.

    ``model`` may be a model, a Checkpoint or a checkpoint path.  Hard-attention
    models are scored with fresh Gumbel noise under ``n_seeds`` evaluation
    seeds and the accuracies averaged; deterministic models use one pass.
    """
    if isinstance(model, (str, os.PathLike, Checkpoint)):
        ckpt = load_checkpoint(model) if not isinstance(model, Checkpoint) else model
        seed = ckpt.seed if seed is None else seed
        model = restore_model(ckpt)
    seed = 0 if seed is None else seed
    if isinstance(dataset, (str, os.PathLike)):
        dataset = read_dataset(dataset)
    seeds = evaluation_seeds(seed, n_seeds if is_stochastic(model) else 1)
    results = []
    for s in seeds:
        logits = predict(model, dataset, np.random.default_rng(s))
        results.append(score(logits, dataset.answers, dataset.categories))
    acc, nonrel, birel = (float(np.mean([r[i] for r in results])) for i in range(3))
    return MetricsRecord(epoch, train_loss, acc, nonrel, birel, results[0][3], results[0][4])


# ---------------------------------------------------------------------------
# training

def _load(data, name):
    if data is None:
        raise FileNotFoundError(f"no {name} dataset given")
    if isinstance(data, Dataset):
        return data
    if not os.path.exists(data):
        raise FileNotFoundError(f"{name} dataset not found: {data}")
    return read_dataset(data)


def train_step(model, optimizer, images, questions, answers, rng):
    model.train()
    logits, _ = model(images, questions, rng)
    loss = nx.cross_entropy(logits, answers)
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.data)


@dataclass
class TrainResult:
    model: object
    checkpoint_path: str
    history: list


def train(config):
    """Mini-batch Adam training; returns (checkpoint path or None, [MetricsRecord])."""
    result = fit(config)
    return result.checkpoint_path, result.history


def fit(config):
    """As ``train`` but also hands back the trained model."""
    train_set = _load(config.train_data, "training")
    test_set = _load(config.test_data, "test") if config.test_data is not None else None

    init_rng = np.random.default_rng([config.seed, 0])
    shuffle_rng = np.random.default_rng([config.seed, 1])
    noise_rng = np.random.default_rng([config.seed, 2])

    kind = config.model_kind
    model = build_model(kind, model_config_dict(kind, config), init_rng)
    optimizer = nx.Adam(model.parameters(), lr=config.learning_rate, clip_norm=config.clip_norm)

    if config.out_dir:
        os.makedirs(config.out_dir, exist_ok=True)
        for name in (METRICS_LOG, TIMING_LOG):
            open(os.path.join(config.out_dir, name), "w").close()

    n = len(train_set)
    min_batch = 2 if config.use_batch_norm else 1
    history = []
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = shuffle_rng.permutation(n)
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            if len(idx) < min_batch:
                continue
            images, questions, answers = train_set.batch(idx)
            try:
                value = train_step(model, optimizer, images, questions, answers, noise_rng)
            except NumericInputError:
                value = float("nan")
            if not np.isfinite(value):
                raise DivergenceError(epoch, b, value)
            total += value * len(idx)
            seen += len(idx)
        train_loss = total / max(seen, 1)

        do_eval = test_set is not None and (epoch % config.eval_every == 0 or epoch == config.epochs)
        if do_eval:
            record = evaluate(model, test_set, seed=config.seed, n_seeds=config.eval_seeds,
                              epoch=epoch, train_loss=train_loss)
        else:
            record = MetricsRecord(epoch, train_loss, float("nan"), float("nan"), float("nan"))
        record.seconds = time.perf_counter() - started
        history.append(record)
        log.info("epoch %d loss %.4f acc %.4f nonrel %.4f birel %.4f (%.1fs)", epoch, train_loss,
                 record.accuracy, record.nonrel_accuracy, record.birel_accuracy, record.seconds)

        if config.out_dir:
            with open(os.path.join(config.out_dir, METRICS_LOG), "a") as f:
                f.write(json.dumps(record.log_entry(), sort_keys=True) + "\n")
            with open(os.path.join(config.out_dir, TIMING_LOG), "a") as f:
                f.write(json.dumps({"epoch": epoch, "seconds": record.seconds}) + "\n")
            if epoch % config.eval_every == 0 and epoch != config.epochs:
                save_checkpoint(os.path.join(config.out_dir, f"epoch{epoch:03d}.ckpt"), model, kind,
                                config.seed, {"epoch": epoch})

    path = None
    if config.out_dir:
        path = os.path.join(config.out_dir, FINAL_CHECKPOINT)
        save_checkpoint(path, model, kind, config.seed, {"epoch": config.epochs})
    return TrainResult(model, path, history)


def overfit(model, dataset, steps=200, lr=1e-3, seed=0):
    """Full-batch Adam on a fixed subset; returns the loss after every step
    (index 0 is the initial loss), stopping once the loss has halved."""
    rng = np.random.default_rng(seed)
    optimizer = nx.Adam(model.parameters(), lr=lr)
    images, questions, answers = dataset.batch(np.arange(len(dataset)))
    model.train()
    losses = []
    for _ in range(steps + 1):
        logits, _ = model(images, questions, rng)
        loss = nx.cross_entropy(logits, answers)
        losses.append(float(loss.data))
        if losses[-1] <= 0.5 * losses[0] or len(losses) > steps:
            break
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    return losses
