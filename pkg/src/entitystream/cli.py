"""Command-line entry point: ``gen``, ``train``, ``eval`` and ``attmaps``.

Every subcommand also accepts ``--config FILE`` (a JSON object of flag values,
keys spelled like the long flags without dashes, e.g. ``{"hidden_dim": 64}``).
Flags given explicitly on the command line override values from the file.

Exit status: 0 on success, 1 on usage errors, 2 on runtime errors.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from .errors import CompatibilityError, DivergenceError, FormatError
from .model import RFSModel
from .sortofclevr import generate_dataset, read_dataset, write_dataset
from .training import (MODEL_KINDS, TrainConfig, evaluate, evaluation_seeds, load_checkpoint,
                       restore_model, train)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    parser = _Parser(prog="entitystream", description=__doc__.split("\n\n")[0],
                     epilog="Precedence: explicit flags > --config file > built-in defaults.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    gen = sub.add_parser("gen", help="generate a Sort-of-CLEVR dataset file")
    gen.add_argument("--out", help="output dataset path")
    gen.add_argument("--scenes", type=int, help="number of scenes (20 questions each)")
    gen.add_argument("--seed", type=int, help="seed of the first scene; scene k uses seed+k")

    tr = sub.add_parser("train", help="train a model")
    tr.add_argument("--model", choices=MODEL_KINDS)
    tr.add_argument("--data", help="training dataset path")
    tr.add_argument("--test-data", help="optional held-out dataset evaluated after each epoch")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--out", help="output directory for checkpoints and the metrics log")
    tr.add_argument("--hidden-dim", type=int)
    tr.add_argument("--stream-len", type=int)
    tr.add_argument("--temperature", type=float)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--batch", type=int)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--checkpoint")
    ev.add_argument("--data")
    ev.add_argument("--seeds", type=int, help="evaluation seeds for hard-attention models")

    att = sub.add_parser("attmaps", help="export attention heatmaps for an RFS/RFSH checkpoint")
    att.add_argument("--checkpoint")
    att.add_argument("--data")
    att.add_argument("--out")
    att.add_argument("--count", type=int)

    for p in (gen, tr, ev, att):
        p.add_argument("--config", help="JSON file of default flag values")
    return parser


REQUIRED = {
    "gen": ("out", "scenes"),
    "train": ("model", "data", "out"),
    "eval": ("checkpoint", "data"),
    "attmaps": ("checkpoint", "data", "out"),
}
DEFAULTS = {
    "gen": {"seed": 0},
    "train": {"epochs": 20, "seed": 0, "lr": 1e-4, "batch": 64, "stream_len": 8, "temperature": 1.0},
    "eval": {"seeds": 3},
    "attmaps": {"count": 3},
}


def resolve(args):
    """Merge defaults, config file and explicit flags into a plain dict."""
    values = dict(DEFAULTS[args.command])
    if args.config:
        try:
            with open(args.config) as f:
                loaded = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError(f"--config {args.config}: expected a JSON object")
        known = {k for k in vars(args) if k not in ("command", "config")}
        unknown = sorted(set(loaded) - known)
        if unknown:
            raise UsageError(f"--config {args.config}: unknown keys {unknown}")
        values.update(loaded)
    values.update({k: v for k, v in vars(args).items() if v is not None and k not in ("command", "config")})
    missing = [k for k in REQUIRED[args.command] if values.get(k) is None]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise UsageError(f"{args.command}: missing required {flags}")
    return values


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen(v):
    if v["scenes"] < 0:
        raise UsageError("--scenes must be non-negative")
    data = generate_dataset(v["scenes"], seed=v["seed"])
    parent = os.path.dirname(v["out"])
    if parent:
        os.makedirs(parent, exist_ok=True)
    write_dataset(data, v["out"])
    print(f"wrote {len(data)} samples from {v['scenes']} scenes to {v['out']}")


def cmd_train(v):
    for flag in ("data", "test_data"):
        if v.get(flag) and not os.path.exists(v[flag]):
            raise FileNotFoundError(f"--{flag.replace('_', '-')} {v[flag]}: no such file")
    config = TrainConfig(model_kind=v["model"], epochs=v["epochs"], batch_size=v["batch"],
                         learning_rate=v["lr"], seed=v["seed"], train_data=v["data"],
                         test_data=v.get("test_data"), out_dir=v["out"], hidden_dim=v.get("hidden_dim"),
                         stream_len=v["stream_len"], temperature=v["temperature"])
    path, history = train(config)
    last = history[-1] if history else None
    if last is not None:
        print(f"epoch {last.epoch}: train loss {last.train_loss:.4f}")
    print(f"checkpoint written to {path}")


def cmd_eval(v):
    record = evaluate(v["checkpoint"], v["data"], n_seeds=v["seeds"])
    print(json.dumps({"accuracy": record.accuracy, "nonrel_accuracy": record.nonrel_accuracy,
                      "birel_accuracy": record.birel_accuracy, "n_nonrel": record.n_nonrel,
                      "n_birel": record.n_birel}, sort_keys=True))


def write_pgm(path, grid):
    """Binary greyscale (P5, maxval 255) of a weight grid scaled so its maximum is 255."""
    grid = np.asarray(grid, dtype=np.float64)
    peak = grid.max()
    pixels = np.zeros(grid.shape) if peak <= 0 else np.rint(255.0 * grid / peak)
    rows, cols = grid.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        f.write(pixels.astype(np.uint8).tobytes())


def write_ppm(path, image):
    """Binary colour (P6) of a (3, H, W) image in [0, 1]."""
    _, rows, cols = image.shape
    pixels = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    with open(path, "wb") as f:
        f.write(f"P6\n{cols} {rows}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def export_attention(model, dataset, out_dir, count, seed):
    """One JSON record, one PPM input image and ``stream_len`` PGM heatmaps per sample."""
    os.makedirs(out_dir, exist_ok=True)
    count = min(count, len(dataset))
    rng = np.random.default_rng(evaluation_seeds(seed, 1)[0])
    model.eval()
    written = []
    for k in range(count):
        sample = dataset[k]
        images, questions, answers = dataset.batch([k])
        logits, trace = model.forward(images, questions, rng)
        grids = trace.weight_grids(0)
        stem = os.path.join(out_dir, f"sample_{k:03d}")
        for t, grid in enumerate(grids):
            write_pgm(f"{stem}_t{t}.pgm", grid)
        write_ppm(f"{stem}_image.ppm", sample.image)
        record = {
            "index": k,
            "question": [int(x) for x in sample.question],
            "category": sample.category,
            "answer": int(answers[0]),
            "prediction": int(np.argmax(logits.data[0])),
            "weights": grids.astype(float).tolist(),
            "hard_indices": None if trace.hard_index is None else [int(i) for i in trace.hard_index[0]],
        }
        with open(f"{stem}.json", "w") as f:
            json.dump(record, f, indent=1)
        written.append(record)
    return written


def cmd_attmaps(v):
    ckpt = load_checkpoint(v["checkpoint"])
    model = restore_model(ckpt)
    if not isinstance(model, RFSModel):
        raise CompatibilityError(f"--checkpoint {v['checkpoint']}: attention maps need an rfs or rfsh model, "
                                 f"got {ckpt.kind}")
    dataset = read_dataset(v["data"])
    records = export_attention(model, dataset, v["out"], v["count"], ckpt.seed)
    print(f"wrote {len(records)} attention records to {v['out']}")


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "attmaps": cmd_attmaps}


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: gen, train, eval or attmaps")
        values = resolve(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        COMMANDS[args.command](values)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, FormatError, CompatibilityError, DivergenceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
