"""
Attention maps from the command line
====================================

Generates data, trains a hard-attention model for one epoch and exports
JSON records plus one PGM heatmap per entity-stream step.
"""

import json

from entitystream.cli import run

run(["gen", "--out", "maps_demo/data.soc", "--scenes", "5", "--seed", "0"])
run(["train", "--model", "rfsh", "--data", "maps_demo/data.soc", "--epochs", "1",
     "--out", "maps_demo/run", "--batch", "20"])
run(["attmaps", "--checkpoint", "maps_demo/run/final.ckpt", "--data", "maps_demo/data.soc",
     "--out", "maps_demo/maps", "--count", "2"])

with open("maps_demo/maps/sample_000.json") as f:
    record = json.load(f)
print("question", record["question"], "answer", record["answer"], "prediction", record["prediction"])
print("patches picked per step:", record["hard_indices"])
