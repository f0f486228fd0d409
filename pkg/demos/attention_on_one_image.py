"""
Where an untrained model looks
==============================

Runs one image and question through the model and prints the
5x5 grid of attention weights for every step.  In hard mode the selected
patch is marked too.
"""

import numpy as np

from entitystream.model import ModelConfig, RFSModel
from entitystream.sortofclevr import generate_dataset

data = generate_dataset(1, seed=3)
images, questions, answers = data.batch([12])

for mode in ("soft", "hard"):
    model = RFSModel(ModelConfig(stream_len=4, attention_mode=mode), np.random.default_rng(0)).eval()
    logits, trace = model(images, questions, np.random.default_rng(0))
    print(f"{mode} attention, prediction {int(np.argmax(logits.data))}, answer {int(answers[0])}")
    for t, grid in enumerate(trace.weight_grids(0)):
        picked = "" if trace.hard_index is None else f"  picked patch {divmod(int(trace.hard_index[0, t]), 5)}"
        print(f" step {t}{picked}")
        print(np.array2string(grid, precision=3, suppress_small=True))
