"""
A short training run
====================

Trains the soft-attention model for a few epochs on a small dataset and
reports accuracy per question family.  Expect little above the answer prior
at this scale; the desk-scale run in the acceptance suite shows real learning.
"""

import logging

from entitystream.sortofclevr import generate_dataset
from entitystream.training import TrainConfig, evaluate, fit

logging.basicConfig(level=logging.INFO, format="%(message)s")

train_set = generate_dataset(100, seed=0)
test_set = generate_dataset(20, seed=1_000_000)
config = TrainConfig(model_kind="rfs", epochs=3, learning_rate=1e-3, train_data=train_set,
                     test_data=test_set, out_dir="short_run")
result = fit(config)

record = evaluate(result.checkpoint_path, test_set)
print(f"reloaded checkpoint: overall {record.accuracy:.3f}, non-relational {record.nonrel_accuracy:.3f}, "
      f"relational {record.birel_accuracy:.3f}")
