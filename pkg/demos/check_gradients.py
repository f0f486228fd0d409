"""
Checking gradients against finite differences
=============================================

The tape records every operation on a Tensor; ``backward`` walks it in
reverse.  ``grad_check`` compares the result with central differences.
"""

import numpy as np

from entitystream import numerics as nx
from entitystream.model import FrozenGumbel, ModelConfig, RFSModel

rng = np.random.default_rng(0)

# a tiny program: tanh of an affine map, summed
x = nx.Tensor(rng.normal(size=(4, 3)), dtype=np.float64)
w = nx.Tensor(0.5 * rng.normal(size=(3, 2)), dtype=np.float64)
b = nx.Tensor(np.zeros(2), dtype=np.float64)
err = nx.grad_check(lambda x, w, b: nx.tanh(nx.linear(x, w, b)).sum(), [x, w, b])
print(f"affine + tanh: max relative error {err:.2e}")

# a whole hard-attention model at toy size.  The Gumbel draws of the first
# pass are recorded and replayed, so every finite-difference pass selects the
# same patches and the straight-through gradient becomes checkable.
config = ModelConfig(hidden_dim=12, stream_len=2, attention_mode="hard",
                     use_batch_norm=False, image_size=12, conv_layers=2)
model = RFSModel(config, rng, dtype=np.float64)
for conv in model.encoder.convs:
    # keep ReLU pre-activations clear of zero so differences stay smooth
    conv.kernels.data *= 0.1
    conv.bias.data[:] = np.where(np.arange(conv.bias.size) % 2 == 0, 0.5, -0.5)

images = rng.uniform(size=(2, 3, 12, 12))
questions = np.zeros((2, 11))
questions[0, [0, 6, 8]] = 1
questions[1, [3, 7, 10]] = 1
answers = np.array([2, 7])
frozen = FrozenGumbel()
noise = np.random.default_rng(1)


def objective(*params):
    return nx.cross_entropy(model(images, questions, noise, frozen)[0], answers)


print("checking", sum(p.size for p in model.parameters()), "parameters (takes about a minute)")
print(f"hard-attention model: max relative error {nx.grad_check(objective, model.parameters()):.2e}")
