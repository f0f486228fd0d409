import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entitystream import numerics as nx
from entitystream.baselines import CNNModel, CnnConfig, RNModel, RnConfig, cnn_baseline_forward, rn_forward
from entitystream.errors import ConfigurationError, ShapeError
from entitystream.layers import count_parameters
from entitystream.model import ModelConfig, RFSModel
from entitystream.numerics import Tensor

from support import SMALL_ENCODER, clear_of_kinks, small_batch

SMALL_RN = dict(g_layers=(16, 16), f_layers=(16, 10), dropout_rate=0.0, **SMALL_ENCODER)


def test_rn_evaluates_every_ordered_pair():
    model = RNModel(RnConfig(), np.random.default_rng(0)).eval()
    images, questions, _ = small_batch(np.random.default_rng(0), n=2, size=75)
    logits = rn_forward(model, images, questions)
    assert logits.shape == (2, 10)
    assert model.pair_evaluations == 625


def test_identical_objects_sum_to_625_copies():
    model = RNModel(RnConfig(), np.random.default_rng(0), np.float64)
    obj = np.random.default_rng(1).normal(size=(1, 1, 26))
    objects = Tensor(np.repeat(obj, 25, axis=1), dtype=None)
    q = np.zeros((1, 11))
    q[0, [1, 6, 9]] = 1
    total = model.relate(objects, q).data
    # g on the single distinct pair, evaluated the plain concatenated way
    h = Tensor(np.concatenate([obj[0], obj[0], q], axis=1), dtype=None)
    for i, layer in enumerate(model.g.mlp.layers):
        h = nx.relu(layer(h))
    np.testing.assert_allclose(total, 625 * h.data, rtol=1e-10)


def test_split_first_layer_matches_concatenation():
    rng = np.random.default_rng(2)
    model = RNModel(RnConfig(g_layers=(8, 8), f_layers=(8, 10)), rng, np.float64)
    objects = Tensor(rng.normal(size=(2, 4, 26)), dtype=None)
    q = rng.normal(size=(2, 11))
    pairs = model.g(objects, Tensor(q, dtype=None)).data
    for b in range(2):
        for i in range(4):
            for j in range(4):
                h = Tensor(np.concatenate([objects.data[b, i], objects.data[b, j], q[b]])[None], dtype=None)
                for layer in model.g.mlp.layers:
                    h = nx.relu(layer(h))
                np.testing.assert_allclose(pairs[b, i * 4 + j], h.data[0], rtol=1e-10, atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_rn_is_invariant_to_object_order(seed):
    rng = np.random.default_rng(seed)
    model = RNModel(RnConfig(g_layers=(16, 16), f_layers=(16, 10)), np.random.default_rng(0), np.float64)
    objects = rng.normal(size=(2, 25, 26))
    q = rng.normal(size=(2, 11))
    perm = rng.permutation(25)
    a = model.relate(Tensor(objects, dtype=None), q).data
    b = model.relate(Tensor(objects[:, perm], dtype=None), q).data
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


def test_rn_training_needs_rng_for_dropout():
    model = RNModel(RnConfig(**{**SMALL_RN, "dropout_rate": 0.5}), np.random.default_rng(0))
    images, questions, _ = small_batch(np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        model(images, questions)
    logits, _ = model(images, questions, np.random.default_rng(0))
    assert logits.shape == (2, 10)


def test_rn_config_validation():
    with pytest.raises(ConfigurationError):
        RnConfig(f_layers=(256, 7))
    with pytest.raises(ConfigurationError):
        RnConfig(dropout_rate=1.0)


def test_cnn_shapes():
    model = CNNModel(CnnConfig(), np.random.default_rng(0)).eval()
    images, questions, _ = small_batch(np.random.default_rng(0), n=3, size=75)
    assert cnn_baseline_forward(model, images, questions).shape == (3, 10)


def test_cnn_zero_weights_give_uniform_logits():
    model = CNNModel(CnnConfig(**SMALL_ENCODER), np.random.default_rng(0))
    for p in model.parameters():
        p.data[:] = 0.0
    images, questions, answers = small_batch(np.random.default_rng(0))
    logits, _ = model(images, questions)
    np.testing.assert_array_equal(logits.data, 0.0)
    assert float(nx.cross_entropy(logits, answers).data) == pytest.approx(np.log(10), rel=1e-6)


def test_baseline_batch_mismatch():
    images, questions, _ = small_batch(np.random.default_rng(0), n=3)
    for model in (RNModel(RnConfig(**SMALL_RN)), CNNModel(CnnConfig(**SMALL_ENCODER))):
        with pytest.raises(ShapeError):
            model(images, questions[:2])


def _grad_error(model, layers):
    clear_of_kinks(layers)
    images, questions, answers = small_batch(np.random.default_rng(2))

    def objective(*params):
        return nx.cross_entropy(model(images, questions)[0], answers)

    return nx.grad_check(objective, model.parameters())


def test_rn_gradient_check():
    model = RNModel(RnConfig(**SMALL_RN), np.random.default_rng(1), np.float64)
    assert _grad_error(model, model.encoder.convs + model.g.mlp.layers + model.f.layers[:-1]) < 1e-3


def test_cnn_gradient_check():
    model = CNNModel(CnnConfig(hidden_layers=(16,), **SMALL_ENCODER), np.random.default_rng(1), np.float64)
    assert _grad_error(model, model.encoder.convs + model.mlp.layers[:-1]) < 1e-3


def test_size_ordering():
    rfs, _ = count_parameters(RFSModel(ModelConfig(hidden_dim=32)))
    rfsh, _ = count_parameters(RFSModel(ModelConfig(hidden_dim=64)))
    cnn, _ = count_parameters(CNNModel())
    rn, _ = count_parameters(RNModel())
    assert rfs < rfsh < cnn < rn
    assert rn / rfs >= 5
