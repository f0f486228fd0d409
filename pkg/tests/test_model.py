import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entitystream import numerics as nx
from entitystream.errors import ConfigurationError, ShapeError
from entitystream.model import (FrozenGumbel, ModelConfig, RFSModel, attend, count_parameters,
                                gumbel_noise, loss)
from entitystream.layers import Linear, Module, grid_coordinates
from entitystream.numerics import Tensor
from entitystream.sortofclevr import encode_question, generate_dataset

from support import SMALL, clear_of_kinks, small_batch


# ---------------------------------------------------------------------------
# patch field

def test_patch_field_shapes():
    model = RFSModel(ModelConfig(), np.random.default_rng(0))
    field = model.encode_image(np.zeros((2, 3, 75, 75), dtype=np.float32))
    assert field.grid == 5
    assert field.keys.shape == (2, 25, 16)
    assert field.values.shape == (2, 25, 12)


def test_single_image_is_batched():
    model = RFSModel(ModelConfig(), np.random.default_rng(0))
    assert model.eval().encode_image(np.zeros((3, 75, 75))).keys.shape == (1, 25, 16)


def test_zero_image_gives_finite_field():
    model = RFSModel(ModelConfig(), np.random.default_rng(0))
    field = model.encode_image(np.zeros((2, 3, 75, 75)))
    assert np.all(np.isfinite(field.keys.data)) and np.all(np.isfinite(field.values.data))


def test_corner_coordinates():
    coords = grid_coordinates(5)
    np.testing.assert_array_equal(coords[0], [-1, -1])
    np.testing.assert_array_equal(coords[4], [1, -1])
    np.testing.assert_array_equal(coords[20], [-1, 1])
    np.testing.assert_array_equal(coords[24], [1, 1])
    model = RFSModel(ModelConfig(), np.random.default_rng(0)).eval()
    field = model.encode_image(np.zeros((1, 3, 75, 75)))
    np.testing.assert_array_equal(field.keys.data[0, :, 14:], coords)
    np.testing.assert_array_equal(field.values.data[0, :, 10:], coords)


def test_wrong_image_shape():
    model = RFSModel(ModelConfig(), np.random.default_rng(0))
    with pytest.raises(ShapeError):
        model.encode_image(np.zeros((1, 3, 64, 64)))


# ---------------------------------------------------------------------------
# hidden-state initialization

def test_init_hidden_copies_question_and_pads():
    model = RFSModel(ModelConfig(hidden_dim=32), np.random.default_rng(0))
    model.ef_pads[0].data[:] = 0.5
    q = encode_question(2, "birel", 1)[None]
    h0, h1 = model.init_hidden(q, model.ef_pads)
    assert h0.shape == (1, 32)
    np.testing.assert_array_equal(h0.data[0, :11], q[0])
    np.testing.assert_array_equal(h0.data[0, 11:], 0.5)
    np.testing.assert_array_equal(h1.data[0, 11:], 0.0)


def test_init_hidden_without_padding():
    model = RFSModel(ModelConfig(hidden_dim=11), np.random.default_rng(0))
    q = encode_question(0, "nonrel", 0)[None]
    h0, _ = model.init_hidden(q, model.ef_pads)
    np.testing.assert_array_equal(h0.data, q)


def test_hidden_smaller_than_question_is_rejected():
    with pytest.raises(ConfigurationError):
        ModelConfig(hidden_dim=8)


@pytest.mark.parametrize("bad", [dict(stream_len=0), dict(attention_mode="sparse"), dict(gumbel_temperature=0.0)])
def test_config_validation(bad):
    with pytest.raises(ConfigurationError):
        ModelConfig(**bad)


# ---------------------------------------------------------------------------
# attention

class _Identity(Module):
    def __call__(self, x):
        return x


def test_equal_keys_give_uniform_weights():
    keys = Tensor(np.ones((1, 25, 4)))
    values = Tensor(np.random.default_rng(0).normal(size=(1, 25, 3)))
    att = attend(Tensor(np.ones((1, 4))), keys, values, _Identity())
    np.testing.assert_allclose(att.weights.data, 1 / 25, rtol=1e-6)
    np.testing.assert_allclose(att.entity.data, values.data.mean(axis=1), rtol=1e-5)


def test_hard_attention_is_one_hot():
    rng = np.random.default_rng(0)
    keys = Tensor(rng.normal(size=(3, 25, 4)))
    values = Tensor(rng.normal(size=(3, 25, 5)))
    att = attend(Tensor(rng.normal(size=(3, 4))), keys, values, _Identity(), "hard", rng)
    w = att.weights.data
    assert set(np.unique(w)) <= {0.0, 1.0}
    np.testing.assert_array_equal(w.sum(axis=1), 1.0)
    np.testing.assert_allclose(att.entity.data, values.data[np.arange(3), att.hard_index], rtol=1e-6)


def test_dominant_key_wins_soft_attention():
    keys = np.zeros((1, 25, 1))
    keys[0, 7, 0] = 100.0          # logit gap of 100 / sqrt(1) * 1 > 50
    att = attend(Tensor(np.ones((1, 1))), Tensor(keys), Tensor(np.eye(25)[None]), _Identity())
    assert att.weights.data[0, 7] >= 0.99


def test_gumbel_selection_frequency_matches_softmax():
    rng = np.random.default_rng(3)
    keys = Tensor(rng.normal(size=(1, 6, 2)))
    query = Tensor(rng.normal(size=(1, 2)))
    draws = 20_000
    att = attend(nx.reshape(Tensor(np.repeat(query.data, draws, 0)), (draws, 2)),
                 Tensor(np.repeat(keys.data, draws, 0)), Tensor(np.zeros((draws, 6, 1))),
                 _Identity(), "hard", rng)
    freq = np.bincount(att.hard_index, minlength=6) / draws
    np.testing.assert_allclose(freq, att.soft_weights[0], atol=0.015)


def test_high_temperature_flattens_surrogate():
    rng = np.random.default_rng(0)
    keys = Tensor(rng.normal(size=(1, 25, 4)))
    att = attend(Tensor(rng.normal(size=(1, 4))), keys, Tensor(np.zeros((1, 25, 2))), _Identity(),
                 "hard", rng, temperature=1e6)
    np.testing.assert_allclose(att.surrogate, 1 / 25, rtol=1e-3)


def test_gumbel_noise_statistics():
    g = gumbel_noise(np.random.default_rng(0), (200_000,))
    assert abs(g.mean() - 0.5772) < 0.01          # Euler-Mascheroni constant
    assert abs(g.var() - math.pi ** 2 / 6) < 0.03


def test_hard_mode_requires_rng():
    model = RFSModel(ModelConfig(attention_mode="hard", **SMALL), np.random.default_rng(0))
    images, questions, _ = small_batch(np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        model(images, questions)


# ---------------------------------------------------------------------------
# full forward pass

def test_forward_shapes_and_trace():
    model = RFSModel(ModelConfig(stream_len=3), np.random.default_rng(0))
    images, questions, _ = small_batch(np.random.default_rng(0), n=4, size=75)
    logits, trace = model(images, questions)
    assert logits.shape == (4, 10)
    assert trace.weights.shape == (4, 3, 25)
    assert trace.entities.shape == (4, 3, 12)
    assert trace.weight_grids(1).shape == (3, 5, 5)
    np.testing.assert_allclose(trace.weights.sum(axis=2), 1.0, rtol=1e-5)
    assert trace.hard_index is None


def test_stream_length_one():
    model = RFSModel(ModelConfig(stream_len=1, **{k: v for k, v in SMALL.items() if k != "stream_len"}),
                     np.random.default_rng(0))
    images, questions, _ = small_batch(np.random.default_rng(0))
    logits, trace = model(images, questions)
    assert logits.shape == (2, 10) and trace.weights.shape[1] == 1


def test_hard_mode_is_deterministic_given_seed():
    model = RFSModel(ModelConfig(attention_mode="hard", **SMALL), np.random.default_rng(0))
    images, questions, _ = small_batch(np.random.default_rng(0), n=4)
    a = model.logits(images, questions, np.random.default_rng(9))
    b = model.logits(images, questions, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)
    _, trace = model(images, questions, np.random.default_rng(9))
    assert trace.hard_index.shape == (4, 2)


def test_answer_depends_on_question():
    model = RFSModel(ModelConfig(), np.random.default_rng(0))
    images = np.repeat(np.random.default_rng(0).uniform(size=(1, 3, 75, 75)), 2, 0)
    questions = np.stack([encode_question(0, "nonrel", 0), encode_question(4, "birel", 2)])
    logits = model.logits(images, questions)
    assert not np.allclose(logits[0], logits[1])


def test_batch_mismatch():
    model = RFSModel(ModelConfig(**SMALL), np.random.default_rng(0))
    images, questions, _ = small_batch(np.random.default_rng(0), n=3)
    with pytest.raises(ShapeError):
        model(images, questions[:2])


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_patch_permutation_invariance(seed):
    """Shuffling patches (with their coordinate tags) leaves soft-attention output unchanged."""
    rng = np.random.default_rng(seed)
    model = RFSModel(ModelConfig(**SMALL), np.random.default_rng(1), np.float64)
    images, questions, _ = small_batch(rng)
    field = model.encode_image(images)
    perm = rng.permutation(field.keys.shape[1])
    shuffled = type(field)(Tensor(field.keys.data[:, perm], dtype=None),
                           Tensor(field.values.data[:, perm], dtype=None), field.grid)
    a, _ = model.forward_field(field, questions)
    b, _ = model.forward_field(shuffled, questions)
    np.testing.assert_allclose(a.data, b.data, rtol=1e-9, atol=1e-12)


# ---------------------------------------------------------------------------
# loss and gradients

def test_loss_of_uniform_logits():
    value = loss(Tensor(np.zeros((4, 10))), np.array([0, 3, 5, 9]))
    assert float(value.data) == pytest.approx(math.log(10), rel=1e-6)


def test_loss_is_batch_mean():
    logits = np.random.default_rng(0).normal(size=(3, 10))
    answers = np.array([1, 4, 8])
    each = [float(loss(Tensor(logits[i:i + 1]), answers[i:i + 1]).data) for i in range(3)]
    assert float(loss(Tensor(logits), answers).data) == pytest.approx(np.mean(each), rel=1e-6)


@pytest.mark.parametrize("mode", ["soft", "hard"])
def test_full_model_gradient_check(mode):
    model = RFSModel(ModelConfig(attention_mode=mode, **SMALL), np.random.default_rng(1), np.float64)
    clear_of_kinks(model.encoder.convs)
    images, questions, answers = small_batch(np.random.default_rng(2))
    frozen = FrozenGumbel() if mode == "hard" else None
    rng = np.random.default_rng(5)

    def objective(*params):
        return loss(model(images, questions, rng, frozen)[0], answers)

    assert nx.grad_check(objective, model.parameters()) < 1e-3
    if mode == "hard":
        assert len(frozen.records) == 2


def test_every_parameter_receives_gradient():
    model = RFSModel(ModelConfig(**SMALL), np.random.default_rng(1))
    images, questions, answers = small_batch(np.random.default_rng(2))
    loss(model(images, questions)[0], answers).backward()
    for name, p in model.named_parameters():
        assert p.grad is not None and np.any(p.grad != 0), name


# ---------------------------------------------------------------------------
# sizes

def test_count_parameters_toy():
    class Toy(Module):
        def __init__(self):
            self.layer = Linear(3, 4, np.random.default_rng(0))
            self.layer.bias.requires_grad = False

    assert count_parameters(Toy()) == (12, 48)


def test_model_sizes():
    small, _ = count_parameters(RFSModel(ModelConfig(hidden_dim=32)))
    large, _ = count_parameters(RFSModel(ModelConfig(hidden_dim=64)))
    assert small == 38_562
    assert large == 97_506


def test_real_scene_forward():
    data = generate_dataset(1, seed=0)
    images, questions, _ = data.batch(np.arange(4))
    model = RFSModel(ModelConfig(attention_mode="hard"), np.random.default_rng(0)).eval()
    logits = model.logits(images, questions, np.random.default_rng(0))
    assert logits.shape == (4, 10) and np.all(np.isfinite(logits))
