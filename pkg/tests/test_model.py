import numpy as np
import pytest

from aac_lwf import numerics as nx
from aac_lwf.errors import ConfigError, InvariantError, ParameterError, VocabularyError
from aac_lwf.model import (EOS, SOS, ModelConfig, WaveTransformer, full_conv_param_count, param_shapes, params_digest,
                           separable_conv2d, separable_param_count)
from aac_lwf.numerics import Tensor

from conftest import tiny_config


@pytest.fixture
def model():
    return WaveTransformer(tiny_config(), seed=5)


def test_temporal_encoder_keeps_frame_count_862(model):
    X = np.random.default_rng(0).normal(size=(862, 64))
    assert model.encode_temporal(X).shape == (862, model.config.d_model)


def test_temporal_encoder_single_frame(model):
    assert model.encode_temporal(np.ones((1, 64))).shape == (1, model.config.d_model)


def test_temporal_encoder_gradient_wrt_input(model):
    X = np.random.default_rng(1).normal(size=(5, 64))
    w = np.random.default_rng(2).normal(size=(5, model.config.d_model))
    err = nx.finite_diff_check(lambda x: nx.sum_(model.encode_temporal(x) * w), X,
                               indices=range(0, 5 * 64, 7))
    assert err < 1e-4


def test_tf_encoder_keeps_frame_count_1292(model):
    X = np.random.default_rng(0).normal(size=(1292, 64))
    assert model.encode_tf(X).shape == (1292, model.config.d_model)


def test_separable_conv_identity_kernels():
    C = 3
    x = np.random.default_rng(0).normal(size=(2, 4, 6, C))
    dw = np.zeros((3, 3, C))
    dw[1, 1, :] = 1.0
    out = separable_conv2d(Tensor(x), Tensor(dw), Tensor(np.zeros(C)), Tensor(np.eye(C)), Tensor(np.zeros(C)))
    np.testing.assert_array_equal(out.data, x)


@pytest.mark.parametrize("c_in,c_out", [(1, 8), (8, 8), (16, 32)])
def test_separable_block_is_smaller_than_full_conv(c_in, c_out):
    # closed forms: 9*c_in + c_in (depthwise) + c_in*c_out + c_out vs 9*c_in*c_out + c_out
    assert separable_param_count(c_in, c_out) == 9 * c_in + c_in + c_in * c_out + c_out
    assert full_conv_param_count(c_in, c_out) == 9 * c_in * c_out + c_out
    assert separable_param_count(c_in, c_out) < full_conv_param_count(c_in, c_out)


def test_merge_zero_inputs_give_bias_only(model):
    d = model.config.d_model
    model.params["merge.b"].data = np.linspace(-1, 1, d)
    out = model.merge(np.zeros((7, d)), np.zeros((7, d))).data
    np.testing.assert_array_equal(out, np.tile(np.tanh(model.params["merge.b"].data), (7, 1)))


def test_merge_length_mismatch(model):
    d = model.config.d_model
    with pytest.raises(InvariantError):
        model.merge(np.zeros((3, d)), np.zeros((4, d)))


def test_merge_projection_gradient(model):
    rng = np.random.default_rng(3)
    d = model.config.d_model
    a, b = Tensor(rng.normal(size=(4, d))), Tensor(rng.normal(size=(4, d)))
    w = rng.normal(size=(4, d))
    W = model.params["merge.w"]

    def f(x):
        model.params["merge.w"] = x
        try:
            return nx.sum_(model.merge(a, b) * w)
        finally:
            model.params["merge.w"] = W
    assert nx.finite_diff_check(f, W.data) < 1e-4


def test_decoder_is_causal(model):
    rng = np.random.default_rng(4)
    H = rng.normal(size=(6, model.config.d_model))
    Y = np.array([SOS, 5, 6, 7, 8])
    base = model.decode(H, Y).data
    for t in range(1, len(Y)):
        Y2 = Y.copy()
        Y2[t] = 9
        out = model.decode(H, Y2).data
        np.testing.assert_array_equal(out[:t], base[:t])
        assert not np.array_equal(out[t:], base[t:])


def test_decoder_single_step(model):
    H = np.zeros((3, model.config.d_model))
    assert model.decode(H, [SOS]).shape == (1, model.config.vocab_size)


def test_decoder_gradient_sparsity(model):
    rng = np.random.default_rng(5)
    H = Tensor(rng.normal(size=(1, 6, model.config.d_model)))
    Y = np.array([[SOS, 4, 5, 6]])
    E0 = model.embed_tokens(Y).data
    Tw = Y.shape[1]
    for s in range(Tw):
        E = Tensor(E0, requires_grad=True)
        logits = model.decode_embedded(H, E)
        w = np.zeros(logits.shape)
        w[0, s] = rng.normal(size=model.config.vocab_size)
        nx.backward(nx.sum_(logits * w))
        assert np.abs(E.grad[0, 0]).max() > 0, f"position 0 gets no gradient from step {s}"
        last = np.abs(E.grad[0, Tw - 1]).max()
        if s < Tw - 1:
            assert last == 0.0
        else:
            assert last > 0


def test_forward_rows_sum_to_one(model):
    X = np.random.default_rng(6).normal(size=(2, 5, 64))
    Y = np.array([[SOS, 4, 5], [SOS, 6, 7]])
    for T in (1.0, 2.0):
        p = model.forward(X, Y, T).data
        np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-9)


def test_distillation_temperature_flattens(model):
    X = np.random.default_rng(7).normal(size=(5, 64))
    Y = [SOS, 4, 5]
    p1, p2 = model.forward(X, Y, 1.0).data, model.forward(X, Y, 2.0).data
    ent = lambda p: -(p * np.log(p)).sum(-1)  # noqa: E731
    assert np.all(ent(p2) > ent(p1))


def test_clone_gives_bitwise_identical_outputs(model):
    X = np.random.default_rng(8).normal(size=(5, 64))
    other = model.clone()
    a, b = model.forward(X, [SOS, 4]).data, other.forward(X, [SOS, 4]).data
    assert a.tobytes() == b.tobytes()
    assert params_digest(model.params) == params_digest(other.params)


def test_greedy_stops_immediately_when_eos_dominates(model):
    model.params["cls.w"].data[:] = 0.0
    model.params["cls.b"].data[:] = 0.0
    model.params["cls.b"].data[EOS] = 10.0
    assert model.generate_greedy(np.ones((4, 64))) == [SOS, EOS]


def test_greedy_is_deterministic_and_bounded(model):
    X = np.random.default_rng(9).normal(size=(3, 6, 64))
    a = model.generate_greedy(X, max_len=5)
    assert a == model.generate_greedy(X, max_len=5)
    assert all(len(s) <= 5 and s[0] == SOS for s in a)


def test_padding_does_not_change_outputs(model):
    rng = np.random.default_rng(10)
    short = rng.normal(size=(4, 64))
    long = rng.normal(size=(7, 64))
    padded = np.zeros((2, 7, 64))
    padded[0, :4] = short
    padded[1] = long
    Y = np.array([[SOS, 4, 5], [SOS, 6, 7]])
    batched = model.forward(padded, Y, lengths=[4, 7]).data
    np.testing.assert_allclose(batched[0], model.forward(short, Y[0]).data, atol=1e-12)
    np.testing.assert_allclose(batched[1], model.forward(long, Y[1]).data, atol=1e-12)


def test_param_shapes_follow_config():
    cfg = tiny_config(vocab_size=20)
    shapes = param_shapes(cfg)
    assert shapes["dec.embed"] == (20, cfg.d_model)
    assert shapes["cls.w"] == (cfg.d_model, 20)
    assert list(WaveTransformer(cfg).params) == list(shapes)


@pytest.mark.parametrize("kw", [dict(d_model=10, n_heads=4), dict(n_temporal_blocks=2), dict(temporal_kernel=4),
                                dict(vocab_size=3), dict(classifier_temperature=0.0), dict(n_mels=62)])
def test_config_validation(kw):
    base = dict(vocab_size=12, d_model=8, n_temporal_blocks=1, dilation_schedule=(1,), n_tf_blocks=1,
                tf_channels=2, n_decoder_blocks=1, n_heads=2, d_ff=16)
    with pytest.raises(ConfigError):
        ModelConfig(**{**base, **kw})


def test_input_validation(model):
    with pytest.raises(ConfigError):
        model.forward(np.ones((3, 32)), [SOS])
    with pytest.raises(VocabularyError):
        model.forward(np.ones((3, 64)), [SOS, 99])
    with pytest.raises(ParameterError):
        model.forward(np.ones((3, 64)), [SOS] * (model.config.max_caption_len + 1))
