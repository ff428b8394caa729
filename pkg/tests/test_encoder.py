import numpy as np
import pytest

from jointbert.encoder import (
    EncoderConfig, encode, init_encoder_params, multi_head_self_attention, truncated_normal,
)
from jointbert.errors import ConfigError, ShapeError
from jointbert.gradcheck import check_gradients
from jointbert.tensor import Tensor, tensor_sum
from jointbert import tensor as tc


def tiny(dropout=0.0, **kw):
    base = dict(vocab_size=30, num_layers=2, hidden_size=16, num_heads=2, intermediate_size=32,
                max_len=12, dropout_p=dropout)
    base.update(kw)
    return EncoderConfig(**base)


def params_for(cfg, seed=0, dtype=np.float64):
    return init_encoder_params(cfg, np.random.default_rng(seed), dtype)


def test_output_shapes_single_and_batch():
    cfg = tiny()
    p = params_for(cfg)
    out = encode([2, 5, 6, 3], cfg, p, return_attention=True)
    assert out.hidden_states.shape == (4, 16)
    assert out.h1.shape == (16,)
    assert len(out.attention) == 2 and out.attention[0].shape == (2, 4, 4)
    batch = encode(np.array([[2, 5, 6, 3], [2, 7, 3, 0]]), cfg, p, padding_mask=np.array([[1, 1, 1, 1], [1, 1, 1, 0]]))
    assert batch.hidden_states.shape == (2, 4, 16)
    assert batch.h1.shape == (2, 16)


def test_single_token_attention_is_one():
    cfg = tiny()
    out = encode([2], cfg, params_for(cfg), return_attention=True)
    for w in out.attention:
        np.testing.assert_array_equal(w, np.ones((2, 1, 1)))


@pytest.mark.parametrize("seed", range(5))
def test_attention_rows_are_distributions(seed):
    cfg = tiny()
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, 30, 9)
    out = encode(ids, cfg, params_for(cfg, seed), return_attention=True)
    for w in out.attention:
        assert np.all(w >= 0)
        np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-9)


def test_padding_gets_zero_attention():
    cfg = tiny()
    out = encode(np.array([[2, 5, 3, 0, 0]]), cfg, params_for(cfg), np.array([[1, 1, 1, 0, 0]]),
                 return_attention=True)
    for w in out.attention:
        assert np.all(w[..., 3:] == 0)


def test_position_embeddings_distinguish_repeats():
    cfg = tiny()
    h = encode([7, 7], cfg, params_for(cfg)).hidden_states.data
    assert not np.allclose(h[0], h[1])


def test_length_limit():
    cfg = tiny(max_len=4)
    with pytest.raises(ShapeError, match="max_len"):
        encode([1, 2, 3, 4, 5], cfg, params_for(cfg))


def test_token_id_out_of_range():
    cfg = tiny()
    with pytest.raises(IndexError):
        encode([2, 30], cfg, params_for(cfg))


def test_bidirectional_context_reaches_first_position():
    # changing only the token before [SEP] must move h1
    cfg = tiny()
    p = params_for(cfg)
    a = encode([2, 8, 9, 10, 3], cfg, p).h1.data
    b = encode([2, 8, 9, 11, 3], cfg, p).h1.data
    assert np.abs(a - b).max() > 1e-6


def test_padding_invariance():
    cfg = tiny()
    p = params_for(cfg)
    ids = [2, 11, 12, 13, 3]
    alone = encode(ids, cfg, p).hidden_states.data
    padded = encode(np.array([ids + [0, 0, 0]]), cfg, p, np.array([[1] * 5 + [0] * 3])).hidden_states.data
    np.testing.assert_allclose(padded[0, :5], alone, atol=1e-6)


def test_batch_matches_individual_runs():
    cfg = tiny()
    p = params_for(cfg)
    seqs = [[2, 4, 5, 3], [2, 6, 3], [2, 7, 8, 9, 10, 3]]
    t = max(map(len, seqs))
    ids = np.array([s + [0] * (t - len(s)) for s in seqs])
    mask = np.array([[1] * len(s) + [0] * (t - len(s)) for s in seqs], dtype=bool)
    batch = encode(ids, cfg, p, mask).hidden_states.data
    for i, s in enumerate(seqs):
        np.testing.assert_allclose(batch[i, : len(s)], encode(s, cfg, p).hidden_states.data, atol=1e-9)


def test_eval_mode_is_deterministic_and_training_is_not():
    cfg = tiny(dropout=0.3)
    p = params_for(cfg)
    ids = [2, 4, 5, 6, 3]
    np.testing.assert_array_equal(encode(ids, cfg, p).hidden_states.data, encode(ids, cfg, p).hidden_states.data)
    a = encode(ids, cfg, p, training=True, rng=np.random.default_rng(1)).hidden_states.data
    b = encode(ids, cfg, p, training=True, rng=np.random.default_rng(2)).hidden_states.data
    c = encode(ids, cfg, p, training=True, rng=np.random.default_rng(1)).hidden_states.data
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(a, c)


def test_init_is_seeded_and_bounded():
    cfg = tiny()
    a, b = params_for(cfg, 3, np.float32), params_for(cfg, 3, np.float32)
    assert set(a) == set(b)
    for k in a:
        np.testing.assert_array_equal(a[k].data, b[k].data)
        assert a[k].dtype == np.float32
    w = truncated_normal(np.random.default_rng(0), (200, 200), dtype=np.float64)
    assert np.abs(w).max() <= 0.04
    assert abs(w.std() - 0.02 * 0.88) < 1e-3


@pytest.mark.parametrize("seed", range(10))
def test_encoder_gradient(seed):
    cfg = tiny()
    p = params_for(cfg, seed)
    rng = np.random.default_rng(100 + seed)
    ids = np.array([[2, 5, 9, 14, 3, 0], [2, 7, 21, 3, 0, 0]])
    mask = ids != 0
    mask[:, 0] = True
    probe = rng.standard_normal((2, 6, 16))
    # the key bias only shifts each score row by a constant, so its true gradient is zero
    names = sorted(n for n in p if not n.endswith("key.bias"))
    tensors = [p[n] for n in names]

    def fn():
        h = encode(ids, cfg, p, mask).hidden_states
        return tensor_sum(tc.mul(h, probe))

    errors = check_gradients(fn, tensors, max_coords=6, rng=rng)
    worst = max(errors, key=errors.get)
    assert errors[worst] < 1e-4, (names[worst], errors[worst])
    for n in p:
        if n.endswith("key.bias"):
            assert np.abs(p[n].grad).max() < 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_attention_sublayer_gradient_wrt_input(seed):
    cfg = tiny()
    p = params_for(cfg, seed)
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((5, 16)), requires_grad=True)
    probe = rng.standard_normal((5, 16))
    fn = lambda: tensor_sum(tc.mul(multi_head_self_attention(x, p, "layer.0.attn.", 2), probe))  # noqa: E731
    assert check_gradients(fn, [x])[0] < 1e-6


def test_config_validation():
    with pytest.raises(ConfigError, match="divisible"):
        EncoderConfig(vocab_size=10, hidden_size=10, num_heads=3)
    with pytest.raises(ConfigError):
        EncoderConfig(vocab_size=10, dropout_p=1.0)
    with pytest.raises(ConfigError):
        EncoderConfig(vocab_size=0)
    with pytest.raises(ConfigError, match="unknown"):
        EncoderConfig.from_dict({"vocab_size": 10, "bogus": 1})


def test_config_round_trip(tmp_path):
    cfg = tiny(dropout=0.1)
    cfg.save(tmp_path / "c.json")
    assert EncoderConfig.load(tmp_path / "c.json") == cfg
    assert EncoderConfig(vocab_size=5).to_dict() == {
        "vocab_size": 5, "num_layers": 4, "hidden_size": 128, "num_heads": 4,
        "intermediate_size": 512, "max_len": 50, "dropout_p": 0.1,
    }
