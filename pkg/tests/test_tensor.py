import numpy as np
import pytest

from jointbert import tensor as tc
from jointbert.container import load_params, save_params
from jointbert.errors import CheckpointError, ShapeError
from jointbert.gradcheck import check_gradients
from jointbert.tensor import Tensor

SEEDS = range(10)


def rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def random_shape(rng, ndim):
    return tuple(int(n) for n in rng.integers(1, 5, size=ndim))


# -- forward examples ----------------------------------------------------------------

def test_matmul_identity():
    a = np.random.default_rng(0).standard_normal((3, 4))
    out = tc.matmul(Tensor(np.eye(3)), Tensor(a))
    np.testing.assert_array_equal(out.data, a)


def test_add_zero_is_identity():
    x = Tensor(np.random.default_rng(1).standard_normal((2, 3)))
    np.testing.assert_array_equal((x + 0.0).data, x.data)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        tc.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


def test_add_shape_error():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4,\)"):
        tc.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(4)))


def test_softmax_uniform_and_stable():
    np.testing.assert_allclose(tc.softmax(Tensor(np.zeros(4))).data, [0.25] * 4, rtol=0, atol=1e-15)
    out = tc.softmax(Tensor(np.array([1000.0, 0.0]))).data
    assert abs(out[0] - 1.0) < 1e-12 and abs(out[1]) < 1e-12
    assert np.all(np.isfinite(out))


@pytest.mark.parametrize("seed", SEEDS)
def test_softmax_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((5, 7)) * 10)
    np.testing.assert_allclose(tc.softmax(x, axis=-1).data.sum(-1), 1.0, atol=1e-9)
    np.testing.assert_allclose(tc.softmax(x, axis=0).data.sum(0), 1.0, atol=1e-9)


def test_layer_norm_constant_vector_is_zero():
    x = Tensor(np.full((2, 6), 3.5))
    out = tc.layer_norm(x, Tensor(np.ones(6)), Tensor(np.zeros(6)), 1e-12)
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_layer_norm_moments():
    x = Tensor(np.random.default_rng(3).standard_normal((4, 32)) * 5 + 2)
    out = tc.layer_norm(x, Tensor(np.ones(32)), Tensor(np.zeros(32)), 1e-12).data
    np.testing.assert_allclose(out.mean(-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(-1), 1.0, atol=1e-9)


def test_dropout_inference_identity_and_scaling():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((50, 40)))
    assert tc.dropout(x, 0.1, False, rng) is x
    out = tc.dropout(x, 0.25, True, np.random.default_rng(1)).data
    kept = out != 0
    np.testing.assert_allclose(out[kept], x.data[kept] / 0.75)
    assert 0.65 < kept.mean() < 0.85


def test_dropout_rejects_bad_probability():
    with pytest.raises(ValueError):
        tc.dropout(Tensor(np.ones(3)), 1.0, True, np.random.default_rng(0))


def test_embedding_lookup_out_of_range():
    table = Tensor(np.zeros((5, 2)))
    with pytest.raises(IndexError, match="7"):
        tc.embedding_lookup(table, np.array([1, 7]))
    np.testing.assert_array_equal(tc.embedding_lookup(table, np.array([4])).data, np.zeros((1, 2)))


def test_cross_entropy_values():
    k = 6
    loss = tc.cross_entropy(Tensor(np.zeros(k)), 2)
    assert loss.item() == pytest.approx(np.log(k), abs=1e-15)
    assert tc.cross_entropy(Tensor(np.array([30.0, -30.0])), 0).item() < 1e-12
    with pytest.raises(IndexError):
        tc.cross_entropy(Tensor(np.zeros(3)), 3)


def test_cross_entropy_gradient_is_softmax_minus_onehot():
    logits = Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True)
    tc.cross_entropy(logits, 1).backward()
    p = np.exp(logits.data) / np.exp(logits.data).sum()
    np.testing.assert_allclose(logits.grad, p - np.array([0, 1, 0]), atol=1e-15)


# -- backward mechanics ---------------------------------------------------------------

def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_backward_accumulates_and_zero_grad_resets():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    (x * x).sum().backward()
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, 4 * x.data)
    x.zero_grad()
    assert np.all(x.grad == 0.0)


def test_shared_subexpression_gradient():
    x = Tensor(np.array(3.0), requires_grad=True)
    y = x * x
    (y + y * x).backward()
    assert x.grad == pytest.approx(2 * 3.0 + 3 * 9.0)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with tc.no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_deep_chain_does_not_recurse():
    x = Tensor(np.array(1.0), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y + 0.0
    y.backward()
    assert x.grad == 1.0


def test_determinism_forward_backward():
    def run():
        rng = np.random.default_rng(7)
        w = Tensor(rng.standard_normal((6, 4)), requires_grad=True)
        x = Tensor(rng.standard_normal((3, 6)))
        out = tc.dropout(tc.gelu(tc.matmul(x, w)), 0.3, True, rng)
        loss = tc.cross_entropy(out, np.array([0, 1, 3]))
        loss.backward()
        return loss.data.copy(), w.grad.copy()

    (l1, g1), (l2, g2) = run(), run()
    assert l1.tobytes() == l2.tobytes() and g1.tobytes() == g2.tobytes()


# -- gradient checks (central differences, float64) ------------------------------------

def _check(fn, inputs, tol):
    errors = check_gradients(fn, inputs, step=1e-5)
    assert max(errors.values()) < tol, errors


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_matmul(seed):
    rng = np.random.default_rng(seed)
    a, b = rand(rng, 4, 5), rand(rng, 5, 3)
    r = rng.standard_normal((4, 3))
    _check(lambda: (tc.matmul(a, b) * r).sum(), [a, b], 1e-6)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_batched_matmul(seed):
    rng = np.random.default_rng(seed)
    a, b = rand(rng, 2, 3, 4, 5), rand(rng, 2, 3, 5, 2)
    w = rand(rng, 5, 3)
    r1, r2 = rng.standard_normal((2, 3, 4, 2)), rng.standard_normal((2, 3, 4, 3))
    _check(lambda: (tc.matmul(a, b) * r1).sum() + (tc.matmul(a, w) * r2).sum(), [a, b, w], 1e-6)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_matmul_vector(seed):
    rng = np.random.default_rng(seed)
    v, m = rand(rng, 5), rand(rng, 3, 5)
    r = rng.standard_normal(3)
    _check(lambda: (tc.matmul(m, v) * r).sum() + tc.matmul(v, tc.transpose(m)).sum(), [v, m], 1e-6)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_elementwise_broadcast(seed):
    rng = np.random.default_rng(seed)
    shape = random_shape(rng, 3)
    a = rand(rng, *shape)
    b = rand(rng, shape[-1])
    c = Tensor(rng.uniform(0.5, 2.0, (1,) + shape[1:]), requires_grad=True)
    r = rng.standard_normal(shape)
    _check(lambda: ((a + b) * c * r - a / c + (b - a)).sum(), [a, b, c], 1e-4)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_shape_ops(seed):
    rng = np.random.default_rng(seed)
    a, b = rand(rng, 2, 3, 4), rand(rng, 2, 1, 4)
    r = rng.standard_normal((4, 8))
    idx = rng.integers(0, 3, size=5)

    def fn():
        cat = tc.concat([a, b], axis=1)                  # (2, 4, 4)
        t = tc.transpose(cat, (2, 1, 0))                 # (4, 4, 2)
        flat = tc.reshape(t, (4, 8))
        picked = tc.take(tc.reshape(a, (6, 4)), idx)     # (5, 4)
        sliced = a[:, 1:, ::2]
        return (flat * r).sum() + picked.mean() * 3.0 + (sliced * sliced).sum()

    _check(fn, [a, b], 1e-6)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_softmax(seed):
    rng = np.random.default_rng(seed)
    x = rand(rng, *random_shape(rng, 2))
    r = rng.standard_normal(x.shape)
    _check(lambda: (tc.softmax(x, axis=-1) * r).sum() + (tc.softmax(x, axis=0) * r).sum(), [x], 1e-6)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_log_softmax_and_logsumexp(seed):
    rng = np.random.default_rng(seed)
    x = rand(rng, 3, 5)
    r = rng.standard_normal((3, 5))
    _check(lambda: (tc.log_softmax(x) * r).sum() + (tc.logsumexp(x, axis=0) * r[0]).sum(), [x], 1e-6)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_layer_norm(seed):
    rng = np.random.default_rng(seed)
    x, g, b = rand(rng, 3, 7), rand(rng, 7), rand(rng, 7)
    r = rng.standard_normal((3, 7))
    _check(lambda: (tc.layer_norm(x, g, b, 1e-12) * r).sum(), [x, g, b], 1e-5)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_gelu(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal(random_shape(rng, 2)) * 2, requires_grad=True)
    r = rng.standard_normal(x.shape)
    _check(lambda: (tc.gelu(x) * r).sum(), [x], 1e-5)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_exp_log_tanh(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(0.2, 2.0, (3, 4)), requires_grad=True)
    r = rng.standard_normal((3, 4))
    _check(lambda: ((tc.exp(x) + tc.log(x) + tc.tanh(x)) * r).sum(), [x], 1e-6)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_dropout_fixed_mask(seed):
    rng = np.random.default_rng(seed)
    x = rand(rng, 4, 6)
    r = rng.standard_normal((4, 6))
    _check(lambda: (tc.dropout(x, 0.3, True, np.random.default_rng(seed)) * r).sum(), [x], 1e-6)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_embedding_lookup(seed):
    rng = np.random.default_rng(seed)
    table = rand(rng, 6, 3)
    ids = rng.integers(0, 6, size=(2, 4))
    r = rng.standard_normal((2, 4, 3))
    _check(lambda: (tc.embedding_lookup(table, ids) * r).sum(), [table], 1e-6)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_cross_entropy(seed):
    rng = np.random.default_rng(seed)
    x = rand(rng, 4, 5)
    target = rng.integers(0, 5, size=4)
    _check(lambda: tc.cross_entropy(x, target), [x], 1e-6)
    _check(lambda: tc.cross_entropy(x, target, reduction="mean"), [x], 1e-6)


# -- parameter container --------------------------------------------------------------

@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_container_round_trip(tmp_path, dtype):
    rng = np.random.default_rng(0)
    params = {"a": rng.standard_normal((3, 4)).astype(dtype), "b.c": rng.standard_normal(5).astype(dtype),
              "scalar": np.array(1.5, dtype=dtype)}
    path = tmp_path / "p.bin"
    save_params(path, params, {"note": "x"})
    loaded, meta = load_params(path)
    assert meta == {"note": "x"}
    for k, v in params.items():
        assert loaded[k].dtype == v.dtype and loaded[k].shape == v.shape
        assert loaded[k].tobytes() == v.tobytes()


def test_container_is_little_endian(tmp_path):
    path = tmp_path / "p.bin"
    save_params(path, {"x": np.array([1.0], dtype=np.float32)})
    assert path.read_bytes().endswith(np.array([1.0], dtype="<f4").tobytes())


def test_container_rejects_corruption(tmp_path):
    path = tmp_path / "p.bin"
    save_params(path, {"x": np.arange(10, dtype=np.float64)})
    blob = bytearray(path.read_bytes())
    blob[-3] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="checksum"):
        load_params(path)


def test_container_rejects_version_and_magic(tmp_path):
    path = tmp_path / "p.bin"
    save_params(path, {"x": np.zeros(2)})
    blob = bytearray(path.read_bytes())
    blob[4] = 99
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version 99"):
        load_params(path)
    path.write_bytes(b"NOPE" + bytes(blob[4:]))
    with pytest.raises(CheckpointError, match="magic"):
        load_params(path)
