"""Tensor-engine and layer tests: values, gradients, serialization."""

import numpy as np
import pytest

import metasaea.neurocompute as nc


def test_layer_norm_values():
    out = nc.layer_norm(nc.constant([1.0, 2.0, 3.0]),
                        nc.constant(np.ones(3)), nc.constant(np.zeros(3)))
    # mean 2, population variance 2/3
    manual = (np.array([1.0, 2.0, 3.0]) - 2.0) / np.sqrt(2.0 / 3.0 + 1e-5)
    assert np.allclose(out.data, manual)
    assert np.allclose(out.data, [-1.2247, 0.0, 1.2247], atol=1e-3)
    assert abs(out.data.sum()) < 1e-12


def test_layer_norm_constant_input_is_zero():
    out = nc.layer_norm(nc.constant([4.0, 4.0, 4.0, 4.0]),
                        nc.constant(np.ones(4)), nc.constant(np.zeros(4)))
    assert np.allclose(out.data, 0.0)


def test_layer_norm_zero_gain_returns_bias():
    bias = np.array([0.5, -1.0, 2.0])
    out = nc.layer_norm(nc.constant([1.0, 9.0, -3.0]),
                        nc.constant(np.zeros(3)), nc.constant(bias))
    assert np.array_equal(out.data, bias)


def test_backward_quadratic():
    w = nc.parameter([1.0, -2.0, 3.0])
    loss = nc.sum_all(nc.mul(w, w))
    nc.backward(loss)
    assert np.allclose(w.grad, 2.0 * w.data)


def test_backward_zero_input_linear_layer():
    rng = np.random.default_rng(0)
    params = nc.ParameterSet()
    layer = nc.Linear(params, "lin", 3, 2, rng)
    out = layer(nc.constant(np.zeros((4, 3))))
    loss = nc.sum_all(out)
    params.zero_grads()
    nc.backward(loss)
    assert np.allclose(params["lin.w"].grad, 0.0)
    assert np.allclose(params["lin.b"].grad, 4.0)


def test_backward_rejects_graph_reuse():
    w = nc.parameter([2.0])
    loss = nc.sum_all(nc.mul(w, w))
    nc.backward(loss)
    with pytest.raises(nc.GraphError):
        nc.backward(loss)


def test_backward_requires_scalar():
    w = nc.parameter([1.0, 2.0])
    with pytest.raises(nc.GraphError):
        nc.backward(nc.mul(w, w))


def test_two_layer_network_matches_finite_differences():
    rng = np.random.default_rng(3)
    params = nc.ParameterSet()
    net = nc.MLP(params, "net", [4, 5, 2], rng)
    x = rng.standard_normal((6, 4))
    target = rng.standard_normal((6, 2))

    def loss_value():
        with nc.no_grad():
            return float(nc.mse(net(nc.constant(x)), nc.constant(target)).data)

    params.zero_grads()
    nc.backward(nc.mse(net(nc.constant(x)), nc.constant(target)))
    step = 1e-5
    for name, p in params.items():
        flat = p.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_value()
            flat[i] = orig - step
            down = loss_value()
            flat[i] = orig
            num = (up - down) / (2 * step)
            ana = p.grad.ravel()[i]
            assert abs(num - ana) <= 1e-4 * max(1.0, abs(num), abs(ana)), name


def test_adam_first_step_is_signed_learning_rate():
    params = nc.ParameterSet()
    p = params.add("w", np.array([1.0, -1.0, 2.0]))
    state = nc.adam_init(params, lr=0.1)
    p.grad = np.array([0.3, -0.7, 0.0])
    before = p.data.copy()
    nc.adam_step(params, state)
    moved = before - p.data
    # bias-corrected m/sqrt(v) is +-1 at the first step wherever grad != 0
    assert np.allclose(moved[:2], 0.1 * np.sign(p.grad[:2]), atol=1e-6)
    assert moved[2] == 0.0


def test_adam_zero_gradient_keeps_parameters():
    params = nc.ParameterSet()
    p = params.add("w", np.array([1.0, 2.0]))
    state = nc.adam_init(params, lr=0.1)
    p.zero_grad()
    nc.adam_step(params, state)
    assert np.array_equal(p.data, [1.0, 2.0])


def test_adam_descends_quadratic():
    params = nc.ParameterSet()
    p = params.add("w", np.array([1.0, -2.0]))
    state = nc.adam_init(params, lr=0.05)
    start = float(np.sum(p.data**2))
    for _ in range(2):
        params.zero_grads()
        nc.backward(nc.sum_all(nc.mul(p, p)))
        nc.adam_step(params, state)
    assert float(np.sum(p.data**2)) < start


def test_attention_identical_keys_average_values():
    rng = np.random.default_rng(5)
    q = rng.standard_normal((4, 6))
    k = np.tile(rng.standard_normal(6), (4, 1))  # identical rows -> equal logits
    v = rng.standard_normal((4, 6))
    out = nc.attention(nc.constant(q), nc.constant(k), nc.constant(v), heads=1)
    assert np.allclose(out.data, np.tile(v.mean(axis=0), (4, 1)))


def test_attention_single_row_returns_value_row():
    rng = np.random.default_rng(6)
    q, k, v = (rng.standard_normal((1, 4)) for _ in range(3))
    out = nc.attention(nc.constant(q), nc.constant(k), nc.constant(v), heads=2)
    assert np.allclose(out.data, v)


def test_attention_rows_normalize():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((5, 8))
    weights = nc.softmax(nc.constant(x), axis=-1)
    assert np.allclose(weights.data.sum(axis=-1), 1.0, atol=1e-12)


def test_attention_dimension_mismatch():
    rng = np.random.default_rng(8)
    with pytest.raises(nc.GraphError):
        nc.attention(nc.constant(rng.standard_normal((3, 4))),
                     nc.constant(rng.standard_normal((3, 4))),
                     nc.constant(rng.standard_normal((2, 4))), heads=1)
    with pytest.raises(nc.GraphError):
        nc.attention(nc.constant(rng.standard_normal((3, 5))),
                     nc.constant(rng.standard_normal((3, 5))),
                     nc.constant(rng.standard_normal((3, 5))), heads=2)


def test_multi_head_matches_manual_concat():
    rng = np.random.default_rng(9)
    q = rng.standard_normal((5, 8))
    k = rng.standard_normal((5, 8))
    v = rng.standard_normal((5, 8))
    out = nc.attention(nc.constant(q), nc.constant(k), nc.constant(v), heads=2)
    parts = []
    for h in range(2):
        qs, ks, vs = q[:, 4 * h:4 * h + 4], k[:, 4 * h:4 * h + 4], v[:, 4 * h:4 * h + 4]
        scores = qs @ ks.T / np.sqrt(4)
        e = np.exp(scores - scores.max(axis=1, keepdims=True))
        w = e / e.sum(axis=1, keepdims=True)
        parts.append(w @ vs)
    assert np.allclose(out.data, np.hstack(parts), atol=1e-12)


def test_sinusoidal_position_zero():
    enc = nc.sinusoidal_encoding(0, 8)
    assert np.array_equal(enc, np.tile([0.0, 1.0], 4))


def test_sinusoidal_norm_bounded():
    for pos in (1, 17, 523):
        enc = nc.sinusoidal_encoding(pos, 16)
        assert np.linalg.norm(enc) <= np.sqrt(16) + 1e-12


def test_sinusoidal_distinct_positions():
    rng = np.random.default_rng(10)
    positions = rng.integers(0, 10_000, size=40)
    seen = {}
    for p in positions:
        key = tuple(np.round(nc.sinusoidal_encoding(int(p), 12), 12))
        assert seen.setdefault(key, int(p)) == int(p)


def test_sinusoidal_odd_dim_rejected():
    with pytest.raises(ValueError):
        nc.sinusoidal_encoding(3, 7)


def test_forward_backward_deterministic():
    def run():
        rng = np.random.default_rng(42)
        params = nc.ParameterSet()
        net = nc.MLP(params, "n", [3, 8, 2], rng)
        x = rng.standard_normal((5, 3))
        params.zero_grads()
        loss = nc.mse(net(nc.constant(x)), nc.constant(np.ones((5, 2))))
        nc.backward(loss)
        return loss.item(), {k: p.grad.copy() for k, p in params.items()}

    l1, g1 = run()
    l2, g2 = run()
    assert l1 == l2
    assert all(np.array_equal(g1[k], g2[k]) for k in g1)


def test_tensor_finite_after_ops():
    rng = np.random.default_rng(11)
    x = nc.constant(rng.standard_normal((4, 6)))
    out = nc.softmax(nc.relu(nc.matmul(x, nc.constant(rng.standard_normal((6, 3))))))
    assert np.all(np.isfinite(out.data))
    assert out.size == int(np.prod(out.shape))


def test_checkpoint_bit_exact_round_trip(tmp_path):
    rng = np.random.default_rng(12)
    arrays = {
        "layer.w": rng.standard_normal((7, 3)),
        "layer.b": rng.standard_normal(3),
        "scalar": np.array(np.pi),
        "tensor3": rng.standard_normal((2, 3, 4)),
    }
    meta = {"kind": "test", "nested": {"a": 1}}
    path = tmp_path / "model.ckpt"
    nc.save_checkpoint(path, arrays, meta)
    loaded, meta2 = nc.load_checkpoint(path)
    assert meta2 == meta
    assert set(loaded) == set(arrays)
    for name in arrays:
        assert loaded[name].shape == arrays[name].shape
        assert np.array_equal(loaded[name], arrays[name])
        assert loaded[name].tobytes() == np.ascontiguousarray(arrays[name]).tobytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "bogus.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(nc.CheckpointError):
        nc.load_checkpoint(path)


def test_parameter_set_gradient_buffers_match_shapes():
    rng = np.random.default_rng(13)
    params = nc.ParameterSet()
    nc.MLP(params, "m", [4, 6, 3], rng)
    params.zero_grads()
    for _, p in params.items():
        assert p.grad.shape == p.data.shape
