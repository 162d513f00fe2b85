import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from soundmix.errors import ConfigMismatch, InvalidTarget, ShapeMismatch, StaleCache, UnknownSchema
from soundmix.model import (
    ModelConfig,
    backward,
    bce_with_logits,
    forward,
    init_params,
    load_checkpoint,
    predict_proba,
    save_checkpoint,
    sigmoid,
)

TINY = ModelConfig(input_shape=(1, 16, 16), conv_channels=(4, 8), fc_hidden=12, num_classes=3)


def test_paper_shape_chain():
    cfg = ModelConfig(num_classes=21)
    assert cfg.final_spatial == (8, 8)
    assert cfg.flatten_size == 512 * 8 * 8 == 32768
    shapes = cfg.param_shapes()
    assert shapes["conv0.weight"] == (64, 1, 3, 3)
    assert shapes["conv3.weight"] == (512, 256, 3, 3)
    assert shapes["fc.weight"] == (128, 32768)
    assert shapes["out.weight"] == (21, 128)


def test_paper_forward_output_shape():
    cfg = ModelConfig(num_classes=21)
    p = init_params(cfg, dtype=np.float32)
    logits, _ = forward(p, np.zeros((1, 1, 128, 128), np.float32))
    assert logits.shape == (1, 21)


def test_init_deterministic_and_bounded():
    a, b = init_params(TINY), init_params(TINY)
    for k in a.tensors:
        np.testing.assert_array_equal(a[k], b[k])
    bound = math.sqrt(6 / 9)
    assert bound == pytest.approx(0.8165, abs=1e-4)
    assert np.max(np.abs(a["conv0.weight"])) <= bound
    assert all(not np.any(v) for k, v in a.tensors.items() if k.endswith(".bias"))
    fan = 4 * 9
    assert np.max(np.abs(a["conv1.weight"])) <= math.sqrt(6 / fan)


def test_zero_path_gives_output_bias():
    p = init_params(TINY)
    for k in p.tensors:
        p.tensors[k][:] = 0
    p.tensors["out.bias"][:] = [0.5, -1.0, 2.0]
    logits, _ = forward(p, np.zeros((3, 1, 16, 16)))
    np.testing.assert_array_equal(logits, np.tile([0.5, -1.0, 2.0], (3, 1)))


def test_hand_convolution_on_5x5():
    from soundmix.model import _conv_forward

    rng = np.random.default_rng(0)
    img = rng.integers(-3, 4, (5, 5)).astype(float)
    k = rng.integers(-2, 3, (3, 3)).astype(float)
    z, _ = _conv_forward(img[None, None], k[None, None], np.array([0.25]))
    np.testing.assert_allclose(z[0, 0], oracles.same_conv2d(img.tolist(), k.tolist(), 0.25))


def test_maxpool_block():
    from soundmix.model import _pool_forward

    out, idx = _pool_forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    assert out.item() == 4.0
    _, idx = _pool_forward(np.full((1, 1, 2, 2), 7.0))
    assert idx.item() == 0  # first occurrence in row-major order on ties


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        forward(init_params(TINY), np.zeros((2, 1, 8, 8)))


def test_sigmoid_values_and_symmetry():
    assert sigmoid(0.0) == 0.5
    x = np.random.default_rng(0).uniform(-40, 40, 200)
    np.testing.assert_allclose(sigmoid(-x), 1 - sigmoid(x), atol=1e-15)
    lo, hi = sigmoid(-1000.0), sigmoid(1000.0)
    assert 0 < lo and hi < 1 and np.isfinite(lo) and np.isfinite(hi)
    for v in (-700.0, -30.0, -1.0, 3.0, 36.0):
        with mpmath.workdps(60):
            exact = 1 / (1 + mpmath.exp(-mpmath.mpf(v)))
        assert sigmoid(v) == pytest.approx(float(exact), rel=1e-14)


def test_bce_examples():
    loss, grad = bce_with_logits(np.array([[0.0]]), np.array([[1.0]]))
    assert loss == pytest.approx(math.log(2), abs=1e-12)
    assert grad[0, 0] == -0.5
    loss, _ = bce_with_logits(np.array([[100.0]]), np.array([[1.0]]))
    assert loss < 1e-10
    loss, _ = bce_with_logits(np.array([[-100.0]]), np.array([[1.0]]))
    with mpmath.workdps(60):
        exact = float(mpmath.log(1 + mpmath.exp(100)))
    assert loss == pytest.approx(exact, rel=1e-15)


def test_bce_rejects_bad_targets():
    with pytest.raises(InvalidTarget):
        bce_with_logits(np.zeros((1, 2)), np.array([[0.5, 1.0]]))
    with pytest.raises(ShapeMismatch):
        bce_with_logits(np.zeros((1, 2)), np.zeros((2, 1)))


@settings(max_examples=60, deadline=None)
@given(st.floats(-60, 60), st.sampled_from([0.0, 1.0]))
def test_bce_matches_high_precision(x, t):
    loss, grad = bce_with_logits(np.array([[x]]), np.array([[t]]))
    with mpmath.workdps(60):
        X = mpmath.mpf(x)
        s = 1 / (1 + mpmath.exp(-X))
        exact = -(t * mpmath.log(s) + (1 - t) * mpmath.log(1 - s))
    assert loss == pytest.approx(float(exact), rel=1e-12, abs=1e-300)
    assert grad[0, 0] == pytest.approx(float(s - t), rel=1e-12, abs=1e-300)


def test_zero_upstream_gradient():
    p = init_params(TINY)
    x = np.random.default_rng(0).normal(size=(2, 1, 16, 16))
    _, cache = forward(p, x)
    grads = backward(p, cache, np.zeros((2, 3)))
    assert all(not np.any(g) for g in grads.values())
    assert set(grads) == set(p.tensors)
    assert all(grads[k].shape == p[k].shape for k in grads)


def test_stale_cache_rejected():
    p = init_params(TINY)
    _, cache = forward(p, np.zeros((1, 1, 16, 16)))
    with pytest.raises(StaleCache):
        backward(p.copy(), cache, np.zeros((1, 3)))


def test_duplicate_batch_leaves_gradient_unchanged():
    p = init_params(TINY)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 1, 16, 16))
    y = (rng.random((2, 3)) > 0.5).astype(float)

    def grads(xb, yb):
        logits, cache = forward(p, xb)
        return backward(p, cache, bce_with_logits(logits, yb)[1])

    g1 = grads(x, y)
    g2 = grads(np.concatenate([x, x]), np.concatenate([y, y]))
    for k in g1:
        np.testing.assert_allclose(g2[k], g1[k], rtol=1e-10, atol=1e-14)


def test_gradients_of_generic_instance_small_step():
    # Default He-init instance; a tiny step keeps every ReLU and pool choice fixed.
    p = init_params(ModelConfig((1, 16, 16), (4, 8), num_classes=3))
    rng = np.random.default_rng(7)
    x = rng.normal(size=(4, 1, 16, 16))
    y = (rng.random((4, 3)) > 0.5).astype(float)
    logits, cache = forward(p, x)
    analytic = backward(p, cache, bce_with_logits(logits, y)[1])
    h = 1e-6
    for name, v in p.tensors.items():
        idx = [tuple(int(rng.integers(s)) for s in v.shape) for _ in range(6)]
        for i in idx:
            old = v[i]
            v[i] = old + h
            up = bce_with_logits(forward(p, x)[0], y)[0]
            v[i] = old - h
            dn = bce_with_logits(forward(p, x)[0], y)[0]
            v[i] = old
            num = (up - dn) / (2 * h)
            scale = max(np.max(np.abs(analytic[name])), 1e-12)
            assert abs(num - analytic[name][i]) / scale < 1e-5, name


def test_predict_proba_monotone_and_bounded():
    p = init_params(TINY)
    x = np.random.default_rng(2).normal(size=(5, 1, 16, 16))
    logits, _ = forward(p, x)
    probs = predict_proba(p, x, batch_size=2)
    assert np.all((probs > 0) & (probs < 1))
    np.testing.assert_array_equal(np.argsort(probs, axis=1), np.argsort(logits, axis=1))
    for k in p.tensors:
        p.tensors[k][:] = 0
    np.testing.assert_array_equal(predict_proba(p, x), 0.5)


def test_forward_deterministic():
    p = init_params(TINY)
    x = np.random.default_rng(3).normal(size=(3, 1, 16, 16))
    a, _ = forward(p, x)
    b, _ = forward(p, x)
    np.testing.assert_array_equal(a, b)


def test_checkpoint_roundtrip(tmp_path):
    p = init_params(TINY)
    save_checkpoint(p, tmp_path / "m.smck", {"class_names": ["a", "b", "c"]})
    raw = (tmp_path / "m.smck").read_bytes()
    assert raw[:4] == b"SMCK"
    q, extra = load_checkpoint(tmp_path / "m.smck", expected=TINY)
    assert extra == {"class_names": ["a", "b", "c"]}
    for k in p.tensors:
        np.testing.assert_array_equal(q[k], p[k].astype(np.float32))
    with pytest.raises(ConfigMismatch):
        load_checkpoint(tmp_path / "m.smck", expected=ModelConfig((1, 16, 16), (4, 8), num_classes=4))
    (tmp_path / "bad.smck").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(UnknownSchema):
        load_checkpoint(tmp_path / "bad.smck")
    (tmp_path / "short.smck").write_bytes(raw[:-4])
    with pytest.raises(UnknownSchema):
        load_checkpoint(tmp_path / "short.smck")
