import numpy as np
import pytest

from maneuver_rl import autograd as ag
from maneuver_rl.grid import GridSpec
from maneuver_rl.networks import (bce_loss, encoder_forward, encoder_forward_t, heads_forward_t, huber_loss,
                                  init_encoder, init_heads, init_q, one_hot, q_forward_t, q_values)
from maneuver_rl.nn import Adam, ParamSet, collect_grads

RTOL = 1e-4


def check(loss_fn, arrays):
    """Backprop vs central differences for every array in ``arrays``."""
    tensors = {k: ag.Tensor(v, requires_grad=True) for k, v in arrays.items()}
    loss_fn(tensors).backward()
    for k, arr in arrays.items():
        num = ag.numerical_grad(lambda: float(loss_fn({n: ag.Tensor(a) for n, a in arrays.items()}).data), arr)
        ana = tensors[k].grad
        err = np.abs(num - ana).max() / max(np.abs(num).max(), 1e-6)
        assert err < RTOL, (k, err)


@pytest.fixture
def r():
    return np.random.default_rng(0)


def test_dense(r):
    check(lambda t: ag.tanh(ag.matmul(t["x"], t["W"]) + t["b"]).sum(),
          {"x": r.normal(size=(4, 3)), "W": r.normal(size=(3, 5)), "b": r.normal(size=5)})


def test_elementwise_ops(r):
    def f(t):
        a, b = t["a"], t["b"]
        return (ag.sigmoid(a) * b - a / (ag.exp(b) + 1.0) + ag.sqrt(a * a + 1.0) + ag.log(b * b + 2.0)).mean()
    check(f, {"a": r.normal(size=(3, 4)), "b": r.normal(size=(3, 4))})


def test_broadcast_and_indexing(r):
    def f(t):
        s = t["a"] + t["b"]  # (3,4) + (4,)
        return (ag.take_along(s, np.array([1, 0, 3]), axis=1).sum()
                + ag.concat([s[:, :2], t["a"][:, 2:]], axis=1).reshape(12).sum() * 0.5)
    check(f, {"a": r.normal(size=(3, 4)), "b": r.normal(size=4)})


def test_relu_away_from_kink(r):
    x = r.normal(size=(5, 6))
    x[np.abs(x) < 0.05] = 0.3
    check(lambda t: (ag.relu(t["x"]) * ag.relu(t["x"])).sum(), {"x": x})


def test_softmax(r):
    w = r.normal(size=(3, 5))
    check(lambda t: (ag.softmax(t["z"]) * w).sum(), {"z": r.normal(size=(3, 5))})


@pytest.mark.parametrize("padding", [(0, 0), (1, 1)])
def test_conv2d(r, padding):
    w_out = r.normal(size=(2, 5 if padding[0] else 3, 3 if padding[1] else 1, 2))
    check(lambda t: (ag.conv2d(t["x"], t["w"], t["b"], padding) * w_out).sum(),
          {"x": r.normal(size=(2, 5, 3, 4)), "w": r.normal(size=(3, 3, 4, 2)), "b": r.normal(size=2)})


def test_conv2d_matches_direct_loop(r):
    x, w = r.normal(size=(1, 4, 3, 2)), r.normal(size=(3, 1, 2, 3))
    out = ag.conv2d(x, w).data
    for i in range(out.shape[1]):
        for j in range(out.shape[2]):
            for o in range(3):
                assert out[0, i, j, o] == pytest.approx(np.sum(x[0, i:i + 3, j:j + 1, :] * w[:, :, :, o]))


def test_maxpool(r):
    x = r.permutation(2 * 7 * 3 * 2).reshape(2, 7, 3, 2).astype(float)  # distinct values, no ties
    out = ag.maxpool2d(ag.Tensor(x), (2, 1)).data
    assert out.shape == (2, 3, 3, 2)
    assert out[1, 2, 0, 1] == max(x[1, 4, 0, 1], x[1, 5, 0, 1])
    w = r.normal(size=out.shape)
    check(lambda t: (ag.maxpool2d(t["x"], (2, 1)) * w).sum(), {"x": x * 0.1})


def test_bce(r):
    target = one_hot([0, 2, 1], 3)
    check(lambda t: bce_loss(ag.softmax(t["z"]), target), {"z": r.normal(size=(3, 3))})
    p = np.array([[0.9, 0.1]])
    assert float(bce_loss(p, [[1.0, 0.0]]).data) == pytest.approx(-np.log(0.9))
    assert np.isfinite(float(bce_loss(np.array([[1.0, 0.0]]), [[0.0, 1.0]]).data))
    with pytest.raises(ag.ShapeError):
        bce_loss(np.ones((2, 2)) * 0.5, np.ones((2, 3)))


def test_huber(r):
    pred = r.normal(scale=2.0, size=(6, 4))
    target = r.normal(size=(6, 4))
    err = pred - target
    pred[np.abs(np.abs(err) - 1.0) < 0.05] += 0.2  # stay off the seam
    check(lambda t: huber_loss(t["p"], target), {"p": pred})
    assert float(huber_loss(np.array([0.5]), [0.0]).data) == 0.125
    assert float(huber_loss(np.array([3.0]), [0.0]).data) == 2.5


def test_encoder_heads_and_q_gradients(r):
    spec = GridSpec(rows=5, cols=3, past=2, future=2)
    enc = init_encoder(spec, filters1=3, filters2=4, encoding=6, seed=0)
    heads = init_heads(encoding=6, hidden=5, seed=1)
    q = init_q(encoding=6, hidden=(5, 4), seed=2)
    grids = r.random((2,) + spec.shape)
    lat_t, lon_t = one_hot([1, 3], 5), one_hot([0, 2], 4)
    arrays = {**{f"e.{k}": v for k, v in enc.arrays.items()}, **{f"h.{k}": v for k, v in heads.arrays.items()},
              **{f"q.{k}": v for k, v in q.arrays.items()}}

    def f(t):
        sub = lambda p: {k[2:]: v for k, v in t.items() if k.startswith(p)}
        e = encoder_forward_t(sub("e."), grids)
        a, b = heads_forward_t(sub("h."), e)
        qs = q_forward_t(sub("q."), e)
        return bce_loss(a, lat_t) + bce_loss(b, lon_t) + huber_loss(qs["lat"], np.ones((2, 5))) \
            + huber_loss(qs["lon"], np.zeros((2, 4)))
    check(f, arrays)


def test_encoder_shapes():
    enc = init_encoder(seed=0)
    g = np.random.default_rng(0).random((13, 3, 60))
    assert encoder_forward(enc, g).shape == (256,)
    assert encoder_forward(enc, g[None].repeat(3, 0)).shape == (3, 256)
    with pytest.raises(ag.ShapeError):
        encoder_forward(enc, np.zeros((13, 3, 59)))
    assert set(q_values(init_q(), np.zeros((2, 256)))) == {"lat", "lon"}
    assert q_values(init_q(joint=True), np.zeros((1, 256)))["joint"].shape == (1, 20)


def test_adam_clip_and_descent():
    p = ParamSet({"w": np.array([3.0, -4.0])})
    opt = Adam(p, lr=0.1, clip_norm=1.0)
    norm = opt.step({"w": np.array([30.0, -40.0])})
    assert norm == 50.0
    assert np.allclose(p["w"], [2.9, -3.9])  # first Adam step moves each coordinate by lr
    for _ in range(300):
        t = p.tensors()
        (t["w"] * t["w"]).sum().backward()
        opt.step(collect_grads(t))
    assert np.abs(p["w"]).max() < 0.05
