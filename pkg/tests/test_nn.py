import math
import os

import numpy as np
import pytest

from decay_pruning import (
    BadGroup,
    Layer,
    Network,
    Rng,
    SgdOptimizer,
    ShapeMismatch,
    backward,
    forward,
    group_view,
    load_checkpoint,
    read_group,
    save_checkpoint,
    sgd_pre_update,
    write_group,
)


def small_net(seed=0, widths=(2, 4, 2)):
    return Network.init(Rng(seed), list(widths))


# ---------------------------------------------------------------- forward

def test_forward_identity_layer():
    net = Network([Layer(np.eye(2), np.zeros(2), "identity")])
    out = forward(net, [[1.0, 2.0]])
    assert np.array_equal(out, [[1.0, 2.0]])


def test_forward_zero_net_softmax_symmetry():
    net = Network([
        Layer(np.zeros((4, 2)), np.zeros(4), "relu"),
        Layer(np.zeros((3, 4)), np.zeros(3), "softmax"),
    ])
    out = forward(net, [[0.3, -1.0], [2.0, 5.0]])
    assert np.allclose(out, 1.0 / 3.0, rtol=0, atol=1e-15)


def _ref_forward(net, x_row):
    # independent scalar-loop oracle, no numpy matmul
    a = [float(v) for v in x_row]
    for layer in net.layers:
        out = []
        for r in range(layer.w.shape[0]):
            z = float(layer.b[r])
            for c in range(layer.w.shape[1]):
                z += float(layer.w[r, c]) * a[c]
            out.append(z)
        if layer.act == "relu":
            a = [max(0.0, z) for z in out]
        elif layer.act == "softmax":
            m = max(out)
            exps = [math.exp(z - m) for z in out]
            s = sum(exps)
            a = [e / s for e in exps]
        else:
            a = out
    return a


def test_forward_matches_scalar_oracle():
    net = small_net(seed=5)
    batch = Rng(9).normal(6 * 2).reshape(6, 2)
    got = forward(net, batch)
    for i in range(6):
        ref = _ref_forward(net, batch[i])
        assert np.allclose(got[i], ref, rtol=1e-12, atol=1e-15)


def test_forward_softmax_rows_sum_to_one():
    net = small_net(seed=1, widths=(3, 8, 5))
    out = forward(net, Rng(2).normal(12 * 3).reshape(12, 3))
    assert np.all(np.abs(out.sum(axis=1) - 1.0) <= 1e-9)


def test_forward_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        forward(small_net(), [[1.0, 2.0, 3.0]])


# ---------------------------------------------------------------- backward

def _fd_grads(net, batch, labels, h=1e-5):
    """Central finite differences on every coordinate."""
    grads = []
    for layer in net.layers:
        gw = np.zeros_like(layer.w)
        for idx in np.ndindex(*layer.w.shape):
            orig = layer.w[idx]
            layer.w[idx] = orig + h
            up = backward(net, batch, labels)[0]
            layer.w[idx] = orig - h
            down = backward(net, batch, labels)[0]
            layer.w[idx] = orig
            gw[idx] = (up - down) / (2 * h)
        gb = np.zeros_like(layer.b)
        for i in range(layer.b.shape[0]):
            orig = layer.b[i]
            layer.b[i] = orig + h
            up = backward(net, batch, labels)[0]
            layer.b[i] = orig - h
            down = backward(net, batch, labels)[0]
            layer.b[i] = orig
            gb[i] = (up - down) / (2 * h)
        grads.append((gw, gb))
    return grads


def test_backward_matches_finite_differences():
    rng = Rng(21)
    net = small_net(seed=3)
    batch = rng.normal(5 * 2).reshape(5, 2)
    labels = rng.integers(0, 2, 5)
    _, grads = backward(net, batch, labels)
    fd = _fd_grads(net, batch, labels)
    for g, (fw, fb) in zip(grads.layers, fd):
        assert np.max(np.abs(g.w - fw)) <= 1e-5
        assert np.max(np.abs(g.b - fb)) <= 1e-5


def test_backward_zero_net_closed_form():
    # zero weights, zero input: bias grads are softmax(0) - one_hot, batch mean
    net = Network([
        Layer(np.zeros((4, 3)), np.zeros(4), "relu"),
        Layer(np.zeros((3, 4)), np.zeros(3), "softmax"),
    ])
    labels = np.array([0, 2, 2, 1])
    _, grads = backward(net, np.zeros((4, 3)), labels)
    onehot = np.zeros((4, 3))
    onehot[np.arange(4), labels] = 1.0
    expect = (np.full((4, 3), 1.0 / 3.0) - onehot).mean(axis=0)
    assert np.allclose(grads.layers[1].b, expect, atol=1e-15)
    assert np.allclose(grads.layers[1].w, 0.0)


def test_backward_duplicated_batch_invariance():
    rng = Rng(4)
    net = small_net(seed=8)
    batch = rng.normal(3 * 2).reshape(3, 2)
    labels = np.array([0, 1, 1])
    loss1, g1 = backward(net, batch, labels)
    loss2, g2 = backward(net, np.tile(batch, (2, 1)), np.tile(labels, 2))
    assert loss1 == pytest.approx(loss2, rel=1e-14)
    for a, b in zip(g1.layers, g2.layers):
        assert np.allclose(a.w, b.w, rtol=1e-13, atol=1e-16)
        assert np.allclose(a.b, b.b, rtol=1e-13, atol=1e-16)


def test_backward_bad_labels():
    with pytest.raises(ShapeMismatch):
        backward(small_net(), [[0.0, 0.0]], [7])


# ---------------------------------------------------------------- sgd

def test_pre_update_zero_gradient():
    out = sgd_pre_update([1.0, 0.0], [0.0, 0.0], lr=0.1, l2_coeff=0.0)
    assert np.array_equal(out, [1.0, 0.0])


def test_pre_update_radial_outward():
    out = sgd_pre_update([3.0, 4.0], [-0.6, -0.8], lr=1.0, l2_coeff=0.0)
    assert np.allclose(out, [3.6, 4.8], rtol=1e-15)


def test_pre_update_with_penalty():
    out = sgd_pre_update([1.0, 1.0], [1.0, 1.0], lr=0.5, l2_coeff=0.2)
    assert np.allclose(out, [0.4, 0.4], rtol=1e-15)


def test_pre_update_does_not_mutate():
    x = np.array([1.0, 2.0])
    g = np.array([0.5, 0.5])
    sgd_pre_update(x, g, lr=0.1)
    assert np.array_equal(x, [1.0, 2.0]) and np.array_equal(g, [0.5, 0.5])


def test_optimizer_matches_pre_update_per_group():
    net = small_net(seed=2)
    rng = Rng(6)
    batch = rng.normal(4 * 2).reshape(4, 2)
    _, grads = backward(net, batch, rng.integers(0, 2, 4))
    opt = SgdOptimizer(lr=0.05, l2_coeff=0.01)
    pre = opt.pre_update(net, grads)
    for g in group_view(net):
        from decay_pruning import ParamSet
        want = sgd_pre_update(read_group(net, g), read_group(grads, g),
                              lr=0.05, l2_coeff=0.01)
        assert np.allclose(read_group(ParamSet(pre), g), want, rtol=1e-15, atol=0.0)


def test_optimizer_momentum_accumulates():
    net = Network([Layer(np.array([[1.0]]), np.zeros(1), "identity"),
                   Layer(np.array([[1.0]]), np.zeros(1), "identity")])
    from decay_pruning import GradSnapshot
    g = GradSnapshot([Layer(np.array([[1.0]]), np.zeros(1), "identity"),
                      Layer(np.array([[0.0]]), np.zeros(1), "identity")])
    opt = SgdOptimizer(lr=1.0, momentum=0.5)
    first = opt.pre_update(net, g)[0][0]
    assert first == pytest.approx(0.0)  # 1 - 1*1
    second = opt.pre_update(net, g)[0][0]
    assert second == pytest.approx(1.0 - 1.5)  # velocity 0.5*1 + 1


# ---------------------------------------------------------------- groups

def test_group_view_counts():
    assert len(group_view(small_net())) == 4
    assert all(g.layer_id == 0 for g in group_view(small_net()))
    assert len(group_view(small_net(widths=(2, 4, 4, 2)))) == 8


def test_group_row_bias_partition():
    # every hidden row/bias coordinate appears in exactly one group, and
    # the union of all group coords plus the output bias covers everything
    net = small_net(widths=(2, 4, 4, 2))
    groups = group_view(net)
    own_seen = set()
    all_seen = set()
    for g in groups:
        coords = g.coords()
        own = coords[: g.in_dim + 1]
        for c in own:
            assert c not in own_seen
            own_seen.add(c)
        all_seen.update(coords)
    n_layers = len(net.layers)
    expected_own = set()
    for li in range(n_layers - 1):
        out, inn = net.layers[li].w.shape
        for r in range(out):
            expected_own.update(("w", li, r, c) for c in range(inn))
            expected_own.add(("b", li, r))
    assert own_seen == expected_own
    full = set(expected_own)
    out_li = n_layers - 1
    out_rows, out_cols = net.layers[out_li].w.shape
    full.update(("w", out_li, r, c) for r in range(out_rows) for c in range(out_cols))
    ungrouped = {("b", out_li, r) for r in range(out_rows)}
    assert all_seen == full
    assert all_seen.isdisjoint(ungrouped)


def test_read_write_round_trip():
    net = small_net(seed=4, widths=(3, 5, 4, 2))
    ref = forward(net, Rng(1).normal(4 * 3).reshape(4, 3))
    for g in group_view(net):
        vec = read_group(net, g)
        assert vec.shape == (g.size,)
        write_group(net, g, vec)
    out = forward(net, Rng(1).normal(4 * 3).reshape(4, 3))
    assert np.array_equal(ref, out)


def test_write_zeros_then_read():
    net = small_net(seed=4)
    g = group_view(net)[1]
    write_group(net, g, np.zeros(g.size))
    assert np.array_equal(read_group(net, g), np.zeros(g.size))


def test_zeroed_group_is_inert():
    net = small_net(seed=10, widths=(3, 6, 4, 2))
    batch = Rng(3).normal(8 * 3).reshape(8, 3)
    g = group_view(net)[2]
    write_group(net, g, np.zeros(g.size))
    ref = forward(net, batch)
    # perturb the zeroed channel's incoming weights: function must not move
    net.layers[g.layer_id].w[g.channel_id, :] = Rng(99).normal(g.in_dim, 0.0, 10.0)
    assert np.array_equal(forward(net, batch), ref)


def test_bad_group_rejected():
    net = small_net()
    g = group_view(small_net(widths=(2, 4, 4, 2)))[7]
    with pytest.raises(BadGroup):
        read_group(net, g)
    with pytest.raises(BadGroup):
        write_group(net, group_view(net)[0], np.zeros(3))


# ---------------------------------------------------------------- checkpoint

def test_checkpoint_round_trip(tmp_path):
    net = small_net(seed=12, widths=(4, 7, 3))
    path = tmp_path / "ckpt.json"
    save_checkpoint(net, path)
    back = load_checkpoint(path)
    for a, b in zip(net.layers, back.layers):
        assert np.array_equal(a.w, b.w)
        assert np.array_equal(a.b, b.b)
        assert a.act == b.act


def test_checkpoint_format_fields(tmp_path):
    import json

    net = small_net(seed=1)
    path = tmp_path / "ckpt.json"
    save_checkpoint(net, path)
    doc = json.loads(path.read_text())
    assert doc["format_version"] == 1
    layer = doc["layers"][0]
    assert layer["rows"] == 4 and layer["cols"] == 2
    assert len(layer["weights"]) == 8 and len(layer["bias"]) == 4
    assert layer["act"] == "relu"
    assert doc["layers"][1]["act"] == "softmax"
