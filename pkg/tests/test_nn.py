import json

import numpy as np
import pytest

from gradlab.activations import ActivationKind, Constant, GaafSpec, GaussianBump, ShiftedSigmoid
from gradlab.errors import DomainError, FormatError, ShapeError, StateError
from gradlab.nn import (
    ActivationLayer,
    BatchNormLayer,
    DenseLayer,
    DropoutLayer,
    Mode,
    Network,
    build_mlp,
    load_checkpoint,
    save_checkpoint,
)
from gradlab.numcore import RngStream
from gradlab.train import softmax_cross_entropy

TANH = ActivationKind.TANH


def make_dense(seed, rows, cols):
    rng = RngStream(seed)
    return DenseLayer(rng.normal(rows, cols) * 0.5, rng.normal(1, cols).ravel() * 0.1)


# -- dense ----------------------------------------------------------------------


def test_dense_forward_is_affine():
    layer = make_dense(0, 4, 3)
    x = RngStream(1).normal(5, 4)
    z = layer.forward(x, Mode.TRAIN)
    want = np.einsum("ni,ij->nj", x, layer.w) + layer.b
    assert np.allclose(z, want, rtol=0, atol=1e-12)


def test_dense_gradients_match_finite_differences(fd_param_grad, rel_error):
    layer = make_dense(2, 4, 3)
    x = RngStream(3).normal(5, 4)
    c = RngStream(4).normal(5, 3)  # fixed downstream weighting

    def loss():
        return float((layer.forward(x, Mode.TRAIN) * c).sum())

    loss()
    layer.backward(c)
    assert rel_error(layer.grad_w, fd_param_grad(loss, layer.w)) < 1e-7
    assert rel_error(layer.grad_b, fd_param_grad(loss, layer.b)) < 1e-7


def test_dense_input_gradient_matches_finite_differences(fd_param_grad, rel_error):
    layer = make_dense(5, 4, 3)
    x = RngStream(6).normal(2, 4)
    c = RngStream(7).normal(2, 3)

    def loss():
        return float((layer.forward(x, Mode.TRAIN) * c).sum())

    loss()
    grad_x = layer.backward(c)
    assert rel_error(grad_x, fd_param_grad(loss, x)) < 1e-7


def test_dense_accumulates_gradients_until_cleared():
    layer = make_dense(8, 3, 2)
    x = RngStream(9).normal(4, 3)
    g = RngStream(10).normal(4, 2)
    layer.forward(x, Mode.TRAIN)
    layer.backward(g)
    once = layer.grad_w.copy()
    layer.forward(x, Mode.TRAIN)
    layer.backward(g)
    assert np.allclose(layer.grad_w, 2 * once, rtol=0, atol=1e-12)


def test_dense_cache_state_machine():
    layer = make_dense(11, 3, 2)
    x = np.ones((2, 3))
    g = np.ones((2, 2))
    with pytest.raises(StateError):
        layer.backward(g)
    layer.forward(x, Mode.TRAIN)
    layer.backward(g)
    with pytest.raises(StateError):  # cache consumed
        layer.backward(g)
    layer.forward(x, Mode.EVAL)
    with pytest.raises(StateError):  # eval forwards never feed a backward
        layer.backward(g)


def test_dense_shape_validation():
    with pytest.raises(ShapeError):
        DenseLayer(np.zeros(3))
    with pytest.raises(ShapeError):
        DenseLayer(np.zeros((3, 2)), np.zeros(5))
    layer = make_dense(12, 3, 2)
    with pytest.raises(ShapeError):
        layer.forward(np.ones((2, 4)), Mode.TRAIN)


# -- dropout ----------------------------------------------------------------------


def test_dropout_train_masks_are_binary_and_shared_across_rows():
    layer = DropoutLayer(0.4, RngStream(0))
    x = np.ones((8, 5000))
    out = layer.forward(x, Mode.TRAIN)
    assert set(np.unique(out)) <= {0.0, 1.0}
    assert all(np.array_equal(out[0], out[r]) for r in range(1, 8))
    assert abs(out[0].mean() - 0.6) < 0.03


def test_dropout_per_sample_rows_differ():
    layer = DropoutLayer(0.5, RngStream(1), per_sample=True)
    out = layer.forward(np.ones((4, 2000)), Mode.TRAIN)
    assert not np.array_equal(out[0], out[1])


def test_dropout_eval_rescales_without_consuming_draws():
    rng = RngStream(2).split("dropout")
    layer = DropoutLayer(0.25, rng)
    x = RngStream(3).normal(3, 7)
    out = layer.forward(x, Mode.EVAL)
    assert np.array_equal(out, x * 0.75)
    assert layer.mask is None
    # the layer's stream is untouched by eval forwards
    assert np.array_equal(rng.uniform(4), RngStream(2).split("dropout").uniform(4))


def test_dropout_backward_routes_through_kept_nodes_only(fd_param_grad, rel_error):
    layer = DropoutLayer(0.5, RngStream(4))
    layer.freeze_mask = True
    x = RngStream(5).normal(3, 6)
    c = RngStream(6).normal(3, 6)
    layer.forward(x, Mode.TRAIN)  # fixes the mask while frozen

    def loss():
        return float((layer.forward(x, Mode.TRAIN) * c).sum())

    loss()
    grad_x = layer.backward(c)
    assert np.array_equal(grad_x, c * layer.mask)
    assert rel_error(grad_x, fd_param_grad(loss, x)) < 1e-9


def test_dropout_frozen_mask_is_reused_then_released():
    layer = DropoutLayer(0.5, RngStream(7))
    layer.freeze_mask = True
    x = np.ones((2, 1000))
    first = layer.forward(x, Mode.TRAIN)
    assert np.array_equal(layer.forward(x, Mode.TRAIN), first)
    layer.freeze_mask = False
    assert not np.array_equal(layer.forward(x, Mode.TRAIN), first)


def test_dropout_state_and_domain_errors():
    with pytest.raises(DomainError):
        DropoutLayer(1.5)
    with pytest.raises(StateError):  # no rng attached
        DropoutLayer(0.5).forward(np.ones((1, 4)), Mode.TRAIN)
    layer = DropoutLayer(0.5, RngStream(8))
    with pytest.raises(StateError):  # no mask cached
        layer.backward(np.ones((1, 4)))
    assert np.array_equal(
        DropoutLayer(0.0, RngStream(9)).forward(np.ones((2, 50)), Mode.TRAIN), np.ones((2, 50))
    )


# -- batchnorm ---------------------------------------------------------------------


def test_batchnorm_train_normalizes_columns():
    layer = BatchNormLayer(4)
    x = RngStream(10).normal(64, 4) * 3.0 + 7.0
    out = layer.forward(x, Mode.TRAIN)
    assert np.abs(out.mean(axis=0)).max() < 1e-12
    assert np.abs(out.var(axis=0) - 1.0).max() < 1e-4  # epsilon-deflated


def test_batchnorm_running_statistics_recurrence():
    layer = BatchNormLayer(3, momentum=0.9)
    b1 = RngStream(11).normal(16, 3) + 2.0
    b2 = RngStream(12).normal(16, 3) - 1.0
    layer.forward(b1, Mode.TRAIN)
    layer.forward(b2, Mode.TRAIN)
    mean = np.zeros((1, 3))
    var = np.ones((1, 3))
    for b in (b1, b2):
        mean = 0.9 * mean + 0.1 * b.mean(axis=0, keepdims=True)
        var = 0.9 * var + 0.1 * b.var(axis=0, keepdims=True)
    assert np.allclose(layer.running_mean, mean, rtol=0, atol=1e-14)
    assert np.allclose(layer.running_var, var, rtol=0, atol=1e-14)


def test_batchnorm_eval_uses_running_statistics():
    layer = BatchNormLayer(2)
    layer.running_mean = np.array([[1.0, -2.0]])
    layer.running_var = np.array([[4.0, 0.25]])
    layer.gamma = np.array([[2.0, 3.0]])
    layer.beta = np.array([[0.5, -0.5]])
    x = np.array([[3.0, -1.0]])
    want = 2.0 * (3.0 - 1.0) / np.sqrt(4.0 + 1e-5) + 0.5, 3.0 * (-1.0 + 2.0) / np.sqrt(0.25 + 1e-5) - 0.5
    out = layer.forward(x, Mode.EVAL)
    assert np.allclose(out, np.array([want]), rtol=0, atol=1e-12)


def test_batchnorm_train_backward_matches_finite_differences(fd_param_grad, rel_error):
    layer = BatchNormLayer(4)
    layer.gamma = RngStream(13).normal(1, 4) * 0.5 + 1.0
    layer.beta = RngStream(14).normal(1, 4) * 0.2
    x = RngStream(15).normal(6, 4) * 2.0
    c = RngStream(16).normal(6, 4)

    def loss():
        return float((layer.forward(x, Mode.TRAIN) * c).sum())

    loss()
    grad_x = layer.backward(c)
    assert rel_error(grad_x, fd_param_grad(loss, x)) < 1e-6
    layer.grad_gamma[:] = 0
    layer.grad_beta[:] = 0
    loss()
    layer.backward(c)
    assert rel_error(layer.grad_gamma, fd_param_grad(loss, layer.gamma)) < 1e-6
    assert rel_error(layer.grad_beta, fd_param_grad(loss, layer.beta)) < 1e-6


def test_batchnorm_eval_backward_treats_statistics_as_frozen(fd_param_grad, rel_error):
    layer = BatchNormLayer(3)
    layer.running_mean = np.array([[0.3, -0.7, 1.1]])
    layer.running_var = np.array([[1.5, 0.8, 2.2]])
    layer.gamma = np.array([[1.2, 0.7, -0.4]])
    x = RngStream(17).normal(5, 3)
    c = RngStream(18).normal(5, 3)

    def loss():
        return float((layer.forward(x, Mode.EVAL) * c).sum())

    loss()
    grad_x = layer.backward(c)
    # eval transform is affine per column: gradient is exactly c*gamma/std
    assert np.allclose(grad_x, c * layer.gamma / np.sqrt(layer.running_var + 1e-5), atol=1e-14)
    assert rel_error(grad_x, fd_param_grad(loss, x)) < 1e-8


def test_batchnorm_validation():
    with pytest.raises(DomainError):
        BatchNormLayer(3, epsilon=0.0)
    with pytest.raises(DomainError):
        BatchNormLayer(3, momentum=1.5)
    layer = BatchNormLayer(3)
    with pytest.raises(DomainError):  # batch statistics need >= 2 rows
        layer.forward(np.ones((1, 3)), Mode.TRAIN)
    layer.forward(np.ones((1, 3)), Mode.EVAL)
    with pytest.raises(StateError):
        BatchNormLayer(3).backward(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        layer.forward(np.ones((2, 4)), Mode.TRAIN)


# -- activation layer ---------------------------------------------------------------


def test_activation_layer_tanh_backward():
    layer = ActivationLayer(TANH)
    x = RngStream(19).normal(3, 5)
    g = RngStream(20).normal(3, 5)
    out = layer.forward(x, Mode.TRAIN)
    assert np.array_equal(out, np.tanh(x))
    assert np.allclose(layer.backward(g), g * (1 - np.tanh(x) ** 2), rtol=0, atol=1e-15)


def test_activation_layer_gaaf_dispatch():
    spec = GaafSpec(TANH, k=10000.0, shape=GaussianBump(1.5))
    layer = ActivationLayer(spec)
    x = RngStream(21).normal(2, 6)
    out = layer.forward(x, Mode.TRAIN)
    saw = (x * spec.k - np.floor(x * spec.k) - 0.5) / spec.k
    bump = np.exp(-(x**2) / (2 * 1.5**2))
    assert np.allclose(out, np.tanh(x) + saw * bump, rtol=0, atol=1e-15)
    g = np.ones_like(x)
    assert np.allclose(layer.backward(g), (1 - np.tanh(x) ** 2) + bump, rtol=0, atol=1e-15)


def test_activation_layer_state_errors():
    layer = ActivationLayer(TANH)
    with pytest.raises(StateError):
        layer.backward(np.ones((1, 2)))
    layer.forward(np.ones((1, 2)), Mode.EVAL)
    with pytest.raises(StateError):
        layer.backward(np.ones((1, 2)))


# -- network ------------------------------------------------------------------------


def toy_net(seed=30, dropout_p=0.0, batchnorm=False, activation=TANH):
    return build_mlp(
        [4, 6, 3],
        activation,
        RngStream(seed),
        dropout_p=dropout_p,
        batchnorm=batchnorm,
    )


def test_network_forward_composes_layers():
    net = toy_net()
    x = RngStream(22).normal(5, 4)
    d1, d2 = (layer for _, layer in net.dense_layers())
    want = np.tanh(x @ d1.w + d1.b) @ d2.w + d2.b
    assert np.allclose(net.forward(x, Mode.EVAL), want, rtol=0, atol=1e-12)


def test_network_input_gradient_matches_finite_differences(fd_param_grad, rel_error):
    net = toy_net()
    x = RngStream(23).normal(3, 4)
    y = np.array([0, 2, 1])

    def loss():
        return softmax_cross_entropy(net.forward(x, Mode.TRAIN), y)[0]

    _, grad = softmax_cross_entropy(net.forward(x, Mode.TRAIN), y)
    grad_x = net.backward(grad)
    assert rel_error(grad_x, fd_param_grad(loss, x)) < 1e-6


def test_network_full_gradient_check_all_layer_kinds(fd_param_grad, rel_error):
    # dense + batchnorm + tanh + frozen dropout + dense, against softmax-CE
    net = toy_net(seed=31, dropout_p=0.4, batchnorm=True)
    for _, drop in net.dropout_layers():
        drop.freeze_mask = True
    x = RngStream(24).normal(6, 4)
    y = np.array([0, 1, 2, 0, 1, 2])
    net.forward(x, Mode.TRAIN)  # fix the frozen masks

    def loss():
        return softmax_cross_entropy(net.forward(x, Mode.TRAIN), y)[0]

    net.zero_grads()
    _, grad = softmax_cross_entropy(net.forward(x, Mode.TRAIN), y)
    net.backward(grad)
    for param, analytic in zip(net.parameters(), net.gradients()):
        assert rel_error(analytic, fd_param_grad(loss, param)) < 1e-4


def test_network_error_names_the_layer():
    net = Network([DenseLayer(np.ones((3, 2)))])
    with pytest.raises(ShapeError, match=r"layer 0 \(DenseLayer\)"):
        net.forward(np.ones((1, 5)), Mode.EVAL)


def test_network_zero_grads_and_alignment():
    net = toy_net()
    x = RngStream(25).normal(4, 4)
    _, grad = softmax_cross_entropy(net.forward(x, Mode.TRAIN), np.array([0, 1, 2, 0]))
    net.backward(grad)
    assert any(np.abs(g).max() > 0 for g in net.gradients())
    net.zero_grads()
    assert all(np.abs(g).max() == 0 for g in net.gradients())
    assert [p.shape for p in net.parameters()] == [g.shape for g in net.gradients()]


def test_forward_collect_nets_returns_dense_outputs():
    net = toy_net(dropout_p=0.5)
    net.attach_dropout_rng(RngStream(40))
    x = RngStream(26).normal(3, 4)
    out, nets = net.forward_collect_nets(x, Mode.EVAL)
    assert len(nets) == 2
    d1, _ = net.dense_layers()[0]
    first = x @ net.layers[d1].w + net.layers[d1].b
    assert np.allclose(nets[0], first, rtol=0, atol=1e-12)
    assert np.array_equal(nets[-1], out)


def test_mode_switch_is_explicit():
    net = toy_net(dropout_p=0.3)
    x = np.ones((2, 4))
    eval_out = net.forward(x, Mode.EVAL)
    assert np.array_equal(eval_out, net.forward(x, Mode.EVAL))  # eval is pure
    train_out = net.forward(x, Mode.TRAIN)
    assert not np.array_equal(eval_out, train_out)


# -- build_mlp ------------------------------------------------------------------------


def test_build_mlp_layer_stacking():
    kinds = [type(l).__name__ for l in toy_net().layers]
    assert kinds == ["DenseLayer", "ActivationLayer", "DenseLayer"]
    kinds = [type(l).__name__ for l in toy_net(dropout_p=0.5, batchnorm=True).layers]
    assert kinds == [
        "DenseLayer",
        "BatchNormLayer",
        "ActivationLayer",
        "DropoutLayer",
        "DenseLayer",
    ]
    deep = build_mlp([8, 8, 8, 8, 2], TANH, RngStream(0), dropout_p=0.5)
    assert len(deep.dropout_layers()) == 3  # one per hidden activation
    assert isinstance(deep.layers[-1], DenseLayer)  # logits come out raw


def test_build_mlp_variants_share_initial_weights():
    w_base = toy_net(seed=50).dense_layers()[0][1].w
    w_drop = toy_net(seed=50, dropout_p=0.5).dense_layers()[0][1].w
    w_gaaf = toy_net(seed=50, activation=GaafSpec(TANH)).dense_layers()[0][1].w
    assert np.array_equal(w_base, w_drop)
    assert np.array_equal(w_base, w_gaaf)
    assert not np.array_equal(w_base, toy_net(seed=51).dense_layers()[0][1].w)


def test_build_mlp_init_scale():
    net = build_mlp([400, 300, 10], TANH, RngStream(1))
    assert abs(net.dense_layers()[0][1].w.std() - 1.0 / 20.0) < 0.005
    net = build_mlp([400, 300, 10], TANH, RngStream(1), init_scale=0.3)
    assert abs(net.dense_layers()[0][1].w.std() - 0.3) < 0.03
    with pytest.raises(DomainError):
        build_mlp([4], TANH, RngStream(0))


def test_attach_dropout_rng_is_deterministic():
    net = toy_net(dropout_p=0.5)
    x = np.ones((2, 4))
    net.attach_dropout_rng(RngStream(60))
    a = net.forward(x, Mode.TRAIN)
    net.attach_dropout_rng(RngStream(60))
    b = net.forward(x, Mode.TRAIN)
    assert np.array_equal(a, b)


# -- checkpoints ------------------------------------------------------------------------


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    net = build_mlp(
        [5, 7, 4],
        GaafSpec(ActivationKind.SIGMOID, k=2500.0, shape=ShiftedSigmoid(0.3, 1.7)),
        RngStream(70),
        dropout_p=0.35,
        dropout_per_sample=True,
        batchnorm=True,
    )
    # give running statistics non-default values worth preserving
    net.forward(RngStream(71).normal(16, 5), Mode.TRAIN)
    path = tmp_path / "model.json"
    save_checkpoint(net, path)
    loaded = load_checkpoint(path)
    assert [type(l).__name__ for l in loaded.layers] == [type(l).__name__ for l in net.layers]
    for a, b in zip(net.parameters(), loaded.parameters()):
        assert np.array_equal(a, b)
    bn_a = next(l for l in net.layers if isinstance(l, BatchNormLayer))
    bn_b = next(l for l in loaded.layers if isinstance(l, BatchNormLayer))
    assert np.array_equal(bn_a.running_mean, bn_b.running_mean)
    assert np.array_equal(bn_a.running_var, bn_b.running_var)
    drop = next(l for l in loaded.layers if isinstance(l, DropoutLayer))
    assert drop.p_drop == 0.35 and drop.per_sample
    act = next(l for l in loaded.layers if isinstance(l, ActivationLayer))
    assert act.fn == GaafSpec(ActivationKind.SIGMOID, k=2500.0, shape=ShiftedSigmoid(0.3, 1.7))
    x = RngStream(72).normal(3, 5)
    assert np.array_equal(net.forward(x, Mode.EVAL), loaded.forward(x, Mode.EVAL))


def test_checkpoint_dropout_needs_rng_for_training(tmp_path):
    net = build_mlp([3, 4, 2], TANH, RngStream(73), dropout_p=0.5)
    path = tmp_path / "model.json"
    save_checkpoint(net, path)
    loaded = load_checkpoint(path)
    with pytest.raises(StateError, match="layer 2"):
        loaded.forward(np.ones((2, 3)), Mode.TRAIN)
    loaded.forward(np.ones((2, 3)), Mode.EVAL)  # eval needs no stream
    reloaded = load_checkpoint(path, dropout_rng=RngStream(74))
    reloaded.forward(np.ones((2, 3)), Mode.TRAIN)


def test_checkpoint_format_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(FormatError, match="not valid JSON"):
        load_checkpoint(bad)
    bad.write_text(json.dumps({"format": "something-else", "version": 1, "layers": []}))
    with pytest.raises(FormatError, match="not a checkpoint"):
        load_checkpoint(bad)
    bad.write_text(json.dumps({"format": "gradlab-checkpoint", "version": 99, "layers": []}))
    with pytest.raises(FormatError, match="version"):
        load_checkpoint(bad)
