import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from clnet import autodiff as ad
from clnet.autodiff import ShapeError, Tensor
from clnet.blocks import (
    Conv,
    DualPathBlock,
    ForgedComplexInput,
    ModelParams,
    ParamSpec,
    SEBlock,
    SpatialAttention,
    crblock,
)
from oracles import channel_pool_loops, conv2d_loops, fd_gradient_error, global_avg_pool_loops, sigmoid_ref


def _params(layer, seed=0):
    return ModelParams.initialize(layer.param_specs(), np.random.default_rng(seed), np.float64)


def _set(p, name, value):
    p[name].data = np.broadcast_to(np.asarray(value, dtype=np.float64), p[name].shape).copy()


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# --------------------------------------------------------------------------- params


def test_model_params_unique_names_and_leaves():
    p = ModelParams.initialize([ParamSpec("a", (2, 3), 3), ParamSpec("b", (2,), 0)], np.random.default_rng(0))
    assert p.names() == ["a", "b"]
    assert all(t.requires_grad for t in p.tensors())
    assert not p["b"].data.any()
    assert np.all(np.abs(p["a"].data) <= np.sqrt(6 / 3))
    with pytest.raises(ValueError, match="duplicate"):
        p.add("a", Tensor(np.zeros(1)))


# --------------------------------------------------------------------------- forged input


def test_forged_filters_extract_planes(rng):
    layer = ForgedComplexInput("f", channels=2)
    p = _params(layer)
    _set(p, "f.weight", np.array([[1.0, 0.0], [0.0, 1.0]]).reshape(2, 2, 1, 1))
    _set(p, "f.bias", 0.0)
    x = rng.normal(size=(2, 4, 4))
    assert_array_equal(layer(p, T(x)).data, x)


def test_forged_equal_planes_double(rng):
    layer = ForgedComplexInput("f", channels=1)
    p = _params(layer)
    _set(p, "f.weight", np.ones((1, 2, 1, 1)))
    _set(p, "f.bias", 0.0)
    re = rng.normal(size=(4, 4))
    assert_allclose(layer(p, T(np.stack([re, re]))).data[0], 2 * re)


def test_forged_requires_two_planes():
    layer = ForgedComplexInput("f", channels=4)
    with pytest.raises(ShapeError, match="2 planes"):
        layer(_params(layer), T(np.zeros((3, 4, 4))))


def test_forged_locality_exhaustive(rng):
    layer = ForgedComplexInput("f", channels=32)
    p = _params(layer, seed=3)
    x = rng.normal(size=(2, 4, 4))
    base = layer(p, T(x)).data
    for k in range(2):
        for m in range(4):
            for n in range(4):
                xp = x.copy()
                xp[k, m, n] += 0.5
                diff = layer(p, T(xp)).data != base
                assert diff.sum() == 32
                assert diff[:, m, n].all()


# --------------------------------------------------------------------------- SE block


@pytest.mark.parametrize("gate", ["sigmoid", "hard_sigmoid"])
def test_se_zero_weights_halve_input(rng, gate):
    block = SEBlock("se", 8, gate)
    p = _params(block)
    _set(p, "se.W1", 0.0)
    _set(p, "se.W2", 0.0)
    x = rng.normal(size=(8, 5, 5))
    assert_allclose(block(p, T(x)).data, 0.5 * x)


def test_se_reduction_ratio_two():
    block = SEBlock("se", 32)
    shapes = {s.name: s.shape for s in block.param_specs()}
    assert shapes == {"se.W1": (16, 32), "se.W2": (32, 16)}


def test_se_matches_composed_primitives(rng):
    block = SEBlock("se", 6, "sigmoid")
    p = _params(block, seed=4)
    x = rng.normal(size=(6, 4, 4))
    z = global_avg_pool_loops(x)
    s = sigmoid_ref(p["se.W2"].data @ np.maximum(p["se.W1"].data @ z, 0))
    assert_allclose(block(p, T(x)).data, x * s[:, None, None], atol=1e-12)


def test_se_channel_mismatch():
    block = SEBlock("se", 8)
    with pytest.raises(ShapeError):
        block(_params(block), T(np.zeros((4, 3, 3))))


def test_se_rejects_unknown_gate():
    with pytest.raises(ValueError):
        SEBlock("se", 8, "tanh")


# --------------------------------------------------------------------------- spatial attention


def test_sa_zero_conv_sigmoid_halves(rng):
    block = SpatialAttention("sa", 7, "sigmoid")
    p = _params(block)
    _set(p, "sa.weight", 0.0)
    x = rng.normal(size=(4, 6, 6))
    assert_allclose(block(p, T(x)).data, 0.5 * x)


def test_sa_saturated_mask_is_identity(rng):
    block = SpatialAttention("sa", 7, "hard_sigmoid")
    p = _params(block)
    _set(p, "sa.weight", 0.0)
    _set(p, "sa.bias", 10.0)
    x = rng.normal(size=(4, 6, 6))
    assert_array_equal(block(p, T(x)).data, x)


def test_sa_matches_composed_primitives(rng):
    block = SpatialAttention("sa", 3, "sigmoid")
    p = _params(block, seed=2)
    x = rng.normal(size=(5, 6, 6))
    desc = np.concatenate([channel_pool_loops(x, "avg"), channel_pool_loops(x, "max")])
    mask = sigmoid_ref(conv2d_loops(desc, p["sa.weight"].data, p["sa.bias"].data))
    assert_allclose(block(p, T(x)).data, x * mask, atol=1e-12)


@pytest.mark.parametrize("gate", ["sigmoid", "hard_sigmoid"])
def test_attention_is_non_expansive(gate):
    se, sa = SEBlock("se", 8, gate), SpatialAttention("sa", 7, gate)
    for seed in range(100):
        g = np.random.default_rng(seed)
        pse, psa = _params(se, seed), _params(sa, seed)
        # larger weights push gates into saturation too
        for t in list(pse.tensors()) + list(psa.tensors()):
            t.data = t.data * g.uniform(0.5, 20)
        x = T(g.normal(size=(8, 6, 6)) * g.uniform(0.1, 10))
        s = se.attention(pse, x).data
        m = sa.mask(psa, x).data
        assert s.min() >= 0 and s.max() <= 1
        assert m.min() >= 0 and m.max() <= 1
        assert np.all(np.abs(se(pse, x).data) <= np.abs(x.data))
        assert np.all(np.abs(sa(psa, x).data) <= np.abs(x.data))


def test_hard_and_soft_sigmoid_agree():
    xs = np.round(np.arange(-600, 601) * 0.01, 2)
    hard = ad.hard_sigmoid(T(xs)).data
    soft = sigmoid_ref(xs)
    assert np.max(np.abs(hard - soft)) <= 0.10
    outside = np.concatenate([np.linspace(-50, -6, 100), np.linspace(6, 50, 100)])
    assert np.max(np.abs(ad.hard_sigmoid(T(outside)).data - sigmoid_ref(outside))) <= 0.01


# --------------------------------------------------------------------------- refinement blocks


def test_crblock_zero_weights_is_identity(rng):
    block = crblock("cr", 4)
    p = _params(block)
    for t in p.tensors():
        t.data = np.zeros_like(t.data)
    x = rng.normal(size=(4, 8, 8))
    assert_array_equal(block(p, T(x)).data, x)


def test_crblock_preserves_shape(rng):
    block = crblock("cr", 2)
    assert block(_params(block), T(rng.normal(size=(2, 32, 32)))).shape == (2, 32, 32)


def test_crblock_path_kernels():
    lite, wide = crblock("a", 8, 3), crblock("b", 8, 9)
    assert (lite.path_b1.kernel, lite.path_b2.kernel) == ((1, 3), (3, 1))
    assert (wide.path_b1.kernel, wide.path_b2.kernel) == ((1, 9), (9, 1))


def test_residual_needs_matching_channels():
    with pytest.raises(ValueError):
        DualPathBlock("d", 2, 4, 3, residual=True)


def test_conv_rejects_even_kernel():
    with pytest.raises(ValueError, match="odd"):
        Conv("c", 2, 2, (2, 2))


# --------------------------------------------------------------------------- gradient checks (64-bit)


def _block_fd(block, x_shape, seed):
    g = np.random.default_rng(seed)
    p = _params(block, seed)
    for t in p.tensors():
        # non-trivial biases so every branch is exercised away from zero
        t.data = t.data + 0.1 * g.normal(size=t.shape)
    x = T(g.normal(size=x_shape), True)
    probe = T(g.normal(size=(x_shape[0],) + block.output_shape(x_shape[1:])))
    loss = lambda: ad.sum_all(ad.mul(block(p, x), probe))
    return fd_gradient_error(loss, [x] + p.tensors())


def test_fd_forged_input():
    assert _block_fd(ForgedComplexInput("f", 8), (2, 2, 4, 4), 1) < 1e-4


@pytest.mark.parametrize("gate", ["sigmoid", "hard_sigmoid"])
def test_fd_se_block(gate):
    assert _block_fd(SEBlock("se", 8, gate), (2, 8, 4, 4), 2) < 1e-4


@pytest.mark.parametrize("gate", ["sigmoid", "hard_sigmoid"])
def test_fd_spatial_attention(gate):
    assert _block_fd(SpatialAttention("sa", 7, gate), (2, 4, 6, 6), 3) < 1e-4


@pytest.mark.parametrize("side", [3, 9])
def test_fd_dual_path_blocks(side):
    assert _block_fd(crblock("cr", 3, side), (2, 3, 9, 9), 4) < 1e-4


def test_fd_encoder_dual_path_no_residual():
    assert _block_fd(DualPathBlock("d", 2, 2, 2, side=9, residual=False), (2, 2, 9, 9), 5) < 1e-4


def test_fd_conv_layer_with_activation():
    assert _block_fd(Conv("c", 2, 3, (5, 5), act="relu"), (2, 2, 6, 6), 6) < 1e-4
