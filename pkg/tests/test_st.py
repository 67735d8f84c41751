import numpy as np
import pytest

from deskworld.autodiff import Tensor
from deskworld.rng import stream
from deskworld.st import (StConfig, init_st_stack, param_count, st_block,
                          st_stack, st_stack_param_count)

from gradcheck import check_gradients

TINY = StConfig(model_dim=8, heads=2, ffn_dim=32, blocks=2)


def _params(cfg, dtype=np.float64, seed=0):
    return init_st_stack(stream(seed, "st-test"), cfg, dtype=dtype)


def test_spatial_sublayer_does_not_mix_frames():
    cfg = StConfig(model_dim=8, heads=2, ffn_dim=32, blocks=1)
    params = _params(cfg)
    x = stream(1, "stx").normal(size=(1, 3, 4, 8))
    base = st_block(Tensor(x), params, cfg, 0).data
    x2 = x.copy()
    x2[0, 2] = stream(2, "noise").normal(size=(4, 8))  # scramble frame 2
    pert = st_block(Tensor(x2), params, cfg, 0).data
    np.testing.assert_array_equal(base[0, :2], pert[0, :2])


def test_full_stack_temporal_causality():
    params = _params(TINY)
    x = stream(3, "stc").normal(size=(2, 4, 3, 8))
    base = st_stack(Tensor(x), params, TINY).data
    x2 = x.copy()
    x2[:, 3] += 50.0
    pert = st_stack(Tensor(x2), params, TINY).data
    np.testing.assert_array_equal(base[:, :3], pert[:, :3])


def test_degenerate_shape_finite():
    cfg = StConfig(model_dim=8, heads=2, ffn_dim=8, blocks=1)
    params = _params(cfg)
    x = stream(4, "deg").normal(size=(1, 1, 1, 8))
    out = st_block(Tensor(x), params, cfg, 0).data
    assert np.all(np.isfinite(out))
    assert out.shape == (1, 1, 1, 8)


def test_stack_output_shape():
    params = _params(TINY)
    out = st_stack(Tensor(stream(5, "shape").normal(size=(2, 3, 5, 8))), params, TINY)
    assert out.shape == (2, 3, 5, 8)


def test_zero_depth_stack_is_normalized_identity():
    cfg = StConfig(model_dim=8, heads=2, ffn_dim=32, blocks=0)
    params = _params(cfg)
    x = stream(6, "zd").normal(size=(1, 2, 2, 8))
    out = st_stack(Tensor(x), params, cfg).data
    mu = x.mean(axis=-1, keepdims=True)
    normed = (x - mu) / np.sqrt(((x - mu) ** 2).mean(axis=-1, keepdims=True) + 1e-5)
    np.testing.assert_allclose(out, normed, atol=1e-12)


def test_stack_gradcheck_tiny_dims():
    cfg = StConfig(model_dim=8, heads=2, ffn_dim=8, blocks=1)
    params = _params(cfg)
    names = sorted(params)
    x = stream(7, "stg").normal(size=(1, 2, 2, 8)) * 0.5
    arrays = [x] + [params[n].data.copy() for n in names]

    def loss(ps):
        pdict = {n: ps[i + 1] for i, n in enumerate(names)}
        return (st_stack(ps[0], pdict, cfg) ** 2).mean()

    check_gradients(loss, arrays)


def test_shape_validation():
    params = _params(TINY)
    with pytest.raises(ValueError):
        st_block(Tensor(np.zeros((2, 3, 8))), params, TINY, 0)


def test_param_count_matches_closed_form():
    for cfg in (TINY, StConfig(model_dim=512, heads=8, ffn_dim=2048, blocks=6)):
        params = init_st_stack(stream(0, "pc"), cfg)
        assert param_count(params) == st_stack_param_count(cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        StConfig(model_dim=10, heads=4)
    with pytest.raises(ValueError):
        StConfig(model_dim=8, heads=2, ffn_dim=24)
