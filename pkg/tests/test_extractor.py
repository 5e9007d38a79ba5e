import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from caconv.errors import ConfigError
from caconv.extractor import (ExtractorConfig, extract_features, glorot_bound, init_extractor,
                              layer_names, receptive_field)
from caconv.tensor import Tensor


def test_desk_config_shapes():
    cfg = ExtractorConfig.desk()
    params = init_extractor(cfg, 0)
    img = Tensor(np.random.default_rng(0).random((64, 64, 3)))
    X = extract_features(img, cfg, params)
    assert X.shape == (16, 16, 32)
    assert cfg.output_size == 16 and cfg.output_channels == 32


def test_five_block_config_gives_eight():
    cfg = ExtractorConfig.vgg_lite(64)
    assert cfg.num_pools == 3
    X = extract_features(Tensor(np.zeros((64, 64, 3))), cfg, init_extractor(cfg, 1))
    assert X.shape == (8, 8, 64)
    assert cfg.pool_after_block[-2:] == (False, False)


def test_full_scale_vgg_analogue_extent():
    # 224 input with three retained pools -> 28 x 28 maps
    cfg = ExtractorConfig(((2, 64), (2, 128), (3, 256), (3, 512), (3, 512)),
                          (True, True, True, False, False), 2, 224)
    assert cfg.output_size == 28


def test_finer_than_all_pools_retained():
    cfg = ExtractorConfig.vgg_lite(64)
    all_pools = 64 // 2 ** len(cfg.blocks)
    assert cfg.output_size == 4 * all_pools


def test_zero_weights_give_zero_features():
    cfg = ExtractorConfig.desk(32)
    params = init_extractor(cfg, 0)
    for t in params.values():
        t.data[...] = 0.0
    X = extract_features(Tensor(np.random.default_rng(2).random((32, 32, 3))), cfg, params)
    assert not X.data.any()


def test_batch_matches_single():
    cfg = ExtractorConfig.desk(16)
    params = init_extractor(cfg, 3)
    imgs = np.random.default_rng(3).random((3, 16, 16, 3))
    batch = extract_features(Tensor(imgs), cfg, params).data
    for i in range(3):
        np.testing.assert_allclose(batch[i], extract_features(Tensor(imgs[i]), cfg, params).data,
                                   rtol=1e-13, atol=1e-13)


def test_indivisible_extent():
    cfg = ExtractorConfig.desk()
    with pytest.raises(ConfigError):
        extract_features(Tensor(np.zeros((30, 30, 3))), cfg, init_extractor(cfg, 0))
    with pytest.raises(ConfigError):
        ExtractorConfig.desk(66)


class TestInit:
    def test_same_seed_identical(self):
        a, b = init_extractor(ExtractorConfig.desk(), 5), init_extractor(ExtractorConfig.desk(), 5)
        assert all(np.array_equal(a[k].data, b[k].data) for k in a)

    def test_different_seed_differs(self):
        a, b = init_extractor(ExtractorConfig.desk(), 5), init_extractor(ExtractorConfig.desk(), 6)
        assert any(not np.array_equal(a[k].data, b[k].data) for k in a)

    def test_glorot_bound(self):
        cfg = ExtractorConfig.desk()
        params = init_extractor(cfg, 0)
        for prefix, c_in, c_out, _ in layer_names(cfg):
            w = params[prefix + ".w"].data
            bound = np.sqrt(6.0 / (9 * c_in + 9 * c_out))
            assert bound == pytest.approx(glorot_bound(9 * c_in, 9 * c_out))
            assert np.abs(w).max() <= bound
            # the sample should actually use most of the range
            assert np.abs(w).max() > 0.8 * bound


class TestConfigRules:
    def test_doubling_enforced(self):
        with pytest.raises(ConfigError):
            ExtractorConfig(((1, 8), (1, 12)), (True, False))

    def test_pool_flags_length(self):
        with pytest.raises(ConfigError):
            ExtractorConfig(((1, 8), (1, 16)), (True,))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(1, 3), st.booleans()), min_size=1, max_size=6),
           st.integers(1, 16))
    def test_doubling_holds_for_any_valid_config(self, layout, base):
        blocks, filters = [], base
        for i, (n, _) in enumerate(layout):
            if i and layout[i - 1][1]:
                filters *= 2
            blocks.append((n, filters))
        pools = tuple(p for _, p in layout)
        cfg = ExtractorConfig(tuple(blocks), pools, 2, 2 ** sum(pools) * 3)
        for b in range(1, len(cfg.blocks)):
            if cfg.pool_after_block[b - 1]:
                assert cfg.blocks[b][1] == 2 * cfg.blocks[b - 1][1]
        assert cfg.output_size == cfg.input_size // 2 ** sum(pools)


def test_dilated_block_preserves_filter_span():
    """Each final-block tap spans the same input pixels as behind the dropped pool."""
    cfg = ExtractorConfig.vgg_lite(64)
    dense = receptive_field(cfg)
    # reference: pool after block 4 retained, no dilation
    ref_pools = (True, True, True, True, False)
    reference = receptive_field(cfg, dilate_last=False, pools=ref_pools)
    n_last = cfg.blocks[-1][0]
    assert dense.spans[-n_last:] == reference.spans[-n_last:]
    # everything before the final block is identical
    assert dense.spans[:-n_last] == reference.spans[:-n_last]
    # without dilation the final block would cover half the span
    undilated = receptive_field(cfg, dilate_last=False)
    assert [2 * s for s in undilated.spans[-n_last:]] == dense.spans[-n_last:]
