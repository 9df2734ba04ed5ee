import numpy as np
import pytest

from agconv.exceptions import ConfigError, InputError, SizeError
from agconv.gradcheck import NETWORK_TOL, check_cls_net, check_seg_net, tiny_cls_net, tiny_seg_net
from agconv.layers import AGConvLayer, FixedKernelLayer, agconv_param_formula, graphconv_param_formula
from agconv.models import ClassificationNet, SegmentationNet, build_model, model_param_count
from agconv.pointcloud import PointCloud, gen_synthetic


@pytest.fixture(scope="module")
def cls_net():
    return ClassificationNet(3, k=8, hidden=8, widths=(8, 8, 16, 16), emb=32, head=(16, 8), seed=1)


@pytest.fixture(scope="module")
def seg_net():
    return SegmentationNet(6, 3, k=4, hidden=6, widths=(6, 6, 8, 8, 10), head=(12, 8), seed=2)


class TestClassification:
    def test_logit_shape(self, cls_net):
        for n in (8, 50):
            assert cls_net(gen_synthetic("cube", n, 0)).shape == (3,)

    def test_permutation_invariance(self, cls_net):
        cloud = gen_synthetic("torus", 128, 3)
        ref = cls_net(cloud).data
        for seed in range(3):
            perm = np.random.default_rng(seed).permutation(128)
            np.testing.assert_allclose(cls_net(cloud.subset(perm)).data, ref, atol=1e-9, rtol=0)

    def test_deterministic(self, cls_net):
        cloud = gen_synthetic("sphere", 64, 1)
        assert np.array_equal(cls_net(cloud).data, cls_net(cloud).data)

    def test_accepts_raw_coordinates(self, cls_net):
        cloud = gen_synthetic("sphere", 64, 1)
        assert np.array_equal(cls_net(cloud.coords).data, cls_net(cloud).data)

    def test_too_few_points(self, cls_net):
        with pytest.raises(SizeError):
            cls_net(np.zeros((5, 3)))

    def test_first_two_layers_adaptive(self):
        net = ClassificationNet(seed=0)
        kinds = [type(c) for c in net.convs]
        assert kinds == [AGConvLayer, AGConvLayer, FixedKernelLayer, FixedKernelLayer]
        assert all(c.variant == "graphconv" for c in net.convs[2:])

    def test_baseline_is_all_graphconv(self):
        net = ClassificationNet(conv="graphconv", seed=0)
        assert all(isinstance(c, FixedKernelLayer) for c in net.convs)

    def test_unknown_conv(self):
        with pytest.raises(ConfigError):
            ClassificationNet(conv="pointnet")

    def test_gradcheck(self):
        assert check_cls_net(seed=1) < NETWORK_TOL


class TestSegmentation:
    def test_output_shape(self, seg_net):
        cloud = gen_synthetic("cube", 64, 0)
        assert seg_net(cloud).shape == (64, 6)

    def test_stn_at_identity_matches_no_stn(self):
        kw = dict(num_parts=2, category_count=3, k=4, hidden=6, widths=(6, 6, 8, 8, 10), head=(12, 8), seed=3)
        plain = SegmentationNet(**kw)
        with_stn = SegmentationNet(**kw, stn=True, stn_widths=(4, 6, 8), stn_head=(6, 5))
        # same backbone weights; the STN only adds parameters
        src = dict(plain.named_parameters())
        for name, p in with_stn.named_parameters():
            if not name.startswith("stn."):
                p.data[...] = src[name].data
        cloud = gen_synthetic("sphere", 64, 2)
        np.testing.assert_allclose(with_stn(cloud).data, plain(cloud).data, atol=1e-9, rtol=0)

    def test_permutation_equivariance(self, seg_net):
        cloud = gen_synthetic("cube", 96, 4)
        ref = seg_net(cloud).data
        perm = np.random.default_rng(5).permutation(96)
        np.testing.assert_allclose(seg_net(cloud.subset(perm)).data, ref[perm], atol=1e-9, rtol=0)

    def test_pool_underflow(self, seg_net):
        with pytest.raises(SizeError):
            seg_net(gen_synthetic("cube", 40, 0))

    def test_category_vector_length(self, seg_net):
        with pytest.raises(InputError):
            seg_net(gen_synthetic("cube", 64, 0), np.ones(2))

    def test_normals_required(self):
        net = tiny_seg_net()
        with pytest.raises(InputError):
            net(PointCloud(np.random.default_rng(0).standard_normal((64, 3))))

    def test_gradcheck(self):
        assert check_seg_net(seed=1) < NETWORK_TOL


class TestParamCount:
    def test_table_sums_to_total(self, cls_net, seg_net):
        for net in (cls_net, seg_net, tiny_seg_net()):
            total, rows = model_param_count(net)
            assert total == sum(r.count for r in rows)

    def test_with_bias_counts_every_parameter(self, cls_net, seg_net):
        for net in (cls_net, seg_net, tiny_cls_net(), tiny_seg_net()):
            assert model_param_count(net, include_bias=True)[0] == sum(p.size for p in net.parameters())

    def test_classifier_closed_form(self):
        net = ClassificationNet(seed=0)
        d, widths = 64, [3, 64, 64, 128, 256]
        conv_terms = (
            agconv_param_formula(3, 64, d, 6)
            + agconv_param_formula(64, 64, d, 6)
            + graphconv_param_formula(64, 128)
            + graphconv_param_formula(128, 256)
        )
        linear_terms = sum(widths[1:]) * 1024 + 1024 * 512 + 512 * 256 + 256 * 3
        norm_terms = 64 + 64 + 128 + 256 + 1024
        total, rows = model_param_count(net)
        assert sum(r.count for r in rows if r.kind in ("agconv", "graphconv")) == conv_terms
        assert total == conv_terms + linear_terms + norm_terms

    def test_doubling_widths_quadruples_dcm(self):
        assert agconv_param_formula(64, 128, 128, 6) - 2 * 128 * 64 == 4 * (
            agconv_param_formula(64, 64, 64, 6) - 2 * 64 * 64
        )


def test_build_model_round_trip(cls_net, seg_net):
    for net in (cls_net, seg_net):
        rebuilt = build_model(net.config)
        assert [n for n, _ in rebuilt.named_parameters()] == [n for n, _ in net.named_parameters()]
        assert all(np.array_equal(a.data, b.data) for a, b in zip(rebuilt.parameters(), net.parameters()))
    with pytest.raises(ConfigError):
        build_model({"kind": "det"})
