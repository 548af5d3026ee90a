import numpy as np
import pytest

from vtlandmarks.engine import Tensor
from vtlandmarks.flatnet import (PAPER_WEIGHTS_PER_NETWORK, ArchitectureError, Network, NetworkSpec, build,
                                 build_convonly, init_params, param_count, plan_layers)
from vtlandmarks.landmarks import LANDMARK_IDS
from vtlandmarks.verify import check_flatnet_group

TINY = {"branch1": 2, "branch2": 2, "l4": 4, "l5": 3, "l6": 3}


def closed_form(layers):
    return sum(kh * kw * cin * cout + cout for kh, kw, cin, cout in layers)


def test_default_weight_count_near_published_figure():
    n = param_count(NetworkSpec())
    assert abs(n - PAPER_WEIGHTS_PER_NETWORK) / PAPER_WEIGHTS_PER_NETWORK < 0.2
    b1, b2, l4, l5, l6 = 32, 32, 576, 256, 128
    expected = closed_form([(9, 9, 3, b1)] * 5 + [(9, 9, b1, b2)] * 5
                           + [(5, 5, 5 * b2, l4), (1, 1, l4, l5), (1, 1, l5, l6), (1, 1, l6, 5)])
    assert n == expected


def test_layer_plan_has_no_resampling_and_right_kernels():
    layers = plan_layers(NetworkSpec(filters=TINY))
    names = [l.name for l in layers]
    assert names[:10] == [f"L{i}.d{k}" for k in range(5) for i in (1, 2)]
    assert names[10:] == ["L4", "L5", "L6", "L7"]
    assert [l.spec.dilation for l in layers if l.name.startswith("L1")] == [1, 2, 4, 8, 16]
    assert all(l.spec.kernel_h == 9 for l in layers[:10])
    assert [l.spec.kernel_h for l in layers[10:]] == [5, 1, 1, 1]
    assert [l.activation for l in layers] == ["relu"] * 13 + ["tanh"]


def test_output_shape_matches_group_and_input():
    net = build(NetworkSpec(filters=TINY), seed=0)
    for h, w in [(16, 16), (13, 21)]:
        out = net(Tensor(np.random.default_rng(0).uniform(size=(2, h, w, 3)).astype(np.float32)))
        assert out.shape == (2, h, w, 5)


def test_default_spec_full_resolution_output_shape():
    net = build(NetworkSpec(), seed=0)
    out = net.predict_maps(np.zeros((1, 256, 256, 3), np.float32))
    assert out.shape == (1, 256, 256, 5)


def test_spec_validation():
    with pytest.raises(ArchitectureError):
        NetworkSpec(dilation_rates=(1, 2, 4, 8))
    with pytest.raises(ArchitectureError):
        NetworkSpec(dilation_rates=(1, 1, 2, 4, 8))
    with pytest.raises(ArchitectureError):
        NetworkSpec(filters={"branch1": 0, "branch2": 2, "l4": 2, "l5": 2, "l6": 2})
    with pytest.raises(ArchitectureError):
        NetworkSpec(architecture="unet")
    with pytest.raises(ArchitectureError):
        NetworkSpec(group=("ANS", "ANS"))
    with pytest.raises(ArchitectureError):
        NetworkSpec("convonly", LANDMARK_IDS, filters={"hidden": [4, 4]})


def test_spec_dict_round_trip():
    for spec in (NetworkSpec(filters=TINY, input_size=(32, 32)),
                 NetworkSpec("convonly", LANDMARK_IDS, filters={"hidden": [3, 3, 3, 3, 3]})):
        assert NetworkSpec.from_dict(spec.to_dict()) == spec


def test_params_are_checked_against_plan():
    spec = NetworkSpec(filters=TINY)
    params = init_params(spec, 0)
    params["L4.w"] = params["L4.w"][..., :1]
    with pytest.raises(ArchitectureError, match="L4.w"):
        Network(spec, params)


def test_init_is_seeded_with_zero_biases_and_zero_head():
    spec = NetworkSpec(filters=TINY)
    a, b = init_params(spec, 1), init_params(spec, 1)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not np.array_equal(a["L1.d0.w"], init_params(spec, 2)["L1.d0.w"])
    assert all(not v.any() for k, v in a.items() if k.endswith(".b"))
    assert not a["L7.w"].any()
    limit = np.sqrt(6.0 / (9 * 9 * 3))
    assert np.abs(a["L1.d0.w"]).max() <= limit


def test_convonly_shape_and_closed_form_count():
    net = build_convonly(LANDMARK_IDS, filters=(4, 4, 4, 4, 4), seed=0)
    assert len(net.layers) == 6
    out = net(Tensor(np.zeros((1, 20, 20, 3), np.float32)))
    assert out.shape == (1, 20, 20, 21)
    expected = closed_form([(9, 9, 3, 4)] + [(9, 9, 4, 4)] * 4 + [(1, 1, 4, 21)])
    assert param_count(net.spec) == expected == net.param_count()


def test_convonly_default_group_of_21_at_full_size():
    net = build_convonly(LANDMARK_IDS, filters=(2, 2, 2, 2, 2), seed=0)
    assert net.predict_maps(np.zeros((1, 256, 256, 3), np.float32)).shape == (1, 256, 256, 21)


def test_zero_input_zero_bias_gives_zero_output():
    net = build_convonly(LANDMARK_IDS[:3], filters=(3, 3, 3, 3, 3), seed=0)
    net.params["C6.w"].data[...] = 1.0
    assert not net(Tensor(np.zeros((1, 8, 8, 3), np.float32))).data.any()
    net.params["C6.b"].data[...] = 0.5
    np.testing.assert_allclose(net(Tensor(np.zeros((1, 8, 8, 3), np.float32))).data, np.tanh(0.5), rtol=1e-6)


def test_full_group_gradient_check():
    report = check_flatnet_group(seed=0)
    assert report.passed, report.message
    assert report.max_rel_error < 1e-4
