import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vtlandmarks.engine import (AdamState, ConvSpec, MissingGradientError, ShapeError, Tensor, adam_step,
                                concat_channels, container, conv2d, grad_check, mae_loss, relu, split_channels,
                                tanh, total, weighted_sum)
from vtlandmarks import verify


def conv_oracle(x, w, b, dilation):
    """Direct quadruple loop over output pixels and kernel taps, zero 'same' padding."""
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    ph = (kh - 1) * dilation // 2
    pw = (kw - 1) * dilation // 2
    out = np.zeros((n, h, wd, cout))
    for i in range(h):
        for j in range(wd):
            acc = np.tile(b.astype(np.float64), (n, 1))
            for u in range(kh):
                for v in range(kw):
                    r = i + u * dilation - ph
                    c = j + v * dilation - pw
                    if 0 <= r < h and 0 <= c < wd:
                        acc += x[:, r, c, :] @ w[u, v]
            out[:, i, j, :] = acc
    return out


def test_conv_matches_loop_oracle_on_random_cases():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for case in range(200):
        d = int(rng.choice([1, 2, 4, 8]))
        k = int(rng.choice([1, 3, 5, 9]))
        h, w = (int(v) for v in rng.integers(1, 17, size=2))
        cin, cout = (int(v) for v in rng.integers(1, 5, size=2))
        n = int(rng.integers(1, 3))
        x = rng.normal(size=(n, h, w, cin))
        wt = rng.normal(size=(k, k, cin, cout))
        b = rng.normal(size=cout)
        got = conv2d(Tensor(x), Tensor(wt), Tensor(b), ConvSpec(k, k, cin, cout, d)).data
        worst = max(worst, float(np.abs(got - conv_oracle(x, wt, b, d)).max()))
    assert worst <= 1e-10


def test_conv_is_linear_in_input():
    rng = np.random.default_rng(5)
    spec = ConvSpec(3, 3, 2, 3, 2)
    x, y = rng.normal(size=(2, 1, 9, 9, 2))
    w = Tensor(rng.normal(size=spec.weight_shape()))
    zero = Tensor(np.zeros(3))
    lhs = conv2d(Tensor(2.5 * x - 0.7 * y), w, zero, spec).data
    rhs = 2.5 * conv2d(Tensor(x), w, zero, spec).data - 0.7 * conv2d(Tensor(y), w, zero, spec).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_conv_preserves_spatial_size_with_large_dilation():
    x = Tensor(np.ones((1, 5, 7, 1)))
    w = Tensor(np.ones((9, 9, 1, 2)))
    out = conv2d(x, w, Tensor(np.zeros(2)), ConvSpec(9, 9, 1, 2, 16))
    # with dilation 16 only the centre tap ever lands inside a 5x7 image
    assert out.shape == (1, 5, 7, 2)
    np.testing.assert_array_equal(out.data, np.ones((1, 5, 7, 2)))


def test_conv_rejects_channel_mismatch():
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.zeros((1, 4, 4, 2))), Tensor(np.zeros((3, 3, 3, 1))), Tensor(np.zeros(1)),
               ConvSpec(3, 3, 3, 1))


def test_relu_and_tanh_values():
    x = Tensor(np.array([-2.0, 0.0, 3.0]))
    np.testing.assert_array_equal(relu(x).data, [0.0, 0.0, 3.0])
    assert tanh(Tensor(np.array([0.0]))).data[0] == 0.0
    assert abs(tanh(Tensor(np.array([20.0]))).data[0] - 1.0) < 1e-6


def test_relu_subgradient_at_zero_is_zero():
    x = Tensor(np.array([0.0, 1.0]), requires_grad=True)
    total(relu(x)).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])


def test_concat_then_split_is_identity():
    rng = np.random.default_rng(0)
    parts = [rng.normal(size=(1, 4, 4, c)) for c in (3, 3)]
    out = concat_channels([Tensor(p) for p in parts])
    assert out.shape == (1, 4, 4, 6)
    for got, want in zip(split_channels(out, [3, 3]), parts):
        np.testing.assert_array_equal(got, want)
    single = rng.normal(size=(1, 2, 2, 4))
    np.testing.assert_array_equal(concat_channels([Tensor(single)]).data, single)
    widths = [32] * 5
    assert concat_channels([Tensor(np.zeros((1, 2, 2, c))) for c in widths]).shape[-1] == sum(widths)


def test_concat_rejects_spatial_mismatch():
    with pytest.raises(ShapeError):
        concat_channels([Tensor(np.zeros((1, 4, 4, 1))), Tensor(np.zeros((1, 4, 5, 1)))])


def test_mae_examples():
    assert float(mae_loss(Tensor(np.ones(4)), np.ones(4)).data) == 0.0
    assert float(mae_loss(Tensor(np.array([1.0, -1.0])), np.zeros(2)).data) == 1.0
    rng = np.random.default_rng(1)
    p, t = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    acc = 0.0
    for a, b in zip(p.ravel(), t.ravel()):
        acc += abs(a - b)
    assert abs(float(mae_loss(Tensor(p), t).data) - acc / p.size) < 1e-12
    with pytest.raises(ShapeError):
        mae_loss(Tensor(np.zeros(3)), np.zeros(4))


def test_mae_gradient_is_sign_over_count_and_zero_at_ties():
    p = Tensor(np.array([2.0, 0.0, -1.0, 5.0]), requires_grad=True)
    mae_loss(p, np.array([1.0, 0.0, 0.0, 5.0])).backward()
    np.testing.assert_array_equal(p.grad, [0.25, 0.0, -0.25, 0.0])


def test_backward_accumulates_through_shared_nodes():
    x = Tensor(np.full((1, 1, 1, 1), 0.3), requires_grad=True)
    y = tanh(x)
    total(concat_channels([y, y])).backward()
    np.testing.assert_allclose(x.grad, 2.0 * (1 - np.tanh(0.3) ** 2))


def test_adam_zero_gradient_leaves_everything_unchanged():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.zeros(2)
    st_ = AdamState(lr=0.1)
    adam_step([p], st_)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    np.testing.assert_array_equal(st_.m[0], 0.0)
    np.testing.assert_array_equal(st_.v[0], 0.0)


def test_adam_first_step_with_unit_gradient():
    p = Tensor(np.array([0.0]), requires_grad=True)
    p.grad = np.array([1.0])
    adam_step([p], AdamState(lr=0.1))
    assert abs(p.data[0] - (-0.1 / (1 + 1e-8))) < 1e-12


def test_adam_quadratic_bowl_decreases_monotonically():
    w = Tensor(np.array([1.0]), requires_grad=True)
    state = AdamState(lr=0.01)
    prev = abs(w.data[0])
    for _ in range(100):
        w.grad = None
        weighted_sum(w, 2 * w.data.copy()).backward()  # gradient of w^2 is 2w
        adam_step([w], state)
        assert abs(w.data[0]) < prev
        prev = abs(w.data[0])


def test_adam_rejects_missing_gradient():
    p = Tensor(np.zeros(2), requires_grad=True)
    with pytest.raises(MissingGradientError):
        adam_step([p], AdamState())


def test_grad_check_linear_exact():
    report = verify.check_linear(0)
    assert report.passed and report.max_rel_error < 1e-9


@pytest.mark.parametrize("dilation", [1, 2, 4, 8])
def test_grad_check_conv(dilation):
    report = verify.check_conv2d(seed=dilation, dilation=dilation)
    assert report.passed, report.message
    assert report.max_rel_error < 1e-5


@pytest.mark.parametrize("name", ["relu", "tanh", "concat", "mae"])
def test_grad_check_pointwise_ops(name):
    report = getattr(verify, f"check_{name}")(3)
    assert report.passed, report.message
    assert report.max_rel_error < 1e-4


def test_grad_check_requires_float64():
    with pytest.raises(TypeError):
        grad_check(lambda x: total(x), Tensor(np.ones(3, dtype=np.float32)))


def test_grad_check_reports_non_finite_with_location():
    def f(x):
        return weighted_sum(x, np.array([1.0, np.inf]))

    report = grad_check(f, Tensor(np.array([1.0, 2.0])))
    assert not report.passed
    assert "non-finite" in report.message


def test_grad_check_flags_a_wrong_gradient():
    from vtlandmarks.engine.tensor import make_node

    def bad_square(x):
        return make_node(x.data ** 2, [x], lambda g: [g * x.data])  # missing factor 2

    report = grad_check(lambda x: total(bad_square(x)), Tensor(np.array([1.0, 2.0])))
    assert not report.passed


def test_forward_backward_bitwise_deterministic():
    def run():
        rng = np.random.default_rng(9)
        spec = ConvSpec(3, 3, 2, 2, 2)
        x = Tensor(rng.normal(size=(2, 6, 6, 2)), requires_grad=True)
        w = Tensor(rng.normal(size=spec.weight_shape()), requires_grad=True)
        b = Tensor(rng.normal(size=2), requires_grad=True)
        mae_loss(tanh(conv2d(x, w, b, spec)), np.zeros((2, 6, 6, 2))).backward()
        return x.grad.tobytes() + w.grad.tobytes() + b.grad.tobytes()

    assert run() == run()


# ---- container ------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.text(min_size=1, max_size=12),
                          st.lists(st.integers(0, 4), min_size=0, max_size=4)), min_size=0, max_size=5,
                unique_by=lambda t: t[0]))
def test_container_round_trip(items):
    rng = np.random.default_rng(len(items))
    arrays = {name: rng.normal(size=tuple(shape)).astype(np.float32) for name, shape in items}
    back = container.loads(container.dumps(arrays))
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].shape == arrays[k].shape
        np.testing.assert_array_equal(back[k], arrays[k])


def test_container_layout_is_little_endian_and_versioned():
    blob = container.dumps({"w": np.array([1.0], dtype=np.float32)})
    assert blob[:4] == b"VTLM"
    assert int.from_bytes(blob[4:8], "little") == 1
    assert int.from_bytes(blob[8:12], "little") == 1
    assert blob[-4:] == np.array([1.0], dtype="<f4").tobytes()


@pytest.mark.parametrize("mutate", [lambda b: b"XXXX" + b[4:], lambda b: b[:-2], lambda b: b + b"\0"])
def test_container_rejects_corruption(mutate):
    blob = container.dumps({"w": np.zeros((2, 2), dtype=np.float32)})
    with pytest.raises(container.ContainerError):
        container.loads(mutate(blob))
