import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paraflame import autodiff as ad
from paraflame.autodiff import Parameter, ShapeError, Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _direct_conv(x, w, b):
    c_out, c_in, _ = w.shape
    n = x.shape[-1]
    out = np.zeros((c_out, n))
    for o in range(c_out):
        for j in range(n):
            acc = b[o]
            for i in range(c_in):
                for k in (-1, 0, 1):
                    acc += w[o, i, k + 1] * x[i, (j + k) % n]
            out[o, j] = acc
    return out


def _dft(x):
    n = x.shape[-1]
    j = np.arange(n)
    return np.array([(x * np.exp(-2j * np.pi * k * j / n)).sum(axis=-1) for k in range(n)]).T


# -- conv1d_periodic -----------------------------------------------------------

def test_conv_identity_kernel(rng):
    x = rng.normal(size=(1, 10))
    out = ad.conv1d_periodic(x, np.array([[[0.0, 1.0, 0.0]]]), np.zeros(1))
    np.testing.assert_array_equal(out.data, x)


def test_conv_constant_field():
    x = np.full((1, 8), 0.7)
    out = ad.conv1d_periodic(x, np.ones((1, 1, 3)), np.zeros(1))
    np.testing.assert_allclose(out.data, 2.1, atol=1e-15)


def test_conv_matches_direct_sum(rng):
    x = rng.normal(size=(2, 8))
    w = rng.normal(size=(2, 2, 3))
    b = rng.normal(size=2)
    np.testing.assert_allclose(ad.conv1d_periodic(x, w, b).data, _direct_conv(x, w, b), atol=1e-12)


def test_conv_shape_errors(rng):
    with pytest.raises(ShapeError, match="channel"):
        ad.conv1d_periodic(rng.normal(size=(3, 8)), rng.normal(size=(2, 2, 3)))
    with pytest.raises(ShapeError, match="N=2"):
        ad.conv1d_periodic(rng.normal(size=(2, 2)), rng.normal(size=(2, 2, 3)))


@pytest.mark.parametrize("shift", [1, 3, 7])
def test_conv_commutes_with_shift_bitwise(rng, shift):
    x = rng.normal(size=(4, 3, 32))
    w = rng.normal(size=(5, 3, 3))
    b = rng.normal(size=5)
    a = np.roll(ad.conv1d_periodic(x, w, b).data, shift, axis=-1)
    c = ad.conv1d_periodic(np.roll(x, shift, axis=-1), w, b).data
    np.testing.assert_array_equal(a, c)


# -- channel_linear / mlp --------------------------------------------------------

def test_channel_linear_identity_and_double(rng):
    x = rng.normal(size=(3, 6))
    np.testing.assert_array_equal(ad.channel_linear(x, np.eye(3), np.zeros(3)).data, x)
    np.testing.assert_array_equal(ad.channel_linear(x, 2 * np.eye(3), np.zeros(3)).data, 2 * x)


def test_channel_linear_matches_pointwise_matvec(rng):
    x = rng.normal(size=(4, 9))
    w = rng.normal(size=(5, 4))
    b = rng.normal(size=5)
    expected = np.stack([w @ x[:, j] + b for j in range(9)], axis=1)
    np.testing.assert_allclose(ad.channel_linear(x, w, b).data, expected, atol=1e-12)


def test_channel_linear_shape_error(rng):
    with pytest.raises(ShapeError):
        ad.channel_linear(rng.normal(size=(4, 9)), rng.normal(size=(5, 3)))


def test_mlp_identity_and_constant(rng):
    x = rng.normal(size=4)
    np.testing.assert_array_equal(ad.mlp(x, [(np.eye(4), np.zeros(4), None)]).data, x)
    b = rng.normal(size=3)
    np.testing.assert_array_equal(ad.mlp(x, [(np.zeros((3, 4)), b, None)]).data, b)


def test_mlp_matches_matrix_chain(rng):
    x = rng.normal(size=(2, 5))
    w1, b1 = rng.normal(size=(7, 5)), rng.normal(size=7)
    w2, b2 = rng.normal(size=(3, 7)), rng.normal(size=3)
    out = ad.mlp(x, [(w1, b1, "relu"), (w2, b2, None)])
    expected = np.maximum(x @ w1.T + b1, 0) @ w2.T + b2
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


def test_mlp_spatial_is_pointwise(rng):
    x = rng.normal(size=(2, 6))
    w1, b1 = rng.normal(size=(4, 2)), rng.normal(size=4)
    out = ad.mlp(x, [(w1, b1, "relu")], spatial=True)
    expected = np.stack([np.maximum(w1 @ x[:, j] + b1, 0) for j in range(6)], axis=1)
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


# -- relu --------------------------------------------------------------------------

def test_relu_values_and_subgradient():
    np.testing.assert_array_equal(ad.relu(np.array([-1.0, 0.0, 2.0])).data, [0, 0, 2])
    np.testing.assert_array_equal(ad.relu(-np.ones(4)).data, np.zeros(4))
    x = Tensor([-1.0, 2.0], requires_grad=True)
    ad.backward(ad.sum(ad.relu(x)))
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])
    z = Tensor([0.0], requires_grad=True)
    ad.backward(ad.sum(ad.relu(z)))
    assert z.grad[0] == 0.0


def test_relu_rejects_complex():
    with pytest.raises(TypeError):
        ad.relu(np.array([1 + 1j]))


# -- spectral ----------------------------------------------------------------------

def test_rfft_constant_field_has_no_modes():
    out = ad.rfft_truncate(np.full((2, 16), 3.0), 8)
    np.testing.assert_allclose(np.abs(out.data), 0.0, atol=1e-13)


def test_rfft_single_mode():
    n = 16
    x = np.cos(2 * (-np.pi + 2 * np.pi * np.arange(n) / n))[None]
    mag = np.abs(ad.rfft_truncate(x, 8).data[0])
    expected = np.zeros(8)
    expected[1] = n / 2
    np.testing.assert_allclose(mag, expected, atol=1e-12)


def test_rfft_parseval_against_full_dft(rng):
    x = rng.normal(size=(3, 32))
    full = _dft(x)
    np.testing.assert_allclose((x ** 2).sum(-1), (np.abs(full) ** 2).sum(-1) / 32, rtol=1e-12)
    np.testing.assert_allclose(ad.rfft_truncate(x, 16).data, full[:, 1:17], atol=1e-12)


def test_rfft_kmax_range():
    with pytest.raises(ShapeError):
        ad.rfft_truncate(np.zeros((1, 16)), 9)
    with pytest.raises(ShapeError):
        ad.rfft_truncate(np.zeros((1, 16)), 0)
    with pytest.raises(ShapeError):
        ad.rfft_truncate(np.zeros((1, 15)), 3)


def test_irfft_pad_dc_only():
    out = ad.irfft_pad(np.zeros((2, 4), complex), 16, np.array([1.5, -2.0]))
    np.testing.assert_allclose(out.data, np.array([[1.5] * 16, [-2.0] * 16]), atol=1e-15)


def test_round_trip_full_spectrum(rng):
    x = rng.normal(size=(3, 32))
    y = ad.irfft_pad(ad.rfft_truncate(x, 16), 32, x.mean(-1))
    np.testing.assert_allclose(y.data, x, atol=1e-12)


def test_truncated_round_trip_is_low_pass(rng):
    n = 32
    x = rng.normal(size=(2, n))
    full = _dft(x)
    k = np.fft.fftfreq(n, 1.0 / n)
    full[:, np.abs(k) > n // 4] = 0.0
    expected = np.array([(row * np.exp(2j * np.pi * np.outer(np.arange(n), np.arange(n)) / n)).sum(-1) / n
                         for row in full]).real
    y = ad.irfft_pad(ad.rfft_truncate(x, n // 4), n, x.mean(-1))
    np.testing.assert_allclose(y.data, expected, atol=1e-12)


def test_irfft_pad_shape_error():
    with pytest.raises(ShapeError):
        ad.irfft_pad(np.zeros((2, 4), complex), 16, np.zeros(3))


def test_spectral_adjoint_consistency(rng):
    n, kmax = 32, 10
    x = rng.normal(size=n)
    y = rng.normal(size=kmax) + 1j * rng.normal(size=kmax)
    fx = ad.rfft_truncate(x, kmax).data
    lhs = float(np.sum(fx.real * y.real + fx.imag * y.imag))
    xt = Tensor(x, requires_grad=True)
    ad.backward(ad.sum(ad.real(ad.mul(ad.rfft_truncate(xt, kmax), np.conj(y)))))
    rhs = float(np.dot(x, xt.grad))
    assert abs(lhs - rhs) < 1e-10

    # and the inverse map: <irfft_pad(m), u> == <m, adjoint(u)>
    u = rng.normal(size=n)
    m = Tensor(y, requires_grad=True)
    ad.backward(ad.sum(ad.mul(ad.irfft_pad(m, n, np.zeros(())), u)))
    lhs2 = float(np.dot(ad.irfft_pad(y, n, np.zeros(())).data, u))
    rhs2 = float(np.sum(y.real * m.grad.real + y.imag * m.grad.imag))
    assert abs(lhs2 - rhs2) < 1e-10


# -- complex_mode_mix --------------------------------------------------------------

def test_mode_mix_identity_and_double(rng):
    x = rng.normal(size=(3, 4)) + 1j * rng.normal(size=(3, 4))
    eye = np.broadcast_to(np.eye(3), (4, 3, 3)).astype(complex)
    np.testing.assert_array_equal(ad.complex_mode_mix(x, eye).data, x)
    np.testing.assert_array_equal(ad.complex_mode_mix(x, 2 * eye).data, 2 * x)


def test_mode_mix_matches_per_mode_matmul(rng):
    d, kmax = 3, 4
    x = rng.normal(size=(d, kmax)) + 1j * rng.normal(size=(d, kmax))
    w = rng.normal(size=(kmax, d, d)) + 1j * rng.normal(size=(kmax, d, d))
    expected = np.stack([w[k] @ x[:, k] for k in range(kmax)], axis=1)
    np.testing.assert_allclose(ad.complex_mode_mix(x, w).data, expected, atol=1e-12)


def test_mode_mix_shape_error(rng):
    with pytest.raises(ShapeError):
        ad.complex_mode_mix(np.zeros((3, 4), complex), np.zeros((5, 3, 3), complex))


# -- pooling / upsampling / concat ---------------------------------------------------

def test_maxpool_values_and_routing():
    x = Tensor([[1.0, 3.0, 2.0, 2.0]], requires_grad=True)
    out = ad.maxpool1d(x)
    np.testing.assert_array_equal(out.data, [[3.0, 2.0]])
    ad.backward(ad.sum(out))
    np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 1.0, 0.0]])
    np.testing.assert_array_equal(ad.maxpool1d(np.full((2, 8), 4.0)).data, np.full((2, 4), 4.0))
    with pytest.raises(ShapeError):
        ad.maxpool1d(np.zeros((1, 5)))


def test_upsample_values_and_gradient(rng):
    np.testing.assert_array_equal(ad.upsample1d(np.array([[1.0, 2.0]])).data, [[1, 1, 2, 2]])
    x = rng.normal(size=(2, 5))
    np.testing.assert_array_equal(ad.maxpool1d(ad.upsample1d(x)).data, x)
    t = Tensor(x, requires_grad=True)
    ad.backward(ad.sum(ad.upsample1d(t)))
    np.testing.assert_array_equal(t.grad, np.full((2, 5), 2.0))


def test_concat_channels(rng):
    a, b = rng.normal(size=(1, 6)), rng.normal(size=(1, 6))
    np.testing.assert_array_equal(ad.concat_channels(a, b).data, np.vstack([a, b]))
    np.testing.assert_array_equal(ad.concat_channels(a, np.zeros((0, 6))).data, a)
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    out = ad.concat_channels(ta, tb)
    ad.backward(ad.sum(ad.index(out, (slice(0, 1), slice(None)))))
    np.testing.assert_array_equal(ta.grad, np.ones_like(a))
    np.testing.assert_array_equal(tb.grad, np.zeros_like(b))
    with pytest.raises(ShapeError):
        ad.concat_channels(a, np.zeros((1, 5)))


# -- backward / gradient_check -------------------------------------------------------

def test_backward_simple_square():
    x = Parameter([1.0, -2.0], "x")
    grads = ad.backward(ad.sum(ad.square(x)))
    np.testing.assert_array_equal(grads[x], [2.0, -4.0])


def test_backward_unreached_parameter_is_zero():
    x = Parameter([1.0, 2.0], "x")
    y = Parameter([3.0], "y")
    grads = ad.backward(ad.sum(ad.square(x)), [x, y])
    np.testing.assert_array_equal(grads[y], [0.0])


def test_backward_rejects_non_scalar():
    x = Parameter([1.0, 2.0], "x")
    with pytest.raises(ShapeError):
        ad.backward(ad.square(x))


def test_backward_twice_is_deterministic(rng):
    w = Parameter(rng.normal(size=(3, 2, 3)), "w")
    x = rng.normal(size=(2, 16))
    loss = ad.sum(ad.square(ad.relu(ad.conv1d_periodic(x, w))))
    g1 = ad.backward(loss)[w].copy()
    g2 = ad.backward(loss)[w].copy()
    np.testing.assert_array_equal(g1, g2)


def test_no_grad_records_nothing(rng):
    w = Parameter(rng.normal(size=(2, 2)), "w")
    with ad.no_grad():
        out = ad.channel_linear(rng.normal(size=(2, 4)), w)
    assert not out.requires_grad


def test_gradient_check_linear(rng):
    w = Parameter(rng.normal(size=(3, 4)), "w")
    x = rng.normal(size=(4, 5))
    c = rng.normal(size=(3, 5))
    err = ad.gradient_check(lambda: ad.sum(ad.mul(ad.channel_linear(x, w), c)), [w])
    assert err < 1e-9


def test_gradient_check_relu_far_from_kink():
    x = Parameter([-1.3, 0.8, 2.5], "x")
    assert ad.gradient_check(lambda: ad.sum(ad.square(ad.relu(x))), [x]) < 1e-6


PRIMITIVE_CASES = {
    "conv1d_periodic": lambda r: (
        [Parameter(r.normal(size=(2, 3, 8)), "x"),
         Parameter(r.normal(size=(4, 3, 3)), "w"), Parameter(r.normal(size=4), "b")],
        lambda x, w, b: ad.conv1d_periodic(x, w, b)),
    "channel_linear": lambda r: (
        [Parameter(r.normal(size=(2, 3, 8)), "x"), Parameter(r.normal(size=(4, 3)), "w"),
         Parameter(r.normal(size=4), "b")],
        lambda x, w, b: ad.channel_linear(x, w, b)),
    "dense": lambda r: (
        [Parameter(r.normal(size=(5, 3)), "x"), Parameter(r.normal(size=(2, 3)), "w"),
         Parameter(r.normal(size=2), "b")],
        lambda x, w, b: ad.dense(x, w, b)),
    "softplus": lambda r: ([Parameter(r.normal(size=(3, 4)), "x")], ad.softplus),
    "maxpool1d": lambda r: ([Parameter(r.normal(size=(2, 3, 8)), "x")], ad.maxpool1d),
    "upsample1d": lambda r: ([Parameter(r.normal(size=(2, 3, 4)), "x")], ad.upsample1d),
    "concat": lambda r: (
        [Parameter(r.normal(size=(2, 3, 4)), "a"), Parameter(r.normal(size=(2, 1, 4)), "b")],
        ad.concat_channels),
    "channel_mean": lambda r: ([Parameter(r.normal(size=(2, 3, 8)), "x")],
                               lambda x: ad.reshape(ad.channel_mean(x), (2, 3, 1))),
    "real_imag": lambda r: (
        [Parameter(r.normal(size=(2, 5)) + 1j * r.normal(size=(2, 5)), "z")],
        lambda z: ad.add(ad.square(ad.real(z)), ad.mul(ad.imag(z), 3.0))),
    "rfft_irfft": lambda r: (
        [Parameter(r.normal(size=(2, 16)), "x"), Parameter(r.normal(size=2), "dc")],
        lambda x, dc: ad.irfft_pad(ad.mul(ad.rfft_truncate(x, 8), np.exp(1j * np.arange(8))), 16, dc)),
    "rfft_partial": lambda r: (
        [Parameter(r.normal(size=(2, 16)), "x")],
        lambda x: ad.irfft_pad(ad.mul(ad.rfft_truncate(x, 5), 1.0 + 0.5j), 16, np.zeros(2))),
    "mode_mix": lambda r: (
        [Parameter(r.normal(size=(2, 3, 16)), "x"),
         Parameter(r.normal(size=(6, 3, 3)) + 1j * r.normal(size=(6, 3, 3)), "w")],
        lambda x, w: ad.irfft_pad(ad.complex_mode_mix(ad.rfft_truncate(x, 6), w), 16, np.zeros((2, 3)))),
    "mul_real_complex": lambda r: (
        [Parameter(r.normal(size=(2, 1, 6)), "s"), Parameter(r.normal(size=(2, 3, 16)), "x")],
        lambda s, x: ad.irfft_pad(ad.mul(ad.rfft_truncate(x, 6), s), 16, np.zeros((2, 3)))),
    "div_norm": lambda r: (
        [Parameter(r.normal(size=(3, 5)), "a"), Parameter(r.normal(size=(3, 5)), "b")],
        lambda a, b: ad.div(ad.l2_norm(ad.sub(a, b)), ad.l2_norm(b))),
    "gather": lambda r: ([Parameter(r.normal(size=(2, 3)), "d")],
                         lambda d: ad.gather_last(d, np.array([0, 0, 1, 2, 2, 2]))),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients_match_finite_differences(name):
    r = np.random.default_rng(7)
    params, fn = PRIMITIVE_CASES[name](r)
    out_shape = fn(*params).shape
    weights = r.normal(size=out_shape)

    def loss():
        return ad.sum(ad.mul(fn(*params), weights))

    assert ad.gradient_check(loss, params) < 1e-5


def test_composite_graph_gradient(rng):
    w1 = Parameter(rng.normal(size=(4, 1, 3)), "w1")
    w2 = Parameter(rng.normal(size=(4, 4)), "w2")
    rk = Parameter(0.3 * (rng.normal(size=(5, 4, 4)) + 1j * rng.normal(size=(5, 4, 4))), "r")
    x = rng.normal(size=(2, 1, 16))
    t = rng.normal(size=(2, 4, 16))

    def loss():
        h = ad.relu(ad.conv1d_periodic(x, w1))
        s = ad.irfft_pad(ad.complex_mode_mix(ad.rfft_truncate(h, 5), rk), 16, ad.channel_mean(h))
        y = ad.softplus(ad.add(s, ad.channel_linear(h, w2)))
        return ad.mean(ad.div(ad.l2_norm(ad.sub(y, t)), ad.l2_norm(t)))

    assert ad.gradient_check(loss, [w1, w2, rk]) < 1e-5


# -- linearity properties ------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2**31 - 1))
def test_linear_primitives_are_linear(a, b, seed):
    r = np.random.default_rng(seed)
    x, y = r.normal(size=(2, 3, 8)), r.normal(size=(2, 3, 8))
    w = r.normal(size=(4, 3, 3))
    f = lambda v: ad.conv1d_periodic(v, w).data  # noqa: E731
    np.testing.assert_allclose(f(a * x + b * y), a * f(x) + b * f(y), atol=1e-12)
    wl = r.normal(size=(4, 3))
    g = lambda v: ad.channel_linear(v, wl).data  # noqa: E731
    np.testing.assert_allclose(g(a * x + b * y), a * g(x) + b * g(y), atol=1e-12)
    zx = r.normal(size=(3, 5)) + 1j * r.normal(size=(3, 5))
    zy = r.normal(size=(3, 5)) + 1j * r.normal(size=(3, 5))
    wm = r.normal(size=(5, 3, 3)) + 1j * r.normal(size=(5, 3, 3))
    h = lambda v: ad.complex_mode_mix(v, wm).data  # noqa: E731
    np.testing.assert_allclose(h(a * zx + b * zy), a * h(zx) + b * h(zy), atol=1e-12)
