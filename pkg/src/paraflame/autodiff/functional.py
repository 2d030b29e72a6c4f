"""Differentiable primitives used by the operator networks.

Spatial operators work on ``(..., channels, N)`` arrays; any leading axes are
treated as a batch. Every backward rule returns gradients in the real-pair
convention described in :mod:`paraflame.autodiff.tensor`.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.fft import ifft as _ifft
from numpy.fft import irfft as _irfft
from numpy.fft import rfft as _rfft

from .tensor import ShapeError, Tensor, as_tensor

__all__ = [
    "add", "sub", "mul", "div", "neg", "index", "reshape", "sum", "mean",
    "real", "imag", "square", "relu", "softplus", "l2_norm", "gather_last", "channel_mean",
    "conv1d_periodic", "channel_linear", "dense", "mlp", "rfft_truncate",
    "irfft_pad", "complex_mode_mix", "maxpool1d", "upsample1d", "concat_channels",
]


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...], real: bool) -> np.ndarray:
    if real and np.iscomplexobj(g):
        g = g.real
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return np.asarray(g).reshape(shape)


def _needs_real(t: Tensor) -> bool:
    return not t.is_complex


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return (_unbroadcast(g, a.shape, _needs_real(a)),
                _unbroadcast(g, b.shape, _needs_real(b)))

    return Tensor._from_op(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return (_unbroadcast(g, a.shape, _needs_real(a)),
                _unbroadcast(-g, b.shape, _needs_real(b)))

    return Tensor._from_op(a.data - b.data, (a, b), bw, "sub")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = g * np.conj(b.data) if b.is_complex else g * b.data
        gb = g * np.conj(a.data) if a.is_complex else g * a.data
        return (_unbroadcast(ga, a.shape, _needs_real(a)),
                _unbroadcast(gb, b.shape, _needs_real(b)))

    return Tensor._from_op(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if b.is_complex:
        raise TypeError("division by a complex tensor is not supported")
    out = a.data / b.data

    def bw(g):
        ga = g / b.data
        gb = -(g * np.conj(out)).real / b.data if a.is_complex else -g * out / b.data
        return (_unbroadcast(ga, a.shape, _needs_real(a)),
                _unbroadcast(gb, b.shape, True))

    return Tensor._from_op(out, (a, b), bw, "div")


def real(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(a.data.real, (a,), lambda g: (g.astype(a.dtype),), "real")


def imag(a) -> Tensor:
    a = as_tensor(a)
    if not a.is_complex:
        return Tensor._from_op(np.zeros(a.shape), (a,), lambda g: (np.zeros(a.shape),), "imag")
    return Tensor._from_op(a.data.imag, (a,), lambda g: (1j * g,), "imag")


def square(a) -> Tensor:
    a = as_tensor(a)
    if a.is_complex:
        raise TypeError("square expects a real tensor")
    return Tensor._from_op(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def relu(a) -> Tensor:
    a = as_tensor(a)
    if a.is_complex:
        raise TypeError("relu expects a real tensor")
    mask = a.data > 0.0  # subgradient 0 at exactly 0
    return Tensor._from_op(np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def softplus(a) -> Tensor:
    a = as_tensor(a)
    if a.is_complex:
        raise TypeError("softplus expects a real tensor")
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return Tensor._from_op(out, (a,), lambda g: (g * sig,), "softplus")


# -- structural ------------------------------------------------------------------

def index(a, key) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        out = np.zeros_like(a.data)
        np.add.at(out, key, g)
        return (out,)

    return Tensor._from_op(a.data[key], (a,), bw, "index")


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._from_op(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return div(sum(a, axis=axis, keepdims=keepdims), float(count))


def l2_norm(a, axis: int = -1) -> Tensor:
    """Euclidean norm over ``axis``; the gradient at a zero vector is zero."""
    a = as_tensor(a)
    if a.is_complex:
        raise TypeError("l2_norm expects a real tensor")
    out = np.sqrt((a.data * a.data).sum(axis=axis))

    def bw(g):
        n = np.expand_dims(out, axis)
        safe = np.where(n > 0.0, n, 1.0)
        return (np.where(n > 0.0, a.data / safe, 0.0) * np.expand_dims(g, axis),)

    return Tensor._from_op(out, (a,), bw, "l2_norm")


def gather_last(a, idx: np.ndarray) -> Tensor:
    """``a[..., idx]`` for an integer index vector."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    onehot = np.zeros((idx.size, a.shape[-1]))
    onehot[np.arange(idx.size), idx] = 1.0
    return Tensor._from_op(a.data[..., idx], (a,), lambda g: (g @ onehot,), "gather")


def channel_mean(a) -> Tensor:
    """Spatial mean of each channel: ``(..., c, N) -> (..., c)``."""
    a = as_tensor(a)
    n = a.shape[-1]
    return Tensor._from_op(a.data.mean(axis=-1), (a,),
                           lambda g: (np.repeat(g[..., None] / n, n, axis=-1),), "channel_mean")


def concat_channels(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("concat_channels expects (..., c, N) tensors")
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"spatial extent mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"batch shape mismatch: {a.shape[:-2]} vs {b.shape[:-2]}")
    c1 = a.shape[-2]
    return Tensor._from_op(np.concatenate([a.data, b.data], axis=-2), (a, b),
                           lambda g: (g[..., :c1, :], g[..., c1:, :]), "concat")


def maxpool1d(a) -> Tensor:
    a = as_tensor(a)
    n = a.shape[-1]
    if n % 2:
        raise ShapeError(f"maxpool1d needs an even spatial extent, got N={n}")
    pairs = a.data.reshape(a.shape[:-1] + (n // 2, 2))
    take_right = pairs[..., 1] > pairs[..., 0]  # ties go to the lower index
    out = np.where(take_right, pairs[..., 1], pairs[..., 0])

    def bw(g):
        gx = np.zeros(pairs.shape)
        gx[..., 0] = np.where(take_right, 0.0, g)
        gx[..., 1] = np.where(take_right, g, 0.0)
        return (gx.reshape(a.shape),)

    return Tensor._from_op(out, (a,), bw, "maxpool1d")


def upsample1d(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return (g.reshape(g.shape[:-1] + (-1, 2)).sum(axis=-1),)

    return Tensor._from_op(np.repeat(a.data, 2, axis=-1), (a,), bw, "upsample1d")


# -- linear maps -----------------------------------------------------------------

def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape((-1,) + x.shape[-2:])


def _outer_sum(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``sum_{batch, j} g[..., o, j] x[..., i, j]``; batched matmul beats tensordot here."""
    return (_flat(g) @ _flat(x).transpose(0, 2, 1)).sum(axis=0)


def channel_linear(x, weight, bias=None) -> Tensor:
    """Pointwise-in-space affine map over the channel axis."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim < 2:
        raise ShapeError(f"channel_linear expects (..., c_in, N), got {x.shape}")
    c_out, c_in = weight.shape
    if x.shape[-2] != c_in:
        raise ShapeError(f"input channel dimension {x.shape[-2]} != weight c_in {c_in}")
    out = weight.data @ x.data
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"bias shape {bias.shape} != ({c_out},)")
        out += bias.data[:, None]
        parents.append(bias)

    def bw(g):
        gx = weight.data.T @ g
        gw = _outer_sum(g, x.data)
        grads = [gx, gw]
        if bias is not None:
            grads.append(_flat(g).sum(axis=(0, 2)))
        return grads

    return Tensor._from_op(out, parents, bw, "channel_linear")


def dense(x, weight, bias=None) -> Tensor:
    """Affine map over the last axis: ``x @ weight.T + bias``."""
    x, weight = as_tensor(x), as_tensor(weight)
    c_out, c_in = weight.shape
    if x.shape[-1] != c_in:
        raise ShapeError(f"input feature dimension {x.shape[-1]} != weight d_in {c_in}")
    out = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"bias shape {bias.shape} != ({c_out},)")
        out = out + bias.data
        parents.append(bias)

    def bw(g):
        g2 = g.reshape(-1, c_out)
        grads = [g @ weight.data, g2.T @ x.data.reshape(-1, c_in)]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return Tensor._from_op(out, parents, bw, "dense")


_ACTIVATIONS: dict[str | None, Callable | None] = {
    None: None, "linear": None, "relu": relu, "softplus": softplus,
}


def mlp(x, layers: Sequence[tuple], spatial: bool = False) -> Tensor:
    """Chain of affine maps and activations.

    ``layers`` holds ``(weight, bias, activation)`` triples; ``activation`` is
    one of ``None``, ``"relu"``, ``"softplus"`` or a callable. With
    ``spatial=True`` features sit on axis -2 and the net acts pointwise in x.
    """
    h = as_tensor(x)
    for weight, bias, act in layers:
        h = channel_linear(h, weight, bias) if spatial else dense(h, weight, bias)
        fn = _ACTIVATIONS[act] if act is None or isinstance(act, str) else act
        if fn is not None:
            h = fn(h)
    return h


def conv1d_periodic(x, kernel, bias=None) -> Tensor:
    """Width-3 convolution with periodic padding and stride 1.

    ``out[o, j] = bias[o] + sum_{i,k} kernel[o, i, k+1] * x[i, (j+k) mod N]``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim < 2:
        raise ShapeError(f"conv1d_periodic expects (..., c_in, N), got {x.shape}")
    if kernel.ndim != 3 or kernel.shape[2] != 3:
        raise ShapeError(f"kernel must be (c_out, c_in, 3), got {kernel.shape}")
    c_out, c_in, _ = kernel.shape
    if x.shape[-2] != c_in:
        raise ShapeError(f"input channel dimension {x.shape[-2]} != kernel c_in {c_in}")
    n = x.shape[-1]
    if n < 3:
        raise ShapeError(f"spatial dimension N={n} must be at least 3")
    # stacked[..., k*c_in + i, j] = x[..., i, (j + k - 1) mod N]
    stacked = np.concatenate([np.roll(x.data, 1 - k, axis=-1) for k in range(3)], axis=-2)
    wflat = kernel.data.transpose(0, 2, 1).reshape(c_out, 3 * c_in)
    out = wflat @ stacked
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"bias shape {bias.shape} != ({c_out},)")
        out += bias.data[:, None]
        parents.append(bias)

    def bw(g):
        gs = wflat.T @ g
        gx = np.zeros(x.shape)
        for k in range(3):
            gx += np.roll(gs[..., k * c_in:(k + 1) * c_in, :], k - 1, axis=-1)
        gw = _outer_sum(g, stacked)
        grads = [gx, gw.reshape(c_out, 3, c_in).transpose(0, 2, 1)]
        if bias is not None:
            grads.append(_flat(g).sum(axis=(0, 2)))
        return grads

    return Tensor._from_op(out, parents, bw, "conv1d_periodic")


# -- spectral --------------------------------------------------------------------

def _check_modes(n: int, kmax: int) -> None:
    if n % 2:
        raise ShapeError(f"spectral ops need an even grid size, got N={n}")
    if not 1 <= kmax <= n // 2:
        raise ShapeError(f"kmax={kmax} outside [1, N/2={n // 2}]")


def rfft_truncate(x, kmax: int) -> Tensor:
    """Fourier coefficients for wavenumbers 1..kmax along the last axis.

    Unnormalized forward DFT: ``X_k = sum_j x_j exp(-2 pi i k j / N)``.
    """
    x = as_tensor(x)
    if x.is_complex:
        raise TypeError("rfft_truncate expects a real tensor")
    n = x.shape[-1]
    _check_modes(n, kmax)
    out = _rfft(x.data, axis=-1)[..., 1:kmax + 1]

    def bw(g):
        full = np.zeros(x.shape, dtype=np.complex128)
        full[..., 1:kmax + 1] = g
        return (n * _ifft(full, axis=-1).real,)

    return Tensor._from_op(out, (x,), bw, "rfft_truncate")


def irfft_pad(modes, n: int, dc) -> Tensor:
    """Real field from wavenumbers 1..kmax plus a mean value ``dc``.

    Modes above kmax are zero. ``dc`` is the spatial mean of the result, so
    ``irfft_pad(rfft_truncate(x, N/2), N, mean(x)) == x``.
    """
    modes, dc = as_tensor(modes), as_tensor(dc)
    kmax = modes.shape[-1]
    _check_modes(n, kmax)
    if dc.shape != modes.shape[:-1]:
        raise ShapeError(f"dc shape {dc.shape} != leading modes shape {modes.shape[:-1]}")
    spec = np.zeros(modes.shape[:-1] + (n // 2 + 1,), dtype=np.complex128)
    spec[..., 0] = dc.data * n
    spec[..., 1:kmax + 1] = modes.data
    out = _irfft(spec, n=n, axis=-1)

    def bw(g):
        gspec = _rfft(g, axis=-1)
        gmodes = gspec[..., 1:kmax + 1] * (2.0 / n)
        if kmax == n // 2:
            gmodes[..., -1] = gspec[..., n // 2].real / n
        return (gmodes, gspec[..., 0].real.copy())

    return Tensor._from_op(out, (modes, dc), bw, "irfft_pad")


def complex_mode_mix(modes, weights) -> Tensor:
    """Per-wavenumber channel mixing ``out[..., i, k] = sum_j W[k, i, j] X[..., j, k]``.

    ``modes`` is ``(..., d_in, kmax)`` and ``weights`` is ``(kmax, d_out, d_in)``.
    """
    modes, weights = as_tensor(modes), as_tensor(weights)
    if weights.ndim != 3:
        raise ShapeError(f"weights must be (kmax, d_out, d_in), got {weights.shape}")
    kmax, d_out, d_in = weights.shape
    if modes.shape[-1] != kmax:
        raise ShapeError(f"modes kmax {modes.shape[-1]} != weights kmax {kmax}")
    if modes.shape[-2] != d_in:
        raise ShapeError(f"modes channel dimension {modes.shape[-2]} != weights d_in {d_in}")
    lead = modes.shape[:-2]
    xt = np.moveaxis(modes.data.reshape((-1, d_in, kmax)), -1, 0)  # (K, M, d_in)
    wt = weights.data.transpose(0, 2, 1)
    out = np.moveaxis(xt @ wt, 0, -1).reshape(lead + (d_out, kmax))

    def bw(g):
        gt = np.moveaxis(g.reshape((-1, d_out, kmax)), -1, 0)  # (K, M, d_out)
        gx = np.moveaxis(gt @ np.conj(weights.data), 0, -1).reshape(modes.shape)
        gw = gt.transpose(0, 2, 1) @ np.conj(xt)
        return (_unbroadcast(gx, modes.shape, _needs_real(modes)),
                _unbroadcast(gw, weights.shape, _needs_real(weights)))

    return Tensor._from_op(out, (modes, weights), bw, "complex_mode_mix")
