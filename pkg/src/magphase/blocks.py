"""Reusable network blocks: gated weight-normalized convolutions, dense
blocks, the transition layers (down/expand/up/final), the dilated
temporal block, and per-frame fully connected layers.

Every convolution is gated: it carries separate linear and gate
parameter sets, and the two paths run as a single fused convolution
whose output is split and combined as ``lin * sigmoid(gate)``. Weights
are weight-normalized (direction tensor plus per-output-channel scale);
the scale is initialized to the direction norm so a freshly built layer
behaves exactly like its plain uniform fan-in initialization.

Feature maps are ``(batch, channels, d, frames)`` where ``d`` is the
per-frame vector length (frequency bins at full resolution).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import InvalidArgumentError

GROWTH_RATE = 8
DENSE_LAYERS = 4
LEAKY_SLOPE = 0.01
TEMPORAL_DILATIONS = (1, 2, 4, 8)


def _uniform_fanin(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _row_norms(v):
    return np.sqrt((v.reshape(v.shape[0], -1) ** 2).sum(axis=1))


class GatedConv2d:
    """3x3 (or 1x1) gated convolution with weight normalization."""

    def __init__(self, store, name, rng, in_ch, out_ch, kernel=(3, 3)):
        self.in_ch, self.out_ch, self.kernel = in_ch, out_ch, kernel
        fan_in = in_ch * kernel[0] * kernel[1]
        v_lin = _uniform_fanin(rng, (out_ch, in_ch, *kernel), fan_in)
        v_gate = _uniform_fanin(rng, (out_ch, in_ch, *kernel), fan_in)
        self.v_lin = store.create(f"{name}/lin/v", v_lin)
        self.g_lin = store.create(f"{name}/lin/g", _row_norms(v_lin))
        self.v_gate = store.create(f"{name}/gate/v", v_gate)
        self.g_gate = store.create(f"{name}/gate/g", _row_norms(v_gate))
        self.bias = store.create(f"{name}/bias", np.zeros(2 * out_ch))

    def _weight(self):
        w_lin = ad.weight_norm(self.v_lin, self.g_lin)
        w_gate = ad.weight_norm(self.v_gate, self.g_gate)
        return ad.concat([w_lin, w_gate], axis=0)

    def __call__(self, x):
        out = ad.conv2d(x, self._weight(), self.bias)
        return ad.gated(out[:, : self.out_ch], out[:, self.out_ch :])

    @staticmethod
    def param_count(in_ch, out_ch, kernel=(3, 3)):
        w = out_ch * in_ch * kernel[0] * kernel[1]
        return 2 * (w + out_ch) + 2 * out_ch  # two v tensors, two g vectors, fused bias


class GatedConvTranspose2d:
    """Gated 3x3 transposed convolution expanding the d axis."""

    def __init__(self, store, name, rng, in_ch, out_ch, stride):
        self.in_ch, self.out_ch, self.stride = in_ch, out_ch, stride
        fan_in = in_ch * 9
        v_lin = _uniform_fanin(rng, (out_ch, in_ch, 3, 3), fan_in)
        v_gate = _uniform_fanin(rng, (out_ch, in_ch, 3, 3), fan_in)
        self.v_lin = store.create(f"{name}/lin/v", v_lin)
        self.g_lin = store.create(f"{name}/lin/g", _row_norms(v_lin))
        self.v_gate = store.create(f"{name}/gate/v", v_gate)
        self.g_gate = store.create(f"{name}/gate/g", _row_norms(v_gate))
        self.bias = store.create(f"{name}/bias", np.zeros(2 * out_ch))

    def __call__(self, x, target_len):
        w_lin = ad.weight_norm(self.v_lin, self.g_lin)
        w_gate = ad.weight_norm(self.v_gate, self.g_gate)
        w = ad.concat([w_lin, w_gate], axis=0)
        out = ad.transposed_conv2d(x, w, self.bias, stride=self.stride, target_len=target_len)
        return ad.gated(out[:, : self.out_ch], out[:, self.out_ch :])

    @staticmethod
    def param_count(in_ch, out_ch):
        return GatedConv2d.param_count(in_ch, out_ch, (3, 3))


class GatedConv1d:
    """Gated dilated 1-D convolution along the frame axis."""

    def __init__(self, store, name, rng, in_ch, out_ch, dilation, kernel=3):
        self.out_ch, self.dilation = out_ch, dilation
        fan_in = in_ch * kernel
        v_lin = _uniform_fanin(rng, (out_ch, in_ch, kernel), fan_in)
        v_gate = _uniform_fanin(rng, (out_ch, in_ch, kernel), fan_in)
        self.v_lin = store.create(f"{name}/lin/v", v_lin)
        self.g_lin = store.create(f"{name}/lin/g", _row_norms(v_lin))
        self.v_gate = store.create(f"{name}/gate/v", v_gate)
        self.g_gate = store.create(f"{name}/gate/g", _row_norms(v_gate))
        self.bias = store.create(f"{name}/bias", np.zeros(2 * out_ch))

    def __call__(self, x):
        w_lin = ad.weight_norm(self.v_lin, self.g_lin)
        w_gate = ad.weight_norm(self.v_gate, self.g_gate)
        w = ad.concat([w_lin, w_gate], axis=0)
        out = ad.conv1d_dilated(x, w, self.bias, dilation=self.dilation)
        return ad.gated(out[:, : self.out_ch], out[:, self.out_ch :])

    @staticmethod
    def param_count(in_ch, out_ch, kernel=3):
        w = out_ch * in_ch * kernel
        return 2 * (w + out_ch) + 2 * out_ch


class DenseBlock:
    """Four gated 3x3 convolutions with channel growth 8.

    Layer k sees the block input concatenated with all previous layer
    outputs; the block output concatenates the input with the four new
    8-channel maps, so channels go from c to c + 32.
    """

    def __init__(self, store, name, rng, in_ch):
        self.in_ch = in_ch
        self.layers = [
            GatedConv2d(store, f"{name}/layer{k}", rng, in_ch + GROWTH_RATE * k, GROWTH_RATE)
            for k in range(DENSE_LAYERS)
        ]

    @property
    def out_ch(self):
        return self.in_ch + GROWTH_RATE * DENSE_LAYERS

    def __call__(self, x):
        feat = x
        for layer in self.layers:
            feat = ad.concat([feat, layer(feat)], axis=1)
        return feat

    @staticmethod
    def param_count(in_ch):
        return sum(
            GatedConv2d.param_count(in_ch + GROWTH_RATE * k, GROWTH_RATE)
            for k in range(DENSE_LAYERS)
        )


class TransitionDown:
    """1x1 gated convolution then 1x1 average pooling with a stride.

    Keeps the channel count and subsamples the d axis (a 1x1 pool with
    stride s reads every s-th sample).
    """

    def __init__(self, store, name, rng, ch, stride):
        self.stride = stride
        self.conv = GatedConv2d(store, name, rng, ch, ch, kernel=(1, 1))

    def __call__(self, x):
        return ad.avg_pool(self.conv(x), self.stride, axis=2)

    @staticmethod
    def param_count(ch):
        return GatedConv2d.param_count(ch, ch, (1, 1))


class TransitionExpand:
    """1x1 gated convolution mapping any channel count to 16."""

    OUT = 16

    def __init__(self, store, name, rng, in_ch):
        self.conv = GatedConv2d(store, name, rng, in_ch, self.OUT, kernel=(1, 1))

    def __call__(self, x):
        return self.conv(x)

    @staticmethod
    def param_count(in_ch):
        return GatedConv2d.param_count(in_ch, TransitionExpand.OUT, (1, 1))


class TransitionUp:
    """3x3 gated transposed convolution expanding the d axis to 16 channels."""

    OUT = 16

    def __init__(self, store, name, rng, in_ch, stride):
        self.tconv = GatedConvTranspose2d(store, name, rng, in_ch, self.OUT, stride)

    def __call__(self, x, target_len):
        return self.tconv(x, target_len)

    @staticmethod
    def param_count(in_ch):
        return GatedConvTranspose2d.param_count(in_ch, TransitionUp.OUT)


class TransitionFinal:
    """1x1 gated convolution reducing the channel count to 1."""

    def __init__(self, store, name, rng, in_ch):
        self.conv = GatedConv2d(store, name, rng, in_ch, 1, kernel=(1, 1))

    def __call__(self, x):
        return self.conv(x)

    @staticmethod
    def param_count(in_ch):
        return GatedConv2d.param_count(in_ch, 1, (1, 1))


class TemporalBlock:
    """Four gated dilated 1-D convolutions along time (dilations 1,2,4,8).

    Receptive field is 1 + 2 * (1+2+4+8) = 31 frames. A residual add
    connects input to output; when the widths differ the input goes
    through a weight-normalized 1x1 projection first.
    """

    def __init__(self, store, name, rng, in_ch, width):
        self.in_ch, self.width = in_ch, width
        chans = [in_ch] + [width] * DENSE_LAYERS
        self.layers = [
            GatedConv1d(store, f"{name}/layer{k}", rng, chans[k], width, TEMPORAL_DILATIONS[k])
            for k in range(DENSE_LAYERS)
        ]
        if in_ch != width:
            v = _uniform_fanin(rng, (width, in_ch, 1), in_ch)
            self.proj_v = store.create(f"{name}/proj/v", v)
            self.proj_g = store.create(f"{name}/proj/g", _row_norms(v))
        else:
            self.proj_v = None

    def __call__(self, x):
        y = x
        for layer in self.layers:
            y = layer(y)
        if self.proj_v is not None:
            res = ad.conv1d_dilated(x, ad.weight_norm(self.proj_v, self.proj_g), dilation=1)
        else:
            res = x
        return ad.add(y, res)

    @staticmethod
    def param_count(in_ch, width):
        chans = [in_ch] + [width] * DENSE_LAYERS
        total = sum(
            GatedConv1d.param_count(chans[k], width) for k in range(DENSE_LAYERS)
        )
        if in_ch != width:
            total += width * in_ch + width  # projection direction + scale
        return total


class FullyConnected:
    """Per-frame affine map on (batch, features, frames) tensors.

    Applies a leaky ReLU unless flagged as an output layer.
    """

    def __init__(self, store, name, rng, in_dim, out_dim, output_layer=False):
        self.output_layer = output_layer
        self.weight = store.create(f"{name}/w", _uniform_fanin(rng, (out_dim, in_dim), in_dim))
        self.bias = store.create(f"{name}/b", np.zeros(out_dim))

    def __call__(self, x):
        if x.ndim != 3:
            raise InvalidArgumentError("FullyConnected expects (batch, features, frames)")
        out = ad.add(ad.matmul(self.weight, x), ad.reshape(self.bias, (1, -1, 1)))
        if self.output_layer:
            return out
        return ad.leaky_relu(out, LEAKY_SLOPE)

    @staticmethod
    def param_count(in_dim, out_dim):
        return out_dim * in_dim + out_dim
