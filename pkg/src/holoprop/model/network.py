"""Layered convergent networks (MLP and CNN) with a softmax readout.

State convention: ``layers[l-1]`` holds the activities ``s_l`` of layer ``l``
(already passed through the activation), ``l = 1..L``. Layer 0 is the clamped
input ``x`` and layer ``L`` is the softmax readout. One synchronous update is

    s_l     <- act(f_l(W_l, s_{l-1}) + J_l+1^T s_{l+1} + b_l + noise)   l < L-1
    s_{L-1} <- act(f_{L-1}(W_{L-1}, s_{L-2}) + beta W_L^T (y - s_L) + b_{L-1} + noise)
    s_L     <- softmax(W_L s_{L-1} + b_L)

where ``f_l`` is ``W s`` for dense connections and ``pool(W * s)`` for conv
connections, and ``J_l+1^T`` is the transposed Jacobian of ``f_l+1`` with
respect to its input (``W^T`` for dense layers).

Fixed points are stationary points of

    F = sum_l G(s_l) - sum_l <s_l, f_l(W_l, s_{l-1})> - sum_l <b_l, s_l> + beta * loss

with ``G' = act^{-1}``, so ``dF/dW_l = -d<s_l, f_l>/dW_l`` (the Hebbian product
``-s_l s_{l-1}^T`` for dense layers) and ``dF/db_l = -s_l``. The readout loss
``-y . log softmax(W_L s_{L-1} + b_L)`` carries the output-layer parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import tensor
from ..params import Params
from .activations import get_activation, softmax
from .pooling import PoolCache, pool_curvature_vjp, pool_jvp, pooled_size, softmax_pool, softmax_unpool


INIT_SCHEMES = ("fan_in", "glorot")


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description.

    For ``kind="mlp"`` ``layer_sizes`` lists every layer including input and
    output. For ``kind="cnn"`` ``layer_sizes`` lists the fully connected layers
    after the conv stack (hidden sizes then the class count) and
    ``input_shape`` is ``(C, H, W)``.
    """

    kind: str = "mlp"
    layer_sizes: tuple = (6, 4, 4, 4)
    input_shape: tuple = ()
    channels: tuple = ()
    kernel_sizes: tuple = ()
    strides: tuple = ()
    paddings: tuple = ()
    pool_window: int = 2
    pool_stride: int = 2
    pool_tau: float = 1.0
    activation: str = "shifted_sigmoid"
    noise_std: float = 0.0
    init_scale: float = 1.0
    init: str = "fan_in"

    def __post_init__(self):
        for name in ("layer_sizes", "input_shape", "channels", "kernel_sizes", "strides", "paddings"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        get_activation(self.activation)
        if self.kind not in ("mlp", "cnn"):
            raise ValueError(f"unknown network kind {self.kind!r}")
        if self.init not in INIT_SCHEMES:
            raise ValueError(f"unknown init scheme {self.init!r}; choose from {sorted(INIT_SCHEMES)}")
        if self.pool_tau <= 0:
            raise ValueError("pool_tau must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.kind == "mlp":
            if len(self.layer_sizes) < 3:
                raise ValueError("an MLP needs input, at least one hidden layer, and an output layer")
        else:
            n = len(self.channels)
            if n == 0 or len(self.input_shape) != 3:
                raise ValueError("a CNN needs input_shape (C, H, W) and at least one conv layer")
            if not (len(self.kernel_sizes) == len(self.strides) == len(self.paddings) == n):
                raise ValueError("kernel_sizes, strides and paddings must match channels")
            if len(self.layer_sizes) < 1:
                raise ValueError("a CNN needs at least the output layer size")
            if len(self.layer_sizes) == 1 and n < 1:
                raise ValueError("a CNN needs at least one hidden layer")

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class NetworkState:
    layers: list
    x: np.ndarray | None = None

    def copy(self) -> "NetworkState":
        return NetworkState([np.array(s, copy=True) for s in self.layers], self.x)

    def conj(self) -> "NetworkState":
        return NetworkState([np.conj(s) for s in self.layers], self.x)

    @property
    def output(self):
        return self.layers[-1]


class DenseConnection:
    kind = "dense"

    def __init__(self, in_shape: tuple, out_size: int):
        self.in_shape = tuple(in_shape)
        self.in_size = int(np.prod(in_shape))
        self.out_shape = (out_size,)

    def weight_shape(self):
        return (self.out_shape[0], self.in_size)

    def fans(self):
        return self.in_size, self.out_shape[0]

    def forward(self, w, a):
        return tensor.mixed_matmul(a.reshape(len(a), -1), w.T), None

    def input_vjp(self, w, a, cache, g):
        return tensor.mixed_matmul(g, w).reshape(a.shape)

    def weight_vjp(self, w, a, cache, g):
        return g.T @ a.reshape(len(a), -1)

    def feedback_vjp(self, w, a, cache, a_next, mu):
        """Gradients of ``<mu, input_vjp(w, a, ., a_next)>`` w.r.t. ``(a, a_next, w)``."""
        mu_flat = mu.reshape(len(mu), -1)
        return None, mu_flat @ w.T, a_next.T @ mu_flat


class ConvConnection:
    kind = "conv"

    def __init__(self, in_shape: tuple, channels: int, kernel: int, stride: int, padding: int,
                 pool_window: int, pool_stride: int, tau: float):
        c, h, w = in_shape
        self.in_shape = tuple(in_shape)
        self.channels, self.kernel, self.stride, self.padding = channels, kernel, stride, padding
        self.pool_window, self.pool_stride, self.tau = pool_window, pool_stride, tau
        ho = tensor.conv_output_size(h, kernel, stride, padding)
        wo = tensor.conv_output_size(w, kernel, stride, padding)
        self.conv_shape = (channels, ho, wo)
        self.out_shape = (channels, pooled_size(ho, pool_window, pool_stride),
                          pooled_size(wo, pool_window, pool_stride))

    def weight_shape(self):
        return (self.channels, self.in_shape[0], self.kernel, self.kernel)

    def fans(self):
        k2 = self.kernel * self.kernel
        return self.in_shape[0] * k2, self.channels * k2

    def forward(self, w, a):
        z = tensor.conv2d(w, a, self.stride, self.padding)
        return softmax_pool(z, self.pool_window, self.pool_stride, self.tau)

    def _conv_t(self, w, g):
        return tensor.conv2d_transpose(w, g, self.in_shape[1:], self.stride, self.padding)

    def _conv_w(self, a, g):
        return tensor.conv2d_weight_grad(a, g, (self.kernel, self.kernel), self.stride, self.padding)

    def input_vjp(self, w, a, cache: PoolCache, g):
        return self._conv_t(w, softmax_unpool(g, cache))

    def weight_vjp(self, w, a, cache: PoolCache, g):
        return self._conv_w(a, softmax_unpool(g, cache))

    def feedback_vjp(self, w, a, cache: PoolCache, a_next, mu):
        nu = tensor.conv2d(w, mu, self.stride, self.padding)
        d_next = pool_jvp(cache, nu)
        dz = pool_curvature_vjp(cache, a_next, nu)
        d_a = self._conv_t(w, dz)
        d_w = self._conv_w(mu, softmax_unpool(a_next, cache)) + self._conv_w(a, dz)
        return d_a, d_next, d_w


def _per_sample(beta, ndim: int):
    """Reshape a scalar or per-sample ``beta`` to broadcast against ``(B, ...)``."""
    beta = np.asarray(beta)
    if beta.ndim == 0:
        return beta[()]
    return beta.reshape((-1,) + (1,) * (ndim - 1))


def _bias_shape(b, ndim):
    return b.reshape((1, -1) + (1,) * (ndim - 2))


class Network:
    """Dynamics, local gradients and readout for a :class:`NetworkSpec`."""

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.act, self.act_prime = get_activation(spec.activation)
        conns: list = []
        if spec.kind == "mlp":
            shape = (spec.layer_sizes[0],)
            sizes = spec.layer_sizes[1:]
        else:
            shape = spec.input_shape
            for ch, k, st, p in zip(spec.channels, spec.kernel_sizes, spec.strides, spec.paddings):
                conn = ConvConnection(shape, ch, k, st, p, spec.pool_window, spec.pool_stride, spec.pool_tau)
                conns.append(conn)
                shape = conn.out_shape
            sizes = spec.layer_sizes
        for n in sizes:
            conn = DenseConnection(shape, n)
            conns.append(conn)
            shape = conn.out_shape
        self.connections = conns
        self.n_layers = len(conns)
        self.input_shape = conns[0].in_shape
        self.shapes = [c.out_shape for c in conns]

    # -- parameters -----------------------------------------------------

    def init_params(self, rng: np.random.Generator) -> Params:
        """Uniform weights scaled by ``init_scale``.

        ``fan_in``: weights and biases in ``+-1/sqrt(fan_in)``.
        ``glorot``: weights in ``+-sqrt(6/(fan_in+fan_out))``, zero biases.
        """
        params = {}
        scale = self.spec.init_scale
        for l, conn in enumerate(self.connections, start=1):
            fan_in, fan_out = conn.fans()
            if self.spec.init == "glorot":
                bound = scale * np.sqrt(6.0 / (fan_in + fan_out))
                params[f"W{l}"] = rng.uniform(-bound, bound, size=conn.weight_shape())
                params[f"b{l}"] = np.zeros(conn.out_shape[0])
            else:
                bound = scale / np.sqrt(fan_in)
                params[f"W{l}"] = rng.uniform(-bound, bound, size=conn.weight_shape())
                params[f"b{l}"] = rng.uniform(-bound, bound, size=conn.out_shape[0])
        return params

    def check_params(self, params: Params):
        for l, conn in enumerate(self.connections, start=1):
            w, b = params[f"W{l}"], params[f"b{l}"]
            if w.shape != conn.weight_shape() or b.shape != (conn.out_shape[0],):
                raise tensor.ShapeError(f"layer {l}: got W{w.shape} b{b.shape}, expected "
                                        f"W{conn.weight_shape()} b{(conn.out_shape[0],)}")

    # -- state ------------------------------------------------------------

    def zero_state(self, batch: int, dtype=np.float64) -> NetworkState:
        return NetworkState([np.zeros((batch,) + s, dtype=dtype) for s in self.shapes])

    def prepare_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            x = x.reshape((len(x),) + self.input_shape)
        return x

    def input_drive(self, params: Params, x):
        """Forward term of the first connection; constant while the input is clamped."""
        return self.connections[0].forward(params["W1"], x)

    # -- dynamics ---------------------------------------------------------

    def _forward_all(self, params, layers, x, drive):
        acts = [x] + list(layers)
        ffs, caches = [None] * (self.n_layers + 1), [None] * (self.n_layers + 1)
        ffs[1], caches[1] = drive if drive is not None else self.input_drive(params, x)
        for l in range(2, self.n_layers):
            ffs[l], caches[l] = self.connections[l - 1].forward(params[f"W{l}"], acts[l - 1])
        return acts, ffs, caches

    def preactivations(self, params, layers, x, y, beta, drive=None):
        """Hidden-layer inputs of one synchronous step plus the forward caches."""
        L = self.n_layers
        acts, ffs, caches = self._forward_all(params, layers, x, drive)
        hs = []
        for l in range(1, L):
            h = ffs[l] + _bias_shape(params[f"b{l}"], ffs[l].ndim)
            if l < L - 1:
                h = h + self.connections[l].input_vjp(params[f"W{l+1}"], acts[l], caches[l + 1], acts[l + 1])
            elif np.any(beta):
                err = _per_sample(beta, 2) * (y - acts[L])
                h = h + tensor.mixed_matmul(err, params[f"W{L}"]).reshape(h.shape)
            hs.append(h)
        return hs, acts, caches

    def readout(self, params, hidden_last):
        L = self.n_layers
        flat = hidden_last.reshape(len(hidden_last), -1)
        return softmax(tensor.mixed_matmul(flat, params[f"W{L}"].T) + params[f"b{L}"])

    def update(self, params, state: NetworkState, x, y, beta=0.0, drive=None,
               noise_std: float = 0.0, rng: np.random.Generator | None = None) -> NetworkState:
        hs, _, _ = self.preactivations(params, state.layers, x, y, beta, drive)
        if noise_std > 0:
            hs = [h + noise_std * rng.standard_normal(h.shape) for h in hs]
        new = [self.act(h) for h in hs]
        new.append(self.readout(params, state.layers[-2]))
        return NetworkState(new, state.x)

    # -- energy-based quantities ------------------------------------------

    def param_grad(self, params, state: NetworkState, x, y, beta) -> Params:
        """dF/dtheta at ``state`` for nudging ``beta``, averaged over the batch."""
        L = self.n_layers
        layers = state.layers
        acts, ffs, caches = self._forward_all(params, layers, x, None)
        batch = len(x)
        grads = {}
        for l in range(1, L):
            conn = self.connections[l - 1]
            s = acts[l]
            grads[f"W{l}"] = -conn.weight_vjp(params[f"W{l}"], acts[l - 1], caches[l], s) / batch
            axes = (0,) + tuple(range(2, s.ndim))
            grads[f"b{l}"] = -np.sum(s, axis=axes) / batch
        p = self.readout(params, acts[L - 1])
        err = _per_sample(beta, 2) * (p - y)
        grads[f"W{L}"] = err.T @ acts[L - 1].reshape(batch, -1) / batch
        grads[f"b{L}"] = np.sum(err, axis=0) / batch
        return grads

    def loss(self, params, state: NetworkState, y):
        """Per-sample cross entropy of the readout recomputed from ``s_{L-1}``."""
        p = self.readout(params, state.layers[-2])
        return -np.sum(y * np.log(p), axis=1)

    def predict(self, state: NetworkState):
        return np.argmax(np.real(state.layers[-1]), axis=1)

    # -- reverse pass for the real free-phase step (oracle support) -----------

    def step_vjp(self, params, state: NetworkState, x, cot: list):
        """Pull cotangents on the next hidden states back through one beta=0 step.

        ``cot`` lists cotangents for layers ``1..L-1``. Returns the cotangents
        on the previous hidden states and the parameter gradient contribution.
        """
        L = self.n_layers
        hs, acts, caches = self.preactivations(params, state.layers, x, None, 0.0)
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        prev = [np.zeros_like(a) for a in acts[1:L]]
        for l in range(1, L):
            mu = cot[l - 1] * self.act_prime(hs[l - 1])
            conn = self.connections[l - 1]
            grads[f"W{l}"] += conn.weight_vjp(params[f"W{l}"], acts[l - 1], caches[l], mu)
            grads[f"b{l}"] += np.sum(mu, axis=(0,) + tuple(range(2, mu.ndim)))
            if l >= 2:
                prev[l - 2] += conn.input_vjp(params[f"W{l}"], acts[l - 1], caches[l], mu)
            if l < L - 1:
                nxt = self.connections[l]
                d_a, d_next, d_w = nxt.feedback_vjp(params[f"W{l+1}"], acts[l], caches[l + 1], acts[l + 1], mu)
                if d_a is not None:
                    prev[l - 1] += d_a
                prev[l] += d_next.reshape(prev[l].shape)
                grads[f"W{l+1}"] += d_w
        return prev, grads

    def loss_vjp(self, params, state: NetworkState, y):
        """Cotangents of the batch-mean loss on hidden states and readout parameters."""
        L = self.n_layers
        a = state.layers[-2]
        flat = a.reshape(len(a), -1)
        err = (self.readout(params, a) - y) / len(a)
        cot = [np.zeros_like(s) for s in state.layers[:-1]]
        cot[-1] = (err @ params[f"W{L}"]).reshape(a.shape)
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        grads[f"W{L}"] = err.T @ flat
        grads[f"b{L}"] = np.sum(err, axis=0)
        return cot, grads

    # -- energies in potential coordinates ---------------------------------

    def energy(self, params, potentials: list, x):
        """Per-sample layered Hopfield energy with potentials ``u_l`` and activities ``act(u_l)``.

        The theta-partials equal :meth:`param_grad` evaluated at the
        activities; only the theta-independent self term differs from the
        stationary function of the discrete dynamics.
        """
        acts = [x] + [self.act(u) for u in potentials]
        e = 0.0
        for l in range(1, self.n_layers):
            u = potentials[l - 1]
            ff, _ = self.connections[l - 1].forward(params[f"W{l}"], acts[l - 1])
            b = _bias_shape(params[f"b{l}"], u.ndim)
            axes = tuple(range(1, u.ndim))
            e = e + 0.5 * np.sum(u * u, axis=axes) - np.sum(acts[l] * ff, axis=axes) - np.sum(b * acts[l], axis=axes)
        return e

    def total_energy(self, params, potentials: list, x, y, beta):
        p = self.readout(params, self.act(potentials[-1]))
        return self.energy(params, potentials, x) + beta * (-np.sum(y * np.log(p), axis=1))
