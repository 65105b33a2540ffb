"""One-unit linear model with closed-form fixed points.

Energy ``E = s^2/2 - theta*s``, loss ``(s - y)^2 / 2``. The update
``s <- theta + beta*(y - s)`` has fixed point ``(theta + beta*y) / (1 + beta)``
and converges for ``|beta| < 1``. With ``instant=True`` every step jumps
straight to that fixed point (infinitely fast settling).
"""

from __future__ import annotations

import numpy as np

from .network import NetworkState


class ScalarToy:
    n_layers = 1

    def __init__(self, instant: bool = False):
        self.instant = instant

    def init_params(self, rng=None, theta: float = 2.0):
        return {"theta": np.array([float(theta)])}

    def check_params(self, params):
        if params.keys() != {"theta"}:
            raise KeyError("toy parameters are {'theta'}")

    def zero_state(self, batch: int, dtype=np.float64) -> NetworkState:
        return NetworkState([np.zeros((batch, 1), dtype=dtype)])

    def prepare_input(self, x):
        return np.asarray(x, dtype=np.float64).reshape(len(x), -1)

    def input_drive(self, params, x):
        return None

    def update(self, params, state, x, y, beta=0.0, drive=None, noise_std=0.0, rng=None):
        s = state.layers[0]
        beta = np.asarray(beta)
        if beta.ndim:
            beta = beta.reshape(-1, 1)
        theta = params["theta"][0]
        if self.instant:
            new = self.fixed_point(theta, y, beta) + 0 * s
        elif np.any(beta):
            new = theta + beta * (y - s)
        else:
            new = np.full_like(s, theta)
        if noise_std > 0:
            new = new + noise_std * rng.standard_normal(new.shape)
        return NetworkState([new], state.x)

    def param_grad(self, params, state, x, y, beta):
        return {"theta": np.array([-np.mean(state.layers[0])])}

    def loss(self, params, state, y):
        return 0.5 * np.sum((state.layers[0] - y) ** 2, axis=1)

    def predict(self, state):
        return np.zeros(len(state.layers[0]), dtype=int)

    def step_vjp(self, params, state, x, cot):
        return [np.zeros_like(cot[0])], {"theta": np.array([np.sum(cot[0])])}

    def loss_vjp(self, params, state, y):
        s = state.layers[0]
        return [(s - y) / len(s)], {"theta": np.zeros(1)}

    def energy(self, params, potentials, x):
        s = potentials[0][:, 0]
        return 0.5 * s * s - params["theta"][0] * s

    def total_energy(self, params, potentials, x, y, beta):
        s = potentials[0][:, 0]
        return self.energy(params, potentials, x) + beta * 0.5 * (s - y[:, 0]) ** 2

    # closed forms used as test oracles
    @staticmethod
    def fixed_point(theta, y, beta):
        return (theta + beta * y) / (1.0 + beta)
