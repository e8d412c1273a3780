"""Multilayer perceptron surrogate with hand-written reverse-mode gradients.

The network maps ``(B, D_i)`` batches to ``(B, D_o)``.  Hidden layers are
``affine -> [LayerNorm] -> activation``; the output layer is affine only.
Gradients are available both for the parameters (training) and for the
inputs (vector-Jacobian products used to steer the black-box inputs).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

CHECKPOINT_VERSION = 1

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    """Exact GELU, ``x * Phi(x)`` with ``Phi`` the standard normal CDF."""
    return x * ndtr(x)


def gelu_grad(x):
    """Derivative of :func:`gelu`: ``Phi(x) + x * phi(x)``."""
    return ndtr(x) + x * _INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


def _gelu_fwd(a):
    cdf = ndtr(a)
    return a * cdf, cdf


def _gelu_bwd(a, cdf):
    return cdf + a * _INV_SQRT_2PI * np.exp(-0.5 * np.square(a))


# forward returns (value, saved); backward(pre-activation, saved) -> derivative
_ACTIVATIONS = {
    "gelu": (_gelu_fwd, _gelu_bwd),
    "identity": (lambda x: (x, None), lambda x, _: np.ones_like(x)),
}


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 < b < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {b}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


class AdamState:
    """First/second moment accumulators for a set of named arrays."""

    def __init__(self, shapes: dict[str, tuple]):
        self.step = 0
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}

    def copy(self) -> "AdamState":
        new = AdamState({})
        new.step = self.step
        new.m = {k: a.copy() for k, a in self.m.items()}
        new.v = {k: a.copy() for k, a in self.v.items()}
        return new

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               config: AdamConfig) -> None:
        """Apply one bias-corrected Adam step to ``params`` in place."""
        for name, g in grads.items():
            if name not in params:
                raise KeyError(f"gradient for unknown tensor {name!r}")
            if np.shape(g) != params[name].shape:
                raise ValueError(
                    f"gradient shape {np.shape(g)} does not match tensor {name!r} "
                    f"of shape {params[name].shape}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in tensor {name!r}")
        self.step += 1
        b1, b2 = config.beta1, config.beta2
        c1 = 1.0 - b1 ** self.step
        c2 = 1.0 - b2 ** self.step
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            params[name] -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.epsilon)


class MlpSurrogate:
    """Fully connected network ``F_hat(x; theta)``.

    Parameters
    ----------
    layer_dims : sequence of int
        ``[D_i, hidden..., D_o]``.
    layernorm : bool or sequence of bool
        LayerNorm after the affine map of each hidden layer.
    activation : {"gelu", "identity"}
    seed : int
        Seed for the Glorot-uniform weight initialization; biases start at 0.
    """

    def __init__(self, layer_dims, layernorm=False, activation="gelu", seed=0,
                 layernorm_eps=1e-5):
        self.layer_dims = [int(d) for d in layer_dims]
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ValueError(f"invalid layer_dims {layer_dims!r}")
        n_hidden = len(self.layer_dims) - 2
        if isinstance(layernorm, (bool, np.bool_)):
            layernorm = [bool(layernorm)] * n_hidden
        self.layernorm = [bool(f) for f in layernorm]
        if len(self.layernorm) != n_hidden:
            raise ValueError(
                f"need {n_hidden} layernorm flags, got {len(self.layernorm)}")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        self.layernorm_eps = float(layernorm_eps)

        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        for l, (fan_in, fan_out) in enumerate(zip(self.layer_dims[:-1], self.layer_dims[1:])):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            self.params[f"W{l}"] = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            self.params[f"b{l}"] = np.zeros(fan_out)
            if l < n_hidden and self.layernorm[l]:
                self.params[f"gain{l}"] = np.ones(fan_out)
                self.params[f"shift{l}"] = np.zeros(fan_out)
        self.adam = AdamState({k: v.shape for k, v in self.params.items()})

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    def copy(self) -> "MlpSurrogate":
        new = MlpSurrogate.__new__(MlpSurrogate)
        new.layer_dims = list(self.layer_dims)
        new.layernorm = list(self.layernorm)
        new.activation = self.activation
        new.layernorm_eps = self.layernorm_eps
        new.params = {k: v.copy() for k, v in self.params.items()}
        new.adam = self.adam.copy()
        return new

    def _as_batch(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ValueError(
                f"expected input of dimension {self.input_dim}, got shape {x.shape}")
        return X, single

    def _forward(self, X, keep_cache):
        act, _ = _ACTIVATIONS[self.activation]
        cache = []
        h = X
        last = self.n_layers - 1
        for l in range(self.n_layers):
            h_prev = h
            z = h @ self.params[f"W{l}"].T + self.params[f"b{l}"]
            if l == last:
                entry = {"h_in": h}
                h = z
            elif self.layernorm[l]:
                mu = z.mean(axis=1, keepdims=True)
                inv_std = 1.0 / np.sqrt(z.var(axis=1, keepdims=True) + self.layernorm_eps)
                zhat = (z - mu) * inv_std
                a = zhat * self.params[f"gain{l}"] + self.params[f"shift{l}"]
                h, saved = act(a)
                entry = {"h_in": h_prev, "zhat": zhat, "inv_std": inv_std, "a": a, "saved": saved}
            else:
                h, saved = act(z)
                entry = {"h_in": h_prev, "a": z, "saved": saved}
            if keep_cache:
                cache.append(entry)
        return h, cache

    def forward(self, x):
        """Evaluate the network on a vector ``(D_i,)`` or batch ``(B, D_i)``."""
        X, single = self._as_batch(x)
        out, _ = self._forward(X, keep_cache=False)
        return out[0] if single else out

    __call__ = forward

    def _backward(self, cache, dY, want_params):
        _, act_grad = _ACTIVATIONS[self.activation]
        grads = {}
        delta = dY
        for l in reversed(range(self.n_layers)):
            entry = cache[l]
            if l != self.n_layers - 1:
                delta = delta * act_grad(entry["a"], entry["saved"])
                if self.layernorm[l]:
                    if want_params:
                        grads[f"gain{l}"] = np.sum(delta * entry["zhat"], axis=0)
                        grads[f"shift{l}"] = np.sum(delta, axis=0)
                    dzhat = delta * self.params[f"gain{l}"]
                    zhat = entry["zhat"]
                    delta = entry["inv_std"] * (
                        dzhat
                        - dzhat.mean(axis=1, keepdims=True)
                        - zhat * np.mean(dzhat * zhat, axis=1, keepdims=True))
            if want_params:
                grads[f"W{l}"] = delta.T @ entry["h_in"]
                grads[f"b{l}"] = delta.sum(axis=0)
            delta = delta @ self.params[f"W{l}"]
        return grads, delta

    def forward_backward(self, X, loss_grad_fn):
        """Forward ``X``, get ``(loss, dL/dY)`` from ``loss_grad_fn(Y)``, backprop.

        Returns ``(loss, parameter gradients)``.
        """
        X, _ = self._as_batch(X)
        Y, cache = self._forward(X, keep_cache=True)
        loss, dY = loss_grad_fn(Y)
        grads, _ = self._backward(cache, np.asarray(dY, dtype=float), want_params=True)
        return loss, grads

    def backward_params(self, X, dY):
        """Parameter gradients of ``sum_b dY[b] . F_hat(X[b])``."""
        X, single = self._as_batch(X)
        dY = np.atleast_2d(np.asarray(dY, dtype=float))
        if dY.shape != (X.shape[0], self.output_dim):
            raise ValueError(
                f"upstream gradient shape {dY.shape} does not match "
                f"{(X.shape[0], self.output_dim)}")
        _, cache = self._forward(X, keep_cache=True)
        grads, _ = self._backward(cache, dY, want_params=True)
        return grads

    def input_gradient(self, x, upstream):
        """Vector-Jacobian product ``upstream^T J[F_hat](x)``.

        Works row-wise on batches: ``x`` of shape ``(B, D_i)`` with
        ``upstream`` of shape ``(B, D_o)``.
        """
        X, single = self._as_batch(x)
        U = np.asarray(upstream, dtype=float)
        U = U[None, :] if U.ndim == 1 else U
        if U.shape != (X.shape[0], self.output_dim):
            raise ValueError(
                f"upstream shape {np.shape(upstream)} does not match "
                f"{(X.shape[0], self.output_dim)}")
        _, cache = self._forward(X, keep_cache=True)
        _, dX = self._backward(cache, U, want_params=False)
        return dX[0] if single else dX

    def jacobian(self, x):
        """Full Jacobian ``(D_o, D_i)`` at a single point."""
        x = np.asarray(x, dtype=float)
        X = np.repeat(x[None, :], self.output_dim, axis=0)
        return self.input_gradient(X, np.eye(self.output_dim))

    def adam_step(self, grads, config: AdamConfig) -> "MlpSurrogate":
        self.adam.update(self.params, grads, config)
        return self

    # -- checkpoints ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "layer_dims": self.layer_dims,
            "layernorm": self.layernorm,
            "activation": self.activation,
            "layernorm_eps": self.layernorm_eps,
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                       for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSurrogate":
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
        model = cls(d["layer_dims"], layernorm=d["layernorm"], activation=d["activation"],
                    layernorm_eps=d.get("layernorm_eps", 1e-5))
        for name, blob in d["params"].items():
            if name not in model.params:
                raise ValueError(f"checkpoint tensor {name!r} not in architecture")
            arr = np.asarray(blob["data"], dtype=float).reshape(blob["shape"])
            if arr.shape != model.params[name].shape:
                raise ValueError(f"tensor {name!r} has shape {arr.shape}, "
                                 f"expected {model.params[name].shape}")
            model.params[name] = arr
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "MlpSurrogate":
        return cls.from_dict(json.loads(Path(path).read_text()))


def forward(model: MlpSurrogate, x):
    return model.forward(x)


def backward_params(model: MlpSurrogate, X, dY):
    return model.backward_params(X, dY)


def input_gradient(model: MlpSurrogate, x, upstream):
    return model.input_gradient(x, upstream)


def adam_step(model: MlpSurrogate, grads, config: AdamConfig) -> MlpSurrogate:
    return model.adam_step(grads, config)
