"""Small multilayer perceptrons on flat parameter vectors, with hand-written backprop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        if len(self.activations) != len(self.widths) - 1:
            raise ValueError("need one activation per layer")
        for act in self.activations:
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")

    @classmethod
    def build(cls, n_in: int, n_out: int, hidden=(256, 256), activation="relu") -> "MlpSpec":
        widths = (n_in, *hidden, n_out)
        return cls(widths, (activation,) * len(hidden) + ("identity",))

    @property
    def num_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.widths[:-1], self.widths[1:]))


class Mlp:
    """Stateless network architecture; parameters live in a flat vector.

    ``forward`` returns the output together with the activations needed by
    ``backward``.
    """

    def __init__(self, spec: MlpSpec):
        self.spec = spec
        self._slices = []
        offset = 0
        for a, b in zip(spec.widths[:-1], spec.widths[1:]):
            w = slice(offset, offset + a * b)
            offset += a * b
            bias = slice(offset, offset + b)
            offset += b
            self._slices.append((w, bias, (a, b)))
        self.num_params = offset

    def init_params(self, rng: np.random.Generator, final_scale: float = 1.0) -> np.ndarray:
        params = np.empty(self.num_params)
        last = len(self._slices) - 1
        for i, (w, b, (n_in, n_out)) in enumerate(self._slices):
            bound = 1.0 / np.sqrt(n_in)
            if i == last:
                bound *= final_scale
            params[w] = rng.uniform(-bound, bound, n_in * n_out)
            params[b] = rng.uniform(-bound, bound, n_out)
        return params

    def layers(self, params: np.ndarray):
        for w, b, shape in self._slices:
            yield params[w].reshape(shape), params[b]

    def forward(self, params: np.ndarray, x: np.ndarray):
        h = x
        cache = [x]
        for (W, b), act in zip(self.layers(params), self.spec.activations):
            z = h @ W + b
            if act == "relu":
                h = np.maximum(z, 0.0)
            elif act == "tanh":
                h = np.tanh(z)
            else:
                h = z
            cache.append(h)
        return h, cache

    def __call__(self, params: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self.forward(params, x)[0]

    def backward(self, params, cache, grad_out, need_input=False, need_params=True):
        """Return (grad wrt params or None, grad wrt input or None)."""
        grad = np.empty(self.num_params) if need_params else None
        g = grad_out
        layers = list(self.layers(params))
        for i in range(len(layers) - 1, -1, -1):
            W, _ = layers[i]
            act = self.spec.activations[i]
            h_out = cache[i + 1]
            if act == "relu":
                g = g * (h_out > 0)
            elif act == "tanh":
                g = g * (1.0 - h_out**2)
            if need_params:
                w_sl, b_sl, _ = self._slices[i]
                grad[w_sl] = (cache[i].T @ g).ravel()
                grad[b_sl] = g.sum(axis=0)
            if i > 0 or need_input:
                g = g @ W.T
        return grad, (g if need_input else None)


class Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        params -= self.lr * grad

    def state_dict(self) -> dict:
        return {}

    def load_state_dict(self, state: dict) -> None:
        pass


class Adam:
    def __init__(self, lr: float, size: int, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m *= self.b1
        self.m += (1 - self.b1) * grad
        self.v *= self.b2
        self.v += (1 - self.b2) * grad * grad
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {"m": self.m.copy(), "v": self.v.copy(), "t": np.array(self.t)}

    def load_state_dict(self, state: dict) -> None:
        self.m = np.array(state["m"], dtype=np.float64)
        self.v = np.array(state["v"], dtype=np.float64)
        self.t = int(state["t"])


def make_optimizer(name: str, lr: float, size: int):
    if name == "sgd":
        return Sgd(lr)
    if name == "adam":
        return Adam(lr, size)
    raise ValueError(f"unknown optimizer {name!r}")
