"""Small multi-head MLP with hand-written backpropagation.

A network is a shared tanh trunk followed by named heads. Each head is a
stack of dense layers with tanh between them and a linear output; squashing
(softmax, sigmoid) happens in the losses and forward helpers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Dense:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    @classmethod
    def glorot(cls, n_in: int, n_out: int, rng: np.random.Generator) -> Dense:
        limit = np.sqrt(6.0 / (n_in + n_out))
        return cls(rng.uniform(-limit, limit, size=(n_out, n_in)), np.zeros(n_out))

    @classmethod
    def zeros(cls, n_in: int, n_out: int) -> Dense:
        return cls(np.zeros((n_out, n_in)), np.zeros(n_out))

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape


class Network:
    def __init__(self, trunk: list[Dense], heads: dict[str, list[Dense]]):
        self.trunk = trunk
        self.heads = heads
        self._check_shapes()

    def _check_shapes(self):
        width = None
        for layer in self.trunk:
            if width is not None and layer.weight.shape[1] != width:
                raise ValueError("trunk layer shapes do not chain")
            width = layer.weight.shape[0]
        for name, layers in self.heads.items():
            w = width
            for layer in layers:
                if w is not None and layer.weight.shape[1] != w:
                    raise ValueError(f"head {name!r} does not chain onto the trunk")
                w = layer.weight.shape[0]

    @property
    def input_size(self) -> int:
        return self.trunk[0].weight.shape[1]

    def output_size(self, head: str) -> int:
        return self.heads[head][-1].weight.shape[0]

    def layers(self):
        for i, layer in enumerate(self.trunk):
            yield f"trunk.{i}", layer
        for name in sorted(self.heads):
            for i, layer in enumerate(self.heads[name]):
                yield f"{name}.{i}", layer

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for name, layer in self.layers():
            out.append((name + ".w", layer.weight))
            out.append((name + ".b", layer.bias))
        return out

    def copy(self) -> Network:
        return Network(
            [Dense(l.weight.copy(), l.bias.copy()) for l in self.trunk],
            {k: [Dense(l.weight.copy(), l.bias.copy()) for l in v] for k, v in self.heads.items()},
        )

    def frozen(self) -> Network:
        """Read-only copy for handing to concurrent readers."""
        net = self.copy()
        for _, arr in net.named_arrays():
            arr.setflags(write=False)
        return net

    def load_from(self, other: Network):
        for (_, dst), (_, src) in zip(self.named_arrays(), other.named_arrays()):
            dst[...] = src

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for _, a in self.named_arrays())

    def forward(self, x: np.ndarray):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        acts = [x]
        h = x
        for layer in self.trunk:
            h = np.tanh(h @ layer.weight.T + layer.bias)
            acts.append(h)
        outputs = {}
        head_acts = {}
        for name, layers in self.heads.items():
            g = h
            hs = [g]
            for i, layer in enumerate(layers):
                z = g @ layer.weight.T + layer.bias
                g = np.tanh(z) if i < len(layers) - 1 else z
                hs.append(g)
            outputs[name] = g
            head_acts[name] = hs
        return outputs, (acts, head_acts)

    def backward(self, cache, d_outputs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss given d loss / d (linear head outputs)."""
        acts, head_acts = cache
        grads = {name: np.zeros_like(a) for name, a in self.named_arrays()}
        dh = np.zeros_like(acts[-1])
        for name, layers in self.heads.items():
            if name not in d_outputs:
                continue
            hs = head_acts[name]
            d = d_outputs[name]
            for i in range(len(layers) - 1, -1, -1):
                if i < len(layers) - 1:
                    d = d * (1.0 - hs[i + 1] ** 2)
                grads[f"{name}.{i}.w"] += d.T @ hs[i]
                grads[f"{name}.{i}.b"] += d.sum(axis=0)
                d = d @ layers[i].weight
            dh += d
        d = dh
        for i in range(len(self.trunk) - 1, -1, -1):
            d = d * (1.0 - acts[i + 1] ** 2)
            grads[f"trunk.{i}.w"] = d.T @ acts[i]
            grads[f"trunk.{i}.b"] = d.sum(axis=0)
            d = d @ self.trunk[i].weight
        return grads


def _trunk(sizes, rng, zero):
    make = (lambda a, b: Dense.zeros(a, b)) if zero else (lambda a, b: Dense.glorot(a, b, rng))
    return [make(a, b) for a, b in zip(sizes[:-1], sizes[1:])], make


def policy_network(input_size, action_count, hidden=(128, 128), head_hidden=128, seed=0, zero=False) -> Network:
    """Trunk plus a two-layer categorical head producing action logits."""
    rng = np.random.default_rng(seed)
    trunk, make = _trunk((input_size, *hidden), rng, zero)
    return Network(trunk, {"logits": [make(hidden[-1], head_hidden), make(head_hidden, action_count)]})


def q_network(input_size, action_count, hidden=(128, 128), head_hidden=128, seed=0, zero=False) -> Network:
    """Same layout as the policy network; outputs are read as Q-values."""
    rng = np.random.default_rng(seed)
    trunk, make = _trunk((input_size, *hidden), rng, zero)
    return Network(trunk, {"q": [make(hidden[-1], head_hidden), make(head_hidden, action_count)]})


def value_network(input_size, hidden=(128, 128), seed=0, zero=False) -> Network:
    """Trunk with single-layer mask (2 logits) and value (2 linear) heads."""
    rng = np.random.default_rng(seed)
    trunk, make = _trunk((input_size, *hidden), rng, zero)
    return Network(trunk, {"mask": [make(hidden[-1], 2)], "value": [make(hidden[-1], 2)]})


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def forward_policy(net: Network, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    probs = softmax(net.forward(x)[0]["logits"])
    return probs[0] if x.ndim == 1 else probs


def forward_q(net: Network, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    q = net.forward(x)[0]["q"]
    return q[0] if x.ndim == 1 else q


def forward_value(net: Network, x: np.ndarray):
    """Returns ``(m_s, m_c, v_s, v_c)``; masks are sigmoids in (0, 1)."""
    x = np.asarray(x, dtype=float)
    out = net.forward(x)[0]
    m = sigmoid(out["mask"])
    v = out["value"]
    if x.ndim == 1:
        return m[0, 0], m[0, 1], v[0, 0], v[0, 1]
    return m[:, 0], m[:, 1], v[:, 0], v[:, 1]
