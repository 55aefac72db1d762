"""Fully-connected networks with hand-written backward passes.

Used as the substrate for the agents. Every layer caches what it needs on
``forward`` and fills ``grads`` on ``backward``; ``backward`` returns the
gradient with respect to the layer input.
"""
import numpy as np


class Linear:
    def __init__(self, n_in, n_out, rng, dtype=np.float32, init="fanin"):
        bound = 1.0 / np.sqrt(n_in)
        if init == "small":
            bound = 3e-3
        self.params = {
            "w": rng.uniform(-bound, bound, (n_out, n_in)).astype(dtype),
            "b": rng.uniform(-bound, bound, n_out).astype(dtype),
        }
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, x):
        self._x = x
        return x @ self.params["w"].T + self.params["b"]

    def backward(self, dy):
        self.grads["w"] = dy.T @ self._x
        self.grads["b"] = dy.sum(axis=0)
        return dy @ self.params["w"]


def _f(x):
    return np.sign(x) * np.sqrt(np.abs(x))


class NoisyLinear:
    """Linear layer with factorised Gaussian parameter noise."""

    def __init__(self, n_in, n_out, rng, sigma0=0.5, dtype=np.float32):
        bound = 1.0 / np.sqrt(n_in)
        s = sigma0 / np.sqrt(n_in)
        self.params = {
            "mu_w": rng.uniform(-bound, bound, (n_out, n_in)).astype(dtype),
            "sigma_w": np.full((n_out, n_in), s, dtype=dtype),
            "mu_b": rng.uniform(-bound, bound, n_out).astype(dtype),
            "sigma_b": np.full(n_out, s, dtype=dtype),
        }
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.eps_in = np.zeros(n_in, dtype=dtype)
        self.eps_out = np.zeros(n_out, dtype=dtype)
        self.noisy = True

    def reset_noise(self, rng):
        dt = self.params["mu_w"].dtype
        self.eps_in = _f(rng.standard_normal(self.eps_in.shape)).astype(dt)
        self.eps_out = _f(rng.standard_normal(self.eps_out.shape)).astype(dt)

    def _eps(self):
        if not self.noisy:
            return 0.0, 0.0
        return np.outer(self.eps_out, self.eps_in), self.eps_out

    def forward(self, x):
        p = self.params
        ew, eb = self._eps()
        self._x = x
        w = p["mu_w"] + p["sigma_w"] * ew
        b = p["mu_b"] + p["sigma_b"] * eb
        self._w = w
        return x @ w.T + b

    def backward(self, dy):
        ew, eb = self._eps()
        gw = dy.T @ self._x
        gb = dy.sum(axis=0)
        self.grads["mu_w"] = gw
        self.grads["sigma_w"] = gw * ew if self.noisy else np.zeros_like(gw)
        self.grads["mu_b"] = gb
        self.grads["sigma_b"] = gb * eb if self.noisy else np.zeros_like(gb)
        return dy @ self._w


class ReLU:
    params = grads = {}

    def forward(self, x):
        self._m = x > 0
        return x * self._m

    def backward(self, dy):
        return dy * self._m


class Sigmoid:
    params = grads = {}

    def forward(self, x):
        self._y = 1.0 / (1.0 + np.exp(-x))
        return self._y

    def backward(self, dy):
        return dy * self._y * (1 - self._y)


class Tanh:
    params = grads = {}

    def forward(self, x):
        self._y = np.tanh(x)
        return self._y

    def backward(self, dy):
        return dy * (1 - self._y ** 2)


class Identity:
    params = grads = {}

    def forward(self, x):
        return x

    def backward(self, dy):
        return dy


HEADS = {"sigmoid": Sigmoid, "tanh": Tanh, "linear": Identity, "relu": ReLU}


class MLP:
    """Stack of layers. ``MLP.build`` gives the usual hidden-ReLU layout."""

    def __init__(self, layers):
        self.layers = layers

    @classmethod
    def build(cls, sizes, rng, head="linear", dtype=np.float32, noisy_last=False,
              sigma0=0.5, last_init="fanin"):
        layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            if last and noisy_last:
                layers.append(NoisyLinear(a, b, rng, sigma0, dtype))
            else:
                layers.append(Linear(a, b, rng, dtype, init=last_init if last else "fanin"))
            layers.append(HEADS[head]() if last else ReLU())
        return cls(layers)

    def forward(self, x, upto=None):
        """Run the stack; ``upto`` stops after that many layers."""
        for layer in self.layers[:upto]:
            x = layer.forward(x)
        return x

    def backward(self, dy, start=None):
        """Backpropagate from the output (or from layer ``start``)."""
        for layer in reversed(self.layers[:start]):
            dy = layer.backward(dy)
        return dy

    def param_items(self):
        for i, layer in enumerate(self.layers):
            for k in layer.params:
                yield f"{i}.{k}", layer, k

    def parameters(self):
        return {name: layer.params[k] for name, layer, k in self.param_items()}

    def gradients(self):
        return {name: layer.grads[k] for name, layer, k in self.param_items()}

    def load_parameters(self, params):
        for name, layer, k in self.param_items():
            src = params[name]
            if src.shape != layer.params[k].shape:
                raise ValueError(f"shape mismatch for {name}: {src.shape} vs {layer.params[k].shape}")
            layer.params[k] = np.array(src, dtype=layer.params[k].dtype)

    def noisy_layers(self):
        return [l for l in self.layers if isinstance(l, NoisyLinear)]

    def reset_noise(self, rng):
        for layer in self.noisy_layers():
            layer.reset_noise(rng)

    def set_noisy(self, flag):
        for layer in self.noisy_layers():
            layer.noisy = flag


class Adam:
    def __init__(self, net, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.net, self.lr, self.betas, self.eps = net, lr, betas, eps
        self.m = {n: np.zeros_like(p) for n, p in net.parameters().items()}
        self.v = {n: np.zeros_like(p) for n, p in net.parameters().items()}
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.betas
        lr_t = self.lr * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for name, layer, k in self.net.param_items():
            g = layer.grads[k]
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            p = layer.params[k]
            p -= (lr_t * self.m[name] / (np.sqrt(self.v[name]) + self.eps)).astype(p.dtype)


def mlp_forward(net, x):
    return net.forward(x)


def mlp_backward(net, dy):
    """Input gradient; parameter gradients land in ``net.gradients()``."""
    return net.backward(dy)
