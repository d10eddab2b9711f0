"""Classical trainable pieces: generator front-end, latent embedding,
discriminator, small dense nets and the Adam optimizer.

Gradients are written out by hand for these fixed architectures.  Every
parameter container converts to and from a flat ``{name: ndarray}`` dict,
which is what the optimizer and the checkpoint writer consume.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import InvalidArgumentError, TrainingError


def leaky_relu(x, slope):
    return np.where(x > 0, x, slope * x)


def leaky_relu_grad(x, slope):
    return np.where(x > 0, 1.0, slope)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _fan_in_uniform(rng, fan_out, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, (fan_out, fan_in)), rng.uniform(-bound, bound, fan_out)


class _ArrayParams:
    """Mixin for dataclasses whose ndarray fields are trainable."""

    _TRAINABLE: tuple[str, ...] = ()

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self._TRAINABLE}

    def with_arrays(self, arrays: dict):
        return replace(self, **{k: np.asarray(v, dtype=float) for k, v in arrays.items()})

    def n_trainable(self) -> int:
        return int(sum(getattr(self, n).size for n in self._TRAINABLE))


# ---------------------------------------------------------------------------
# generator front-end


@dataclass(frozen=True)
class GeneratorParams(_ArrayParams):
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    _TRAINABLE = ("W1", "b1", "W2", "b2")

    def __post_init__(self):
        r, m = np.shape(self.W1)
        if np.shape(self.b1) != (r,) or np.shape(self.W2)[1] != r or np.shape(self.W2)[0] % 3:
            raise InvalidArgumentError("inconsistent generator front-end shapes")
        if np.shape(self.b2) != (np.shape(self.W2)[0],):
            raise InvalidArgumentError("b2 must match the rows of W2")

    @property
    def latent_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def num_qubits(self) -> int:
        return self.W2.shape[0] // 3

    @classmethod
    def init(cls, latent_dim: int, hidden: int, num_qubits: int, rng, scale: float = 0.1):
        u = lambda *shape: rng.uniform(-scale, scale, shape)
        return cls(u(hidden, latent_dim), u(hidden), u(3 * num_qubits, hidden), u(3 * num_qubits))

    @classmethod
    def zeros(cls, latent_dim: int, hidden: int, num_qubits: int):
        return cls(np.zeros((hidden, latent_dim)), np.zeros(hidden),
                   np.zeros((3 * num_qubits, hidden)), np.zeros(3 * num_qubits))


def generator_frontend(params: GeneratorParams, z) -> np.ndarray:
    """Angle matrix ``(d, 3)`` for one latent vector, or ``(B, d, 3)`` for a batch.

    ``a = W2 tanh(W1 z + b1) + b2`` is reshaped row-major, so ``a[3q:3q+3]``
    are the rotation angles of qubit ``q``.
    """
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != params.latent_dim:
        raise InvalidArgumentError(f"latent vector must have length {params.latent_dim}")
    h = np.tanh(z @ params.W1.T + params.b1)
    a = h @ params.W2.T + params.b2
    return a.reshape(z.shape[:-1] + (params.num_qubits, 3))


def frontend_backward(params: GeneratorParams, z, dtheta) -> dict[str, np.ndarray]:
    """Gradients of the front-end weights given ``dL/dtheta`` of shape ``(B, d, 3)``, summed over the batch."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    da = np.asarray(dtheta, dtype=float).reshape(z.shape[0], -1)
    h = np.tanh(z @ params.W1.T + params.b1)
    dpre = (da @ params.W2) * (1.0 - h**2)
    return {"W1": dpre.T @ z, "b1": dpre.sum(axis=0), "W2": da.T @ h, "b2": da.sum(axis=0)}


@dataclass(frozen=True)
class LatentEmbed:
    """Fixed map ``z' = S * (P z)`` from latent space to one angle per qubit."""

    P: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        p = np.array(self.P, dtype=float)
        s = np.array(self.S, dtype=float).reshape(-1)
        if p.ndim != 2 or s.shape != (p.shape[0],):
            raise InvalidArgumentError("P must be (d, m) and S must have length d")
        p.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "P", p)
        object.__setattr__(self, "S", s)

    @classmethod
    def default(cls, num_qubits: int, latent_dim: int | None = None):
        m = num_qubits if latent_dim is None else latent_dim
        return cls(np.eye(num_qubits, m), np.full(num_qubits, np.pi / 2))


def latent_embed(embed: LatentEmbed, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != embed.P.shape[1]:
        raise InvalidArgumentError(f"latent vector must have length {embed.P.shape[1]}")
    return (z @ embed.P.T) * embed.S


# ---------------------------------------------------------------------------
# discriminator


@dataclass(frozen=True)
class DiscriminatorParams(_ArrayParams):
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    w: np.ndarray
    b: np.ndarray
    leaky_slope: float = 0.2
    dropout_rate: float = 0.10

    _TRAINABLE = ("W1", "b1", "W2", "b2", "w", "b")

    def __post_init__(self):
        if not 0 < self.leaky_slope < 1:
            raise InvalidArgumentError("leaky slope must lie in (0, 1)")
        if not 0 <= self.dropout_rate < 1:
            raise InvalidArgumentError("dropout rate must lie in [0, 1)")

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @classmethod
    def init(cls, input_dim: int, rng, hidden=(16, 8), leaky_slope=0.2, dropout_rate=0.10):
        k1, k2 = hidden
        W1, b1 = _fan_in_uniform(rng, k1, input_dim)
        W2, b2 = _fan_in_uniform(rng, k2, k1)
        w, b = _fan_in_uniform(rng, 1, k2)
        return cls(W1, b1, W2, b2, w[0], b, leaky_slope, dropout_rate)

    @classmethod
    def zeros(cls, input_dim: int, hidden=(16, 8), leaky_slope=0.2, dropout_rate=0.10):
        k1, k2 = hidden
        return cls(np.zeros((k1, input_dim)), np.zeros(k1), np.zeros((k2, k1)), np.zeros(k2),
                   np.zeros(k2), np.zeros(1), leaky_slope, dropout_rate)


@dataclass
class DiscCache:
    x: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    h: np.ndarray
    scale: np.ndarray
    logit: np.ndarray
    prob: np.ndarray


def dropout_mask(rng, shape, rate) -> np.ndarray:
    """Inverted-dropout multipliers: ``delta / (1 - rate)`` with ``delta ~ Bernoulli(1 - rate)``."""
    keep = rng.random(shape) < 1.0 - rate
    return keep / (1.0 - rate)


def disc_forward(params: DiscriminatorParams, x, scale=None) -> DiscCache:
    """Batched forward pass; ``scale`` holds the dropout multipliers (``None`` = eval)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != params.input_dim:
        raise InvalidArgumentError(f"discriminator expects {params.input_dim} inputs, got {x.shape[1]}")
    a = params.leaky_slope
    u1 = x @ params.W1.T + params.b1
    u2 = leaky_relu(u1, a) @ params.W2.T + params.b2
    h = leaky_relu(u2, a)
    if scale is None:
        scale = np.ones_like(h)
    logit = (h * scale) @ params.w + params.b[0]
    return DiscCache(x, u1, u2, h, scale, logit, sigmoid(logit))


def disc_backward(params: DiscriminatorParams, cache: DiscCache, dlogit, dfeatures=None):
    """Backprop ``dL/dlogit`` (and optionally ``dL/dfeatures``) through the discriminator.

    Returns ``(grads, dx)`` with parameter gradients summed over the batch.
    """
    a = params.leaky_slope
    dlogit = np.asarray(dlogit, dtype=float)
    dh = np.outer(dlogit, params.w) * cache.scale
    if dfeatures is not None:
        dh = dh + dfeatures
    du2 = dh * leaky_relu_grad(cache.u2, a)
    v1 = leaky_relu(cache.u1, a)
    dv1 = du2 @ params.W2
    du1 = dv1 * leaky_relu_grad(cache.u1, a)
    grads = {
        "W1": du1.T @ cache.x,
        "b1": du1.sum(axis=0),
        "W2": du2.T @ v1,
        "b2": du2.sum(axis=0),
        "w": (cache.h * cache.scale).T @ dlogit,
        "b": np.array([dlogit.sum()]),
    }
    return grads, du1 @ params.W1


def discriminator_forward(params: DiscriminatorParams, x, mode: str = "eval", rng=None):
    """Return ``(probability, features, logit)`` for a single input or a batch.

    ``features`` are the second LeakyReLU activations before dropout.  In
    ``"train"`` mode a fresh dropout mask is drawn from ``rng``.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if mode == "train":
        if rng is None:
            raise InvalidArgumentError("train mode needs a random generator")
        scale = dropout_mask(rng, (xb.shape[0], params.W2.shape[0]), params.dropout_rate)
    elif mode == "eval":
        scale = None
    else:
        raise InvalidArgumentError(f"unknown mode {mode!r}")
    c = disc_forward(params, xb, scale)
    if single:
        return float(c.prob[0]), c.h[0], float(c.logit[0])
    return c.prob, c.h, c.logit


# ---------------------------------------------------------------------------
# plain dense nets (classical generator, ANN classifier, QNN head)


@dataclass(frozen=True)
class MLPParams(_ArrayParams):
    """Dense net with LeakyReLU hidden layers; weights are ``W0, b0, W1, b1, ...``."""

    arrays: dict = field(default_factory=dict)
    leaky_slope: float = 0.2
    output: str = "linear"

    def as_dict(self):
        return dict(self.arrays)

    def with_arrays(self, arrays):
        merged = dict(self.arrays)
        merged.update({k: np.asarray(v, dtype=float) for k, v in arrays.items()})
        return replace(self, arrays=merged)

    def n_trainable(self):
        return int(sum(v.size for v in self.arrays.values()))

    @property
    def n_layers(self) -> int:
        return len(self.arrays) // 2

    @property
    def sizes(self) -> list[int]:
        return [self.arrays["W0"].shape[1]] + [self.arrays[f"W{i}"].shape[0] for i in range(self.n_layers)]

    @classmethod
    def init(cls, sizes, rng, output="linear", leaky_slope=0.2, zero=False):
        arrays = {}
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            if zero:
                W, b = np.zeros((fan_out, fan_in)), np.zeros(fan_out)
            else:
                W, b = _fan_in_uniform(rng, fan_out, fan_in)
            arrays[f"W{i}"], arrays[f"b{i}"] = W, b
        return cls(arrays, leaky_slope, output)


_OUTPUTS = {
    "linear": (lambda s: s, lambda s, y: np.ones_like(s)),
    "tanh": (np.tanh, lambda s, y: 1.0 - y**2),
    "sigmoid": (sigmoid, lambda s, y: y * (1.0 - y)),
}


def mlp_forward(params: MLPParams, x):
    """Returns ``(output, cache)``; ``cache`` holds pre-activations for :func:`mlp_backward`."""
    act = np.atleast_2d(np.asarray(x, dtype=float))
    if act.shape[1] != params.sizes[0]:
        raise InvalidArgumentError(f"network expects {params.sizes[0]} inputs, got {act.shape[1]}")
    inputs, pres = [], []
    last = params.n_layers - 1
    for i in range(params.n_layers):
        inputs.append(act)
        pre = act @ params.arrays[f"W{i}"].T + params.arrays[f"b{i}"]
        pres.append(pre)
        act = leaky_relu(pre, params.leaky_slope) if i < last else _OUTPUTS[params.output][0](pre)
    return act, (inputs, pres, act)


def mlp_backward(params: MLPParams, cache, dout, wrt_output_pre=False):
    """Gradients for all weights and the input, given ``dL/doutput``.

    With ``wrt_output_pre=True``, ``dout`` is already the gradient with
    respect to the final pre-activation (useful for sigmoid + BCE).
    """
    inputs, pres, out = cache
    grads = {}
    last = params.n_layers - 1
    delta = np.asarray(dout, dtype=float)
    if not wrt_output_pre:
        delta = delta * _OUTPUTS[params.output][1](pres[last], out)
    for i in range(last, -1, -1):
        grads[f"W{i}"] = delta.T @ inputs[i]
        grads[f"b{i}"] = delta.sum(axis=0)
        dx = delta @ params.arrays[f"W{i}"]
        if i > 0:
            delta = dx * leaky_relu_grad(pres[i - 1], params.leaky_slope)
    return grads, dx


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "step": self.step,
            "m": {k: np.asarray(a).tolist() for k, a in self.m.items()},
            "v": {k: np.asarray(a).tolist() for k, a in self.v.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "AdamState":
        return cls(doc["lr"], doc["beta1"], doc["beta2"], doc["eps"], doc["step"],
                   {k: np.asarray(a, dtype=float) for k, a in doc["m"].items()},
                   {k: np.asarray(a, dtype=float) for k, a in doc["v"].items()})


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One bias-corrected Adam update.  Mutates ``state``; returns new parameter arrays."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        if np.shape(g) != np.shape(params[name]):
            raise InvalidArgumentError(f"gradient shape mismatch for {name!r}")
    state.step += 1
    t = state.step
    out = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=float)
        m = state.beta1 * state.m.get(name, np.zeros_like(g)) + (1 - state.beta1) * g
        v = state.beta2 * state.v.get(name, np.zeros_like(g)) + (1 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - state.beta1**t)
        v_hat = v / (1 - state.beta2**t)
        out[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out


def params_to_json(params) -> dict:
    """Serializable form of any parameter container in this module."""
    if isinstance(params, MLPParams):
        return {"kind": "mlp", "leaky_slope": params.leaky_slope, "output": params.output,
                "arrays": {k: v.tolist() for k, v in params.arrays.items()}}
    doc = {"kind": type(params).__name__}
    for f in fields(params):
        if f.name.startswith("_"):
            continue
        val = getattr(params, f.name)
        doc[f.name] = val.tolist() if isinstance(val, np.ndarray) else val
    return doc


def params_from_json(doc: dict):
    kind = doc["kind"]
    if kind == "mlp":
        arrays = {k: np.asarray(v, dtype=float) for k, v in doc["arrays"].items()}
        return MLPParams(arrays, doc["leaky_slope"], doc["output"])
    cls = {"GeneratorParams": GeneratorParams, "DiscriminatorParams": DiscriminatorParams,
           "LatentEmbed": LatentEmbed}[kind]
    kwargs = {}
    for f in fields(cls):
        val = doc[f.name]
        kwargs[f.name] = np.asarray(val, dtype=float) if isinstance(val, list) else val
    return cls(**kwargs)
