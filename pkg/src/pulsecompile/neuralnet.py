"""Pulse-compiler network: trigonometric gate features -> per-slice phases.

A plain multilayer perceptron with exact-erf GELU hidden activations,
inverted dropout on hidden activations during training, and a linear output
read directly as radians. Backpropagation and AdamW are written out by hand
on ``numpy`` arrays. Inputs are batched row-wise: ``x`` has shape ``(B, 6)``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import ShapeMismatch
from .physics import GateSpec
from .uncertainty import DOMAIN_DROPOUT, DOMAIN_INIT, RngStream

N_FEATURES = 6
CHECKPOINT_SCHEMA = 1
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def encode_features(g: GateSpec) -> np.ndarray:
    return np.array(
        [
            math.cos(g.gamma),
            math.sin(g.gamma),
            math.cos(g.theta),
            math.sin(g.theta),
            math.cos(g.alpha),
            math.sin(g.alpha),
        ]
    )


def encode_batch(gates) -> np.ndarray:
    return np.stack([encode_features(g) for g in gates]) if gates else np.zeros((0, N_FEATURES))


def gelu(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return cdf + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)


def default_layer_dims(t_slices: int, width: int = 256, hidden_layers: int = 5) -> tuple:
    return (N_FEATURES,) + (width,) * hidden_layers + (t_slices,)


@dataclass
class MlpParams:
    layer_dims: tuple
    weights: list  # weights[k] has shape (layer_dims[k], layer_dims[k+1])
    biases: list

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ShapeMismatch("layer count does not match layer_dims")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[k], self.layer_dims[k + 1]) or b.shape != (self.layer_dims[k + 1],):
                raise ShapeMismatch(f"layer {k} has shapes {w.shape}, {b.shape}")

    @property
    def n_hidden(self) -> int:
        return len(self.weights) - 1

    @property
    def t_slices(self) -> int:
        return self.layer_dims[-1]

    def arrays(self) -> list:
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (shared, not copied)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_arrays(cls, layer_dims, arrays) -> "MlpParams":
        return cls(layer_dims, list(arrays[0::2]), list(arrays[1::2]))

    def copy(self) -> "MlpParams":
        return MlpParams.from_arrays(self.layer_dims, [a.copy() for a in self.arrays()])

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.layer_dims).encode())
        for a in self.arrays():
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()


def init_params(seed: int, layer_dims) -> MlpParams:
    """Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    layer_dims = tuple(int(d) for d in layer_dims)
    weights, biases = [], []
    for k, (fan_in, fan_out) in enumerate(zip(layer_dims[:-1], layer_dims[1:])):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        gen = RngStream(seed, (DOMAIN_INIT, k)).generator()
        weights.append(gen.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(layer_dims, weights, biases)


@dataclass
class DropoutMask:
    """Per-hidden-layer masks of shape ``(B, width)`` with entries in ``{0, 1/(1-p)}``."""

    masks: list
    p: float


def sample_dropout(params: MlpParams, p: float, streams) -> DropoutMask | None:
    """One mask row per example; ``streams[i]`` is the RngStream of example ``i``."""
    if p <= 0.0:
        return None
    keep = 1.0 - p
    widths = params.layer_dims[1:-1]
    rows = []
    for s in streams:
        gen = s.generator()
        rows.append([(gen.random(w) < keep) / keep for w in widths])
    return DropoutMask([np.stack([r[k] for r in rows]) for k in range(len(widths))], p)


def dropout_streams(seed: int, epoch: int, example_ids):
    return [RngStream(seed, (DOMAIN_DROPOUT, epoch, int(i))) for i in example_ids]


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)  # input to each linear layer
    preacts: list = field(default_factory=list)  # hidden pre-activations
    mask: DropoutMask | None = None


def mlp_forward(params: MlpParams, x, mask: DropoutMask | None = None):
    """Return ``(phases, cache)``; ``x`` may be a single 6-vector or a ``(B, 6)`` batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[-1] != params.layer_dims[0]:
        raise ShapeMismatch(f"expected {params.layer_dims[0]} features, got {x.shape[-1]}")
    if mask is not None and len(mask.masks) != params.n_hidden:
        raise ShapeMismatch("dropout mask does not match hidden layers")
    cache = ForwardCache(mask=mask)
    h = x
    for k in range(params.n_hidden):
        cache.inputs.append(h)
        z = h @ params.weights[k] + params.biases[k]
        cache.preacts.append(z)
        h = gelu(z)
        if mask is not None:
            h = h * mask.masks[k]
    cache.inputs.append(h)
    out = h @ params.weights[-1] + params.biases[-1]
    return (out[0] if single else out), cache


def mlp_backward(params: MlpParams, cache: ForwardCache, grad_out) -> MlpParams:
    """Gradients of ``sum(grad_out * phases)`` w.r.t. every weight and bias."""
    g = np.asarray(grad_out, dtype=float)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != (cache.inputs[0].shape[0], params.t_slices):
        raise ShapeMismatch(f"grad_out shape {g.shape} does not match forward batch")
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for k in range(len(params.weights) - 1, -1, -1):
        gw[k] = cache.inputs[k].T @ g
        gb[k] = g.sum(axis=0)
        if k == 0:
            break
        g = g @ params.weights[k].T
        if cache.mask is not None:
            g = g * cache.mask.masks[k - 1]
        g = g * gelu_grad(cache.preacts[k - 1])
    return MlpParams(params.layer_dims, gw, gb)


@dataclass
class AdamWState:
    step: int
    m: list
    v: list
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-3

    def __post_init__(self):
        if self.step < 0 or not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("invalid AdamW state")

    @classmethod
    def fresh(cls, params: MlpParams, **hyper) -> "AdamWState":
        zeros = [np.zeros_like(a) for a in params.arrays()]
        return cls(0, zeros, [z.copy() for z in zeros], **hyper)


def adamw_step(params: MlpParams, grads: MlpParams, state: AdamWState):
    """One decoupled-weight-decay Adam update; returns new ``(params, state)``."""
    p_arr, g_arr = params.arrays(), grads.arrays()
    if len(p_arr) != len(g_arr) or any(a.shape != b.shape for a, b in zip(p_arr, g_arr)):
        raise ShapeMismatch("gradient shapes do not match parameters")
    if any(a.shape != b.shape for a, b in zip(p_arr, state.m)):
        raise ShapeMismatch("optimizer state shapes do not match parameters")
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arr, g_arr, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps) + state.weight_decay * p
        new_p.append(p - state.lr * update)
        new_m.append(m)
        new_v.append(v)
    new_state = AdamWState(step, new_m, new_v, state.lr, b1, b2, state.eps, state.weight_decay)
    return MlpParams.from_arrays(params.layer_dims, new_p), new_state


# -- checkpoints --------------------------------------------------------------


def _nested(a: np.ndarray):
    return a.tolist()


def checkpoint_dict(params: MlpParams, state: AdamWState | None = None, seed: int | None = None, extra=None) -> dict:
    d = {
        "schema_version": CHECKPOINT_SCHEMA,
        "layer_dims": list(params.layer_dims),
        "weights": [_nested(w) for w in params.weights],
        "biases": [_nested(b) for b in params.biases],
        "optimizer_state": None,
        "seed": seed,
    }
    if state is not None:
        d["optimizer_state"] = {
            "step": state.step,
            "lr": state.lr,
            "beta1": state.beta1,
            "beta2": state.beta2,
            "eps": state.eps,
            "weight_decay": state.weight_decay,
            "m": [_nested(a) for a in state.m],
            "v": [_nested(a) for a in state.v],
        }
    if extra:
        d["meta"] = extra
    return d


def params_from_dict(d: dict):
    """Inverse of :func:`checkpoint_dict`; returns ``(params, state_or_None, seed)``."""
    if d.get("schema_version") != CHECKPOINT_SCHEMA:
        raise ValueError(f"unsupported checkpoint schema {d.get('schema_version')!r}")
    dims = tuple(d["layer_dims"])
    weights = [np.array(w, dtype=float).reshape(dims[k], dims[k + 1]) for k, w in enumerate(d["weights"])]
    biases = [np.array(b, dtype=float).reshape(dims[k + 1]) for k, b in enumerate(d["biases"])]
    params = MlpParams(dims, weights, biases)
    state = None
    opt = d.get("optimizer_state")
    if opt is not None:
        shapes = [a.shape for a in params.arrays()]
        m = [np.array(a, dtype=float).reshape(s) for a, s in zip(opt["m"], shapes)]
        v = [np.array(a, dtype=float).reshape(s) for a, s in zip(opt["v"], shapes)]
        state = AdamWState(
            int(opt["step"]), m, v, opt["lr"], opt["beta1"], opt["beta2"], opt["eps"], opt["weight_decay"]
        )
    return params, state, d.get("seed")


def dumps_checkpoint(params, state=None, seed=None, extra=None) -> str:
    return json.dumps(checkpoint_dict(params, state, seed, extra), separators=(",", ":"), allow_nan=False)


def loads_checkpoint(text: str):
    return params_from_dict(json.loads(text))
