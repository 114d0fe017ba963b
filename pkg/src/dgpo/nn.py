"""Dense networks over flat float64 parameter vectors.

Everything here is a plain function over explicit arrays: a network is an
:class:`MlpSpec` plus a :class:`ParamVector`, gradients come from a hand
written reverse pass, and the optimiser state is an :class:`AdamState` value.
Inputs may be a single vector or a ``(batch, dim)`` matrix; parameter
gradients are summed over the batch.
"""

from __future__ import annotations

import functools
import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

ACTIVATIONS = ("tanh", "relu")
CHECKPOINT_MAGIC = b"DGPO1"


class NonFiniteError(ValueError):
    """A gradient or loss contained NaN or inf."""


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden:
            raise ValueError("MlpSpec needs at least one hidden layer")
        dims = (self.input_dim, *self.hidden, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all layer sizes must be >= 1, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @functools.cached_property
    def sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)

    @functools.cached_property
    def layout(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        out = []
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            out.append((f"W{i}", (fan_in, fan_out)))
            out.append((f"b{i}", (fan_out,)))
        return tuple(out)

    @functools.cached_property
    def n_params(self) -> int:
        return _layout_size(self.layout)


@functools.lru_cache(maxsize=None)
def _offsets(layout) -> tuple[tuple[str, int, int, tuple[int, ...]], ...]:
    out = []
    offset = 0
    for name, shape in layout:
        size = math.prod(shape)
        out.append((name, offset, offset + size, shape))
        offset += size
    return tuple(out)


def _layout_size(layout) -> int:
    spans = _offsets(tuple(layout))
    return spans[-1][2] if spans else 0


@dataclass
class ParamVector:
    """Flat parameter storage with a named block layout."""

    values: np.ndarray
    layout: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if not isinstance(self.layout, tuple):
            self.layout = tuple((str(n), tuple(int(s) for s in shape)) for n, shape in self.layout)
        expected = _layout_size(self.layout)
        if self.values.ndim != 1 or self.values.size != expected:
            raise ValueError(
                f"parameter vector has {self.values.size} values, layout needs {expected}"
            )

    def __len__(self) -> int:
        return self.values.size

    def blocks(self) -> list[tuple[str, np.ndarray]]:
        """Named views into ``values`` (writes go through to the vector)."""
        v = self.values
        return [(name, v[a:b].reshape(shape)) for name, a, b, shape in _offsets(self.layout)]

    def copy(self) -> ParamVector:
        return ParamVector(self.values.copy(), self.layout)

    @classmethod
    def zeros_like(cls, other: ParamVector) -> ParamVector:
        return cls(np.zeros_like(other.values), other.layout)


def init_params(spec: MlpSpec, rng: np.random.Generator, final_scale: float = 1.0) -> ParamVector:
    """Scaled-uniform init: weights ~ U(-a, a) with variance 1/fan_in, zero biases.

    The last weight matrix is multiplied by ``final_scale``.
    """
    params = ParamVector(np.zeros(spec.n_params), spec.layout)
    blocks = params.blocks()
    n_layers = len(spec.sizes) - 1
    for i in range(n_layers):
        _, w = blocks[2 * i]
        bound = np.sqrt(3.0 / w.shape[0])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
        if i == n_layers - 1:
            w *= final_scale
    return params


def _check(spec: MlpSpec, params: ParamVector, x: np.ndarray) -> np.ndarray:
    if len(params) != spec.n_params:
        raise ValueError(f"params have {len(params)} values, spec needs {spec.n_params}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.input_dim or x.ndim not in (1, 2):
        raise ValueError(f"input has shape {x.shape}, spec expects last dim {spec.input_dim}")
    return x


def _weights(spec: MlpSpec, params: ParamVector):
    b = params.blocks()
    return [(b[2 * i][1], b[2 * i + 1][1]) for i in range(len(b) // 2)]


def mlp_forward_cache(spec: MlpSpec, params: ParamVector, x):
    """Forward pass that also returns the per-layer inputs for :func:`mlp_backward_cache`."""
    x = _check(spec, params, x)
    single = x.ndim == 1
    h = x[None, :] if single else x
    layers = _weights(spec, params)
    inputs = []
    for i, (w, b) in enumerate(layers):
        inputs.append(h)
        h = h @ w + b
        if i < len(layers) - 1:
            h = np.tanh(h) if spec.activation == "tanh" else np.maximum(h, 0.0)
    out = h[0] if single else h
    return out, (single, inputs, h)


def mlp_forward(spec: MlpSpec, params: ParamVector, x) -> np.ndarray:
    return mlp_forward_cache(spec, params, x)[0]


def mlp_backward_cache(spec: MlpSpec, params: ParamVector, cache, output_grad):
    single, inputs, out = cache
    g = np.asarray(output_grad, dtype=np.float64)
    g = g[None, :] if single else g
    if g.shape != out.shape:
        raise ValueError(f"output_grad has shape {g.shape}, expected {out.shape}")
    layers = _weights(spec, params)
    grad = ParamVector.zeros_like(params)
    gblocks = grad.blocks()
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        h_in = inputs[i]
        gblocks[2 * i][1][...] = h_in.T @ g
        gblocks[2 * i + 1][1][...] = g.sum(axis=0)
        g = g @ w.T
        if i > 0:
            # h_in is the activation output of the previous layer
            if spec.activation == "tanh":
                g = g * (1.0 - h_in * h_in)
            else:
                g = g * (h_in > 0.0)
    return grad, (g[0] if single else g)


def mlp_backward(spec: MlpSpec, params: ParamVector, x, output_grad):
    """Gradients of ``sum(output * output_grad)`` w.r.t. params and input."""
    _, cache = mlp_forward_cache(spec, params, x)
    return mlp_backward_cache(spec, params, cache, output_grad)


# ---------------------------------------------------------------------------
# Optimiser
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ParamVector, **kw) -> AdamState:
        n = len(params)
        return cls(np.zeros(n), np.zeros(n), **kw)


def adam_step(state: AdamState, params: ParamVector, grads: ParamVector):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    if len(grads) != len(params) or len(state.first_moment) != len(params):
        raise ValueError("params, grads and moments must have identical length")
    if not np.all(np.isfinite(grads.values)):
        for name, block in grads.blocks():
            if not np.all(np.isfinite(block)):
                raise NonFiniteError(f"non-finite gradient in block {name!r}")
    g = grads.values
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * g
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_values = params.values - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return ParamVector(new_values, params.layout), replace(
        state, first_moment=m, second_moment=v, step_count=t
    )


def clip_global_norm(grads: list[ParamVector], max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float(g.values @ g.values) for g in grads)))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g.values *= scale
    return norm


# ---------------------------------------------------------------------------
# Categorical helpers
# ---------------------------------------------------------------------------

def logsumexp(logits, axis=-1):
    logits = np.asarray(logits, dtype=np.float64)
    m = logits.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(logits - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def log_softmax(logits, axis=-1):
    logits = np.asarray(logits, dtype=np.float64)
    return logits - np.expand_dims(logsumexp(logits, axis=axis), axis)


def softmax_probs(logits, axis=-1) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    e = np.exp(logits - logits.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def categorical_sample_batch(logits, rng: np.random.Generator):
    """Sample one index per row by inverse CDF. Returns ``(indices, log_probs)``."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if logits.shape[-1] == 0:
        raise ValueError("cannot sample from empty logits")
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    logp = log_softmax(logits)
    cdf = np.cumsum(np.exp(logp), axis=1)
    u = rng.random(logits.shape[0]) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=1)
    idx = np.minimum(idx, logits.shape[1] - 1)
    return idx, logp[np.arange(logits.shape[0]), idx]


def categorical_sample(logits, rng: np.random.Generator) -> tuple[int, float]:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size == 0:
        raise ValueError("categorical_sample expects a non-empty 1-D logit vector")
    idx, logp = categorical_sample_batch(logits[None, :], rng)
    return int(idx[0]), float(logp[0])


# ---------------------------------------------------------------------------
# Checkpoint files
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """Named parameter sections plus a JSON-serialisable metadata dict."""

    sections: dict[str, ParamVector]
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Write ``DGPO1`` header, a JSON layout table, then little-endian float64 data.

    Block names in the layout table are ``"<section>/<block>"``.
    """
    layout = []
    chunks = []
    for section, params in ckpt.sections.items():
        if "/" in section:
            raise ValueError(f"section name may not contain '/': {section!r}")
        for name, shape in params.layout:
            layout.append({"name": f"{section}/{name}", "shape": list(shape)})
        chunks.append(params.values)
    header = json.dumps({"version": 1, "layout": layout, "meta": ckpt.meta}, sort_keys=True).encode()
    data = np.concatenate(chunks).astype("<f8") if chunks else np.zeros(0, "<f8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(data.tobytes())


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a DGPO1 checkpoint")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<Q", raw, off)
    off += 8
    header = json.loads(raw[off:off + hlen].decode())
    off += hlen
    data = np.frombuffer(raw, dtype="<f8", offset=off).astype(np.float64)
    sections: dict[str, list] = {}
    for entry in header["layout"]:
        section, name = entry["name"].split("/", 1)
        sections.setdefault(section, []).append((name, tuple(entry["shape"])))
    out = {}
    cursor = 0
    for section, layout in sections.items():
        size = sum(int(np.prod(s)) for _, s in layout)
        if cursor + size > data.size:
            raise ValueError(f"{path}: truncated data for section {section!r}")
        out[section] = ParamVector(data[cursor:cursor + size].copy(), layout)
        cursor += size
    if cursor != data.size:
        raise ValueError(f"{path}: {data.size - cursor} trailing values")
    return Checkpoint(out, header.get("meta", {}))
