"""Network building blocks: linear maps, GRU/LSTM cells, multi-head
self-attention with exposed weighting matrices, and the block-compression
strategies (top-k plus the ablation variants)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ParameterStore, Tensor


class ConfigurationError(ValueError):
    pass


ACTIVATIONS = {
    "tanh": T.tanh,
    "relu": T.relu,
    "gelu": T.gelu,
    "sigmoid": T.sigmoid,
    "identity": lambda x: x,
}


class Linear:
    """y = x W + b with uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] init."""

    def __init__(self, store: ParameterStore, name: str, n_in: int, n_out: int,
                 rng: np.random.Generator):
        self.w = store.add_uniform(f"{name}.w", (n_in, n_out), n_in, rng)
        self.b = store.add_uniform(f"{name}.b", (1, n_out), n_in, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.w) + self.b


class Mlp:
    """Feed-forward net; hidden activation applied between all hidden layers,
    linear output."""

    def __init__(self, store: ParameterStore, name: str, sizes: list[int],
                 activation: str, rng: np.random.Generator):
        self.layers = [
            Linear(store, f"{name}.l{i}", sizes[i], sizes[i + 1], rng)
            for i in range(len(sizes) - 1)
        ]
        self.act = ACTIVATIONS[activation]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = self.act(layer(x))
        return self.layers[-1](x)


class GruCell:
    """Gated recurrent unit: h' = (1 - z) * h + z * tanh-candidate."""

    def __init__(self, store: ParameterStore, name: str, n_in: int, n_hidden: int,
                 rng: np.random.Generator):
        self.n_in = n_in
        self.n_hidden = n_hidden
        fan = n_in + n_hidden
        self.wz = store.add_uniform(f"{name}.wz", (n_in, n_hidden), fan, rng)
        self.uz = store.add_uniform(f"{name}.uz", (n_hidden, n_hidden), fan, rng)
        self.bz = store.add_uniform(f"{name}.bz", (1, n_hidden), fan, rng)
        self.wr = store.add_uniform(f"{name}.wr", (n_in, n_hidden), fan, rng)
        self.ur = store.add_uniform(f"{name}.ur", (n_hidden, n_hidden), fan, rng)
        self.br = store.add_uniform(f"{name}.br", (1, n_hidden), fan, rng)
        self.wh = store.add_uniform(f"{name}.wh", (n_in, n_hidden), fan, rng)
        self.uh = store.add_uniform(f"{name}.uh", (n_hidden, n_hidden), fan, rng)
        self.bh = store.add_uniform(f"{name}.bh", (1, n_hidden), fan, rng)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in or h.shape[-1] != self.n_hidden:
            raise T.ShapeError(
                f"gru_step dims {x.shape}/{h.shape} do not match cell "
                f"({self.n_in}, {self.n_hidden})")
        z = T.sigmoid(T.matmul(x, self.wz) + T.matmul(h, self.uz) + self.bz)
        r = T.sigmoid(T.matmul(x, self.wr) + T.matmul(h, self.ur) + self.br)
        cand = T.tanh(T.matmul(x, self.wh) + T.matmul(r * h, self.uh) + self.bh)
        return (Tensor(1.0) - z) * h + z * cand


class LstmCell:
    def __init__(self, store: ParameterStore, name: str, n_in: int, n_hidden: int,
                 rng: np.random.Generator):
        self.n_in = n_in
        self.n_hidden = n_hidden
        fan = n_in + n_hidden
        for gate in ("i", "f", "o", "c"):
            setattr(self, f"w{gate}",
                    store.add_uniform(f"{name}.w{gate}", (n_in, n_hidden), fan, rng))
            setattr(self, f"u{gate}",
                    store.add_uniform(f"{name}.u{gate}", (n_hidden, n_hidden), fan, rng))
            setattr(self, f"b{gate}",
                    store.add_uniform(f"{name}.b{gate}", (1, n_hidden), fan, rng))

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        i = T.sigmoid(T.matmul(x, self.wi) + T.matmul(h, self.ui) + self.bi)
        f = T.sigmoid(T.matmul(x, self.wf) + T.matmul(h, self.uf) + self.bf)
        o = T.sigmoid(T.matmul(x, self.wo) + T.matmul(h, self.uo) + self.bo)
        g = T.tanh(T.matmul(x, self.wc) + T.matmul(h, self.uc) + self.bc)
        c_new = f * c + i * g
        return o * T.tanh(c_new), c_new


@dataclass
class AttentionOutput:
    """Transformed block plus the raw per-head weighting matrices."""
    y: Tensor                       # L x d
    weights: list[np.ndarray]       # m matrices, each L x L, rows sum to 1
    contributions: np.ndarray = field(init=False)  # length L

    def __post_init__(self):
        self.contributions = np.mean(self.weights, axis=0).sum(axis=0)


class AttentionLayer:
    """One two-sublayer block: multi-head self-attention then feed-forward,
    each with residual connection and layer normalization. No positional
    encoding."""

    def __init__(self, store: ParameterStore, name: str, d: int, heads: int,
                 ffn_hidden: int, dropout_rate: float, rng: np.random.Generator,
                 use_norm: bool = True, use_ffn: bool = True):
        if d % heads != 0:
            raise ConfigurationError(f"model dim {d} not divisible by {heads} heads")
        self.d = d
        self.heads = heads
        self.head_dim = d // heads
        self.dropout_rate = dropout_rate
        self.use_norm = use_norm
        self.use_ffn = use_ffn
        self.mq = store.add_uniform(f"{name}.mq", (d, d), d, rng)
        self.mk = store.add_uniform(f"{name}.mk", (d, d), d, rng)
        self.mv = store.add_uniform(f"{name}.mv", (d, d), d, rng)
        self.mo = store.add_uniform(f"{name}.mo", (d, d), d, rng)
        self.ffn1 = Linear(store, f"{name}.ffn1", d, ffn_hidden, rng)
        self.ffn2 = Linear(store, f"{name}.ffn2", ffn_hidden, d, rng)
        self.ln1_g = store.add(f"{name}.ln1.g", np.ones(d))
        self.ln1_b = store.add(f"{name}.ln1.b", np.zeros(d))
        self.ln2_g = store.add(f"{name}.ln2.g", np.ones(d))
        self.ln2_b = store.add(f"{name}.ln2.b", np.zeros(d))

    def __call__(self, b: Tensor, rng: np.random.Generator,
                 training: bool) -> AttentionOutput:
        if b.ndim != 2 or b.shape[1] != self.d:
            raise T.ShapeError(f"attention input {b.shape} expected (L, {self.d})")
        hh = self.head_dim
        scale = 1.0 / math.sqrt(hh)
        heads_out = []
        weights = []
        for l in range(self.heads):
            cols = slice(l * hh, (l + 1) * hh)
            q = T.matmul(b, self.mq[:, cols])
            k = T.matmul(b, self.mk[:, cols])
            v = T.matmul(b, self.mv[:, cols])
            w = T.softmax_rows(T.matmul(q, T.transpose(k)) * Tensor(scale))
            weights.append(w.data.copy())
            heads_out.append(T.matmul(w, v))
        mha = T.matmul(T.concat(heads_out, axis=1), self.mo)
        mha = T.dropout(mha, self.dropout_rate, rng, training)
        u = mha + b
        if self.use_norm:
            u = T.layer_norm(u, self.ln1_g, self.ln1_b)
        y = u
        if self.use_ffn:
            ffn = self.ffn2(T.gelu(self.ffn1(u)))
            ffn = T.dropout(ffn, self.dropout_rate, rng, training)
            y = ffn + u
            if self.use_norm:
                y = T.layer_norm(y, self.ln2_g, self.ln2_b)
        return AttentionOutput(y=y, weights=weights)


def stack_forward(b: Tensor, layers: list[AttentionLayer],
                  rng: np.random.Generator, training: bool) -> AttentionOutput:
    """Run a stack of attention layers; contributions come from the last
    layer's weighting matrices."""
    if not layers:
        raise ConfigurationError("attention stack needs at least one layer")
    out = layers[0](b, rng, training)
    for layer in layers[1:]:
        out = layer(out.y, rng, training)
    return out


def topk_positions(contributions: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest contributions, ties broken toward the lower
    timestep, returned in ascending timestep order."""
    L = contributions.shape[0]
    if not 1 <= k <= L:
        raise IndexError(f"k={k} out of bounds for block length {L}")
    order = np.argsort(-contributions, kind="stable")
    return np.sort(order[:k])


def compress_topk(out: AttentionOutput, k: int) -> tuple[Tensor, np.ndarray]:
    """Concatenate the rows of Y at the k most-contributing positions.

    Selection is a discrete, non-differentiated choice; gradients flow only
    through the selected rows' values.
    """
    positions = topk_positions(out.contributions, k)
    rows = out.y[positions]
    return T.reshape(rows, (1, -1)), positions


def compress_variant(out: AttentionOutput, variant: str, k: int,
                     rng: np.random.Generator | None = None,
                     linear_map: Tensor | None = None) -> tuple[Tensor, np.ndarray]:
    """Ablation compression strategies; all return a single row vector."""
    L, d = out.y.shape
    if variant == "topk":
        return compress_topk(out, k)
    if variant == "pooling":
        return T.tsum(out.y, axis=0, keepdims=True), np.arange(L)
    if variant == "topk_average":
        positions = topk_positions(out.contributions, k)
        c = out.contributions[positions]
        w = c / c.sum()
        acc = out.y[positions[0]:positions[0] + 1] * Tensor(w[0])
        for wi, p in zip(w[1:], positions[1:]):
            acc = acc + out.y[p:p + 1] * Tensor(wi)
        return acc, positions
    if variant == "linear":
        if linear_map is None:
            raise ConfigurationError("linear compression needs a trainable map")
        if (k * d) % L != 0:
            raise ConfigurationError(
                f"linear compression needs k*d divisible by L (k={k}, d={d}, L={L})")
        rows = k * d // L
        if linear_map.shape != (rows, d):
            raise T.ShapeError(
                f"linear map shape {linear_map.shape} expected ({rows}, {d})")
        mapped = T.matmul(out.y, T.transpose(linear_map))  # L x (k*d/L)
        return T.reshape(mapped, (1, -1)), np.arange(L)
    if variant == "random":
        if rng is None:
            raise ConfigurationError("random compression needs an RNG stream")
        if not 1 <= k <= L:
            raise IndexError(f"k={k} out of bounds for block length {L}")
        positions = np.sort(rng.choice(L, size=k, replace=False))
        rows = out.y[positions]
        return T.reshape(rows, (1, -1)), positions
    raise ConfigurationError(f"unknown compression variant: {variant}")


class FnnBlockEncoder:
    """Row-independent two-hidden-layer tanh MLP for the no-attention
    ablation; the per-row outputs concatenate in temporal order."""

    def __init__(self, store: ParameterStore, name: str, d: int, s_fnn: int,
                 hidden: int, rng: np.random.Generator):
        self.net = Mlp(store, name, [d, hidden, hidden, s_fnn], "tanh", rng)
        self.s_fnn = s_fnn

    def __call__(self, b: Tensor) -> Tensor:
        return T.reshape(self.net(b), (1, -1))
