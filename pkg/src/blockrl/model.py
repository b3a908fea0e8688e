"""Blockwise sequential latent-variable model.

The inference side embeds timestep samples, compresses each block with a
self-attention stack (or an FNN in the no-attention ablation), carries a
blockwise GRU state across blocks, and emits a diagonal Gaussian (mu, sigma)
per block. The generative side is a learned scalar log-joint network. Both
are trained by self-normalized importance sampling: normalized weights
w_j = p(B, b_j | past) / q(b_j | ...) reweight per-sample score gradients,
with the weights and the latent samples treated as constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .layers import (
    AttentionLayer,
    ConfigurationError,
    FnnBlockEncoder,
    GruCell,
    Mlp,
    compress_variant,
    stack_forward,
)
from .tensor import ParameterStore, Tensor


class DegenerateWeightsError(RuntimeError):
    """All importance weights underflowed to zero."""


MODES = ("full", "attention_only", "blockwise_rnn_only")
COMPRESSIONS = ("topk", "pooling", "topk_average", "linear", "random")


@dataclass
class ModelConfig:
    L: int = 32                  # block length
    k: int = 2                   # selected elements per block
    K_sp: int = 50               # latent samples per block update
    d: int = 256                 # embedding dim
    latent: int = 64
    heads: int = 4
    stack: int = 2
    mode: str = "full"
    compression: str = "topk"
    gru_hidden: int = 256
    embed_hidden: int = 256
    head_hidden: int = 128
    joint_hidden: int = 256
    fnn_hidden: int = 256
    dropout: float = 0.1
    lr: float = 8e-4
    sigma_floor: float = 1e-6

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    @property
    def yk_dim(self) -> int:
        if self.compression == "pooling" or self.compression == "topk_average":
            return self.d
        return self.k * self.d

    def validate(self):
        if self.d % self.heads != 0:
            raise ConfigurationError(f"d={self.d} not divisible by heads={self.heads}")
        if not 1 <= self.k <= self.L:
            raise ConfigurationError(f"k={self.k} must be in [1, L={self.L}]")
        if self.K_sp < 1:
            raise ConfigurationError(f"K_sp={self.K_sp} must be >= 1")
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown model mode: {self.mode}")
        if self.compression not in COMPRESSIONS:
            raise ConfigurationError(f"unknown compression: {self.compression}")


@dataclass
class BlockSummary:
    h: Tensor | None
    mu: Tensor | None
    sigma: Tensor | None
    selected_positions: np.ndarray


@dataclass
class LatentBatch:
    samples: np.ndarray          # K_sp x latent, constants
    log_q: Tensor                # K_sp x 1, function of (mu, sigma)
    log_joint: Tensor | None = None  # K_sp x 1, function of theta
    norm_weights: np.ndarray | None = None


def snis_normalize(log_weights: np.ndarray) -> np.ndarray:
    """exp-normalize with max subtraction; output sums to 1."""
    lw = np.asarray(log_weights, dtype=np.float64)
    finite = np.isfinite(lw)
    if not finite.any():
        raise DegenerateWeightsError("no finite importance weights")
    m = lw[finite].max()
    w = np.where(finite, np.exp(lw - m), 0.0)
    return w / w.sum()


def generative_grad(batch: LatentBatch, theta: ParameterStore) -> float:
    """Accumulate sum_j w_j * grad_theta log p(B, b_j | past) into theta
    gradients (the ascent direction on the log-likelihood). Weights are
    constants. Returns the surrogate value sum_j w_j log p_j."""
    w = batch.norm_weights
    surrogate = T.tsum(Tensor(w.reshape(-1, 1)) * batch.log_joint)
    T.backward(surrogate, theta)
    return surrogate.item()


def inference_grad(batch: LatentBatch, phi: ParameterStore) -> float:
    """Accumulate the gradient of the loss -sum_j w_j log q(b_j) into phi
    gradients (descending it reduces the KL divergence to the exact
    posterior). Samples and weights are constants. Returns the loss value."""
    w = batch.norm_weights
    loss = T.neg(T.tsum(Tensor(w.reshape(-1, 1)) * batch.log_q))
    T.backward(loss, phi)
    return loss.item()


class BlockModel:
    """Holds the phi (inference) and theta (generative) parameter stores and
    implements the per-block pipeline plus the SNIS minibatch update."""

    def __init__(self, cfg: ModelConfig, obs_dim: int, act_dim: int,
                 rng: np.random.Generator):
        cfg.validate()
        if cfg.d <= act_dim:
            raise ConfigurationError(f"d={cfg.d} must exceed action dim {act_dim}")
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.phi = ParameterStore()
        self.theta = ParameterStore()

        self.embed_net = Mlp(self.phi, "embed",
                             [obs_dim + 1, cfg.embed_hidden, cfg.d - act_dim],
                             "tanh", rng)
        if cfg.mode == "blockwise_rnn_only":
            s_fnn = cfg.k * cfg.d // cfg.L
            if s_fnn * cfg.L != cfg.k * cfg.d:
                raise ConfigurationError(
                    f"blockwise_rnn_only needs k*d divisible by L "
                    f"(k={cfg.k}, d={cfg.d}, L={cfg.L})")
            self.fnn = FnnBlockEncoder(self.phi, "fnn", cfg.d, s_fnn,
                                       cfg.fnn_hidden, rng)
            self.attention = None
        else:
            self.attention = [
                AttentionLayer(self.phi, f"attn{i}", cfg.d, cfg.heads,
                               2 * cfg.d, cfg.dropout, rng)
                for i in range(cfg.stack)
            ]
            self.fnn = None
        self.linear_map = None
        if cfg.compression == "linear":
            rows = cfg.k * cfg.d // cfg.L
            if rows * cfg.L != cfg.k * cfg.d:
                raise ConfigurationError("linear compression needs k*d divisible by L")
            self.linear_map = self.phi.add_uniform("comp.linear", (rows, cfg.d),
                                                   cfg.d, rng)
        if cfg.mode != "attention_only":
            self.block_gru = GruCell(self.phi, "block_gru", cfg.yk_dim,
                                     cfg.gru_hidden, rng)
            self.mu_head = Mlp(self.phi, "mu_head",
                               [cfg.gru_hidden, cfg.head_hidden, cfg.latent],
                               "tanh", rng)
            self.sigma_head = Mlp(self.phi, "sigma_head",
                                  [cfg.gru_hidden, cfg.head_hidden, cfg.latent],
                                  "tanh", rng)
            self.joint_net = Mlp(self.theta, "joint",
                                 [cfg.yk_dim + cfg.latent, cfg.joint_hidden, 1],
                                 "tanh", rng)

    # -- forward pieces -------------------------------------------------------

    def initial_hidden(self) -> Tensor:
        return Tensor(np.zeros((1, self.cfg.gru_hidden)))

    def embed_steps(self, obs: np.ndarray, r_prev: np.ndarray,
                    a_prev: np.ndarray) -> Tensor:
        """Embed rows x_t = [a_prev; r_prev; o] to dim d; any number of rows."""
        obs = np.atleast_2d(obs)
        a_prev = np.atleast_2d(a_prev)
        r_prev = np.asarray(r_prev, dtype=np.float64).reshape(-1, 1)
        inp = Tensor(np.concatenate([obs, r_prev], axis=1))
        emb = T.tanh(self.embed_net(inp))
        return T.concat([emb, Tensor(a_prev)], axis=1)

    def embed_step(self, obs, r_prev, a_prev) -> Tensor:
        return self.embed_steps(obs, r_prev, a_prev)

    def infer_block(self, block: Tensor, h_prev: Tensor,
                    rng: np.random.Generator, training: bool
                    ) -> tuple[BlockSummary, Tensor]:
        """Block embedding -> compressed vector Y^k -> blockwise GRU ->
        Gaussian head outputs. Returns (summary, Y^k)."""
        cfg = self.cfg
        if block.shape != (cfg.L, cfg.d):
            raise T.ShapeError(f"block shape {block.shape} expected ({cfg.L}, {cfg.d})")
        if cfg.mode == "blockwise_rnn_only":
            yk = self.fnn(block)
            positions = np.arange(cfg.L)
        else:
            out = stack_forward(block, self.attention, rng, training)
            yk, positions = compress_variant(out, cfg.compression, cfg.k,
                                             rng=rng, linear_map=self.linear_map)
        if cfg.mode == "attention_only":
            return BlockSummary(None, None, None, positions), yk
        h = self.block_gru(yk, h_prev)
        mu = self.mu_head(h)
        sigma = T.softplus(self.sigma_head(h)) + Tensor(cfg.sigma_floor)
        return BlockSummary(h, mu, sigma, positions), yk

    def sample_latents(self, summary: BlockSummary, K_sp: int,
                       rng: np.random.Generator) -> LatentBatch:
        """Reparameterized draws b = mu + sigma * eps, treated downstream as
        constants; log_q stays a taped function of (mu, sigma)."""
        if K_sp < 1:
            raise ValueError(f"K_sp must be >= 1, got {K_sp}")
        eps = rng.standard_normal((K_sp, self.cfg.latent))
        b = summary.mu.data + summary.sigma.data * eps
        log_q = T.gaussian_log_density(Tensor(b), summary.mu, summary.sigma)
        return LatentBatch(samples=b, log_q=log_q)

    def log_joint(self, yk: Tensor, b: np.ndarray) -> Tensor:
        """Learned unnormalized log p(B_n, b | past) per latent row.

        Y^k enters through a stop-gradient so the generative objective never
        back-propagates into phi."""
        b = np.atleast_2d(b)
        yk_const = np.broadcast_to(yk.data, (b.shape[0], yk.shape[1]))
        inp = T.concat([Tensor(np.array(yk_const)), Tensor(b)], axis=1)
        return self.joint_net(inp)

    # -- inference over stored windows ---------------------------------------

    def window_infer(self, obs, r_prev, a_prev, rng, training: bool = False
                     ) -> list[tuple[BlockSummary, Tensor]]:
        """Run the block pipeline over a T-step window (T divisible by L);
        returns (summary, Y^k) per completed block, h carried across blocks."""
        cfg = self.cfg
        steps = obs.shape[0]
        if steps % cfg.L != 0:
            raise ValueError(f"window length {steps} not divisible by L={cfg.L}")
        emb = self.embed_steps(obs, r_prev, a_prev)
        h = self.initial_hidden()
        out = []
        for n in range(steps // cfg.L):
            block = emb[n * cfg.L:(n + 1) * cfg.L]
            summary, yk = self.infer_block(block, h, rng, training)
            if summary.h is not None:
                h = summary.h
            out.append((summary, yk))
        return out

    def model_update(self, windows: list[dict], theta_opt, phi_opt,
                     rng: np.random.Generator) -> dict:
        """One SNIS update over a minibatch of T-step windows.

        Equivalent to calling generative_grad / inference_grad per block and
        averaging, but runs one backward pass per parameter set. Applies one
        Adam step to theta and one to phi.
        """
        cfg = self.cfg
        gen_terms = []
        inf_terms = []
        n_blocks = 0
        for w in windows:
            emb = self.embed_steps(w["obs"], w["r_prev"], w["a_prev"])
            h = self.initial_hidden()
            for n in range(emb.shape[0] // cfg.L):
                block = emb[n * cfg.L:(n + 1) * cfg.L]
                summary, yk = self.infer_block(block, h, rng, training=True)
                h = summary.h
                batch = self.sample_latents(summary, cfg.K_sp, rng)
                batch.log_joint = self.log_joint(yk, batch.samples)
                logw = batch.log_joint.data.ravel() - batch.log_q.data.ravel()
                batch.norm_weights = snis_normalize(logw)
                wts = Tensor(batch.norm_weights.reshape(-1, 1))
                gen_terms.append(T.neg(T.tsum(wts * batch.log_joint)))
                inf_terms.append(T.neg(T.tsum(wts * batch.log_q)))
                n_blocks += 1

        scale = Tensor(1.0 / n_blocks)
        gen_loss = T.tsum(T.concat([T.reshape(t, (1,)) for t in gen_terms])) * scale
        inf_loss = T.tsum(T.concat([T.reshape(t, (1,)) for t in inf_terms])) * scale
        self.theta.zero_grad()
        T.backward(gen_loss, self.theta)
        theta_opt.step()
        self.phi.zero_grad()
        T.backward(inf_loss, self.phi)
        phi_opt.step()
        return {"gen_loss": gen_loss.item(), "inf_loss": inf_loss.item()}
