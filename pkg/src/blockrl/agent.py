"""Off-policy soft actor-critic over recurrently summarized histories.

The critic side follows the original SAC formulation with a state-value
network, an exponential-moving-average copy of it for bootstrapping, and
twin Q networks. The actor is a tanh-squashed diagonal Gaussian.

Policy and value networks never receive raw observations directly (except
in the memoryless baseline); they act on a feature vector z_t produced by a
step-level GRU. Depending on the variant, that GRU consumes

* ``proposed``          - the frozen model embedding of [a_prev; r_prev; o]
                          plus the (mu, sigma) of the latest completed block
                          (all constants; gradients train only the GRU),
* ``attention_only``    - the model embedding plus the latest compressed
                          block vector, trained end-to-end by the critic
                          loss (no latent-variable model),
* ``lstm``              - the agent's own embedding, through an LSTM,
* ``sac_raw``           - nothing: z_t is simply [o_t; r_prev].

The ``proposed`` wiring also serves the blockwise-RNN-only model ablation;
that variant differs only inside the model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import ConfigurationError, GruCell, LstmCell, Mlp
from .model import BlockModel
from .optim import Adam
from .tensor import ParameterStore, Tensor

AGENT_MODES = ("proposed", "attention_only", "lstm", "sac_raw")

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class AgentConfig:
    hidden: tuple = (256, 256)
    z_hidden: int = 256
    lstm_embed: int = 64
    lr: float = 3e-4
    alpha: float = 0.2
    tau: float = 0.005
    gamma: float = 0.99
    log_sigma_min: float = -20.0
    log_sigma_max: float = 2.0
    mode: str = "proposed"
    act_eps: float = 1e-6

    def validate(self):
        if self.mode not in AGENT_MODES:
            raise ConfigurationError(f"unknown agent mode: {self.mode}")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigurationError(f"tau must be in (0, 1], got {self.tau}")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError(f"gamma must be in [0, 1), got {self.gamma}")


@dataclass
class AgentState:
    """Per-episode recurrent bookkeeping carried by whoever drives the agent."""
    z: np.ndarray                 # 1 x z_hidden (unused in sac_raw)
    c: np.ndarray | None          # LSTM cell state (lstm mode)
    model_h: np.ndarray | None    # blockwise GRU state (proposed mode)
    block_rows: list              # embeddings of the in-progress block
    cond: np.ndarray              # 1 x cond_dim conditioning vector


class SacAgent:
    def __init__(self, cfg: AgentConfig, obs_dim: int, act_dim: int,
                 act_limit: float, rng: np.random.Generator,
                 model: BlockModel | None = None):
        cfg.validate()
        needs_model = cfg.mode in ("proposed", "attention_only")
        if needs_model and model is None:
            raise ConfigurationError(f"agent mode {cfg.mode} requires a model")
        if cfg.mode == "attention_only" and model is not None \
                and model.cfg.mode != "attention_only":
            raise ConfigurationError(
                "attention_only agent requires a model in attention_only mode")
        self.cfg = cfg
        self.model = model if needs_model else None
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.act_limit = float(act_limit)

        if cfg.mode == "proposed":
            self.cond_dim = 2 * model.cfg.latent
            z_in = model.cfg.d + self.cond_dim
            self.feature_dim = cfg.z_hidden
        elif cfg.mode == "attention_only":
            self.cond_dim = model.cfg.yk_dim
            z_in = model.cfg.d + self.cond_dim
            self.feature_dim = cfg.z_hidden
        elif cfg.mode == "lstm":
            self.cond_dim = 0
            z_in = cfg.lstm_embed + act_dim
            self.feature_dim = cfg.z_hidden
        else:  # sac_raw
            self.cond_dim = 0
            z_in = 0
            self.feature_dim = obs_dim + 1

        self.params = ParameterStore()
        h = list(cfg.hidden)
        self.policy_net = Mlp(self.params, "policy",
                              [self.feature_dim] + h + [2 * act_dim], "relu", rng)
        self.v_net = Mlp(self.params, "v", [self.feature_dim] + h + [1],
                         "relu", rng)
        self.q1_net = Mlp(self.params, "q1",
                          [self.feature_dim + act_dim] + h + [1], "relu", rng)
        self.q2_net = Mlp(self.params, "q2",
                          [self.feature_dim + act_dim] + h + [1], "relu", rng)
        self.target_params = ParameterStore()
        self.vbar_net = Mlp(self.target_params, "vbar",
                            [self.feature_dim] + h + [1], "relu", rng)
        for name in self.target_params.names():
            src = name.replace("vbar", "v", 1)
            self.target_params[name].data = self.params[src].data.copy()

        self.z_gru = None
        self.z_lstm = None
        self.embed_net = None
        if cfg.mode in ("proposed", "attention_only"):
            self.z_gru = GruCell(self.params, "zrnn", z_in, cfg.z_hidden, rng)
        elif cfg.mode == "lstm":
            self.embed_net = Mlp(self.params, "embed",
                                 [obs_dim + 1, cfg.lstm_embed, cfg.lstm_embed],
                                 "tanh", rng)
            self.z_lstm = LstmCell(self.params, "zrnn", z_in, cfg.z_hidden, rng)

        names = self.params.names()
        critic = [n for n in names if n.startswith(("q1.", "q2.", "zrnn.",
                                                    "embed."))]
        self.q_opt = Adam(self.params, cfg.lr, names=critic)
        self.v_opt = Adam(self.params, cfg.lr,
                          names=[n for n in names if n.startswith("v.")])
        self.pi_opt = Adam(self.params, cfg.lr,
                           names=[n for n in names if n.startswith("policy.")])
        self.feat_opt = None
        if cfg.mode == "attention_only":
            self.feat_opt = Adam(self.model.phi, cfg.lr)
        self.updates = 0

    # -- policy head ----------------------------------------------------------

    def _policy_params(self, z: Tensor) -> tuple[Tensor, Tensor]:
        out = self.policy_net(z)
        mean = out[:, :self.act_dim]
        log_sigma = T.clip(out[:, self.act_dim:], self.cfg.log_sigma_min,
                           self.cfg.log_sigma_max)
        return mean, T.exp(log_sigma)

    def sample_action(self, z: Tensor, rng: np.random.Generator,
                      deterministic: bool = False) -> tuple[Tensor, Tensor | None]:
        """Tanh-squashed Gaussian draw with its taped log density."""
        mean, sigma = self._policy_params(z)
        if deterministic:
            return T.tanh(mean) * Tensor(self.act_limit), None
        eps = rng.standard_normal(mean.shape)
        raw = mean + sigma * Tensor(eps)
        action = T.tanh(raw) * Tensor(self.act_limit)
        log_gauss = T.neg(T.tsum(
            T.log(sigma) + Tensor(0.5 * eps ** 2 + 0.5 * _LOG_2PI),
            axis=1, keepdims=True))
        squash = T.tsum(T.log(
            Tensor(self.act_limit) * (Tensor(1.0) - T.square(T.tanh(raw)))
            + Tensor(self.cfg.act_eps)), axis=1, keepdims=True)
        return action, log_gauss - squash

    # -- feature pipelines ----------------------------------------------------

    def init_state(self) -> AgentState:
        model_h = None
        c = None
        if self.cfg.mode == "proposed":
            model_h = np.zeros((1, self.model.cfg.gru_hidden))
        if self.cfg.mode == "lstm":
            c = np.zeros((1, self.cfg.z_hidden))
        return AgentState(z=np.zeros((1, self.cfg.z_hidden)), c=c,
                          model_h=model_h, block_rows=[],
                          cond=np.zeros((1, self.cond_dim)))

    def act(self, state: AgentState, obs, r_prev, a_prev,
            rng: np.random.Generator, deterministic: bool = False) -> np.ndarray:
        """Advance the recurrent state one step and return an action.

        Also maintains the in-progress block: once ``L`` embeddings have
        accumulated, the model summarizes them and the conditioning vector
        switches to the new block's statistics.
        """
        cfg = self.cfg
        obs = np.asarray(obs, dtype=np.float64).reshape(1, -1)
        a_prev = np.asarray(a_prev, dtype=np.float64).reshape(1, -1)
        with T.no_grad():
            if cfg.mode == "sac_raw":
                feats = Tensor(np.concatenate([obs, [[float(r_prev)]]], axis=1))
            elif cfg.mode == "lstm":
                inp = Tensor(np.concatenate([obs, [[float(r_prev)]]], axis=1))
                emb = T.concat([T.tanh(self.embed_net(inp)), Tensor(a_prev)],
                               axis=1)
                zt, ct = self.z_lstm(emb, Tensor(state.z), Tensor(state.c))
                state.z = zt.data
                state.c = ct.data
                feats = zt
            else:
                emb = self.model.embed_steps(obs, float(r_prev), a_prev)
                zin = T.concat([emb, Tensor(state.cond)], axis=1)
                zt = self.z_gru(zin, Tensor(state.z))
                state.z = zt.data
                feats = zt
                state.block_rows.append(emb.data.copy())
                if len(state.block_rows) == self.model.cfg.L:
                    block = Tensor(np.vstack(state.block_rows))
                    h_prev = Tensor(state.model_h) if state.model_h is not None \
                        else self.model.initial_hidden()
                    summary, yk = self.model.infer_block(block, h_prev, rng,
                                                         training=False)
                    if cfg.mode == "proposed":
                        state.model_h = summary.h.data
                        state.cond = np.concatenate([summary.mu.data,
                                                     summary.sigma.data], axis=1)
                    else:
                        state.cond = yk.data
                    state.block_rows = []
            action, _ = self.sample_action(feats, rng, deterministic)
        return action.data.ravel()

    def _extend(self, w: dict) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Window sequences of length T+1 ending at the final next-state."""
        obs = np.vstack([w["obs"], w["next_obs"][-1:]])
        r_prev = np.concatenate([w["r_prev"], w["reward"][-1:]])
        a_prev = np.vstack([w["a_prev"], w["action"][-1:]])
        return obs, r_prev, a_prev

    def window_features(self, w: dict, rng: np.random.Generator) -> Tensor:
        """Feature sequence (T+1) x feature_dim for one replay window.

        Recurrent state starts from zero at the window head. In ``proposed``
        mode everything entering the step GRU is a constant; in
        ``attention_only`` mode the embedding and block vectors stay taped so
        the critic loss trains them.
        """
        cfg = self.cfg
        obs, r_prev, a_prev = self._extend(w)
        steps = obs.shape[0]
        if cfg.mode == "sac_raw":
            return Tensor(np.concatenate([obs, r_prev[:, None]], axis=1))
        if cfg.mode == "lstm":
            inp = Tensor(np.concatenate([obs, r_prev[:, None]], axis=1))
            emb = T.concat([T.tanh(self.embed_net(inp)), Tensor(a_prev)], axis=1)
            z = Tensor(np.zeros((1, cfg.z_hidden)))
            c = Tensor(np.zeros((1, cfg.z_hidden)))
            rows = []
            for t in range(steps):
                z, c = self.z_lstm(emb[t:t + 1], z, c)
                rows.append(z)
            return T.concat(rows, axis=0)

        L = self.model.cfg.L
        n_blocks = (steps - 1) // L
        if cfg.mode == "proposed":
            with T.no_grad():
                emb = Tensor(self.model.embed_steps(obs, r_prev, a_prev).data)
                summaries = self.model.window_infer(obs[:n_blocks * L],
                                                    r_prev[:n_blocks * L],
                                                    a_prev[:n_blocks * L],
                                                    rng, training=False)
            conds = [Tensor(np.concatenate([s.mu.data, s.sigma.data], axis=1))
                     for s, _ in summaries]
        else:  # attention_only: taped end to end
            emb = self.model.embed_steps(obs, r_prev, a_prev)
            infos = self.model.window_infer(obs[:n_blocks * L],
                                            r_prev[:n_blocks * L],
                                            a_prev[:n_blocks * L],
                                            rng, training=True)
            conds = [yk for _, yk in infos]
        zero_cond = Tensor(np.zeros((1, self.cond_dim)))
        z = Tensor(np.zeros((1, cfg.z_hidden)))
        rows = []
        for t in range(steps):
            n = t // L
            cond = zero_cond if n == 0 else conds[min(n, n_blocks) - 1]
            z = self.z_gru(T.concat([emb[t:t + 1], cond], axis=1), z)
            rows.append(z)
        return T.concat(rows, axis=0)

    def _batched_feature_rows(self, windows: list[dict],
                              rng: np.random.Generator) -> list[Tensor]:
        """Time-major feature rows for a minibatch: a list of T+1 tensors,
        each (n_windows) x feature_dim, sharing one recurrent pass.

        All windows have the same length, so their block boundaries align
        and the step recurrences can run as one batch; this is what makes
        per-step updates affordable.
        """
        cfg = self.cfg
        n = len(windows)
        ext = [self._extend(w) for w in windows]
        steps = ext[0][0].shape[0]
        obs_flat = np.vstack([e[0] for e in ext])
        r_flat = np.concatenate([e[1] for e in ext])
        a_flat = np.vstack([e[2] for e in ext])

        if cfg.mode == "sac_raw":
            feats = np.concatenate([obs_flat, r_flat[:, None]], axis=1)
            per_t = feats.reshape(n, steps, -1).swapaxes(0, 1)
            return [Tensor(per_t[t]) for t in range(steps)]

        if cfg.mode == "lstm":
            inp = Tensor(np.concatenate([obs_flat, r_flat[:, None]], axis=1))
            emb = T.tanh(self.embed_net(inp))
            a_tm = a_flat.reshape(n, steps, -1).swapaxes(0, 1)
            idx = np.arange(n) * steps
            z = Tensor(np.zeros((n, cfg.z_hidden)))
            c = Tensor(np.zeros((n, cfg.z_hidden)))
            rows = []
            for t in range(steps):
                x = T.concat([emb[idx + t], Tensor(a_tm[t])], axis=1)
                z, c = self.z_lstm(x, z, c)
                rows.append(z)
            return rows

        if cfg.mode == "attention_only":
            feats = [self.window_features(w, rng) for w in windows]
            return [T.concat([f[t:t + 1] for f in feats], axis=0)
                    for t in range(steps)]

        # proposed: all z-GRU inputs are constants
        L = self.model.cfg.L
        n_blocks = (steps - 1) // L
        with T.no_grad():
            emb = self.model.embed_steps(obs_flat, r_flat, a_flat).data
            conds = np.zeros((n_blocks + 1, n, self.cond_dim))
            for i in range(n):
                h = self.model.initial_hidden()
                base = i * steps
                for b in range(n_blocks):
                    block = Tensor(emb[base + b * L:base + (b + 1) * L])
                    summary, _ = self.model.infer_block(block, h, rng,
                                                        training=False)
                    h = summary.h
                    conds[b + 1, i] = np.concatenate(
                        [summary.mu.data, summary.sigma.data], axis=1)
        emb_tm = emb.reshape(n, steps, -1).swapaxes(0, 1)
        z = Tensor(np.zeros((n, cfg.z_hidden)))
        rows = []
        for t in range(steps):
            cond_t = conds[min(t // L, n_blocks)]
            z = self.z_gru(Tensor(np.concatenate([emb_tm[t], cond_t],
                                                 axis=1)), z)
            rows.append(z)
        return rows

    # -- updates ---------------------------------------------------------------

    def sac_update(self, windows: list[dict], rng: np.random.Generator) -> dict:
        """One gradient step of each loss over a minibatch of windows.

        Critic loss trains the twin Q networks and everything feeding the
        features; the value loss trains only V; the actor loss trains only
        the policy. The bootstrap value comes from the moving-average copy
        of V applied to the constant next-step features.
        """
        cfg = self.cfg
        n = len(windows)
        horizon = windows[0]["reward"].shape[0]
        rows = self._batched_feature_rows(windows, rng)

        # time-major constants (step t of every window, then step t+1, ...)
        def time_major(key):
            stacked = np.stack([w[key] for w in windows])  # n x T x ...
            return stacked.swapaxes(0, 1).reshape(horizon * n, -1)

        actions = time_major("action")
        rewards = time_major("reward")
        dones = time_major("done")

        z_taped = T.concat(rows[:horizon], axis=0)       # (T*n) x feat
        q_in = T.concat([z_taped, Tensor(actions)], axis=1)
        q1 = self.q1_net(q_in)
        q2 = self.q2_net(q_in)
        with T.no_grad():
            z_next = np.vstack([rows[t].data for t in range(1, horizon + 1)])
            vbar = self.vbar_net(Tensor(z_next)).data
        y = Tensor(rewards + cfg.gamma * (1.0 - dones) * vbar)
        q_loss = T.tmean(T.square(q1 - y) + T.square(q2 - y))
        self.params.zero_grad()
        if self.feat_opt is not None:
            self.model.phi.zero_grad()
        T.backward(q_loss, self.params)
        self.q_opt.step()
        if self.feat_opt is not None:
            self.feat_opt.step()

        z_all = Tensor(z_taped.data)
        a_new, log_pi = self.sample_action(z_all, rng)
        qmin = T.minimum(self.q1_net(T.concat([z_all, a_new], axis=1)),
                         self.q2_net(T.concat([z_all, a_new], axis=1)))

        v_target = Tensor(qmin.data - cfg.alpha * log_pi.data)
        v_loss = T.tmean(T.square(self.v_net(z_all) - v_target))
        self.params.zero_grad()
        T.backward(v_loss, self.params)
        self.v_opt.step()

        pi_loss = T.tmean(log_pi * Tensor(cfg.alpha) - qmin)
        self.params.zero_grad()
        T.backward(pi_loss, self.params)
        self.pi_opt.step()

        for name in self.target_params.names():
            src = self.params[name.replace("vbar", "v", 1)]
            tgt = self.target_params[name]
            tgt.data = (1.0 - cfg.tau) * tgt.data + cfg.tau * src.data
        self.updates += 1
        return {"q_loss": q_loss.item(), "v_loss": v_loss.item(),
                "pi_loss": pi_loss.item()}
