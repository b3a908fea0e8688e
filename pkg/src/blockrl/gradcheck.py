"""Finite-difference verification of every trainable network.

Builds a small instance of the full stack on synthetic data and compares
taped gradients against central differences, parameter by parameter. Used
by the command-line ``gradcheck`` subcommand and the acceptance suite.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .agent import AgentConfig, SacAgent
from .model import BlockModel, ModelConfig
from .tensor import Tensor, finite_difference_check


def _small_model_cfg(mode="full") -> ModelConfig:
    return ModelConfig(L=4, k=2, K_sp=4, d=8, latent=3, heads=2, stack=2,
                       gru_hidden=6, embed_hidden=6, head_hidden=6,
                       joint_hidden=6, fnn_hidden=8, dropout=0.0, mode=mode)


def _synthetic_window(T_len, obs_dim, act_dim, seed):
    rng = np.random.default_rng(seed)
    return {
        "obs": rng.standard_normal((T_len, obs_dim)),
        "action": rng.uniform(-1, 1, (T_len, act_dim)),
        "reward": rng.standard_normal(T_len),
        "done": np.zeros(T_len),
        "r_prev": rng.standard_normal(T_len),
        "a_prev": rng.uniform(-1, 1, (T_len, act_dim)),
        "next_obs": rng.standard_normal((T_len, obs_dim)),
    }


def run_gradient_checks(seed: int = 0, step: float = 1e-5) -> dict[str, float]:
    """Max relative gradient error per named check."""
    obs_dim, act_dim = 3, 2
    results: dict[str, float] = {}

    # -- inference path: embedding -> attention -> blockwise GRU -> mu/sigma --
    rng = np.random.default_rng(seed)
    model = BlockModel(_small_model_cfg(), obs_dim, act_dim, rng)
    w = _synthetic_window(8, obs_dim, act_dim, seed + 1)

    def phi_loss():
        out = model.window_infer(w["obs"], w["r_prev"], w["a_prev"],
                                 np.random.default_rng(0), training=False)
        terms = []
        for summary, yk in out:
            terms.append(T.tsum(T.square(summary.mu)))
            terms.append(T.tsum(T.square(summary.sigma)))
            terms.append(T.tsum(T.square(yk)))
        return T.tsum(T.concat([T.reshape(t, (1,)) for t in terms]))

    errs = finite_difference_check(phi_loss, model.phi, step=step)
    results["inference networks (embed/attention/GRU/heads)"] = max(
        errs.values())

    # -- generative path: learned log-joint over latent samples --------------
    b = np.random.default_rng(seed + 2).standard_normal((4, model.cfg.latent))
    yk_const = Tensor(np.random.default_rng(seed + 3)
                      .standard_normal((1, model.cfg.yk_dim)))

    def theta_loss():
        return T.tsum(T.square(model.log_joint(yk_const, b)))

    errs = finite_difference_check(theta_loss, model.theta, step=step)
    results["generative log-joint network"] = max(errs.values())

    # -- no-attention model ablation ------------------------------------------
    model_fnn = BlockModel(_small_model_cfg(mode="blockwise_rnn_only"),
                           obs_dim, act_dim, np.random.default_rng(seed + 4))

    def fnn_loss():
        out = model_fnn.window_infer(w["obs"], w["r_prev"], w["a_prev"],
                                     np.random.default_rng(0), training=False)
        terms = [T.tsum(T.square(s.mu)) + T.tsum(T.square(s.sigma))
                 for s, _ in out]
        return T.tsum(T.concat([T.reshape(t, (1,)) for t in terms]))

    errs = finite_difference_check(fnn_loss, model_fnn.phi, step=step)
    results["block-encoder ablation network"] = max(errs.values())

    # -- agent: z-RNN plus policy / V / twin Q ---------------------------------
    for mode in ("proposed", "lstm", "sac_raw"):
        agent_model = model if mode == "proposed" else None
        agent = SacAgent(AgentConfig(hidden=(6, 6), z_hidden=5, lstm_embed=4,
                                     mode=mode),
                         obs_dim, act_dim, 1.0,
                         np.random.default_rng(seed + 5), model=agent_model)

        def agent_loss():
            f = agent.window_features(w, np.random.default_rng(0))
            acts = Tensor(w["action"])
            q_in = T.concat([f[:8], acts], axis=1)
            mean, sigma = agent._policy_params(f[:8])
            parts = [T.tsum(T.square(agent.q1_net(q_in))),
                     T.tsum(T.square(agent.q2_net(q_in))),
                     T.tsum(T.square(agent.v_net(f[:8]))),
                     T.tsum(T.square(mean)) + T.tsum(T.square(sigma))]
            return T.tsum(T.concat([T.reshape(p, (1,)) for p in parts]))

        errs = finite_difference_check(agent_loss, agent.params, step=step)
        results[f"agent networks ({mode})"] = max(errs.values())

    return results
