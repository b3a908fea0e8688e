"""End-to-end training loop with logging, checkpointing, and evaluation.

One episode at a time: fresh recurrent state at every episode start, random
actions during the warm-up phase, a one-time burst of model pretraining
immediately after it, then interleaved actor-critic and model updates on
replayed windows. Everything observable (CSV, checkpoint bytes) is a pure
function of config + seed; wall-clock timing goes to a sidecar JSON file so
the CSV stays byte-reproducible.
"""

from __future__ import annotations

import csv
import json
import time
from collections import deque
from pathlib import Path

import numpy as np

from .agent import SacAgent
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, from_text, to_text
from .envs import make_env
from .model import BlockModel
from .optim import Adam
from .replay import ReplayMemory
from .rng import RngStreams


class NanDivergenceError(RuntimeError):
    """A training loss became non-finite; diagnostics were dumped."""


CSV_COLUMNS = ["kind", "global_step", "episode", "episode_return",
               "avg_return_100", "gen_loss", "inf_loss", "actor_loss",
               "critic_loss", "value_loss", "wall_time_s"]

CHECKPOINT_NAME = "checkpoint.bsml"


def _fmt(v) -> str:
    return "" if v is None else f"{v:.6f}"


def expected_rl_updates(sched) -> int:
    """Closed-form count of actor-critic updates over a full run."""
    lo, hi, k = sched.pretrain_start, sched.total_steps, sched.rl_every
    return hi // k - lo // k


def expected_model_updates(sched) -> int:
    """Closed-form count of post-pretraining model updates over a full run."""
    lo, hi, k = sched.pretrain_start, sched.total_steps, sched.model_every
    return hi // k - lo // k


class Trainer:
    def __init__(self, cfg: RunConfig, out_dir):
        cfg.validate()
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.rngs = RngStreams(cfg.seed)
        self.env = make_env(cfg.env.name, self.rngs.get("env"),
                            **cfg.env.kwargs())
        init_rng = self.rngs.get("init")
        self.model = None
        self.theta_opt = None
        self.phi_opt = None
        if cfg.uses_model():
            self.model = BlockModel(cfg.model, self.env.obs_dim,
                                    self.env.act_dim, init_rng)
            if cfg.uses_snis():
                self.theta_opt = Adam(self.model.theta, cfg.model.lr)
                self.phi_opt = Adam(self.model.phi, cfg.model.lr)
        self.agent = SacAgent(cfg.agent, self.env.obs_dim, self.env.act_dim,
                              self.env.act_limit, init_rng, model=self.model)
        self.replay = ReplayMemory(cfg.schedule.replay_capacity,
                                   cfg.schedule.window)
        self.t_global = 0
        self.episode = 0
        self.n_rl_updates = 0
        self.n_model_updates = 0
        self.n_pretrain_updates = 0
        self.returns = deque(maxlen=100)
        self.successes = 0

    # -- checkpointing ----------------------------------------------------------

    def _gather_tensors(self) -> dict:
        out = {}
        for name, t in self.agent.params.items():
            out[f"agent.{name}"] = t.data
        for name, t in self.agent.target_params.items():
            out[f"target.{name}"] = t.data
        out.update(self.agent.q_opt.state_tensors("opt.q"))
        out.update(self.agent.v_opt.state_tensors("opt.v"))
        out.update(self.agent.pi_opt.state_tensors("opt.pi"))
        if self.model is not None:
            for name, t in self.model.phi.items():
                out[f"phi.{name}"] = t.data
            for name, t in self.model.theta.items():
                out[f"theta.{name}"] = t.data
        if self.theta_opt is not None:
            out.update(self.theta_opt.state_tensors("opt.theta"))
            out.update(self.phi_opt.state_tensors("opt.phi"))
        if self.agent.feat_opt is not None:
            out.update(self.agent.feat_opt.state_tensors("opt.feat"))
        out.update(self.replay.state_tensors())
        return out

    def _counters(self) -> dict:
        return {"t_global": self.t_global, "episode": self.episode,
                "n_rl_updates": self.n_rl_updates,
                "n_model_updates": self.n_model_updates,
                "n_pretrain_updates": self.n_pretrain_updates,
                "returns": list(self.returns),
                "successes": self.successes,
                "agent_updates": self.agent.updates}

    def save(self, path=None):
        path = path or self.out / CHECKPOINT_NAME
        blobs = {f"rng.{n}": b for n, b in self.rngs.state_blobs().items()}
        blobs["counters"] = json.dumps(self._counters(),
                                       sort_keys=True).encode()
        save_checkpoint(path, to_text(self.cfg), self._gather_tensors(), blobs)

    def load(self, path):
        config_text, tensors, blobs = load_checkpoint(path)
        if to_text(self.cfg) != config_text:
            raise ConfigError("checkpoint config does not match the current "
                              "config; construct the trainer from the "
                              "checkpoint's config")
        self._restore(tensors, blobs)

    def _restore(self, tensors: dict, blobs: dict):
        def sub(prefix):
            n = len(prefix)
            return {k[n:]: v for k, v in tensors.items() if k.startswith(prefix)}

        self.agent.params.set_values(sub("agent."))
        self.agent.target_params.set_values(sub("target."))
        self.agent.q_opt.load_state_tensors("opt.q", tensors)
        self.agent.v_opt.load_state_tensors("opt.v", tensors)
        self.agent.pi_opt.load_state_tensors("opt.pi", tensors)
        if self.model is not None:
            self.model.phi.set_values(sub("phi."))
            self.model.theta.set_values(sub("theta."))
        if self.theta_opt is not None:
            self.theta_opt.load_state_tensors("opt.theta", tensors)
            self.phi_opt.load_state_tensors("opt.phi", tensors)
        if self.agent.feat_opt is not None:
            self.agent.feat_opt.load_state_tensors("opt.feat", tensors)
        self.rngs.load_state_blobs({n[4:]: b for n, b in blobs.items()
                                    if n.startswith("rng.")})
        self.replay.load_state_tensors(tensors)
        c = json.loads(blobs["counters"].decode())
        self.t_global = c["t_global"]
        self.episode = c["episode"]
        self.n_rl_updates = c["n_rl_updates"]
        self.n_model_updates = c["n_model_updates"]
        self.n_pretrain_updates = c["n_pretrain_updates"]
        self.returns = deque(c["returns"], maxlen=100)
        self.successes = c["successes"]
        self.agent.updates = c["agent_updates"]

    # -- failure handling --------------------------------------------------------

    def _check_finite(self, losses: dict, context: str):
        if all(np.isfinite(v) for v in losses.values()):
            return
        dump = {"context": context, "global_step": self.t_global,
                "episode": self.episode, "losses": losses,
                "param_norms": {
                    n: float(np.linalg.norm(t.data))
                    for n, t in self.agent.params.items()}}
        if self.model is not None:
            dump["model_param_norms"] = {
                n: float(np.linalg.norm(t.data))
                for n, t in self.model.phi.items()}
        with open(self.out / "nan_dump.json", "w") as f:
            json.dump(dump, f, indent=2, sort_keys=True)
        raise NanDivergenceError(
            f"non-finite loss during {context} at step {self.t_global}; "
            f"diagnostics in {self.out / 'nan_dump.json'}")

    # -- main loop ----------------------------------------------------------------

    def run(self, resume: bool = False,
            stop_after_episodes: int | None = None) -> dict:
        """Train until the step budget is exhausted (or, for early
        checkpoint-and-stop, until ``stop_after_episodes`` more episodes
        finish). Always leaves a checkpoint at an episode boundary."""
        start = time.perf_counter()
        sched = self.cfg.schedule
        csv_mode = "a" if resume else "w"
        (self.out / "config.txt").write_text(to_text(self.cfg))
        episodes_done = 0
        with open(self.out / "train.csv", csv_mode, newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            if not resume:
                writer.writerow(CSV_COLUMNS)
            while self.t_global < sched.total_steps:
                if stop_after_episodes is not None \
                        and episodes_done >= stop_after_episodes:
                    break
                self._episode(writer)
                episodes_done += 1
                if sched.checkpoint_every > 0 \
                        and self.episode % sched.checkpoint_every == 0:
                    self.save()
        self.save()
        summary = {
            "episodes": self.episode,
            "global_steps": self.t_global,
            "avg_return_100": float(np.mean(self.returns))
            if self.returns else 0.0,
            "success_rate": self.successes / max(self.episode, 1),
            "rl_updates": self.n_rl_updates,
            "model_updates": self.n_model_updates,
            "pretrain_updates": self.n_pretrain_updates,
        }
        meta = dict(summary, wall_time_s=time.perf_counter() - start)
        with open(self.out / "run_meta.json", "w") as f:
            json.dump(meta, f, indent=2, sort_keys=True)
        return summary

    def _maybe_pretrain(self, writer):
        sched = self.cfg.schedule
        if not self.cfg.uses_snis() or self.n_pretrain_updates > 0:
            return
        if self.t_global != sched.pretrain_start + 1:
            return
        model_rng = self.rngs.get("model")
        replay_rng = self.rngs.get("replay")
        for _ in range(sched.pretrain_updates):
            windows = self.replay.sample_windows(sched.minibatch, replay_rng)
            losses = self.model.model_update(windows, self.theta_opt,
                                             self.phi_opt, model_rng)
            self.n_pretrain_updates += 1
            self._check_finite(losses, "model pretraining")
            writer.writerow(["pretrain", self.t_global, self.episode, "", "",
                             _fmt(losses["gen_loss"]),
                             _fmt(losses["inf_loss"]), "", "", "", ""])

    def _episode(self, writer):
        sched = self.cfg.schedule
        env_limit = self.env.act_limit
        agent_rng = self.rngs.get("agent")
        model_rng = self.rngs.get("model")
        replay_rng = self.rngs.get("replay")

        obs = self.env.reset()
        self.replay.begin_episode()
        state = self.agent.init_state()
        r_prev = 0.0
        a_prev = np.zeros(self.env.act_dim)
        ep_ret = 0.0
        success = False
        done = False
        while not done and self.t_global < sched.total_steps:
            self.t_global += 1
            self._maybe_pretrain(writer)
            if self.t_global <= sched.pretrain_start:
                action = agent_rng.uniform(-env_limit, env_limit,
                                           self.env.act_dim)
            else:
                action = self.agent.act(state, obs, r_prev, a_prev, agent_rng)
            res = self.env.step(action)
            self.replay.add(obs, action, res.reward, res.done, r_prev, a_prev,
                            res.observation)
            ep_ret += res.reward
            success = success or bool(res.info.get("success", False))

            if self.t_global > sched.pretrain_start and self.replay.can_sample():
                rl, ml = None, None
                if self.t_global % sched.rl_every == 0:
                    windows = self.replay.sample_windows(sched.minibatch,
                                                         replay_rng)
                    rl = self.agent.sac_update(windows, agent_rng)
                    self.n_rl_updates += 1
                    self._check_finite(rl, "actor-critic update")
                if self.cfg.uses_snis() \
                        and self.t_global % sched.model_every == 0:
                    windows = self.replay.sample_windows(sched.minibatch,
                                                         replay_rng)
                    ml = self.model.model_update(windows, self.theta_opt,
                                                 self.phi_opt, model_rng)
                    self.n_model_updates += 1
                    self._check_finite(ml, "model update")
                if rl is not None or ml is not None:
                    writer.writerow([
                        "update", self.t_global, self.episode, "", "",
                        _fmt(ml["gen_loss"]) if ml else "",
                        _fmt(ml["inf_loss"]) if ml else "",
                        _fmt(rl["pi_loss"]) if rl else "",
                        _fmt(rl["q_loss"]) if rl else "",
                        _fmt(rl["v_loss"]) if rl else "", ""])

            obs = res.observation
            r_prev = res.reward
            a_prev = action
            done = res.done

        self.episode += 1
        self.returns.append(ep_ret)
        self.successes += int(success)
        writer.writerow(["episode", self.t_global, self.episode, _fmt(ep_ret),
                         _fmt(float(np.mean(self.returns))),
                         "", "", "", "", "", ""])


def resume_from(checkpoint_path, out_dir) -> Trainer:
    """Rebuild a trainer from a checkpoint's own config snapshot."""
    config_text, tensors, blobs = load_checkpoint(checkpoint_path)
    cfg = from_text(config_text)
    trainer = Trainer(cfg, out_dir)
    trainer._restore(tensors, blobs)
    return trainer


def evaluate(cfg: RunConfig, agent: SacAgent, episodes: int, seed: int,
             deterministic: bool = True) -> dict:
    """Frozen-parameter rollouts; reports mean return and success rate."""
    rngs = RngStreams(seed)
    env = make_env(cfg.env.name, rngs.get("eval-env"), **cfg.env.kwargs())
    act_rng = rngs.get("eval-agent")
    rets = []
    successes = 0
    for _ in range(episodes):
        obs = env.reset()
        state = agent.init_state()
        r_prev = 0.0
        a_prev = np.zeros(env.act_dim)
        ep_ret = 0.0
        done = False
        while not done:
            action = agent.act(state, obs, r_prev, a_prev, act_rng,
                               deterministic=deterministic)
            res = env.step(action)
            ep_ret += res.reward
            if res.info.get("success", False):
                successes += 1
            obs = res.observation
            r_prev = res.reward
            a_prev = action
            done = res.done
        rets.append(ep_ret)
    return {"episodes": episodes,
            "mean_return": float(np.mean(rets)),
            "std_return": float(np.std(rets, ddof=1)) if episodes > 1 else 0.0,
            "success_rate": successes / episodes,
            "deterministic": deterministic}


def random_policy_eval(cfg: RunConfig, episodes: int, seed: int) -> dict:
    """Uniform-random-action baseline under the same evaluation protocol."""
    rngs = RngStreams(seed)
    env = make_env(cfg.env.name, rngs.get("eval-env"), **cfg.env.kwargs())
    act_rng = rngs.get("eval-agent")
    rets = []
    successes = 0
    for _ in range(episodes):
        env.reset()
        ep_ret = 0.0
        done = False
        while not done:
            action = act_rng.uniform(-env.act_limit, env.act_limit,
                                     env.act_dim)
            res = env.step(action)
            ep_ret += res.reward
            if res.info.get("success", False):
                successes += 1
            done = res.done
        rets.append(ep_ret)
    return {"episodes": episodes, "mean_return": float(np.mean(rets)),
            "success_rate": successes / episodes}
