"""Rollout collection, the training loop, evaluation, and checkpoints.

Randomness is organized as one stream per consumer: every env slot, every
planner slot, the update shuffler, and evaluation all draw from their own
generators spawned off the run seed. A slot's draws depend only on its own
index, never on how many slots run beside it, which is what makes vectorized
collection bit-identical to sequential collection.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from planrl.envs import EPISODE_LIMIT, task_set
from planrl.envs import VecEnv
from planrl.errors import UsageError
from planrl.exploration import alpha_at, q_model_based, q_model_free
from planrl.multitask import RewardScaler, schedule
from planrl.nn import tensor as T
from planrl.nn.checkpoint import load_bundle, save_bundle
from planrl.planner import plan_batch
from planrl.policy_opt import RolloutBatch, make_optimizers, update
from planrl.world_model import WorldModel
from planrl.config import RunConfig, config_from_dict


@dataclass
class CollectStats:
    planner_score: float = None
    episodes: int = 0


class Trainer:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        names = cfg.env.task_names()
        task_envs, self.tasks = task_set(names)
        self._env_by_id = {t.task_id: e for t, e in zip(self.tasks, task_envs)}

        seeds = np.random.SeedSequence(cfg.run.seed).spawn(5)
        env_seed = int(seeds[0].generate_state(1)[0])
        model_seed = int(seeds[1].generate_state(1)[0])
        self.model = WorldModel(self.tasks, cfg.model, seed=model_seed)
        self.opts = make_optimizers(self.model, cfg.update)
        self.view = self.model.planning_view()

        n = cfg.run.num_envs
        slot_tasks = schedule(0, n, self.tasks)
        slot_envs = [self._env_by_id[t.task_id] for t in slot_tasks]
        self.venv = VecEnv(slot_envs, slot_tasks, self.model.universal)
        self.obs = self.venv.reset_all(env_seed)
        self.slot_ids = np.array([t.embed_index for t in slot_tasks],
                                 dtype=np.int64)
        self.slot_low, self.slot_high = self.view.bounds(self.slot_ids)
        self.slot_mask = self.view.mask(self.slot_ids)

        self.plan_rngs = [np.random.default_rng(s)
                          for s in seeds[2].spawn(n)]
        self.update_rng = np.random.default_rng(seeds[3])
        self._eval_entropy = int(seeds[4].generate_state(1)[0])

        a = self.model.universal.act_dim
        self.warm = np.zeros((n, cfg.planner.horizon, a))
        self.scaler = RewardScaler([t.task_id for t in self.tasks])
        self.global_step = 0
        self.updates = 0
        self.eval_count = 0
        self.first_success = {t.task_id: None for t in self.tasks}
        self._ep_returns = {t.task_id: [] for t in self.tasks}
        self._ep_lengths = []

    # ----- action selection

    def _select_actions(self, z):
        """Executed actions plus their log-density under the policy prior.

        With planning on, each slot executes a sample around the refined
        first-step mean; otherwise it samples the prior directly. Either way
        the stored log-prob is the prior's density at the executed action,
        recomputable bit for bit at unchanged parameters.
        """
        cfg = self.cfg
        n = self.venv.n
        a_dim = self.model.universal.act_dim
        p_mean, p_sigma = self.view.prior(z, self.slot_ids)
        acts = np.zeros((n, a_dim))
        score = None
        if cfg.planner.enabled:
            results = plan_batch(self.view, z, self.slot_ids, self.plan_rngs,
                                 cfg.planner, warm_mean=self.warm)
            scores = np.zeros(n)
            for i, res in enumerate(results):
                eps = self.plan_rngs[i].standard_normal(a_dim)
                acts[i] = np.clip(res.mean[0] + res.std[0] * eps,
                                  self.slot_low[i], self.slot_high[i])
                acts[i] *= self.slot_mask[i]
                self.warm[i] = res.warm_mean
                scores[i] = res.score
            score = float(scores.mean())
        else:
            for i in range(n):
                eps = self.plan_rngs[i].standard_normal(a_dim)
                acts[i] = np.clip(p_mean[i] + p_sigma[i] * eps,
                                  self.slot_low[i], self.slot_high[i])
                acts[i] *= self.slot_mask[i]
        logp = T.gaussian_log_prob_np(acts, p_mean, p_sigma, self.slot_mask)
        return acts, logp, score

    def _record_events(self, events, step_in_rollout):
        for slot, task_id, ep_return, ep_len in events:
            self.scaler.update(task_id, ep_return)
            self._ep_returns[task_id].append(ep_return)
            self._ep_lengths.append(ep_len)
            self.warm[slot] = 0.0
            if ep_return > 0.0 and self.first_success[task_id] is None:
                at = self.global_step + (step_in_rollout + 1) * self.venv.n
                self.first_success[task_id] = at

    # ----- collection

    def collect(self):
        cfg = self.cfg
        steps, n = cfg.run.rollout_steps, self.venv.n
        o_dim = self.model.universal.obs_dim
        a_dim = self.model.universal.act_dim
        gamma = cfg.update.gamma

        obs_buf = np.zeros((steps, n, o_dim))
        act_buf = np.zeros((steps, n, a_dim))
        rew_buf = np.zeros((steps, n))
        done_buf = np.zeros((steps, n))
        next_buf = np.zeros((steps, n, o_dim))
        logp_buf = np.zeros((steps, n))
        val_buf = np.zeros((steps + 1, n))
        gap_buf = np.zeros((steps, n))
        scores = []
        episodes = 0

        scale_rows = np.array([self.scaler.scale(t.task_id)
                               for t in self.venv.tasks])
        for t in range(steps):
            z = self.view.encode(self.obs, self.slot_ids)
            acts, logp, score = self._select_actions(z)
            if score is not None:
                scores.append(score)
            val_buf[t] = self.view.value(z, self.slot_ids)
            r_hat = self.view.reward(z, acts, self.slot_ids)
            z_pred = self.view.dynamics(z, acts, self.slot_ids)
            v_pred = self.view.value(z_pred, self.slot_ids)

            new_obs, rew_raw, dones, term_obs, events = self.venv.vec_step(acts)
            rew = rew_raw / scale_rows
            z_true = self.view.encode(term_obs, self.slot_ids)
            v_true = self.view.value(z_true, self.slot_ids)
            gap_buf[t] = np.abs(
                q_model_based(r_hat, v_pred, dones, gamma)
                - q_model_free(rew, v_true, dones, gamma))

            obs_buf[t] = self.obs
            act_buf[t] = acts
            rew_buf[t] = rew
            done_buf[t] = dones.astype(np.float64)
            next_buf[t] = term_obs
            logp_buf[t] = logp
            episodes += len(events)
            self._record_events(events, t)
            self.obs = new_obs

        z_last = self.view.encode(self.obs, self.slot_ids)
        val_buf[steps] = self.view.value(z_last, self.slot_ids)
        self.global_step += steps * n

        batch = RolloutBatch(obs=obs_buf, actions=act_buf, rewards=rew_buf,
                             dones=done_buf, next_obs=next_buf,
                             logp_old=logp_buf, values=val_buf, eps=gap_buf,
                             task_ids=self.slot_ids,
                             version=self.model.version)
        stats = CollectStats(
            planner_score=float(np.mean(scores)) if scores else None,
            episodes=episodes)
        return batch, stats

    # ----- training loop

    def train(self, writer=None):
        cfg = self.cfg
        total = cfg.run.total_steps
        eval_every = cfg.run.eval_every
        ckpt_every = cfg.run.checkpoint_every
        next_eval = eval_every if eval_every > 0 else None
        next_ckpt = ckpt_every if ckpt_every > 0 else None
        last_report = None

        while self.global_step < total:
            batch, cstats = self.collect()
            alpha = alpha_at(self.global_step, cfg.bonus.alpha0,
                             cfg.bonus.anneal_fraction, total)
            report = update(self.model, self.opts, batch, cfg.update, alpha,
                            self.update_rng,
                            standardize_bonus=cfg.bonus.standardize)
            self.updates += 1
            last_report = report

            eval_cells = {}
            if next_eval is not None and self.global_step >= next_eval:
                returns = self.evaluate(cfg.run.eval_episodes)
                eval_cells = {f"eval_return/{tid}": r
                              for tid, r in returns.items()}
                while next_eval <= self.global_step:
                    next_eval += eval_every

            if writer is not None:
                writer.write(self._metrics_row(report, cstats, eval_cells))

            if next_ckpt is not None and self.global_step >= next_ckpt:
                path = os.path.join(cfg.run.out_dir,
                                    f"checkpoint_{self.global_step}.bin")
                self.save_checkpoint(path)
                while next_ckpt <= self.global_step:
                    next_ckpt += ckpt_every
        return last_report

    def _metrics_row(self, report, cstats, extra):
        rets = [r for rs in self._ep_returns.values() for r in rs]
        row = {
            "step": self.global_step,
            "updates": self.updates,
            "alpha": report.alpha,
            "eps_mean": report.eps_mean,
            "episode_return": float(np.mean(rets)) if rets else None,
            "episode_length": (float(np.mean(self._ep_lengths))
                               if self._ep_lengths else None),
            "policy_loss": report.policy_loss,
            "value_loss": report.value_loss,
            "model_loss": report.model.total if report.model else None,
            "entropy": report.entropy,
            "clip_fraction": report.clip_fraction,
            "approx_kl": report.approx_kl,
            "planner_score": cstats.planner_score,
        }
        for tid, rs in self._ep_returns.items():
            row[f"return/{tid}"] = float(np.mean(rs)) if rs else None
            rs.clear()
        self._ep_lengths.clear()
        row.update(extra)
        return row

    # ----- evaluation

    def evaluate(self, episodes, seed=None):
        """Mean first-episode return per task over deterministic rollouts."""
        if episodes <= 0:
            raise UsageError("evaluation needs a positive episode count")
        cfg = self.cfg
        if seed is None:
            self.eval_count += 1
            seed = (self._eval_entropy, self.eval_count)
        root = np.random.SeedSequence(seed)
        slot_tasks = [t for t in self.tasks for _ in range(episodes)]
        slot_envs = [self._env_by_id[t.task_id] for t in slot_tasks]
        venv = VecEnv(slot_envs, slot_tasks, self.model.universal)
        n = venv.n
        obs = venv.reset_all(int(root.generate_state(1)[0]))
        ids = np.array([t.embed_index for t in slot_tasks], dtype=np.int64)
        low, high = self.view.bounds(ids)
        mask = self.view.mask(ids)
        rngs = [np.random.default_rng(s) for s in root.spawn(n)]
        warm = np.zeros((n, cfg.planner.horizon, self.model.universal.act_dim))
        first_return = [None] * n

        for _ in range(EPISODE_LIMIT):
            z = self.view.encode(obs, ids)
            if cfg.planner.enabled:
                results = plan_batch(self.view, z, ids, rngs, cfg.planner,
                                     warm_mean=warm)
                acts = np.stack([r.action for r in results])
                for i, r in enumerate(results):
                    warm[i] = r.warm_mean
            else:
                mean, _ = self.view.prior(z, ids)
                acts = np.clip(mean, low, high) * mask
            obs, _, _, _, events = venv.vec_step(acts)
            for slot, _, ep_return, _ in events:
                if first_return[slot] is None:
                    first_return[slot] = ep_return
                warm[slot] = 0.0
            if all(r is not None for r in first_return):
                break

        out = {}
        for j, task in enumerate(self.tasks):
            rows = first_return[j * episodes:(j + 1) * episodes]
            out[task.task_id] = float(np.mean([r for r in rows
                                               if r is not None]))
        return out

    # ----- checkpointing

    def save_checkpoint(self, path):
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        components = self.model.state_components()
        for name, opt in [("opt_actor", self.opts.actor),
                          ("opt_critic", self.opts.critic),
                          ("opt_model", self.opts.model)]:
            components.append({"name": name, "widths": [],
                               "tensors": opt.state_tensors(name)})
        components.append({"name": "trainer", "widths": [],
                           "tensors": [("trainer/warm_mean", self.warm)]})
        extra = {
            "config": self.cfg.to_dict(),
            "model_version": self.model.version,
            "global_step": self.global_step,
            "updates": self.updates,
            "eval_count": self.eval_count,
            "env_snapshot": self.venv.snapshot(),
            "planner_rngs": [r.bit_generator.state for r in self.plan_rngs],
            "update_rng": self.update_rng.bit_generator.state,
            "scaler": self.scaler.state(),
            "first_success": self.first_success,
        }
        save_bundle(path, components, extra=extra)

    @classmethod
    def restore(cls, path):
        manifest, tensors = load_bundle(path)
        extra = manifest["extra"]
        trainer = cls(config_from_dict(extra["config"]))
        trainer.model.load_state(tensors)
        trainer.model.version = int(extra["model_version"])
        for name, opt in [("opt_actor", trainer.opts.actor),
                          ("opt_critic", trainer.opts.critic),
                          ("opt_model", trainer.opts.model)]:
            opt.load_state_tensors(name, tensors)
        trainer.warm = tensors["trainer/warm_mean"].copy()
        trainer.venv.load_snapshot(extra["env_snapshot"])
        trainer.obs = trainer.venv.observe_all()
        for rng, state in zip(trainer.plan_rngs, extra["planner_rngs"]):
            rng.bit_generator.state = state
        trainer.update_rng.bit_generator.state = extra["update_rng"]
        trainer.scaler.load_state(extra["scaler"])
        trainer.global_step = int(extra["global_step"])
        trainer.updates = int(extra["updates"])
        trainer.eval_count = int(extra["eval_count"])
        trainer.first_success = dict(extra["first_success"])
        return trainer


# ----- vectorization studies


def collect_trajectories(cfg, num_envs, steps):
    """Per-env (obs, action, reward, done) traces from a fresh seeded run.

    Slot streams depend only on the slot index, so env i's trace must be
    identical no matter how many other envs run in the same batch.
    """
    import dataclasses
    cfg = dataclasses.replace(cfg, run=dataclasses.replace(cfg.run,
                                                           num_envs=num_envs))
    tr = Trainer(cfg)
    n = tr.venv.n
    traces = {i: {"obs": [], "act": [], "rew": [], "done": []}
              for i in range(n)}
    for _ in range(steps):
        z = tr.view.encode(tr.obs, tr.slot_ids)
        acts, _, _ = tr._select_actions(z)
        prev = tr.obs.copy()
        new_obs, rew, dones, _, events = tr.venv.vec_step(acts)
        tr._record_events(events, 0)
        for i in range(n):
            traces[i]["obs"].append(prev[i])
            traces[i]["act"].append(acts[i])
            traces[i]["rew"].append(rew[i])
            traces[i]["done"].append(dones[i])
        tr.obs = new_obs
    for i in range(n):
        for k in traces[i]:
            traces[i][k] = np.asarray(traces[i][k])
    return traces


def bench_vectorization(cfg, counts, min_episodes=16):
    """Episode-return statistics at several vectorization widths.

    Each width runs just long enough to finish at least min_episodes
    episodes under the same per-slot seeds, then reports the raw mean and
    standard deviation of the returns it saw.
    """
    import dataclasses
    rows = []
    for count in counts:
        c = dataclasses.replace(cfg, run=dataclasses.replace(cfg.run,
                                                             num_envs=count))
        tr = Trainer(c)
        need = max(int(min_episodes), 1)
        steps = math.ceil(need / count) * EPISODE_LIMIT
        returns = []
        for _ in range(steps):
            z = tr.view.encode(tr.obs, tr.slot_ids)
            acts, _, _ = tr._select_actions(z)
            new_obs, _, _, _, events = tr.venv.vec_step(acts)
            returns.extend(ev[2] for ev in events)
            tr.obs = new_obs
            if len(returns) >= need and len(returns) % count == 0:
                pass
        rows.append({"num_envs": int(count), "episodes": len(returns),
                     "mean_return": float(np.mean(returns)),
                     "std_return": float(np.std(returns))})
    return rows
