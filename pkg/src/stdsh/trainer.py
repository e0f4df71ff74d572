"""Centralized-critic PPO over the corridor: rollouts, returns, updates.

Training is on-policy and trigger-gated. During a rollout each agent acts
only when its green expires; the reward for a decision is computed over
the seconds until that agent's next decision (or the horizon). All agents
share one actor. The critic regresses Monte-Carlo returns; with the
hypergraph enabled its input is the graph embedding rebuilt from the
stored feature windows at update time, so the encoder trains end-to-end
through the critic loss and through nothing else. With the hypergraph
disabled the critic sees the mean of the current scaled observations.

Ratios in the clipped surrogate are taken against log-probs recomputed in
one batched forward at the start of the update, not the per-decision
values recorded during collection: identical inputs through an identical
batched graph make the first epoch's ratios exactly one when the batch
fits in a single minibatch.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_params, save_params
from .encoder import EncoderParams, encode, init_encoder, load_encoder
from .env import N_ACTIONS, CorridorEnv, feature_scales, obs_width
from .hypergraph import build_st_hypergraph, spatial_only, temporal_only
from .nets import (CriticNet, PolicyNet, act, entropy_of, masked_distribution)
from .optim import Adam, clip_grad_norm


@dataclass
class TrainConfig:
    gamma: float = 0.98
    time_discount: bool = False  # gamma is per second, not per decision
    clip_eps: float = 0.2
    entropy_coef: float = 0.01
    entropy_coef_final: float | None = None   # linear anneal target, None = constant
    ppo_epochs: int = 4
    minibatch_size: int = 256
    grad_clip: float = 0.5
    lr: float = 3e-4
    horizon_s: int = 1800
    normalize_advantages: bool = True
    return_scale: float = 1.0    # critic regresses return_scale * R

    hidden: int = 256
    d_model: int = 64
    heads: int = 4
    attn_tau: float = 1.0
    window_depth: int = 5
    window_cadence_s: int = 5
    use_hypergraph: bool = True
    use_dsha: bool = True
    use_spatial: bool = True
    use_temporal: bool = True

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise ValueError(f"gamma must be in (0,1), got {self.gamma}")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be > 0")
        if self.ppo_epochs < 1 or self.minibatch_size < 1:
            raise ValueError("epochs and minibatch size must be >= 1")
        if self.entropy_coef < 0 or self.grad_clip <= 0 or self.lr <= 0:
            raise ValueError("entropy_coef >= 0, grad_clip > 0, lr > 0 required")
        if self.entropy_coef_final is not None and self.entropy_coef_final < 0:
            raise ValueError("entropy_coef_final must be >= 0")
        if self.return_scale <= 0:
            raise ValueError("return_scale must be > 0")
        if self.use_hypergraph and not (self.use_spatial or self.use_temporal):
            raise ValueError("at least one hyperedge family must stay enabled")
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must divide evenly across heads")

    def entropy_coef_at(self, episode: int, episodes: int) -> float:
        """Entropy weight for an episode, linear from coef to coef_final."""
        if self.entropy_coef_final is None or episodes <= 1:
            return self.entropy_coef
        frac = episode / (episodes - 1)
        return (1.0 - frac) * self.entropy_coef + frac * self.entropy_coef_final


@dataclass
class TransitionBatch:
    agent: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    t: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    obs: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    mask: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=bool))
    action: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    old_logp: np.ndarray = field(default_factory=lambda: np.zeros(0))
    reward: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dt: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    ret: np.ndarray = field(default_factory=lambda: np.zeros(0))
    done: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    critic_input: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.action)


def returns(rewards, gamma: float, dts=None):
    """Discounted suffix sums: R_t = r_t + gamma * R_{t+1}.

    With `dts` (seconds spanned by each decision window) gamma is a
    per-second rate: each window's average reward is weighted by its
    discounted duration and the tail is discounted by elapsed time,

        R_k = r_k * (1 - gamma^dt_k) / (1 - gamma) + gamma^dt_k * R_{k+1},

    which equals the per-second discounted sum when the rate is constant
    within windows. Decisions here span a phase change plus the chosen
    green (13..50 s); discounting per decision instead would price a long
    green's tail congestion at the same single step as a short one's.
    """
    if dts is not None:
        if len(dts) != len(rewards):
            raise ValueError(f"dts length {len(dts)} != rewards {len(rewards)}")
        if any(dt < 1 for dt in dts):
            raise ValueError("window lengths must be >= 1 second")
    out = [0.0] * len(rewards)
    acc = 0.0
    for k in range(len(rewards) - 1, -1, -1):
        r = float(rewards[k])
        if not np.isfinite(r):
            raise ValueError(f"non-finite reward at index {k}")
        if dts is None:
            acc = r + gamma * acc
        else:
            decay = gamma ** float(dts[k])
            acc = r * (1.0 - decay) / (1.0 - gamma) + decay * acc
        out[k] = acc
    return out


def advantages(ret, values, normalize: bool = True) -> np.ndarray:
    ret = np.asarray(ret, dtype=float)
    values = np.asarray(values, dtype=float)
    if ret.shape != values.shape:
        raise ValueError(f"length mismatch: {ret.shape} vs {values.shape}")
    adv = ret - values
    if normalize and len(adv) >= 2:
        std = adv.std()
        adv = adv - adv.mean()
        if std > 0:
            adv = adv / std
    return adv


# ----------------------------------------------------------------- train state

class TrainState:
    """Shared actor, centralized critic, optional encoder, and optimizers."""

    def __init__(self, cfg: TrainConfig, in_width: int, n_agents: int,
                 seed: int, input_scale=None):
        self.cfg = cfg
        self.n_agents = n_agents
        self.rng = np.random.default_rng(seed)
        self.policy = PolicyNet(in_width, N_ACTIONS, self.rng,
                                hidden=cfg.hidden, input_scale=input_scale)
        if cfg.use_hypergraph:
            hg = build_st_hypergraph(n_agents, cfg.window_depth)
            if not cfg.use_spatial:
                self.H = temporal_only(hg)
            elif not cfg.use_temporal:
                self.H = spatial_only(hg)
            else:
                self.H = hg.H
            pad = (-in_width) % cfg.heads
            self.encoder = init_encoder(in_width + pad, cfg.heads, cfg.d_model,
                                        tau=cfg.attn_tau, rng=self.rng)
            critic_in = cfg.d_model
        else:
            self.H = None
            self.encoder = None
            critic_in = in_width
        self.critic = CriticNet(critic_in, self.rng, hidden=cfg.hidden)
        self.opt_actor = Adam(self.policy.params(), lr=cfg.lr)
        critic_params = dict(self.critic.params())
        if self.encoder is not None:
            critic_params.update(self.encoder.tensors())
        self.opt_critic = Adam(critic_params, lr=cfg.lr)

    def critic_values(self, batch: TransitionBatch, rows) -> Tensor:
        """(len(rows), 1) value Tensor; encoder stays on the tape."""
        if self.cfg.use_hypergraph:
            gs = [encode(batch.critic_input[b], self.H, self.encoder,
                         uniform=not self.cfg.use_dsha)[1] for b in rows]
            g = gs[0] if len(gs) == 1 else ad.concat(gs, axis=0)
            return self.critic.forward(g)
        return self.critic.forward_np(batch.critic_input[rows])


# -------------------------------------------------------------------- rollout

def collect_rollout(env: CorridorEnv, state: TrainState, seconds: int,
                    greedy: bool = False) -> TransitionBatch:
    """Trigger-gated on-policy collection over `seconds` of world time."""
    cfg = state.cfg

    def critic_input():
        if cfg.use_hypergraph:
            return env.node_features(cfg.heads)
        rows = np.stack([env.observe(i) for i in range(env.n_agents)])
        return (rows * feature_scales(env.n_lanes)).mean(axis=0)

    rows: list[dict] = []
    pending: dict[int, dict] = {}

    def decide(i: int) -> None:
        obs = env.observe(i)
        mask = env.mask_for(i)
        a, logp = act(state.policy, obs, mask, state.rng, greedy=greedy)
        env.apply_action(i, a)
        pending[i] = {"agent": i, "t": env.world.t, "obs": obs, "mask": mask,
                      "action": a, "old_logp": logp,
                      "critic_input": critic_input()}

    if seconds <= 0:
        return TransitionBatch()
    for i in env.triggered():
        decide(i)
    for k in range(seconds):
        env.step_second()
        if k == seconds - 1:
            break                       # horizon: open decisions close below
        for i in env.triggered():
            if i in pending:
                p = pending.pop(i)
                p["reward"] = env.reward_between(i, p["t"], env.world.t)
                p["dt"] = env.world.t - p["t"]
                p["done"] = False
                rows.append(p)
            decide(i)
    for i in sorted(pending):
        p = pending[i]
        p["reward"] = env.reward_between(i, p["t"], env.world.t)
        p["dt"] = env.world.t - p["t"]
        p["done"] = True
        rows.append(p)
    return _build_batch(rows, cfg.gamma, cfg.time_discount)


def _build_batch(rows: list[dict], gamma: float,
                 time_discount: bool = False) -> TransitionBatch:
    if not rows:
        return TransitionBatch()
    batch = TransitionBatch(
        agent=np.array([r["agent"] for r in rows], dtype=int),
        t=np.array([r["t"] for r in rows], dtype=int),
        obs=np.stack([r["obs"] for r in rows]),
        mask=np.stack([r["mask"] for r in rows]),
        action=np.array([r["action"] for r in rows], dtype=int),
        old_logp=np.array([r["old_logp"] for r in rows]),
        reward=np.array([r["reward"] for r in rows]),
        dt=np.array([r["dt"] for r in rows], dtype=int),
        done=np.array([r["done"] for r in rows], dtype=bool),
        critic_input=np.stack([r["critic_input"] for r in rows]),
    )
    ret = np.zeros(len(rows))
    for agent in np.unique(batch.agent):
        idx = np.flatnonzero(batch.agent == agent)     # chronological
        dts = batch.dt[idx] if time_discount else None
        ret[idx] = returns(batch.reward[idx], gamma, dts=dts)
    batch.ret = ret
    return batch


def evaluate_values(state: TrainState, batch: TransitionBatch) -> np.ndarray:
    with ad.no_grad():
        v = state.critic_values(batch, np.arange(len(batch)))
    return v.data[:, 0].copy()


# -------------------------------------------------------------------- updates

def ppo_update(state: TrainState, batch: TransitionBatch,
               adv: np.ndarray, entropy_coef: float | None = None) -> dict:
    """Clipped-surrogate actor update; returns per-update statistics."""
    cfg = state.cfg
    if entropy_coef is None:
        entropy_coef = cfg.entropy_coef
    B = len(batch)
    if B == 0:
        raise ValueError("empty batch")
    policy = state.policy
    with ad.no_grad():
        logits = policy.forward(batch.obs)
        logp_all, _ = masked_distribution(logits, batch.mask)
        old = logp_all.data[np.arange(B), batch.action].copy()
    stats = {"aborted": False, "ratio_min": np.inf, "ratio_max": -np.inf,
             "surrogate_first": None, "entropy": 0.0, "actor_loss": 0.0,
             "grad_norm": 0.0}
    ent_sum = 0.0
    loss_sum = 0.0
    steps = 0
    idx = np.arange(B)
    for epoch in range(cfg.ppo_epochs):
        state.rng.shuffle(idx)
        for s in range(0, B, cfg.minibatch_size):
            rows = idx[s:s + cfg.minibatch_size]
            logits = policy.forward(batch.obs[rows])
            logp, probs = masked_distribution(logits, batch.mask[rows])
            lp_a = ad.gather(logp, np.arange(len(rows)), batch.action[rows])
            ratio = ad.exp(ad.sub(lp_a, Tensor(old[rows])))
            if epoch == 0:
                stats["ratio_min"] = min(stats["ratio_min"], ratio.data.min())
                stats["ratio_max"] = max(stats["ratio_max"], ratio.data.max())
            a_rows = Tensor(adv[rows])
            clipped = ad.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
            surr = ad.minimum(ad.mul(ratio, a_rows), ad.mul(clipped, a_rows))
            surrogate = ad.reduce_mean(surr)
            if stats["surrogate_first"] is None:
                stats["surrogate_first"] = float(surrogate.data)
            ent = ad.reduce_mean(entropy_of(logp, probs))
            loss = ad.sub(ad.scale(surrogate, -1.0),
                          ad.scale(ent, entropy_coef))
            if not np.isfinite(loss.data):
                ad.clear_tape()
                stats["aborted"] = True
                return stats
            ent_sum += float(ent.data)
            loss_sum += float(loss.data)
            steps += 1
            state.opt_actor.zero_grad()
            ad.backward(loss)
            stats["grad_norm"] = clip_grad_norm(policy.params(), cfg.grad_clip)
            state.opt_actor.step()
    stats["entropy"] = ent_sum / steps
    stats["actor_loss"] = loss_sum / steps
    return stats


def critic_update(state: TrainState, batch: TransitionBatch) -> dict:
    """Half-MSE return regression; trains the encoder when hypergraph is on."""
    cfg = state.cfg
    B = len(batch)
    if B == 0:
        raise ValueError("empty batch")
    stats = {"aborted": False, "critic_loss": 0.0, "grad_norm": 0.0}
    loss_sum = 0.0
    steps = 0
    params = dict(state.critic.params())
    if state.encoder is not None:
        params.update(state.encoder.tensors())
    idx = np.arange(B)
    for _ in range(cfg.ppo_epochs):
        state.rng.shuffle(idx)
        for s in range(0, B, cfg.minibatch_size):
            rows = idx[s:s + cfg.minibatch_size]
            v = state.critic_values(batch, rows)
            target = Tensor(batch.ret[rows][:, None] * cfg.return_scale)
            loss = ad.scale(ad.reduce_mean(ad.square(ad.sub(v, target))), 0.5)
            if not np.isfinite(loss.data):
                ad.clear_tape()
                stats["aborted"] = True
                return stats
            loss_sum += float(loss.data)
            steps += 1
            state.opt_critic.zero_grad()
            ad.backward(loss)
            stats["grad_norm"] = clip_grad_norm(params, cfg.grad_clip)
            state.opt_critic.step()
    stats["critic_loss"] = loss_sum / steps
    return stats


# ----------------------------------------------------------------- train loop

def corridor_train_config(**overrides) -> TrainConfig:
    """Training recipe for the corridor scenarios.

    Discounting runs per second of world time rather than per decision, so
    a 45 s green is charged for the whole queueing tail it causes instead
    of hiding it behind one step; 0.99 per second keeps the credit horizon
    near 100 s, about two cycles. The annealed entropy keeps the low-demand
    phases explored long enough for their payoff to show, and the critic
    regresses scaled returns so its targets sit within reach of clipped
    Adam steps.
    """
    base = dict(gamma=0.99, time_discount=True, lr=1e-3, entropy_coef=0.01,
                entropy_coef_final=0.002, return_scale=2e-4)
    base.update(overrides)
    return TrainConfig(**base)


def world_seed(base_seed: int, episode: int) -> int:
    return base_seed * 1000 + episode


def make_train_state(cfg: TrainConfig, scenario, seed: int) -> TrainState:
    probe = CorridorEnv(scenario, seed=0, window_depth=cfg.window_depth,
                        window_cadence_s=cfg.window_cadence_s)
    width = obs_width(probe.n_lanes)
    return TrainState(cfg, width, probe.n_agents, seed,
                      input_scale=feature_scales(probe.n_lanes))


def train_run(scenario, seed: int, episodes: int, cfg: TrainConfig,
              out_dir, log_name: str = "training_log.csv",
              checkpoint_name: str = "model.ckpt") -> dict:
    """Full training loop; writes the per-update CSV and a checkpoint."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = make_train_state(cfg, scenario, seed)
    log_path = out_dir / log_name
    ckpt_path = out_dir / checkpoint_name
    history = []
    t0 = time.perf_counter()
    with open(log_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["update", "mean_reward", "actor_loss", "critic_loss",
                    "entropy", "grad_norm"])
        for ep in range(episodes):
            env = CorridorEnv(scenario, seed=world_seed(seed, ep),
                              window_depth=cfg.window_depth,
                              window_cadence_s=cfg.window_cadence_s)
            batch = collect_rollout(env, state, cfg.horizon_s)
            if len(batch) == 0:
                raise RuntimeError(f"episode {ep}: no decisions collected")
            # value head lives in return_scale units; normalization keeps the
            # actor's gradient invariant to the choice of scale
            values = evaluate_values(state, batch)
            adv = advantages(batch.ret * cfg.return_scale, values,
                             cfg.normalize_advantages)
            astats = ppo_update(state, batch, adv,
                                entropy_coef=cfg.entropy_coef_at(ep, episodes))
            cstats = critic_update(state, batch)
            row = {"update": ep,
                   "mean_reward": float(batch.reward.mean()),
                   "actor_loss": astats["actor_loss"],
                   "critic_loss": cstats["critic_loss"],
                   "entropy": astats["entropy"],
                   "grad_norm": astats["grad_norm"],
                   "aborted": astats["aborted"] or cstats["aborted"]}
            history.append(row)
            w.writerow([row["update"], row["mean_reward"], row["actor_loss"],
                        row["critic_loss"], row["entropy"], row["grad_norm"]])
    save_checkpoint(state, ckpt_path)
    return {"checkpoint": ckpt_path, "log": log_path, "history": history,
            "wall_s": time.perf_counter() - t0, "state": state}


# ---------------------------------------------------------------- checkpoints

_META_FLAGS = ("use_hypergraph", "use_dsha", "use_spatial", "use_temporal")
_META_NUMS = ("gamma", "clip_eps", "entropy_coef", "ppo_epochs",
              "minibatch_size", "grad_clip", "lr", "horizon_s", "hidden",
              "d_model", "heads", "attn_tau", "window_depth",
              "window_cadence_s", "return_scale")


def save_checkpoint(state: TrainState, path) -> None:
    named: dict[str, np.ndarray] = {}
    for name, tensor in state.policy.params().items():
        named[name] = tensor.data
    named["pi.input_scale"] = state.policy.input_scale
    for name, tensor in state.critic.params().items():
        named[name] = tensor.data
    if state.encoder is not None:
        for name, tensor in state.encoder.tensors().items():
            named[name] = tensor.data
    cfg = state.cfg
    for flag in _META_FLAGS:
        named[f"meta.{flag}"] = np.array(1.0 if getattr(cfg, flag) else 0.0)
    for num in _META_NUMS:
        named[f"meta.{num}"] = np.array(float(getattr(cfg, num)))
    final = cfg.entropy_coef_final
    named["meta.entropy_coef_final"] = np.array(
        np.nan if final is None else float(final))
    named["meta.time_discount"] = np.array(1.0 if cfg.time_discount else 0.0)
    named["meta.n_agents"] = np.array(float(state.n_agents))
    named["meta.normalize_advantages"] = np.array(
        1.0 if cfg.normalize_advantages else 0.0)
    save_params(path, named)


def load_checkpoint(path) -> TrainState:
    named = load_params(path)
    kwargs = {}
    for flag in _META_FLAGS:
        kwargs[flag] = bool(named[f"meta.{flag}"])
    for num in _META_NUMS:
        val = float(named[f"meta.{num}"])
        kwargs[num] = int(val) if num in ("ppo_epochs", "minibatch_size",
                                          "horizon_s", "hidden", "d_model",
                                          "heads", "window_depth",
                                          "window_cadence_s") else val
    kwargs["normalize_advantages"] = bool(named["meta.normalize_advantages"])
    if "meta.entropy_coef_final" in named:
        final = float(named["meta.entropy_coef_final"])
        kwargs["entropy_coef_final"] = None if np.isnan(final) else final
    if "meta.time_discount" in named:
        kwargs["time_discount"] = bool(named["meta.time_discount"])
    cfg = TrainConfig(**kwargs)
    in_width = named["pi.W1"].shape[0]
    n_agents = int(named["meta.n_agents"])
    state = TrainState(cfg, in_width, n_agents, seed=0,
                       input_scale=named["pi.input_scale"])
    for name, tensor in state.policy.params().items():
        tensor.data = named[name].copy()
    for name, tensor in state.critic.params().items():
        tensor.data = named[name].copy()
    if cfg.use_hypergraph:
        enc_named = {k: v for k, v in named.items() if k.startswith("enc.")}
        state.encoder = load_encoder(enc_named, tau=cfg.attn_tau)
        critic_params = dict(state.critic.params())
        critic_params.update(state.encoder.tensors())
        state.opt_critic = Adam(critic_params, lr=cfg.lr)
    return state


# -------------------------------------------------------------------- bandit

def run_bandit(seed: int, max_updates: int = 500, batch_size: int = 64,
               lr: float = 3e-2) -> dict:
    """Two-action sanity task: action 0 pays 1, action 1 pays 0.

    Exercises act / advantages / ppo_update end to end with a single
    minibatch per epoch. Returns the probability trajectory of the better
    action and the first update index where it crossed 0.95.
    """
    cfg = TrainConfig(minibatch_size=batch_size, lr=lr, entropy_coef=0.0,
                      use_hypergraph=False)
    state = TrainState(cfg, in_width=2, n_agents=1, seed=seed)
    state.policy = PolicyNet(2, 2, state.rng, hidden=32)
    state.opt_actor = Adam(state.policy.params(), lr=lr)
    obs = np.array([1.0, 0.0])
    mask = np.array([True, True])
    trajectory = []
    converged_at = None
    first_update_stats = None
    for update in range(max_updates):
        acts = np.zeros(batch_size, dtype=int)
        lps = np.zeros(batch_size)
        for b in range(batch_size):
            acts[b], lps[b] = act(state.policy, obs, mask, state.rng)
        rewards = (acts == 0).astype(float)
        batch = TransitionBatch(
            agent=np.zeros(batch_size, dtype=int),
            t=np.arange(batch_size),
            obs=np.tile(obs, (batch_size, 1)),
            mask=np.tile(mask, (batch_size, 1)),
            action=acts,
            old_logp=lps,
            reward=rewards,
            ret=rewards.copy(),              # one-step episodes
            done=np.ones(batch_size, dtype=bool),
        )
        adv = advantages(batch.ret, np.full(batch_size, rewards.mean()),
                         normalize=True)
        stats = ppo_update(state, batch, adv)
        if first_update_stats is None:
            first_update_stats = stats
        with ad.no_grad():
            logits = state.policy.forward(obs)
            _, probs = masked_distribution(logits, mask[None])
        p_best = float(probs.data[0, 0])
        trajectory.append(p_best)
        if converged_at is None and p_best > 0.95:
            converged_at = update
            break
    return {"trajectory": trajectory, "converged_at": converged_at,
            "first_update_stats": first_update_stats, "state": state}
