"""Returns, advantages, PPO/critic updates, rollouts, checkpoints, bandit."""

import numpy as np
import pytest

from stdsh import autodiff as ad
from stdsh.env import CorridorEnv, action_mask, decode_action, obs_width
from stdsh.trainer import (TrainConfig, TrainState, TransitionBatch,
                           advantages, collect_rollout, critic_update,
                           evaluate_values, load_checkpoint, ppo_update,
                           returns, run_bandit, save_checkpoint, world_seed)


def small_cfg(**kw):
    base = dict(use_hypergraph=False, hidden=16, minibatch_size=4096)
    base.update(kw)
    return TrainConfig(**base)


def synthetic_batch(state, B=24, width=10, seed=0):
    """Random transitions consistent with the flat-critic layout."""
    rng = np.random.default_rng(seed)
    obs = rng.normal(size=(B, width))
    mask = np.stack([action_mask(int(p)) for p in rng.integers(0, 4, B)])
    action = np.array([rng.choice(np.flatnonzero(m)) for m in mask])
    reward = rng.normal(size=B)
    batch = TransitionBatch(
        agent=np.zeros(B, dtype=int), t=np.arange(B), obs=obs, mask=mask,
        action=action, old_logp=np.zeros(B), reward=reward,
        ret=np.array(returns(reward, state.cfg.gamma)),
        done=np.zeros(B, dtype=bool), critic_input=obs.copy())
    return batch


# ------------------------------------------------------------------ returns

def test_returns_examples():
    assert returns([1.0, 2.0, 3.0], gamma=0.0) == [1.0, 2.0, 3.0]
    assert returns([1.0, 1.0, 1.0], gamma=1.0) == [3.0, 2.0, 1.0]
    out = returns([1.0, 2.0], gamma=0.9)
    assert abs(out[0] - 2.8) < 1e-12 and out[1] == 2.0


def test_returns_recursion_property():
    rng = np.random.default_rng(0)
    r = rng.normal(size=50)
    out = returns(r, gamma=0.97)
    for k in range(49):
        assert abs(out[k] - (r[k] + 0.97 * out[k + 1])) < 1e-12
    assert out[-1] == r[-1]


def test_returns_rejects_non_finite():
    with pytest.raises(ValueError):
        returns([1.0, np.nan], gamma=0.5)


def test_returns_unit_windows_match_per_step():
    rng = np.random.default_rng(3)
    r = rng.normal(size=20)
    assert np.allclose(returns(r, 0.9), returns(r, 0.9, dts=[1] * 20),
                       rtol=1e-12, atol=0)


def test_returns_time_weighted_examples():
    # one 2-second window at rate -1: -(1 + g)
    out = returns([-1.0], gamma=0.9, dts=[2])
    assert abs(out[0] + 1.9) < 1e-12
    # window accrual then discounted tail: r*(1-g^3)/(1-g) + g^3*R1
    out = returns([2.0, 5.0], gamma=0.5, dts=[3, 1])
    assert abs(out[1] - 5.0) < 1e-12
    assert abs(out[0] - (2.0 * 1.75 + 0.125 * 5.0)) < 1e-12


def test_returns_constant_rate_invariant_to_windowing():
    # the same per-second reward stream must produce the same head return
    # no matter how it is chopped into decision windows
    g = 0.93
    fine = returns([-4.0] * 12, g, dts=[1] * 12)[0]
    coarse = returns([-4.0] * 3, g, dts=[4, 4, 4])[0]
    lumpy = returns([-4.0] * 4, g, dts=[1, 5, 2, 4])[0]
    assert abs(fine - coarse) < 1e-9
    assert abs(fine - lumpy) < 1e-9


def test_returns_rejects_bad_windows():
    with pytest.raises(ValueError):
        returns([1.0, 2.0], 0.9, dts=[1])
    with pytest.raises(ValueError):
        returns([1.0], 0.9, dts=[0])


def test_advantages_examples():
    adv = advantages([2.0, 2.0], [1.0, 3.0], normalize=False)
    assert np.array_equal(adv, [1.0, -1.0])
    assert np.array_equal(advantages([5.0, 5.0], [5.0, 5.0], False), [0.0, 0.0])
    rng = np.random.default_rng(1)
    adv = advantages(rng.normal(size=100), rng.normal(size=100))
    assert abs(adv.mean()) < 1e-9
    assert abs(adv.std() - 1.0) < 1e-9
    with pytest.raises(ValueError):
        advantages([1.0], [1.0, 2.0])


def test_advantages_single_element_skips_normalization():
    assert np.array_equal(advantages([3.0], [1.0]), [2.0])


def test_world_seed_layout():
    assert world_seed(0, 5) == 5
    assert world_seed(3, 7) == 3007


# ------------------------------------------------------------------- config

def test_train_config_validation():
    for bad in (dict(gamma=0.0), dict(gamma=1.0), dict(lr=0.0),
                dict(return_scale=0.0), dict(entropy_coef=-0.1),
                dict(entropy_coef_final=-0.1),
                dict(d_model=65, heads=4),
                dict(use_spatial=False, use_temporal=False)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    # both hyperedge families may go only when the hypergraph itself is off
    TrainConfig(use_hypergraph=False, use_spatial=False, use_temporal=False)


def test_entropy_coef_schedule():
    cfg = TrainConfig(entropy_coef=0.01, entropy_coef_final=0.002)
    assert cfg.entropy_coef_at(0, 11) == 0.01
    assert abs(cfg.entropy_coef_at(10, 11) - 0.002) < 1e-15
    assert abs(cfg.entropy_coef_at(5, 11) - 0.006) < 1e-15
    const = TrainConfig(entropy_coef=0.01)
    assert const.entropy_coef_at(7, 100) == 0.01


# ------------------------------------------------------------------ updates

def test_ppo_first_epoch_ratios_exactly_one():
    cfg = small_cfg(ppo_epochs=1)
    state = TrainState(cfg, in_width=10, n_agents=1, seed=0)
    batch = synthetic_batch(state)
    adv = advantages(batch.ret, evaluate_values(state, batch))
    stats = ppo_update(state, batch, adv)
    assert stats["ratio_min"] == 1.0
    assert stats["ratio_max"] == 1.0
    # at ratio one the clipped surrogate collapses to the advantage mean
    assert abs(stats["surrogate_first"] - adv.mean()) < 1e-12
    assert not stats["aborted"]


def test_ppo_update_moves_only_policy_parameters():
    cfg = small_cfg(ppo_epochs=2)
    state = TrainState(cfg, in_width=10, n_agents=1, seed=1)
    batch = synthetic_batch(state, seed=2)
    adv = advantages(batch.ret, evaluate_values(state, batch))
    before_pi = {k: v.data.copy() for k, v in state.policy.params().items()}
    before_v = {k: v.data.copy() for k, v in state.critic.params().items()}
    ppo_update(state, batch, adv)
    assert any(not np.array_equal(before_pi[k], v.data)
               for k, v in state.policy.params().items())
    for k, v in state.critic.params().items():
        assert np.array_equal(before_v[k], v.data)


def test_critic_update_moves_only_critic_parameters():
    cfg = small_cfg(ppo_epochs=2)
    state = TrainState(cfg, in_width=10, n_agents=1, seed=3)
    batch = synthetic_batch(state, seed=4)
    before_pi = {k: v.data.copy() for k, v in state.policy.params().items()}
    before_v = {k: v.data.copy() for k, v in state.critic.params().items()}
    stats = critic_update(state, batch)
    assert stats["critic_loss"] > 0
    assert any(not np.array_equal(before_v[k], v.data)
               for k, v in state.critic.params().items())
    for k, v in state.policy.params().items():
        assert np.array_equal(before_pi[k], v.data)


def test_critic_loss_zero_when_predictions_match_targets():
    cfg = small_cfg(ppo_epochs=1)
    state = TrainState(cfg, in_width=10, n_agents=1, seed=5)
    batch = synthetic_batch(state, seed=6)
    batch.ret = evaluate_values(state, batch) / cfg.return_scale
    before = {k: v.data.copy() for k, v in state.critic.params().items()}
    stats = critic_update(state, batch)
    assert stats["critic_loss"] == 0.0
    for k, v in state.critic.params().items():
        assert np.array_equal(before[k], v.data)


def test_critic_loss_half_mse_example():
    # zeroed critic predicts 0 everywhere; target 2 gives 0.5 * 4 = 2
    cfg = small_cfg(ppo_epochs=1, return_scale=1.0)
    state = TrainState(cfg, in_width=4, n_agents=1, seed=0)
    for tensor in state.critic.params().values():
        tensor.data[...] = 0.0
    batch = TransitionBatch(
        agent=np.zeros(1, dtype=int), t=np.zeros(1, dtype=int),
        obs=np.ones((1, 4)), mask=np.ones((1, 152), dtype=bool),
        action=np.zeros(1, dtype=int), old_logp=np.zeros(1),
        reward=np.array([2.0]), ret=np.array([2.0]),
        done=np.ones(1, dtype=bool), critic_input=np.ones((1, 4)))
    stats = critic_update(state, batch)
    assert stats["critic_loss"] == 2.0


def test_updates_reject_empty_batch():
    cfg = small_cfg()
    state = TrainState(cfg, in_width=10, n_agents=1, seed=0)
    with pytest.raises(ValueError):
        ppo_update(state, TransitionBatch(), np.zeros(0))
    with pytest.raises(ValueError):
        critic_update(state, TransitionBatch())


# ------------------------------------------------------------------ rollout

def test_rollout_zero_seconds_is_empty():
    cfg = small_cfg()
    env = CorridorEnv(1, seed=0)
    state = TrainState(cfg, in_width=obs_width(env.n_lanes), n_agents=env.n_agents,
                       seed=0)
    assert len(collect_rollout(env, state, 0)) == 0


def test_rollout_decision_spacing_and_mask_compliance():
    """Consecutive decisions of one agent sit 5 s (amber plus all-red)
    plus the chosen green apart; every recorded action was unmasked."""
    cfg = small_cfg()
    env = CorridorEnv(1, seed=0)
    state = TrainState(cfg, in_width=obs_width(env.n_lanes), n_agents=env.n_agents,
                       seed=0)
    batch = collect_rollout(env, state, 400)
    assert len(batch) > 0
    assert np.all(batch.mask[np.arange(len(batch)), batch.action])
    for agent in range(env.n_agents):
        idx = np.flatnonzero(batch.agent == agent)
        ts = batch.t[idx]
        assert ts[0] == 10                      # initial green expires at 10
        for k in range(len(idx) - 1):
            _, green = decode_action(batch.action[idx[k]])
            assert ts[k + 1] - ts[k] == 5 + green
    # horizon closes exactly one open decision per agent
    assert batch.done.sum() == env.n_agents
    finals = {batch.agent[i] for i in np.flatnonzero(batch.done)}
    assert finals == set(range(env.n_agents))


def test_rollout_returns_are_per_agent_suffix_sums():
    cfg = small_cfg(gamma=0.9)
    env = CorridorEnv(1, seed=1)
    state = TrainState(cfg, in_width=obs_width(env.n_lanes), n_agents=env.n_agents,
                       seed=1)
    batch = collect_rollout(env, state, 300)
    for agent in range(env.n_agents):
        idx = np.flatnonzero(batch.agent == agent)
        expect = returns(batch.reward[idx], 0.9)
        assert np.allclose(batch.ret[idx], expect, atol=1e-12)


def test_rollout_time_discount_uses_window_lengths():
    cfg = small_cfg(gamma=0.995, time_discount=True)
    env = CorridorEnv(1, seed=1)
    state = TrainState(cfg, in_width=obs_width(env.n_lanes), n_agents=env.n_agents,
                       seed=1)
    batch = collect_rollout(env, state, 300)
    for agent in range(env.n_agents):
        idx = np.flatnonzero(batch.agent == agent)
        # non-final windows span phase change plus green exactly
        for k in idx[~batch.done[idx]]:
            _, green = decode_action(batch.action[k])
            assert batch.dt[k] == 5 + green
        expect = returns(batch.reward[idx], 0.995, dts=batch.dt[idx])
        assert np.allclose(batch.ret[idx], expect, atol=1e-9)


# -------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip_preserves_behavior(tmp_path):
    cfg = TrainConfig(hidden=32, d_model=8, heads=4, entropy_coef_final=0.003,
                      return_scale=1e-3, gamma=0.9)
    env = CorridorEnv(1, seed=2)
    from stdsh.env import feature_scales
    state = TrainState(cfg, in_width=obs_width(env.n_lanes), n_agents=env.n_agents,
                       seed=2, input_scale=feature_scales(env.n_lanes))
    batch = collect_rollout(env, state, 200)
    adv = advantages(batch.ret, evaluate_values(state, batch))
    ppo_update(state, batch, adv)
    critic_update(state, batch)

    path = tmp_path / "model.ckpt"
    save_checkpoint(state, path)
    clone = load_checkpoint(path)
    assert clone.cfg == cfg
    with ad.no_grad():
        a = state.policy.forward(batch.obs).data
        b = clone.policy.forward(batch.obs).data
    assert np.array_equal(a, b)
    va = evaluate_values(state, batch)
    vb = evaluate_values(clone, batch)
    assert np.array_equal(va, vb)


# ------------------------------------------------------------------- bandit

def test_bandit_converges_and_first_ratios_are_one():
    out = run_bandit(seed=0)
    assert out["converged_at"] is not None
    assert out["converged_at"] <= 500
    assert out["first_update_stats"]["ratio_min"] == 1.0
    assert out["first_update_stats"]["ratio_max"] == 1.0
    assert out["trajectory"][-1] > 0.95
