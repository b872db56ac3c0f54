"""Proximal policy optimisation for the batching environment.

The loss minimised per minibatch is

    -L_clip + c1 * mean((V - G)^2) - c2 * entropy

with ``L_clip`` the clipped surrogate, ``G`` the discounted return and
advantages ``A = G - V`` standardised per rollout.
"""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import core
from .env import WAIT, ObspEnv
from .nn import AdamState, PolicyValueNet, adam_step, log_softmax, save_checkpoint

LOG_COLUMNS = ("step", "updates", "mean_return", "mean_tardy_pct", "loss_clip", "loss_value",
               "entropy")


@dataclass(frozen=True)
class PPOConfig:
    total_steps: int = 750_000
    rollout_steps: int = 1025
    gamma: float = 0.9999
    clip: float = 0.2
    c1: float = 0.5
    c2: float = 0.01
    epochs: int = 4
    minibatch: int = 64
    lr: float = 3e-4
    max_grad_norm: float | None = 0.5
    standardize_advantages: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must lie in (0, 1)")
        if self.rollout_steps < self.minibatch:
            raise ValueError("rollout_steps must be at least the minibatch size")
        if min(self.epochs, self.minibatch, self.rollout_steps, self.total_steps) < 1:
            raise ValueError("step counts must be positive")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")


@dataclass
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    feasible: np.ndarray
    # steps where wait was the only feasible action; taken without sampling
    forced: np.ndarray
    bootstrap: float = 0.0
    returns: np.ndarray | None = None
    advantages: np.ndarray | None = None
    episode_returns: list = field(default_factory=list)
    episode_tardy_pct: list = field(default_factory=list)

    def __len__(self):
        return len(self.actions)

    @property
    def trainable(self) -> np.ndarray:
        return np.flatnonzero(~self.forced)


def _sample(rng: np.random.Generator, logp: np.ndarray) -> int:
    # inverse-CDF draw; one uniform per step keeps rollouts reproducible
    c = np.cumsum(np.exp(logp))
    return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), len(c) - 1))


class RolloutState:
    """Carries an environment episode across rollout boundaries."""

    def __init__(self, env: ObspEnv):
        self.env = env
        self.obs = env.reset()
        self.ret = 0.0


def collect_rollout(state: RolloutState | ObspEnv, net: PolicyValueNet, rollout_steps: int,
                    rng: np.random.Generator) -> Trajectory:
    """Sample ``rollout_steps`` actions from the current policy.

    Infeasible samples are real steps: reward -0.005, state unchanged.  When
    wait is the only feasible action it is taken directly and marked
    ``forced``.  Finished episodes restart from the environment's source.
    """
    if isinstance(state, ObspEnv):
        state = RolloutState(state)
    env = state.env
    M = env.M
    T = rollout_steps
    states = np.empty((T, 23))
    actions = np.empty(T, dtype=np.int64)
    logps = np.zeros(T)
    values = np.zeros(T)
    rewards = np.empty(T)
    dones = np.zeros(T, dtype=bool)
    feas = np.empty(T, dtype=bool)
    forced = np.zeros(T, dtype=bool)
    traj_returns, traj_tardy = [], []
    obs = state.obs
    for t in range(T):
        states[t] = obs
        mask = env.mask
        if mask[WAIT]:
            a = WAIT
            forced[t] = True
        else:
            logits, v = net.forward(obs / M)
            lp = log_softmax(logits)
            a = _sample(rng, lp)
            logps[t] = lp[a]
            values[t] = v
        res = env.step(a)
        actions[t] = a
        rewards[t] = res.reward
        feas[t] = res.info["feasible"]
        state.ret += res.reward
        if res.done:
            dones[t] = True
            traj_returns.append(state.ret)
            traj_tardy.append(env.tardy_pct())
            obs = env.reset()
            state.ret = 0.0
        else:
            obs = res.next_state
    state.obs = obs
    # a rollout cut mid-episode continues from V of the state it stopped in
    bootstrap = 0.0 if dones[-1] else _value(net, obs / M)
    return Trajectory(states, actions, logps, values, rewards, dones, feas, forced,
                      float(bootstrap), episode_returns=traj_returns,
                      episode_tardy_pct=traj_tardy)


def _value(net: PolicyValueNet, x: np.ndarray) -> float:
    return float(net.forward(x)[1])


def compute_returns_advantages(traj: Trajectory, gamma: float, standardize: bool = True) -> Trajectory:
    """Discounted returns reset at episode ends; advantages G - V over sampled steps."""
    traj.returns = core.discounted_returns(traj.rewards, traj.dones, gamma, traj.bootstrap)
    adv = traj.returns - traj.values
    adv[traj.forced] = 0.0
    if standardize:
        idx = traj.trainable
        if len(idx) > 1:
            sel = adv[idx]
            adv[idx] = (sel - sel.mean()) / (sel.std() + 1e-12)
    traj.advantages = adv
    return traj


def ppo_loss(net: PolicyValueNet, states, actions, old_log_probs, advantages, returns,
             clip: float, c1: float, c2: float, M: float = 25.0):
    """Return (total, components, gradient) of the minimised PPO loss on one minibatch."""
    B = len(actions)
    logits, values = net.forward(np.asarray(states) / M)
    logp_all = log_softmax(logits)
    p = np.exp(logp_all)
    rows = np.arange(B)
    logp = logp_all[rows, actions]
    ratio = np.exp(logp - old_log_probs)
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    surr1 = ratio * advantages
    surr2 = clipped * advantages
    l_clip = float(np.minimum(surr1, surr2).mean())
    err = values - returns
    l_value = float((err * err).mean())
    ent_i = -(p * logp_all).sum(axis=1)
    entropy = float(ent_i.mean())
    total = -l_clip + c1 * l_value - c2 * entropy
    comps = {"clip": l_clip, "value": l_value, "entropy": entropy, "total": total}
    for name, val in comps.items():
        if not math.isfinite(val):
            raise FloatingPointError(f"non-finite PPO loss component {name!r}")

    # d(-L_clip)/d logp: only where the unclipped term is the minimum
    active = surr1 <= surr2
    dlogp = np.where(active, -advantages * ratio, 0.0) / B
    dlogits = -p * dlogp[:, None]
    dlogits[rows, actions] += dlogp
    # d(-c2 S)/dz_j = c2 p_j (log p_j + S_i) / B
    dlogits += (c2 / B) * p * (logp_all + ent_i[:, None])
    dvalue = (2.0 * c1 / B) * err
    grad = net.backward(dlogits, dvalue)
    return total, comps, grad


def update(net: PolicyValueNet, adam: AdamState, traj: Trajectory, config: PPOConfig,
           rng: np.random.Generator, M: float = 25.0) -> dict:
    """Several epochs of shuffled minibatch Adam steps over one rollout."""
    idx = traj.trainable
    stats = {"clip": [], "value": [], "entropy": [], "total": []}
    if len(idx) == 0:
        return {k: float("nan") for k in stats}
    for _ in range(config.epochs):
        perm = idx[rng.permutation(len(idx))]
        for lo in range(0, len(perm), config.minibatch):
            mb = perm[lo:lo + config.minibatch]
            _, comps, grad = ppo_loss(net, traj.states[mb], traj.actions[mb], traj.log_probs[mb],
                                      traj.advantages[mb], traj.returns[mb],
                                      config.clip, config.c1, config.c2, M)
            if config.max_grad_norm is not None:
                norm = float(np.sqrt(grad @ grad))
                if norm > config.max_grad_norm:
                    grad = grad * (config.max_grad_norm / norm)
            net.theta = adam_step(adam, net.theta, grad)
            for k, v in comps.items():
                stats[k].append(v)
    return {k: float(np.mean(v)) for k, v in stats.items()}


@dataclass
class TrainResult:
    net: PolicyValueNet
    adam: AdamState
    log: list[dict]

    def log_csv(self) -> str:
        return format_log(self.log)


def format_log(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in rows:
        w.writerow([r["step"], r["updates"]] + [f"{r[c]:.10g}" for c in LOG_COLUMNS[2:]])
    return buf.getvalue()


def _streams(seed: int):
    return np.random.SeedSequence(seed).spawn(3)


def initial_net(config: PPOConfig) -> PolicyValueNet:
    """The network ``train`` starts from for this config's seed."""
    return PolicyValueNet.init(np.random.default_rng(_streams(config.seed)[0]))


def train(env: ObspEnv, config: PPOConfig, *, net: PolicyValueNet | None = None,
          checkpoint_path=None, checkpoint_every: int = 0,
          progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Collect, compute, update until ``total_steps`` environment steps were taken.

    Each log row reports the mean return and tardy percentage over the last
    10 finished episodes.
    """
    init_seq, roll_seq, upd_seq = _streams(config.seed)
    net = net or PolicyValueNet.init(np.random.default_rng(init_seq))
    adam = AdamState.zeros(net.n_params, lr=config.lr)
    roll_rng = np.random.default_rng(roll_seq)
    upd_rng = np.random.default_rng(upd_seq)
    state = RolloutState(env)
    recent_ret: deque = deque(maxlen=10)
    recent_tardy: deque = deque(maxlen=10)
    log = []
    steps = updates = 0
    while steps < config.total_steps:
        n = min(config.rollout_steps, config.total_steps - steps)
        traj = collect_rollout(state, net, n, roll_rng)
        compute_returns_advantages(traj, config.gamma, config.standardize_advantages)
        stats = update(net, adam, traj, config, upd_rng, env.M)
        steps += n
        updates += 1
        recent_ret.extend(traj.episode_returns)
        recent_tardy.extend(traj.episode_tardy_pct)
        row = {
            "step": steps,
            "updates": updates,
            "mean_return": float(np.mean(recent_ret)) if recent_ret else float("nan"),
            "mean_tardy_pct": float(np.mean(recent_tardy)) if recent_tardy else float("nan"),
            "loss_clip": stats["clip"],
            "loss_value": stats["value"],
            "entropy": stats["entropy"],
        }
        log.append(row)
        if progress is not None:
            progress(row)
        if checkpoint_path and checkpoint_every and updates % checkpoint_every == 0:
            save_checkpoint(checkpoint_path, net, adam)
    if checkpoint_path:
        save_checkpoint(checkpoint_path, net, adam)
    return TrainResult(net, adam, log)


def moving_average_at(log: list[dict], step: int, window: int = 100) -> float:
    """Mean of ``mean_return`` over the last ``window`` log rows up to ``step``."""
    vals = [r["mean_return"] for r in log if r["step"] <= step and not math.isnan(r["mean_return"])]
    if not vals:
        return float("nan")
    return float(np.mean(vals[-window:]))


# ------------------------------------------------------------------ evaluation
def policy_action(net: PolicyValueNet | None, obs: np.ndarray, mask: np.ndarray,
                  rng: np.random.Generator, greedy: bool, M: float) -> int:
    """Feasible action from the policy.

    Resampling an infeasible draw in an unchanged state is the same as
    sampling the softmax restricted to feasible actions, so that is what is
    drawn.  ``net=None`` is the uniform-random-feasible baseline.
    """
    if mask[WAIT]:
        return WAIT
    feas = np.flatnonzero(mask)
    if net is None:
        return int(feas[min(int(rng.random() * len(feas)), len(feas) - 1)])
    logits, _ = net.forward(obs / M)
    lf = logits[feas]
    if greedy:
        return int(feas[int(np.argmax(lf))])
    return int(feas[_sample(rng, lf - lf.max())])


@dataclass(frozen=True)
class EvalReport:
    tardy_pct: tuple[float, ...]
    returns: tuple[float, ...]

    @property
    def mean_tardy_pct(self) -> float:
        return float(np.mean(self.tardy_pct))

    @property
    def std_tardy_pct(self) -> float:
        return float(np.std(self.tardy_pct))

    @property
    def mean_return(self) -> float:
        return float(np.mean(self.returns))


def evaluate(net: PolicyValueNet | None, instances: Iterable, *, env: ObspEnv | None = None,
             greedy: bool = False, seed: int = 0) -> EvalReport:
    """Run one episode per instance without learning."""
    instances = list(instances)
    if not instances:
        raise ValueError("evaluation needs at least one episode")
    env = env or ObspEnv()
    rng = np.random.default_rng(seed)
    tardy, rets = [], []
    for inst in instances:
        obs = env.reset(inst)
        total = 0.0
        while not env.done:
            a = policy_action(net, obs, env.mask, rng, greedy, env.M)
            res = env.step(a)
            total += res.reward
            obs = res.next_state
        tardy.append(env.tardy_pct())
        rets.append(total)
    return EvalReport(tuple(tardy), tuple(rets))
