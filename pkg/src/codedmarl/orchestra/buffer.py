"""Replay buffer and episode collection on the controller side."""

from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np

from .. import mpe
from ..maddpg import AgentParams, Minibatch, NetSpec, act


class ReplayBuffer:
    """Fixed-capacity FIFO of joint transitions backed by ring arrays."""

    def __init__(self, capacity: int, obs_dims: Sequence[int]):
        if capacity <= 0:
            raise ValueError(f"capacity must be positive, got {capacity}")
        m = len(obs_dims)
        self.capacity = capacity
        self.n_agents = m
        self._obs = [np.zeros((capacity, o)) for o in obs_dims]
        self._next_obs = [np.zeros((capacity, o)) for o in obs_dims]
        self._actions = np.zeros((capacity, m, 2))
        self._rewards = np.zeros((capacity, m))
        self._head = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(
        self,
        obs: Sequence[np.ndarray],
        actions: np.ndarray,
        rewards: np.ndarray,
        next_obs: Sequence[np.ndarray],
    ) -> None:
        h = self._head
        for k in range(self.n_agents):
            self._obs[k][h] = obs[k]
            self._next_obs[k][h] = next_obs[k]
        self._actions[h] = actions
        self._rewards[h] = rewards
        self._head = (h + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _order(self) -> np.ndarray:
        """Physical slots from oldest to newest."""
        start = (self._head - self._size) % self.capacity
        return (start + np.arange(self._size)) % self.capacity

    def rewards_in_order(self) -> np.ndarray:
        return self._rewards[self._order()]

    def sample(self, batch_size: int, seed: int | Sequence[int]) -> Minibatch:
        """Uniform sample without replacement; deterministic in ``seed``."""
        if batch_size > self._size:
            raise ValueError(f"buffer holds {self._size} transitions, need {batch_size}")
        rng = np.random.default_rng(seed)
        idx = self._order()[rng.choice(self._size, size=batch_size, replace=False)]
        seed_int = int(np.random.SeedSequence(seed).generate_state(1)[0])
        return Minibatch(
            tuple(o[idx] for o in self._obs),
            self._actions[idx],
            self._rewards[idx],
            tuple(o[idx] for o in self._next_obs),
            seed_int,
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        order = self._order()
        for arr in [*self._obs, self._actions, self._rewards, *self._next_obs]:
            h.update(np.ascontiguousarray(arr[order]).tobytes())
        return h.hexdigest()


def episode_seed(env_seed: int, episode: int) -> int:
    return int(np.random.SeedSequence([env_seed, episode]).generate_state(1)[0])


def collect_episodes(
    theta: np.ndarray,
    spec: NetSpec,
    env: mpe.EnvConfig,
    n_episodes: int,
    buffer: ReplayBuffer,
    env_seed: int,
    first_episode: int = 0,
    noise_scale: float = 0.0,
) -> list[np.ndarray]:
    """Roll out the current policies and append every transition to ``buffer``.

    Episode ``e`` uses reset/noise streams keyed on ``(env_seed, first_episode + e)``.
    Returns each episode's cumulative per-agent reward.
    """
    policies = [AgentParams.from_block(spec, i, theta[i]).theta_p for i in range(spec.n_agents)]
    nets = [spec.policy_net(i) for i in range(spec.n_agents)]
    totals = []
    for e in range(n_episodes):
        ep = first_episode + e
        state = env.reset(episode_seed(env_seed, ep))
        noise = np.random.default_rng([env_seed, ep, 1])
        total = np.zeros(env.m)
        obs = mpe.observe_all(state)
        while not state.done:
            actions = np.stack(
                [act(nets[i], policies[i], obs[i], noise_scale, noise) for i in range(env.m)]
            )
            state, r = mpe.step(state, actions)
            next_obs = mpe.observe_all(state)
            buffer.add(obs, actions, r, next_obs)
            total += r
            obs = next_obs
        totals.append(total)
    return totals
