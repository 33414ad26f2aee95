"""MADDPG updates with manual gradients, arranged for coded distribution.

Each agent's parameters (policy, critic, and both target copies) live in one
flat block so that learners can return linear combinations of blocks.  Every
update is a pure function of its inputs, so two learners assigned the same
agent produce bitwise-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .nets import MLP

ACT_DIM = 2


class InvalidTau(ValueError):
    pass


class DimMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Hyper:
    lr_critic: float = 1e-2
    lr_policy: float = 1e-3
    gamma: float = 0.95
    tau: float = 0.99
    batch_size: int = 64
    buffer_size: int = 100_000
    noise_start: float = 0.3
    noise_end: float = 0.05

    def noise_scale(self, iteration: int, max_iteration: int) -> float:
        """Exploration scale, linear from ``noise_start`` to ``noise_end``."""
        if max_iteration <= 1:
            return self.noise_start
        frac = min(max(iteration / (max_iteration - 1), 0.0), 1.0)
        return self.noise_start + frac * (self.noise_end - self.noise_start)


@dataclass(frozen=True)
class NetSpec:
    """Network shapes for all agents of one environment."""

    obs_dims: tuple[int, ...]
    hidden: tuple[int, ...] = (64, 64)

    @property
    def n_agents(self) -> int:
        return len(self.obs_dims)

    @property
    def critic_in(self) -> int:
        return sum(self.obs_dims) + ACT_DIM * self.n_agents

    def policy_net(self, i: int) -> MLP:
        return MLP((self.obs_dims[i], *self.hidden, ACT_DIM), "tanh")

    def critic_net(self, i: int) -> MLP:
        return MLP((self.critic_in, *self.hidden, 1), "linear")

    def block_len(self, i: int) -> int:
        return 2 * (self.policy_net(i).n_params + self.critic_net(i).n_params)

    @property
    def block_dim(self) -> int:
        """Common (padded) block dimension ``d``."""
        return max(self.block_len(i) for i in range(self.n_agents))

    def to_dict(self) -> dict:
        return {"obs_dims": list(self.obs_dims), "hidden": list(self.hidden)}

    @classmethod
    def from_dict(cls, data: dict) -> "NetSpec":
        return cls(tuple(data["obs_dims"]), tuple(data["hidden"]))


@dataclass(frozen=True)
class AgentParams:
    theta_p: np.ndarray
    theta_q: np.ndarray
    theta_p_hat: np.ndarray
    theta_q_hat: np.ndarray

    def to_block(self, d: int | None = None) -> np.ndarray:
        flat = np.concatenate([self.theta_p, self.theta_q, self.theta_p_hat, self.theta_q_hat])
        if d is None or d == flat.size:
            return flat
        out = np.zeros(d)
        out[: flat.size] = flat
        return out

    @classmethod
    def from_block(cls, spec: NetSpec, i: int, block: np.ndarray) -> "AgentParams":
        n_p = spec.policy_net(i).n_params
        n_q = spec.critic_net(i).n_params
        if block.size < 2 * (n_p + n_q):
            raise DimMismatch(f"block of agent {i} too short: {block.size}")
        cuts = np.cumsum([n_p, n_q, n_p, n_q])
        p, q, ph, qh = np.split(block[: cuts[-1]], cuts[:-1])
        return cls(p.copy(), q.copy(), ph.copy(), qh.copy())


@dataclass(frozen=True)
class Minibatch:
    """Joint transitions: per-agent observation arrays, actions ``(B, M, 2)``, rewards ``(B, M)``."""

    obs: tuple[np.ndarray, ...]
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: tuple[np.ndarray, ...]
    seed: int = 0

    @property
    def size(self) -> int:
        return self.actions.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [*self.obs, self.actions, self.rewards, *self.next_obs]

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray], n_agents: int, seed: int = 0) -> "Minibatch":
        m = n_agents
        return cls(
            tuple(arrays[:m]), arrays[m], arrays[m + 1], tuple(arrays[m + 2 : 2 * m + 2]), seed
        )


def init_params(spec: NetSpec, i: int, seed: int) -> AgentParams:
    """Fresh parameters for agent ``i``; targets start equal to the live nets."""
    rng = np.random.default_rng([seed, i])
    p = spec.policy_net(i).init(rng)
    q = spec.critic_net(i).init(rng)
    return AgentParams(p, q, p.copy(), q.copy())


def init_all(spec: NetSpec, seed: int) -> np.ndarray:
    """Stacked ``(M, d)`` parameter blocks for every agent."""
    d = spec.block_dim
    return np.stack([init_params(spec, i, seed).to_block(d) for i in range(spec.n_agents)])


def act(
    net: MLP,
    theta_p: np.ndarray,
    obs: np.ndarray,
    noise_scale: float = 0.0,
    rng: np.random.Generator | int | None = None,
) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[-1] != net.in_dim:
        raise DimMismatch(f"observation length {obs.shape[-1]} != policy input {net.in_dim}")
    a = net(theta_p, obs.reshape(1, -1))[0]
    if noise_scale > 0:
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        a = a + noise_scale * rng.standard_normal(a.shape)
    return np.clip(a, -1.0, 1.0)


def _critic_input(obs: Sequence[np.ndarray], actions: np.ndarray) -> np.ndarray:
    b = actions.shape[0]
    return np.concatenate([*obs, actions.reshape(b, -1)], axis=1)


def td_targets(
    spec: NetSpec, params: AgentParams, i: int, batch: Minibatch, target_policies: Sequence[np.ndarray], gamma: float
) -> np.ndarray:
    """``r_i + gamma * Qhat_i(s', pihat(s'))`` for each transition, shape ``(B,)``."""
    next_actions = np.stack(
        [spec.policy_net(k)(target_policies[k], batch.next_obs[k]) for k in range(spec.n_agents)],
        axis=1,
    )
    q_next = spec.critic_net(i)(params.theta_q_hat, _critic_input(batch.next_obs, next_actions))
    return batch.rewards[:, i] + gamma * q_next[:, 0]


def critic_loss_grad(
    spec: NetSpec, params: AgentParams, i: int, batch: Minibatch, target_policies: Sequence[np.ndarray], gamma: float
) -> tuple[float, np.ndarray]:
    """Mean squared TD error and its gradient in ``theta_q`` (targets held fixed)."""
    net = spec.critic_net(i)
    y = td_targets(spec, params, i, batch, target_policies, gamma)
    q, cache = net.forward(params.theta_q, _critic_input(batch.obs, batch.actions))
    err = y - q[:, 0]
    b = batch.size
    loss = float(np.mean(err * err))
    grad, _ = net.backward(params.theta_q, cache, (-2.0 / b * err)[:, None])
    return loss, grad


def critic_update(
    spec: NetSpec,
    params: AgentParams,
    i: int,
    batch: Minibatch,
    target_policies: Sequence[np.ndarray],
    lr: float,
    gamma: float,
) -> np.ndarray:
    _, grad = critic_loss_grad(spec, params, i, batch, target_policies, gamma)
    return params.theta_q - lr * grad


def policy_objective_grad(
    spec: NetSpec, params: AgentParams, i: int, batch: Minibatch
) -> tuple[float, np.ndarray]:
    """Mean ``Q_i(s, a)`` with ``a_i = pi_i(s_i)`` and the others from the batch, and its gradient."""
    pnet = spec.policy_net(i)
    qnet = spec.critic_net(i)
    a_i, pcache = pnet.forward(params.theta_p, batch.obs[i])
    actions = batch.actions.copy()
    actions[:, i, :] = a_i
    q, qcache = qnet.forward(params.theta_q, _critic_input(batch.obs, actions))
    b = batch.size
    _, grad_x = qnet.backward(params.theta_q, qcache, np.full((b, 1), 1.0 / b))
    start = sum(spec.obs_dims) + ACT_DIM * i
    grad_a = grad_x[:, start : start + ACT_DIM]
    grad_p, _ = pnet.backward(params.theta_p, pcache, grad_a)
    return float(np.mean(q)), grad_p


def policy_update(spec: NetSpec, params: AgentParams, i: int, batch: Minibatch, lr: float) -> np.ndarray:
    """One gradient-ascent step on the critic's value of the agent's own action."""
    _, grad = policy_objective_grad(spec, params, i, batch)
    return params.theta_p + lr * grad


def target_update(params: AgentParams, tau: float) -> AgentParams:
    """Polyak averaging ``hat <- tau * hat + (1 - tau) * live``."""
    if not 0.0 < tau < 1.0:
        raise InvalidTau(f"tau must lie in (0, 1), got {tau}")
    return replace(
        params,
        theta_p_hat=tau * params.theta_p_hat + (1.0 - tau) * params.theta_p,
        theta_q_hat=tau * params.theta_q_hat + (1.0 - tau) * params.theta_q,
    )


def agent_update(spec: NetSpec, theta: np.ndarray, i: int, batch: Minibatch, hyper: Hyper) -> np.ndarray:
    """Updated block of agent ``i`` from the broadcast parameters ``theta`` (``(M, d)``).

    Critic first, then policy (against the new critic), then targets.
    """
    params = AgentParams.from_block(spec, i, theta[i])
    target_policies = [
        AgentParams.from_block(spec, k, theta[k]).theta_p_hat for k in range(spec.n_agents)
    ]
    q_new = critic_update(spec, params, i, batch, target_policies, hyper.lr_critic, hyper.gamma)
    params = replace(params, theta_q=q_new)
    p_new = policy_update(spec, params, i, batch, hyper.lr_policy)
    params = replace(params, theta_p=p_new)
    params = target_update(params, hyper.tau)
    return params.to_block(theta.shape[1])


@dataclass
class UpdateCache:
    """Memo of per-agent updates within one round, keyed by agent id.

    Valid only because ``agent_update`` is pure: all learners holding the same
    ``(theta, batch)`` compute identical blocks.
    """

    blocks: dict[int, np.ndarray] = field(default_factory=dict)


class Cancelled(Exception):
    """Raised inside a learner when the controller acknowledged the round."""


def learner_update(
    row: np.ndarray,
    theta: np.ndarray,
    batch: Minibatch,
    spec: NetSpec,
    hyper: Hyper,
    cancelled: Callable[[], bool] | None = None,
    cache: UpdateCache | None = None,
) -> np.ndarray:
    """Encoded response ``sum_i row[i] * theta'_i`` over the agents this learner owns."""
    acc = None
    for i in np.flatnonzero(row):
        if cancelled is not None and cancelled():
            raise Cancelled()
        i = int(i)
        if cache is not None and i in cache.blocks:
            block = cache.blocks[i]
        else:
            block = agent_update(spec, theta, i, batch, hyper)
            if cache is not None:
                cache.blocks[i] = block
        term = row[i] * block
        acc = term if acc is None else acc + term
    if acc is None:
        return np.zeros(theta.shape[1])
    return acc


def centralized_update(theta: np.ndarray, batch: Minibatch, spec: NetSpec, hyper: Hyper) -> np.ndarray:
    """All agents updated in one place; the reference the coded path must reproduce."""
    return np.stack([agent_update(spec, theta, i, batch, hyper) for i in range(spec.n_agents)])
