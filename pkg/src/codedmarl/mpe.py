"""Deterministic 2-D multi-agent particle tasks with continuous force actions.

Agents ``0..K-1`` are adversaries and ``K..M-1`` are good agents.  States are
immutable; ``step`` returns a new state.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np

DT = 0.1
DAMPING = 0.25
ACCEL = 5.0
FAST_ACCEL = 6.5
SPEED_CAP = 1.0
FAST_CAP = 1.3
COLLISION_RADIUS = 0.15
BOUND = 1.5
OBSTACLE_RADIUS = 0.2
N_OBSTACLES = 2
TAG_REWARD = 10.0
BLOCK_BONUS = 1.0


class InvalidRoles(ValueError):
    pass


class EpisodeOver(RuntimeError):
    pass


class EnvKind(str, enum.Enum):
    COOP_NAV = "coop_nav"
    PREDATOR_PREY = "predator_prey"
    PHYSICAL_DECEPTION = "physical_deception"
    KEEP_AWAY = "keep_away"

    @property
    def has_target(self) -> bool:
        return self in (EnvKind.PHYSICAL_DECEPTION, EnvKind.KEEP_AWAY)


@dataclass(frozen=True, eq=False)
class WorldState:
    kind: EnvKind
    n_adversaries: int
    agent_pos: np.ndarray
    agent_vel: np.ndarray
    landmark_pos: np.ndarray
    obstacle_pos: np.ndarray
    target_index: int | None
    step_count: int
    max_episode_length: int
    seed: int

    @property
    def n_agents(self) -> int:
        return self.agent_pos.shape[0]

    @property
    def done(self) -> bool:
        return self.step_count >= self.max_episode_length

    @property
    def target(self) -> np.ndarray | None:
        return None if self.target_index is None else self.landmark_pos[self.target_index]


def _fast_adversaries(kind: EnvKind) -> bool:
    return kind is EnvKind.PREDATOR_PREY


def speed_caps(kind: EnvKind, m: int, k: int) -> np.ndarray:
    caps = np.full(m, SPEED_CAP)
    if _fast_adversaries(kind):
        caps[:k] = FAST_CAP
    return caps


def accel_gains(kind: EnvKind, m: int, k: int) -> np.ndarray:
    gains = np.full(m, ACCEL)
    if _fast_adversaries(kind):
        gains[:k] = FAST_ACCEL
    return gains


def check_roles(kind: EnvKind, m: int, k: int, l: int) -> None:
    kind = EnvKind(kind)
    if m < 1:
        raise InvalidRoles(f"need at least one agent, got m={m}")
    if kind is EnvKind.COOP_NAV:
        if k != 0:
            raise InvalidRoles("cooperative navigation has no adversaries (k must be 0)")
    elif not 1 <= k < m:
        raise InvalidRoles(f"{kind.value} needs 1 <= k < m, got k={k}, m={m}")
    if l < 0:
        raise InvalidRoles(f"negative landmark count {l}")
    if (kind is EnvKind.COOP_NAV or kind.has_target) and l < 1:
        raise InvalidRoles(f"{kind.value} needs at least one landmark")


def obs_dim(kind: EnvKind, m: int, l: int) -> int:
    kind = EnvKind(kind)
    dim = 4 + 2 * l + 2 * (m - 1)
    if kind is EnvKind.PREDATOR_PREY:
        dim += 2 * N_OBSTACLES
    if kind.has_target:
        dim += 2
    return dim


def reset(kind: EnvKind | str, m: int, k: int, l: int, seed: int, max_episode_length: int = 25) -> WorldState:
    kind = EnvKind(kind)
    check_roles(kind, m, k, l)
    rng = np.random.default_rng(seed)
    agent_pos = rng.uniform(-1.0, 1.0, size=(m, 2))
    landmark_pos = rng.uniform(-1.0, 1.0, size=(l, 2))
    n_obs = N_OBSTACLES if kind is EnvKind.PREDATOR_PREY else 0
    obstacle_pos = rng.uniform(-1.0, 1.0, size=(n_obs, 2))
    target = int(rng.integers(l)) if kind.has_target else None
    return WorldState(
        kind=kind,
        n_adversaries=k,
        agent_pos=agent_pos,
        agent_vel=np.zeros((m, 2)),
        landmark_pos=landmark_pos,
        obstacle_pos=obstacle_pos,
        target_index=target,
        step_count=0,
        max_episode_length=max_episode_length,
        seed=seed,
    )


def _pair_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)


def _push_out_of_obstacles(pos: np.ndarray, vel: np.ndarray, centers: np.ndarray) -> None:
    for c in centers:
        for i in range(pos.shape[0]):
            diff = pos[i] - c
            dist = float(np.hypot(diff[0], diff[1]))
            if dist >= OBSTACLE_RADIUS:
                continue
            normal = diff / dist if dist > 0 else np.array([1.0, 0.0])
            pos[i] = c + normal * OBSTACLE_RADIUS
            vn = float(vel[i] @ normal)
            if vn < 0:
                vel[i] = vel[i] - vn * normal


def step(state: WorldState, action: np.ndarray) -> tuple[WorldState, np.ndarray]:
    """Advance one tick of damped double-integrator dynamics; returns ``(state, rewards)``."""
    if state.done:
        raise EpisodeOver(f"episode finished after {state.step_count} steps")
    m, k = state.n_agents, state.n_adversaries
    force = np.clip(np.asarray(action, dtype=np.float64).reshape(m, 2), -1.0, 1.0)
    caps = speed_caps(state.kind, m, k)[:, None]
    gains = accel_gains(state.kind, m, k)[:, None]

    vel = (1.0 - DAMPING) * state.agent_vel + gains * force * DT
    vel = np.clip(vel, -caps, caps)
    pos = state.agent_pos + vel * DT

    high = pos > BOUND
    low = pos < -BOUND
    pos = np.where(high, 2 * BOUND - pos, pos)
    pos = np.where(low, -2 * BOUND - pos, pos)
    vel = np.where(high | low, -vel, vel)

    if state.obstacle_pos.size:
        _push_out_of_obstacles(pos, vel, state.obstacle_pos)
        vel = np.clip(vel, -caps, caps)
    pos = np.clip(pos, -BOUND, BOUND)

    new = replace(state, agent_pos=pos, agent_vel=vel, step_count=state.step_count + 1)
    return new, rewards(new)


def rewards(state: WorldState) -> np.ndarray:
    """Per-agent reward for the configuration in ``state``."""
    kind = state.kind
    m, k = state.n_agents, state.n_adversaries
    pos = state.agent_pos
    r = np.zeros(m)
    if kind is EnvKind.COOP_NAV:
        cover = _pair_distances(state.landmark_pos, pos).min(axis=1).sum()
        d = _pair_distances(pos, pos)
        collisions = int(np.count_nonzero(np.triu(d < COLLISION_RADIUS, 1)))
        r[:] = -cover - collisions
    elif kind is EnvKind.PREDATOR_PREY:
        d = _pair_distances(pos[k:], pos[:k])
        closest = float(d.min())
        tags = int(np.count_nonzero(d < COLLISION_RADIUS))
        r[k:] = -closest + TAG_REWARD * tags
        r[:k] = closest - TAG_REWARD * tags
    else:
        to_target = np.linalg.norm(pos - state.target, axis=1)
        good = float(to_target[k:].min())
        adv = float(to_target[:k].min())
        if kind is EnvKind.PHYSICAL_DECEPTION:
            r[k:] = -good + adv
            r[:k] = -to_target[:k]
        else:
            r[k:] = -good
            r[:k] = -adv + BLOCK_BONUS * (to_target[:k] < COLLISION_RADIUS)
    return r


def observe(state: WorldState, i: int) -> np.ndarray:
    """Local observation of agent ``i``: own velocity and position, then relative offsets."""
    own = state.agent_pos[i]
    parts = [state.agent_vel[i], own, (state.landmark_pos - own).reshape(-1)]
    others = np.delete(state.agent_pos, i, axis=0) - own
    parts.append(others.reshape(-1))
    if state.kind is EnvKind.PREDATOR_PREY:
        parts.append((state.obstacle_pos - own).reshape(-1))
    if state.kind.has_target:
        knows = state.kind is EnvKind.KEEP_AWAY or i >= state.n_adversaries
        parts.append(state.target - own if knows else np.zeros(2))
    return np.concatenate(parts)


def observe_all(state: WorldState) -> list[np.ndarray]:
    return [observe(state, i) for i in range(state.n_agents)]


def trace_record(state: WorldState, actions: np.ndarray, rewards: np.ndarray) -> dict:
    return {
        "step": state.step_count,
        "agent_pos": state.agent_pos.tolist(),
        "agent_vel": state.agent_vel.tolist(),
        "landmark_pos": state.landmark_pos.tolist(),
        "target_index": state.target_index,
        "actions": np.asarray(actions).tolist(),
        "rewards": np.asarray(rewards).tolist(),
    }


def write_trace(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_trace(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


@dataclass(frozen=True)
class EnvConfig:
    kind: EnvKind
    m: int
    k: int = 0
    l: int = 0
    max_episode_length: int = 25

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", EnvKind(self.kind))
        check_roles(self.kind, self.m, self.k, self.l)

    def obs_dims(self) -> tuple[int, ...]:
        return (obs_dim(self.kind, self.m, self.l),) * self.m

    def reset(self, seed: int) -> WorldState:
        return reset(self.kind, self.m, self.k, self.l, seed, self.max_episode_length)
