"""Controller loop: collect episodes, run a coded update round, repeat."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .. import checkpoint
from ..coding import AssignmentMatrix
from ..maddpg import Hyper, Minibatch, NetSpec, centralized_update, init_all
from ..mpe import EnvConfig
from .buffer import ReplayBuffer, collect_episodes
from .sim import RoundOutcome, SimTransport
from .straggler import ComputeCostModel, StragglerModel

logger = logging.getLogger(__name__)


class Transport(Protocol):
    name: str

    def round(
        self,
        c: AssignmentMatrix,
        theta: np.ndarray,
        batch: Minibatch,
        iteration: int,
        delays: dict[int, float],
        spec: NetSpec,
        hyper: Hyper,
    ) -> RoundOutcome: ...


@dataclass
class RoundTrace:
    iteration: int
    stragglers: tuple[int, ...]
    arrival_times: dict[int, float]
    decode_set: tuple[int, ...]
    round_time: float
    decode_ok: bool
    mean_reward: float = float("nan")


def run_iteration(
    c: AssignmentMatrix,
    theta: np.ndarray,
    buffer: ReplayBuffer,
    straggler: StragglerModel,
    cost: ComputeCostModel,
    spec: NetSpec,
    hyper: Hyper,
    iteration: int = 0,
    batch_seed: int = 0,
    transport: Transport | None = None,
) -> tuple[np.ndarray, RoundTrace]:
    """One synchronous round: sample, pick stragglers, gather until decodable, decode."""
    transport = transport or SimTransport(cost)
    batch = buffer.sample(hyper.batch_size, [batch_seed, iteration])
    stragglers = straggler.pick(iteration, c.active_learners())
    delays = {j: straggler.t_s for j in stragglers}
    out = transport.round(c, theta, batch, iteration, delays, spec, hyper)
    trace = RoundTrace(
        iteration=iteration,
        stragglers=tuple(stragglers),
        arrival_times=dict(sorted(out.arrival_times.items())),
        decode_set=out.decode_set,
        round_time=out.round_time,
        decode_ok=True,
    )
    return out.theta, trace


@dataclass
class TrainingConfig:
    env: EnvConfig
    assignment: AssignmentMatrix | None  # None: centralized single-learner baseline
    straggler: StragglerModel = field(default_factory=StragglerModel)
    cost: ComputeCostModel = field(default_factory=ComputeCostModel)
    hyper: Hyper = field(default_factory=Hyper)
    hidden: tuple[int, ...] = (64, 64)
    max_iteration: int = 50
    episodes_per_iteration: int = 1
    init_seed: int = 0
    env_seed: int = 1
    batch_seed: int = 2
    reward_window: int = 250

    @property
    def spec(self) -> NetSpec:
        return NetSpec(self.env.obs_dims(), self.hidden)


@dataclass
class TrainingResult:
    traces: list[RoundTrace]
    theta: np.ndarray
    lengths: list[int]
    history: list[np.ndarray] = field(default_factory=list)

    def smoothed_rewards(self, window: int) -> list[float]:
        return smooth([t.mean_reward for t in self.traces], window)


def smooth(values: list[float], window: int) -> list[float]:
    """Trailing mean over the last ``window`` values (fewer at the start)."""
    out = []
    acc = 0.0
    for k, v in enumerate(values):
        acc += v
        if k >= window:
            acc -= values[k - window]
        out.append(acc / min(k + 1, window))
    return out


def _centralized_round(
    theta: np.ndarray, buffer: ReplayBuffer, cfg: TrainingConfig, iteration: int
) -> tuple[np.ndarray, RoundTrace]:
    batch = buffer.sample(cfg.hyper.batch_size, [cfg.batch_seed, iteration])
    new = centralized_update(theta, batch, cfg.spec, cfg.hyper)
    t = cfg.cost.finish_time(cfg.env.m)
    return new, RoundTrace(iteration, (), {0: t}, (0,), t, True)


def run_training(
    cfg: TrainingConfig,
    transport: Transport | None = None,
    record_params: bool = False,
    checkpoint_path: str | Path | None = None,
) -> TrainingResult:
    """Alternate episode collection and update rounds for ``cfg.max_iteration`` rounds.

    The buffer is first filled to one minibatch with exploratory episodes.  On
    ``KeyboardInterrupt`` the current parameters are written to
    ``checkpoint_path`` (when given) before re-raising.
    """
    spec = cfg.spec
    hyper = cfg.hyper
    theta = init_all(spec, cfg.init_seed)
    lengths = [spec.block_len(i) for i in range(spec.n_agents)]
    buffer = ReplayBuffer(hyper.buffer_size, spec.obs_dims)
    if cfg.assignment is not None:
        transport = transport or SimTransport(cfg.cost)
    result = TrainingResult([], theta, lengths)
    episode = 0
    try:
        while len(buffer) < hyper.batch_size and cfg.max_iteration > 0:
            collect_episodes(theta, spec, cfg.env, 1, buffer, cfg.env_seed, episode, hyper.noise_start)
            episode += 1
        for it in range(cfg.max_iteration):
            noise = hyper.noise_scale(it, cfg.max_iteration)
            totals = collect_episodes(
                theta, spec, cfg.env, cfg.episodes_per_iteration, buffer, cfg.env_seed, episode, noise
            )
            episode += cfg.episodes_per_iteration
            if cfg.assignment is None:
                theta, trace = _centralized_round(theta, buffer, cfg, it)
            else:
                theta, trace = run_iteration(
                    cfg.assignment, theta, buffer, cfg.straggler, cfg.cost, spec, hyper,
                    iteration=it, batch_seed=cfg.batch_seed, transport=transport,
                )
            trace.mean_reward = float(np.mean([t.mean() for t in totals])) if totals else float("nan")
            result.traces.append(trace)
            result.theta = theta
            if record_params:
                result.history.append(theta.copy())
            if (it + 1) % cfg.reward_window == 0:
                window = [t.mean_reward for t in result.traces[-cfg.reward_window :]]
                logger.info(
                    "iteration %d: mean reward %.4f over last %d, mean round time %.4f",
                    it + 1, float(np.mean(window)), cfg.reward_window,
                    float(np.mean([t.round_time for t in result.traces[-cfg.reward_window :]])),
                )
    except KeyboardInterrupt:
        if checkpoint_path is not None:
            checkpoint.save(checkpoint_path, theta, lengths, _hyper_dict(hyper), interrupted=True)
        raise
    if checkpoint_path is not None:
        checkpoint.save(checkpoint_path, theta, lengths, _hyper_dict(hyper), iterations=cfg.max_iteration)
    return result


def _hyper_dict(h: Hyper) -> dict:
    return {k: getattr(h, k) for k in h.__dataclass_fields__}
