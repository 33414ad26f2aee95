"""Discrete-event simulation of one synchronous round on a virtual clock."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..coding import AssignmentMatrix, CodingError, is_decodable, recover
from ..maddpg import Hyper, Minibatch, NetSpec, UpdateCache, learner_update
from .events import EventQueue
from .straggler import ComputeCostModel


class NeverDecodable(CodingError):
    """Even the full response set cannot recover every agent."""


@dataclass
class RoundOutcome:
    theta: np.ndarray
    decode_set: tuple[int, ...]
    arrival_times: dict[int, float]
    round_time: float
    cancelled: tuple[int, ...] = ()
    responses: dict[int, np.ndarray] = field(default_factory=dict, repr=False)


def check_decodable(c: AssignmentMatrix) -> None:
    if not is_decodable(c, c.active_learners()):
        raise NeverDecodable(f"{c.scheme.value} matrix has rank < {c.n_agents}")


class SimTransport:
    """Runs learners in-process; arrival times come from ``ComputeCostModel``.

    Each learner's response is computed when its arrival event fires, and the
    controller tries to decode after every arrival.  Events still queued at
    decode time are the cancelled learners.

    With ``share_updates`` the per-agent updates of one round are memoised
    across learners (they are bitwise identical anyway).
    """

    name = "sim"

    def __init__(self, cost: ComputeCostModel | None = None, share_updates: bool = True):
        self.cost = cost or ComputeCostModel()
        self.share_updates = share_updates

    def arrival_times(self, c: AssignmentMatrix, delays: Mapping[int, float]) -> dict[int, float]:
        return {
            j: self.cost.finish_time(c.load(j)) + delays.get(j, 0.0) for j in c.active_learners()
        }

    def round(
        self,
        c: AssignmentMatrix,
        theta: np.ndarray,
        batch: Minibatch,
        iteration: int,
        delays: Mapping[int, float],
        spec: NetSpec,
        hyper: Hyper,
    ) -> RoundOutcome:
        check_decodable(c)
        arrivals = self.arrival_times(c, delays)
        queue = EventQueue()
        for j, t in arrivals.items():
            queue.schedule(t, j)
        cache = UpdateCache() if self.share_updates else None
        received: dict[int, np.ndarray] = {}
        while queue:
            t, j, _ = queue.pop()
            received[j] = learner_update(c.row(j), theta, batch, spec, hyper, cache=cache)
            if is_decodable(c, received):
                cancelled = tuple(sorted(k for _, k, _ in queue.drain()))
                return RoundOutcome(
                    recover(c, received), tuple(sorted(received)), arrivals, t, cancelled, received
                )
        raise NeverDecodable("responses exhausted without a decodable set")


def earliest_decodable_time(c: AssignmentMatrix, arrivals: Mapping[int, float]) -> float:
    """Brute-force reference: smallest ``t`` whose arrived set ``{j : a_j <= t}`` decodes."""
    for t in sorted(set(arrivals.values())):
        if is_decodable(c, [j for j, a in arrivals.items() if a <= t]):
            return t
    raise NeverDecodable("no arrival prefix is decodable")
