"""Experiment configuration: one JSON document per run."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .. import coding
from ..coding import CodingError, Scheme
from ..maddpg import Hyper
from ..mpe import EnvConfig, EnvKind, InvalidRoles
from ..orchestra import ComputeCostModel, StragglerModel, TrainingConfig


class ConfigError(ValueError):
    """Invalid experiment file; ``str()`` lists ``field.path: message`` lines."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class EnvSection(_Strict):
    kind: EnvKind = EnvKind.COOP_NAV
    m: int = Field(3, ge=1)
    k: int = Field(0, ge=0)
    l: int = Field(3, ge=0)
    episode_length: int = Field(25, ge=1)

    @model_validator(mode="after")
    def _roles(self) -> "EnvSection":
        try:
            EnvConfig(self.kind, self.m, self.k, self.l, self.episode_length)
        except InvalidRoles as exc:
            raise ValueError(str(exc)) from None
        return self


class SchemeSection(_Strict):
    scheme: Literal["centralized", "uncoded", "replication", "mds", "random_sparse", "ldpc"]
    name: Optional[str] = None
    alphas: Optional[list[float]] = None
    p_m: float = Field(0.8, gt=0, le=1)
    w: Optional[int] = None

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.scheme == "ldpc":
            return f"ldpc_w{self.w}"
        return self.scheme


class CellSection(_Strict):
    k: int = Field(0, ge=0)
    t_s: float = Field(0.0, ge=0)


class HyperSection(_Strict):
    lr_critic: float = Field(1e-2, ge=0)
    lr_policy: float = Field(1e-3, ge=0)
    gamma: float = Field(0.95, gt=0, le=1)
    tau: float = Field(0.99, gt=0, lt=1)
    batch_size: int = Field(64, ge=1)
    buffer_size: int = Field(100_000, ge=1)
    noise_start: float = Field(0.3, ge=0)
    noise_end: float = Field(0.05, ge=0)


class CostSection(_Strict):
    base: float = Field(0.05, ge=0)
    per_agent: float = Field(0.2, ge=0)


class SeedSection(_Strict):
    init: int = 0
    env: int = 1
    batch: int = 2
    straggler: int = 3
    code: int = 4


class ExperimentConfig(_Strict):
    env: EnvSection = EnvSection()
    n: int = Field(..., ge=1)
    schemes: list[SchemeSection] = Field(..., min_length=1)
    grid: list[CellSection] = []
    hyper: HyperSection = HyperSection()
    hidden: list[int] = [64, 64]
    cost: CostSection = CostSection()
    max_iteration: int = Field(50, ge=0)
    episodes_per_iteration: int = Field(1, ge=1)
    reward_window: int = Field(250, ge=1)
    summary_window: int = Field(5, ge=1)
    seeds: SeedSection = SeedSection()
    transport: Literal["sim", "tcp"] = "sim"
    tcp_timeout: float = Field(30.0, gt=0)
    out: str = "runs/out"

    @model_validator(mode="after")
    def _codes(self) -> "ExperimentConfig":
        labels = [s.label for s in self.schemes]
        if len(set(labels)) != len(labels):
            raise ValueError(f"scheme labels must be unique, got {labels}")
        for idx, s in enumerate(self.schemes):
            try:
                self.assignment(s)
            except (CodingError, KeyError, TypeError) as exc:
                raise ValueError(f"schemes.{idx} ({s.label}): {exc}") from None
        return self

    def assignment(self, s: SchemeSection) -> coding.AssignmentMatrix | None:
        if s.scheme == "centralized":
            return None
        n, m = self.n, self.env.m
        if s.scheme == "ldpc" and s.w is None:
            raise KeyError("ldpc needs w")
        return coding.build(
            Scheme(s.scheme), n, m, alphas=s.alphas, p_m=s.p_m, seed=self.seeds.code, w=s.w
        )

    def training_config(self, s: SchemeSection, cell: CellSection) -> TrainingConfig:
        e = self.env
        return TrainingConfig(
            env=EnvConfig(e.kind, e.m, e.k, e.l, e.episode_length),
            assignment=self.assignment(s),
            straggler=StragglerModel(cell.k, cell.t_s, self.seeds.straggler),
            cost=ComputeCostModel(self.cost.base, self.cost.per_agent),
            hyper=Hyper(**self.hyper.model_dump()),
            hidden=tuple(self.hidden),
            max_iteration=self.max_iteration,
            episodes_per_iteration=self.episodes_per_iteration,
            init_seed=self.seeds.init,
            env_seed=self.seeds.env,
            batch_seed=self.seeds.batch,
            reward_window=self.reward_window,
        )

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "\n".join(lines)


def parse_config(data: dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<root>: invalid JSON ({exc})") from None
    return parse_config(data)
