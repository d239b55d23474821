import json
import os
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from app.core.errors import ConfigError


class MixtureComponent(BaseModel):
    """One agent's Gaussian source: n_m samples from N(mean, std^2 I)."""
    mean: List[float]
    std: float = 1.0
    count: int

    @field_validator("std")
    @classmethod
    def std_positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError(f"std must be positive, got {v}")
        return v

    @field_validator("count")
    @classmethod
    def count_non_negative(cls, v: int) -> int:
        if v < 0:
            raise ValueError(f"count must be non-negative, got {v}")
        return v


class MixtureSpec(BaseModel):
    components: List[MixtureComponent] = Field(min_length=1)

    @model_validator(mode="after")
    def same_dimension(self):
        dims = {len(c.mean) for c in self.components}
        if len(dims) != 1 or 0 in dims:
            raise ValueError(f"all component means must share one positive dimension, got {sorted(dims)}")
        return self

    @property
    def dim(self) -> int:
        return len(self.components[0].mean)

    @property
    def num_agents(self) -> int:
        return len(self.components)


class DatasetSource(BaseModel):
    path: Optional[str] = None
    mixture: Optional[MixtureSpec] = None
    seed: int = 0

    @model_validator(mode="after")
    def exactly_one_source(self):
        if (self.path is None) == (self.mixture is None):
            raise ValueError("dataset needs exactly one of 'path' or 'mixture'")
        if self.path is not None and not os.path.isfile(self.path):
            raise ValueError(f"dataset file not found: {self.path}")
        return self


class TopologySpec(BaseModel):
    kind: Literal["ring", "path", "complete", "star", "erdos_renyi"] = "ring"
    num_agents: int = Field(ge=2)
    edge_prob: Optional[float] = None
    seed: int = 0


class InitSpec(BaseModel):
    scheme: Literal["shared", "random_datapoints"] = "random_datapoints"
    heads: Optional[List[List[float]]] = None
    seed: int = 0

    @model_validator(mode="after")
    def heads_for_shared(self):
        if self.scheme == "shared" and not self.heads:
            raise ValueError("the 'shared' init scheme needs 'heads'")
        return self


class ExperimentConfig(BaseModel):
    dataset: DatasetSource
    topology: TopologySpec
    K: int = Field(ge=1)
    rhos: List[float] = Field(min_length=1)
    alpha: Union[float, Literal["auto"]] = "auto"
    max_rounds: Optional[int] = Field(default=None, ge=1)
    head_tol: Optional[float] = Field(default=None, gt=0)
    stability_window: Optional[int] = Field(default=None, ge=1)
    init: InitSpec = InitSpec()
    output_dir: Optional[str] = None
    trajectory_every: Optional[int] = Field(default=None, ge=0)

    @field_validator("rhos")
    @classmethod
    def rhos_positive(cls, v: List[float]) -> List[float]:
        bad = [r for r in v if not r > 0]
        if bad:
            raise ValueError(f"rho values must be positive, got {bad}")
        return v

    @field_validator("alpha")
    @classmethod
    def alpha_positive(cls, v):
        if v != "auto" and not v > 0:
            raise ValueError(f"alpha must be positive or 'auto', got {v}")
        return v

    @model_validator(mode="after")
    def consistent_shapes(self):
        if self.init.scheme == "shared" and len(self.init.heads) != self.K:
            raise ValueError(f"shared init gives {len(self.init.heads)} heads but K={self.K}")
        mixture = self.dataset.mixture
        if mixture is not None:
            if mixture.num_agents != self.topology.num_agents:
                raise ValueError(
                    f"mixture has {mixture.num_agents} agents but topology has {self.topology.num_agents}"
                )
            if self.init.heads and any(len(h) != mixture.dim for h in self.init.heads):
                raise ValueError(f"init heads must have dimension {mixture.dim}")
        return self

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        """
        Reads a JSON experiment document. A relative dataset path is resolved
        against the directory holding the config file.
        """
        try:
            with open(path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        dataset = payload.get("dataset") or {}
        if dataset.get("path") and not os.path.isabs(dataset["path"]):
            dataset["path"] = os.path.join(os.path.dirname(os.path.abspath(path)), dataset["path"])
        return cls.parse(payload)

    @classmethod
    def parse(cls, payload: dict) -> "ExperimentConfig":
        try:
            return cls.model_validate(payload)
        except ValidationError as e:
            raise ConfigError(f"invalid experiment config: {e}") from e


class ExperimentRequest(BaseModel):
    """HTTP body for the run and oracle endpoints."""
    config: ExperimentConfig
    rho: float = Field(gt=0)
