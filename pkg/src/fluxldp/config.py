"""Experiment configuration: strict YAML schema, overrides, canonical hash."""

from __future__ import annotations

import json
import os
from typing import List, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .model_core import (
    Kernel,
    PottsPotential,
    StateSpace,
    TimeKernel,
    average_kernel,
    constant_kernel,
    glauber_kernel,
    glauber_periodic_kernel,
    modulated_kernel,
)

Matrix = List[List[float]]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class KernelCfg(_Strict):
    family: Literal["constant", "glauber", "glauber_periodic", "constant_periodic"] = "constant"
    q: int = Field(2, ge=2, le=8)
    r: Union[float, Matrix] = 1.0
    beta: float = 0.0
    field: Optional[List[float]] = None
    period: float = Field(1.0, gt=0)
    amplitude: float = Field(0.5, ge=-1.0, le=1.0)
    rate_bound: Optional[float] = Field(None, gt=0)
    quad_points: int = Field(256, ge=2)

    @field_validator("r")
    @classmethod
    def _nonneg(cls, v):
        arr = np.asarray(v, dtype=float)
        if np.any(arr < 0):
            raise ValueError("rates must be non-negative")
        return v

    @model_validator(mode="after")
    def _shapes(self):
        if isinstance(self.r, list) and np.asarray(self.r).shape != (self.q, self.q):
            raise ValueError(f"r must be a {self.q}x{self.q} matrix")
        if self.field is not None and len(self.field) != self.q:
            raise ValueError(f"field must have {self.q} entries")
        return self


class SimulationCfg(_Strict):
    n: int = Field(100, ge=1, le=10**7)
    T: float = Field(1.0, gt=0)
    seed: int = Field(0, ge=0, lt=2**64)
    replicas: int = Field(200, ge=1)
    mu0: Optional[List[float]] = None
    grid_points: int = Field(101, ge=2)
    n_list: List[int] = [50, 100, 200]
    gamma: float = Field(10.0, gt=0)
    gamma_list: List[float] = [10.0, 100.0, 1000.0]
    ode_dt: float = Field(1e-3, gt=0)
    workers: Optional[int] = Field(None, ge=1)

    @field_validator("n_list", "gamma_list")
    @classmethod
    def _increasing(cls, v):
        if any(b <= a for a, b in zip(v, v[1:])) or any(x <= 0 for x in v):
            raise ValueError("must be positive and strictly increasing")
        return v


class GridCfg(_Strict):
    m: int = Field(32, ge=1)
    w_max: float = Field(4.0, ge=0)
    h_w: float = Field(0.25, gt=0)
    max_nodes: int = Field(5_000_000, ge=1)


class HJCfg(_Strict):
    lam: float = Field(0.5, gt=0)
    h: Literal["mu1", "mu1_sq", "cos", "const", "mu1_flux"] = "mu1"
    catalog: List[float] = [0.0, 0.5, 1.0, 2.0, 4.0]
    catalog_b: List[float] = [0.0, 1.0, 2.0]
    dt: float = Field(0.05, gt=0)
    tol: float = Field(1e-9, gt=0)
    max_iter: Optional[int] = Field(None, ge=1)
    residual_ms: List[int] = [8, 16, 32]
    residual_w_max: float = Field(0.5, ge=0)
    residual_catalog_points: int = Field(21, ge=3)
    residual_dt_factor: float = Field(1.0, gt=0)
    coarse_m: Optional[int] = Field(None, ge=1)

    @field_validator("catalog", "catalog_b")
    @classmethod
    def _catalog(cls, v):
        if not v or any(s < 0 for s in v):
            raise ValueError("catalog entries must be non-negative")
        return v


class PenaltyCfg(_Strict):
    alpha1_ladder: List[float] = [1e1, 1e2, 1e3, 1e4, 1e5, 1e6]
    alpha2: float = Field(10.0, gt=0)
    epsilon_ladder: List[float] = [0.01]

    @field_validator("alpha1_ladder", "epsilon_ladder")
    @classmethod
    def _pos(cls, v):
        if not v or any(x <= 0 for x in v):
            raise ValueError("entries must be positive")
        return v

    @field_validator("epsilon_ladder")
    @classmethod
    def _below_one(cls, v):
        if any(x >= 1 for x in v):
            raise ValueError("epsilon must be below 1")
        return v


class RateEvalCfg(_Strict):
    mu: Optional[List[float]] = None
    w_dot: Optional[List[float]] = None
    p_state: Optional[List[float]] = None
    p_flux: Optional[List[float]] = None


class LDPCfg(_Strict):
    radius_mu: float = Field(0.25, gt=0)
    radius_w: Optional[float] = Field(None, gt=0)
    flux_factor: float = Field(2.0, gt=0)
    replicas: Optional[List[int]] = None
    segments: int = Field(10, ge=1)
    iterations: int = Field(200, ge=1)


class ContainmentCfg(_Strict):
    k_cap: float = Field(0.65, gt=0)
    replicas: int = Field(10_000, ge=1)


class OutputCfg(_Strict):
    dir: str = "out"


class ExperimentConfig(_Strict):
    kernel: KernelCfg = KernelCfg()
    simulation: SimulationCfg = SimulationCfg()
    grid: GridCfg = GridCfg()
    hj: HJCfg = HJCfg()
    penalty: PenaltyCfg = PenaltyCfg()
    rate: RateEvalCfg = RateEvalCfg()
    ldp: LDPCfg = LDPCfg()
    containment: ContainmentCfg = ContainmentCfg()
    output: OutputCfg = OutputCfg()

    @model_validator(mode="after")
    def _dims(self):
        q = self.kernel.q
        mu0 = self.simulation.mu0
        if mu0 is not None:
            if len(mu0) != q or min(mu0) < 0 or abs(sum(mu0) - 1.0) > 1e-12:
                raise ValueError(f"simulation.mu0 must be a probability vector of length {q}")
        return self

    # -- derived objects ------------------------------------------------------
    def space(self) -> StateSpace:
        return StateSpace(self.kernel.q)

    def mu0(self) -> np.ndarray:
        q = self.kernel.q
        return np.full(q, 1.0 / q) if self.simulation.mu0 is None else np.asarray(self.simulation.mu0, float)

    def potential(self) -> PottsPotential:
        return PottsPotential(self.kernel.beta, tuple(self.kernel.field or ()))

    def is_periodic(self) -> bool:
        return self.kernel.family in ("glauber_periodic", "constant_periodic")

    def time_kernel(self) -> TimeKernel:
        kc, sp = self.kernel, self.space()
        if kc.family == "glauber_periodic":
            return glauber_periodic_kernel(sp, kc.r, self.potential(), kc.period)
        if kc.family == "constant_periodic":
            return modulated_kernel(sp, kc.r, kc.amplitude, kc.period)
        raise ValueError(f"kernel family {kc.family!r} is not time-periodic")

    def build_kernel(self) -> Kernel:
        """The (time-averaged, for periodic families) limiting kernel."""
        kc, sp = self.kernel, self.space()
        if kc.family == "constant":
            return constant_kernel(sp, kc.r)
        if kc.family == "glauber":
            return glauber_kernel(sp, kc.r, self.potential().grad)
        return average_kernel(self.time_kernel(), kc.quad_points)

    def canonical_text(self) -> str:
        # the output location does not change results, so it stays out of the hash
        return json.dumps(self.model_dump(mode="json", exclude={"output"}), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return f"{fnv1a64(self.canonical_text().encode()):016x}"

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=True)


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


class ConfigError(ValueError):
    pass


def apply_overrides(raw: dict, overrides: List[str]) -> dict:
    """Apply ``section.key=value`` overrides; values are parsed as YAML scalars/lists."""
    raw = dict(raw or {})
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        path, value = item.split("=", 1)
        keys = path.strip().split(".")
        if len(keys) < 2 or not all(keys):
            raise ConfigError(f"override path {path!r} must be section.key")
        try:
            parsed = yaml.safe_load(value)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {item!r}: cannot parse value ({exc})") from exc
        node = raw
        for k in keys[:-1]:
            nxt = node.get(k)
            if nxt is None:
                nxt = {}
            elif not isinstance(nxt, dict):
                raise ConfigError(f"override {item!r}: {k!r} is not a section")
            node[k] = dict(nxt)
            node = node[k]
        node[keys[-1]] = parsed
    return raw


def load_config(path: Optional[str], overrides: Optional[List[str]] = None) -> ExperimentConfig:
    """Parse a YAML config (``None`` means all defaults) and apply overrides."""
    raw: dict = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file {path!r} not found")
        with open(path) as fh:
            text = fh.read()
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
            raise ConfigError(f"malformed YAML{where}: {getattr(exc, 'problem', exc)}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
    raw = apply_overrides(raw, overrides or [])
    return ExperimentConfig.model_validate(raw)
