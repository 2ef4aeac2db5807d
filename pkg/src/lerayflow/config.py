"""Experiment configuration: a versioned JSON schema with rule pre-validation."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field as PField, ValidationError

from .field_core import SCALAR_FAMILIES, VECTOR_FAMILIES, Grid, GridError, SingularDataSpec
from .scaling_control import euler_limit_mu_min, param_rule_navier

SCHEMA_VERSION = 1
PIPELINES = ("nse_bounds", "autocontrol", "euler_limit", "singular_reversal", "damping_audit")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridSpec(_Strict):
    D: Literal[2, 3] = 3
    N: int = 16
    L: float = 2 * math.pi


class DataSpec(_Strict):
    family: str = "taylor_green"
    params: dict = PField(default_factory=dict)


class SingularSpec(_Strict):
    alpha0: float
    beta0: float
    i0: int = 0
    regular_amplitude: float = 0.5

    def to_spec(self) -> SingularDataSpec:
        return SingularDataSpec(self.alpha0, self.beta0, self.i0, self.regular_amplitude)


class SchemeSpec(_Strict):
    nu: float = 0.1
    dt: float = 0.01
    rho: Optional[float] = None
    r: Optional[float] = None
    mu: Optional[float] = None
    delta: float = 0.25
    m: int = 2
    Nt: int = 8
    tol: float = 1e-10
    max_iter: int = 40
    burgers_form: Literal["derivative_on_gaussian", "derivative_on_field"] = "derivative_on_gaussian"
    dealias: bool = True


class ExperimentConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    pipeline: Literal["nse_bounds", "autocontrol", "euler_limit", "singular_reversal",
                      "damping_audit"]
    grid: GridSpec = GridSpec()
    scheme: SchemeSpec = SchemeSpec()
    data: DataSpec = DataSpec()
    singular: Optional[SingularSpec] = None
    horizon: float = 0.1
    output: str = "runs/out"
    seeds: List[int] = PField(default_factory=lambda: [0])
    # pipeline knobs
    nu_sweep: List[float] = PField(default_factory=lambda: [0.1, 0.01, 0.0])
    dt_sweep: List[float] = PField(default_factory=lambda: [0.04, 0.02, 0.01])
    C0: float = 3.0
    samples: int = 10
    windows: Optional[int] = None

    def make_grid(self) -> Grid:
        return Grid(self.grid.D, self.grid.N, self.grid.L)

    def n_windows(self) -> int:
        if self.windows is not None:
            return self.windows
        return max(1, int(round(self.horizon / self.scheme.dt)))

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


class ConfigError(ValueError):
    """Configuration rejected; ``violations`` lists every broken rule."""

    def __init__(self, violations: List[str]):
        super().__init__("configuration rejected:\n  " + "\n  ".join(violations))
        self.violations = list(violations)


def rule_violations(cfg: ExperimentConfig) -> List[str]:
    """Every parameter rule the configuration breaks, by rule name."""
    out = []
    try:
        cfg.make_grid()
    except GridError as exc:
        out.append(f"grid: {exc}")
    s = cfg.scheme
    if not cfg.horizon > 0:
        out.append("horizon: T > 0")
    if not s.dt > 0:
        out.append("window: dt > 0")
    if s.nu < 0:
        out.append("viscosity: nu >= 0")
    if s.m < 0:
        out.append("norm order: m >= 0")
    if cfg.pipeline in ("nse_bounds", "euler_limit") and not 0 < s.delta < 0.5:
        out.append("delta: 0 < δ < 1/2")
    if cfg.pipeline in ("nse_bounds", "euler_limit", "autocontrol"):
        if cfg.data.family not in VECTOR_FAMILIES:
            out.append(f"family: unknown velocity family {cfg.data.family!r}")
    if cfg.pipeline == "damping_audit":
        if cfg.data.family not in SCALAR_FAMILIES and cfg.data.family not in VECTOR_FAMILIES:
            out.append(f"family: unknown data family {cfg.data.family!r}")
    if cfg.pipeline == "nse_bounds" and s.mu is not None and 0 < s.delta < 0.5:
        mu_min = param_rule_navier(s.delta)
        if s.mu <= mu_min:
            out.append(f"condfin: μ ≤ (2+δ)/δ (μ={s.mu:g}, (2+δ)/δ={mu_min:g})")
    if cfg.pipeline == "euler_limit":
        if 0 < s.delta < 0.5 and s.mu is not None:
            mu_min = euler_limit_mu_min(s.delta)
            if s.mu < mu_min:
                out.append(f"euler limit: μ < 5+3δ (μ={s.mu:g}, 5+3δ={mu_min:g})")
        if not cfg.dt_sweep or any(not 0 < d < 1 for d in cfg.dt_sweep):
            out.append("euler limit: every window length in (0, 1)")
    if cfg.pipeline == "autocontrol":
        if not 0 < s.dt <= 0.5:
            out.append("auto-control: window length in (0, 1/2]")
        if not cfg.C0 > 0:
            out.append("auto-control: C0 > 0")
        if cfg.grid.D != 3:
            out.append("auto-control: D = 3")
        if not any(v > 0 for v in cfg.nu_sweep) and s.rho is None:
            out.append("auto-control: a positive viscosity or an explicit rho")
        if any(v < 0 for v in cfg.nu_sweep):
            out.append("auto-control: viscosities >= 0")
    if cfg.pipeline == "singular_reversal":
        if cfg.singular is None:
            out.append("singular data: a singular block is required")
        else:
            sd = cfg.singular.to_spec()
            out.extend(f"singular data: {v}" for v in sd.violations(cfg.grid.D))
    if cfg.pipeline == "damping_audit" and cfg.samples < 1:
        out.append("damping audit: samples >= 1")
    return out


def parse_config(source: Union[str, Path, dict]) -> ExperimentConfig:
    """Parse JSON text, a path, or a dict; schema errors become :class:`ConfigError`."""
    if isinstance(source, dict):
        raw = source
    else:
        text = str(source)
        if not text.lstrip().startswith("{"):
            text = Path(source).read_text()
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"json: {exc}"]) from exc
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        msgs = [f"schema: {'.'.join(map(str, e['loc'])) or '<root>'}: {e['msg']}"
                for e in exc.errors()]
        raise ConfigError(msgs) from exc


def validate_config(source) -> ExperimentConfig:
    cfg = source if isinstance(source, ExperimentConfig) else parse_config(source)
    bad = rule_violations(cfg)
    if bad:
        raise ConfigError(bad)
    return cfg
