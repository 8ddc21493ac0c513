"""Run configuration: a YAML document validated with pydantic (unknown keys are errors)."""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .norms import DomainSpec, Widths
from .series import FrequencyData, PhaseSpace, TFSeries, TruncationOrders

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "build_space",
           "build_instance", "truncation", "CONFIG_SCHEMA"]

CONFIG_SCHEMA = 1


class ConfigError(ValueError):
    """Malformed configuration; the message names the field path (and line when known)."""


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DimsModel(_Model):
    n: int = Field(1, ge=0)
    m: int = Field(1, ge=0)


class FrequencyModel(_Model):
    omega_r: float = 1.0
    omega_I: list[float] = [0.01]
    omega_J: list[float] = [0.01]

    @field_validator("omega_r")
    @classmethod
    def _nonzero(cls, v):
        if v == 0:
            raise ValueError("omega_r must be non-zero")
        return v


class BasepointModel(_Model):
    r0: float = 0.0
    I0: Optional[list[float]] = None


class WidthsModel(_Model):
    r: float = Field(1.0, gt=0)
    rho: float = Field(1.0, gt=0)
    xi: float = Field(1.0, gt=0)
    s: float = Field(1.0, gt=0)
    delta: float = Field(1.0, gt=0)


class DomainModel(_Model):
    R: tuple[float, float] = (-0.5, 0.5)
    I_box: Optional[list[tuple[float, float]]] = None
    x_max: float = Field(0.5, gt=0)
    widths: WidthsModel = WidthsModel()


class CoeffModel(_Model):
    c_re: float = 0.0
    c_im: float = 0.0
    a: int = Field(0, ge=0)
    b: Optional[list[int]] = None
    e: int = Field(0, ge=0)
    alpha_weights: Optional[list[int]] = None


class RecordModel(_Model):
    k: list[int] = []
    h: list[int] = []
    j: list[int] = []
    coeff: list[CoeffModel]


class InstanceModel(_Model):
    preset: Optional[Literal["reference"]] = None
    dims: DimsModel = DimsModel()
    frequencies: FrequencyModel = FrequencyModel()
    basepoint: BasepointModel = BasepointModel()
    domain: DomainModel = DomainModel()
    f: list[RecordModel] = []
    add_conjugate: bool = False
    margin_fraction: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _dims(self):
        n, m = self.dims.n, self.dims.m
        fr = self.frequencies
        if len(fr.omega_I) != n:
            raise ValueError(f"frequencies.omega_I has length {len(fr.omega_I)}, dims.n = {n}")
        if len(fr.omega_J) != m:
            raise ValueError(f"frequencies.omega_J has length {len(fr.omega_J)}, dims.m = {m}")
        if self.basepoint.I0 is not None and len(self.basepoint.I0) != n:
            raise ValueError("basepoint.I0 length does not match dims.n")
        if self.domain.I_box is not None and len(self.domain.I_box) != n:
            raise ValueError("domain.I_box length does not match dims.n")
        for i, rec in enumerate(self.f):
            if len(rec.k) != n or len(rec.h) != m or len(rec.j) != m:
                raise ValueError(f"f[{i}]: key lengths do not match dims (n={n}, m={m})")
        return self


class TruncModel(_Model):
    k: int = Field(8, ge=0)
    pq: int = Field(6, ge=0)
    x: int = Field(12, ge=0)
    ri: int = Field(6, ge=0)


class ConstantsModel(_Model):
    cbar: float = Field(gt=0)
    ctilde: float = Field(gt=0)
    c: float = Field(ge=1)


class NormalizationModel(_Model):
    N: int = Field(4, ge=1)
    constants: Union[Literal["calibrated", "calibrate"], ConstantsModel] = "calibrated"
    schedule_variant: Literal["stronger", "standard"] = "stronger"
    truncation: TruncModel = TruncModel()
    tol: float = Field(1e-14, gt=0)
    residual_tol: float = Field(1e-10, gt=0)
    prune: float = Field(1e-17, ge=0)
    jmax_cap: int = Field(40, ge=1)
    precision: Literal["double", "extended"] = "double"


class OutputsModel(_Model):
    report: str = "report.json"
    steps_csv: str = "steps.csv"
    g_N: str = "g_N.txt"
    f_N: str = "f_N.txt"
    normal_form: str = "normal_form.json"
    metrics: str = "metrics.json"
    trajectories_dir: str = "trajectories"
    constants: str = "constants.json"


class ClockModel(_Model):
    eps: float = Field(0.01, gt=0)
    r_star: float = 0.0
    x_star: float = 1.0
    horizon: float = Field(10.0, gt=0)       # in units of 1/eps
    sample: float = Field(1.0, gt=0)
    tol: float = Field(1e-8, gt=0)
    threshold: float = Field(0.5, gt=0)
    window: tuple[float, float] = (0.5, 5.0)  # in units of 1/eps


class ValidationModel(_Model):
    checks: list[Literal["conjugacy", "clock", "solver"]] = []
    points: int = Field(20, ge=1)
    tol_factor: float = Field(10.0, gt=0)
    normal_form_file: Optional[str] = None
    solver_instances: int = Field(100, ge=1)
    clock: ClockModel = ClockModel()


class CalibrationModel(_Model):
    seed: int = 0
    count: int = Field(60, ge=1)
    fraction: float = Field(0.9, gt=0, lt=1)


class RunConfig(_Model):
    schema_version: Literal[1] = Field(CONFIG_SCHEMA, alias="schema")
    seed: int = Field(0, ge=0, lt=2 ** 64)
    instance: InstanceModel = InstanceModel()
    normalization: NormalizationModel = NormalizationModel()
    outputs: OutputsModel = OutputsModel()
    validation: ValidationModel = ValidationModel()
    calibration: CalibrationModel = CalibrationModel()

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    def echo(self) -> dict:
        """Every field, defaults included, for the report."""
        return self.model_dump(mode="json", by_alias=True)

    def with_overrides(self, seed: int | None = None, precision: str | None = None) -> "RunConfig":
        data = self.echo()
        if seed is not None:
            data["seed"] = seed
        if precision is not None:
            data["normalization"]["precision"] = precision
        return RunConfig.model_validate(data)


# -- loading -----------------------------------------------------------------------

def _line_map(text: str) -> dict:
    """Map field paths to 1-based line numbers of the YAML nodes."""
    out = {}
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return out

    def walk(node, path):
        out[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                walk(v, path + (k.value,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    if root is not None:
        walk(root, ())
    return out


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Validate a YAML document; raises :class:`ConfigError` with field path and line."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark is not None else "?"
        raise ConfigError(f"{source}:{where}: YAML syntax error: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        lines = _line_map(text)
        msgs = []
        for err in exc.errors():
            loc = tuple(err["loc"])
            # union members add their own names to the location
            path = ".".join(str(p) for p in loc)
            line = None
            for cut in range(len(loc), -1, -1):
                if loc[:cut] in lines:
                    line = lines[loc[:cut]]
                    break
            where = f"line {line}" if line else "?"
            msgs.append(f"{source}:{where}: {path or '<root>'}: {err['msg']}")
        raise ConfigError("\n".join(msgs)) from exc


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(p))


# -- construction ------------------------------------------------------------------

def truncation(cfg: RunConfig) -> TruncationOrders:
    t = cfg.normalization.truncation
    return TruncationOrders(t.k, t.pq, t.x, t.ri)


def _dtype(cfg: RunConfig):
    return np.clongdouble if cfg.normalization.precision == "extended" else np.complex128


def build_space(cfg: RunConfig) -> PhaseSpace:
    inst = cfg.instance
    fr = inst.frequencies
    freq = FrequencyData(fr.omega_r, tuple(fr.omega_I), tuple(fr.omega_J))
    I0 = inst.basepoint.I0 if inst.basepoint.I0 is not None else [0.0] * inst.dims.n
    return PhaseSpace(freq, (inst.basepoint.r0, tuple(I0)), dtype=_dtype(cfg))


def build_domain(cfg: RunConfig) -> DomainSpec:
    d = cfg.instance.domain
    I_box = d.I_box if d.I_box is not None else [(-0.5, 0.5)] * cfg.instance.dims.n
    w = d.widths
    return DomainSpec(d.R, tuple(tuple(iv) for iv in I_box), d.x_max,
                      Widths(w.r, w.rho, w.xi, w.s, w.delta))


def build_instance(cfg: RunConfig, c: float | None = None):
    """``(H0, f, domain)`` described by the config.

    With ``margin_fraction`` the literal is rescaled so that
    ``c N (X/dfrak)|1/omega_r| ||f||`` equals that fraction.
    """
    from .instances import reference_instance
    from .norms import weighted_norm

    inst = cfg.instance
    trunc = truncation(cfg)
    N = cfg.normalization.N
    if inst.preset == "reference":
        frac = inst.margin_fraction if inst.margin_fraction is not None else 0.5
        ref = reference_instance(N=N, c=c, fraction=frac, trunc=trunc, dtype=_dtype(cfg))
        return ref.H0, ref.f, ref.domain
    sp = build_space(cfg)
    dom = build_domain(cfg)
    records = [r.model_dump(exclude_none=True) for r in inst.f]
    try:
        f = TFSeries.from_records(sp, records, trunc)
    except ValueError as exc:
        raise ConfigError(f"instance.f: {exc}") from exc
    if inst.add_conjugate:
        f = f + f.conjugate()
    if inst.margin_fraction is not None and not f.is_zero:
        if c is None:
            from .constants import load_constants
            c = load_constants()["c"]
        target = inst.margin_fraction * dom.dfrak / (c * N * dom.X * abs(sp.freq.inv_omega_r))
        f = f * (target / weighted_norm(f, dom))
    return TFSeries.H0(sp, trunc), f, dom
