from typing import Any, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Run configuration schemas
COMMANDS = (
    "model1",
    "model2",
    "model3",
    "qubit",
    "as",
    "as-nogo",
    "dowling",
    "appendix",
    "bounds",
    "coherence",
    "pom-validate",
    "way",
    "strong-way",
    "smear",
)

SWEEP_COMMANDS = ("bounds", "as-nogo", "coherence", "strong-way")


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    command: Literal[COMMANDS]  # type: ignore[valid-type]
    theta: float = 0.0
    theta_prime: float = 0.0
    j: int = Field(1, ge=1)
    n: Optional[int] = Field(None, ge=0)
    m: float = Field(100.0, gt=0.0)
    k: int = Field(2, ge=2)
    q1: float = Field(16.0, ge=0.0)
    q2: float = Field(16.0, ge=0.0)
    g: float = float(np.pi / 16.0)
    T: float = Field(1.0, ge=0.0)
    phi: float = 0.0
    cutoff: Optional[int] = Field(None, ge=1)
    epsilon: float = Field(0.5, gt=0.0, lt=1.0)
    bins: Optional[int] = Field(None, ge=2)
    which: Literal["prop1", "owb", "tradeoff"] = "prop1"
    trials: int = Field(10, ge=1)
    seed: Optional[int] = Field(None, ge=0, lt=2**64)
    scheme: Optional[str] = None
    format: Literal["json", "csv"] = "json"
    output: Optional[str] = None

    @model_validator(mode="after")
    def seed_for_sweeps(self):
        if self.command in SWEEP_COMMANDS and self.seed is None:
            raise ValueError(f"command {self.command!r} is a randomized sweep and needs --seed")
        return self


# Report schemas
class Report(BaseModel):
    command: str
    version: str
    seed: Optional[int] = None
    parameters: Dict[str, Any] = Field(default_factory=dict)
    provenance: Dict[str, str] = Field(default_factory=dict)
    results: Dict[str, Any] = Field(default_factory=dict)
    residuals: Dict[str, float] = Field(default_factory=dict)
    tolerances: Dict[str, float] = Field(default_factory=dict)
    tails: Dict[str, float] = Field(default_factory=dict)
    passed: bool = True
    error: Optional[str] = None
    wall_clock: float = 0.0

    @model_validator(mode="after")
    def every_residual_has_tolerance(self):
        missing = sorted(set(self.residuals) - set(self.tolerances))
        if missing:
            raise ValueError(f"residuals without a tolerance: {missing}")
        return self


# Scheme file schemas
class ComplexMatrix(BaseModel):
    model_config = ConfigDict(extra="forbid")

    real: List[List[float]]
    imag: Optional[List[List[float]]] = None

    @field_validator("real")
    @classmethod
    def square(cls, v):
        if not v or any(len(row) != len(v) for row in v):
            raise ValueError("matrix must be square and non-empty")
        return v

    @model_validator(mode="after")
    def same_shape(self):
        if self.imag is not None and np.shape(self.imag) != np.shape(self.real):
            raise ValueError("real and imaginary parts differ in shape")
        return self

    def to_array(self) -> np.ndarray:
        out = np.asarray(self.real, dtype=np.complex128)
        if self.imag is not None:
            out = out + 1j * np.asarray(self.imag, dtype=float)
        return out


class ComplexVector(BaseModel):
    model_config = ConfigDict(extra="forbid")

    real: List[float]
    imag: Optional[List[float]] = None

    @model_validator(mode="after")
    def same_length(self):
        if not self.real:
            raise ValueError("vector must be non-empty")
        if self.imag is not None and len(self.imag) != len(self.real):
            raise ValueError("real and imaginary parts differ in length")
        return self

    def to_array(self) -> np.ndarray:
        out = np.asarray(self.real, dtype=np.complex128)
        if self.imag is not None:
            out = out + 1j * np.asarray(self.imag, dtype=float)
        return out


class PointerSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    labels: List[Union[int, str]]
    effects: List[ComplexMatrix]

    @model_validator(mode="after")
    def one_effect_per_label(self):
        if len(self.labels) != len(self.effects):
            raise ValueError(f"{len(self.labels)} labels for {len(self.effects)} effects")
        return self


class SchemeFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    system_dim: int = Field(ge=1)
    apparatus_dim: int = Field(ge=1)
    coupling: ComplexMatrix
    pointer: PointerSpec
    apparatus_state: Union[ComplexVector, ComplexMatrix]
    scaling: Optional[Dict[str, Union[int, str]]] = None
    system_charge: Optional[ComplexMatrix] = None
    apparatus_charge: Optional[ComplexMatrix] = None
