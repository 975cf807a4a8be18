"""
Pydantic schemas of experiment files.
One TOML document per experiment, one table per section.
"""

import hashlib
import json
import tomllib
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import Field, ValidationError, model_validator

from app.core.exceptions import ConfigError, RegimeError
from app.models.enums import InitialLaw, MomentKind, Regime, TailMode, VarianceKind
from app.models.kernels import classify_regime
from app.schemas.base import BaseSchema, KernelParams, ObservableSpec


# =====================
# Sections
# =====================

class ExperimentSection(BaseSchema):
    """[experiment] table."""
    name: str = Field("experiment", min_length=1, max_length=100, pattern=r"^[A-Za-z0-9_.-]+$")
    regime: Union[Regime, Literal["auto"]] = "auto"
    seed: int = Field(0, ge=0, lt=2 ** 64)
    depth: int = Field(10, ge=0, le=60)
    replicates: int = Field(1000, ge=1)
    initial: InitialLaw = InitialLaw.STATIONARY
    x0: float = 0.0
    threads: Optional[int] = Field(None, ge=1)
    runtime_budget: Optional[float] = Field(None, gt=0)


class SequenceSection(BaseSchema):
    """[sequence] table: entries f_0..f_L and how the sequence continues."""
    entries: list[ObservableSpec] = Field(..., min_length=1)
    tail: TailMode = TailMode.ZERO


class TolerancesSection(BaseSchema):
    """[tolerances] table."""
    n_stderr: float = Field(4.0, gt=0)
    relative_sub: float = Field(0.08, gt=0)
    relative_critical: float = Field(0.15, gt=0)
    zero_variance_ceiling: float = Field(0.05, gt=0)
    ks_level: float = Field(0.01, gt=0, lt=1)
    ratio: float = Field(0.1, gt=0)
    series: float = Field(1e-12, gt=0)


class OutputSection(BaseSchema):
    """[output] table."""
    dir: Optional[str] = None


class OracleSection(BaseSchema):
    """[oracle] table: one many-to-one moment, or all of them."""
    kind: Optional[MomentKind] = None
    n: int = Field(..., ge=0, le=60)
    x: float = 0.0
    m: Optional[int] = Field(None, ge=0)
    g: Optional[ObservableSpec] = None


class VarianceSection(BaseSchema):
    """[variance] table."""
    kinds: Optional[list[VarianceKind]] = None


class SweepSection(BaseSchema):
    """[sweep] table of the `regimes` subcommand."""
    a: list[float] = Field(..., min_length=1)
    sigma: float = Field(1.0, gt=0)
    observable: str = "identity"


class SupercriticalSection(BaseSchema):
    """[supercritical] table: residual spreads are compared at n1 < n2 < depth."""
    n1: Optional[int] = Field(None, ge=0)
    n2: Optional[int] = Field(None, ge=1)


# =====================
# Experiment file
# =====================

class ExperimentConfig(BaseSchema):
    """A complete experiment file."""
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    kernel: Optional[KernelParams] = None
    observable: Optional[ObservableSpec] = None
    sequence: Optional[SequenceSection] = None
    tolerances: TolerancesSection = Field(default_factory=TolerancesSection)
    output: OutputSection = Field(default_factory=OutputSection)
    oracle: Optional[OracleSection] = None
    variance: VarianceSection = Field(default_factory=VarianceSection)
    sweep: Optional[SweepSection] = None
    supercritical: SupercriticalSection = Field(default_factory=SupercriticalSection)

    @model_validator(mode="after")
    def check_supercritical_depths(self):
        n1, n2 = self.supercritical.n1, self.supercritical.n2
        depth = self.experiment.depth
        if n1 is not None and n1 >= depth:
            raise ValueError("supercritical.n1 must be below experiment.depth")
        if n2 is not None and n2 >= depth:
            raise ValueError("supercritical.n2 must be below experiment.depth")
        if n1 is not None and n2 is not None and n1 >= n2:
            raise ValueError("supercritical.n1 must be below supercritical.n2")
        return self

    @classmethod
    def from_toml(cls, path: Union[str, Path]) -> "ExperimentConfig":
        """Read and validate an experiment file; any failure is a ConfigError."""
        path = Path(path)
        try:
            with path.open("rb") as fh:
                document = tomllib.load(fh)
        except OSError as e:
            raise ConfigError(f"Cannot read experiment file {path}", detail=str(e)) from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"Invalid TOML in {path}", detail=str(e)) from e
        try:
            return cls.model_validate(document)
        except ValidationError as e:
            raise ConfigError(f"Invalid experiment file {path}", detail=str(e)) from e

    def with_overrides(
        self,
        seed: Optional[int] = None,
        threads: Optional[int] = None,
        out: Optional[str] = None,
    ) -> "ExperimentConfig":
        """Copy with command-line overrides applied."""
        experiment = self.experiment.model_copy(update={
            k: v for k, v in (("seed", seed), ("threads", threads)) if v is not None
        })
        output = self.output.model_copy(update={"dir": out}) if out is not None else self.output
        return self.model_copy(update={"experiment": experiment, "output": output})

    def require_kernel(self) -> KernelParams:
        if self.kernel is None:
            raise ConfigError("This subcommand needs a [kernel] table")
        return self.kernel

    def resolve_regime(self) -> Regime:
        """Regime of the kernel; an explicit regime must agree with 2a^2."""
        kernel = self.require_kernel()
        detected = classify_regime(abs(kernel.a))
        declared = self.experiment.regime
        if declared != "auto" and Regime(declared) is not detected:
            raise RegimeError(
                f"Experiment declares the {Regime(declared).label} regime but a={kernel.a} "
                f"is {detected.label}"
            )
        return detected

    def config_hash(self) -> str:
        """
        Short digest of the canonical JSON form, embedded in every output row.
        Thread count, runtime budget and output location do not change results
        and are left out.
        """
        document = self.model_dump(
            mode="json",
            exclude={"experiment": {"threads", "runtime_budget"}, "output": True},
        )
        canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]
