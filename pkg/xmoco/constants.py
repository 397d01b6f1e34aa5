from __future__ import annotations

import math
from enum import Enum, IntEnum
from pathlib import Path
from typing import ClassVar, TypeAlias

import numpy as np
import numpy.typing as npt

Array: TypeAlias = npt.NDArray[np.float64]  # Always float64, any rank
Embedding: TypeAlias = Array  # Unit-norm vector in the joint space
Grade: TypeAlias = int  # Combined annotator score, 0..6


class PathConfig:
    """Path configuration for bundled resources and default run outputs."""

    BASE: ClassVar[Path] = Path(__file__).parent.parent
    XMOCO: ClassVar[Path] = BASE / "xmoco"
    CONFIGS: ClassVar[Path] = XMOCO / "configs"
    DEFAULT_CONFIG: ClassVar[Path] = CONFIGS / "default.json"
    RUNS: ClassVar[Path] = Path("runs")  # Relative to the working directory


class NumericConfig:
    """Numerical tolerances shared by the numerical core and its callers."""

    NORM_EPS: ClassVar[float] = 1e-12  # Below this an embedding is degenerate
    UNIT_NORM_TOL: ClassVar[float] = 1e-9  # Accepted deviation of a stored key/row from norm 1


class TemperatureConfig:
    """Learnable temperature settings."""

    INIT: ClassVar[float] = 0.05
    MIN: ClassVar[float] = 0.005
    MAX: ClassVar[float] = 1.0
    LOG_MIN: ClassVar[float] = math.log(MIN)
    LOG_MAX: ClassVar[float] = math.log(MAX)


class CheckpointConfig:
    """Binary checkpoint layout constants."""

    MAGIC: ClassVar[bytes] = b"XMCO"
    VERSION: ClassVar[int] = 1
    SUFFIX: ClassVar[str] = ".xmco"


class MetricConfig:
    """Retrieval-evaluation cut-offs."""

    RECALL_KS: ClassVar[tuple[int, ...]] = (1, 5, 10)
    NDCG_KS: ClassVar[tuple[int, ...]] = (5, 10, 20)
    JUDGED_DEPTH: ClassVar[int] = 30  # Results scored per query in the user study
    MAP_THRESHOLD: ClassVar[int] = 2  # Relevant iff the graded score is higher than this
    GRADE_MIN: ClassVar[int] = 0
    GRADE_MAX: ClassVar[int] = 6
    RATING_MAX: ClassVar[int] = 2  # One annotator rates 0, 1 or 2


class Modality(str, Enum):
    """The two modalities of a pair ("a" plays the image role, "b" the text role)."""

    A = "a"
    B = "b"

    @property
    def other(self) -> Modality:
        """Get the opposite modality."""
        return Modality.B if self is Modality.A else Modality.A


class SplitTag(str, Enum):
    """Dataset split tags."""

    ALL = "all"
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class CorrelationMode(str, Enum):
    """How tightly the synthetic modalities share their latent."""

    STRONG = "strong"
    WEAK = "weak"


class GainKind(str, Enum):
    """Gain applied to graded relevance inside DCG."""

    LINEAR = "linear"
    EXPONENTIAL = "exponential"


class ExitCode(IntEnum):
    """Stable CLI exit codes."""

    OK = 0
    USAGE = 1
    RUNTIME = 2


class CommandID(str, Enum):
    """Subcommands of the command-line interface."""

    GEN_DATA = "gen-data"
    TRAIN = "train"
    EVAL = "eval"
    EMBED = "embed"
    RETRIEVE = "retrieve"
    SERVE = "serve"
    SCORE = "score"
    MATCH = "match"
