from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, field_validator

DEFAULT_SCENES = ["ETH", "HOTEL", "UNIV", "ZARA1", "ZARA2"]
DEFAULT_XIS = [0.0, 0.25, 0.5, 0.75, 1.0]
COMMANDS = ("train", "eval", "predict", "dump-graphs", "sweep-xi")


def _split_list(v):
    if isinstance(v, str):
        return [item.strip() for item in v.split(",") if item.strip()]
    return v


def _empty_to_none(v):
    if isinstance(v, str) and v.strip().lower() in ("", "none", "null"):
        return None
    return v


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    t_obs: int = 8
    t_pred: int = 12
    embed_dim: int = 64
    asym_layers: int = 7
    kernel_size: int = 3
    tcn_layers: int = 4
    xi: float = 0.5
    interaction: bool = True
    motion_tendency: bool = True
    zero_softmax: bool = True

    @field_validator("t_obs", "t_pred", "embed_dim", "asym_layers", "tcn_layers")
    @classmethod
    def validate_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("kernel_size")
    @classmethod
    def validate_kernel(cls, v: int) -> int:
        if v < 1 or v % 2 == 0:
            raise ValueError("kernel size must be a positive odd number")
        return v

    @field_validator("xi")
    @classmethod
    def validate_xi(cls, v: float) -> float:
        if not (0.0 <= v <= 1.0):
            raise ValueError("xi must be between 0 and 1")
        return v


class TrainConfig(ModelConfig):
    epochs: int = 150
    batch_size: int = 128
    lr: float = 0.001
    lr_decay_factor: float = 0.1
    lr_decay_interval: int = 50
    seed: int = 0
    holdout: str = "ZARA1"
    num_samples: int = 20
    checkpoint_interval: int = 50
    train_fraction: float = 1.0
    max_test_windows: Optional[int] = None

    @field_validator("epochs", "batch_size", "lr_decay_interval", "num_samples", "checkpoint_interval")
    @classmethod
    def validate_positive_int(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("lr", "lr_decay_factor")
    @classmethod
    def validate_positive_float(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("seed")
    @classmethod
    def validate_seed(cls, v: int) -> int:
        if v < 0:
            raise ValueError("seed must be non-negative")
        return v

    @field_validator("train_fraction")
    @classmethod
    def validate_fraction(cls, v: float) -> float:
        if not (0.0 < v <= 1.0):
            raise ValueError("train_fraction must be in (0, 1]")
        return v

    @field_validator("max_test_windows", mode="before")
    @classmethod
    def validate_max_windows(cls, v):
        v = _empty_to_none(v)
        if v is not None and int(v) < 1:
            raise ValueError("max_test_windows must be >= 1")
        return v

    @field_validator("holdout")
    @classmethod
    def normalize_holdout(cls, v: str) -> str:
        return v.strip().upper()

    def model_part(self) -> ModelConfig:
        return ModelConfig(**self.model_dump(include=set(ModelConfig.model_fields)))


class RunConfig(TrainConfig):
    command: str = "train"
    data_root: Optional[Path] = None
    scenes: List[str] = list(DEFAULT_SCENES)
    out: Path = Path("runs/latest")
    jobs: int = 1
    checkpoint: Optional[Path] = None
    scene_file: Optional[Path] = None
    field_order: str = "frame,ped,x,y"
    xis: List[float] = list(DEFAULT_XIS)
    dump_raw: bool = False

    @field_validator("command")
    @classmethod
    def validate_command(cls, v: str) -> str:
        if v not in COMMANDS:
            raise ValueError(f"unknown command {v!r}, expected one of {', '.join(COMMANDS)}")
        return v

    @field_validator("scenes", mode="before")
    @classmethod
    def split_scenes(cls, v):
        return [name.upper() for name in _split_list(v)]

    @field_validator("xis", mode="before")
    @classmethod
    def split_xis(cls, v):
        return _split_list(v)

    @field_validator("xis")
    @classmethod
    def validate_xis(cls, v: List[float]) -> List[float]:
        if not v or any(not (0.0 <= xi <= 1.0) for xi in v):
            raise ValueError("xis must be a non-empty list of values in [0, 1]")
        return v

    @field_validator("data_root", "checkpoint", "scene_file", mode="before")
    @classmethod
    def optional_path(cls, v):
        return _empty_to_none(v)

    @field_validator("jobs")
    @classmethod
    def validate_jobs(cls, v: int) -> int:
        if v < 1:
            raise ValueError("jobs must be >= 1")
        return v

    @field_validator("field_order")
    @classmethod
    def validate_field_order(cls, v: str) -> str:
        fields = [f.strip() for f in v.split(",")]
        if sorted(fields) != ["frame", "ped", "x", "y"]:
            raise ValueError("field_order must be a permutation of frame,ped,x,y")
        return ",".join(fields)


class LossRecord(BaseModel):
    epoch: int
    step: int
    nll: float
    lr: float


class SceneMetrics(BaseModel):
    index: int
    scene: str
    start_frame: int
    num_pedestrians: int
    ade: float
    fde: float


class MetricsReport(BaseModel):
    ade: float
    fde: float
    num_windows: int
    num_pedestrians: int
    num_samples: int
    wall_clock_s: float
    scenes: List[SceneMetrics] = []
