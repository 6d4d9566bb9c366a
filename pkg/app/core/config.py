from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.errors import ConfigurationError
from app.schemas.all_schemas import RunConfig


class Settings(BaseSettings):
    PROJECT_NAME: str = "SGCN Trajectory Predictor"
    SGCN_DATA_ROOT: Optional[Path] = Field(None, description="Default directory with <scene>.txt trajectory files")
    SGCN_LOG_CONFIG: Path = Field(Path("logging.ini"), description="fileConfig-style logging ini")

    # дебаг режим
    DEBUG: bool = False

    model_config = SettingsConfigDict(
        case_sensitive=True,
        env_file=".env",
        extra="ignore"
    )


settings = Settings()


def load_config_file(path) -> Dict[str, str]:
    """Flat `key = value` file; `#` starts a comment."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc.strerror}") from exc

    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise ConfigurationError(f"{path}:{line_no}: expected 'key = value', got {line!r}")
        if key not in RunConfig.model_fields:
            raise ConfigurationError(f"{path}:{line_no}: unknown config key {key!r}")
        values[key] = value.strip()
    return values


def resolve_run_config(command: str, file_values: Optional[Mapping[str, Any]] = None,
                       flag_values: Optional[Mapping[str, Any]] = None,
                       env: Optional[Settings] = None) -> RunConfig:
    """defaults < SGCN_DATA_ROOT (data_root only) < config file < flags."""
    env = env or settings
    values: Dict[str, Any] = {}
    if env.SGCN_DATA_ROOT is not None:
        values["data_root"] = env.SGCN_DATA_ROOT
    values.update(file_values or {})
    values.update({k: v for k, v in (flag_values or {}).items() if v is not None})
    values["command"] = command
    try:
        return RunConfig(**values)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()
        )
        raise ConfigurationError(f"invalid configuration: {problems}") from None


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def dump_config(config: RunConfig) -> str:
    lines = [f"{name} = {_format_value(getattr(config, name))}" for name in RunConfig.model_fields]
    return "\n".join(lines) + "\n"
