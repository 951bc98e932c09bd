from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

from backend.app.error_handlers import GcdError

ENV_PREFIX = "CLIPGCD_"
POOLING_CHOICES = ("mean", "max")
HEAD_INPUT_CHOICES = ("image", "fused")
TRUE_WORDS = {"1", "true", "yes", "on"}
FALSE_WORDS = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class PipelineConfig:
    images: Optional[Path] = None
    labels: Optional[Path] = None
    corpus_text: Optional[Path] = None
    corpus_emb: Optional[Path] = None
    split_file: Optional[Path] = None
    out_dir: Path = Path("runs/latest")
    dataset: str = "synthetic"
    k_retrieve: int = 4
    use_text: bool = True
    pooling: str = "mean"
    normalize_views: bool = True
    train_head: bool = False
    head_input: str = "image"
    head_out_dims: int = 0
    query_with_refined: bool = False
    tau: float = 0.07
    lambda_: float = 0.25
    epochs: int = 100
    lr: float = 5e-5
    view_noise: float = 0.05
    labeled_batch_size: int = 64
    unlabeled_batch_size: int = 64
    k_total: int = 0
    seen_fraction: float = 0.5
    labeled_fraction: float = 0.5
    split_seed: int = 0
    cluster_seed: int = 0
    train_seed: int = 0
    max_iters: int = 200
    tolerance: float = 1e-6
    per_subset_matching: bool = False
    workers: int = 1
    progress: bool = False

    @property
    def text_enabled(self) -> bool:
        return self.use_text and self.k_retrieve > 0

    def with_updates(self, **changes: Any) -> "PipelineConfig":
        return validate_config(replace(self, **changes))

    def to_lines(self) -> List[str]:
        """Canonical ``key=value`` rendering, sorted by key."""
        lines = []
        for item in fields(self):
            lines.append(f"{_key_for(item.name)}={_render(getattr(self, item.name))}")
        return sorted(lines)

    def require_inputs(self) -> None:
        required: List[Tuple[str, Optional[Path]]] = [("images", self.images), ("labels", self.labels)]
        if self.text_enabled:
            required += [("corpus_text", self.corpus_text), ("corpus_emb", self.corpus_emb)]
        if self.split_file is not None:
            required.append(("split_file", self.split_file))
        for key, path in required:
            if path is None:
                raise GcdError(code="CONFIG_ERROR", message=f"{key} is required")
            if not Path(path).is_file():
                raise GcdError(code="CONFIG_ERROR", message=f"{key} does not exist: {path}")


def _key_for(field_name: str) -> str:
    return "lambda" if field_name == "lambda_" else field_name


def _field_for(key: str) -> str:
    return "lambda_" if key == "lambda" else key


def _render(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _to_bool(value: Any, default: bool, strict: bool = False) -> bool:
    if value is None:
        return default
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in TRUE_WORDS:
        return True
    if text in FALSE_WORDS or not strict:
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _to_int(value: Any, default: int, strict: bool = False) -> int:
    try:
        if value is None or value == "":
            return default
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"not an integer: {value!r}")
        return int(value)
    except (TypeError, ValueError):
        if strict:
            raise ValueError(f"not an integer: {value!r}") from None
        return default


def _to_float(value: Any, default: float, strict: bool = False) -> float:
    try:
        if value is None or value == "":
            return default
        return float(value)
    except (TypeError, ValueError):
        if strict:
            raise ValueError(f"not a number: {value!r}") from None
        return default


def _to_path(value: Any, default: Optional[Path], base: Optional[Path]) -> Optional[Path]:
    if value is None or str(value).strip() == "":
        return default
    path = Path(str(value).strip()).expanduser()
    if base is not None and not path.is_absolute():
        path = base / path
    return path


_DEFAULTS = PipelineConfig()
_PATH_FIELDS = {"images", "labels", "corpus_text", "corpus_emb", "split_file", "out_dir"}
_COERCERS: Dict[type, Callable[..., Any]] = {bool: _to_bool, int: _to_int, float: _to_float}


def _coerce(name: str, raw: Any, origin: str, base: Optional[Path]) -> Any:
    default = getattr(_DEFAULTS, name)
    if name in _PATH_FIELDS:
        return _to_path(raw, default, base)
    kind = type(default)
    if kind is str:
        return default if raw is None else str(raw).strip()
    strict = origin != "env"
    try:
        return _COERCERS[kind](raw, default, strict=strict)
    except ValueError as exc:
        raise GcdError(code="CONFIG_ERROR", message=f"{origin} value for {_key_for(name)}: {exc}") from exc


def _parse_key_values(text: str, origin: str) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise GcdError(code="CONFIG_ERROR", message=f"{origin}:{number}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _load_file_config(path: Path) -> Dict[str, Any]:
    if not path.exists() or not path.is_file():
        raise GcdError(code="CONFIG_ERROR", message=f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    suffix = path.suffix.lower()
    if suffix == ".json":
        try:
            loaded = json.loads(text)
        except json.JSONDecodeError as exc:
            raise GcdError(code="CONFIG_ERROR", message=f"{path}: invalid JSON ({exc})") from exc
    elif suffix in {".yml", ".yaml"}:
        try:
            import yaml  # type: ignore
        except Exception as exc:
            raise GcdError(code="CONFIG_ERROR", message=f"{path}: PyYAML is not installed") from exc
        loaded = yaml.safe_load(text)
    else:
        loaded = _parse_key_values(text, str(path))
    if not isinstance(loaded, dict):
        raise GcdError(code="CONFIG_ERROR", message=f"{path}: expected a mapping of settings")
    return loaded


def _check_keys(source: Mapping[str, Any], origin: str) -> None:
    known = {_key_for(item.name) for item in fields(PipelineConfig)}
    unknown = sorted(set(source) - known)
    if unknown:
        raise GcdError(code="CONFIG_ERROR", message=f"unknown {origin} keys: {', '.join(unknown)}")


def parse_overrides(pairs: Optional[List[str]]) -> Dict[str, str]:
    overrides: Dict[str, str] = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise GcdError(code="CONFIG_ERROR", message=f"override {pair!r} is not key=value")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def validate_config(config: PipelineConfig) -> PipelineConfig:
    problems = []
    if config.k_retrieve < 0:
        problems.append("k_retrieve must be >= 0")
    if config.pooling not in POOLING_CHOICES:
        problems.append(f"pooling must be one of {POOLING_CHOICES}")
    if config.head_input not in HEAD_INPUT_CHOICES:
        problems.append(f"head_input must be one of {HEAD_INPUT_CHOICES}")
    if config.head_out_dims < 0 or config.head_out_dims == 1:
        problems.append("head_out_dims must be 0 (same as input) or >= 2")
    if config.tau <= 0:
        problems.append("tau must be > 0")
    if not 0.0 <= config.lambda_ <= 1.0:
        problems.append("lambda must lie in [0, 1]")
    if config.epochs < 1:
        problems.append("epochs must be >= 1")
    if config.lr < 0:
        problems.append("lr must be >= 0")
    if config.view_noise < 0:
        problems.append("view_noise must be >= 0")
    if config.labeled_batch_size < 2 or config.unlabeled_batch_size < 1:
        problems.append("batch sizes must be >= 2 (labeled) and >= 1 (unlabeled)")
    if config.k_total < 0:
        problems.append("k_total must be >= 0 (0 = number of classes)")
    for name in ("seen_fraction", "labeled_fraction"):
        if not 0.0 < getattr(config, name) <= 1.0:
            problems.append(f"{name} must lie in (0, 1]")
    if config.max_iters < 1 or config.tolerance <= 0:
        problems.append("max_iters must be >= 1 and tolerance > 0")
    if config.workers < 1:
        problems.append("workers must be >= 1")
    if problems:
        raise GcdError(code="CONFIG_ERROR", message="; ".join(problems))
    return config


def load_pipeline_config(
    path: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    root_dir: Optional[Path] = None,
) -> PipelineConfig:
    """Resolve settings: overrides, then ``CLIPGCD_<KEY>`` env vars, then the config file, then defaults."""
    if path is None:
        env_path = os.getenv(f"{ENV_PREFIX}CONFIG_FILE", "").strip()
        if env_path:
            path = Path(env_path)
            if not path.is_absolute() and root_dir is not None:
                path = root_dir / path

    source: Dict[str, Any] = {}
    file_base: Optional[Path] = None
    if path is not None:
        path = Path(path)
        source = _load_file_config(path)
        _check_keys(source, "config file")
        file_base = path.resolve().parent

    overrides = dict(overrides or {})
    _check_keys(overrides, "override")

    values: Dict[str, Any] = {}
    for item in fields(PipelineConfig):
        key = _key_for(item.name)
        env_value = os.getenv(f"{ENV_PREFIX}{key.upper()}")
        if key in overrides:
            values[item.name] = _coerce(item.name, overrides[key], "override", None)
        elif env_value is not None:
            values[item.name] = _coerce(item.name, env_value, "env", None)
        elif key in source:
            values[item.name] = _coerce(item.name, source[key], "config file", file_base)
        else:
            values[item.name] = getattr(_DEFAULTS, item.name)
    return validate_config(PipelineConfig(**values))


def config_from_mapping(values: Mapping[str, Any]) -> PipelineConfig:
    """Strictly build a config from in-memory settings, ignoring the environment."""
    _check_keys(values, "setting")
    resolved = {_field_for(key): _coerce(_field_for(key), value, "setting", None) for key, value in values.items()}
    return validate_config(replace(_DEFAULTS, **resolved))
