from __future__ import annotations

import hashlib
import os
from pathlib import Path
from typing import List

from backend.app.config import PipelineConfig

DEFAULT_APP_VERSION = "0.1.0"
RESOLVED_CONFIG_FILE = "config.resolved"


def resolve_app_version(root_dir: Path) -> str:
    """Resolve the package version from env override or repository VERSION file."""
    env_version = os.getenv("CLIPGCD_APP_VERSION", "").strip()
    if env_version:
        return env_version

    version_file = root_dir / "VERSION"
    if version_file.exists():
        file_version = version_file.read_text(encoding="utf-8").strip()
        if file_version:
            return file_version

    return DEFAULT_APP_VERSION


def config_fingerprint(config: PipelineConfig) -> str:
    return hashlib.sha256("\n".join(config.to_lines()).encode("utf-8")).hexdigest()


def provenance_lines(config: PipelineConfig, root_dir: Path) -> List[str]:
    return [
        f"# version={resolve_app_version(root_dir)}",
        f"# fingerprint={config_fingerprint(config)}",
        *config.to_lines(),
    ]


def write_resolved_config(config: PipelineConfig, out_dir: Path, root_dir: Path) -> Path:
    path = Path(out_dir) / RESOLVED_CONFIG_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(provenance_lines(config, root_dir)) + "\n", encoding="utf-8")
    return path
