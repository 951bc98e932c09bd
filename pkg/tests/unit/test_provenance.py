from pathlib import Path

from backend.app.config import PipelineConfig
from backend.app.provenance import config_fingerprint, resolve_app_version, write_resolved_config


def test_resolve_app_version_from_file(tmp_path: Path, monkeypatch) -> None:
    monkeypatch.delenv("CLIPGCD_APP_VERSION", raising=False)
    (tmp_path / "VERSION").write_text("1.2.3\n", encoding="utf-8")

    assert resolve_app_version(tmp_path) == "1.2.3"


def test_resolve_app_version_prefers_env(tmp_path: Path, monkeypatch) -> None:
    monkeypatch.setenv("CLIPGCD_APP_VERSION", "2.0.0")
    (tmp_path / "VERSION").write_text("1.2.3\n", encoding="utf-8")

    assert resolve_app_version(tmp_path) == "2.0.0"


def test_resolved_config_is_stable_and_fingerprinted(tmp_path: Path, monkeypatch) -> None:
    monkeypatch.setenv("CLIPGCD_APP_VERSION", "0.9.0")
    config = PipelineConfig(k_retrieve=8)

    first = write_resolved_config(config, tmp_path / "a", tmp_path).read_text(encoding="utf-8")
    second = write_resolved_config(config, tmp_path / "b", tmp_path).read_text(encoding="utf-8")

    assert first == second
    assert "# version=0.9.0" in first
    assert f"# fingerprint={config_fingerprint(config)}" in first
    assert "k_retrieve=8" in first.splitlines()
    assert config_fingerprint(config) != config_fingerprint(PipelineConfig(k_retrieve=4))
