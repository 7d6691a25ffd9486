"""Campaign configuration files (YAML) with line-accurate diagnostics."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import yaml

from .campaign import CampaignConfig, ConfigError

SHIPPED = ("emfi_slow", "emfi_medium", "emfi_fast", "vfi_slow", "vfi_medium", "vfi_fast")


class ConfigFileError(Exception):
    def __init__(self, path, message: str, line: int | None = None, field: str | None = None):
        where = f"{path}:{line}" if line else str(path)
        what = f" (field {field!r})" if field else ""
        super().__init__(f"{where}: {message}{what}")
        self.path, self.line, self.field = path, line, field


def shipped_config_path(name: str) -> Path:
    return Path(str(resources.files("glitchbench") / "data" / "configs" / f"{name}.yaml"))


def _field_lines(text: str) -> dict[str, int]:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    if not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: k.start_mark.line + 1 for k, _ in node.value if isinstance(k, yaml.ScalarNode)}


def parse_config_text(text: str, path="<config>") -> CampaignConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigFileError(path, f"malformed YAML: {getattr(exc, 'problem', exc)}", mark.line + 1 if mark else None) from exc
    try:
        return CampaignConfig.from_dict(data)
    except ConfigError as exc:
        line = _field_lines(text).get(exc.field) if exc.field else None
        raise ConfigFileError(path, exc.message, line, exc.field) from exc


def load_config(path) -> CampaignConfig:
    """Read a config file; a bare shipped name such as ``emfi_slow`` also works."""
    p = Path(path)
    if not p.exists() and str(path) in SHIPPED:
        p = shipped_config_path(str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigFileError(path, f"cannot read config: {exc.strerror or exc}") from exc
    return parse_config_text(text, path)


def dump_config(config: CampaignConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)
