"""
Settings Loader
Reads numerical defaults from config/settings.yaml and holds the process-wide
thread count used by FFTs and per-center maps.
"""

import os
from typing import Dict, Optional

import yaml

from .errors import ConfigError

_settings_cache: Optional[Dict] = None
_threads = 1


def _settings_path() -> str:
    override = os.getenv("OULAB_SETTINGS")
    if override:
        return override
    return os.path.join(os.path.dirname(__file__), '..', 'config', 'settings.yaml')


def load_settings(section: Optional[str] = None) -> Dict:
    """
    Load numerical settings, optionally a single module section

    Args:
        section: Module name (e.g. 'hum_synthesizer'). None returns everything.

    Returns:
        Dict: A copy of the requested settings
    """
    global _settings_cache
    if _settings_cache is None:
        path = _settings_path()
        try:
            with open(path, 'r') as file:
                _settings_cache = yaml.safe_load(file) or {}
        except FileNotFoundError:
            raise ConfigError("settings", f"settings file not found at {path}")
    if section is None:
        return {key: dict(value) for key, value in _settings_cache.items()}
    if section not in _settings_cache:
        raise ConfigError(f"settings.{section}", "unknown settings section")
    return dict(_settings_cache[section])


def reset_settings():
    """Forget the cached file (tests switch OULAB_SETTINGS)"""
    global _settings_cache
    _settings_cache = None


def set_threads(count: int):
    global _threads
    if count < 1:
        raise ConfigError("threads", f"thread count must be >= 1, got {count}")
    _threads = int(count)


def get_threads() -> int:
    return _threads
