import pytest

from engine.errors import ConfigError
from engine.settings import get_threads, load_settings, reset_settings, set_threads


def test_sections_are_copies():
    first = load_settings("hum_synthesizer")
    first["c_cap"] = 0.0
    assert load_settings("hum_synthesizer")["c_cap"] == 2.0 ** 40
    assert "flows_kalman" in load_settings()


def test_unknown_section():
    with pytest.raises(ConfigError, match="unknown settings section"):
        load_settings("no_such_module")


def test_settings_override(tmp_path, monkeypatch):
    override = tmp_path / "settings.yaml"
    override.write_text("hum_synthesizer:\n  max_iter: 7\n")
    monkeypatch.setenv("OULAB_SETTINGS", str(override))
    reset_settings()
    assert load_settings("hum_synthesizer") == {"max_iter": 7}
    monkeypatch.setenv("OULAB_SETTINGS", str(tmp_path / "missing.yaml"))
    reset_settings()
    with pytest.raises(ConfigError, match="not found"):
        load_settings("hum_synthesizer")


def test_thread_count():
    set_threads(3)
    assert get_threads() == 3
    with pytest.raises(ConfigError):
        set_threads(0)
